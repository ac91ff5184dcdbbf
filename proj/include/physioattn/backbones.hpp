#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "physioattn/attention.hpp"
#include "physioattn/nn.hpp"
#include "physioattn/ops.hpp"
#include "physioattn/task.hpp"

namespace physioattn {

enum class BackboneFamily { vgg, resnet, inception, msa_only };

inline std::string_view to_string(BackboneFamily f) {
  switch (f) {
    case BackboneFamily::vgg: return "vgg";
    case BackboneFamily::resnet: return "resnet";
    case BackboneFamily::inception: return "inception";
    case BackboneFamily::msa_only: return "msa_only";
  }
  return "vgg";
}

inline BackboneFamily parse_family(std::string_view s) {
  if (s == "vgg") return BackboneFamily::vgg;
  if (s == "resnet") return BackboneFamily::resnet;
  if (s == "inception") return BackboneFamily::inception;
  if (s == "msa_only" || s == "msa") return BackboneFamily::msa_only;
  throw std::invalid_argument("unknown family '" + std::string(s) + "' (expected vgg|resnet|inception|msa_only)");
}

/// Deepest selectable level per family (rows of the level table).
inline std::size_t max_level(BackboneFamily f) {
  switch (f) {
    case BackboneFamily::vgg: return 5;
    case BackboneFamily::resnet: return 8;
    case BackboneFamily::inception: return 8;
    case BackboneFamily::msa_only: return 0;
  }
  return 0;
}

/// Module count of the unreduced original network.
inline std::size_t full_depth(BackboneFamily f) {
  switch (f) {
    case BackboneFamily::vgg: return 5;
    case BackboneFamily::resnet: return 8;
    case BackboneFamily::inception: return 9;
    case BackboneFamily::msa_only: return 0;
  }
  return 0;
}

inline std::size_t default_level(BackboneFamily f) {
  switch (f) {
    case BackboneFamily::vgg: return 5;
    case BackboneFamily::resnet: return 6;
    case BackboneFamily::inception: return 4;
    case BackboneFamily::msa_only: return 0;
  }
  return 0;
}

inline std::size_t default_head_width(BackboneFamily f, const MsaConfig& msa) {
  switch (f) {
    case BackboneFamily::vgg: return 4096;
    case BackboneFamily::resnet:
    case BackboneFamily::inception: return 1000;
    case BackboneFamily::msa_only: return msa.d_model;
  }
  return 0;
}

struct ModelConfig {
  BackboneFamily family = BackboneFamily::resnet;
  std::size_t level = 6;
  AttentionKind attention = AttentionKind::none;
  int fraction = 0;
  std::optional<MsaConfig> msa;
  std::size_t demographics_dim = 4;
  std::size_t channels = 2;
  std::size_t length = 2000;
  Task task = Task::classification;
  std::size_t head_width = 0;  // 0 = family default
  AttentionOptions attention_options;
  bool positional_encoding = true;
  std::size_t msa_stem_kernel = 20;
  std::size_t msa_stem_stride = 10;

  std::size_t resolved_head_width() const {
    return head_width ? head_width : default_head_width(family, msa.value_or(MsaConfig{}));
  }

  void validate() const {
    if (family == BackboneFamily::msa_only) {
      if (attention != AttentionKind::msa) throw std::invalid_argument("msa_only family requires attention=msa");
      if (!msa) throw std::invalid_argument("msa_only family requires an msa config");
      msa->validate();
      if (fraction != 100) throw std::invalid_argument("msa_only model is stand-alone attention: fraction must be 100");
    } else {
      if (attention == AttentionKind::msa) throw std::invalid_argument("attention=msa is only valid for family msa_only");
      if (level < 1 || level > max_level(family)) {
        throw std::invalid_argument("level " + std::to_string(level) + " out of range [1," +
                                    std::to_string(max_level(family)) + "] for " + std::string(to_string(family)));
      }
      if (fraction != 0 && fraction != 50 && fraction != 100) {
        throw std::invalid_argument("attention fraction must be 0, 50 or 100, got " + std::to_string(fraction));
      }
      if ((attention == AttentionKind::none) != (fraction == 0)) {
        throw std::invalid_argument("attention=none goes with fraction 0 and vice versa");
      }
    }
    if (channels == 0 || length == 0) throw std::invalid_argument("input channels/length must be positive");
  }
};

/// 1-based indices of the CNN modules that get an attention block at their end.
inline std::vector<std::size_t> attention_placement(std::size_t n_modules, int fraction) {
  if (n_modules < 1) throw std::invalid_argument("attention_placement needs at least one module");
  std::vector<std::size_t> out;
  switch (fraction) {
    case 0: break;
    case 50:
      for (std::size_t i = 2; i <= n_modules; i += 2) out.push_back(i);
      break;
    case 100:
      for (std::size_t i = 1; i <= n_modules; ++i) out.push_back(i);
      break;
    default: throw std::invalid_argument("unsupported attention fraction " + std::to_string(fraction));
  }
  return out;
}

// ---------------------------------------------------------------------------
// stage plans

struct ConvUnit {
  std::size_t cin, cout, kernel, stride;
  Padding padding;
  bool batchnorm;
  bool relu;
};

struct PoolUnit {
  PoolKind kind;
  std::size_t window, stride;
  Padding padding;
};

struct PlanOp {
  bool is_conv;
  ConvUnit conv{};
  PoolUnit pool{};
};
using OpSeq = std::vector<PlanOp>;

inline PlanOp conv_op(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride, Padding p, bool bn,
                      bool relu) {
  return {true, {cin, cout, k, stride, p, bn, relu}, {}};
}
inline PlanOp pool_op(PoolKind kind, std::size_t window, std::size_t stride, Padding p = Padding::valid) {
  return {false, {}, {kind, window, stride, p}};
}

enum class StageKind { plain, residual, inception };

/// A stem or one CNN module of a backbone, with its output geometry.
struct StageSpec {
  StageKind kind = StageKind::plain;
  std::string name;
  bool is_module = false;
  OpSeq body;                   // plain: whole stage; inception: leading pool
  OpSeq shortcut;               // residual: projection path (empty = identity)
  std::vector<OpSeq> branches;  // inception
  std::size_t out_channels = 0;
  std::size_t out_length = 0;
};

struct BackbonePlan {
  BackboneFamily family;
  std::vector<StageSpec> stages;  // stem first, then modules
  std::size_t out_channels = 0;
  std::size_t out_length = 0;

  std::size_t module_count() const {
    return static_cast<std::size_t>(std::count_if(stages.begin(), stages.end(), [](const auto& s) { return s.is_module; }));
  }
};

inline std::size_t conv_params(const ConvUnit& c) {
  return c.cin * c.cout * c.kernel + c.cout + (c.batchnorm ? 2 * c.cout : 0);
}

inline std::size_t op_seq_params(const OpSeq& ops) {
  std::size_t n = 0;
  for (const auto& op : ops) {
    if (op.is_conv) n += conv_params(op.conv);
  }
  return n;
}

inline std::size_t stage_params(const StageSpec& s) {
  std::size_t n = op_seq_params(s.body) + op_seq_params(s.shortcut);
  for (const auto& b : s.branches) n += op_seq_params(b);
  return n;
}

inline std::size_t seq_length(const OpSeq& ops, std::size_t length) {
  for (const auto& op : ops) {
    if (op.is_conv) {
      length = window_output_length(length, op.conv.kernel, op.conv.stride, op.conv.padding);
    } else {
      length = window_output_length(length, op.pool.window, op.pool.stride, op.pool.padding);
    }
  }
  return length;
}

namespace detail {

struct InceptionWidths {
  std::size_t b1, b3_reduce, b3, b5_reduce, b5, pool_proj;
  std::size_t out() const { return b1 + b3 + b5 + pool_proj; }
};

// Inception-V1 modules 3a..5b.
inline constexpr InceptionWidths kInceptionModules[9] = {
    {64, 96, 128, 16, 32, 32},     {128, 128, 192, 32, 96, 64},   {192, 96, 208, 16, 48, 64},
    {160, 112, 224, 24, 64, 64},   {128, 128, 256, 24, 64, 64},   {112, 144, 288, 32, 64, 64},
    {256, 160, 320, 32, 128, 128}, {256, 160, 320, 32, 128, 128}, {384, 192, 384, 48, 128, 128}};

inline void finish_stage(StageSpec& s, std::size_t& length) {
  if (s.kind == StageKind::residual) {
    length = seq_length(s.body, length);
  } else if (s.kind == StageKind::inception) {
    length = seq_length(s.body, length);
    for (const auto& b : s.branches) require(seq_length(b, length) == length, "inception branch changes length");
  } else {
    length = seq_length(s.body, length);
  }
  s.out_length = length;
}

}  // namespace detail

/// Stem plus the first `depth` modules of the 1D-converted backbone.
///
/// vgg:       five conv blocks (64,64 | 128,128 | 256x3 | 512x3 | 512x3), k3 valid,
///            each closed by max-pooling with windows 3,2,3,3,3.
/// resnet:    conv7/s2 + BN + maxpool3/s2 stem, then eight basic residual blocks
///            (64,64,128,128,256,256,512,512), stride 2 entering each new width.
/// inception: conv7/s2, maxpool3/s2, conv3 (64->192), maxpool3/s2 stem, then modules
///            3a..5b with max-pool3/s2 in front of 4a and 5a. No batchnorm.
inline BackbonePlan plan_backbone(BackboneFamily family, std::size_t depth, std::size_t channels = 2,
                                  std::size_t length = 2000) {
  using detail::require;
  require(family != BackboneFamily::msa_only, "msa_only has no CNN backbone");
  require(depth >= 1 && depth <= full_depth(family), "backbone depth " + std::to_string(depth) + " out of range");
  BackbonePlan plan{family, {}, 0, 0};
  std::size_t len = length;
  std::size_t ch = channels;

  if (family == BackboneFamily::vgg) {
    const std::vector<std::vector<std::size_t>> widths = {{64, 64}, {128, 128}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}};
    const std::size_t pools[5] = {3, 2, 3, 3, 3};
    for (std::size_t m = 0; m < depth; ++m) {
      StageSpec s;
      s.name = "module" + std::to_string(m + 1);
      s.is_module = true;
      for (auto w : widths[m]) {
        s.body.push_back(conv_op(ch, w, 3, 1, Padding::valid, false, true));
        ch = w;
      }
      s.body.push_back(pool_op(PoolKind::max, pools[m], pools[m]));
      s.out_channels = ch;
      detail::finish_stage(s, len);
      plan.stages.push_back(std::move(s));
    }
  } else if (family == BackboneFamily::resnet) {
    StageSpec stem;
    stem.name = "stem";
    stem.body = {conv_op(ch, 64, 7, 2, Padding::same, true, true), pool_op(PoolKind::max, 3, 2)};
    stem.out_channels = ch = 64;
    detail::finish_stage(stem, len);
    plan.stages.push_back(std::move(stem));
    const std::size_t widths[8] = {64, 64, 128, 128, 256, 256, 512, 512};
    for (std::size_t m = 0; m < depth; ++m) {
      const std::size_t w = widths[m];
      const std::size_t stride = (w != ch) ? 2 : 1;
      StageSpec s;
      s.kind = StageKind::residual;
      s.name = "module" + std::to_string(m + 1);
      s.is_module = true;
      s.body = {conv_op(ch, w, 3, stride, Padding::same, true, true), conv_op(w, w, 3, 1, Padding::same, true, false)};
      if (stride != 1 || w != ch) s.shortcut = {conv_op(ch, w, 1, stride, Padding::same, true, false)};
      s.out_channels = ch = w;
      detail::finish_stage(s, len);
      plan.stages.push_back(std::move(s));
    }
  } else {
    StageSpec stem;
    stem.name = "stem";
    stem.body = {conv_op(ch, 64, 7, 2, Padding::same, false, true), pool_op(PoolKind::max, 3, 2),
                 conv_op(64, 192, 3, 1, Padding::same, false, true), pool_op(PoolKind::max, 3, 2)};
    stem.out_channels = ch = 192;
    detail::finish_stage(stem, len);
    plan.stages.push_back(std::move(stem));
    for (std::size_t m = 0; m < depth; ++m) {
      const auto& w = detail::kInceptionModules[m];
      StageSpec s;
      s.kind = StageKind::inception;
      s.name = "module" + std::to_string(m + 1);
      s.is_module = true;
      if (m == 2 || m == 7) s.body = {pool_op(PoolKind::max, 3, 2)};
      s.branches = {
          {conv_op(ch, w.b1, 1, 1, Padding::same, false, true)},
          {conv_op(ch, w.b3_reduce, 1, 1, Padding::same, false, true), conv_op(w.b3_reduce, w.b3, 3, 1, Padding::same, false, true)},
          {conv_op(ch, w.b5_reduce, 1, 1, Padding::same, false, true), conv_op(w.b5_reduce, w.b5, 5, 1, Padding::same, false, true)},
          {pool_op(PoolKind::max, 3, 1, Padding::same), conv_op(ch, w.pool_proj, 1, 1, Padding::same, false, true)}};
      s.out_channels = ch = w.out();
      detail::finish_stage(s, len);
      plan.stages.push_back(std::move(s));
    }
  }
  plan.out_channels = ch;
  plan.out_length = len;
  return plan;
}

/// Trainable parameters added by one attention block on a `channels`-wide module.
inline std::size_t attention_block_params(AttentionKind kind, std::size_t channels, const AttentionOptions& opt) {
  switch (kind) {
    case AttentionKind::none: return 0;
    case AttentionKind::se: {
      const std::size_t h = channels / std::min(opt.se_reduction, channels);
      return channels * h + h + h * channels + channels;
    }
    case AttentionKind::nl: {
      const std::size_t ci = channels / 2;
      return 3 * (channels * ci + ci) + ci * channels + channels;
    }
    case AttentionKind::cbam: {
      const std::size_t h = channels / std::min(opt.cbam_reduction, channels);
      return channels * h + h + h * channels + channels + 2 * opt.cbam_spatial_kernel + 1;
    }
    case AttentionKind::msa: break;
  }
  throw std::invalid_argument("msa is not a module attention block");
}

inline std::size_t msa_layer_params(const MsaConfig& c) {
  return 4 * (c.d_model * c.d_model + c.d_model) + 4 * c.d_model + c.d_model * c.d_ff + c.d_ff + c.d_ff * c.d_model +
         c.d_model;
}

/// Parameter count under the level-table convention: stem + CNN modules +
/// attention blocks, plus for the flatten-fed VGG head its dense stack without
/// the demographic-fusion rows. Global-pooled heads are not counted. Uses the
/// plan only, so nothing is allocated.
inline std::size_t planning_param_count(BackboneFamily family, std::size_t depth, AttentionKind attention = AttentionKind::none,
                                        int fraction = 0, const AttentionOptions& opt = {}, std::size_t head_width = 0,
                                        std::size_t channels = 2, std::size_t length = 2000) {
  const auto plan = plan_backbone(family, depth, channels, length);
  std::size_t n = 0;
  for (const auto& s : plan.stages) n += stage_params(s);
  if (attention != AttentionKind::none) {
    const auto where = attention_placement(plan.module_count(), fraction);
    std::size_t idx = 0;
    for (const auto& s : plan.stages) {
      if (!s.is_module) continue;
      ++idx;
      if (std::find(where.begin(), where.end(), idx) != where.end()) n += attention_block_params(attention, s.out_channels, opt);
    }
  }
  if (family == BackboneFamily::vgg) {
    const std::size_t w = head_width ? head_width : default_head_width(family, {});
    const std::size_t flat = plan.out_channels * plan.out_length;
    n += flat * w + w + w * w + w + w + 1;
  }
  return n;
}

// ---------------------------------------------------------------------------
// built models

struct StageInfo {
  std::string name;
  std::string kind;           // layer kind of the stage ("residual", "se", ...)
  std::size_t module_index;   // 1-based CNN module index; 0 for stem/head/msa
  bool is_attention;
};

template <class T>
class BuiltModel {
 public:
  BuiltModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Initializer init(seed);
    features_ = std::make_unique<Sequential<T>>("features");
    head_pre_ = std::make_unique<Sequential<T>>("head");
    head_post_ = std::make_unique<Sequential<T>>("head");
    const std::size_t width = cfg_.resolved_head_width();
    std::size_t feat_dim = 0;
    bool flatten_head = false;

    if (cfg_.family == BackboneFamily::msa_only) {
      const auto& m = *cfg_.msa;
      features_->add(std::make_unique<Conv1d<T>>("stem/conv", cfg_.channels, m.d_model, cfg_.msa_stem_kernel,
                                                 cfg_.msa_stem_stride, Padding::valid, init, InitKind::xavier_uniform));
      stages_.push_back({"stem", "conv1d", 0, false});
      features_->add(std::make_unique<ToTokens<T>>(cfg_.positional_encoding));
      features_->add(std::make_unique<MsaBlock<T>>("msa", m, init));
      stages_.push_back({"msa", "msa", 0, true});
      head_pre_->add(std::make_unique<TokenMean<T>>());
      feat_dim = m.d_model;
    } else {
      const auto plan = plan_backbone(cfg_.family, cfg_.level, cfg_.channels, cfg_.length);
      const auto where = attention_placement(plan.module_count(), cfg_.fraction);
      std::size_t idx = 0;
      for (const auto& s : plan.stages) {
        features_->add(instantiate(s, init));
        if (!s.is_module) {
          stages_.push_back({s.name, "stem", 0, false});
          continue;
        }
        ++idx;
        stages_.push_back({s.name, kind_name(s.kind), idx, false});
        if (cfg_.attention != AttentionKind::none && std::find(where.begin(), where.end(), idx) != where.end()) {
          const std::string an = s.name + "/" + std::string(to_string(cfg_.attention));
          features_->add(make_attention_block<T>(cfg_.attention, an, s.out_channels, cfg_.attention_options, init));
          stages_.push_back({an, std::string(to_string(cfg_.attention)), idx, true});
        }
      }
      if (cfg_.family == BackboneFamily::vgg) {
        head_pre_->add(std::make_unique<Flatten<T>>());
        feat_dim = plan.out_channels * plan.out_length;
        flatten_head = true;
      } else {
        head_pre_->add(std::make_unique<GlobalPool<T>>(PoolKind::avg));
        feat_dim = plan.out_channels;
      }
    }

    head_pre_->add(std::make_unique<Dense<T>>("head/fc1", feat_dim, width, init, InitKind::kaiming_uniform));
    head_pre_->add(std::make_unique<ActivationLayer<T>>(Activation::relu));
    const std::size_t fused = width + cfg_.demographics_dim;
    if (flatten_head) {
      head_post_->add(std::make_unique<Dense<T>>("head/fc2", fused, width, init, InitKind::kaiming_uniform));
      head_post_->add(std::make_unique<ActivationLayer<T>>(Activation::relu));
      head_post_->add(std::make_unique<Dense<T>>("head/out", width, 1, init, InitKind::xavier_uniform));
    } else {
      head_post_->add(std::make_unique<Dense<T>>("head/out", fused, 1, init, InitKind::xavier_uniform));
    }
    features_->collect_parameters(registry_);
    head_pre_->collect_parameters(registry_);
    head_post_->collect_parameters(registry_);
  }

  /// [B,channels,length] waveforms + [B,demographics_dim] -> [B,1].
  Tensor<T> forward(const Tensor<T>& waveforms, const Tensor<T>& demographics, Mode mode) {
    if (waveforms.rank() != 3 || waveforms.dim(1) != cfg_.channels || waveforms.dim(2) != cfg_.length) {
      throw ShapeError("model expects waveforms [B," + std::to_string(cfg_.channels) + "," + std::to_string(cfg_.length) +
                       "], got " + to_string(waveforms.shape()));
    }
    if (demographics.rank() != 2 || demographics.dim(0) != waveforms.dim(0) || demographics.dim(1) != cfg_.demographics_dim) {
      throw ShapeError("model expects demographics [B," + std::to_string(cfg_.demographics_dim) + "], got " +
                       to_string(demographics.shape()));
    }
    Tensor<T> h = head_pre_->forward(features_->forward(waveforms, mode), mode);
    return head_post_->forward(concat<T>({h, demographics}, 1), mode);
  }

  const ModelConfig& config() const { return cfg_; }
  const std::vector<Parameter<T>>& parameters() const { return registry_; }
  const std::vector<StageInfo>& stages() const { return stages_; }
  Sequential<T>& features() { return *features_; }

  std::vector<std::pair<std::string, std::vector<T>*>> buffers() {
    std::vector<std::pair<std::string, std::vector<T>*>> out;
    features_->collect_buffers(out);
    return out;
  }

  void zero_grad() {
    for (auto& p : registry_) p.zero_grad();
  }

  std::size_t attention_block_count() const {
    return static_cast<std::size_t>(std::count_if(stages_.begin(), stages_.end(), [](const auto& s) {
      return s.is_attention && s.kind != "msa";
    }));
  }

 private:
  static std::string kind_name(StageKind k) {
    switch (k) {
      case StageKind::plain: return "vgg";
      case StageKind::residual: return "residual";
      case StageKind::inception: return "inception";
    }
    return "plain";
  }

  static void append_ops(Sequential<T>& seq, const OpSeq& ops, const std::string& prefix, Initializer& init) {
    std::size_t conv_i = 0;
    for (const auto& op : ops) {
      if (!op.is_conv) {
        seq.add(std::make_unique<Pool<T>>(op.pool.kind, op.pool.window, op.pool.stride, op.pool.padding));
        continue;
      }
      const auto& c = op.conv;
      const std::string n = prefix + "/conv" + std::to_string(++conv_i);
      seq.add(std::make_unique<Conv1d<T>>(n, c.cin, c.cout, c.kernel, c.stride, c.padding, init,
                                          c.relu ? InitKind::kaiming_uniform : InitKind::xavier_uniform));
      if (c.batchnorm) seq.add(std::make_unique<BatchNorm<T>>(n + "/bn", c.cout));
      if (c.relu) seq.add(std::make_unique<ActivationLayer<T>>(Activation::relu));
    }
  }

  static std::unique_ptr<Layer<T>> instantiate(const StageSpec& s, Initializer& init) {
    if (s.kind == StageKind::residual) {
      auto main = std::make_unique<Sequential<T>>(s.name + "/main");
      append_ops(*main, s.body, s.name + "/main", init);
      std::unique_ptr<Sequential<T>> shortcut;
      if (!s.shortcut.empty()) {
        shortcut = std::make_unique<Sequential<T>>(s.name + "/shortcut");
        append_ops(*shortcut, s.shortcut, s.name + "/shortcut", init);
      }
      return std::make_unique<Residual<T>>(s.name, std::move(main), std::move(shortcut));
    }
    if (s.kind == StageKind::inception) {
      auto stage = std::make_unique<Sequential<T>>(s.name, "inception_stage");
      append_ops(*stage, s.body, s.name, init);
      auto branches = std::make_unique<Branches<T>>(s.name + "/branches");
      for (std::size_t b = 0; b < s.branches.size(); ++b) {
        const std::string bn = s.name + "/branch" + std::to_string(b + 1);
        auto seq = std::make_unique<Sequential<T>>(bn);
        append_ops(*seq, s.branches[b], bn, init);
        branches->add_branch(std::move(seq));
      }
      stage->add(std::move(branches));
      return stage;
    }
    auto seq = std::make_unique<Sequential<T>>(s.name, s.is_module ? "vgg" : "stem");
    append_ops(*seq, s.body, s.name, init);
    return seq;
  }

  ModelConfig cfg_;
  std::unique_ptr<Sequential<T>> features_, head_pre_, head_post_;
  std::vector<Parameter<T>> registry_;
  std::vector<StageInfo> stages_;
};

template <class T>
std::unique_ptr<BuiltModel<T>> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  return std::make_unique<BuiltModel<T>>(cfg, seed);
}

/// Trainable parameter count of a built model (batchnorm running stats excluded).
template <class T>
std::size_t count_params(const BuiltModel<T>& model) {
  std::size_t n = 0;
  for (const auto& p : model.parameters()) {
    if (p.trainable()) n += p.size();
  }
  return n;
}

template <class T>
std::size_t count_params(const Layer<T>& layer) {
  std::size_t n = 0;
  for (const auto& p : parameters_of(layer)) {
    if (p.trainable()) n += p.size();
  }
  return n;
}

/// Total trainable parameters build_model(cfg) would allocate, from the plan alone.
inline std::size_t planned_param_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t width = cfg.resolved_head_width();
  const std::size_t fused = width + cfg.demographics_dim;
  if (cfg.family == BackboneFamily::msa_only) {
    const auto& m = *cfg.msa;
    return cfg.channels * m.d_model * cfg.msa_stem_kernel + m.d_model + m.n_layers * msa_layer_params(m) +
           m.d_model * width + width + fused + 1;
  }
  const auto plan = plan_backbone(cfg.family, cfg.level, cfg.channels, cfg.length);
  std::size_t n = planning_param_count(cfg.family, cfg.level, cfg.attention, cfg.fraction, cfg.attention_options,
                                       cfg.head_width, cfg.channels, cfg.length);
  if (cfg.family == BackboneFamily::vgg) return n + cfg.demographics_dim * width;
  return n + plan.out_channels * width + width + fused + 1;
}

// ---------------------------------------------------------------------------
// level planning

enum class LevelTrend { increasing, decreasing, mixed };

inline std::string_view to_string(LevelTrend t) {
  switch (t) {
    case LevelTrend::increasing: return "increasing";
    case LevelTrend::decreasing: return "decreasing";
    case LevelTrend::mixed: return "mixed";
  }
  return "mixed";
}

struct LevelTable {
  BackboneFamily family;
  std::vector<std::pair<std::size_t, std::uint64_t>> counts;  // (level, trainable params)
  std::uint64_t default_count = 0;

  /// default/5, the parameter budget implied by the 224/45 input-size ratio.
  double threshold() const { return static_cast<double>(default_count) / 5.0; }
};

/// Smallest count that still reaches default/5 (ties go to the lower level).
inline std::size_t select_level(const LevelTable& table) {
  if (table.counts.empty()) throw std::invalid_argument("select_level: empty level table");
  std::optional<std::pair<std::size_t, std::uint64_t>> best;
  std::uint64_t max_seen = 0;
  for (const auto& [level, count] : table.counts) {
    max_seen = std::max(max_seen, count);
    if (count * 5 < table.default_count) continue;  // exact comparison against default/5
    if (!best || count < best->second || (count == best->second && level < best->first)) best = {level, count};
  }
  if (!best) {
    throw std::runtime_error("select_level: no level reaches threshold " + std::to_string(table.threshold()) +
                             " (largest available count " + std::to_string(max_seen) + ")");
  }
  return best->first;
}

inline LevelTrend level_trend(const LevelTable& table) {
  if (table.counts.size() < 2) throw std::invalid_argument("level_trend needs at least two levels");
  auto rows = table.counts;
  std::sort(rows.begin(), rows.end());
  bool inc = true, dec = true;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    inc = inc && rows[i].second > rows[i - 1].second;
    dec = dec && rows[i].second < rows[i - 1].second;
  }
  return inc ? LevelTrend::increasing : dec ? LevelTrend::decreasing : LevelTrend::mixed;
}

/// Reported trainable-parameter counts per level of the three reduced backbones.
inline LevelTable reference_level_table(BackboneFamily family) {
  switch (family) {
    case BackboneFamily::vgg:
      return {family, {{1, 192128065}, {2, 189891329}, {3, 130614785}, {4, 90639361}, {5, 40567296}}, 40567296};
    case BackboneFamily::resnet:
      return {family,
              {{1, 26048}, {2, 51008}, {3, 134080}, {4, 233152}, {5, 563136}, {6, 957888}, {7, 2273216}, {8, 3849152}},
              3849152};
    case BackboneFamily::inception:
      return {family,
              {{1, 117744}, {2, 297584}, {3, 538592}, {4, 806504}, {5, 1089280}, {6, 1404864}, {7, 1884096}, {8, 2538432}},
              3417264};
    case BackboneFamily::msa_only: break;
  }
  throw std::invalid_argument("no level table for msa_only");
}

/// Level table computed from this library's reconstructed backbones.
inline LevelTable model_level_table(BackboneFamily family, AttentionKind attention = AttentionKind::none, int fraction = 0,
                                    const AttentionOptions& opt = {}, std::size_t head_width = 0) {
  LevelTable t{family, {}, 0};
  for (std::size_t l = 1; l <= max_level(family); ++l) {
    t.counts.emplace_back(l, planning_param_count(family, l, attention, fraction, opt, head_width));
  }
  t.default_count = planning_param_count(family, full_depth(family), attention, fraction, opt, head_width);
  return t;
}

}  // namespace physioattn
