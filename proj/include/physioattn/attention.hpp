#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "physioattn/nn.hpp"
#include "physioattn/ops.hpp"

namespace physioattn {

enum class AttentionKind { none, se, nl, cbam, msa };

inline std::string_view to_string(AttentionKind k) {
  switch (k) {
    case AttentionKind::none: return "none";
    case AttentionKind::se: return "se";
    case AttentionKind::nl: return "nl";
    case AttentionKind::cbam: return "cbam";
    case AttentionKind::msa: return "msa";
  }
  return "none";
}

inline AttentionKind parse_attention_kind(std::string_view s) {
  for (auto k : {AttentionKind::none, AttentionKind::se, AttentionKind::nl, AttentionKind::cbam, AttentionKind::msa}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown attention kind '" + std::string(s) + "' (expected none|se|nl|cbam|msa)");
}

/// How the non-local block turns pairwise similarities into weights.
enum class NlNormalization { softmax, dot_product };

struct AttentionOptions {
  std::size_t se_reduction = 16;
  std::size_t cbam_reduction = 16;
  std::size_t cbam_spatial_kernel = 7;
  bool nl_zero_init_output = true;
  NlNormalization nl_normalization = NlNormalization::softmax;
};

struct MsaConfig {
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t n_layers = 2;

  std::size_t d_k() const { return d_model / n_heads; }

  void validate() const {
    if (d_model == 0 || n_heads == 0 || d_ff == 0 || n_layers == 0) {
      throw std::invalid_argument("msa config fields must be positive");
    }
    if (d_model % n_heads != 0) {
      throw std::invalid_argument("msa d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                                  std::to_string(n_heads));
    }
  }

  bool valid() const { return d_model > 0 && n_heads > 0 && d_ff > 0 && n_layers > 0 && d_model % n_heads == 0; }

  friend bool operator==(const MsaConfig&, const MsaConfig&) = default;
};

/// The hyperparameter search space for stand-alone self-attention models,
/// enumerated in (d_model, heads, d_ff, layers) lexicographic order.
inline std::vector<MsaConfig> msa_grid() {
  std::vector<MsaConfig> out;
  for (std::size_t d : {16, 32, 64})
    for (std::size_t h : {2, 4, 6, 8})
      for (std::size_t ff : {32, 64, 128})
        for (std::size_t n : {1, 2, 3}) out.push_back({d, h, ff, n});
  return out;
}

// ---------------------------------------------------------------------------

/// Squeeze-and-excitation: per-channel gate from a bottleneck MLP over the
/// global average.
template <class T>
class SeBlock : public Layer<T> {
 public:
  SeBlock(std::string name, std::size_t channels, std::size_t reduction, Initializer& init) : Layer<T>(std::move(name)) {
    if (reduction < 1 || reduction > channels) {
      throw std::invalid_argument("se reduction ratio " + std::to_string(reduction) + " must be in [1, C=" +
                                  std::to_string(channels) + "]");
    }
    const std::size_t hidden = channels / reduction;
    squeeze_ = this->add_child(std::make_unique<Dense<T>>(this->name() + "/fc1", channels, hidden, init, InitKind::kaiming_uniform));
    excite_ = this->add_child(std::make_unique<Dense<T>>(this->name() + "/fc2", hidden, channels, init, InitKind::xavier_uniform));
  }

  /// [B,C,L] -> [B,C] gate in (0,1).
  Tensor<T> gate(const Tensor<T>& x) {
    Tensor<T> s = global_pool(x, PoolKind::avg);
    return sigmoid(excite_->forward(relu(squeeze_->forward(s, Mode::eval)), Mode::eval));
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    Tensor<T> g = gate(x);
    return mul(x, reshape(g, {x.dim(0), x.dim(1), 1}));
  }
  std::string kind() const override { return "se"; }

  Dense<T>& squeeze() { return *squeeze_; }
  Dense<T>& excite() { return *excite_; }

 private:
  Dense<T>* squeeze_;
  Dense<T>* excite_;
};

/// Embedded-Gaussian non-local block with residual connection.
template <class T>
class NlBlock : public Layer<T> {
 public:
  NlBlock(std::string name, std::size_t channels, Initializer& init, bool zero_init_output = true,
          NlNormalization norm = NlNormalization::softmax)
      : Layer<T>(std::move(name)), norm_(norm) {
    if (channels < 2) throw std::invalid_argument("non-local block needs at least 2 channels");
    const std::size_t inner = channels / 2;
    const auto& n = this->name();
    theta_ = this->add_child(std::make_unique<Conv1d<T>>(n + "/theta", channels, inner, 1, 1, Padding::valid, init, InitKind::xavier_uniform));
    phi_ = this->add_child(std::make_unique<Conv1d<T>>(n + "/phi", channels, inner, 1, 1, Padding::valid, init, InitKind::xavier_uniform));
    g_ = this->add_child(std::make_unique<Conv1d<T>>(n + "/g", channels, inner, 1, 1, Padding::valid, init, InitKind::xavier_uniform));
    out_ = this->add_child(std::make_unique<Conv1d<T>>(n + "/wz", inner, channels, 1, 1, Padding::valid, init,
                                                       zero_init_output ? InitKind::zeros : InitKind::xavier_uniform));
  }

  /// [B,C,L] -> [B,L,L]; row i holds the weights position i puts on every j.
  Tensor<T> attention(const Tensor<T>& x) {
    Tensor<T> th = permute(theta_->forward(x, Mode::eval), {0, 2, 1});
    Tensor<T> ph = phi_->forward(x, Mode::eval);
    Tensor<T> f = matmul(th, ph);
    if (norm_ == NlNormalization::softmax) return softmax(f, -1);
    return scale(f, T(1) / static_cast<T>(x.dim(2)));
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    Tensor<T> a = attention(x);
    Tensor<T> gv = permute(g_->forward(x, mode), {0, 2, 1});  // [B,L,Ci]
    Tensor<T> y = permute(matmul(a, gv), {0, 2, 1});          // [B,Ci,L]
    return add(x, out_->forward(y, mode));
  }
  std::string kind() const override { return "nl"; }

  Conv1d<T>& theta() { return *theta_; }
  Conv1d<T>& phi() { return *phi_; }
  Conv1d<T>& g() { return *g_; }
  Conv1d<T>& output() { return *out_; }

 private:
  NlNormalization norm_;
  Conv1d<T>* theta_;
  Conv1d<T>* phi_;
  Conv1d<T>* g_;
  Conv1d<T>* out_;
};

/// CBAM: channel gate (shared MLP over avg- and max-pooled descriptors), then
/// spatial gate (conv over channel-mean and channel-max maps).
template <class T>
class CbamBlock : public Layer<T> {
 public:
  CbamBlock(std::string name, std::size_t channels, std::size_t reduction, std::size_t spatial_kernel, Initializer& init)
      : Layer<T>(std::move(name)) {
    if (spatial_kernel % 2 == 0) throw std::invalid_argument("cbam spatial kernel must be odd");
    if (reduction < 1 || reduction > channels) {
      throw std::invalid_argument("cbam reduction ratio " + std::to_string(reduction) + " must be in [1, C=" +
                                  std::to_string(channels) + "]");
    }
    const std::size_t hidden = channels / reduction;
    const auto& n = this->name();
    fc1_ = this->add_child(std::make_unique<Dense<T>>(n + "/mlp1", channels, hidden, init, InitKind::kaiming_uniform));
    fc2_ = this->add_child(std::make_unique<Dense<T>>(n + "/mlp2", hidden, channels, init, InitKind::xavier_uniform));
    spatial_ = this->add_child(std::make_unique<Conv1d<T>>(n + "/spatial", 2, 1, spatial_kernel, 1, Padding::same, init,
                                                           InitKind::xavier_uniform));
  }

  /// [B,C,L] -> [B,C]
  Tensor<T> channel_gate(const Tensor<T>& x) {
    auto mlp = [&](const Tensor<T>& v) { return fc2_->forward(relu(fc1_->forward(v, Mode::eval)), Mode::eval); };
    return sigmoid(add(mlp(global_pool(x, PoolKind::avg)), mlp(global_pool(x, PoolKind::max))));
  }

  /// [B,C,L] (already channel-gated) -> [B,1,L]
  Tensor<T> spatial_gate(const Tensor<T>& x) {
    const Shape s{x.dim(0), 1, x.dim(2)};
    Tensor<T> stacked = concat<T>({reshape(reduce_mean(x, 1), s), reshape(reduce_max(x, 1), s)}, 1);
    return sigmoid(spatial_->forward(stacked, Mode::eval));
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    Tensor<T> xc = mul(x, reshape(channel_gate(x), {x.dim(0), x.dim(1), 1}));
    return mul(xc, spatial_gate(xc));
  }
  std::string kind() const override { return "cbam"; }

  Dense<T>& mlp1() { return *fc1_; }
  Dense<T>& mlp2() { return *fc2_; }
  Conv1d<T>& spatial() { return *spatial_; }

 private:
  Dense<T>* fc1_;
  Dense<T>* fc2_;
  Conv1d<T>* spatial_;
};

// ---------------------------------------------------------------------------
// multi-head self-attention

template <class T>
class MultiHeadAttention : public Layer<T> {
 public:
  MultiHeadAttention(std::string name, std::size_t d_model, std::size_t heads, Initializer& init)
      : Layer<T>(std::move(name)), d_(d_model), h_(heads) {
    if (heads == 0 || d_model % heads != 0) {
      throw std::invalid_argument("d_model " + std::to_string(d_model) + " not divisible by heads " + std::to_string(heads));
    }
    const auto& n = this->name();
    q_ = this->add_child(std::make_unique<Dense<T>>(n + "/wq", d_model, d_model, init, InitKind::xavier_uniform));
    k_ = this->add_child(std::make_unique<Dense<T>>(n + "/wk", d_model, d_model, init, InitKind::xavier_uniform));
    v_ = this->add_child(std::make_unique<Dense<T>>(n + "/wv", d_model, d_model, init, InitKind::xavier_uniform));
    o_ = this->add_child(std::make_unique<Dense<T>>(n + "/wo", d_model, d_model, init, InitKind::xavier_uniform));
  }

  /// [B,L,d] -> [B,h,L,L] row-stochastic weights.
  Tensor<T> attention_weights(const Tensor<T>& x) {
    Tensor<T> q = split_heads(q_->forward(x, Mode::eval));
    Tensor<T> k = split_heads(k_->forward(x, Mode::eval));
    Tensor<T> scores = matmul(q, permute(k, {0, 1, 3, 2}));
    return softmax(scale(scores, T(1) / std::sqrt(static_cast<T>(d_ / h_))), -1);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    Tensor<T> v = split_heads(v_->forward(x, Mode::eval));
    Tensor<T> ctx = matmul(attention_weights(x), v);  // [B,h,L,dk]
    Tensor<T> merged = reshape(permute(ctx, {0, 2, 1, 3}), {x.dim(0), x.dim(1), d_});
    return o_->forward(merged, Mode::eval);
  }
  std::string kind() const override { return "mha"; }

  Dense<T>& wq() { return *q_; }
  Dense<T>& wk() { return *k_; }
  Dense<T>& wv() { return *v_; }
  Dense<T>& wo() { return *o_; }

 private:
  Tensor<T> split_heads(const Tensor<T>& x) const {
    return permute(reshape(x, {x.dim(0), x.dim(1), h_, d_ / h_}), {0, 2, 1, 3});
  }

  std::size_t d_, h_;
  Dense<T>* q_;
  Dense<T>* k_;
  Dense<T>* v_;
  Dense<T>* o_;
};

/// Post-norm encoder layer: LN(x + MHA(x)), then LN(h + FF(h)).
template <class T>
class MsaEncoderLayer : public Layer<T> {
 public:
  MsaEncoderLayer(std::string name, const MsaConfig& cfg, Initializer& init) : Layer<T>(std::move(name)) {
    cfg.validate();
    const auto& n = this->name();
    mha_ = this->add_child(std::make_unique<MultiHeadAttention<T>>(n + "/mha", cfg.d_model, cfg.n_heads, init));
    ln1_ = this->add_child(std::make_unique<LayerNorm<T>>(n + "/ln1", cfg.d_model));
    ff1_ = this->add_child(std::make_unique<Dense<T>>(n + "/ff1", cfg.d_model, cfg.d_ff, init, InitKind::kaiming_uniform));
    ff2_ = this->add_child(std::make_unique<Dense<T>>(n + "/ff2", cfg.d_ff, cfg.d_model, init, InitKind::xavier_uniform));
    ln2_ = this->add_child(std::make_unique<LayerNorm<T>>(n + "/ln2", cfg.d_model));
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    Tensor<T> h = ln1_->forward(add(x, mha_->forward(x, mode)), mode);
    Tensor<T> f = ff2_->forward(relu(ff1_->forward(h, mode)), mode);
    return ln2_->forward(add(h, f), mode);
  }
  std::string kind() const override { return "msa_layer"; }

  MultiHeadAttention<T>& mha() { return *mha_; }
  Dense<T>& ff1() { return *ff1_; }
  Dense<T>& ff2() { return *ff2_; }

 private:
  MultiHeadAttention<T>* mha_;
  LayerNorm<T>* ln1_;
  Dense<T>* ff1_;
  Dense<T>* ff2_;
  LayerNorm<T>* ln2_;
};

/// Stack of `n_layers` identical encoder layers over [B,L,d_model] tokens.
template <class T>
class MsaBlock : public Layer<T> {
 public:
  MsaBlock(std::string name, const MsaConfig& cfg, Initializer& init) : Layer<T>(std::move(name)), cfg_(cfg) {
    cfg.validate();
    for (std::size_t i = 0; i < cfg.n_layers; ++i) {
      layers_.push_back(this->add_child(
          std::make_unique<MsaEncoderLayer<T>>(this->name() + "/layer" + std::to_string(i + 1), cfg, init)));
    }
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    if (x.rank() != 3 || x.dim(2) != cfg_.d_model) {
      throw ShapeError("msa block expects [B,L," + std::to_string(cfg_.d_model) + "], got " + to_string(x.shape()));
    }
    Tensor<T> h = x;
    for (auto* l : layers_) h = l->forward(h, mode);
    return h;
  }
  std::string kind() const override { return "msa"; }

  MsaEncoderLayer<T>& layer(std::size_t i) { return *layers_.at(i); }
  const MsaConfig& config() const { return cfg_; }

 private:
  MsaConfig cfg_;
  std::vector<MsaEncoderLayer<T>*> layers_;
};

/// Fixed sinusoidal position table, [length, d_model].
template <class T>
std::vector<T> sinusoidal_positions(std::size_t length, std::size_t d_model) {
  std::vector<T> pe(length * d_model);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d_model; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model));
      const double a = static_cast<double>(pos) * freq;
      pe[pos * d_model + i] = static_cast<T>(i % 2 == 0 ? std::sin(a) : std::cos(a));
    }
  }
  return pe;
}

/// [B,C,L] conv features -> [B,L,C] tokens, optionally plus sinusoidal positions.
template <class T>
class ToTokens : public Layer<T> {
 public:
  explicit ToTokens(bool positional) : positional_(positional) {}
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    Tensor<T> t = permute(x, {0, 2, 1});
    if (!positional_) return t;
    return add(t, Tensor<T>({1, t.dim(1), t.dim(2)}, sinusoidal_positions<T>(t.dim(1), t.dim(2))));
  }
  std::string kind() const override { return "tokens"; }

 private:
  bool positional_;
};

/// Mean over the token axis: [B,L,d] -> [B,d].
template <class T>
class TokenMean : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode) override { return reduce_mean(x, 1); }
  std::string kind() const override { return "token_mean"; }
};

/// Builds the attention block that follows a CNN module with `channels` outputs.
template <class T>
std::unique_ptr<Layer<T>> make_attention_block(AttentionKind kind, const std::string& name, std::size_t channels,
                                               const AttentionOptions& opt, Initializer& init) {
  switch (kind) {
    case AttentionKind::se:
      return std::make_unique<SeBlock<T>>(name, channels, std::min(opt.se_reduction, channels), init);
    case AttentionKind::nl:
      return std::make_unique<NlBlock<T>>(name, channels, init, opt.nl_zero_init_output, opt.nl_normalization);
    case AttentionKind::cbam:
      return std::make_unique<CbamBlock<T>>(name, channels, std::min(opt.cbam_reduction, channels), opt.cbam_spatial_kernel,
                                            init);
    default:
      throw std::invalid_argument("attention kind '" + std::string(to_string(kind)) + "' cannot follow a CNN module");
  }
}

}  // namespace physioattn
