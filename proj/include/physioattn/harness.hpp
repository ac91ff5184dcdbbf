#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "physioattn/backbones.hpp"
#include "physioattn/datapipe.hpp"
#include "physioattn/metrics.hpp"

namespace physioattn {

enum class LossKind { bce, rmse };
enum class OptimizerKind { adam, rmsprop };
enum class ClockKind { work, wall };

inline std::string_view to_string(LossKind k) { return k == LossKind::bce ? "bce" : "rmse"; }
inline std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "rmsprop"; }
inline std::string_view to_string(ClockKind k) { return k == ClockKind::work ? "work" : "wall"; }

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "rmsprop") return OptimizerKind::rmsprop;
  throw std::invalid_argument("unknown optimizer '" + std::string(s) + "' (expected adam|rmsprop)");
}

inline ClockKind parse_clock(std::string_view s) {
  if (s == "work") return ClockKind::work;
  if (s == "wall") return ClockKind::wall;
  throw std::invalid_argument("unknown clock '" + std::string(s) + "' (expected work|wall)");
}

struct TrainSpec {
  LossKind loss = LossKind::bce;
  OptimizerKind optimizer = OptimizerKind::adam;
  LrSchedule schedule;
  std::size_t batch = 128;
  int epochs = 60;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double rmsprop_rho = 0.9;
  double rmsprop_eps = 1e-7;
  double auroc_threshold = 0.7;
  double mape_threshold = 27.0;
  ClockKind clock = ClockKind::work;  // work: MACs / 1e9, deterministic
  std::size_t eval_batch = 256;
};

inline LossKind protocol_loss(Task t) { return t == Task::classification ? LossKind::bce : LossKind::rmse; }

inline OptimizerKind protocol_optimizer(BackboneFamily f, Task t) {
  return f == BackboneFamily::inception && t == Task::classification ? OptimizerKind::rmsprop : OptimizerKind::adam;
}

/// Spec with the loss and optimizer the protocol assigns to this model and task.
inline TrainSpec protocol_spec(const ModelConfig& cfg, TrainSpec base = {}) {
  base.loss = protocol_loss(cfg.task);
  base.optimizer = protocol_optimizer(cfg.family, cfg.task);
  return base;
}

inline void check_spec(const TrainSpec& spec, const ModelConfig& cfg) {
  if (spec.loss != protocol_loss(cfg.task)) {
    throw std::invalid_argument(std::string(to_string(cfg.task)) + " requires loss " + std::string(to_string(protocol_loss(cfg.task))));
  }
  if (spec.optimizer != protocol_optimizer(cfg.family, cfg.task)) {
    throw std::invalid_argument(std::string(to_string(cfg.family)) + "/" + std::string(to_string(cfg.task)) + " requires optimizer " +
                                std::string(to_string(protocol_optimizer(cfg.family, cfg.task))));
  }
  if (spec.batch == 0 || spec.eval_batch == 0) throw std::invalid_argument("batch sizes must be positive");
  if (spec.epochs < 0) throw std::invalid_argument("epochs must be non-negative");
}

// ---------------------------------------------------------------------------
// normalization

/// Training-set z-scoring for waveform channels, demographics and (regression) targets.
struct Normalizer {
  double channel_mean[kChannels] = {0, 0};
  double channel_std[kChannels] = {1, 1};
  double demo_mean[kDemographics] = {0, 0, 0, 0};
  double demo_std[kDemographics] = {1, 1, 1, 1};
  double target_mean = 0;
  double target_std = 1;
  bool scale_target = false;

  static Normalizer fit(const Dataset& ds) {
    if (ds.records.empty()) throw std::invalid_argument("Normalizer::fit: empty dataset");
    Normalizer n;
    auto finish = [](double s, double ss, double count, double& mean, double& sd) {
      mean = s / count;
      const double var = std::max(0.0, ss / count - mean * mean);
      sd = var > 1e-12 ? std::sqrt(var) : 1.0;
    };
    for (std::size_t c = 0; c < kChannels; ++c) {
      double s = 0, ss = 0;
      for (const auto& r : ds.records) {
        for (float v : c == 0 ? r.ecg : r.ppg) s += v, ss += double(v) * v;
      }
      finish(s, ss, double(ds.size() * kSegmentLength), n.channel_mean[c], n.channel_std[c]);
    }
    for (std::size_t k = 0; k < kDemographics; ++k) {
      double s = 0, ss = 0;
      for (const auto& r : ds.records) {
        const double v = demographic(r, k);
        s += v, ss += v * v;
      }
      finish(s, ss, double(ds.size()), n.demo_mean[k], n.demo_std[k]);
    }
    if (ds.task == Task::regression) {
      double s = 0, ss = 0;
      for (const auto& r : ds.records) s += r.label, ss += double(r.label) * r.label;
      finish(s, ss, double(ds.size()), n.target_mean, n.target_std);
      n.scale_target = true;
    }
    return n;
  }

  static double demographic(const SampleRecord& r, std::size_t k) {
    switch (k) {
      case 0: return r.age;
      case 1: return r.sex;
      case 2: return r.height;
      default: return r.weight;
    }
  }

  double target_to_model(double y) const { return scale_target ? (y - target_mean) / target_std : y; }
  double target_from_model(double y) const { return scale_target ? y * target_std + target_mean : y; }

  nlohmann::json to_json() const {
    return {{"channel_mean", channel_mean}, {"channel_std", channel_std}, {"demo_mean", demo_mean}, {"demo_std", demo_std},
            {"target_mean", target_mean},   {"target_std", target_std},   {"scale_target", scale_target}};
  }

  static Normalizer from_json(const nlohmann::json& j) {
    Normalizer n;
    for (std::size_t c = 0; c < kChannels; ++c) {
      n.channel_mean[c] = j.at("channel_mean").at(c);
      n.channel_std[c] = j.at("channel_std").at(c);
    }
    for (std::size_t k = 0; k < kDemographics; ++k) {
      n.demo_mean[k] = j.at("demo_mean").at(k);
      n.demo_std[k] = j.at("demo_std").at(k);
    }
    n.target_mean = j.at("target_mean");
    n.target_std = j.at("target_std");
    n.scale_target = j.at("scale_target");
    return n;
  }
};

template <class T>
struct Batch {
  Tensor<T> waveforms;     // [B,2,2000]
  Tensor<T> demographics;  // [B,4]
  Tensor<T> targets;       // [B,1], model scale
};

template <class T>
Batch<T> make_batch(const Dataset& ds, const std::vector<std::size_t>& order, std::size_t begin, std::size_t end,
                    const Normalizer& norm) {
  const std::size_t B = end - begin;
  std::vector<T> x(B * kChannels * kSegmentLength), d(B * kDemographics), y(B);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& r = ds.records[order[begin + b]];
    for (std::size_t c = 0; c < kChannels; ++c) {
      const auto& src = c == 0 ? r.ecg : r.ppg;
      T* dst = x.data() + (b * kChannels + c) * kSegmentLength;
      const double m = norm.channel_mean[c], s = norm.channel_std[c];
      for (std::size_t i = 0; i < kSegmentLength; ++i) dst[i] = static_cast<T>((src[i] - m) / s);
    }
    for (std::size_t k = 0; k < kDemographics; ++k) {
      d[b * kDemographics + k] = static_cast<T>((Normalizer::demographic(r, k) - norm.demo_mean[k]) / norm.demo_std[k]);
    }
    y[b] = static_cast<T>(norm.target_to_model(r.label));
  }
  return {Tensor<T>({B, kChannels, kSegmentLength}, std::move(x)), Tensor<T>({B, kDemographics}, std::move(d)),
          Tensor<T>({B, 1}, std::move(y))};
}

// ---------------------------------------------------------------------------
// optimizers

template <class T>
class Optimizer {
 public:
  Optimizer(const TrainSpec& spec, const std::vector<Parameter<T>>& params) : spec_(spec) {
    for (const auto& p : params) {
      if (!p.trainable()) continue;
      params_.push_back(p);
      m_.emplace_back(p.size(), T(0));
      v_.emplace_back(p.size(), T(0));
    }
  }

  void step(double lr) {
    ++t_;
    if (spec_.optimizer == OptimizerKind::adam) {
      const double b1 = spec_.adam_beta1, b2 = spec_.adam_beta2;
      const double c1 = 1.0 - std::pow(b1, t_), c2 = 1.0 - std::pow(b2, t_);
      const T step = static_cast<T>(lr * std::sqrt(c2) / c1);
      const T eps_hat = static_cast<T>(spec_.adam_eps * std::sqrt(c2));
      for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& w = params_[i].value.data();
        const auto& g = params_[i].grad();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t k = 0; k < w.size(); ++k) {
          m[k] = static_cast<T>(b1) * m[k] + static_cast<T>(1 - b1) * g[k];
          v[k] = static_cast<T>(b2) * v[k] + static_cast<T>(1 - b2) * g[k] * g[k];
          w[k] -= step * m[k] / (std::sqrt(v[k]) + eps_hat);
        }
      }
    } else {
      const T rho = static_cast<T>(spec_.rmsprop_rho), eps = static_cast<T>(spec_.rmsprop_eps), a = static_cast<T>(lr);
      for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& w = params_[i].value.data();
        const auto& g = params_[i].grad();
        auto& v = v_[i];
        for (std::size_t k = 0; k < w.size(); ++k) {
          v[k] = rho * v[k] + (T(1) - rho) * g[k] * g[k];
          w[k] -= a * g[k] / (std::sqrt(v[k]) + eps);
        }
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  TrainSpec spec_;
  std::vector<Parameter<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  int t_ = 0;
};

// ---------------------------------------------------------------------------
// training

struct EvalResult {
  double metric = 0;
  std::vector<double> predictions;  // logits (classification) or targets in data units
};

struct RunResult {
  std::uint64_t seed = 0;
  double initial_metric = 0;
  std::vector<double> losses;        // mean training loss per epoch
  std::vector<double> metrics;       // test metric after each epoch
  std::vector<double> seconds;       // elapsed clock at each evaluation
  std::vector<double> wall_seconds;  // wall clock, for the timing log only
  std::optional<double> convergence;
  double final_metric = 0;
  bool aborted = false;
  std::string abort_reason;
  Normalizer normalizer;

  std::size_t epochs_run() const { return losses.size(); }
};

inline double metric_of(Task task, const Dataset& ds, const std::vector<double>& preds) {
  std::vector<double> truth(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) truth[i] = ds.records[i].label;
  return task == Task::classification ? auroc(truth, preds) : mape(truth, preds);
}

template <class T>
EvalResult evaluate(BuiltModel<T>& model, const Dataset& ds, const Normalizer& norm, std::size_t eval_batch = 256) {
  if (ds.records.empty()) throw std::invalid_argument("evaluate: empty dataset");
  if (ds.task != model.config().task) throw std::invalid_argument("evaluate: dataset task does not match the model head");
  NoGradGuard guard;
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  EvalResult r;
  r.predictions.reserve(ds.size());
  for (std::size_t b = 0; b < ds.size(); b += eval_batch) {
    const auto e = std::min(ds.size(), b + eval_batch);
    auto batch = make_batch<T>(ds, order, b, e, norm);
    const auto out = model.forward(batch.waveforms, batch.demographics, Mode::eval);
    for (T v : out.data()) r.predictions.push_back(norm.target_from_model(static_cast<double>(v)));
  }
  r.metric = metric_of(ds.task, ds, r.predictions);
  return r;
}

inline void check_task_data(const ModelConfig& cfg, const Dataset& train, const Dataset& test) {
  if (train.task != cfg.task || test.task != cfg.task) {
    throw std::invalid_argument("dataset task (" + std::string(to_string(train.task)) + ") does not match model task (" +
                                std::string(to_string(cfg.task)) + ")");
  }
  if (train.records.empty() || test.records.empty()) throw std::invalid_argument("train and test sets must be non-empty");
  if (cfg.task == Task::classification) {
    const double p = test.positive_fraction();
    if (p == 0.0 || p == 1.0) throw std::invalid_argument("test set holds a single class; AUROC is undefined");
  }
}

/// Seeded mini-batch training with a test evaluation after every epoch.
template <class T>
RunResult train(BuiltModel<T>& model, const Dataset& train_ds, const Dataset& test_ds, const TrainSpec& spec) {
  const auto& cfg = model.config();
  check_spec(spec, cfg);
  check_task_data(cfg, train_ds, test_ds);
  RunResult res;
  res.seed = spec.seed;
  res.normalizer = Normalizer::fit(train_ds);
  const auto& norm = res.normalizer;

  const std::uint64_t mac0 = mac_count();
  const auto wall0 = std::chrono::steady_clock::now();
  auto now = [&] {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    const double work = static_cast<double>(mac_count() - mac0) / 1e9;
    return std::pair{spec.clock == ClockKind::work ? work : wall, wall};
  };

  res.initial_metric = evaluate(model, test_ds, norm, spec.eval_batch).metric;
  res.final_metric = res.initial_metric;
  Optimizer<T> opt(spec, model.parameters());
  std::mt19937_64 rng(spec.seed);
  std::vector<std::size_t> order(train_ds.size());
  std::iota(order.begin(), order.end(), 0);
  const Direction dir = cfg.task == Task::classification ? Direction::at_least : Direction::at_most;
  const double threshold = cfg.task == Task::classification ? spec.auroc_threshold : spec.mape_threshold;
  std::vector<TimedMetric> timed;

  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = lr_at(epoch, spec.schedule);
    double loss_sum = 0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < order.size(); b += spec.batch) {
      const auto e = std::min(order.size(), b + spec.batch);
      auto batch = make_batch<T>(train_ds, order, b, e, norm);
      opt.zero_grad();
      const auto out = model.forward(batch.waveforms, batch.demographics, Mode::train);
      const auto loss = spec.loss == LossKind::bce ? bce_with_logits(out, batch.targets) : rmse(out, batch.targets);
      const double l = static_cast<double>(loss.item());
      if (!std::isfinite(l)) {
        res.aborted = true;
        res.abort_reason = "loss diverged (non-finite) at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b / spec.batch);
        return res;
      }
      backward(loss);
      opt.step(lr);
      loss_sum += l * static_cast<double>(e - b);
      seen += e - b;
    }
    const auto ev = evaluate(model, test_ds, norm, spec.eval_batch);
    const auto [clock, wall] = now();
    res.losses.push_back(loss_sum / static_cast<double>(seen));
    res.metrics.push_back(ev.metric);
    res.seconds.push_back(clock);
    res.wall_seconds.push_back(wall);
    res.final_metric = ev.metric;
    timed.push_back({clock, ev.metric});
    if (!std::isfinite(ev.metric)) {
      res.aborted = true;
      res.abort_reason = "test metric is non-finite at epoch " + std::to_string(epoch);
      return res;
    }
  }
  res.convergence = convergence_time(timed, threshold, dir);
  return res;
}

// ---------------------------------------------------------------------------
// checkpoints

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  nlohmann::json j{{"family", to_string(c.family)},
                   {"level", c.level},
                   {"attention", to_string(c.attention)},
                   {"fraction", c.fraction},
                   {"task", to_string(c.task)},
                   {"head_width", c.head_width},
                   {"demographics_dim", c.demographics_dim},
                   {"channels", c.channels},
                   {"length", c.length},
                   {"se_reduction", c.attention_options.se_reduction},
                   {"cbam_reduction", c.attention_options.cbam_reduction},
                   {"cbam_spatial_kernel", c.attention_options.cbam_spatial_kernel},
                   {"nl_zero_init_output", c.attention_options.nl_zero_init_output},
                   {"nl_normalization", c.attention_options.nl_normalization == NlNormalization::softmax ? "softmax" : "dot_product"},
                   {"positional_encoding", c.positional_encoding}};
  if (c.msa) j["msa"] = {c.msa->d_model, c.msa->n_heads, c.msa->d_ff, c.msa->n_layers};
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.family = parse_family(j.at("family").get<std::string>());
  c.level = j.at("level");
  c.attention = parse_attention_kind(j.at("attention").get<std::string>());
  c.fraction = j.at("fraction");
  c.task = parse_task(j.at("task").get<std::string>());
  c.head_width = j.at("head_width");
  c.demographics_dim = j.at("demographics_dim");
  c.channels = j.at("channels");
  c.length = j.at("length");
  c.attention_options.se_reduction = j.at("se_reduction");
  c.attention_options.cbam_reduction = j.at("cbam_reduction");
  c.attention_options.cbam_spatial_kernel = j.at("cbam_spatial_kernel");
  c.attention_options.nl_zero_init_output = j.at("nl_zero_init_output");
  c.attention_options.nl_normalization =
      j.at("nl_normalization") == "softmax" ? NlNormalization::softmax : NlNormalization::dot_product;
  c.positional_encoding = j.at("positional_encoding");
  if (j.contains("msa")) {
    const auto& m = j.at("msa");
    c.msa = MsaConfig{m.at(0), m.at(1), m.at(2), m.at(3)};
  }
  return c;
}

inline constexpr char kCheckpointMagic[4] = {'P', 'S', 'W', '1'};

template <class T>
void save_checkpoint(const std::string& path, BuiltModel<T>& model, const Normalizer& norm) {
  nlohmann::json meta{{"config", model_config_to_json(model.config())},
                      {"normalizer", norm.to_json()},
                      {"precision", sizeof(T) == 4 ? "f32" : "f64"}};
  auto& params = meta["parameters"] = nlohmann::json::array();
  for (const auto& p : model.parameters()) params.push_back({p.name, p.size()});
  auto bufs = model.buffers();
  auto& jb = meta["buffers"] = nlohmann::json::array();
  for (const auto& [name, v] : bufs) jb.push_back({name, v->size()});
  const std::string header = meta.dump();
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  for (const auto& p : model.parameters()) {
    for (T v : p.value.data()) detail::put_le<T>(out, v);
  }
  for (const auto& [name, v] : bufs) {
    for (T x : *v) detail::put_le<T>(out, x);
  }
  write_bytes(path, out);
}

template <class T>
struct LoadedCheckpoint {
  std::unique_ptr<BuiltModel<T>> model;
  Normalizer normalizer;
};

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw std::runtime_error("checkpoint '" + path + "': bad magic");
  }
  const auto hlen = detail::get_le<std::uint32_t>(bytes.data() + 4);
  if (bytes.size() < 8 + std::size_t(hlen)) throw std::runtime_error("checkpoint '" + path + "': truncated header");
  const auto meta = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + hlen);
  if (meta.at("precision") != (sizeof(T) == 4 ? "f32" : "f64")) {
    throw std::runtime_error("checkpoint '" + path + "' holds precision " + meta.at("precision").get<std::string>());
  }
  LoadedCheckpoint<T> out{build_model<T>(model_config_from_json(meta.at("config")), 0),
                          Normalizer::from_json(meta.at("normalizer"))};
  const std::uint8_t* p = bytes.data() + 8 + hlen;
  const std::uint8_t* end = bytes.data() + bytes.size();
  auto read_into = [&](std::vector<T>& dst, const std::string& name) {
    if (p + dst.size() * sizeof(T) > end) throw std::runtime_error("checkpoint '" + path + "': truncated at " + name);
    for (auto& v : dst) v = detail::get_le<T>(p), p += sizeof(T);
  };
  const auto& jp = meta.at("parameters");
  const auto& params = out.model->parameters();
  if (jp.size() != params.size()) throw std::runtime_error("checkpoint parameter list does not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (jp[i].at(0) != params[i].name || jp[i].at(1) != params[i].size()) {
      throw std::runtime_error("checkpoint parameter " + jp[i].at(0).get<std::string>() + " does not match the model");
    }
    auto v = params[i].value;
    read_into(v.data(), params[i].name);
  }
  for (auto& [name, v] : out.model->buffers()) read_into(*v, name);
  if (p != end) throw std::runtime_error("checkpoint '" + path + "': trailing bytes");
  return out;
}

// ---------------------------------------------------------------------------
// sweeps

inline std::string attention_label(const ModelConfig& c) {
  if (c.family == BackboneFamily::msa_only && c.msa) {
    const auto& m = *c.msa;
    return "msa[d" + std::to_string(m.d_model) + ",h" + std::to_string(m.n_heads) + ",ff" + std::to_string(m.d_ff) + ",l" +
           std::to_string(m.n_layers) + "]";
  }
  return std::string(to_string(c.attention));
}

inline std::string config_slug(const ModelConfig& c) {
  std::string label = attention_label(c);
  for (auto& ch : label) {
    if (ch == '[' || ch == ']' || ch == ',') ch = '-';
  }
  while (!label.empty() && label.back() == '-') label.pop_back();
  std::string s = std::string(to_string(c.family)) + "_" + label + "_" + std::to_string(c.fraction);
  if (c.family != BackboneFamily::msa_only) s += "_L" + std::to_string(c.level);
  return s;
}

/// The comparison matrix: per CNN family a baseline plus SE/NL/CBAM at 50% and
/// 100%, then the stand-alone self-attention model. `level_override` > 0
/// replaces every family's default level (clamped to its maximum).
inline std::vector<ModelConfig> comparison_matrix(Task task, std::size_t level_override = 0, std::size_t head_width = 0,
                                               const MsaConfig& msa = {}) {
  std::vector<ModelConfig> out;
  for (auto f : {BackboneFamily::vgg, BackboneFamily::resnet, BackboneFamily::inception}) {
    ModelConfig base;
    base.family = f;
    base.task = task;
    base.head_width = head_width;
    base.level = level_override ? std::min(level_override, max_level(f)) : default_level(f);
    out.push_back(base);
    for (auto a : {AttentionKind::se, AttentionKind::nl, AttentionKind::cbam}) {
      for (int frac : {50, 100}) {
        auto c = base;
        c.attention = a;
        c.fraction = frac;
        out.push_back(c);
      }
    }
  }
  ModelConfig m;
  m.family = BackboneFamily::msa_only;
  m.attention = AttentionKind::msa;
  m.fraction = 100;
  m.level = 0;
  m.task = task;
  m.msa = msa;
  m.head_width = head_width;
  out.push_back(m);
  return out;
}

inline std::vector<ModelConfig> msa_grid_matrix(Task task, std::size_t head_width = 0) {
  std::vector<ModelConfig> out;
  for (const auto& g : msa_grid()) {
    ModelConfig m;
    m.family = BackboneFamily::msa_only;
    m.attention = AttentionKind::msa;
    m.fraction = 100;
    m.level = 0;
    m.task = task;
    m.msa = g;
    m.head_width = head_width;
    out.push_back(m);
  }
  return out;
}

struct SweepOptions {
  int seeds = 5;
  std::uint64_t base_seed = 0;
  std::size_t workers = 1;
  std::string history_dir;  // per-run JSON-lines histories when non-empty
};

struct SweepEntry {
  ModelConfig config;
  std::string invalid_reason;  // non-empty: config rejected, no runs
  std::vector<RunResult> runs;

  std::size_t aborted_count() const {
    return static_cast<std::size_t>(std::count_if(runs.begin(), runs.end(), [](const auto& r) { return r.aborted; }));
  }
};

struct SweepRow {
  std::string family, attention;
  int fraction = 0;
  std::size_t level = 0;
  std::size_t seed_count = 0;
  std::optional<double> metric_mean, metric_std, conv_time_mean;
  std::string aborted;
};

struct SweepReport {
  std::vector<SweepEntry> entries;

  bool any_aborted() const {
    return std::any_of(entries.begin(), entries.end(), [](const auto& e) { return e.aborted_count() > 0; });
  }

  /// Row statistics over the completed (non-aborted) runs of each entry.
  std::vector<SweepRow> rows() const {
    std::vector<SweepRow> out;
    for (const auto& e : entries) {
      SweepRow r;
      r.family = to_string(e.config.family);
      r.attention = attention_label(e.config);
      r.fraction = e.config.fraction;
      r.level = e.config.family == BackboneFamily::msa_only ? 0 : e.config.level;
      r.seed_count = e.runs.size();
      if (!e.invalid_reason.empty()) {
        r.aborted = "invalid";
        out.push_back(r);
        continue;
      }
      std::vector<double> finals, conv;
      for (const auto& run : e.runs) {
        if (run.aborted) continue;
        finals.push_back(run.final_metric);
        if (run.convergence) conv.push_back(*run.convergence);
      }
      if (!finals.empty()) {
        r.metric_mean = mean_of(finals);
        r.metric_std = sample_std(finals);
      }
      if (!conv.empty()) r.conv_time_mean = mean_of(conv);
      r.aborted = std::to_string(e.aborted_count());
      out.push_back(r);
    }
    return out;
  }
};

inline std::string fixed6(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  return s.find_first_of(",\"") == std::string::npos ? s : "\"" + s + "\"";
}

inline std::string report_csv(const SweepReport& report) {
  std::ostringstream os;
  os << "family,attention,fraction,level,seed_count,metric_mean,metric_std,conv_time_mean_s,aborted\n";
  for (const auto& r : report.rows()) {
    os << r.family << ',' << csv_field(r.attention) << ',' << r.fraction << ',' << r.level << ',' << r.seed_count << ','
       << fixed6(r.metric_mean) << ',' << fixed6(r.metric_std) << ',' << fixed6(r.conv_time_mean) << ',' << r.aborted << '\n';
  }
  return os.str();
}

/// One JSON object per epoch.
inline std::string history_jsonl(const RunResult& r) {
  std::ostringstream os;
  for (std::size_t i = 0; i < r.losses.size(); ++i) {
    nlohmann::json j{{"epoch", i}, {"loss", r.losses[i]}, {"metric", r.metrics[i]}, {"seconds", r.seconds[i]}};
    os << j.dump() << '\n';
  }
  return os.str();
}

/// Run summary: config, seed, initial/final metric, convergence, abort state.
inline nlohmann::json run_summary(const ModelConfig& cfg, const RunResult& r) {
  nlohmann::json j{{"config", model_config_to_json(cfg)},
                   {"seed", r.seed},
                   {"epochs_run", r.epochs_run()},
                   {"initial_metric", r.initial_metric},
                   {"final_metric", r.final_metric},
                   {"aborted", r.aborted}};
  j["convergence_s"] = r.convergence ? nlohmann::json(*r.convergence) : nlohmann::json(nullptr);
  if (r.aborted) j["abort_reason"] = r.abort_reason;
  return j;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

/// Worker cap from PHYSIOATTN_MAX_WORKERS (unset or invalid: no cap).
inline std::size_t worker_cap(std::size_t requested) {
  std::size_t n = std::max<std::size_t>(1, requested);
  if (const char* env = std::getenv("PHYSIOATTN_MAX_WORKERS")) {
    char* endp = nullptr;
    const long cap = std::strtol(env, &endp, 10);
    if (endp != env && cap >= 1) n = std::min(n, static_cast<std::size_t>(cap));
  }
  return n;
}

/// Trains every valid config with seeds base_seed + 0..seeds-1. Runs are keyed
/// by (config, seed), so results do not depend on worker scheduling.
template <class T>
SweepReport run_sweep(const std::vector<ModelConfig>& configs, const Dataset& train_ds, const Dataset& test_ds,
                      const TrainSpec& base_spec, const SweepOptions& opt) {
  if (opt.seeds < 1) throw std::invalid_argument("run_sweep: seeds must be >= 1");
  SweepReport report;
  struct Job {
    std::size_t entry;
    int k;
  };
  std::vector<Job> jobs;
  for (const auto& c : configs) {
    SweepEntry e;
    e.config = c;
    try {
      c.validate();
      check_task_data(c, train_ds, test_ds);
    } catch (const std::invalid_argument& ex) {
      e.invalid_reason = ex.what();
    }
    if (e.invalid_reason.empty()) {
      e.runs.resize(static_cast<std::size_t>(opt.seeds));
      for (int k = 0; k < opt.seeds; ++k) jobs.push_back({report.entries.size(), k});
    }
    report.entries.push_back(std::move(e));
  }

  auto run_job = [&](const Job& j) {
    auto& e = report.entries[j.entry];
    const std::uint64_t seed = opt.base_seed + static_cast<std::uint64_t>(j.k);
    RunResult r;
    try {
      auto spec = protocol_spec(e.config, base_spec);
      spec.seed = seed;
      auto model = build_model<T>(e.config, seed);
      r = train(*model, train_ds, test_ds, spec);
    } catch (const std::exception& ex) {
      r.seed = seed;
      r.aborted = true;
      r.abort_reason = ex.what();
    }
    e.runs[static_cast<std::size_t>(j.k)] = std::move(r);
  };

  const std::size_t workers = std::min(worker_cap(opt.workers), std::max<std::size_t>(1, jobs.size()));
  if (workers <= 1) {
    for (const auto& j : jobs) run_job(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) run_job(jobs[i]);
      });
    }
    for (auto& t : pool) t.join();
  }

  if (!opt.history_dir.empty()) {
    std::filesystem::create_directories(opt.history_dir);
    for (const auto& e : report.entries) {
      for (const auto& r : e.runs) {
        const std::string stem = opt.history_dir + "/" + config_slug(e.config) + "_seed" + std::to_string(r.seed);
        write_text(stem + ".jsonl", history_jsonl(r));
        write_text(stem + ".json", run_summary(e.config, r).dump(2) + "\n");
      }
    }
  }
  return report;
}

}  // namespace physioattn
