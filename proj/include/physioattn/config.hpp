#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "physioattn/backbones.hpp"
#include "physioattn/datapipe.hpp"
#include "physioattn/harness.hpp"

namespace physioattn {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Everything one CLI invocation needs, settable from a flat key=value file.
struct ExperimentConfig {
  ModelConfig model;
  std::size_t level = 0;  // 0 = family default
  MsaConfig msa;
  TrainSpec train;
  std::string optimizer = "auto";
  std::string precision = "f64";
  std::string dataset;  // PSD1 path; empty = generate from synthetic.*
  double test_fraction = 0.2;
  std::uint64_t split_seed = 0;
  SyntheticSpec synthetic;
  std::string output_dir = "out";
  int seeds = 5;
  std::size_t workers = 1;
  std::string matrix = "comparison";

  struct Key {
    std::string name;
    std::string help;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
  };

  static const std::vector<Key>& keys();

  static const Key& find_key(const std::string& name) {
    for (const auto& k : keys()) {
      if (k.name == name) return k;
    }
    throw ConfigError("unknown config key '" + name + "'");
  }

  void set(const std::string& key, const std::string& value) {
    const auto& k = find_key(key);
    try {
      k.set(*this, value);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("bad value '" + value + "' for " + key + ": " + e.what());
    }
  }

  std::string get(const std::string& key) const { return find_key(key).get(*this); }

  /// Applies `key=value` lines; blank lines and '#' comments are skipped.
  void apply_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
      };
      line = trim(line);
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  static ExperimentConfig parse(const std::string& text) {
    ExperimentConfig c;
    c.apply_text(text);
    return c;
  }

  std::string dump() const {
    std::string out;
    for (const auto& k : keys()) out += k.name + "=" + k.get(*this) + "\n";
    return out;
  }

  /// Model config with defaults resolved (family level, msa block).
  ModelConfig model_config() const {
    ModelConfig m = model;
    if (m.family == BackboneFamily::msa_only) {
      m.attention = AttentionKind::msa;
      m.fraction = 100;
      m.msa = msa;
      m.level = 0;
    } else {
      m.level = level ? level : default_level(m.family);
    }
    return m;
  }

  /// Train spec with the protocol loss/optimizer, or the explicit optimizer.
  TrainSpec train_spec(const ModelConfig& m) const {
    TrainSpec s = protocol_spec(m, train);
    if (optimizer != "auto") s.optimizer = parse_optimizer(optimizer);
    return s;
  }

  SyntheticSpec synthetic_spec() const {
    SyntheticSpec s = synthetic;
    s.task = model.task;
    return s;
  }
};

namespace detail {

inline std::size_t parse_size(const std::string& v) {
  std::size_t pos = 0;
  if (v.empty() || v[0] == '-') throw std::invalid_argument("expected a non-negative integer");
  const auto n = std::stoull(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("expected a non-negative integer");
  return static_cast<std::size_t>(n);
}

inline int parse_int(const std::string& v) {
  std::size_t pos = 0;
  const int n = std::stoi(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("expected an integer");
  return n;
}

inline double parse_double(const std::string& v) {
  std::size_t pos = 0;
  const double d = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("expected a number");
  return d;
}

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("expected true|false");
}

inline std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace detail

inline const std::vector<ExperimentConfig::Key>& ExperimentConfig::keys() {
  using detail::num;
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_int;
  using detail::parse_size;
  using C = ExperimentConfig;
  using S = std::string;
  static const std::vector<Key> table = {
      {"family", "backbone: vgg|resnet|inception|msa_only",
       [](C& c, const S& v) { c.model.family = parse_family(v); }, [](const C& c) { return S(to_string(c.model.family)); }},
      {"level", "backbone level (0 = family default: vgg 5, resnet 6, inception 4)",
       [](C& c, const S& v) { c.level = parse_size(v); }, [](const C& c) { return std::to_string(c.level); }},
      {"attention", "attention block: none|se|nl|cbam (msa for msa_only)",
       [](C& c, const S& v) { c.model.attention = parse_attention_kind(v); },
       [](const C& c) { return S(to_string(c.model.attention)); }},
      {"fraction", "attention fraction in percent: 0|50|100",
       [](C& c, const S& v) { c.model.fraction = parse_int(v); }, [](const C& c) { return std::to_string(c.model.fraction); }},
      {"task", "classification|regression",
       [](C& c, const S& v) { c.model.task = parse_task(v); }, [](const C& c) { return S(to_string(c.model.task)); }},
      {"head_width", "hidden width of the prediction head (0 = family default)",
       [](C& c, const S& v) { c.model.head_width = parse_size(v); },
       [](const C& c) { return std::to_string(c.model.head_width); }},
      {"se_reduction", "SE reduction ratio",
       [](C& c, const S& v) { c.model.attention_options.se_reduction = parse_size(v); },
       [](const C& c) { return std::to_string(c.model.attention_options.se_reduction); }},
      {"cbam_reduction", "CBAM channel reduction ratio",
       [](C& c, const S& v) { c.model.attention_options.cbam_reduction = parse_size(v); },
       [](const C& c) { return std::to_string(c.model.attention_options.cbam_reduction); }},
      {"cbam_kernel", "CBAM spatial kernel size",
       [](C& c, const S& v) { c.model.attention_options.cbam_spatial_kernel = parse_size(v); },
       [](const C& c) { return std::to_string(c.model.attention_options.cbam_spatial_kernel); }},
      {"nl_normalization", "non-local pairwise normalization: softmax|dot_product",
       [](C& c, const S& v) {
         if (v != "softmax" && v != "dot_product") throw std::invalid_argument("expected softmax|dot_product");
         c.model.attention_options.nl_normalization = v == "softmax" ? NlNormalization::softmax : NlNormalization::dot_product;
       },
       [](const C& c) {
         return S(c.model.attention_options.nl_normalization == NlNormalization::softmax ? "softmax" : "dot_product");
       }},
      {"nl_zero_init", "zero-initialize the non-local output projection",
       [](C& c, const S& v) { c.model.attention_options.nl_zero_init_output = parse_bool(v); },
       [](const C& c) { return S(c.model.attention_options.nl_zero_init_output ? "true" : "false"); }},
      {"msa.d_model", "self-attention model width",
       [](C& c, const S& v) { c.msa.d_model = parse_size(v); }, [](const C& c) { return std::to_string(c.msa.d_model); }},
      {"msa.heads", "self-attention heads",
       [](C& c, const S& v) { c.msa.n_heads = parse_size(v); }, [](const C& c) { return std::to_string(c.msa.n_heads); }},
      {"msa.d_ff", "self-attention feed-forward width",
       [](C& c, const S& v) { c.msa.d_ff = parse_size(v); }, [](const C& c) { return std::to_string(c.msa.d_ff); }},
      {"msa.layers", "self-attention encoder layers",
       [](C& c, const S& v) { c.msa.n_layers = parse_size(v); }, [](const C& c) { return std::to_string(c.msa.n_layers); }},
      {"positional_encoding", "add sinusoidal positions to self-attention tokens",
       [](C& c, const S& v) { c.model.positional_encoding = parse_bool(v); },
       [](const C& c) { return S(c.model.positional_encoding ? "true" : "false"); }},
      {"epochs", "training epochs",
       [](C& c, const S& v) { c.train.epochs = parse_int(v); }, [](const C& c) { return std::to_string(c.train.epochs); }},
      {"batch", "mini-batch size",
       [](C& c, const S& v) { c.train.batch = parse_size(v); }, [](const C& c) { return std::to_string(c.train.batch); }},
      {"lr0", "initial learning rate",
       [](C& c, const S& v) { c.train.schedule.lr0 = parse_double(v); }, [](const C& c) { return num(c.train.schedule.lr0); }},
      {"lr_decay", "learning-rate decay factor",
       [](C& c, const S& v) { c.train.schedule.decay = parse_double(v); },
       [](const C& c) { return num(c.train.schedule.decay); }},
      {"lr_decay_every", "epochs between learning-rate decays",
       [](C& c, const S& v) { c.train.schedule.every = parse_int(v); },
       [](const C& c) { return std::to_string(c.train.schedule.every); }},
      {"optimizer", "auto|adam|rmsprop (auto: rmsprop for inception classification, else adam)",
       [](C& c, const S& v) {
         if (v != "auto") parse_optimizer(v);
         c.optimizer = v;
       },
       [](const C& c) { return c.optimizer; }},
      {"seed", "base seed (model init and shuffling)",
       [](C& c, const S& v) { c.train.seed = parse_size(v); }, [](const C& c) { return std::to_string(c.train.seed); }},
      {"auroc_threshold", "AUROC convergence threshold",
       [](C& c, const S& v) { c.train.auroc_threshold = parse_double(v); },
       [](const C& c) { return num(c.train.auroc_threshold); }},
      {"mape_threshold", "MAPE convergence threshold (percent)",
       [](C& c, const S& v) { c.train.mape_threshold = parse_double(v); },
       [](const C& c) { return num(c.train.mape_threshold); }},
      {"clock", "convergence clock: work (MACs/1e9, reproducible) | wall",
       [](C& c, const S& v) { c.train.clock = parse_clock(v); }, [](const C& c) { return S(to_string(c.train.clock)); }},
      {"precision", "arithmetic precision: f32|f64",
       [](C& c, const S& v) {
         if (v != "f32" && v != "f64") throw std::invalid_argument("expected f32|f64");
         c.precision = v;
       },
       [](const C& c) { return c.precision; }},
      {"dataset", "PSD1 dataset path (empty: generate from synthetic.*)",
       [](C& c, const S& v) { c.dataset = v; }, [](const C& c) { return c.dataset; }},
      {"test_fraction", "fraction of cases held out for testing",
       [](C& c, const S& v) { c.test_fraction = parse_double(v); }, [](const C& c) { return num(c.test_fraction); }},
      {"split_seed", "seed of the case split",
       [](C& c, const S& v) { c.split_seed = parse_size(v); }, [](const C& c) { return std::to_string(c.split_seed); }},
      {"synthetic.cases", "synthetic cases",
       [](C& c, const S& v) { c.synthetic.n_cases = parse_size(v); },
       [](const C& c) { return std::to_string(c.synthetic.n_cases); }},
      {"synthetic.samples_per_case", "synthetic segments per case",
       [](C& c, const S& v) { c.synthetic.samples_per_case = parse_size(v); },
       [](const C& c) { return std::to_string(c.synthetic.samples_per_case); }},
      {"synthetic.difficulty", "synthetic difficulty in (0,1], 1 = cleanest",
       [](C& c, const S& v) { c.synthetic.difficulty = parse_double(v); },
       [](const C& c) { return num(c.synthetic.difficulty); }},
      {"synthetic.prevalence", "synthetic positive fraction",
       [](C& c, const S& v) { c.synthetic.prevalence = parse_double(v); },
       [](const C& c) { return num(c.synthetic.prevalence); }},
      {"synthetic.seed", "synthetic generator seed",
       [](C& c, const S& v) { c.synthetic.seed = parse_size(v); }, [](const C& c) { return std::to_string(c.synthetic.seed); }},
      {"synthetic.artifact_rate", "fraction of synthetic segments with an out-of-range glitch",
       [](C& c, const S& v) { c.synthetic.artifact_rate = parse_double(v); },
       [](const C& c) { return num(c.synthetic.artifact_rate); }},
      {"synthetic.bsa", "BSA formula for synthetic SVI: du_bois|mosteller",
       [](C& c, const S& v) { c.synthetic.bsa = parse_bsa_formula(v); },
       [](const C& c) { return S(c.synthetic.bsa == BsaFormula::du_bois ? "du_bois" : "mosteller"); }},
      {"output_dir", "directory for reports, histories and checkpoints",
       [](C& c, const S& v) { c.output_dir = v; }, [](const C& c) { return c.output_dir; }},
      {"seeds", "runs per sweep configuration",
       [](C& c, const S& v) { c.seeds = parse_int(v); }, [](const C& c) { return std::to_string(c.seeds); }},
      {"workers", "parallel sweep runs (capped by PHYSIOATTN_MAX_WORKERS)",
       [](C& c, const S& v) { c.workers = parse_size(v); }, [](const C& c) { return std::to_string(c.workers); }},
      {"matrix", "sweep matrix: comparison|msa-grid",
       [](C& c, const S& v) {
         if (v != "comparison" && v != "msa-grid") throw std::invalid_argument("expected comparison|msa-grid");
         c.matrix = v;
       },
       [](const C& c) { return c.matrix; }},
  };
  return table;
}

}  // namespace physioattn
