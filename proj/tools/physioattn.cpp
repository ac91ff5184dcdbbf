// physioattn command-line driver.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "physioattn/backbones.hpp"
#include "physioattn/config.hpp"
#include "physioattn/datapipe.hpp"
#include "physioattn/harness.hpp"

namespace fs = std::filesystem;
using namespace physioattn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitAborted = 3;

struct Overrides {
  std::string config_file;
  std::vector<std::pair<std::string, std::string>> values;  // in command-line order

  ExperimentConfig resolve() const {
    ExperimentConfig c;
    if (!config_file.empty()) {
      std::ifstream f(config_file);
      if (!f) throw ConfigError("cannot read config file '" + config_file + "'");
      std::stringstream ss;
      ss << f.rdbuf();
      c.apply_text(ss.str());
    }
    for (const auto& [k, v] : values) c.set(k, v);
    return c;
  }
};

std::string flag_for(const std::string& key) {
  std::string s = key;
  for (auto& ch : s) {
    if (ch == '.' || ch == '_') ch = '-';
  }
  return "--" + s;
}

/// Registers one option per config key, with its default shown in --help.
void add_config_options(CLI::App* sub, Overrides& ov, const std::vector<std::string>& keys,
                        const std::map<std::string, std::string>& aliases = {}) {
  sub->add_option("--config", ov.config_file, "key=value config file (command-line flags override it)");
  const ExperimentConfig defaults;
  for (const auto& key : keys) {
    const auto& k = ExperimentConfig::find_key(key);
    std::string names = flag_for(key);
    if (auto it = aliases.find(key); it != aliases.end()) names += "," + it->second;
    sub->add_option_function<std::string>(
           names, [&ov, key](const std::string& v) { ov.values.emplace_back(key, v); }, k.help + " [" + key + "]")
        ->default_str(k.get(defaults));
  }
}

const std::vector<std::string> kModelKeys = {"family",       "level",          "attention",   "fraction",
                                             "task",         "head_width",     "se_reduction", "cbam_reduction",
                                             "cbam_kernel",  "nl_normalization", "nl_zero_init", "msa.d_model",
                                             "msa.heads",    "msa.d_ff",       "msa.layers",  "positional_encoding"};
const std::vector<std::string> kTrainKeys = {"epochs", "batch",           "lr0",             "lr_decay", "lr_decay_every",
                                             "optimizer", "seed",         "auroc_threshold", "mape_threshold", "clock",
                                             "precision"};
const std::vector<std::string> kDataKeys = {"dataset",
                                            "test_fraction",
                                            "split_seed",
                                            "synthetic.cases",
                                            "synthetic.samples_per_case",
                                            "synthetic.difficulty",
                                            "synthetic.prevalence",
                                            "synthetic.seed",
                                            "synthetic.artifact_rate",
                                            "synthetic.bsa"};

std::vector<std::string> concat_keys(std::initializer_list<std::vector<std::string>> parts) {
  std::vector<std::string> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory '" + dir + "'");
}

std::pair<Dataset, Dataset> load_split(const ExperimentConfig& c) {
  Dataset ds = c.dataset.empty() ? generate_synthetic(c.synthetic_spec()).first : read_dataset(c.dataset);
  if (ds.task != c.model.task) {
    throw ConfigError("dataset task " + std::string(to_string(ds.task)) + " does not match configured task " +
                      std::string(to_string(c.model.task)));
  }
  return split_by_case(ds, c.test_fraction, c.split_seed);
}

// ---------------------------------------------------------------------------

int cmd_gen_synthetic(const Overrides& ov, const std::string& out) {
  const auto c = ov.resolve();
  auto [ds, manifest] = generate_synthetic(c.synthetic_spec());
  write_dataset(out, ds);
  write_manifest(manifest_path(out), manifest);
  std::cout << "wrote " << ds.size() << " records (" << c.synthetic.n_cases << " cases) to " << out << "\n";
  if (ds.task == Task::classification) std::cout << "realized prevalence " << manifest["realized_prevalence"] << "\n";
  return kExitOk;
}

int cmd_preprocess(const std::string& in, const std::string& out) {
  const auto raw = read_dataset(in);
  auto [kept, manifest] = preprocess(raw);
  manifest["source"] = in;
  write_dataset(out, kept);
  write_manifest(manifest_path(out), manifest);
  std::cout << "kept " << kept.size() << " of " << raw.size() << " segments (dropped ecg " << manifest["filter.dropped_ecg"]
            << ", ppg " << manifest["filter.dropped_ppg"] << ")\n";
  return kExitOk;
}

std::string threshold_str(const LevelTable& t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", t.threshold());
  return buf;
}

int cmd_count_params(const Overrides& ov) {
  const auto c = ov.resolve();
  const auto fam = c.model.family;
  if (fam == BackboneFamily::msa_only) {
    const auto m = c.model_config();
    m.validate();
    std::cout << "family,attention,total_params\n"
              << "msa_only," << csv_field(attention_label(m)) << ',' << planned_param_count(m) << "\n";
    return kExitOk;
  }
  const auto& opt = c.model.attention_options;
  if (c.model.attention == AttentionKind::msa) throw ConfigError("attention=msa requires family msa_only");
  if ((c.model.attention == AttentionKind::none) != (c.model.fraction == 0)) {
    throw ConfigError("attention=none goes with fraction 0 and vice versa");
  }
  attention_placement(1, c.model.fraction);  // rejects unsupported fractions
  std::vector<std::pair<std::string, LevelTable>> cols = {{"reference", reference_level_table(fam)},
                                                          {"computed", model_level_table(fam, AttentionKind::none, 0, opt, c.model.head_width)}};
  if (c.model.attention != AttentionKind::none) {
    cols.emplace_back("computed_" + std::string(to_string(c.model.attention)) + std::to_string(c.model.fraction),
                      model_level_table(fam, c.model.attention, c.model.fraction, opt, c.model.head_width));
  }
  std::cout << "family=" << to_string(fam) << " attention=" << to_string(c.model.attention) << " fraction=" << c.model.fraction
            << "\n";
  std::cout << "level";
  for (const auto& [name, t] : cols) std::cout << ',' << name;
  std::cout << "\n";
  for (std::size_t i = 0; i < cols[0].second.counts.size(); ++i) {
    std::cout << cols[0].second.counts[i].first;
    for (const auto& [name, t] : cols) std::cout << ',' << t.counts[i].second;
    std::cout << "\n";
  }
  std::cout << "default";
  for (const auto& [name, t] : cols) std::cout << ',' << t.default_count;
  std::cout << "\nthreshold";
  for (const auto& [name, t] : cols) std::cout << ',' << threshold_str(t);
  std::cout << "\nselected";
  for (const auto& [name, t] : cols) std::cout << ',' << select_level(t);
  std::cout << "\ntrend";
  for (const auto& [name, t] : cols) std::cout << ',' << to_string(level_trend(t));
  std::cout << "\n";
  return kExitOk;
}

int cmd_select_level(const Overrides& ov, const std::string& source, const std::vector<std::uint64_t>& counts,
                     std::uint64_t default_count) {
  const auto c = ov.resolve();
  LevelTable t;
  if (!counts.empty()) {
    if (default_count == 0) throw ConfigError("--counts needs --default");
    t.family = c.model.family;
    for (std::size_t i = 0; i < counts.size(); ++i) t.counts.emplace_back(i + 1, counts[i]);
    t.default_count = default_count;
  } else if (source == "reference") {
    t = reference_level_table(c.model.family);
  } else if (source == "computed") {
    t = model_level_table(c.model.family, c.model.attention, c.model.fraction, c.model.attention_options, c.model.head_width);
  } else {
    throw ConfigError("--source must be reference|computed");
  }
  std::cout << "threshold=" << threshold_str(t) << "\nselected_level=" << select_level(t)
            << "\ntrend=" << to_string(level_trend(t)) << "\n";
  return kExitOk;
}

std::string wall_line(const ModelConfig& cfg, const RunResult& r) {
  std::ostringstream os;
  os << config_slug(cfg) << " seed=" << r.seed;
  for (std::size_t i = 0; i < r.wall_seconds.size(); ++i) os << (i ? ',' : ' ') << r.wall_seconds[i];
  return os.str();
}

template <class T>
int run_train(const ExperimentConfig& c) {
  const auto cfg = c.model_config();
  cfg.validate();
  const auto spec = c.train_spec(cfg);
  check_spec(spec, cfg);
  auto [train_ds, test_ds] = load_split(c);
  check_task_data(cfg, train_ds, test_ds);
  ensure_dir(c.output_dir);
  auto model = build_model<T>(cfg, spec.seed);
  std::cout << "model " << config_slug(cfg) << ": " << count_params(*model) << " trainable parameters; train " << train_ds.size()
            << " / test " << test_ds.size() << " samples\n";
  const auto r = train(*model, train_ds, test_ds, spec);
  write_text(c.output_dir + "/history.jsonl", history_jsonl(r));
  write_text(c.output_dir + "/result.json", run_summary(cfg, r).dump(2) + "\n");
  write_text(c.output_dir + "/config.txt", c.dump());
  write_text(c.output_dir + "/timing.log", wall_line(cfg, r) + "\n");
  save_checkpoint(c.output_dir + "/model.psw", *model, r.normalizer);
  const char* metric = cfg.task == Task::classification ? "auroc" : "mape";
  std::cout << "initial " << metric << " " << r.initial_metric << "\n";
  for (std::size_t i = 0; i < r.epochs_run(); ++i) {
    std::cout << "epoch " << i << " loss " << r.losses[i] << " " << metric << " " << r.metrics[i] << "\n";
  }
  if (r.aborted) {
    std::cerr << "run aborted: " << r.abort_reason << "\n";
    return kExitAborted;
  }
  return kExitOk;
}

template <class T>
int run_evaluate(const ExperimentConfig& c, const std::string& checkpoint, bool whole_dataset) {
  auto loaded = load_checkpoint<T>(checkpoint);
  const auto& cfg = loaded.model->config();
  Dataset ds;
  if (!c.dataset.empty() && whole_dataset) {
    ds = read_dataset(c.dataset);
  } else {
    auto cc = c;
    cc.model.task = cfg.task;
    ds = load_split(cc).second;
  }
  if (ds.task != cfg.task) throw ConfigError("dataset task does not match the checkpoint's model task");
  const auto ev = evaluate(*loaded.model, ds, loaded.normalizer);
  nlohmann::json j{{"model", config_slug(cfg)},
                   {"samples", ds.size()},
                   {"metric", cfg.task == Task::classification ? "auroc" : "mape"},
                   {"value", ev.metric}};
  std::cout << j.dump() << "\n";
  return kExitOk;
}

template <class T>
int run_sweep_cmd(const ExperimentConfig& c, bool level_given) {
  const auto task = c.model.task;
  const auto configs = c.matrix == "comparison" ? comparison_matrix(task, level_given ? c.level : 0, c.model.head_width, c.msa)
                                             : msa_grid_matrix(task, c.model.head_width);
  auto [train_ds, test_ds] = load_split(c);
  ensure_dir(c.output_dir);
  SweepOptions opt;
  opt.seeds = c.seeds;
  opt.base_seed = c.train.seed;
  opt.workers = c.workers;
  opt.history_dir = c.output_dir + "/histories";
  TrainSpec base = c.train;
  if (c.optimizer != "auto") throw ConfigError("sweep assigns optimizers per model; optimizer must be auto");
  const auto report = run_sweep<T>(configs, train_ds, test_ds, base, opt);
  const auto csv = report_csv(report);
  write_text(c.output_dir + "/report.csv", csv);
  write_text(c.output_dir + "/config.txt", c.dump());
  std::string timing;
  for (const auto& e : report.entries) {
    for (const auto& r : e.runs) timing += wall_line(e.config, r) + "\n";
  }
  write_text(c.output_dir + "/timing.log", timing);
  std::cout << csv;
  for (const auto& e : report.entries) {
    for (const auto& r : e.runs) {
      if (r.aborted) std::cerr << "aborted: " << config_slug(e.config) << " seed " << r.seed << ": " << r.abort_reason << "\n";
    }
  }
  return report.any_aborted() ? kExitAborted : kExitOk;
}

template <class F>
int with_precision(const std::string& precision, F&& f) {
  if (precision == "f32") return f(float{});
  return f(double{});
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"physioattn: 1D CNN + attention benchmark for ECG/PPG waveforms"};
  app.require_subcommand(1);

  Overrides gen_ov, count_ov, select_ov, train_ov, eval_ov, sweep_ov;
  std::string gen_out, pre_in, pre_out, select_source = "reference", eval_ckpt;
  std::vector<std::uint64_t> select_counts;
  std::uint64_t select_default = 0;
  bool eval_whole = false;

  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic PSD1 dataset and its manifest");
  add_config_options(gen, gen_ov, concat_keys({{"task"}, {"synthetic.cases", "synthetic.samples_per_case", "synthetic.difficulty",
                                                           "synthetic.prevalence", "synthetic.seed", "synthetic.artifact_rate",
                                                           "synthetic.bsa"}}),
                     {{"synthetic.cases", "--cases"},
                      {"synthetic.samples_per_case", "--samples-per-case"},
                      {"synthetic.difficulty", "--difficulty"},
                      {"synthetic.prevalence", "--prevalence"},
                      {"synthetic.seed", "--seed"},
                      {"synthetic.artifact_rate", "--artifact-rate"},
                      {"synthetic.bsa", "--bsa"}});
  gen->add_option("--out,-o", gen_out, "output dataset path")->required();

  auto* pre = app.add_subcommand("preprocess", "drop segments failing the ECG/PPG range filter");
  pre->add_option("--in,-i", pre_in, "input dataset")->required();
  pre->add_option("--out,-o", pre_out, "filtered dataset")->required();

  auto* count = app.add_subcommand("count-params", "per-level trainable parameter table with threshold and selection");
  add_config_options(count, count_ov, {"family", "attention", "fraction", "head_width", "se_reduction", "cbam_reduction",
                                       "cbam_kernel", "msa.d_model", "msa.heads", "msa.d_ff", "msa.layers"});

  auto* select = app.add_subcommand("select-level", "pick the smallest level reaching default/5 parameters");
  add_config_options(select, select_ov, {"family", "attention", "fraction", "head_width", "se_reduction", "cbam_reduction",
                                         "cbam_kernel"});
  select->add_option("--source", select_source, "count source: reference|computed")->capture_default_str();
  select->add_option("--counts", select_counts, "explicit per-level counts (level 1 first)")->delimiter(',');
  select->add_option("--default", select_default, "default-model count for --counts");

  auto* trn = app.add_subcommand("train", "train one model; writes history, result, checkpoint");
  add_config_options(trn, train_ov, concat_keys({kModelKeys, kTrainKeys, kDataKeys, {"output_dir"}}),
                     {{"output_dir", "--out,-o"}});

  auto* evl = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset");
  add_config_options(evl, eval_ov, concat_keys({kDataKeys, {"precision"}}));
  evl->add_option("--checkpoint", eval_ckpt, "checkpoint written by train")->required();
  evl->add_flag("--all", eval_whole, "evaluate on the whole --dataset instead of its test split");

  auto* swp = app.add_subcommand("sweep", "multi-seed sweep over a model matrix; writes report.csv");
  add_config_options(swp, sweep_ov,
                     concat_keys({{"task", "level", "head_width", "msa.d_model", "msa.heads", "msa.d_ff", "msa.layers"},
                                  kTrainKeys, kDataKeys, {"output_dir", "seeds", "workers", "matrix"}}),
                     {{"output_dir", "--out,-o"}});

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_synthetic(gen_ov, gen_out);
    if (pre->parsed()) return cmd_preprocess(pre_in, pre_out);
    if (count->parsed()) return cmd_count_params(count_ov);
    if (select->parsed()) return cmd_select_level(select_ov, select_source, select_counts, select_default);
    if (trn->parsed()) {
      const auto c = train_ov.resolve();
      return with_precision(c.precision, [&](auto t) { return run_train<decltype(t)>(c); });
    }
    if (evl->parsed()) {
      const auto c = eval_ov.resolve();
      return with_precision(c.precision, [&](auto t) { return run_evaluate<decltype(t)>(c, eval_ckpt, eval_whole); });
    }
    if (swp->parsed()) {
      const auto c = sweep_ov.resolve();
      bool level_given = c.level != 0;
      return with_precision(c.precision, [&](auto t) { return run_sweep_cmd<decltype(t)>(c, level_given); });
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DecodeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
