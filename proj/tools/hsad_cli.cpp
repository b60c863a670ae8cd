// hypersphere-ad: batch experiment runner.
//
// Exit codes: 0 success, 1 runtime failure (or gradcheck failure),
// 2 configuration error, 3 non-finite loss during training.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hsad/data.hpp"
#include "hsad/errors.hpp"
#include "hsad/eval.hpp"
#include "hsad/experiment.hpp"
#include "hsad/gradcheck.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hsad;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

fs::path output_root() {
  if (const char* env = std::getenv("HYPERSPHERE_AD_OUT"); env && *env) return env;
  return "runs";
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

// 64-bit FNV-1a, printed as 16 hex digits.
class ContentHash {
 public:
  void add(std::string_view bytes) {
    for (unsigned char c : bytes) {
      h_ ^= c;
      h_ *= 0x100000001b3ULL;
    }
  }
  void add_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    add(ss.str());
  }
  std::string hex() const {
    std::ostringstream ss;
    ss << std::hex << std::setw(16) << std::setfill('0') << h_;
    return ss.str();
  }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

// Flags shared by the training-style subcommands. Unset optionals leave the
// config-file (or built-in) value alone.
struct RunFlags {
  std::string config;
  std::string variant;
  std::string dataset;
  std::optional<int> normal_class;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> pretrain_epochs;
  std::string out;

  void add_to(CLI::App* cmd, bool with_variant) {
    cmd->add_option("--config", config, "JSON experiment config; its keys override the built-in defaults");
    if (with_variant) cmd->add_option("--variant", variant, "Variant tag, e.g. iae-lstm-kl-h (overrides config)");
    cmd->add_option("--dataset", dataset, "\"synthetic\" or a container from ingest-ts / ingest-images");
    cmd->add_option("--normal-class", normal_class, "Class treated as normal (overrides config)");
    cmd->add_option("--seed", seed, "Run seed (overrides config train.seed)");
    cmd->add_option("--epochs", epochs, "Training epochs (overrides config train.train_epochs)");
    cmd->add_option("--pretrain-epochs", pretrain_epochs, "Pretraining epochs (overrides config)");
    cmd->add_option("--out", out, "Output directory (default: $HYPERSPHERE_AD_OUT or ./runs, plus a run name)");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig cfg = desk_defaults();
    if (!config.empty()) cfg = ExperimentConfig::from_json(read_json_file(config), cfg);
    json overrides = json::object();
    if (!variant.empty()) overrides["variant"] = variant;
    if (!dataset.empty()) overrides["dataset"] = dataset;
    if (normal_class) overrides["normal_class"] = *normal_class;
    json train = json::object();
    if (seed) train["seed"] = *seed;
    if (epochs) train["train_epochs"] = *epochs;
    if (pretrain_epochs) train["pretrain_epochs"] = *pretrain_epochs;
    if (!train.empty()) overrides["train"] = train;
    return ExperimentConfig::from_json(overrides, cfg);
  }

  fs::path out_dir(const std::string& default_name) const {
    return out.empty() ? output_root() / default_name : fs::path(out);
  }
};

std::string run_name(const ExperimentConfig& cfg) {
  return ablation_name(cfg.variant) + "-c" + std::to_string(cfg.normal_class) + "-s" + std::to_string(cfg.train.seed);
}

std::string sanitize(std::string s) {
  for (char& c : s)
    if (c == '/') c = '_';
  return s;
}

std::vector<std::uint64_t> seed_list(std::uint64_t base, std::size_t count) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < count; ++i) seeds.push_back(base + i);
  return seeds;
}

// One training run written to `dir`: config.json, metrics.csv, checkpoint.bin
// (+ checkpoint.json), summary.json and, when tracked, auroc_curve.csv.
double train_one(const ExperimentConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  const json config_json = cfg.to_json();
  write_json_file(dir / "config.json", config_json);

  auto [train, test] = load_experiment_data(cfg);
  ContentHash hash;
  hash.add(config_json.dump());
  if (cfg.dataset != "synthetic") hash.add_file(cfg.dataset);

  std::cerr << "train " << run_name(cfg) << ": " << train.size() << " train / " << test.size() << " test samples\n";
  const std::size_t every = cfg.train.checkpoint_every;
  RunResult r = run_training(cfg, train, test, [&](const EpochMetrics& m, Model& model, const HypersphereState& hs) {
    std::cerr << "  epoch " << m.epoch << " loss " << format_number(m.total) << " R " << format_number(m.radius);
    if (m.val_auroc) std::cerr << " auroc " << format_number(*m.val_auroc);
    std::cerr << "\n";
    if (every > 0 && m.epoch % every == 0) {
      save_checkpoint(model, &hs, dir / ("checkpoint_epoch" + std::to_string(m.epoch) + ".bin"));
    }
  });

  write_metrics_csv(dir / "metrics.csv", r.metrics);
  const bool has_svdd = traits(cfg.variant.variant).svdd;
  save_checkpoint(*r.model, has_svdd ? &r.hypersphere : nullptr, dir / "checkpoint.bin");

  std::optional<double> stability;
  if (cfg.track_val_auroc) {
    std::vector<double> curve;
    for (const auto& m : r.metrics) curve.push_back(*m.val_auroc);
    const EpochCurve ec = epoch_curve(curve);
    write_epoch_curve_csv(dir / "auroc_curve.csv", ec);
    stability = ec.stability;
  }

  json summary = {{"variant", ablation_name(cfg.variant)},
                  {"normal_class", cfg.normal_class},
                  {"seed", cfg.train.seed},
                  {"input_hash", hash.hex()},
                  {"test_auroc", r.test_auroc},
                  {"epochs", r.metrics.size()},
                  {"pretrain_skipped", r.pretrain.skipped},
                  {"radius", r.hypersphere.radius},
                  {"cpu_seconds", r.cpu_seconds},
                  {"files", {"config.json", "metrics.csv", "checkpoint.bin", "checkpoint.json", "summary.json"}}};
  summary["auroc_stability"] = stability ? json(*stability) : json(nullptr);
  write_json_file(dir / "summary.json", summary);
  std::cout << run_name(cfg) << " test_auroc " << format_number(r.test_auroc) << " -> " << dir.string() << "\n";
  return r.test_auroc;
}

int cmd_train(const RunFlags& flags, const std::vector<int>& classes) {
  ExperimentConfig cfg = flags.resolve();
  if (classes.empty()) {
    train_one(cfg, flags.out_dir(sanitize(run_name(cfg))));
    return 0;
  }
  // One run per normal class under a shared root.
  const fs::path root = flags.out_dir(sanitize(ablation_name(cfg.variant)) + "-s" + std::to_string(cfg.train.seed));
  std::vector<ClassAuroc> rows;
  for (int k : classes) {
    ExperimentConfig c = cfg;
    c.normal_class = k;
    rows.push_back({ablation_name(c.variant), k, c.train.seed, train_one(c, root / ("class" + std::to_string(k)))});
  }
  write_auroc_by_class_csv(root / "auroc_by_class.csv", rows);
  return 0;
}

int cmd_eval(const std::string& run_dir, const std::string& dataset, const std::string& out) {
  const fs::path dir(run_dir);
  ExperimentConfig cfg = ExperimentConfig::from_json(read_json_file(dir / "config.json"), desk_defaults());
  if (!dataset.empty()) cfg.dataset = dataset;
  auto [train, test] = load_experiment_data(cfg);
  LoadedCheckpoint ck = load_checkpoint(dir / "checkpoint.bin");
  const ScoredBatch sb = score(ck.model, ck.hypersphere ? &*ck.hypersphere : nullptr, test);
  const AurocReport rep = auroc(sb);

  const fs::path out_dir = out.empty() ? dir : fs::path(out);
  fs::create_directories(out_dir);
  std::ofstream csv(out_dir / "scores.csv");
  csv << "index,label,score\n";
  for (std::size_t i = 0; i < sb.scores.size(); ++i) {
    csv << i << "," << sb.labels[i] << "," << format_number(sb.scores[i]) << "\n";
  }
  std::cout << "auroc " << format_number(rep.auroc) << " positives " << rep.n_pos << " negatives " << rep.n_neg
            << " tied_pairs " << rep.ties << "\n";
  return 0;
}

int cmd_ablate(const RunFlags& flags, const std::string& suite, const std::string& boundary, std::size_t n_seeds) {
  ExperimentConfig cfg = flags.resolve();
  const Boundary b = boundary == "s" ? Boundary::kSoft : Boundary::kHard;
  const std::vector<VariantConfig> variants = ablation_suite(suite, b);
  const fs::path dir = flags.out_dir("ablate-" + suite);
  fs::create_directories(dir);
  write_json_file(dir / "config.json", cfg.to_json());
  const auto rows = run_ablation(cfg, variants, seed_list(cfg.train.seed, n_seeds));
  write_ablation_csv(dir / "ablation.csv", rows);
  std::cout << std::left << std::setw(36) << "variant" << "mean_auroc\n";
  for (const auto& row : rows) std::cout << std::setw(36) << row.name << format_number(row.mean_auroc) << "\n";
  return 0;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad number '" + item + "' in list '" + s + "'");
    }
  }
  if (v.empty()) throw ConfigError("empty list");
  return v;
}

int cmd_sweep(const RunFlags& flags, const std::string& rhos, const std::vector<std::string>& variant_tags,
              std::size_t n_seeds) {
  ExperimentConfig cfg = flags.resolve();
  std::vector<VariantConfig> variants;
  for (const auto& tag : variant_tags) {
    VariantConfig vc = cfg.variant;
    vc.variant = parse_variant_tag(tag).variant;
    vc.boundary = parse_variant_tag(tag).boundary;
    vc.validate();
    variants.push_back(vc);
  }
  if (variants.empty()) variants.push_back(cfg.variant);
  const fs::path dir = flags.out_dir("sweep");
  fs::create_directories(dir);
  write_json_file(dir / "config.json", cfg.to_json());
  const auto rows = contamination_sweep(cfg, variants, parse_double_list(rhos), seed_list(cfg.train.seed, n_seeds));
  write_sweep_csv(dir / "sweep.csv", rows);
  write_sweep_dat(dir / "sweep.dat", rows);
  for (const auto& row : rows) {
    std::cout << row.variant << " rho " << format_number(row.rho) << " mean_auroc " << format_number(row.mean_auroc)
              << "\n";
  }
  return 0;
}

int cmd_gradcheck(const std::string& module, std::uint64_t seed) {
  const auto results = run_gradcheck_suite(module, seed);
  bool ok = true;
  for (const auto& w : worst_per_name(results)) {
    std::cout << std::left << std::setw(28) << w.name << " " << std::setw(12) << format_number(w.max_rel_error)
              << (w.passed ? " ok" : " FAIL") << "\n";
    ok = ok && w.passed;
  }
  std::cout << (ok ? "all gradients match" : "gradient mismatch") << " (" << results.size() << " checks)\n";
  return ok ? 0 : kExitFailure;
}

int cmd_ingest_ts(const std::string& csv, const std::string& out, double train_fraction) {
  const TimeSeriesTable raw = read_series_csv(csv);
  SeriesProtocol protocol;
  protocol.train_fraction = train_fraction;
  const SeriesSplit split = series_protocol(raw, protocol);
  fs::create_directories(fs::path(out).parent_path().empty() ? fs::path(".") : fs::path(out).parent_path());
  save_split(out, split.train, split.test);
  std::cout << "rows " << raw.rows.size() << " smoothed " << split.smoothed_rows << " windows " << split.windows
            << " train " << split.train.size() << " test " << split.test.size() << " anomalous_test "
            << split.test.count(1) << "\n";
  return 0;
}

int cmd_ingest_images(const std::string& index, const std::string& out, std::size_t channels, std::size_t size) {
  const MultiClassData data = read_image_index(index, channels, size);
  fs::create_directories(fs::path(out).parent_path().empty() ? fs::path(".") : fs::path(out).parent_path());
  save_multiclass(out, data);
  std::set<int> classes(data.train_classes.begin(), data.train_classes.end());
  classes.insert(data.test_classes.begin(), data.test_classes.end());
  std::cout << "train " << data.train_classes.size() << " test " << data.test_classes.size() << " classes "
            << classes.size() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hypersphere anomaly detection experiments (IAE-LSTM-KL and ablations)"};
  app.require_subcommand(1);

  RunFlags train_flags;
  std::vector<int> classes;
  auto* train = app.add_subcommand("train", "Pretrain, initialise the center, train and score one run");
  train_flags.add_to(train, true);
  train->add_option("--classes", classes, "Train once per listed normal class; writes auroc_by_class.csv")
      ->delimiter(',');

  std::string eval_run, eval_dataset, eval_out;
  auto* eval = app.add_subcommand("eval", "Score the test split with a trained run's checkpoint");
  eval->add_option("--run", eval_run, "Run directory written by train")->required();
  eval->add_option("--dataset", eval_dataset, "Override the run's dataset");
  eval->add_option("--out", eval_out, "Where to write scores.csv (default: the run directory)");

  RunFlags ablate_flags;
  std::string suite = "gates", boundary = "h";
  std::size_t ablate_seeds = 1;
  auto* ablate = app.add_subcommand("ablate", "Run a variant matrix and write ablation.csv");
  ablate_flags.add_to(ablate, false);
  ablate->add_option("--suite", suite, "modules (12 variants) or gates (4 variants)")
      ->check(CLI::IsMember({"modules", "gates"}));
  ablate->add_option("--boundary", boundary, "Boundary of the gates suite: h or s")->check(CLI::IsMember({"h", "s"}));
  ablate->add_option("--seeds", ablate_seeds, "Seeds per variant (seed, seed+1, ...)")->check(CLI::PositiveNumber);

  RunFlags sweep_flags;
  std::string rhos = "0,0.05,0.1,0.15,0.2,0.25";
  std::vector<std::string> sweep_variants;
  std::size_t sweep_seeds = 3;
  auto* sweep = app.add_subcommand("sweep", "Contamination sweep on the synthetic task; writes sweep.csv and sweep.dat");
  sweep_flags.add_to(sweep, false);
  sweep->add_option("--rho", rhos, "Comma-separated contamination ratios in [0, 0.25]");
  sweep->add_option("--variants", sweep_variants, "Comma-separated variant tags (default: the config variant)")
      ->delimiter(',');
  sweep->add_option("--seeds", sweep_seeds, "Seeds per ratio (seed, seed+1, ...)")->check(CLI::PositiveNumber);

  std::string gc_module = "all";
  std::uint64_t gc_seed = 0;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks; nonzero exit on any failure");
  gradcheck->add_option("--module", gc_module, "all, tensor, layers, lstm or losses")
      ->check(CLI::IsMember(gradcheck_modules()));
  gradcheck->add_option("--seed", gc_seed, "Seed for the random graphs and inputs");

  std::string ts_csv, ts_out;
  double train_fraction = SeriesProtocol{}.train_fraction;
  auto* ingest_ts = app.add_subcommand("ingest-ts", "Smooth, window and split a 26-channel series CSV");
  ingest_ts->add_option("--csv", ts_csv, "CSV with timestamp, 26 channels and a 0/1 flag per row")->required();
  ingest_ts->add_option("--out", ts_out, "Output dataset container")->required();
  ingest_ts->add_option("--train-fraction", train_fraction, "Chronological share of windows used for training")
      ->check(CLI::Range(0.0, 1.0));

  std::string img_index, img_out;
  std::size_t img_channels = 3, img_size = 0;
  auto* ingest_images = app.add_subcommand("ingest-images", "Load a PNG index (path,label,split) into a container");
  ingest_images->add_option("--index", img_index, "CSV index with header path,label,split")->required();
  ingest_images->add_option("--out", img_out, "Output dataset container")->required();
  ingest_images->add_option("--channels", img_channels, "1 (gray) or 3 (RGB)")->check(CLI::IsMember({1, 3}));
  ingest_images->add_option("--size", img_size, "Resize to size x size (0 keeps the native size)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) return cmd_train(train_flags, classes);
    if (*eval) return cmd_eval(eval_run, eval_dataset, eval_out);
    if (*ablate) return cmd_ablate(ablate_flags, suite, boundary, ablate_seeds);
    if (*sweep) return cmd_sweep(sweep_flags, rhos, sweep_variants, sweep_seeds);
    if (*gradcheck) return cmd_gradcheck(gc_module, gc_seed);
    if (*ingest_ts) return cmd_ingest_ts(ts_csv, ts_out, train_fraction);
    if (*ingest_images) return cmd_ingest_images(img_index, img_out, img_channels, img_size);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
