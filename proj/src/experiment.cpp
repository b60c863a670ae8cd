#include "hsad/experiment.hpp"

#include <ctime>
#include <fstream>
#include <numeric>

namespace hsad {

namespace {

nlohmann::json synthetic_to_json(const SyntheticTask& t) {
  return {{"size", t.blobs.size},
          {"channels", t.blobs.channels},
          {"latent_dim", t.blobs.latent_dim},
          {"separation", t.blobs.separation},
          {"background", t.blobs.background},
          {"amp_base", t.blobs.amp_base},
          {"amp_scale", t.blobs.amp_scale},
          {"blob_sigma", t.blobs.blob_sigma},
          {"noise", t.blobs.noise},
          {"n_train", t.n_train},
          {"n_test_normal", t.n_test_normal},
          {"n_test_anomalous", t.n_test_anomalous},
          {"n_pool", t.n_pool}};
}

SyntheticTask synthetic_from_json(const nlohmann::json& j, SyntheticTask t) {
  if (!j.is_object()) throw ConfigError("'synthetic' must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "size") t.blobs.size = v.get<std::size_t>();
    else if (key == "channels") t.blobs.channels = v.get<std::size_t>();
    else if (key == "latent_dim") t.blobs.latent_dim = v.get<std::size_t>();
    else if (key == "separation") t.blobs.separation = v.get<double>();
    else if (key == "background") t.blobs.background = v.get<double>();
    else if (key == "amp_base") t.blobs.amp_base = v.get<double>();
    else if (key == "amp_scale") t.blobs.amp_scale = v.get<double>();
    else if (key == "blob_sigma") t.blobs.blob_sigma = v.get<double>();
    else if (key == "noise") t.blobs.noise = v.get<double>();
    else if (key == "n_train") t.n_train = v.get<std::size_t>();
    else if (key == "n_test_normal") t.n_test_normal = v.get<std::size_t>();
    else if (key == "n_test_anomalous") t.n_test_anomalous = v.get<std::size_t>();
    else if (key == "n_pool") t.n_pool = v.get<std::size_t>();
    else throw ConfigError("unknown synthetic key '" + key + "'");
  }
  t.blobs.validate();
  return t;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["dataset"] = dataset;
  j["synthetic"] = synthetic_to_json(synthetic);
  j["normal_class"] = normal_class;
  j["family"] = to_string(family);
  j["base_width"] = base_width;
  j["image_size"] = image_size;
  const nlohmann::json v = variant.to_json();
  for (const auto& [key, value] : v.items()) j[key] = value;
  j["train"] = train.to_json();
  j["dtype"] = to_string(dtype);
  j["track_val_auroc"] = track_val_auroc;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j, const ExperimentConfig& base) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c = base;
  try {
    nlohmann::json vj = c.variant.to_json();
    for (const auto& [key, value] : j.items()) {
      if (key == "dataset") c.dataset = value.get<std::string>();
      else if (key == "synthetic") c.synthetic = synthetic_from_json(value, c.synthetic);
      else if (key == "normal_class") c.normal_class = value.get<int>();
      else if (key == "family") c.family = family_from_string(value.get<std::string>());
      else if (key == "base_width") c.base_width = value.get<std::size_t>();
      else if (key == "image_size") c.image_size = value.get<std::size_t>();
      else if (key == "variant" || key == "gate_ablation" || key == "kl_mode" || key == "bias_free") vj[key] = value;
      else if (key == "train") c.train = TrainConfig::from_json(value, c.train);
      else if (key == "dtype") c.dtype = dtype_from_string(value.get<std::string>());
      else if (key == "track_val_auroc") c.track_val_auroc = value.get<bool>();
      else throw ConfigError("unknown config key '" + key + "'");
    }
    c.variant = VariantConfig::from_json(vj);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  c.train.validate(c.variant.kl_mode);
  return c;
}

ExperimentConfig desk_defaults() {
  ExperimentConfig c;
  c.synthetic.blobs.size = 16;
  c.synthetic.blobs.latent_dim = 4;
  c.synthetic.blobs.separation = 4.0;
  c.synthetic.blobs.noise = 0.4;  // pixel-distance baseline AUROC near 0.8
  c.base_width = 8;
  c.train.lr = 3e-4;
  c.train.weights.lambda1 = 0.1;
  c.train.weights.lambda2 = 0.1;
  return c;
}

ArchitectureSpec architecture_for(const ExperimentConfig& cfg, const Shape& sample_shape) {
  if (sample_shape.size() != 3) throw ShapeError("sample shape must be [c, h, w]");
  if (cfg.family == Family::kLargeImage) {
    if (sample_shape[1] != cfg.image_size || sample_shape[2] != cfg.image_size) {
      throw ConfigError("large_image expects " + std::to_string(cfg.image_size) + "x" +
                        std::to_string(cfg.image_size) + " samples (resize at ingestion)");
    }
    return large_image_spec(sample_shape[0], cfg.image_size);
  }
  return small_image_spec(sample_shape[0], sample_shape[1], sample_shape[2], cfg.base_width);
}

std::pair<LabeledDataset, LabeledDataset> load_experiment_data(const ExperimentConfig& cfg) {
  if (cfg.dataset == "synthetic") {
    SyntheticTask task = cfg.synthetic;
    task.normal_class = cfg.normal_class;
    task.n_pool = 0;
    TaskData d = make_synthetic_task(task, cfg.train.seed);
    return {std::move(d.train), std::move(d.test)};
  }
  if (!std::filesystem::exists(cfg.dataset)) throw ConfigError("dataset '" + cfg.dataset + "' does not exist");
  if (is_multiclass_container(cfg.dataset)) return one_class_split(load_multiclass(cfg.dataset), cfg.normal_class);
  return load_split(cfg.dataset);
}

RunResult run_training(const ExperimentConfig& cfg, const LabeledDataset& train, const LabeledDataset& test,
                       const EpochCallback& on_epoch) {
  const std::clock_t start = std::clock();
  cfg.variant.validate();
  cfg.train.validate(cfg.variant.kl_mode);
  const VariantTraits t = traits(cfg.variant.variant);

  Rng root(cfg.train.seed);
  Rng init_rng = root.fork(1), pretrain_rng = root.fork(2), train_rng = root.fork(3);
  RunResult r;
  r.model = Model::build(architecture_for(cfg, train.sample_shape()), cfg.variant, init_rng, cfg.dtype);
  Model& model = *r.model;
  r.pretrain = pretrain(model, train, cfg.train, pretrain_rng);

  HypersphereState& hs = r.hypersphere;
  hs.nu = cfg.train.nu;
  hs.radius = 0.0;
  if (t.svdd) hs.center = init_center(model, train);

  OptimizerState opt = OptimizerState::from(cfg.train);
  for (std::size_t epoch = 0; epoch < cfg.train.train_epochs; ++epoch) {
    EpochMetrics m = train_epoch(model, train, cfg.train, hs, opt, train_rng, epoch);
    m.epoch = epoch + 1;
    if (cfg.track_val_auroc) m.val_auroc = auroc(score(model, &hs, test)).auroc;
    r.metrics.push_back(m);
    if (on_epoch) on_epoch(m, model, hs);
  }
  r.test_auroc = auroc(score(model, &hs, test)).auroc;
  r.cpu_seconds = static_cast<double>(std::clock() - start) / CLOCKS_PER_SEC;
  return r;
}

// ---------------------------------------------------------------------------
// Grid search

GridResult grid_search(const GridSpace& space, const TrainConfig& base,
                       const std::function<double(const TrainConfig&)>& evaluate) {
  if (space.lambda1.empty() || space.lambda2.empty() || space.lr.empty()) throw ConfigError("empty search grid");
  auto sorted = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
  };
  GridResult out;
  std::optional<std::size_t> best;
  for (double l1 : sorted(space.lambda1)) {
    for (double l2 : sorted(space.lambda2)) {
      for (double lr : sorted(space.lr)) {
        TrainConfig c = base;
        c.weights.lambda1 = l1;
        c.weights.lambda2 = l2;
        c.lr = lr;
        out.cells.push_back({l1, l2, lr, evaluate(c)});
        // Strict comparison keeps the earliest (lexicographically smallest) cell on ties.
        if (!best || out.cells.back().val_auroc > out.cells[*best].val_auroc) {
          best = out.cells.size() - 1;
          out.best = c;
        }
      }
    }
  }
  return out;
}

GridResult grid_search(const GridSpace& space, const ExperimentConfig& base, const LabeledDataset& train,
                       const LabeledDataset& val) {
  return grid_search(space, base.train, [&](const TrainConfig& tc) {
    ExperimentConfig c = base;
    c.train = tc;
    c.track_val_auroc = false;
    return run_training(c, train, val).test_auroc;
  });
}

// ---------------------------------------------------------------------------
// Sweeps and ablations

std::vector<SweepRow> contamination_sweep(const ExperimentConfig& base, const std::vector<VariantConfig>& variants,
                                          const std::vector<double>& rhos, const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty() || rhos.empty() || variants.empty()) throw ConfigError("sweep needs variants, rhos and seeds");
  for (double rho : rhos) {
    if (!(rho >= 0.0 && rho <= 0.25)) throw ConfigError("contamination ratios must lie in [0, 0.25]");
  }
  if (base.dataset != "synthetic") throw ConfigError("the contamination sweep runs on the synthetic task");
  std::vector<SweepRow> rows;
  for (const auto& vc : variants) {
    for (double rho : rhos) {
      SweepRow row;
      row.variant = ablation_name(vc);
      row.rho = rho;
      for (std::uint64_t seed : seeds) {
        ExperimentConfig c = base;
        c.variant = vc;
        c.train.seed = seed;
        c.track_val_auroc = false;
        SyntheticTask task = c.synthetic;
        task.normal_class = c.normal_class;
        const TaskData d = make_synthetic_task(task, seed);
        const LabeledDataset train = contaminate(d.train, d.pool, {rho, seed});
        row.aurocs.push_back(run_training(c, train, d.test).test_auroc);
      }
      row.mean_auroc = mean_of(row.aurocs);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::vector<VariantConfig> ablation_suite(const std::string& suite, Boundary gate_boundary) {
  std::vector<VariantConfig> out;
  if (suite == "modules") {
    for (Variant v : {Variant::kDsvddKl, Variant::kDlsvdd, Variant::kDlsvddKl, Variant::kIaeKl, Variant::kIaeLstm,
                      Variant::kIaeLstmKl}) {
      for (Boundary b : {Boundary::kHard, Boundary::kSoft}) {
        VariantConfig vc;
        vc.variant = v;
        vc.boundary = b;
        out.push_back(vc);
      }
    }
  } else if (suite == "gates") {
    for (GateAblation g : {GateAblation::kNone, GateAblation::kNoInputGate, GateAblation::kNoOutputGate,
                           GateAblation::kNoBothGates}) {
      VariantConfig vc;
      vc.variant = Variant::kIaeLstmKl;
      vc.boundary = gate_boundary;
      vc.gate_ablation = g;
      out.push_back(vc);
    }
  } else {
    throw ConfigError("unknown ablation suite '" + suite + "' (expected modules or gates)");
  }
  return out;
}

std::string ablation_name(const VariantConfig& vc) {
  std::string name = variant_tag(vc.variant, vc.boundary);
  if (vc.gate_ablation != GateAblation::kNone) name += "/" + to_string(vc.gate_ablation);
  return name;
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& base, const std::vector<VariantConfig>& suite,
                                      const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  std::vector<AblationRow> rows;
  for (const auto& vc : suite) {
    AblationRow row;
    row.name = ablation_name(vc);
    row.variant = vc;
    for (std::uint64_t seed : seeds) {
      ExperimentConfig c = base;
      c.variant = vc;
      c.train.seed = seed;
      c.track_val_auroc = false;
      const auto [train, test] = load_experiment_data(c);
      row.aurocs.push_back(run_training(c, train, test).test_auroc);
    }
    row.mean_auroc = mean_of(row.aurocs);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "variant,n_runs,mean_auroc,aurocs\n";
  for (const auto& r : rows) {
    f << r.name << ',' << r.aurocs.size() << ',' << format_number(r.mean_auroc) << ',';
    for (std::size_t i = 0; i < r.aurocs.size(); ++i) f << (i ? ";" : "") << format_number(r.aurocs[i]);
    f << '\n';
  }
}

}  // namespace hsad
