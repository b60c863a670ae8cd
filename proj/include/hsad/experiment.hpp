#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hsad/data.hpp"
#include "hsad/eval.hpp"
#include "hsad/model.hpp"
#include "hsad/training.hpp"

namespace hsad {

/// Everything needed to reproduce one training run.
struct ExperimentConfig {
  /// "synthetic", or a dataset container written by the ingest commands.
  std::string dataset = "synthetic";
  SyntheticTask synthetic;
  /// Normal class for multi-class containers and the synthetic task.
  int normal_class = 0;
  Family family = Family::kSmallImage;
  std::size_t base_width = 8;      // small_image channel width multiplier
  std::size_t image_size = 64;     // large_image input side
  VariantConfig variant;
  TrainConfig train;
  DType dtype = DType::kFloat32;
  /// Score the test split after every epoch (val_auroc column).
  bool track_val_auroc = true;

  nlohmann::json to_json() const;
  /// Keys absent from `j` keep the values of `base`; unknown keys are errors.
  static ExperimentConfig from_json(const nlohmann::json& j, const ExperimentConfig& base);
};

/// Desk-scale defaults used by the CLI and the acceptance suite.
ExperimentConfig desk_defaults();

struct RunResult {
  std::vector<EpochMetrics> metrics;
  PretrainResult pretrain;
  HypersphereState hypersphere;
  double test_auroc = 0.0;
  double cpu_seconds = 0.0;
  std::optional<Model> model;
};

/// Called after every training epoch with the metrics row and the model.
using EpochCallback = std::function<void(const EpochMetrics&, Model&, const HypersphereState&)>;

/// Architecture for samples of shape [c, h, w].
ArchitectureSpec architecture_for(const ExperimentConfig& cfg, const Shape& sample_shape);

/// Train / test data of the configured dataset.
std::pair<LabeledDataset, LabeledDataset> load_experiment_data(const ExperimentConfig& cfg);

/// pretrain -> init_center -> train_epochs epochs, then scores the test split.
/// Model initialisation, pretraining and training draw from independent
/// streams of the run seed.
RunResult run_training(const ExperimentConfig& cfg, const LabeledDataset& train, const LabeledDataset& test,
                       const EpochCallback& on_epoch = {});

struct GridSpace {
  std::vector<double> lambda1;
  std::vector<double> lambda2;
  std::vector<double> lr;
};

struct GridCell {
  double lambda1 = 0.0, lambda2 = 0.0, lr = 0.0;
  double val_auroc = 0.0;
};

struct GridResult {
  TrainConfig best;
  std::vector<GridCell> cells;  // lexicographic (lambda1, lambda2, lr) order
};

/// Trains every cell and keeps the highest validation AUROC; ties go to the
/// lexicographically smaller (lambda1, lambda2, lr). Throws ConfigError on an
/// empty grid.
GridResult grid_search(const GridSpace& space, const ExperimentConfig& base, const LabeledDataset& train,
                       const LabeledDataset& val);
/// Same with a caller-provided evaluation of a training config.
GridResult grid_search(const GridSpace& space, const TrainConfig& base,
                       const std::function<double(const TrainConfig&)>& evaluate);

/// Mean test AUROC of each (variant, rho) over `seeds` on the synthetic task;
/// seed s generates data, contamination and model from s.
std::vector<SweepRow> contamination_sweep(const ExperimentConfig& base, const std::vector<VariantConfig>& variants,
                                          const std::vector<double>& rhos, const std::vector<std::uint64_t>& seeds);

struct AblationRow {
  std::string name;
  VariantConfig variant;
  std::vector<double> aurocs;
  double mean_auroc = 0.0;
};

/// "modules": six variants x {hard, soft}. "gates": the full model and the
/// three gate ablations. Throws ConfigError on an unknown suite.
std::vector<VariantConfig> ablation_suite(const std::string& suite, Boundary gate_boundary = Boundary::kHard);
std::string ablation_name(const VariantConfig& vc);

std::vector<AblationRow> run_ablation(const ExperimentConfig& base, const std::vector<VariantConfig>& suite,
                                      const std::vector<std::uint64_t>& seeds);
void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);

}  // namespace hsad
