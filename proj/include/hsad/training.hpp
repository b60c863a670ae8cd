#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hsad/data.hpp"
#include "hsad/losses.hpp"
#include "hsad/model.hpp"

namespace hsad {

enum class RadiusUpdate { kQuantileAfterWarmup, kFrozen };

std::string to_string(RadiusUpdate mode);
RadiusUpdate radius_update_from_string(const std::string& name);

struct TrainConfig {
  std::size_t pretrain_epochs = 10;
  std::size_t train_epochs = 50;
  std::size_t batch_size = 32;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  LossWeights weights;
  double nu = 0.1;
  RadiusUpdate radius_update = RadiusUpdate::kQuantileAfterWarmup;
  std::size_t warmup_epochs = 10;
  std::uint64_t seed = 0;
  /// Write a checkpoint every k epochs (0 = only the final one).
  std::size_t checkpoint_every = 0;

  void validate(KlMode kl_mode) const;
  nlohmann::json to_json() const;
  /// Keys absent from `j` keep the values of `base`; unknown keys are errors.
  static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& base);
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Adam with bias correction. Decay is part of the loss, not the update.
class OptimizerState {
 public:
  OptimizerState(double lr, double beta1, double beta2, double eps);
  static OptimizerState from(const TrainConfig& cfg) { return {cfg.lr, cfg.beta1, cfg.beta2, cfg.eps}; }

  /// Updates every trainable parameter with its gradient (grads parallel to params).
  void step(const std::vector<ParamRef>& params, const std::vector<Tensor>& grads);

  std::size_t steps() const { return step_; }
  double lr() const { return lr_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t step_ = 0;
  std::vector<Tensor> m_, v_;  // float64, shaped like the parameters
};

/// Per-epoch record written to metrics.csv.
struct EpochMetrics {
  std::size_t epoch = 0;
  double total = 0.0;
  double svdd = 0.0;
  double kl = 0.0;
  double rec = 0.0;
  double decay = 0.0;
  double radius = 0.0;
  std::optional<double> mean_gate_s;
  std::optional<double> mean_gate_o;
  std::optional<double> val_auroc;
};

/// Batch boundaries for one epoch: consecutive slices of a permutation of
/// 0..n-1. The last short batch is kept; when `merge_singleton` is set a final
/// batch of one sample is merged into the previous one.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, bool merge_singleton,
                                                   Rng& rng);

struct PretrainResult {
  bool skipped = false;
  std::vector<double> rec_per_epoch;  // mean reconstruction loss per epoch
};

/// Minimises the reconstruction loss alone for cfg.pretrain_epochs. Variants
/// without a decoder are skipped.
PretrainResult pretrain(Model& model, const LabeledDataset& data, const TrainConfig& cfg, Rng& rng);

/// Eval-mode mean of z_hat over `data`, with coordinates of magnitude below
/// 0.1 pushed to +-0.1 (zero counts as positive).
Tensor init_center(Model& model, const LabeledDataset& data, std::size_t batch_size = 256);
Tensor clamp_center(const Tensor& mean);

/// Empirical quantile with linear interpolation between order statistics.
double interpolated_quantile(std::vector<double> values, double q);

/// R such that R^2 is the (1 - nu) quantile of the squared distances.
double update_radius(const std::vector<double>& squared_distances, double nu);

/// One pass over shuffled mini-batches with an Adam step per batch. For the
/// soft boundary the radius is refreshed from the epoch's distances once
/// `epoch` >= cfg.warmup_epochs (epochs count from 0). Throws DivergenceError
/// naming the term that went non-finite.
EpochMetrics train_epoch(Model& model, const LabeledDataset& data, const TrainConfig& cfg, HypersphereState& hs,
                         OptimizerState& opt, Rng& rng, std::size_t epoch);

}  // namespace hsad
