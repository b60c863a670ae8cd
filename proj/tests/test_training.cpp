#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "hsad/errors.hpp"
#include "hsad/experiment.hpp"
#include "hsad/training.hpp"
#include "oracles.hpp"

using namespace hsad;

namespace {

VariantConfig variant(Variant v, Boundary b = Boundary::kHard) {
  VariantConfig vc;
  vc.variant = v;
  vc.boundary = b;
  return vc;
}

LabeledDataset blobs(std::size_t n, std::uint64_t seed, double separation = 2.0) {
  BlobConfig cfg;
  cfg.separation = separation;
  Rng rng(seed);
  return synth_blobs(n, 0, cfg, rng).data;
}

Model small_model(const VariantConfig& vc, std::uint64_t seed, DType dt = DType::kFloat64) {
  Rng rng(seed);
  return Model::build(small_image_spec(1, 16, 16, 4), vc, rng, dt);
}

std::string param_bytes(const Model& m) { return encode_tensors(m.parameter_values()); }

// Full-batch train-mode objective of a copy of `m`.
double batch_loss(const Model& m, const LabeledDataset& data, const TrainConfig& cfg, const HypersphereState& hs) {
  Model copy = m;
  Tape tape;
  ForwardResult f = copy.forward(tape, data.samples.to(copy.dtype()), Mode::kTrain);
  LossTerms t;
  t.z_hat = f.z_hat;
  t.x = f.x;
  t.x_hat = f.x_hat;
  t.weights = f.decay_weights;
  return total_loss(copy.variant().variant, copy.variant().boundary, t, cfg.weights, hs, copy.variant().kl_mode)
      .total.value()
      .item();
}

}  // namespace

TEST(Center, IdenticalLatentsAndClamp) {
  EXPECT_EQ(clamp_center(Tensor({3}, {0.5, -0.2, 0.1})).to_vector(), (std::vector<double>{0.5, -0.2, 0.1}));
  EXPECT_EQ(clamp_center(Tensor::zeros({4})).to_vector(), std::vector<double>(4, 0.1));
  EXPECT_EQ(clamp_center(Tensor({4}, {0.05, -0.05, -0.1, 0.0999})).to_vector(),
            (std::vector<double>{0.1, -0.1, -0.1, 0.1}));
}

TEST(Center, MatchesMeanThenClampOracle) {
  Model m = small_model(variant(Variant::kIaeLstmKl), 1);
  LabeledDataset data = blobs(40, 2);
  const Tensor c = init_center(m, data, 16);  // several batches

  Tape tape(false);
  const auto z = m.forward(tape, data.samples, Mode::kEval).z_hat.value().to_vector();
  const std::size_t d = c.size();
  for (std::size_t j = 0; j < d; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < 40; ++i) mu += z[i * d + j] / 40.0;
    const double expect = std::abs(mu) < 0.1 ? (mu < 0 ? -0.1 : 0.1) : mu;
    EXPECT_NEAR(c.at(j), expect, 1e-12);
  }
}

TEST(Radius, InterpolatedQuantile) {
  EXPECT_DOUBLE_EQ(interpolated_quantile({4, 1, 3, 2}, 0.75), 3.25);
  EXPECT_DOUBLE_EQ(update_radius({1, 2, 3, 4}, 0.25), std::sqrt(3.25));
  EXPECT_DOUBLE_EQ(update_radius({5, 1, 3, 2}, 1.0), 1.0);  // nu = 1: minimum distance
  EXPECT_DOUBLE_EQ(update_radius({2.5, 2.5, 2.5}, 0.3), std::sqrt(2.5));
  EXPECT_THROW(interpolated_quantile({}, 0.5), DomainError);
  EXPECT_THROW(update_radius({1.0}, 0.0), ConfigError);
}

TEST(Batches, PermutationAndSingletonMerge) {
  Rng rng(3);
  auto b = make_batches(65, 32, true, rng);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[1].size(), 33u);
  std::set<std::size_t> seen;
  for (const auto& batch : b) seen.insert(batch.begin(), batch.end());
  EXPECT_EQ(seen.size(), 65u);
  Rng rng2(3);
  EXPECT_EQ(make_batches(65, 32, false, rng2).size(), 3u);
}

TEST(Adam, ZeroBetasGiveSignSteps) {
  Tensor w({4}, {1.0, 2.0, 3.0, 4.0});
  std::vector<ParamRef> params{{"w", &w, ParamGroup::kEncoder, true, true}};
  OptimizerState opt(0.1, 0.0, 0.0, 1e-300);
  opt.step(params, {Tensor({4}, {0.5, -3.0, 1e-6, -2e3})});
  EXPECT_EQ(w.to_vector(), (std::vector<double>{0.9, 2.1, 2.9, 4.1}));
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, BiasCorrectedFirstStepAndFrozenParameters) {
  Tensor w({2}, {0.0, 0.0}), frozen({1}, {5.0});
  std::vector<ParamRef> params{{"w", &w, ParamGroup::kEncoder, true, true},
                               {"beta", &frozen, ParamGroup::kEncoder, false, false}};
  OptimizerState opt(0.01, 0.9, 0.999, 1e-8);
  opt.step(params, {Tensor({2}, {4.0, -0.25}), Tensor({1}, {1.0})});
  // Bias correction makes the first step lr * g / (|g| + eps).
  EXPECT_NEAR(w.at(0), -0.01, 1e-10);
  EXPECT_NEAR(w.at(1), 0.01, 1e-9);
  EXPECT_EQ(frozen.at(0), 5.0);
}

TEST(Pretrain, ZeroEpochsAndDecoderlessVariants) {
  LabeledDataset data = blobs(20, 4);
  TrainConfig cfg;
  cfg.pretrain_epochs = 0;
  Model m = small_model(variant(Variant::kIaeLstmKl), 5);
  const std::string before = param_bytes(m);
  Rng rng(6);
  EXPECT_TRUE(pretrain(m, data, cfg, rng).rec_per_epoch.empty());
  EXPECT_EQ(param_bytes(m), before);

  cfg.pretrain_epochs = 2;
  Model enc = small_model(variant(Variant::kDsvdd), 5);
  const std::string enc_before = param_bytes(enc);
  EXPECT_TRUE(pretrain(enc, data, cfg, rng).skipped);
  EXPECT_EQ(param_bytes(enc), enc_before);

  const PretrainResult r = pretrain(m, data, cfg, rng);
  EXPECT_EQ(r.rec_per_epoch.size(), 2u);
  EXPECT_NE(param_bytes(m), before);
}

TEST(TrainEpoch, ZeroLearningRateKeepsParameters) {
  LabeledDataset data = blobs(40, 7);
  TrainConfig cfg;
  cfg.lr = 0.0;
  Model m = small_model(variant(Variant::kIaeLstmKl), 8);
  HypersphereState hs;
  hs.center = init_center(m, data);
  const std::string before = param_bytes(m);
  OptimizerState opt = OptimizerState::from(cfg);
  Rng rng(9);
  const EpochMetrics em = train_epoch(m, data, cfg, hs, opt, rng, 0);
  EXPECT_EQ(param_bytes(m), before);
  EXPECT_TRUE(std::isfinite(em.total));
  EXPECT_GT(em.total, 0.0);
  ASSERT_TRUE(em.mean_gate_s.has_value());
}

TEST(TrainEpoch, SingleBatchStepLowersLossOnMostSeeds) {
  TrainConfig cfg;
  cfg.batch_size = 32;
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    LabeledDataset data = blobs(16, 100 + seed);
    Model m = small_model(variant(Variant::kIaeLstmKl), seed);
    HypersphereState hs;
    hs.center = init_center(m, data);
    const double before = batch_loss(m, data, cfg, hs);
    OptimizerState opt = OptimizerState::from(cfg);
    Rng rng(seed);
    const EpochMetrics em = train_epoch(m, data, cfg, hs, opt, rng, 0);
    EXPECT_NEAR(em.total, before, 1e-9 * std::abs(before));
    improved += batch_loss(m, data, cfg, hs) <= before;
  }
  EXPECT_GE(improved, 18);
}

TEST(TrainEpoch, RadiusModes) {
  LabeledDataset data = blobs(40, 10);
  for (RadiusUpdate mode : {RadiusUpdate::kFrozen, RadiusUpdate::kQuantileAfterWarmup}) {
    TrainConfig cfg;
    cfg.radius_update = mode;
    cfg.warmup_epochs = 1;
    Model m = small_model(variant(Variant::kIaeLstmKl, Boundary::kSoft), 11);
    HypersphereState hs;
    hs.center = init_center(m, data);
    OptimizerState opt = OptimizerState::from(cfg);
    Rng rng(12);
    train_epoch(m, data, cfg, hs, opt, rng, 0);
    EXPECT_EQ(hs.radius, 0.0);  // still warming up
    train_epoch(m, data, cfg, hs, opt, rng, 1);
    if (mode == RadiusUpdate::kFrozen) EXPECT_EQ(hs.radius, 0.0);
    else EXPECT_GT(hs.radius, 0.0);
  }
}

TEST(TrainEpoch, NonFiniteLossRaisesDivergence) {
  LabeledDataset data = blobs(20, 13);
  TrainConfig cfg;
  Model m = small_model(variant(Variant::kIaeLstmKl), 14);
  HypersphereState hs;
  hs.center = init_center(m, data);
  for (ParamRef& p : m.parameters())
    if (p.name == "head.weight") p.value->set(0, NAN);
  OptimizerState opt = OptimizerState::from(cfg);
  Rng rng(15);
  EXPECT_THROW(train_epoch(m, data, cfg, hs, opt, rng, 0), DivergenceError);
}

TEST(TrainConfig, JsonRoundTripAndErrors) {
  TrainConfig c;
  c.lr = 3e-4;
  c.radius_update = RadiusUpdate::kFrozen;
  c.weights.lambda1 = 0.25;
  EXPECT_EQ(TrainConfig::from_json(c.to_json()).to_json(), c.to_json());
  EXPECT_THROW(TrainConfig::from_json({{"learning_rate", 1.0}}), ConfigError);
  TrainConfig bad;
  bad.nu = 0.0;
  EXPECT_THROW(bad.validate(KlMode::kBatchMoments), ConfigError);
  TrainConfig one;
  one.batch_size = 1;
  EXPECT_THROW(one.validate(KlMode::kBatchMoments), ConfigError);
  EXPECT_NO_THROW(one.validate(KlMode::kPerSample));
}

TEST(RunTraining, SameSeedIsReproducible) {
  ExperimentConfig cfg = desk_defaults();
  cfg.synthetic.n_train = 64;
  cfg.synthetic.n_test_normal = cfg.synthetic.n_test_anomalous = 32;
  cfg.train.pretrain_epochs = 1;
  cfg.train.train_epochs = 2;
  cfg.base_width = 4;
  auto [train, test] = load_experiment_data(cfg);
  const RunResult a = run_training(cfg, train, test);
  const RunResult b = run_training(cfg, train, test);
  ASSERT_EQ(a.metrics.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(metrics_csv_row(a.metrics[i]), metrics_csv_row(b.metrics[i]));
  EXPECT_EQ(param_bytes(*a.model), param_bytes(*b.model));
  cfg.train.seed = 1;
  auto [train1, test1] = load_experiment_data(cfg);
  EXPECT_NE(param_bytes(*run_training(cfg, train1, test1).model), param_bytes(*a.model));
}

TEST(GridSearch, SingleCellAndTieBreak) {
  GridSpace one{{0.1}, {1.0}, {1e-3}};
  const GridResult r = grid_search(one, TrainConfig{}, [](const TrainConfig&) { return 0.7; });
  ASSERT_EQ(r.cells.size(), 1u);
  EXPECT_EQ(r.best.lr, 1e-3);

  GridSpace tie{{0.2, 0.1}, {1.0}, {1e-3, 1e-4}};
  const GridResult t = grid_search(tie, TrainConfig{}, [](const TrainConfig&) { return 0.5; });
  EXPECT_EQ(t.cells.size(), 4u);
  EXPECT_EQ(t.best.weights.lambda1, 0.1);
  EXPECT_EQ(t.best.lr, 1e-4);
  EXPECT_THROW(grid_search(GridSpace{}, TrainConfig{}, [](const TrainConfig&) { return 0.0; }), ConfigError);
}

TEST(GridSearch, PrefersTrainingOverZeroLearningRate) {
  ExperimentConfig cfg = desk_defaults();
  cfg.synthetic.n_train = 400;
  cfg.synthetic.n_test_normal = cfg.synthetic.n_test_anomalous = 200;
  cfg.train.pretrain_epochs = 3;
  cfg.train.train_epochs = 8;
  cfg.track_val_auroc = false;
  auto [train, val] = load_experiment_data(cfg);
  const GridResult r = grid_search(GridSpace{{0.1}, {0.1}, {0.0, 1e-3}}, cfg, train, val);
  EXPECT_EQ(r.best.lr, 1e-3) << r.cells[0].val_auroc << " vs " << r.cells[1].val_auroc;
}
