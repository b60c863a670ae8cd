#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hsad/errors.hpp"
#include "hsad/eval.hpp"
#include "hsad/model.hpp"
#include "hsad/training.hpp"
#include "oracles.hpp"

using namespace hsad;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path temp_file(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "hsad_test_eval";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Auroc, PerfectSeparationAndAllTies) {
  EXPECT_DOUBLE_EQ(auroc({{0.1, 0.2, 0.3, 0.4}, {0, 0, 1, 1}}).auroc, 1.0);
  const AurocReport tie = auroc({{0.5, 0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1, 1}});
  EXPECT_DOUBLE_EQ(tie.auroc, 0.5);
  EXPECT_EQ(tie.n_pos, 3u);
  EXPECT_EQ(tie.n_neg, 2u);
  EXPECT_EQ(tie.ties, 6u);
  EXPECT_THROW(auroc({{0.1, 0.2}, {0, 0}}), DomainError);
  EXPECT_THROW(auroc({{0.1, 0.2}, {0}}), ShapeError);
}

TEST(Auroc, MatchesPairCountingOracle) {
  Rng rng(1);
  for (int rep = 0; rep < 50; ++rep) {
    ScoredBatch sb;
    for (int i = 0; i < 200; ++i) {
      // Coarse grid so ties are common.
      sb.scores.push_back(std::round(rng.uniform(0, 20)) / 4.0);
      sb.labels.push_back(i < 3 ? i % 2 : static_cast<int>(rng.below(2)));
    }
    EXPECT_NEAR(auroc(sb).auroc, oracle::auroc_pairs(sb.scores, sb.labels), 1e-12);
  }
}

TEST(Auroc, FlippingLabelsComplements) {
  Rng rng(2);
  ScoredBatch sb;
  for (int i = 0; i < 100; ++i) {
    sb.scores.push_back(std::round(rng.uniform(0, 10)));
    sb.labels.push_back(i % 3 == 0);
  }
  ScoredBatch flipped = sb;
  for (int& l : flipped.labels) l = 1 - l;
  EXPECT_NEAR(auroc(flipped).auroc, 1.0 - auroc(sb).auroc, 1e-15);
}

TEST(EpochCurve, FlatImprovingAndSingle) {
  const EpochCurve flat = epoch_curve(std::vector<double>(15, 0.8));
  EXPECT_EQ(flat.rows.size(), 15u);
  ASSERT_TRUE(flat.stability.has_value());
  EXPECT_EQ(*flat.stability, 0.0);

  // Anomaly scores drift upward epoch by epoch: AUROC never decreases.
  Rng rng(3);
  std::vector<double> base(60);
  for (double& b : base) b = rng.uniform();
  std::vector<double> curve;
  for (int e = 0; e < 12; ++e) {
    ScoredBatch sb;
    for (std::size_t i = 0; i < 60; ++i) {
      const int label = i % 2;
      sb.scores.push_back(base[i] + label * 0.1 * e);
      sb.labels.push_back(label);
    }
    curve.push_back(auroc(sb).auroc);
  }
  const EpochCurve up = epoch_curve(curve);
  for (std::size_t i = 1; i < up.rows.size(); ++i) EXPECT_GE(up.rows[i].second, up.rows[i - 1].second);
  EXPECT_EQ(up.rows.front().first, 1u);

  const EpochCurve one = epoch_curve({0.7});
  EXPECT_EQ(one.rows.size(), 1u);
  EXPECT_FALSE(one.stability.has_value());

  // Population sd of the last ten of {0, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1}: 0.5.
  EXPECT_DOUBLE_EQ(*epoch_curve({0, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1}).stability, 0.5);
}

TEST(Spearman, KnownValues) {
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3}, {5, 5, 5}), 0.0);
  // With ties: ranks of y are (1.5, 1.5, 3); Pearson on ranks.
  EXPECT_NEAR(spearman({1, 2, 3}, {7, 7, 9}), std::sqrt(3.0) / 2.0, 1e-15);
}

TEST(MetricsCsv, HeaderRowsAndEmptyFields) {
  EXPECT_EQ(metrics_csv_header(), "epoch,total,svdd,kl,rec,decay,R,mean_gate_s,mean_gate_o,val_auroc");
  EpochMetrics m;
  m.epoch = 3;
  m.total = 0.5;
  m.radius = 0.25;
  EXPECT_EQ(metrics_csv_row(m), "3,0.5,0,0,0,0,0.25,,,");
  m.mean_gate_s = 0.1;
  m.val_auroc = 0.75;
  EXPECT_EQ(metrics_csv_row(m), "3,0.5,0,0,0,0,0.25,0.10000000000000001,,0.75");

  const fs::path p = temp_file("metrics.csv");
  write_metrics_csv(p, {m, m});
  const std::string s = slurp(p);
  EXPECT_EQ(s, metrics_csv_header() + "\n" + metrics_csv_row(m) + "\n" + metrics_csv_row(m) + "\n");
}

TEST(ReportFiles, SweepAndClassTables) {
  const std::vector<SweepRow> rows{{"a", 0.0, {0.8, 0.9}, 0.85}, {"b", 0.0, {0.7}, 0.7}, {"a", 0.1, {0.6, 0.8}, 0.7}};
  const fs::path csv = temp_file("sweep.csv"), dat = temp_file("sweep.dat");
  write_sweep_csv(csv, rows);
  std::istringstream in(slurp(csv));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "variant,rho,n_runs,mean_auroc,std_auroc");
  std::getline(in, line);
  std::vector<std::string> f;
  std::stringstream fields(line);
  for (std::string x; std::getline(fields, x, ',');) f.push_back(x);
  ASSERT_EQ(f.size(), 5u);
  EXPECT_EQ(f[0] + f[1] + f[2], "a02");
  EXPECT_DOUBLE_EQ(std::stod(f[3]), 0.85);
  EXPECT_DOUBLE_EQ(std::stod(f[4]), 0.05);  // population sd of {0.8, 0.9}
  write_sweep_dat(dat, rows);
  const std::string d = slurp(dat);
  EXPECT_EQ(d.substr(0, 10), "# rho a b\n");
  EXPECT_NE(d.find("0.10000000000000001 0.69999999999999996"), std::string::npos);

  const fs::path cls = temp_file("by_class.csv");
  write_auroc_by_class_csv(cls, {{"cae", 2, 7, 0.5}});
  EXPECT_EQ(slurp(cls), "variant,normal_class,seed,auroc\ncae,2,7,0.5\n");
}

TEST(Score, LatentDistanceOrReconstruction) {
  Rng rng(4);
  LabeledDataset data;
  data.samples = oracle::random_tensor({6, 1, 16, 16}, rng, 0, 1);
  data.labels = {0, 1, 0, 1, 0, 1};
  VariantConfig vc;
  Model m = Model::build(small_image_spec(1, 16, 16, 4), vc, rng, DType::kFloat64);
  HypersphereState hs;
  hs.center = init_center(m, data);
  const ScoredBatch sb = score(m, &hs, data, 4);
  Tape tape(false);
  const Tensor z = m.forward(tape, data.samples, Mode::kEval).z_hat.value();
  EXPECT_LE(oracle::max_abs_diff(sb.scores, latent_scores(z, hs.center)), 1e-12);
  EXPECT_EQ(sb.labels, data.labels);

  VariantConfig cae;
  cae.variant = Variant::kCae;
  Model mc = Model::build(small_image_spec(1, 16, 16, 4), cae, rng, DType::kFloat64);
  const ScoredBatch sc = score(mc, nullptr, data);
  Tape t2(false);
  const auto xh = mc.forward(t2, data.samples, Mode::kEval).x_hat->value().to_vector();
  const auto x = data.samples.to_vector();
  for (std::size_t i = 0; i < 6; ++i) {
    double e = 0;
    for (std::size_t k = 0; k < 256; ++k) e += std::pow(x[i * 256 + k] - xh[i * 256 + k], 2);
    EXPECT_NEAR(sc.scores[i], e, 1e-12);
  }
  EXPECT_THROW(score(m, nullptr, data), ContractError);
}
