#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hsad/data.hpp"
#include "hsad/losses.hpp"
#include "hsad/model.hpp"
#include "hsad/training.hpp"

namespace hsad {

/// Per-sample anomaly scores (higher = more anomalous) with binary labels.
struct ScoredBatch {
  std::vector<double> scores;
  std::vector<int> labels;
};

/// ||z_hat_i - c||^2 per row of z_hat [n, d]. No radius is subtracted.
std::vector<double> latent_scores(const Tensor& z_hat, const Tensor& center);

/// Eval-mode scores of `data`: squared latent distance to the center for
/// variants with an SVDD branch, per-sample squared reconstruction error for
/// the CAE.
ScoredBatch score(Model& model, const HypersphereState* hs, const LabeledDataset& data, std::size_t batch_size = 256);

struct AurocReport {
  double auroc = 0.5;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  std::size_t ties = 0;  // positive/negative pairs with equal scores
};

/// Mann-Whitney statistic with average ranks. Throws DomainError unless both
/// labels occur.
AurocReport auroc(const ScoredBatch& sb);

struct EpochCurve {
  std::vector<std::pair<std::size_t, double>> rows;  // (epoch, auroc)
  std::optional<double> stability;                   // stddev over the last 10 epochs
};

/// Population standard deviation of the last min(10, n) values; empty for a
/// single epoch.
EpochCurve epoch_curve(const std::vector<double>& auroc_per_epoch);
void write_epoch_curve_csv(const std::filesystem::path& path, const EpochCurve& curve);

/// Spearman rank correlation with average ranks for ties; 0 when either input
/// is constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

/// metrics.csv: epoch,total,svdd,kl,rec,decay,R,mean_gate_s,mean_gate_o,val_auroc
/// (empty fields where a value does not apply). Numbers use 17 significant
/// digits so files round-trip exactly.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& rows);
std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);

struct ClassAuroc {
  std::string variant;
  int normal_class = 0;
  std::uint64_t seed = 0;
  double auroc = 0.0;
};
/// auroc_by_class.csv: variant,normal_class,seed,auroc
void write_auroc_by_class_csv(const std::filesystem::path& path, const std::vector<ClassAuroc>& rows);

struct SweepRow {
  std::string variant;
  double rho = 0.0;
  std::vector<double> aurocs;  // one per seed (and class), in run order
  double mean_auroc = 0.0;
};
/// sweep.csv: variant,rho,n_runs,mean_auroc,std_auroc
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);
/// Whitespace-separated columns "rho <mean per variant...>" with a '#' header,
/// one row per rho, for plotting tools.
void write_sweep_dat(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

/// Formats a double with 17 significant digits.
std::string format_number(double v);

}  // namespace hsad
