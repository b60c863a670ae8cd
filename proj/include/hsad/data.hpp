#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <string>
#include <utility>
#include <vector>

#include "hsad/rng.hpp"
#include "hsad/tensor.hpp"

namespace hsad {

/// Images in [0, 1] with binary labels (0 normal, 1 anomalous).
struct LabeledDataset {
  Tensor samples;           // [N, c, h, w], float64
  std::vector<int> labels;  // size N
  std::string split = "train";
  std::string provenance;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const;
  std::size_t count(int label) const;
  LabeledDataset subset(const std::vector<std::size_t>& indices) const;
  /// Throws DomainError when shapes, the value range or the label domain are off.
  void validate() const;
};

/// Samples of [first, first + count) as an [count, c, h, w] tensor.
Tensor slice_samples(const Tensor& samples, std::size_t first, std::size_t count);
Tensor gather_samples(const Tensor& samples, const std::vector<std::size_t>& indices);
LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b);

/// Multi-class source data before the one-class protocol is applied; labels
/// are class ids.
struct MultiClassData {
  Tensor train_samples;
  std::vector<int> train_classes;
  Tensor test_samples;
  std::vector<int> test_classes;
};

/// Train: training samples of `normal_class`, labelled 0. Test: the full test
/// split, labelled 1 for every other class. Throws DomainError when the class
/// does not occur in the training split.
std::pair<LabeledDataset, LabeledDataset> one_class_split(const MultiClassData& data, int normal_class);

struct ContaminationConfig {
  double rho = 0.0;  // anomaly fraction of the resulting train set
  std::uint64_t seed = 0;
};

/// m = round(rho / (1 - rho) * n_normal).
std::size_t contamination_count(std::size_t n_normal, double rho);

/// Appends m pool samples drawn uniformly without replacement. Their labels
/// are kept as 1 for analysis; the trainer never reads labels. Writes the
/// chosen pool indices to `chosen` when given.
LabeledDataset contaminate(const LabeledDataset& train, const LabeledDataset& pool, const ContaminationConfig& cfg,
                           std::vector<std::size_t>* chosen = nullptr);

// ---------------------------------------------------------------------------
// Wind-turbine style time series

inline constexpr std::size_t kSeriesColumns = 26;
inline constexpr std::size_t kSmoothingHalfWidth = 5;

struct TimeSeriesTable {
  std::vector<std::array<double, kSeriesColumns>> rows;
  std::vector<int> flags;  // 0 normal, 1 anomalous, one per row

  std::size_t length() const { return rows.size(); }
  void validate() const;
};

/// Mean over the 11-row window centred on each row that has a full window;
/// output length T - 10, flags taken from the centre row.
TimeSeriesTable smooth_window(const TimeSeriesTable& ts);

/// Per-column min-max scaling fitted on a row range and clamped to [0, 1]
/// when applied outside it. Constant columns map to 0.
struct ColumnScaler {
  std::array<double, kSeriesColumns> lo{};
  std::array<double, kSeriesColumns> hi{};

  static ColumnScaler fit(const TimeSeriesTable& ts, std::size_t begin, std::size_t end);
  double apply(double value, std::size_t column) const;
};

/// Every run of 26 consecutive rows as a 1x26x26 image (row = timestamp,
/// column = channel), stride 1, so T - 25 samples. A window is anomalous
/// when any of its rows is flagged.
LabeledDataset tile_windows(const TimeSeriesTable& ts, const ColumnScaler& scaler);
/// Same, with the scaler fitted on the whole table.
LabeledDataset tile_windows(const TimeSeriesTable& ts);

/// Reads the 28-column layout: timestamp index, 26 measurements, flag. A
/// non-numeric first line is treated as a header.
TimeSeriesTable parse_series_csv(std::istream& in);
TimeSeriesTable read_series_csv(const std::filesystem::path& path);

struct SeriesProtocol {
  double train_fraction = 0.653;  // chronological share of windows used for training
};

struct SeriesSplit {
  LabeledDataset train;
  LabeledDataset test;
  std::size_t smoothed_rows = 0;
  std::size_t windows = 0;
};

/// Smoothing, chronological split, scaler fitted on the training rows and
/// tiling. Flagged windows of the training portion are moved to the test set
/// so training stays normal-only.
SeriesSplit series_protocol(const TimeSeriesTable& raw, const SeriesProtocol& protocol = {});

// ---------------------------------------------------------------------------
// Synthetic Gaussian-blob images

/// Images of `latent_dim` Gaussian blobs at fixed anchors on a square canvas.
/// Blob j has amplitude amp_base + amp_scale * u_j for a latent u ~ N(mu, I);
/// class A has mu = 0 and class B mu = separation * (1, ..., 1) / sqrt(k).
/// i.i.d. pixel noise is added and values are clamped to [0, 1].
struct BlobConfig {
  std::size_t size = 16;
  std::size_t channels = 1;
  std::size_t latent_dim = 4;
  double separation = 1.0;
  double background = 0.1;
  double amp_base = 0.5;
  double amp_scale = 0.12;
  double blob_sigma = 2.0;
  double noise = 0.1;

  void validate() const;
};

struct BlobSamples {
  LabeledDataset data;
  Tensor latents;  // [N, latent_dim]
};

/// `n_normal` class-A samples (label 0) followed by `n_anomalous` class-B
/// samples (label 1).
BlobSamples synth_blobs(std::size_t n_normal, std::size_t n_anomalous, const BlobConfig& cfg, Rng& rng);

/// Train / test / contamination pool for the one-class protocol on blobs.
struct SyntheticTask {
  BlobConfig blobs;
  std::size_t n_train = 2000;
  std::size_t n_test_normal = 500;
  std::size_t n_test_anomalous = 500;
  std::size_t n_pool = 700;
  /// 0 makes blob class A the normal class, 1 makes class B normal.
  int normal_class = 0;
};

struct TaskData {
  LabeledDataset train;
  LabeledDataset test;
  LabeledDataset pool;  // anomalies for contamination
};

TaskData make_synthetic_task(const SyntheticTask& task, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Image files

/// Reads an 8- or 16-bit PNG as [c, h, w] in [0, 1]. Gray, gray+alpha, RGB and
/// RGBA are accepted; alpha is dropped. `channels` = 1 or 3 converts.
Tensor read_png(const std::filesystem::path& path, std::size_t channels);

/// Bilinear resize of [c, h, w] (align-corners off, as in common imaging
/// libraries).
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);

/// Index CSV with a `path,label,split` header; label is an integer class id,
/// split is train or test; relative paths resolve against the CSV directory.
/// Images are converted to `channels` and resized to `size` x `size` when
/// `size` is nonzero.
MultiClassData read_image_index(const std::filesystem::path& index, std::size_t channels, std::size_t size = 0);

// ---------------------------------------------------------------------------
// Dataset containers (tensor container format)

void save_split(const std::filesystem::path& path, const LabeledDataset& train, const LabeledDataset& test);
std::pair<LabeledDataset, LabeledDataset> load_split(const std::filesystem::path& path);
void save_multiclass(const std::filesystem::path& path, const MultiClassData& data);
MultiClassData load_multiclass(const std::filesystem::path& path);
/// True when the container at `path` holds multi-class data.
bool is_multiclass_container(const std::filesystem::path& path);

}  // namespace hsad
