#include "hsad/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "hsad/checkpoint.hpp"

namespace hsad {

// ---------------------------------------------------------------------------
// LabeledDataset

Shape LabeledDataset::sample_shape() const {
  if (samples.rank() != 4) return {};
  return {samples.dim(1), samples.dim(2), samples.dim(3)};
}

std::size_t LabeledDataset::count(int label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

Tensor slice_samples(const Tensor& samples, std::size_t first, std::size_t count) {
  if (samples.rank() < 1 || first + count > samples.dim(0) || count == 0) {
    throw ShapeError("sample slice out of range");
  }
  Shape shape = samples.shape();
  shape[0] = count;
  const std::size_t per = samples.size() / samples.dim(0);
  Tensor out(shape, samples.dtype());
  dispatch(samples.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = samples.data<T>();
    std::copy_n(src.data() + first * per, count * per, out.mutable_data<T>().data());
  });
  return out;
}

Tensor gather_samples(const Tensor& samples, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ShapeError("gather of zero samples");
  Shape shape = samples.shape();
  shape[0] = indices.size();
  const std::size_t per = samples.size() / samples.dim(0);
  Tensor out(shape, samples.dtype());
  dispatch(samples.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = samples.data<T>();
    auto dst = out.mutable_data<T>();
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (indices[i] >= samples.dim(0)) throw ShapeError("sample index out of range");
      std::copy_n(src.data() + indices[i] * per, per, dst.data() + i * per);
    }
  });
  return out;
}

LabeledDataset LabeledDataset::subset(const std::vector<std::size_t>& indices) const {
  LabeledDataset out;
  out.samples = gather_samples(samples, indices);
  for (auto i : indices) out.labels.push_back(labels.at(i));
  out.split = split;
  out.provenance = provenance;
  return out;
}

void LabeledDataset::validate() const {
  if (samples.rank() != 4) throw DomainError("dataset samples must be [N, c, h, w]");
  if (samples.dim(0) != labels.size()) throw DomainError("dataset has mismatched sample and label counts");
  for (int l : labels) {
    if (l != 0 && l != 1) throw DomainError("dataset labels must be 0 or 1");
  }
  for (double v : samples.to_vector()) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("dataset values must lie in [0, 1]");
  }
}

LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
  if (a.sample_shape() != b.sample_shape()) throw ShapeError("cannot concatenate datasets of different shapes");
  Shape shape = a.samples.shape();
  shape[0] += b.samples.dim(0);
  std::vector<double> values = a.samples.to_vector();
  const std::vector<double> tail = b.samples.to_vector();
  values.insert(values.end(), tail.begin(), tail.end());
  LabeledDataset out;
  out.samples = Tensor(shape, std::move(values), a.samples.dtype());
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.split = a.split;
  out.provenance = a.provenance;
  return out;
}

// ---------------------------------------------------------------------------
// Protocols

std::pair<LabeledDataset, LabeledDataset> one_class_split(const MultiClassData& data, int normal_class) {
  std::vector<std::size_t> train_idx;
  for (std::size_t i = 0; i < data.train_classes.size(); ++i) {
    if (data.train_classes[i] == normal_class) train_idx.push_back(i);
  }
  if (train_idx.empty()) {
    throw DomainError("class " + std::to_string(normal_class) + " does not occur in the training split");
  }
  LabeledDataset train;
  train.samples = gather_samples(data.train_samples, train_idx);
  train.labels.assign(train_idx.size(), 0);
  train.split = "train";
  train.provenance = "one-class, normal class " + std::to_string(normal_class);

  LabeledDataset test;
  test.samples = data.test_samples;
  for (int c : data.test_classes) test.labels.push_back(c == normal_class ? 0 : 1);
  test.split = "test";
  test.provenance = train.provenance;
  return {std::move(train), std::move(test)};
}

std::size_t contamination_count(std::size_t n_normal, double rho) {
  if (!(rho >= 0.0 && rho < 1.0)) throw DomainError("contamination ratio must lie in [0, 1)");
  return static_cast<std::size_t>(std::llround(rho / (1.0 - rho) * static_cast<double>(n_normal)));
}

LabeledDataset contaminate(const LabeledDataset& train, const LabeledDataset& pool, const ContaminationConfig& cfg,
                           std::vector<std::size_t>* chosen) {
  const std::size_t m = contamination_count(train.count(0), cfg.rho);
  if (chosen != nullptr) chosen->clear();
  if (m == 0) return train;
  if (pool.size() < m) {
    throw DomainError("contamination needs " + std::to_string(m) + " pool samples, pool has " +
                      std::to_string(pool.size()));
  }
  Rng rng(cfg.seed);
  const auto picks = rng.sample_without_replacement(pool.size(), m);
  if (chosen != nullptr) *chosen = picks;
  LabeledDataset extra = pool.subset(picks);
  extra.labels.assign(m, 1);
  LabeledDataset out = concat(train, extra);
  out.provenance = train.provenance + ", contaminated rho=" + std::to_string(cfg.rho);
  return out;
}

// ---------------------------------------------------------------------------
// Time series

void TimeSeriesTable::validate() const {
  if (flags.size() != rows.size()) throw DomainError("time series needs one flag per row");
  for (int f : flags) {
    if (f != 0 && f != 1) throw DomainError("time series flags must be 0 or 1");
  }
  for (const auto& r : rows) {
    for (double v : r) {
      if (!std::isfinite(v)) throw DomainError("time series contains a non-finite value");
    }
  }
}

TimeSeriesTable smooth_window(const TimeSeriesTable& ts) {
  ts.validate();
  const std::size_t width = 2 * kSmoothingHalfWidth + 1;
  if (ts.length() < width) {
    throw DomainError("smoothing needs at least " + std::to_string(width) + " rows, got " +
                      std::to_string(ts.length()));
  }
  TimeSeriesTable out;
  const std::size_t n = ts.length() - 2 * kSmoothingHalfWidth;
  out.rows.resize(n);
  out.flags.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& row = out.rows[i];
    row.fill(0.0);
    for (std::size_t k = 0; k < width; ++k) {
      for (std::size_t c = 0; c < kSeriesColumns; ++c) row[c] += ts.rows[i + k][c];
    }
    for (double& v : row) v /= static_cast<double>(width);
    out.flags[i] = ts.flags[i + kSmoothingHalfWidth];
  }
  return out;
}

ColumnScaler ColumnScaler::fit(const TimeSeriesTable& ts, std::size_t begin, std::size_t end) {
  if (begin >= end || end > ts.length()) throw DomainError("scaler fit range is empty or out of bounds");
  ColumnScaler s;
  s.lo = ts.rows[begin];
  s.hi = ts.rows[begin];
  for (std::size_t r = begin; r < end; ++r) {
    for (std::size_t c = 0; c < kSeriesColumns; ++c) {
      s.lo[c] = std::min(s.lo[c], ts.rows[r][c]);
      s.hi[c] = std::max(s.hi[c], ts.rows[r][c]);
    }
  }
  return s;
}

double ColumnScaler::apply(double value, std::size_t column) const {
  const double span = hi[column] - lo[column];
  if (span <= 0.0) return 0.0;
  return std::clamp((value - lo[column]) / span, 0.0, 1.0);
}

LabeledDataset tile_windows(const TimeSeriesTable& ts, const ColumnScaler& scaler) {
  ts.validate();
  constexpr std::size_t L = kSeriesColumns;
  if (ts.length() < L) {
    throw DomainError("tiling needs at least " + std::to_string(L) + " rows, got " + std::to_string(ts.length()));
  }
  const std::size_t n = ts.length() - L + 1;
  std::vector<double> values(n * L * L);
  LabeledDataset out;
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    int flag = 0;
    for (std::size_t r = 0; r < L; ++r) {
      flag |= ts.flags[i + r];
      for (std::size_t c = 0; c < L; ++c) values[(i * L + r) * L + c] = scaler.apply(ts.rows[i + r][c], c);
    }
    out.labels[i] = flag;
  }
  out.samples = Tensor({n, 1, L, L}, std::move(values));
  out.provenance = "time-series windows";
  return out;
}

LabeledDataset tile_windows(const TimeSeriesTable& ts) {
  return tile_windows(ts, ColumnScaler::fit(ts, 0, ts.length()));
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    out.push_back(field);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  std::size_t used = 0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == s.size();
}

}  // namespace

TimeSeriesTable parse_series_csv(std::istream& in) {
  TimeSeriesTable ts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    double first = 0.0;
    if (line_no == 1 && !parse_double(fields.front(), first)) continue;  // header
    if (fields.size() != kSeriesColumns + 2) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected " + std::to_string(kSeriesColumns + 2) +
                        " columns, got " + std::to_string(fields.size()));
    }
    std::array<double, kSeriesColumns> row{};
    for (std::size_t c = 0; c < kSeriesColumns; ++c) {
      if (!parse_double(fields[c + 1], row[c])) {
        throw ConfigError("line " + std::to_string(line_no) + ": bad number '" + fields[c + 1] + "'");
      }
    }
    double flag = 0.0;
    if (!parse_double(fields.back(), flag) || (flag != 0.0 && flag != 1.0)) {
      throw ConfigError("line " + std::to_string(line_no) + ": flag must be 0 or 1");
    }
    ts.rows.push_back(row);
    ts.flags.push_back(static_cast<int>(flag));
  }
  ts.validate();
  return ts;
}

TimeSeriesTable read_series_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open " + path.string());
  return parse_series_csv(f);
}

SeriesSplit series_protocol(const TimeSeriesTable& raw, const SeriesProtocol& protocol) {
  if (!(protocol.train_fraction > 0.0 && protocol.train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie in (0, 1)");
  }
  const TimeSeriesTable smoothed = smooth_window(raw);
  if (smoothed.length() < kSeriesColumns) throw DomainError("series too short for a single window");
  const std::size_t windows = smoothed.length() - kSeriesColumns + 1;
  const auto n_train = static_cast<std::size_t>(std::floor(protocol.train_fraction * static_cast<double>(windows)));
  if (n_train == 0 || n_train == windows) throw DomainError("series too short for a train/test split");
  const ColumnScaler scaler = ColumnScaler::fit(smoothed, 0, n_train + kSeriesColumns - 1);
  const LabeledDataset all = tile_windows(smoothed, scaler);

  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t i = 0; i < windows; ++i) {
    (i < n_train && all.labels[i] == 0 ? train_idx : test_idx).push_back(i);
  }
  // Moved anomalies come first in the test set, in time order.
  std::stable_partition(test_idx.begin(), test_idx.end(), [&](std::size_t i) { return i < n_train; });
  SeriesSplit out;
  out.smoothed_rows = smoothed.length();
  out.windows = windows;
  if (train_idx.empty()) throw DomainError("training portion contains no normal windows");
  out.train = all.subset(train_idx);
  out.train.split = "train";
  out.test = all.subset(test_idx);
  out.test.split = "test";
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic blobs

void BlobConfig::validate() const {
  if (size < 4 || latent_dim == 0 || (channels != 1 && channels != 3)) {
    throw ConfigError("blob config needs size >= 4, latent_dim >= 1 and 1 or 3 channels");
  }
  if (separation < 0.0 || noise < 0.0 || blob_sigma <= 0.0) {
    throw ConfigError("blob separation and noise must be >= 0 and blob_sigma > 0");
  }
}

BlobSamples synth_blobs(std::size_t n_normal, std::size_t n_anomalous, const BlobConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t n = n_normal + n_anomalous;
  if (n == 0) throw DomainError("synth_blobs needs at least one sample");
  const std::size_t k = cfg.latent_dim, s = cfg.size, c = cfg.channels;

  // Anchors on the smallest square grid holding k cells.
  std::size_t grid = 1;
  while (grid * grid < k) ++grid;
  std::vector<std::vector<double>> kernels(k, std::vector<double>(s * s));
  for (std::size_t j = 0; j < k; ++j) {
    const double cy = (static_cast<double>(j / grid) + 0.5) * static_cast<double>(s) / static_cast<double>(grid);
    const double cx = (static_cast<double>(j % grid) + 0.5) * static_cast<double>(s) / static_cast<double>(grid);
    for (std::size_t y = 0; y < s; ++y) {
      for (std::size_t x = 0; x < s; ++x) {
        const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
        kernels[j][y * s + x] = std::exp(-(dy * dy + dx * dx) / (2.0 * cfg.blob_sigma * cfg.blob_sigma));
      }
    }
  }

  const double shift = cfg.separation / std::sqrt(static_cast<double>(k));
  std::vector<double> pixels(n * c * s * s), latents(n * k);
  std::vector<int> labels(n);
  std::vector<double> canvas(s * s);
  for (std::size_t i = 0; i < n; ++i) {
    const bool anomalous = i >= n_normal;
    labels[i] = anomalous ? 1 : 0;
    std::fill(canvas.begin(), canvas.end(), cfg.background);
    for (std::size_t j = 0; j < k; ++j) {
      const double u = rng.normal() + (anomalous ? shift : 0.0);
      latents[i * k + j] = u;
      const double amp = cfg.amp_base + cfg.amp_scale * u;
      for (std::size_t p = 0; p < s * s; ++p) canvas[p] += amp * kernels[j][p];
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t p = 0; p < s * s; ++p) {
        const double v = canvas[p] + cfg.noise * rng.normal();
        pixels[(i * c + ch) * s * s + p] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  BlobSamples out;
  out.data.samples = Tensor({n, c, s, s}, std::move(pixels));
  out.data.labels = std::move(labels);
  out.data.provenance = "synthetic blobs, separation " + std::to_string(cfg.separation);
  out.latents = Tensor({n, k}, std::move(latents));
  return out;
}

TaskData make_synthetic_task(const SyntheticTask& task, std::uint64_t seed) {
  if (task.normal_class != 0 && task.normal_class != 1) throw ConfigError("synthetic normal class must be 0 or 1");
  Rng root(seed);
  // Class B is generated as the "anomalous" half of synth_blobs; when class B
  // is normal the labels are swapped.
  auto draw = [&](std::uint64_t stream, std::size_t n_norm, std::size_t n_anom) {
    Rng rng = root.fork(stream);
    const bool swap = task.normal_class == 1;
    LabeledDataset d = synth_blobs(swap ? n_anom : n_norm, swap ? n_norm : n_anom, task.blobs, rng).data;
    if (swap) {
      // Put the normal samples first again.
      std::vector<std::size_t> order;
      for (std::size_t i = 0; i < d.size(); ++i)
        if (d.labels[i] == 1) order.push_back(i);
      for (std::size_t i = 0; i < d.size(); ++i)
        if (d.labels[i] == 0) order.push_back(i);
      d = d.subset(order);
      for (auto& l : d.labels) l = 1 - l;
    }
    return d;
  };
  TaskData out;
  out.train = draw(1, task.n_train, 0);
  out.train.split = "train";
  out.test = draw(2, task.n_test_normal, task.n_test_anomalous);
  out.test.split = "test";
  if (task.n_pool > 0) {
    out.pool = draw(3, 0, task.n_pool);
    out.pool.split = "pool";
  }
  return out;
}

// ---------------------------------------------------------------------------
// PNG images

namespace {

struct PngFile {
  std::FILE* f = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngFile() {
    if (png != nullptr) png_destroy_read_struct(&png, info != nullptr ? &info : nullptr, nullptr);
    if (f != nullptr) std::fclose(f);
  }
};

}  // namespace

Tensor read_png(const std::filesystem::path& path, std::size_t channels) {
  if (channels != 1 && channels != 3) throw ConfigError("images must be read as 1 or 3 channels");
  PngFile file;
  file.f = std::fopen(path.string().c_str(), "rb");
  if (file.f == nullptr) throw ConfigError("cannot open image " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.f) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw ConfigError(path.string() + " is not a PNG file");
  }
  file.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  file.info = png_create_info_struct(file.png);
  if (file.png == nullptr || file.info == nullptr) throw std::runtime_error("libpng initialisation failed");
  if (setjmp(png_jmpbuf(file.png))) throw ConfigError("corrupt PNG " + path.string());
  png_init_io(file.png, file.f);
  png_set_sig_bytes(file.png, 8);
  png_read_info(file.png, file.info);

  const auto color = png_get_color_type(file.png, file.info);
  const int depth = png_get_bit_depth(file.png, file.info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(file.png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(file.png);
  if (png_get_valid(file.png, file.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(file.png);
  if (depth == 16) png_set_swap(file.png);  // native little-endian 16-bit samples
  png_read_update_info(file.png, file.info);

  const std::size_t h = png_get_image_height(file.png, file.info);
  const std::size_t w = png_get_image_width(file.png, file.info);
  const std::size_t src_c = png_get_channels(file.png, file.info);
  const int out_depth = png_get_bit_depth(file.png, file.info);
  const std::size_t rowbytes = png_get_rowbytes(file.png, file.info);
  std::vector<unsigned char> buffer(rowbytes * h);
  std::vector<png_bytep> rows(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(file.png, rows.data());

  const double max_value = out_depth == 16 ? 65535.0 : 255.0;
  auto sample = [&](std::size_t y, std::size_t x, std::size_t ch) {
    const std::size_t idx = x * src_c + ch;
    if (out_depth == 16) {
      std::uint16_t v;
      std::memcpy(&v, rows[y] + 2 * idx, 2);
      return v / max_value;
    }
    return rows[y][idx] / max_value;
  };
  const bool src_color = src_c >= 3;
  Tensor out({channels, h, w});
  auto dst = out.mutable_data<double>();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (channels == 1) {
        dst[y * w + x] = src_color ? 0.299 * sample(y, x, 0) + 0.587 * sample(y, x, 1) + 0.114 * sample(y, x, 2)
                                   : sample(y, x, 0);
      } else {
        for (std::size_t ch = 0; ch < 3; ++ch) dst[(ch * h + y) * w + x] = sample(y, x, src_color ? ch : 0);
      }
    }
  }
  return out;
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3 || height == 0 || width == 0) throw ShapeError("resize expects [c, h, w] and a nonzero size");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == height && w == width) return image.to(DType::kFloat64);
  const Tensor src64 = image.to(DType::kFloat64);
  auto src = src64.data<double>();
  Tensor out({c, height, width});
  auto dst = out.mutable_data<double>();
  const double sy = static_cast<double>(h) / static_cast<double>(height);
  const double sx = static_cast<double>(w) / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        auto at = [&](std::size_t yy, std::size_t xx) { return src[(ch * h + yy) * w + xx]; };
        const double top = at(y0, x0) * (1 - tx) + at(y0, x1) * tx;
        const double bottom = at(y1, x0) * (1 - tx) + at(y1, x1) * tx;
        dst[(ch * height + y) * width + x] = top * (1 - ty) + bottom * ty;
      }
    }
  }
  return out;
}

MultiClassData read_image_index(const std::filesystem::path& index, std::size_t channels, std::size_t size) {
  std::ifstream f(index);
  if (!f) throw ConfigError("cannot open index " + index.string());
  std::string line;
  if (!std::getline(f, line)) throw ConfigError("index " + index.string() + " is empty");
  const auto header = split_csv_line(line);
  if (header != std::vector<std::string>{"path", "label", "split"}) {
    throw ConfigError("index header must be 'path,label,split'");
  }
  std::vector<double> train_px, test_px;
  MultiClassData out;
  Shape image_shape;
  std::size_t line_no = 1, n_train = 0, n_test = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 3) throw ConfigError("index line " + std::to_string(line_no) + ": expected 3 fields");
    double label = 0.0;
    if (!parse_double(fields[1], label) || label != std::floor(label)) {
      throw ConfigError("index line " + std::to_string(line_no) + ": label must be an integer class id");
    }
    const std::string& split = fields[2];
    if (split != "train" && split != "test") {
      throw ConfigError("index line " + std::to_string(line_no) + ": split must be train or test");
    }
    std::filesystem::path p = fields[0];
    if (p.is_relative()) p = index.parent_path() / p;
    Tensor img = read_png(p, channels);
    if (size != 0) img = resize_bilinear(img, size, size);
    if (image_shape.empty()) image_shape = img.shape();
    if (img.shape() != image_shape) {
      throw ConfigError("image " + p.string() + " has shape " + shape_to_string(img.shape()) + ", expected " +
                        shape_to_string(image_shape) + " (pass a resize size)");
    }
    const auto values = img.to_vector();
    auto& px = split == "train" ? train_px : test_px;
    px.insert(px.end(), values.begin(), values.end());
    (split == "train" ? out.train_classes : out.test_classes).push_back(static_cast<int>(label));
    ++(split == "train" ? n_train : n_test);
  }
  if (n_train == 0 || n_test == 0) throw ConfigError("index needs both train and test images");
  out.train_samples = Tensor({n_train, image_shape[0], image_shape[1], image_shape[2]}, std::move(train_px));
  out.test_samples = Tensor({n_test, image_shape[0], image_shape[1], image_shape[2]}, std::move(test_px));
  return out;
}

// ---------------------------------------------------------------------------
// Containers

namespace {

Tensor labels_tensor(const std::vector<int>& labels) {
  std::vector<double> v(labels.begin(), labels.end());
  return Tensor({labels.size()}, std::move(v));
}

std::vector<int> labels_from(const Tensor& t) {
  std::vector<int> out;
  for (double v : t.to_vector()) out.push_back(static_cast<int>(v));
  return out;
}

}  // namespace

void save_split(const std::filesystem::path& path, const LabeledDataset& train, const LabeledDataset& test) {
  save_tensors(path, {{"train.samples", train.samples},
                      {"train.labels", labels_tensor(train.labels)},
                      {"test.samples", test.samples},
                      {"test.labels", labels_tensor(test.labels)}});
}

std::pair<LabeledDataset, LabeledDataset> load_split(const std::filesystem::path& path) {
  const auto tensors = load_tensors(path);
  for (const auto& t : tensors) {
    if (t.name == "meta.multiclass") throw ConfigError(path.string() + " holds multi-class data; pick a normal class");
  }
  auto make = [&](const std::string& split) {
    LabeledDataset d;
    d.samples = find_tensor(tensors, split + ".samples").to(DType::kFloat64);
    d.labels = labels_from(find_tensor(tensors, split + ".labels"));
    d.split = split;
    d.provenance = path.filename().string();
    d.validate();
    return d;
  };
  return {make("train"), make("test")};
}

void save_multiclass(const std::filesystem::path& path, const MultiClassData& data) {
  save_tensors(path, {{"meta.multiclass", Tensor::scalar(1.0)},
                      {"train.samples", data.train_samples},
                      {"train.labels", labels_tensor(data.train_classes)},
                      {"test.samples", data.test_samples},
                      {"test.labels", labels_tensor(data.test_classes)}});
}

MultiClassData load_multiclass(const std::filesystem::path& path) {
  const auto tensors = load_tensors(path);
  MultiClassData d;
  d.train_samples = find_tensor(tensors, "train.samples").to(DType::kFloat64);
  d.train_classes = labels_from(find_tensor(tensors, "train.labels"));
  d.test_samples = find_tensor(tensors, "test.samples").to(DType::kFloat64);
  d.test_classes = labels_from(find_tensor(tensors, "test.labels"));
  return d;
}

bool is_multiclass_container(const std::filesystem::path& path) {
  for (const auto& t : load_tensors(path)) {
    if (t.name == "meta.multiclass") return true;
  }
  return false;
}

}  // namespace hsad
