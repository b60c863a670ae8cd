#include "hsad/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace hsad {

std::vector<double> latent_scores(const Tensor& z_hat, const Tensor& center) {
  if (z_hat.rank() != 2 || center.shape() != Shape{z_hat.dim(1)}) {
    throw ShapeError("latent_scores needs z_hat [n, d] and center [d]");
  }
  const Tensor z = z_hat.to(DType::kFloat64), c = center.to(DType::kFloat64);
  auto zv = z.data<double>();
  auto cv = c.data<double>();
  const std::size_t n = z.dim(0), d = z.dim(1);
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = zv[i * d + k] - cv[k];
      out[i] += diff * diff;
    }
  }
  return out;
}

ScoredBatch score(Model& model, const HypersphereState* hs, const LabeledDataset& data, std::size_t batch_size) {
  const bool svdd = traits(model.variant().variant).svdd;
  if (svdd && (hs == nullptr || hs->center.empty())) throw ContractError("scoring an SVDD model needs its center");
  ScoredBatch out;
  out.labels = data.labels;
  for (std::size_t first = 0; first < data.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, data.size() - first);
    Tape tape(false);
    ForwardResult fr = model.forward(tape, slice_samples(data.samples, first, count), Mode::kEval);
    if (svdd) {
      const auto s = latent_scores(fr.z_hat.value(), hs->center);
      out.scores.insert(out.scores.end(), s.begin(), s.end());
    } else {
      const Tensor x = fr.x.value().to(DType::kFloat64), xh = fr.x_hat->value().to(DType::kFloat64);
      auto xv = x.data<double>();
      auto hv = xh.data<double>();
      const std::size_t per = x.size() / count;
      for (std::size_t i = 0; i < count; ++i) {
        double e = 0.0;
        for (std::size_t k = 0; k < per; ++k) {
          const double diff = xv[i * per + k] - hv[i * per + k];
          e += diff * diff;
        }
        out.scores.push_back(e);
      }
    }
  }
  return out;
}

namespace {

/// 1-based average ranks.
std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

AurocReport auroc(const ScoredBatch& sb) {
  if (sb.scores.size() != sb.labels.size()) throw ShapeError("scores and labels differ in length");
  AurocReport r;
  for (std::size_t i = 0; i < sb.scores.size(); ++i) {
    if (!std::isfinite(sb.scores[i])) throw DomainError("non-finite anomaly score");
    if (sb.labels[i] == 1) ++r.n_pos;
    else if (sb.labels[i] == 0) ++r.n_neg;
    else throw DomainError("labels must be 0 or 1");
  }
  if (r.n_pos == 0 || r.n_neg == 0) throw DomainError("AUROC is undefined with a single class");

  const auto ranks = average_ranks(sb.scores);
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (sb.labels[i] == 1) pos_rank_sum += ranks[i];
  }
  const double np = static_cast<double>(r.n_pos), nn = static_cast<double>(r.n_neg);
  r.auroc = (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);

  std::map<double, std::pair<std::size_t, std::size_t>> groups;
  for (std::size_t i = 0; i < sb.scores.size(); ++i) {
    auto& g = groups[sb.scores[i]];
    (sb.labels[i] == 1 ? g.first : g.second) += 1;
  }
  for (const auto& [s, g] : groups) r.ties += g.first * g.second;
  return r;
}

EpochCurve epoch_curve(const std::vector<double>& auroc_per_epoch) {
  if (auroc_per_epoch.empty()) throw DomainError("epoch curve needs at least one epoch");
  EpochCurve c;
  for (std::size_t i = 0; i < auroc_per_epoch.size(); ++i) c.rows.emplace_back(i + 1, auroc_per_epoch[i]);
  if (auroc_per_epoch.size() >= 2) {
    const std::size_t k = std::min<std::size_t>(10, auroc_per_epoch.size());
    const auto first = auroc_per_epoch.end() - static_cast<std::ptrdiff_t>(k);
    // Shifted by the first value so a constant curve gives exactly zero.
    const double shift = *first;
    double s1 = 0.0, s2 = 0.0;
    for (auto it = first; it != auroc_per_epoch.end(); ++it) s1 += *it - shift;
    const double mean = s1 / static_cast<double>(k);
    for (auto it = first; it != auroc_per_epoch.end(); ++it) s2 += (*it - shift - mean) * (*it - shift - mean);
    c.stability = std::sqrt(s2 / static_cast<double>(k));
  }
  return c;
}

std::string format_number(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

namespace {

std::ofstream open_report(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  return f;
}

std::string optional_number(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

}  // namespace

void write_epoch_curve_csv(const std::filesystem::path& path, const EpochCurve& curve) {
  auto f = open_report(path);
  f << "epoch,auroc\n";
  for (const auto& [e, a] : curve.rows) f << e << ',' << format_number(a) << '\n';
  f << "# stability," << optional_number(curve.stability) << '\n';
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DomainError("spearman needs two equal-length series of >= 2");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

std::string metrics_csv_header() { return "epoch,total,svdd,kl,rec,decay,R,mean_gate_s,mean_gate_o,val_auroc"; }

std::string metrics_csv_row(const EpochMetrics& m) {
  std::ostringstream ss;
  ss << m.epoch << ',' << format_number(m.total) << ',' << format_number(m.svdd) << ',' << format_number(m.kl) << ','
     << format_number(m.rec) << ',' << format_number(m.decay) << ',' << format_number(m.radius) << ','
     << optional_number(m.mean_gate_s) << ',' << optional_number(m.mean_gate_o) << ',' << optional_number(m.val_auroc);
  return ss.str();
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& rows) {
  auto f = open_report(path);
  f << metrics_csv_header() << '\n';
  for (const auto& m : rows) f << metrics_csv_row(m) << '\n';
}

void write_auroc_by_class_csv(const std::filesystem::path& path, const std::vector<ClassAuroc>& rows) {
  auto f = open_report(path);
  f << "variant,normal_class,seed,auroc\n";
  for (const auto& r : rows) f << r.variant << ',' << r.normal_class << ',' << r.seed << ',' << format_number(r.auroc) << '\n';
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
  auto f = open_report(path);
  f << "variant,rho,n_runs,mean_auroc,std_auroc\n";
  for (const auto& r : rows) {
    double ss = 0.0;
    for (double a : r.aurocs) ss += (a - r.mean_auroc) * (a - r.mean_auroc);
    const double sd = r.aurocs.empty() ? 0.0 : std::sqrt(ss / static_cast<double>(r.aurocs.size()));
    f << r.variant << ',' << format_number(r.rho) << ',' << r.aurocs.size() << ',' << format_number(r.mean_auroc)
      << ',' << format_number(sd) << '\n';
  }
}

void write_sweep_dat(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
  std::vector<std::string> variants;
  std::vector<double> rhos;
  for (const auto& r : rows) {
    if (std::find(variants.begin(), variants.end(), r.variant) == variants.end()) variants.push_back(r.variant);
    if (std::find(rhos.begin(), rhos.end(), r.rho) == rhos.end()) rhos.push_back(r.rho);
  }
  auto f = open_report(path);
  f << "# rho";
  for (const auto& v : variants) f << ' ' << v;
  f << '\n';
  for (double rho : rhos) {
    f << format_number(rho);
    for (const auto& v : variants) {
      auto it = std::find_if(rows.begin(), rows.end(), [&](const SweepRow& r) { return r.variant == v && r.rho == rho; });
      f << ' ' << (it == rows.end() ? std::string("nan") : format_number(it->mean_auroc));
    }
    f << '\n';
  }
}

}  // namespace hsad
