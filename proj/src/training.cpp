#include "hsad/training.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

namespace hsad {

std::string to_string(RadiusUpdate mode) {
  return mode == RadiusUpdate::kFrozen ? "frozen" : "quantile_every_epoch_after_warmup";
}

RadiusUpdate radius_update_from_string(const std::string& name) {
  if (name == "frozen") return RadiusUpdate::kFrozen;
  if (name == "quantile_every_epoch_after_warmup" || name == "quantile") return RadiusUpdate::kQuantileAfterWarmup;
  throw ConfigError("unknown radius_update '" + name + "' (expected quantile_every_epoch_after_warmup or frozen)");
}

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate(KlMode kl_mode) const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (kl_mode == KlMode::kBatchMoments && batch_size < 2) {
    throw ConfigError("batch_size must be >= 2 with batch-moment KL");
  }
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite value >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(eps >= 0.0)) throw ConfigError("Adam eps must be >= 0");
  if (!(nu > 0.0 && nu <= 1.0)) throw ConfigError("nu must lie in (0, 1]");
  weights.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"pretrain_epochs", pretrain_epochs},
          {"train_epochs", train_epochs},
          {"batch_size", batch_size},
          {"lr", lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"eps", eps},
          {"lambda1", weights.lambda1},
          {"lambda2", weights.lambda2},
          {"lambda3", weights.lambda3},
          {"alpha", weights.alpha},
          {"nu", nu},
          {"radius_update", to_string(radius_update)},
          {"warmup_epochs", warmup_epochs},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, const TrainConfig& base) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  TrainConfig c = base;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "pretrain_epochs") c.pretrain_epochs = value.get<std::size_t>();
      else if (key == "train_epochs") c.train_epochs = value.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "lr") c.lr = value.get<double>();
      else if (key == "beta1") c.beta1 = value.get<double>();
      else if (key == "beta2") c.beta2 = value.get<double>();
      else if (key == "eps") c.eps = value.get<double>();
      else if (key == "lambda1") c.weights.lambda1 = value.get<double>();
      else if (key == "lambda2") c.weights.lambda2 = value.get<double>();
      else if (key == "lambda3") c.weights.lambda3 = value.get<double>();
      else if (key == "alpha") c.weights.alpha = value.get<double>();
      else if (key == "nu") c.nu = value.get<double>();
      else if (key == "radius_update") c.radius_update = radius_update_from_string(value.get<std::string>());
      else if (key == "warmup_epochs") c.warmup_epochs = value.get<std::size_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "checkpoint_every") c.checkpoint_every = value.get<std::size_t>();
      else throw ConfigError("unknown training key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad training config value: ") + e.what());
  }
  return c;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }

// ---------------------------------------------------------------------------
// Adam

OptimizerState::OptimizerState(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void OptimizerState::step(const std::vector<ParamRef>& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) throw ContractError("optimizer got mismatched parameter and gradient lists");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Tensor::zeros(p.value->shape()));
      v_.push_back(Tensor::zeros(p.value->shape()));
    }
  }
  if (m_.size() != params.size()) throw ContractError("optimizer parameter set changed between steps");
  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(beta1_, t);
  const double bc2 = 1.0 - std::pow(beta2_, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable || grads[i].empty()) continue;
    if (grads[i].shape() != params[i].value->shape()) {
      throw ShapeError("gradient for '" + params[i].name + "' has the wrong shape");
    }
    const Tensor g64 = grads[i].to(DType::kFloat64);
    auto g = g64.data<double>();
    auto m = m_[i].mutable_data<double>();
    auto v = v_[i].mutable_data<double>();
    dispatch(params[i].value->dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto p = params[i].value->mutable_data<T>();
      for (std::size_t k = 0; k < p.size(); ++k) {
        m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
        v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
        const double mhat = m[k] / bc1;
        const double vhat = v[k] / bc2;
        const double denom = std::sqrt(vhat) + eps_;
        if (denom > 0.0) p[k] = static_cast<T>(static_cast<double>(p[k]) - lr_ * mhat / denom);
      }
    });
  }
}

// ---------------------------------------------------------------------------
// Batching

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, bool merge_singleton,
                                                   Rng& rng) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  const auto order = rng.permutation(n);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t first = 0; first < n; first += batch_size) {
    const std::size_t last = std::min(n, first + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(first),
                     order.begin() + static_cast<std::ptrdiff_t>(last));
  }
  if (merge_singleton && out.size() >= 2 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back().front());
    out.pop_back();
  }
  return out;
}

namespace {

bool needs_batch_moments(const Model& model) {
  return traits(model.variant().variant).kl && model.variant().kl_mode == KlMode::kBatchMoments;
}

std::vector<Tensor> collect_grads(const Tape& tape, const std::vector<ParamRef>& params, const ForwardResult& fr) {
  std::vector<Tensor> grads(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].trainable) grads[i] = tape.grad(fr.params[i]);
  }
  return grads;
}

void require_finite(const std::optional<Var>& term, const char* name, std::size_t epoch, std::size_t batch) {
  if (term && !term->value().all_finite()) {
    throw DivergenceError(std::string(name) + " term became non-finite at epoch " + std::to_string(epoch) +
                          ", batch " + std::to_string(batch));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Training stages

PretrainResult pretrain(Model& model, const LabeledDataset& data, const TrainConfig& cfg, Rng& rng) {
  PretrainResult out;
  if (!traits(model.variant().variant).decoder) {
    if (cfg.pretrain_epochs > 0) {
      std::cerr << "warning: " << variant_name(model.variant().variant)
                << " has no decoder; skipping reconstruction pretraining\n";
    }
    out.skipped = true;
    return out;
  }
  if (cfg.pretrain_epochs == 0) return out;
  if (data.size() == 0) throw DomainError("pretraining on an empty dataset");
  OptimizerState opt = OptimizerState::from(cfg);
  auto params = model.parameters();
  for (std::size_t epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    double sum = 0.0;
    const auto batches = make_batches(data.size(), cfg.batch_size, true, rng);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      Tape tape;
      ForwardResult fr = model.forward(tape, gather_samples(data.samples, batches[b]), Mode::kTrain);
      const Var loss = rec_loss(fr.x, *fr.x_hat);
      require_finite(loss, "reconstruction (pretraining)", epoch, b);
      tape.backward(loss);
      opt.step(params, collect_grads(tape, params, fr));
      sum += loss.value().item() * static_cast<double>(batches[b].size());
    }
    out.rec_per_epoch.push_back(sum / static_cast<double>(data.size()));
  }
  return out;
}

Tensor clamp_center(const Tensor& mean) {
  Tensor c = mean.to(DType::kFloat64);
  for (auto& v : c.mutable_data<double>()) {
    if (std::abs(v) < 0.1) v = v < 0.0 ? -0.1 : 0.1;
  }
  return c;
}

Tensor init_center(Model& model, const LabeledDataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw DomainError("center initialisation on an empty dataset");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<double> acc;
  for (std::size_t first = 0; first < data.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, data.size() - first);
    Tape tape(false);
    ForwardResult fr = model.forward(tape, slice_samples(data.samples, first, count), Mode::kEval);
    const Tensor z = fr.z_hat.value().to(DType::kFloat64);
    const std::size_t d = z.dim(1);
    if (acc.empty()) acc.assign(d, 0.0);
    auto zv = z.data<double>();
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t k = 0; k < d; ++k) acc[k] += zv[i * d + k];
  }
  for (double& v : acc) v /= static_cast<double>(data.size());
  const std::size_t d = acc.size();
  return clamp_center(Tensor({d}, std::move(acc)));
}

double interpolated_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw DomainError("quantile of an empty set");
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double t = pos - static_cast<double>(lo);
  return values[lo] + t * (values[hi] - values[lo]);
}

double update_radius(const std::vector<double>& squared_distances, double nu) {
  if (!(nu > 0.0 && nu <= 1.0)) throw ConfigError("nu must lie in (0, 1]");
  return std::sqrt(interpolated_quantile(squared_distances, 1.0 - nu));
}

EpochMetrics train_epoch(Model& model, const LabeledDataset& data, const TrainConfig& cfg, HypersphereState& hs,
                         OptimizerState& opt, Rng& rng, std::size_t epoch) {
  const VariantConfig& vc = model.variant();
  const VariantTraits t = traits(vc.variant);
  if (t.svdd && hs.center.empty()) throw ContractError("train_epoch before the center is initialised");
  if (data.size() == 0) throw DomainError("training on an empty dataset");
  cfg.validate(vc.kl_mode);
  if (t.kl && vc.kl_mode == KlMode::kBatchMoments && data.size() < 2) {
    throw ContractError("batch-moment KL needs at least two training samples");
  }

  auto params = model.parameters();
  const auto batches = make_batches(data.size(), cfg.batch_size, needs_batch_moments(model), rng);
  EpochMetrics m;
  m.epoch = epoch;
  double gate_s = 0.0, gate_o = 0.0;
  std::vector<double> distances;
  distances.reserve(data.size());
  for (std::size_t b = 0; b < batches.size(); ++b) {
    Tape tape;
    ForwardResult fr = model.forward(tape, gather_samples(data.samples, batches[b]), Mode::kTrain);
    LossTerms terms{fr.z_hat, std::nullopt, fr.x_hat, fr.decay_weights};
    if (t.decoder) terms.x = fr.x;
    const LossBreakdown bd = total_loss(vc.variant, vc.boundary, terms, cfg.weights, hs, vc.kl_mode);
    require_finite(bd.svdd, "svdd", epoch, b);
    require_finite(bd.kl, "kl", epoch, b);
    require_finite(bd.rec, "reconstruction", epoch, b);
    require_finite(bd.decay, "weight decay", epoch, b);
    require_finite(bd.total, "total", epoch, b);

    if (t.svdd) {
      const Tensor d2 = squared_distances(fr.z_hat, hs.center).value().to(DType::kFloat64);
      for (double v : d2.data<double>()) distances.push_back(v);
    }
    tape.backward(bd.total);
    opt.step(params, collect_grads(tape, params, fr));

    const double w = static_cast<double>(batches[b].size());
    m.total += w * bd.total.value().item();
    if (bd.svdd) m.svdd += w * bd.svdd->value().item();
    if (bd.kl) m.kl += w * bd.kl->value().item();
    if (bd.rec) m.rec += w * bd.rec->value().item();
    if (bd.decay) m.decay += w * bd.decay->value().item();
    if (fr.gates) {
      const GateStatistics gs = gate_statistics(values_of(*fr.gates));
      gate_s += w * gs.mean_s;
      gate_o += w * gs.mean_o;
    }
  }
  const double n = static_cast<double>(data.size());
  m.total /= n;
  m.svdd /= n;
  m.kl /= n;
  m.rec /= n;
  m.decay /= n;
  if (t.lstm) {
    m.mean_gate_s = gate_s / n;
    m.mean_gate_o = gate_o / n;
  }
  if (t.svdd && vc.boundary == Boundary::kSoft && cfg.radius_update == RadiusUpdate::kQuantileAfterWarmup &&
      epoch >= cfg.warmup_epochs) {
    hs.radius = update_radius(distances, hs.nu);
  }
  m.radius = hs.radius;
  return m;
}

}  // namespace hsad
