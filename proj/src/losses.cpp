#include "hsad/losses.hpp"

#include <cmath>

namespace hsad {

void HypersphereState::validate() const {
  if (!(radius >= 0.0)) throw ConfigError("hypersphere radius must be >= 0");
  if (!(nu > 0.0 && nu <= 1.0)) throw ConfigError("nu must lie in (0, 1]");
  if (center.empty() || center.rank() != 1) throw ConfigError("hypersphere center must be a vector");
}

void LossWeights::validate() const {
  if (lambda1 < 0.0 || lambda2 < 0.0 || lambda3 < 0.0 || alpha < 0.0) {
    throw ConfigError("loss weights must be non-negative");
  }
}

std::string to_string(KlMode mode) { return mode == KlMode::kPerSample ? "per_sample" : "batch_moments"; }

KlMode kl_mode_from_string(const std::string& name) {
  if (name == "per_sample") return KlMode::kPerSample;
  if (name == "batch_moments") return KlMode::kBatchMoments;
  throw ConfigError("unknown kl mode '" + name + "' (expected per_sample or batch_moments)");
}

namespace {

std::size_t batch_size(const Var& v) {
  if (v.value().rank() < 1) throw ShapeError("expected a batch");
  return v.value().dim(0);
}

std::vector<std::size_t> trailing_axes(const Var& v) {
  std::vector<std::size_t> axes;
  for (std::size_t d = 1; d < v.value().rank(); ++d) axes.push_back(d);
  return axes;
}

}  // namespace

Var rec_loss(const Var& x, const Var& x_hat) {
  require_same_shape(x.value(), x_hat.value(), "rec_loss");
  const std::size_t n = batch_size(x);
  return sum(square(x - x_hat)) * (1.0 / static_cast<double>(n));
}

Var squared_distances(const Var& z_hat, const Tensor& center) {
  const Tensor& z = z_hat.value();
  if (z.rank() != 2) throw ShapeError("z_hat must be [n, d], got " + shape_to_string(z.shape()));
  if (center.shape() != Shape{z.dim(1)}) {
    throw ShapeError("center " + shape_to_string(center.shape()) + " does not match latent width " +
                     std::to_string(z.dim(1)));
  }
  Var c = z_hat.tape().constant(center.to(z.dtype()));
  return sum(square(z_hat - c), trailing_axes(z_hat));
}

Var svdd_soft(const Var& z_hat, const HypersphereState& hs) {
  if (!(hs.nu > 0.0)) throw ConfigError("nu must be positive");
  const std::size_t n = batch_size(z_hat);
  const double r2 = hs.radius * hs.radius;
  Var hinge = sum(relu(add_scalar(squared_distances(z_hat, hs.center), -r2)));
  return add_scalar(hinge * (1.0 / (hs.nu * static_cast<double>(n))), r2);
}

Var svdd_hard(const Var& z_hat, const HypersphereState& hs) {
  return mean(squared_distances(z_hat, hs.center));
}

Var svdd_loss(const Var& z_hat, const HypersphereState& hs, Boundary boundary) {
  return boundary == Boundary::kSoft ? svdd_soft(z_hat, hs) : svdd_hard(z_hat, hs);
}

Var kl_loss(const Var& z_hat, KlMode mode) {
  const Tensor& z = z_hat.value();
  if (z.rank() != 2) throw ShapeError("kl_loss expects [n, d], got " + shape_to_string(z.shape()));
  const std::size_t n = z.dim(0);
  if (mode == KlMode::kPerSample) {
    return sum(square(z_hat)) * (0.5 / static_cast<double>(n));
  }
  if (n < 2) throw ContractError("batch-moment KL needs at least two samples");
  Var mu = mean(z_hat, {0});
  Var var = mean(square(z_hat - mu), {0});
  Var per_dim = add_scalar(var + square(mu) - log(add_scalar(var, kKlVarianceEps)), -1.0);
  return sum(per_dim) * 0.5;
}

Var weight_decay(const std::vector<Var>& weights) {
  if (weights.empty()) throw ContractError("weight_decay over an empty weight set");
  Var total = sum(square(weights.front()));
  for (std::size_t i = 1; i < weights.size(); ++i) total = total + sum(square(weights[i]));
  return total * 0.5;
}

LossBreakdown total_loss(Variant variant, Boundary boundary, const LossTerms& terms, const LossWeights& w,
                         const HypersphereState& hs, KlMode kl_mode) {
  w.validate();
  const VariantTraits t = traits(variant);
  LossBreakdown out;
  std::optional<Var> total;
  auto accumulate = [&](const Var& term, double weight) {
    Var scaled = weight == 1.0 ? term : term * weight;
    total = total ? *total + scaled : scaled;
  };

  if (t.svdd) {
    out.svdd = svdd_loss(terms.z_hat, hs, boundary);
    accumulate(*out.svdd, 1.0);
  }
  if (t.kl) {
    out.kl = kl_loss(terms.z_hat, kl_mode);
    accumulate(*out.kl, w.lambda1);
  }
  if (t.decoder) {
    if (!terms.x || !terms.x_hat) throw ContractError(variant_name(variant) + " needs x and x_hat");
    out.rec = rec_loss(*terms.x, *terms.x_hat);
    const double weight = variant == Variant::kIaead ? w.alpha : variant == Variant::kCae ? 1.0 : w.lambda2;
    accumulate(*out.rec, weight);
  }
  if (!terms.weights.empty()) {
    out.decay = weight_decay(terms.weights);
    accumulate(*out.decay, w.lambda3);
  }
  if (!total) throw ContractError("variant has no loss terms");
  out.total = *total;
  return out;
}

}  // namespace hsad
