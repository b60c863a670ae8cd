#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hsad/autodiff.hpp"
#include "hsad/variant.hpp"

namespace hsad {

/// SVDD geometry. The center is fixed after initialisation and never a
/// gradient leaf; the radius is owned by the quantile update rule.
struct HypersphereState {
  Tensor center;        // [d]
  double radius = 0.0;  // R >= 0
  double nu = 0.1;      // in (0, 1]

  void validate() const;
};

struct LossWeights {
  double lambda1 = 0.1;   // KL
  double lambda2 = 1.0;   // reconstruction
  double lambda3 = 1e-6;  // weight decay
  double alpha = 1.0;     // IAEAD reconstruction weight

  void validate() const;
};

enum class KlMode { kPerSample, kBatchMoments };

std::string to_string(KlMode mode);
KlMode kl_mode_from_string(const std::string& name);

/// Guard inside ln(v + eps) of the batch-moment KL.
inline constexpr double kKlVarianceEps = 1e-8;

/// (1/n) * sum_i ||x_i - x_hat_i||^2 over all per-sample elements.
Var rec_loss(const Var& x, const Var& x_hat);

/// Per-sample ||z_hat_i - c||^2, shape [n].
Var squared_distances(const Var& z_hat, const Tensor& center);

/// R^2 + 1/(nu n) * sum_i max(0, ||z_hat_i - c||^2 - R^2)
Var svdd_soft(const Var& z_hat, const HypersphereState& hs);

/// (1/n) * sum_i ||z_hat_i - c||^2
Var svdd_hard(const Var& z_hat, const HypersphereState& hs);

Var svdd_loss(const Var& z_hat, const HypersphereState& hs, Boundary boundary);

/// KL penalty towards N(0, I).
///   per-sample:    (1/n) sum_i 0.5 ||z_hat_i||^2
///   batch moments: sum_d 0.5 (v_d + mu_d^2 - 1 - ln(v_d + eps)) with the
///                  per-dimension batch mean mu_d and biased variance v_d.
Var kl_loss(const Var& z_hat, KlMode mode);

/// 0.5 * sum of squared Frobenius norms.
Var weight_decay(const std::vector<Var>& weights);

/// Inputs to total_loss(). Absent members are only allowed for variants that
/// do not use them.
struct LossTerms {
  Var z_hat;
  std::optional<Var> x;
  std::optional<Var> x_hat;
  std::vector<Var> weights;  // decay set: conv / deconv / linear / LSTM matrices
};

struct LossBreakdown {
  Var total;
  std::optional<Var> svdd;
  std::optional<Var> kl;
  std::optional<Var> rec;
  std::optional<Var> decay;  // unscaled 0.5 * sum ||W||^2
};

/// Assembles the objective of `variant`:
///   svdd(boundary) + lambda1 * kl + lambda2 * rec + lambda3 * decay
/// where each term is present only if the variant has it. IAEAD weights
/// the reconstruction by alpha instead of lambda2, and the CAE objective
/// is rec + lambda3 * decay.
LossBreakdown total_loss(Variant variant, Boundary boundary, const LossTerms& terms, const LossWeights& w,
                         const HypersphereState& hs, KlMode kl_mode = KlMode::kBatchMoments);

}  // namespace hsad
