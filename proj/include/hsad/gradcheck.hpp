#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hsad/autodiff.hpp"

namespace hsad {

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

/// Builds an output from leaves registered on `tape`, one per input tensor.
using GraphFn = std::function<Var(Tape& tape, const std::vector<Var>& leaves)>;

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Probe at most this many coordinates per input (0 = all).
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coords = 0;
  bool passed = true;
};

/// Compares backward() against central differences. A non-scalar output is
/// contracted with fixed random weights first. Inputs are used as float64.
GradCheckResult check_gradients(const std::string& name, const GraphFn& fn, const std::vector<Tensor>& inputs,
                                const GradCheckOptions& opt = {});

/// Finite-difference suites: "tensor" (every primitive, each inside
/// `graphs_per_primitive` random composed graphs), "layers", "lstm",
/// "losses", or "all".
std::vector<GradCheckResult> run_gradcheck_suite(const std::string& module, std::uint64_t seed = 0,
                                                 std::size_t graphs_per_primitive = 20);
std::vector<std::string> gradcheck_modules();

/// Worst result per name, in first-seen order.
std::vector<GradCheckResult> worst_per_name(const std::vector<GradCheckResult>& results);

}  // namespace hsad
