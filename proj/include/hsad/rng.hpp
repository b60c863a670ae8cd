#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace hsad {

/// Deterministic random source.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The standard library distributions are not (their algorithms are
/// implementation-defined), so uniform and normal variates are derived here:
/// uniform() takes the top 53 bits of one draw, normal() uses the Box-Muller
/// transform and caches the second variate.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);
  /// `k` distinct indices from 0..n-1, in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  /// Independent stream derived from this generator's seed and `stream`.
  Rng fork(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace hsad
