#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "medic/tensor.hpp"

namespace medic {

/// Deterministic generator: std::mt19937_64 for the integer stream (bit-exact
/// across conforming standard libraries), 53-bit uniforms, Box-Muller normals.
/// The standard distributions are avoided because their output is
/// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n), unbiased.
  std::uint64_t uniform_int(std::uint64_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  bool bernoulli(double p) { return uniform() < p; }

  /// Fisher-Yates shuffle driven by uniform_int.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  /// Independent child stream; deterministic in (seed, call order).
  Rng split();

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::optional<double> spare_normal_;
};

Tensor uniform_tensor(Rng& rng, const Shape& shape, double lo, double hi);
Tensor normal_tensor(Rng& rng, const Shape& shape, double mean, double stddev);

/// He-style initialization: samples from N(0, 2 / fan_in).
Tensor normal_init(Rng& rng, const Shape& shape, std::size_t fan_in);

}  // namespace medic
