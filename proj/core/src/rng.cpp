#include "medic/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace medic {

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_int requires n > 0");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v = engine_();
  while (v >= limit) v = engine_();
  return v % n;
}

double Rng::normal() {
  if (spare_normal_) {
    const double v = *spare_normal_;
    spare_normal_.reset();
    return v;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_normal_ = radius * std::sin(angle);
  return radius * std::cos(angle);
}

Rng Rng::split() {
  // splitmix64 finalizer over the next raw draw
  std::uint64_t z = engine_() + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return Rng(z ^ (z >> 31));
}

Tensor uniform_tensor(Rng& rng, const Shape& shape, double lo, double hi) {
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor normal_tensor(Rng& rng, const Shape& shape, double mean, double stddev) {
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.normal(mean, stddev);
  return t;
}

Tensor normal_init(Rng& rng, const Shape& shape, std::size_t fan_in) {
  if (fan_in == 0) throw std::invalid_argument("normal_init: fan_in must be >= 1");
  return normal_tensor(rng, shape, 0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

}  // namespace medic
