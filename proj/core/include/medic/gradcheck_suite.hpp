#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "medic/autodiff.hpp"

namespace medic::gradcheck {

inline constexpr double kTolerance = 1e-4;
inline constexpr double kStep = 1e-6;

/// Names of the checked operations.
std::vector<std::string> op_names();

/// Finite-difference check of one operation on seeded random inputs. Inputs
/// are redrawn until every ReLU pre-activation and max-pool window is at
/// least a margin away from its kink.
ad::GradCheckResult check_op(const std::string& op, std::uint64_t seed, double eps = kStep);

struct Entry {
  std::string op;
  std::uint64_t seed;
  ad::GradCheckResult result;
  [[nodiscard]] bool passed() const { return result.passed(kTolerance); }
};

std::vector<Entry> run_suite(const std::vector<std::uint64_t>& seeds,
                             const std::vector<std::string>& ops = op_names());

}  // namespace medic::gradcheck
