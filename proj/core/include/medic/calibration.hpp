#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "medic/model.hpp"

namespace medic::calib {

/// A published parameter total and the model variant it belongs to.
struct Target {
  std::string name;
  zoo::ModelKind kind;
  std::size_t n_involutions;
  bool extra_convs;
  std::size_t expected;
};

/// Classification rows (Hybrid-1..3, CNN, INN) and segmentation rows
/// (U-Net without/with extra convolutions, Hybrid-1..3).
std::vector<Target> published_targets();

/// One point of the convention grid.
struct Trial {
  zoo::Conventions conventions;
  zoo::CountPolicy policy;
  std::size_t num_classes = 2;
  /// Count per target, same order as published_targets().
  std::vector<std::size_t> counts;
  [[nodiscard]] std::size_t hits(const std::vector<Target>& targets) const;
};

struct SearchResult {
  std::vector<Target> targets;
  std::vector<Trial> trials;
  /// Whether any trial reproduces each target exactly.
  std::vector<bool> hit;
  /// Trial with the most exact hits among classification / segmentation targets.
  std::size_t best_cls = 0;
  std::size_t best_seg = 0;
};

/// Sweeps involution bias, bottleneck normalization and width, reduction
/// ratio, pooling rounding, convolution padding, class count and whether
/// batch-norm running statistics are counted.
SearchResult search();

std::string describe(const zoo::Conventions& c, const zoo::CountPolicy& p, std::size_t num_classes);
void write_log(std::ostream& os, const SearchResult& result);

}  // namespace medic::calib
