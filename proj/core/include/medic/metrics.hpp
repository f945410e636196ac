#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "medic/tensor.hpp"

namespace medic::metrics {

enum class Averaging { macro, weighted };

/// Rows are ground truth, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);

  void add(std::size_t truth, std::size_t predicted, std::size_t count = 1);
  [[nodiscard]] std::size_t classes() const noexcept { return k_; }
  [[nodiscard]] std::size_t at(std::size_t truth, std::size_t predicted) const;
  [[nodiscard]] std::size_t total() const;
  [[nodiscard]] std::size_t true_positives(std::size_t c) const { return at(c, c); }
  [[nodiscard]] std::size_t false_positives(std::size_t c) const;
  [[nodiscard]] std::size_t false_negatives(std::size_t c) const;
  [[nodiscard]] std::size_t support(std::size_t c) const;

 private:
  std::size_t k_;
  std::vector<std::size_t> counts_;
};

struct ClassMetrics {
  std::size_t support = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

struct MetricsReport {
  std::optional<double> loss;
  std::optional<double> accuracy;
  std::optional<double> recall;
  std::optional<double> f1;
  std::optional<double> iou;
  std::optional<double> dsc;
  std::vector<ClassMetrics> per_class;

  /// "key=value" lines for every present field, per-class rows as
  /// class<k>.recall etc.
  [[nodiscard]] std::string to_text() const;
};

/// Precision/recall/F1 per class; zero denominators give 0.
ClassMetrics class_metrics(const ConfusionMatrix& cm, std::size_t c);

/// accuracy = trace / total; recall and F1 averaged over classes present in
/// the ground truth (unweighted or support-weighted).
MetricsReport classification_report(const ConfusionMatrix& cm, Averaging averaging = Averaging::macro);

std::size_t argmax_row(const Tensor& scores, std::size_t row);

/// Overlap counts of two binary masks (nonzero = foreground).
struct Overlap {
  std::size_t intersection = 0;
  std::size_t predicted = 0;
  std::size_t truth = 0;
  [[nodiscard]] std::size_t union_size() const { return predicted + truth - intersection; }
  /// |P n G| / |P u G|, 1 when both masks are empty.
  [[nodiscard]] double iou() const;
  /// 2 |P n G| / (|P| + |G|), 1 when both masks are empty.
  [[nodiscard]] double dsc() const;
};

Overlap overlap(std::span<const double> predicted, std::span<const double> truth);

/// Thresholds probs [N, H, W, 1] at `threshold` (p >= threshold is
/// foreground) and averages per-image IoU/DSC; accuracy is pixel accuracy.
MetricsReport segmentation_report(const Tensor& probs, const Tensor& masks, double threshold = 0.5);

}  // namespace medic::metrics
