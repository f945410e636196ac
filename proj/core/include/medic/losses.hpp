#pragma once

#include <vector>

#include "medic/autodiff.hpp"

namespace medic::loss {

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before logs.
inline constexpr double kProbClamp = 1e-7;
/// Additive smoothing in the soft Dice ratio.
inline constexpr double kDiceSmoothing = 1.0;

// Plain tensor versions.
double cross_entropy(const Tensor& probs, const std::vector<std::size_t>& labels);
double bce(const Tensor& probs, const Tensor& masks);
double dice_loss(const Tensor& probs, const Tensor& masks);

/// Mean over rows of -log p[n, label_n]; probs [N, num_classes].
ad::Var cross_entropy(ad::Var probs, const std::vector<std::size_t>& labels);
/// Same loss evaluated from pre-softmax scores (numerically stable fusion).
ad::Var softmax_cross_entropy(ad::Var logits, const std::vector<std::size_t>& labels);
/// Mean of -(m log p + (1 - m) log(1 - p)) over all elements.
ad::Var bce(ad::Var probs, const Tensor& masks);
/// Same loss from pre-sigmoid scores.
ad::Var sigmoid_bce(ad::Var logits, const Tensor& masks);
/// 1 - (2 sum(p m) + s) / (sum(p) + sum(m) + s), pooled over the batch.
ad::Var dice_loss(ad::Var probs, const Tensor& masks);

}  // namespace medic::loss
