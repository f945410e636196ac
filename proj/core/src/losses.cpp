#include "medic/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "medic/ops.hpp"

namespace medic::loss {

using ad::Node;
using ad::Tape;
using ad::Var;

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

void check_labels(const Tensor& probs, const std::vector<std::size_t>& labels) {
  if (probs.rank() != 2) throw std::invalid_argument("cross_entropy expects [N, num_classes] scores");
  if (labels.size() != probs.dim(0)) throw std::invalid_argument("cross_entropy: label count mismatch");
  for (auto l : labels)
    if (l >= probs.dim(1)) throw std::invalid_argument("cross_entropy: label out of range");
}

void check_masks(const Tensor& probs, const Tensor& masks, const char* who) {
  if (probs.shape() != masks.shape()) {
    throw std::invalid_argument(std::string(who) + ": shape " + shape_to_string(probs.shape()) +
                                " vs mask " + shape_to_string(masks.shape()));
  }
}

struct DiceSums {
  double inter = 0, p = 0, m = 0;
};

DiceSums dice_sums(const Tensor& probs, const Tensor& masks) {
  DiceSums s;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    s.inter += probs[i] * masks[i];
    s.p += probs[i];
    s.m += masks[i];
  }
  return s;
}

}  // namespace

double cross_entropy(const Tensor& probs, const std::vector<std::size_t>& labels) {
  check_labels(probs, labels);
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total -= std::log(clamp_prob(probs[i * k + labels[i]]));
  return total / static_cast<double>(n);
}

double bce(const Tensor& probs, const Tensor& masks) {
  check_masks(probs, masks, "bce");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = clamp_prob(probs[i]);
    total -= masks[i] * std::log(p) + (1.0 - masks[i]) * std::log(1.0 - p);
  }
  return total / static_cast<double>(probs.size());
}

double dice_loss(const Tensor& probs, const Tensor& masks) {
  check_masks(probs, masks, "dice_loss");
  const DiceSums s = dice_sums(probs, masks);
  return 1.0 - (2.0 * s.inter + kDiceSmoothing) / (s.p + s.m + kDiceSmoothing);
}

Var cross_entropy(Var probs, const std::vector<std::size_t>& labels) {
  const Tensor& p = probs.value();
  check_labels(p, labels);
  auto lab = std::make_shared<std::vector<std::size_t>>(labels);
  return probs.tape().record(
      "cross_entropy", {probs}, Tensor::scalar(cross_entropy(p, labels)),
      [lab](const Tape& t, const Node& n, const Tensor& g) {
        const Tensor& in = t.input_value(n, 0);
        const std::size_t rows = in.dim(0), k = in.dim(1);
        Tensor gi(in.shape());
        for (std::size_t i = 0; i < rows; ++i) {
          const double v = in[i * k + (*lab)[i]];
          if (v > kProbClamp && v < 1.0 - kProbClamp)
            gi[i * k + (*lab)[i]] = -g.item() / (v * static_cast<double>(rows));
        }
        return std::vector<Tensor>{std::move(gi)};
      });
}

Var softmax_cross_entropy(Var logits, const std::vector<std::size_t>& labels) {
  const Tensor& z = logits.value();
  check_labels(z, labels);
  auto probs = std::make_shared<Tensor>(ops::softmax(z, 1));
  const std::size_t rows = z.dim(0), k = z.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    // log softmax via the log-sum-exp of the row.
    double mx = z[i * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, z[i * k + j]);
    double se = 0.0;
    for (std::size_t j = 0; j < k; ++j) se += std::exp(z[i * k + j] - mx);
    total -= z[i * k + labels[i]] - mx - std::log(se);
  }
  auto lab = std::make_shared<std::vector<std::size_t>>(labels);
  return logits.tape().record(
      "softmax_cross_entropy", {logits}, Tensor::scalar(total / static_cast<double>(rows)),
      [probs, lab](const Tape&, const Node&, const Tensor& g) {
        const std::size_t r = probs->dim(0), c = probs->dim(1);
        Tensor gi = *probs;
        for (std::size_t i = 0; i < r; ++i) gi[i * c + (*lab)[i]] -= 1.0;
        const double scale = g.item() / static_cast<double>(r);
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] *= scale;
        return std::vector<Tensor>{std::move(gi)};
      });
}

Var bce(Var probs, const Tensor& masks) {
  check_masks(probs.value(), masks, "bce");
  auto m = std::make_shared<Tensor>(masks);
  return probs.tape().record(
      "bce", {probs}, Tensor::scalar(bce(probs.value(), masks)),
      [m](const Tape& t, const Node& n, const Tensor& g) {
        const Tensor& in = t.input_value(n, 0);
        Tensor gi(in.shape());
        const double scale = g.item() / static_cast<double>(in.size());
        for (std::size_t i = 0; i < in.size(); ++i) {
          const double p = in[i];
          if (p > kProbClamp && p < 1.0 - kProbClamp)
            gi[i] = scale * (-(*m)[i] / p + (1.0 - (*m)[i]) / (1.0 - p));
        }
        return std::vector<Tensor>{std::move(gi)};
      });
}

Var sigmoid_bce(Var logits, const Tensor& masks) {
  const Tensor& z = logits.value();
  check_masks(z, masks, "sigmoid_bce");
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    // -(m log s(z) + (1-m) log(1-s(z))) = max(z,0) - m z + log(1 + e^{-|z|})
    total += std::max(z[i], 0.0) - masks[i] * z[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  auto m = std::make_shared<Tensor>(masks);
  return logits.tape().record(
      "sigmoid_bce", {logits}, Tensor::scalar(total / static_cast<double>(z.size())),
      [m](const Tape& t, const Node& n, const Tensor& g) {
        const Tensor s = ops::sigmoid(t.input_value(n, 0));
        Tensor gi(s.shape());
        const double scale = g.item() / static_cast<double>(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) gi[i] = scale * (s[i] - (*m)[i]);
        return std::vector<Tensor>{std::move(gi)};
      });
}

Var dice_loss(Var probs, const Tensor& masks) {
  check_masks(probs.value(), masks, "dice_loss");
  auto m = std::make_shared<Tensor>(masks);
  return probs.tape().record(
      "dice_loss", {probs}, Tensor::scalar(dice_loss(probs.value(), masks)),
      [m](const Tape& t, const Node& n, const Tensor& g) {
        const Tensor& in = t.input_value(n, 0);
        const DiceSums s = dice_sums(in, *m);
        const double num = 2.0 * s.inter + kDiceSmoothing;
        const double den = s.p + s.m + kDiceSmoothing;
        Tensor gi(in.shape());
        for (std::size_t i = 0; i < in.size(); ++i)
          gi[i] = -g.item() * (2.0 * (*m)[i] * den - num) / (den * den);
        return std::vector<Tensor>{std::move(gi)};
      });
}

}  // namespace medic::loss
