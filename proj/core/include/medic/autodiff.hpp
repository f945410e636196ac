#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "medic/tensor.hpp"

namespace medic::ad {

class Tape;
struct Node;

/// Backward rule: given the gradient flowing into a node's output, return one
/// gradient per input (an empty Tensor means "no contribution").
using BackwardFn = std::function<std::vector<Tensor>(const Tape&, const Node&, const Tensor& grad_out)>;

struct Node {
  std::string op;
  std::vector<std::size_t> inputs;
  Tensor value;
  BackwardFn backward;
  bool requires_grad = false;
};

/// Handle to a tape node.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  [[nodiscard]] std::size_t id() const noexcept { return id_; }
  [[nodiscard]] Tape& tape() const { return *tape_; }
  [[nodiscard]] bool valid() const noexcept { return tape_ != nullptr; }
  [[nodiscard]] const Tensor& value() const;
  [[nodiscard]] const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class GradientMap {
 public:
  explicit GradientMap(const Tape& tape);

  [[nodiscard]] bool has(Var v) const;
  /// Gradient of the loss w.r.t. `v`; zeros when the loss does not depend on it.
  [[nodiscard]] Tensor at(Var v) const;
  [[nodiscard]] const Tensor* find(std::size_t id) const;

  void accumulate(std::size_t id, Tensor grad);

 private:
  const Tape* tape_;
  std::vector<Tensor> grads_;
};

/// Append-only record of a forward computation. Node ids are creation order,
/// so every node's inputs have smaller ids than the node itself.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true, std::string name = "leaf");
  Var constant(Tensor value) { return leaf(std::move(value), false, "constant"); }
  Var record(std::string op, std::vector<Var> inputs, Tensor value, BackwardFn backward);

  [[nodiscard]] const Node& node(std::size_t id) const { return nodes_.at(id); }
  [[nodiscard]] const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }
  [[nodiscard]] const Tensor& input_value(const Node& n, std::size_t slot) const {
    return nodes_.at(n.inputs.at(slot)).value;
  }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse accumulation from a scalar loss node.
  [[nodiscard]] GradientMap backward(Var loss) const;

 private:
  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient checking.

using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  [[nodiscard]] bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

/// Compares reverse-mode gradients of `fn` against central differences
///   g_fd = (f(p + eps e_i) - f(p - eps e_i)) / (2 eps)
/// over every scalar of every parameter and reports
///   max_i |g_ad - g_fd| / max(1, |g_fd|).
/// eps must lie in [1e-7, 1e-3]. Throws NumericError on non-finite values.
GradCheckResult grad_check(const ScalarFn& fn, std::vector<Tensor> params, double eps = 1e-5);

}  // namespace medic::ad
