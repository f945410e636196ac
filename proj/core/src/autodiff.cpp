#include "medic/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "medic/error.hpp"

namespace medic::ad {

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("value() on an unbound Var");
  return tape_->value(*this);
}

GradientMap::GradientMap(const Tape& tape) : tape_(&tape), grads_(tape.size()) {}

bool GradientMap::has(Var v) const { return v.id() < grads_.size() && !grads_[v.id()].empty(); }

Tensor GradientMap::at(Var v) const {
  if (has(v)) return grads_[v.id()];
  return Tensor::zeros_like(tape_->value(v));
}

const Tensor* GradientMap::find(std::size_t id) const {
  if (id >= grads_.size() || grads_[id].empty()) return nullptr;
  return &grads_[id];
}

void GradientMap::accumulate(std::size_t id, Tensor grad) {
  auto& slot = grads_.at(id);
  if (grad.shape() != tape_->node(id).value.shape()) {
    throw std::logic_error("gradient shape " + shape_to_string(grad.shape()) +
                           " does not match value shape " +
                           shape_to_string(tape_->node(id).value.shape()) + " for op '" +
                           tape_->node(id).op + "'");
  }
  if (slot.empty()) {
    slot = std::move(grad);
  } else {
    medic::accumulate(slot, grad);
  }
}

Var Tape::leaf(Tensor value, bool requires_grad, std::string name) {
  if (value.empty()) throw std::invalid_argument("tape leaf requires a non-empty tensor");
  nodes_.push_back(Node{std::move(name), {}, std::move(value), nullptr, requires_grad});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string op, std::vector<Var> inputs, Tensor value, BackwardFn backward) {
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  n.backward = std::move(backward);
  for (const auto& in : inputs) {
    if (&in.tape() != this) throw std::invalid_argument("input Var belongs to another tape");
    n.inputs.push_back(in.id());
    n.requires_grad = n.requires_grad || nodes_.at(in.id()).requires_grad;
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

GradientMap Tape::backward(Var loss) const {
  const Node& root = nodes_.at(loss.id());
  if (root.value.size() != 1) {
    throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                shape_to_string(root.value.shape()));
  }
  GradientMap grads(*this);
  grads.accumulate(loss.id(), Tensor::full(root.value.shape(), 1.0));

  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    const Tensor* g = grads.find(id);
    if (!g || n.inputs.empty() || !n.requires_grad) continue;
    if (!n.backward) throw std::logic_error("no backward rule registered for op '" + n.op + "'");
    std::vector<Tensor> in_grads = n.backward(*this, n, *g);
    if (in_grads.size() != n.inputs.size()) {
      throw std::logic_error("backward rule for '" + n.op + "' returned wrong arity");
    }
    for (std::size_t slot = 0; slot < n.inputs.size(); ++slot) {
      if (in_grads[slot].empty()) continue;
      if (!nodes_[n.inputs[slot]].requires_grad) continue;
      grads.accumulate(n.inputs[slot], std::move(in_grads[slot]));
    }
  }
  return grads;
}

namespace {

double evaluate(const ScalarFn& fn, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.leaf(p, true, "param"));
  const Var out = fn(tape, vars);
  const double v = out.value().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
  return v;
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& fn, std::vector<Tensor> params, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-3]");
  }

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(tape.leaf(p, true, "param"));
    const Var out = fn(tape, vars);
    if (!std::isfinite(out.value().item())) throw NumericError("grad_check: non-finite loss");
    const GradientMap grads = tape.backward(out);
    for (const auto& v : vars) analytic.push_back(grads.at(v));
  }

  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double saved = params[p][i];
      params[p][i] = saved + eps;
      const double plus = evaluate(fn, params);
      params[p][i] = saved - eps;
      const double minus = evaluate(fn, params);
      params[p][i] = saved;

      const double fd = (plus - minus) / (2.0 * eps);
      const double ad = analytic[p][i];
      if (!std::isfinite(ad)) throw NumericError("grad_check: non-finite analytic gradient");
      const double rel = std::abs(ad - fd) / std::max(1.0, std::abs(fd));
      if (rel > result.max_rel_error || result.checked == 0) {
        if (rel >= result.max_rel_error) {
          result.max_rel_error = rel;
          result.worst_param = p;
          result.worst_index = i;
        }
      }
      ++result.checked;
    }
  }
  return result;
}

}  // namespace medic::ad
