#include "medic/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "medic/error.hpp"

namespace medic::optim {

namespace {

void check_finite(const Tensor& grad, const std::string& name) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      throw NumericError("non-finite gradient for '" + name + "' at element " + std::to_string(i));
    }
  }
}

}  // namespace

void adam_step(Tensor& param, const Tensor& grad, AdamSlot& slot, const AdamConfig& c, std::size_t t) {
  if (t == 0) throw std::invalid_argument("adam_step needs t >= 1");
  if (grad.shape() != param.shape()) throw std::invalid_argument("adam_step: gradient shape mismatch");
  check_finite(grad, "parameter");
  if (slot.m.shape() != param.shape()) {
    slot.m = Tensor::zeros_like(param);
    slot.v = Tensor::zeros_like(param);
  }
  const double td = static_cast<double>(t);
  const double c1 = 1.0 - std::pow(c.beta1, td);
  const double c2 = 1.0 - std::pow(c.beta2, td);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    slot.m[i] = c.beta1 * slot.m[i] + (1.0 - c.beta1) * g;
    slot.v[i] = c.beta2 * slot.v[i] + (1.0 - c.beta2) * g * g;
    param[i] -= c.learning_rate * (slot.m[i] / c1) / (std::sqrt(slot.v[i] / c2) + c.epsilon);
  }
}

void Adam::step(std::vector<std::pair<std::string, Tensor>>& params,
                const std::map<std::string, Tensor>& grads) {
  for (const auto& [name, g] : grads) check_finite(g, name);
  ++t_;
  for (auto& [name, value] : params) {
    const auto it = grads.find(name);
    if (it == grads.end()) continue;
    adam_step(value, it->second, slots_[name], config_, t_);
  }
}

}  // namespace medic::optim
