#pragma once

#include <map>
#include <string>
#include <vector>

#include "medic/tensor.hpp"

namespace medic::optim {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamSlot {
  Tensor m;
  Tensor v;
};

/// One bias-corrected Adam update at step t >= 1:
///   m = b1 m + (1 - b1) g,  v = b2 v + (1 - b2) g^2
///   p -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
/// Throws NumericError on a non-finite gradient (param is left untouched).
void adam_step(Tensor& param, const Tensor& grad, AdamSlot& slot, const AdamConfig& config,
               std::size_t t);

class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}

  /// Advances the step counter and updates every parameter that has an entry
  /// in `grads`. All gradients are validated before any parameter changes.
  void step(std::vector<std::pair<std::string, Tensor>>& params,
            const std::map<std::string, Tensor>& grads);

  [[nodiscard]] std::size_t steps() const noexcept { return t_; }
  [[nodiscard]] const AdamConfig& config() const noexcept { return config_; }
  [[nodiscard]] const std::map<std::string, AdamSlot>& slots() const noexcept { return slots_; }

 private:
  AdamConfig config_;
  std::size_t t_ = 0;
  std::map<std::string, AdamSlot> slots_;
};

}  // namespace medic::optim
