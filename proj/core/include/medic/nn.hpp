#pragma once

// Tape-recording versions of tensor-core and layer operations. Each function
// computes its forward value with the kernels in ops.hpp and registers the
// matching backward rule on the tape.

#include <optional>

#include "medic/autodiff.hpp"
#include "medic/ops.hpp"
#include "medic/rng.hpp"

namespace medic::nn {

using ad::Tape;
using ad::Var;

// Arithmetic
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var sum(Var x);
Var mean(Var x);
Var matmul(Var a, Var b);
Var reshape(Var x, Shape shape);
Var log(Var x);
/// max(x, lo) elementwise; gradient is zero where the clamp is active.
Var clamp_min(Var x, double lo);
Var clamp(Var x, double lo, double hi);
/// Element x[flat] as a {1} tensor.
Var pick(Var x, std::size_t flat);
/// Mean of the elements of x where mask != 0 (mask has x's shape).
Var masked_mean(Var x, const Tensor& mask);

// Activations
Var relu(Var x);
Var sigmoid(Var x);
Var softmax(Var x, std::size_t axis);

// Layers
Var dense(Var x, Var weight, std::optional<Var> bias);
Var conv2d(Var x, Var kernel, std::optional<Var> bias, std::size_t stride = 1,
           ops::Padding padding = ops::Padding::same);
Var conv2d_transpose(Var x, Var kernel, std::optional<Var> bias, std::size_t stride = 2);
Var maxpool2d(Var x, std::size_t window = 2, std::size_t stride = 2,
              ops::PoolRounding rounding = ops::PoolRounding::floor);
/// Train mode normalizes with batch moments and, when `update` is given,
/// writes `stats` folded with those moments into it. Infer mode uses `stats`.
Var batchnorm(Var x, Var gamma, Var beta, const ops::BatchNormStats& stats, ops::Mode mode,
              ops::BatchNormStats* update = nullptr);
Var dropout(Var x, double rate, Rng& rng, ops::Mode mode);
Var concat_channels(Var a, Var b);

// Involution

struct InvolutionVars {
  Var w0;
  std::optional<Var> b0;
  Var w1;
  std::optional<Var> b1;
  /// Present when the kernel generator normalizes its bottleneck.
  std::optional<Var> norm_gamma;
  std::optional<Var> norm_beta;
  const ops::BatchNormStats* norm_stats = nullptr;
  ops::BatchNormStats* norm_update = nullptr;
};

struct InvolutionShape {
  std::size_t kernel_size = 3;
  std::size_t groups = 1;
  std::size_t stride = 1;
};

struct InvolutionOutputs {
  Var output;
  /// Generated kernels [N, H', W', K, K, G].
  Var kernels;
};

Var involution_sites(Var x, std::size_t stride);
Var involution_apply(Var x, Var kernels, const InvolutionShape& shape);
InvolutionOutputs involution2d(Var x, const InvolutionVars& params, const InvolutionShape& shape,
                               ops::Mode mode = ops::Mode::train);

}  // namespace medic::nn
