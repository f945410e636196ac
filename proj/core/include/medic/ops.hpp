#pragma once

// Forward and backward kernels for every layer primitive. All functions are
// pure: they never mutate their inputs (batch-norm running statistics are the
// one explicit in/out parameter). Image tensors are N x H x W x C.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "medic/rng.hpp"
#include "medic/tensor.hpp"

namespace medic::ops {

enum class Mode { train, infer };
enum class Padding { same, valid };
enum class PoolRounding { floor, ceil };

// ---------------------------------------------------------------------------
// Convolution

/// Spatial geometry of a 2-D sliding window. "same" follows the usual
/// convention: out = ceil(in / stride), total padding split with the smaller
/// half on the top/left.
struct WindowPlan {
  std::size_t in_h = 0, in_w = 0;
  std::size_t kernel_h = 0, kernel_w = 0;
  std::size_t stride = 1;
  std::size_t pad_top = 0, pad_left = 0;
  std::size_t out_h = 0, out_w = 0;
};

WindowPlan plan_window(std::size_t in_h, std::size_t in_w, std::size_t kernel_h,
                       std::size_t kernel_w, std::size_t stride, Padding padding);

/// kernel: [K_h, K_w, C_in, C_out]; bias: [C_out].
struct ConvParams {
  Tensor kernel;
  Tensor bias;
  std::size_t stride = 1;
  Padding padding = Padding::same;
};

struct ConvGrads {
  Tensor input;
  Tensor kernel;
  Tensor bias;
};

/// Lowers [N,H,W,C] patches into rows of a [N*out_h*out_w, K_h*K_w*C] matrix.
Tensor im2col(const Tensor& x, const WindowPlan& plan);
/// Scatter-adds rows produced by im2col back into an [N,H,W,C] tensor.
Tensor col2im(const Tensor& cols, std::size_t n, std::size_t channels, const WindowPlan& plan);

Tensor conv2d(const Tensor& x, const ConvParams& p);
ConvGrads conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& grad_out);

/// Transposed convolution, the adjoint of conv2d with "same" padding: output
/// spatial dims are input dims x stride. kernel: [K_h, K_w, C_out, C_in]
/// (the kernel of the conv2d it is the adjoint of).
Tensor conv2d_transpose(const Tensor& y, const ConvParams& p);
ConvGrads conv2d_transpose_backward(const Tensor& y, const ConvParams& p, const Tensor& grad_out);

// ---------------------------------------------------------------------------
// Pooling

struct PoolResult {
  Tensor output;
  /// Flat input index of each output's maximum (ties resolve to the lowest).
  std::vector<std::size_t> argmax;
};

/// Max pooling. With PoolRounding::ceil the trailing partial window is
/// treated as padded with -inf.
PoolResult maxpool2d(const Tensor& x, std::size_t window = 2, std::size_t stride = 2,
                     PoolRounding rounding = PoolRounding::floor);
Tensor maxpool2d_backward(const Tensor& grad_out, std::span<const std::size_t> argmax,
                          const Shape& input_shape);
std::size_t pooled_extent(std::size_t in, std::size_t window, std::size_t stride,
                          PoolRounding rounding);

// ---------------------------------------------------------------------------
// Batch normalization over every axis but the last (channel) one.

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  static BatchNormStats identity(std::size_t channels);
};

struct BatchNormCache {
  Tensor normalized;  // x_hat
  Tensor inv_std;     // [C]
};

struct BatchNormGrads {
  Tensor input;
  Tensor gamma;
  Tensor beta;
};

/// Train mode: normalizes with biased batch statistics and folds them into
/// `stats` as running = momentum * running + (1 - momentum) * batch.
Tensor batchnorm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       BatchNormStats& stats, BatchNormCache* cache = nullptr);
Tensor batchnorm_infer(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const BatchNormStats& stats);
BatchNormGrads batchnorm_backward(const Tensor& grad_out, const Tensor& gamma,
                                  const BatchNormCache& cache);

// ---------------------------------------------------------------------------
// Dropout

struct DropoutResult {
  Tensor output;
  /// Per-element multiplier: 0 for dropped, 1 / (1 - rate) for kept.
  Tensor mask;
};

DropoutResult dropout(const Tensor& x, double rate, Rng& rng, Mode mode);

// ---------------------------------------------------------------------------
// Dense layers and activations

/// [N, F_in] . [F_in, F_out] + [F_out]
Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias);
struct DenseGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};
DenseGrads dense_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax(const Tensor& x, std::size_t axis);

// ---------------------------------------------------------------------------
// Channel concatenation

Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end);

// ---------------------------------------------------------------------------
// Involution
//
// At each output position a kernel of K x K x G taps is generated from the
// pixel's own feature vector,
//   h(i,j) = W1 . relu(W0 . x(i,j) + b0) + b1,
// and applied over the K x K neighbourhood, shared by all C/G channels of a
// group:
//   y(i,j,k) = sum_{u,v} h(i,j,u,v,group(k)) * x(i+u-K/2, j+v-K/2, k)
// with zero padding at the borders. With stride s the kernel for output
// (i,j) is generated from input pixel (i*s, j*s).

/// Affine parameters and inference statistics for the optional batch norm
/// between the two kernel-generation projections.
struct BottleneckNorm {
  Tensor gamma;
  Tensor beta;
  BatchNormStats stats;
};

struct InvolutionParams {
  std::size_t kernel_size = 3;
  std::size_t groups = 1;
  std::size_t reduction = 1;
  std::size_t stride = 1;
  Tensor w0;  // [C, C/r]
  Tensor b0;  // [C/r]; empty when biases are disabled
  Tensor w1;  // [C/r, K*K*G]
  Tensor b1;  // [K*K*G]; empty when biases are disabled
  std::optional<BottleneckNorm> bottleneck_norm;
};

struct InvolutionResult {
  Tensor output;   // [N, H', W', C]
  Tensor kernels;  // [N, H', W', K, K, G]
};

/// Validates the (C, K, G, r) configuration; throws std::invalid_argument.
void validate_involution(std::size_t channels, std::size_t kernel_size, std::size_t groups,
                         std::size_t reduction);
/// Group owning channel k (0-based): ceil((k+1) * G / C) - 1.
std::size_t involution_group(std::size_t channel, std::size_t channels, std::size_t groups);
std::size_t strided_extent(std::size_t in, std::size_t stride);

/// Weights + biases of the kernel generator:
/// C*(C/r) + (C/r) + (C/r)*(K^2*G) + K^2*G, biases only when `with_bias`.
std::size_t involution_param_count(std::size_t channels, std::size_t kernel_size,
                                   std::size_t groups, std::size_t reduction, bool with_bias);

/// Pixels at the kernel-generation sites: [N, H', W', C].
Tensor involution_sites(const Tensor& x, std::size_t stride);
Tensor involution_sites_backward(const Tensor& grad_sites, const Shape& input_shape,
                                 std::size_t stride);

Tensor generate_involution_kernels(const Tensor& x, const InvolutionParams& p);
Tensor involution_apply(const Tensor& x, const Tensor& kernels, std::size_t kernel_size,
                        std::size_t groups, std::size_t stride);

struct InvolutionApplyGrads {
  Tensor input;
  Tensor kernels;
};
InvolutionApplyGrads involution_apply_backward(const Tensor& x, const Tensor& kernels,
                                               const Tensor& grad_out, std::size_t kernel_size,
                                               std::size_t groups, std::size_t stride);

/// Inference-mode involution (bottleneck norm, if any, uses running stats).
InvolutionResult involution2d(const Tensor& x, const InvolutionParams& p);

}  // namespace medic::ops
