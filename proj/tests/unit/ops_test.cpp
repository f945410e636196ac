#include <gtest/gtest.h>

#include <cmath>

#include "medic/ops.hpp"
#include "medic/rng.hpp"
#include "oracles.hpp"

using namespace medic;
using namespace medic::ops;

namespace {

InvolutionParams random_involution(Rng& rng, std::size_t c, std::size_t k, std::size_t g,
                                   std::size_t r, std::size_t stride = 1) {
  InvolutionParams p;
  p.kernel_size = k;
  p.groups = g;
  p.reduction = r;
  p.stride = stride;
  p.w0 = normal_tensor(rng, {c, c / r}, 0, 0.7);
  p.b0 = normal_tensor(rng, {c / r}, 0, 0.3);
  p.w1 = normal_tensor(rng, {c / r, k * k * g}, 0, 0.7);
  p.b1 = normal_tensor(rng, {k * k * g}, 0, 0.3);
  return p;
}

}  // namespace

// ============================================================================
// Involution
// ============================================================================

TEST(InvolutionTest, CenterDeltaKernelIsIdentity) {
  Rng rng(1);
  const std::size_t c = 4, k = 3;
  InvolutionParams p;
  p.kernel_size = k;
  p.groups = 1;
  p.reduction = 2;
  p.w0 = Tensor::zeros({c, 2});
  p.b0 = Tensor::zeros({2});
  p.w1 = Tensor::zeros({2, k * k});
  p.b1 = Tensor::zeros({k * k});
  p.b1[4] = 1.0;
  const Tensor x = normal_tensor(rng, {2, 5, 6, c}, 0, 1);
  EXPECT_EQ(involution2d(x, p).output, x);
}

TEST(InvolutionTest, ZeroKernelGivesZeros) {
  Rng rng(2);
  InvolutionParams p = random_involution(rng, 2, 3, 1, 1);
  p.w1 = Tensor::zeros(p.w1.shape());
  p.b1 = Tensor::zeros(p.b1.shape());
  const Tensor x = normal_tensor(rng, {1, 4, 4, 2}, 0, 1);
  EXPECT_EQ(involution2d(x, p).output, Tensor::zeros(x.shape()));
}

TEST(InvolutionTest, MatchesNestedLoopOracle) {
  Rng rng(11);
  const InvolutionParams p = random_involution(rng, 2, 3, 1, 2);
  const Tensor x = normal_tensor(rng, {1, 5, 5, 2}, 0, 1);
  const auto fast = involution2d(x, p);
  const auto slow = oracle::involution(x, p.w0, p.b0, p.w1, p.b1, 3, 1, 1);
  EXPECT_LT(oracle::max_abs_diff(fast.output, slow.output), 1e-10);
  EXPECT_LT(oracle::max_abs_diff(fast.kernels, slow.kernels), 1e-10);
}

TEST(InvolutionTest, StrideAndGroupsMatchOracle) {
  Rng rng(12);
  const InvolutionParams p = random_involution(rng, 4, 5, 2, 2, 2);
  const Tensor x = normal_tensor(rng, {2, 7, 6, 4}, 0, 1);
  const auto fast = involution2d(x, p);
  ASSERT_EQ(fast.output.shape(), (Shape{2, 4, 3, 4}));
  const auto slow = oracle::involution(x, p.w0, p.b0, p.w1, p.b1, 5, 2, 2);
  EXPECT_LT(oracle::max_abs_diff(fast.output, slow.output), 1e-10);
}

TEST(InvolutionTest, BottleneckNormMatchesOracle) {
  Rng rng(13);
  InvolutionParams p = random_involution(rng, 3, 3, 1, 1);
  BottleneckNorm norm{uniform_tensor(rng, {3}, 0.5, 1.5), normal_tensor(rng, {3}, 0, 0.3),
                      {normal_tensor(rng, {3}, 0, 0.3), uniform_tensor(rng, {3}, 0.5, 2.0)}};
  p.bottleneck_norm = norm;
  const Tensor x = normal_tensor(rng, {1, 4, 5, 3}, 0, 1);
  oracle::Norm on{norm.gamma.values(), norm.beta.values(), norm.stats.running_mean.values(),
                  norm.stats.running_var.values(), kBatchNormEps};
  const auto slow = oracle::involution(x, p.w0, p.b0, p.w1, p.b1, 3, 1, 1, on);
  EXPECT_LT(oracle::max_abs_diff(involution2d(x, p).output, slow.output), 1e-10);
}

TEST(InvolutionTest, InvalidConfigurationsThrow) {
  EXPECT_THROW(validate_involution(4, 2, 1, 1), std::invalid_argument);
  EXPECT_THROW(validate_involution(4, 3, 3, 1), std::invalid_argument);
  EXPECT_THROW(validate_involution(4, 3, 1, 3), std::invalid_argument);
  EXPECT_NO_THROW(validate_involution(4, 1, 2, 4));
}

TEST(InvolutionTest, GroupMapCoversChannelsEvenly) {
  EXPECT_EQ(involution_group(0, 4, 2), 0u);
  EXPECT_EQ(involution_group(1, 4, 2), 0u);
  EXPECT_EQ(involution_group(2, 4, 2), 1u);
  EXPECT_EQ(involution_group(3, 4, 2), 1u);
  EXPECT_EQ(involution_group(5, 6, 1), 0u);
}

TEST(InvolutionTest, ParameterCountByEnumeration) {
  // W0 [2,1] + b0 [1] + W1 [1,9] + b1 [9]
  EXPECT_EQ(involution_param_count(2, 3, 1, 2, true), 21u);
  // W0 [4,1] + W1 [1,9]
  EXPECT_EQ(involution_param_count(4, 3, 1, 4, false), 13u);
  for (std::size_t c : {1u, 2u, 6u}) EXPECT_EQ(involution_param_count(c, 1, 1, c, false), c + 1);
}

// ============================================================================
// Convolution
// ============================================================================

TEST(ConvTest, UnitKernelIsIdentity) {
  Rng rng(3);
  const Tensor x = normal_tensor(rng, {1, 4, 4, 1}, 0, 1);
  EXPECT_EQ(conv2d(x, {Tensor::full({1, 1, 1, 1}, 1.0), Tensor::zeros({1}), 1, Padding::same}), x);
}

TEST(ConvTest, ZeroKernelGivesBias) {
  Rng rng(3);
  const Tensor x = normal_tensor(rng, {1, 4, 4, 2}, 0, 1);
  const Tensor y = conv2d(x, {Tensor::zeros({3, 3, 2, 1}), Tensor::from({0.25}), 1, Padding::same});
  EXPECT_EQ(y, Tensor::full({1, 4, 4, 1}, 0.25));
}

TEST(ConvTest, MatchesLoopOracle) {
  Rng rng(3);
  const Tensor x = normal_tensor(rng, {1, 4, 4, 1}, 0, 1);
  const Tensor k = normal_tensor(rng, {3, 3, 1, 1}, 0, 1);
  const Tensor b = Tensor::from({0.1});
  EXPECT_LT(oracle::max_abs_diff(conv2d(x, {k, b, 1, Padding::same}), oracle::conv2d(x, k, b, 1, true)),
            1e-10);
}

TEST(ConvTest, WideAndStridedMatchOracle) {
  Rng rng(4);
  for (std::size_t cin : {3u, 5u, 16u}) {
    for (std::size_t cout : {1u, 2u, 4u, 7u}) {
      for (std::size_t stride : {1u, 2u}) {
        const Tensor x = normal_tensor(rng, {2, 7, 6, cin}, 0, 1);
        const Tensor k = normal_tensor(rng, {3, 3, cin, cout}, 0, 1);
        const Tensor b = normal_tensor(rng, {cout}, 0, 1);
        for (bool same : {true, false}) {
          const Tensor y = conv2d(x, {k, b, stride, same ? Padding::same : Padding::valid});
          EXPECT_LT(oracle::max_abs_diff(y, oracle::conv2d(x, k, b, stride, same)), 1e-10)
              << "cin " << cin << " cout " << cout << " stride " << stride << " same " << same;
        }
      }
    }
  }
}

TEST(ConvTest, BackwardMatchesAdjointOfForward) {
  // <dY, conv(X)> is linear in X and in K: its gradients are dX and dK.
  Rng rng(6);
  const Tensor x = normal_tensor(rng, {2, 5, 5, 3}, 0, 1);
  const Tensor k = normal_tensor(rng, {3, 3, 3, 4}, 0, 1);
  const Tensor b = Tensor::zeros({4});
  const ConvParams p{k, b, 1, Padding::same};
  const Tensor dy = normal_tensor(rng, {2, 5, 5, 4}, 0, 1);
  const ConvGrads g = conv2d_backward(x, p, dy);
  const Tensor x2 = normal_tensor(rng, x.shape(), 0, 1);
  EXPECT_NEAR(dot(g.input, x2), dot(dy, conv2d(x2, p)), 1e-9);
  const Tensor k2 = normal_tensor(rng, k.shape(), 0, 1);
  EXPECT_NEAR(dot(g.kernel, k2), dot(dy, conv2d(x, {k2, b, 1, Padding::same})), 1e-9);
  double bias_grad = 0;
  for (double v : dy.values()) bias_grad += v;
  EXPECT_NEAR(sum(g.bias).item(), bias_grad, 1e-9);
}

TEST(ConvTransposeTest, IsAdjointOfConv) {
  Rng rng(5);
  const Tensor k = normal_tensor(rng, {2, 2, 3, 4}, 0, 1);
  const Tensor x = normal_tensor(rng, {2, 6, 6, 3}, 0, 1);
  const Tensor y = normal_tensor(rng, {2, 3, 3, 4}, 0, 1);
  const ConvParams p{k, Tensor::zeros({3}), 2, Padding::same};
  const ConvParams pc{k, Tensor::zeros({4}), 2, Padding::same};
  EXPECT_NEAR(dot(conv2d(x, pc), y), dot(x, conv2d_transpose(y, p)), 1e-9);
}

TEST(ConvTransposeTest, ZeroInputAndUnitKernel) {
  Rng rng(5);
  const Tensor k = normal_tensor(rng, {2, 2, 3, 4}, 0, 1);
  EXPECT_EQ(conv2d_transpose(Tensor::zeros({1, 2, 2, 4}), {k, Tensor::zeros({3}), 2, Padding::same}),
            Tensor::zeros({1, 4, 4, 3}));
  const Tensor y = normal_tensor(rng, {1, 3, 3, 1}, 0, 1);
  EXPECT_EQ(conv2d_transpose(y, {Tensor::full({1, 1, 1, 1}, 1.0), Tensor::zeros({1}), 1, Padding::same}), y);
}

TEST(Im2colTest, Col2imIsAdjoint) {
  Rng rng(7);
  const Tensor x = normal_tensor(rng, {2, 5, 4, 3}, 0, 1);
  const WindowPlan plan = plan_window(5, 4, 3, 3, 2, Padding::same);
  const Tensor cols = im2col(x, plan);
  const Tensor c2 = normal_tensor(rng, cols.shape(), 0, 1);
  EXPECT_NEAR(dot(cols, c2), dot(x, col2im(c2, 2, 3, plan)), 1e-10);
}

// ============================================================================
// Pooling
// ============================================================================

TEST(PoolTest, ConstantStaysConstant) {
  const auto r = maxpool2d(Tensor::full({1, 4, 4, 2}, 3.5));
  EXPECT_EQ(r.output, Tensor::full({1, 2, 2, 2}, 3.5));
}

TEST(PoolTest, SingleWindowPicksMaximum) {
  const auto r = maxpool2d(Tensor({1, 2, 2, 1}, {1, 2, 3, 4}));
  EXPECT_EQ(r.output.values(), (std::vector<double>{4}));
  EXPECT_EQ(r.argmax, (std::vector<std::size_t>{3}));
}

TEST(PoolTest, MatchesLoopOracle) {
  Rng rng(9);
  const Tensor x = normal_tensor(rng, {1, 6, 6, 3}, 0, 1);
  EXPECT_EQ(maxpool2d(x).output, oracle::maxpool(x, 2, 2));
  const Tensor odd = normal_tensor(rng, {1, 7, 7, 2}, 0, 1);
  EXPECT_EQ(maxpool2d(odd).output, oracle::maxpool(odd, 2, 2));
}

TEST(PoolTest, RoundingModes) {
  EXPECT_EQ(pooled_extent(7, 2, 2, PoolRounding::floor), 3u);
  EXPECT_EQ(pooled_extent(7, 2, 2, PoolRounding::ceil), 4u);
  const auto r = maxpool2d(Tensor({1, 3, 3, 1}, {1, 2, 3, 4, 5, 6, 7, 8, 9}), 2, 2, PoolRounding::ceil);
  EXPECT_EQ(r.output.values(), (std::vector<double>{5, 6, 8, 9}));
}

TEST(PoolTest, BackwardRoutesToArgmax) {
  const Tensor x({1, 2, 2, 1}, {1, 5, 3, 2});
  const auto r = maxpool2d(x);
  const Tensor g = maxpool2d_backward(Tensor::from({2.0}).reshape({1, 1, 1, 1}), r.argmax, x.shape());
  EXPECT_EQ(g.values(), (std::vector<double>{0, 2, 0, 0}));
}

// ============================================================================
// Batch normalization
// ============================================================================

TEST(BatchNormTest, TrainOutputHasGammaBetaMoments) {
  Rng rng(10);
  const Tensor x = normal_tensor(rng, {4, 3, 3, 2}, 1.5, 2.0);
  const Tensor gamma = Tensor::from({0.5, 2.0});
  const Tensor beta = Tensor::from({-1.0, 0.25});
  BatchNormStats stats = BatchNormStats::identity(2);
  const Tensor y = batchnorm_train(x, gamma, beta, stats);
  const std::size_t n = 36;
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, v = 0, xm = 0, xv = 0;
    for (std::size_t i = 0; i < n; ++i) m += y[i * 2 + c], xm += x[i * 2 + c];
    m /= n;
    xm /= n;
    for (std::size_t i = 0; i < n; ++i) {
      v += (y[i * 2 + c] - m) * (y[i * 2 + c] - m);
      xv += (x[i * 2 + c] - xm) * (x[i * 2 + c] - xm);
    }
    v /= n;
    xv /= n;
    EXPECT_NEAR(m, beta[c], 1e-6);
    // The eps in the denominator shrinks the std by sqrt(var / (var + eps)).
    EXPECT_NEAR(std::sqrt(v), gamma[c] * std::sqrt(xv / (xv + kBatchNormEps)), 1e-6);
    EXPECT_NEAR(stats.running_mean[c], 0.1 * xm, 1e-12);
    EXPECT_NEAR(stats.running_var[c], 0.9 + 0.1 * xv, 1e-12);
  }
}

TEST(BatchNormTest, StandardizedInputIsFixedPoint) {
  const Tensor x = Tensor({4, 1}, {-1, 1, -1, 1});
  BatchNormStats stats = BatchNormStats::identity(1);
  const Tensor y = batchnorm_train(x, Tensor::from({1}), Tensor::from({0}), stats);
  EXPECT_LT(oracle::max_abs_diff(x, y), 1e-5);
}

TEST(BatchNormTest, InferWithIdentityStats) {
  Rng rng(10);
  const Tensor x = normal_tensor(rng, {3, 2}, 0, 1);
  const Tensor y = batchnorm_infer(x, Tensor::from({1, 1}), Tensor::from({0, 0}), BatchNormStats::identity(2));
  const double scale = 1.0 / std::sqrt(1.0 + 1e-5);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i] * scale, 1e-12);
}

// ============================================================================
// Dropout, dense, activations, concatenation
// ============================================================================

TEST(DropoutTest, RateZeroAndInferAreIdentity) {
  Rng rng(11);
  const Tensor x = normal_tensor(rng, {10, 10}, 0, 1);
  EXPECT_EQ(dropout(x, 0.0, rng, Mode::train).output, x);
  EXPECT_EQ(dropout(x, 0.5, rng, Mode::infer).output, x);
}

TEST(DropoutTest, DropFractionAndScaling) {
  Rng rng(12);
  const Tensor x = Tensor::full({100000}, 1.0);
  const auto r = dropout(x, 0.1, rng, Mode::train);
  std::size_t zeros = 0;
  double total = 0;
  for (double v : r.output.values()) {
    zeros += v == 0.0;
    total += v;
  }
  const double frac = static_cast<double>(zeros) / 100000.0;
  EXPECT_GE(frac, 0.09);
  EXPECT_LE(frac, 0.11);
  EXPECT_NEAR(total / 100000.0, 1.0, 0.02);
}

TEST(ActivationTest, ReluAndSoftmax) {
  EXPECT_EQ(relu(Tensor::from({-1, 0, 2})).values(), (std::vector<double>{0, 0, 2}));
  const Tensor s = softmax(Tensor::full({1, 7}, 3.0), 1);
  for (double v : s.values()) EXPECT_NEAR(v, 1.0 / 7.0, 1e-15);
  const Tensor big = softmax(Tensor({1, 2}, {1000, 1000}), 1);
  EXPECT_NEAR(big[0], 0.5, 1e-15);
}

TEST(DenseTest, MatchesLoopOracle) {
  Rng rng(13);
  const Tensor x = normal_tensor(rng, {5, 7}, 0, 1);
  const Tensor w = normal_tensor(rng, {7, 3}, 0, 1);
  const Tensor b = normal_tensor(rng, {3}, 0, 1);
  EXPECT_LT(oracle::max_abs_diff(dense(x, w, b), oracle::dense(x, w, b)), 1e-10);
}

TEST(ConcatTest, EmptyChannelIsNeutral) {
  Rng rng(14);
  const Tensor x = normal_tensor(rng, {1, 2, 2, 3}, 0, 1);
  EXPECT_EQ(concat_channels(x, Tensor({1, 2, 2, 0})), x);
}

TEST(ConcatTest, ShapesAndRoundTrip) {
  Rng rng(14);
  const Tensor a = normal_tensor(rng, {1, 2, 2, 3}, 0, 1);
  const Tensor b = normal_tensor(rng, {1, 2, 2, 5}, 0, 1);
  const Tensor c = concat_channels(a, b);
  EXPECT_EQ(c.shape(), (Shape{1, 2, 2, 8}));
  EXPECT_EQ(slice_channels(c, 0, 3), a);
  EXPECT_EQ(slice_channels(c, 3, 8), b);
  EXPECT_THROW(concat_channels(a, Tensor({1, 3, 2, 1})), std::invalid_argument);
}
