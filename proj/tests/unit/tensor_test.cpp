#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "medic/error.hpp"
#include "medic/gemm.hpp"
#include "medic/rng.hpp"
#include "medic/tensor.hpp"
#include "medic/tensor_io.hpp"
#include "oracles.hpp"

using namespace medic;

// ============================================================================
// Construction
// ============================================================================

TEST(TensorTest, ZerosAndFull) {
  const Tensor z = Tensor::zeros({2, 2});
  EXPECT_EQ(z.shape(), (Shape{2, 2}));
  for (double v : z.values()) EXPECT_EQ(v, 0.0);
  const Tensor f = Tensor::full({3}, 1.5);
  EXPECT_EQ(f.values(), (std::vector<double>{1.5, 1.5, 1.5}));
  EXPECT_EQ(sum(Tensor::zeros({2, 3})).item(), 0.0);
}

TEST(TensorTest, RejectsMismatchedData) {
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), std::invalid_argument);
  EXPECT_THROW(Tensor(Shape{}), std::invalid_argument);
}

TEST(TensorTest, ZeroExtentIsAllowed) {
  const Tensor t({1, 2, 2, 0});
  EXPECT_EQ(t.size(), 0u);
}

TEST(TensorTest, IndexingIsRowMajor) {
  Tensor t({2, 3});
  t.at({1, 2}) = 7;
  EXPECT_EQ(t[5], 7.0);
  EXPECT_THROW(t.at({2, 0}), std::out_of_range);
}

TEST(TensorTest, ReshapeKeepsData) {
  const Tensor t = Tensor::from({1, 2, 3, 4, 5, 6});
  const Tensor r = t.reshape({2, 3});
  EXPECT_EQ(r.shape(), (Shape{2, 3}));
  EXPECT_EQ(r.values(), t.values());
  EXPECT_THROW((void)t.reshape({4, 2}), std::invalid_argument);
}

// ============================================================================
// Linear algebra
// ============================================================================

TEST(MatmulTest, IdentityIsNeutral) {
  Rng rng(1);
  const Tensor b = normal_tensor(rng, {3, 3}, 0, 1);
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye[i * 4] = 1;
  EXPECT_EQ(matmul(eye, b), b);
}

TEST(MatmulTest, HandExample) {
  const Tensor a({2, 2}, {1, 2, 3, 4});
  const Tensor b({2, 1}, {5, 6});
  EXPECT_EQ(matmul(a, b).values(), (std::vector<double>{17, 39}));
}

TEST(MatmulTest, MatchesTripleLoop) {
  Rng rng(42);
  const Tensor a = normal_tensor(rng, {7, 5}, 0, 1);
  const Tensor b = normal_tensor(rng, {5, 4}, 0, 1);
  EXPECT_LT(oracle::max_abs_diff(matmul(a, b), oracle::matmul(a, b)), 1e-12);
}

TEST(MatmulTest, InnerDimensionMismatchThrows) {
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), std::invalid_argument);
}

TEST(GemmTest, TransposedOperandsAndBeta) {
  Rng rng(4);
  const Tensor a = normal_tensor(rng, {6, 3}, 0, 1);  // used as A^T: 3 x 6
  const Tensor b = normal_tensor(rng, {5, 6}, 0, 1);  // used as B^T: 6 x 5
  Tensor c = normal_tensor(rng, {3, 5}, 0, 1);
  const Tensor expected = add(mul(oracle::matmul(transpose(a), transpose(b)), 2.0), mul(c, 0.5));
  gemm(Trans::yes, Trans::yes, 3, 5, 6, 2.0, a.raw(), b.raw(), 0.5, c.raw());
  EXPECT_LT(oracle::max_abs_diff(c, expected), 1e-12);
}

// ============================================================================
// Elementwise and reductions
// ============================================================================

TEST(ElementwiseTest, Identities) {
  Rng rng(7);
  const Tensor x = uniform_tensor(rng, {4, 5}, 0.1, 3.0);
  EXPECT_EQ(add(x, Tensor::zeros_like(x)), x);
  EXPECT_EQ(mul(x, 0.0), Tensor::zeros_like(x));
  EXPECT_LT(oracle::max_abs_diff(exp(log(x)), x), 1e-12);
}

TEST(ElementwiseTest, ScalarBroadcastAndMismatch) {
  const Tensor x = Tensor::from({1, 2, 3});
  EXPECT_EQ(add(x, Tensor::scalar(1)).values(), (std::vector<double>{2, 3, 4}));
  EXPECT_THROW(add(x, Tensor::from({1, 2})), std::invalid_argument);
}

TEST(ElementwiseTest, DivisionFollowsIeee) {
  const Tensor q = div(Tensor::from({1, -1, 0}), Tensor::from({0, 0, 0}));
  EXPECT_TRUE(std::isinf(q[0]) && q[0] > 0);
  EXPECT_TRUE(std::isinf(q[1]) && q[1] < 0);
  EXPECT_TRUE(std::isnan(q[2]));
}

TEST(ReduceTest, SumAndArgmax) {
  EXPECT_EQ(sum(Tensor::from({1, 2, 3})).item(), 6.0);
  EXPECT_EQ(argmax(Tensor::from({0.2, 0.7, 0.1})).item(), 1.0);
  EXPECT_EQ(argmax(Tensor::from({0.5, 0.5})).item(), 0.0);
}

TEST(ReduceTest, MeanOverAxisMatchesLoop) {
  Rng rng(3);
  const Tensor x = normal_tensor(rng, {4, 3}, 0, 1);
  const Tensor m = mean(x, 0);
  ASSERT_EQ(m.shape(), (Shape{3}));
  for (std::size_t j = 0; j < 3; ++j) {
    double s = 0;
    for (std::size_t i = 0; i < 4; ++i) s += x[i * 3 + j];
    EXPECT_NEAR(m[j], s / 4, 1e-12);
  }
}

TEST(ReduceTest, EmptyReductionThrows) {
  EXPECT_THROW(sum(Tensor({0})), std::invalid_argument);
  EXPECT_THROW(sum(Tensor({2}), 1), std::invalid_argument);
}

// ============================================================================
// Random numbers
// ============================================================================

TEST(RngTest, SameSeedSameStream) {
  Rng a(5), b(5);
  EXPECT_EQ(normal_tensor(a, {100}, 0, 1), normal_tensor(b, {100}, 0, 1));
}

TEST(RngTest, SplitStreamsDiffer) {
  Rng root(5);
  Rng c1 = root.split();
  Rng c2 = root.split();
  EXPECT_NE(c1.next_u64(), c2.next_u64());
}

TEST(RngTest, HeInitMoments) {
  // 1e5 draws of N(0, 2/8): the standard error of the mean is 0.0016 and of
  // the variance about 0.1%.
  Rng rng(0);
  const Tensor w = normal_init(rng, {100000}, 8);
  double m = 0, v = 0;
  for (double x : w.values()) m += x;
  m /= static_cast<double>(w.size());
  for (double x : w.values()) v += (x - m) * (x - m);
  v /= static_cast<double>(w.size());
  EXPECT_LT(std::abs(m), 0.02);
  EXPECT_NEAR(v, 0.25, 0.025);
}

TEST(RngTest, UniformIntIsInRange) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(rng.uniform_int(7), 7u);
  EXPECT_THROW(rng.uniform_int(0), std::invalid_argument);
}

// ============================================================================
// Serialization
// ============================================================================

TEST(TensorIoTest, RoundTrip) {
  Rng rng(8);
  const Tensor t = normal_tensor(rng, {2, 3, 4}, 0, 1);
  std::stringstream ss;
  write_tensor(ss, t);
  EXPECT_EQ(read_tensor(ss), t);
}

TEST(TensorIoTest, TruncatedStreamIsDataError) {
  std::stringstream ss;
  write_tensor(ss, Tensor::from({1, 2, 3}));
  std::string bytes = ss.str();
  bytes.resize(bytes.size() - 4);
  std::stringstream cut(bytes);
  EXPECT_THROW(read_tensor(cut), DataError);
  std::stringstream junk("XXXX");
  EXPECT_THROW(read_tensor(junk), DataError);
}
