#include "medic/gemm.hpp"

#include <Eigen/Core>

namespace medic {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

template <typename A, typename B>
void assign(MutMap& c, const A& a, const B& b, double alpha, double beta) {
  if (beta == 0.0) {
    if (alpha == 1.0) {
      c.noalias() = a * b;
    } else {
      c.noalias() = alpha * (a * b);
    }
  } else {
    if (beta != 1.0) c *= beta;
    c.noalias() += alpha * (a * b);
  }
}

}  // namespace

void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k,
          double alpha, const double* a, const double* b, double beta, double* c) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  MutMap cm(c, M, N);
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (beta == 0.0) cm.setZero(); else cm *= beta;
    return;
  }
  const bool ta = trans_a == Trans::yes;
  const bool tb = trans_b == Trans::yes;
  ConstMap am(a, ta ? K : M, ta ? M : K);
  ConstMap bm(b, tb ? N : K, tb ? K : N);
  if (!ta && !tb) assign(cm, am, bm, alpha, beta);
  else if (ta && !tb) assign(cm, am.transpose(), bm, alpha, beta);
  else if (!ta && tb) assign(cm, am, bm.transpose(), alpha, beta);
  else assign(cm, am.transpose(), bm.transpose(), alpha, beta);
}

}  // namespace medic
