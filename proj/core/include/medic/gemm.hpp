#pragma once

#include <cstddef>

namespace medic {

enum class Trans { no, yes };

/// Row-major C = alpha * op(A) * op(B) + beta * C, with op(A) of size m x k
/// and op(B) of size k x n. Backed by Eigen's blocked product.
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k,
          double alpha, const double* a, const double* b, double beta, double* c);

}  // namespace medic
