#pragma once

// Naive reference implementations used as test oracles. They work on raw
// row-major arrays with explicit index arithmetic and share no code with the
// library kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "medic/tensor.hpp"

namespace oracle {

using medic::Shape;
using medic::Tensor;

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  return c;
}

/// x [N, F_in], w [F_in, F_out], optional bias [F_out].
inline Tensor dense(const Tensor& x, const Tensor& w, const Tensor& bias) {
  const std::size_t n = x.dim(0), fin = x.dim(1), fout = w.dim(1);
  Tensor y({n, fout});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t o = 0; o < fout; ++o) {
      double s = bias.empty() ? 0.0 : bias[o];
      for (std::size_t i = 0; i < fin; ++i) s += x[r * fin + i] * w[i * fout + o];
      y[r * fout + o] = s;
    }
  return y;
}

/// Zero padding before the first row/column for "same" windows.
inline std::size_t same_pad(std::size_t in, std::size_t k, std::size_t stride) {
  const std::size_t out = (in + stride - 1) / stride;
  const std::size_t needed = (out - 1) * stride + k;
  return needed > in ? (needed - in) / 2 : 0;
}

/// kernel [K, K, Cin, Cout]; `same` selects zero padding with ceil(in/s) outputs.
inline Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride,
                     bool same) {
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
  const std::size_t k = kernel.dim(0), cout = kernel.dim(3);
  std::size_t oh, ow, pt = 0, pl = 0;
  if (same) {
    oh = (h + stride - 1) / stride;
    ow = (w + stride - 1) / stride;
    pt = same_pad(h, k, stride);
    pl = same_pad(w, k, stride);
  } else {
    oh = (h - k) / stride + 1;
    ow = (w - k) / stride + 1;
  }
  Tensor y({n, oh, ow, cout});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t o = 0; o < cout; ++o) {
          double s = bias.empty() ? 0.0 : bias[o];
          for (std::size_t u = 0; u < k; ++u)
            for (std::size_t v = 0; v < k; ++v) {
              const long yi = static_cast<long>(i * stride + u) - static_cast<long>(pt);
              const long xj = static_cast<long>(j * stride + v) - static_cast<long>(pl);
              if (yi < 0 || xj < 0 || yi >= static_cast<long>(h) || xj >= static_cast<long>(w)) continue;
              for (std::size_t c = 0; c < cin; ++c) {
                s += x[((b * h + yi) * w + xj) * cin + c] * kernel[((u * k + v) * cin + c) * cout + o];
              }
            }
          y[((b * oh + i) * ow + j) * cout + o] = s;
        }
  return y;
}

/// Floor-mode max pooling.
inline Tensor maxpool(const Tensor& x, std::size_t window, std::size_t stride) {
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  Tensor y({n, oh, ow, c});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t k = 0; k < c; ++k) {
          double m = -INFINITY;
          for (std::size_t u = 0; u < window; ++u)
            for (std::size_t v = 0; v < window; ++v)
              m = std::max(m, x[((b * h + i * stride + u) * w + j * stride + v) * c + k]);
          y[((b * oh + i) * ow + j) * c + k] = m;
        }
  return y;
}

/// Inference batch norm applied to the kernel-generation bottleneck.
struct Norm {
  std::vector<double> gamma, beta, mean, var;
  double eps = 1e-5;
};

struct Involution {
  Tensor output;   // [N, H', W', C]
  Tensor kernels;  // [N, H', W', K, K, G]
};

/// Per position (i, j): generate the kernel from pixel (i*s, j*s) by two
/// explicit projections, then sum the K x K neighbourhood of every channel
/// with its group's kernel. Channel k belongs to group k / (C / G).
inline Involution involution(const Tensor& x, const Tensor& w0, const Tensor& b0, const Tensor& w1,
                             const Tensor& b1, std::size_t K, std::size_t G, std::size_t stride,
                             const std::optional<Norm>& norm = std::nullopt) {
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t hidden = w0.dim(1), taps = K * K * G;
  const std::size_t oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;
  const long half = static_cast<long>(K / 2);
  Involution r{Tensor({n, oh, ow, c}), Tensor({n, oh, ow, K, K, G})};
  std::vector<double> z(hidden), kern(taps);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        const std::size_t si = i * stride, sj = j * stride;
        for (std::size_t q = 0; q < hidden; ++q) {
          double s = b0.empty() ? 0.0 : b0[q];
          for (std::size_t k = 0; k < c; ++k) s += x[((b * h + si) * w + sj) * c + k] * w0[k * hidden + q];
          if (norm) s = norm->gamma[q] * (s - norm->mean[q]) / std::sqrt(norm->var[q] + norm->eps) + norm->beta[q];
          z[q] = s > 0 ? s : 0;
        }
        for (std::size_t t = 0; t < taps; ++t) {
          double s = b1.empty() ? 0.0 : b1[t];
          for (std::size_t q = 0; q < hidden; ++q) s += z[q] * w1[q * taps + t];
          kern[t] = s;
          r.kernels[((b * oh + i) * ow + j) * taps + t] = s;
        }
        for (std::size_t k = 0; k < c; ++k) {
          const std::size_t g = k / (c / G);
          double s = 0;
          for (std::size_t u = 0; u < K; ++u)
            for (std::size_t v = 0; v < K; ++v) {
              const long yi = static_cast<long>(si) + static_cast<long>(u) - half;
              const long xj = static_cast<long>(sj) + static_cast<long>(v) - half;
              if (yi < 0 || xj < 0 || yi >= static_cast<long>(h) || xj >= static_cast<long>(w)) continue;
              s += kern[(u * K + v) * G + g] * x[((b * h + yi) * w + xj) * c + k];
            }
          r.output[((b * oh + i) * ow + j) * c + k] = s;
        }
      }
  return r;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
