#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "medic/gemm.hpp"
#include "medic/ops.hpp"

namespace medic::ops {

namespace {

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got shape " + shape_to_string(x.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Pooling

std::size_t pooled_extent(std::size_t in, std::size_t window, std::size_t stride,
                          PoolRounding rounding) {
  if (stride == 0 || window == 0) throw std::invalid_argument("pool window/stride must be >= 1");
  if (rounding == PoolRounding::floor) {
    return in < window ? 0 : (in - window) / stride + 1;
  }
  return in <= window ? 1 : (in - window + stride - 1) / stride + 1;
}

PoolResult maxpool2d(const Tensor& x, std::size_t window, std::size_t stride,
                     PoolRounding rounding) {
  require_rank(x, 4, "maxpool2d");
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t oh = pooled_extent(h, window, stride, rounding);
  const std::size_t ow = pooled_extent(w, window, stride, rounding);
  if (oh == 0 || ow == 0) {
    throw std::invalid_argument("maxpool2d: input " + shape_to_string(x.shape()) +
                                " smaller than the pooling window");
  }
  PoolResult r{Tensor({n, oh, ow, c}), std::vector<std::size_t>(n * oh * ow * c)};
  const double* in = x.raw();
  double* out = r.output.raw();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        for (std::size_t k = 0; k < c; ++k) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = 0;
          bool found = false;
          for (std::size_t u = 0; u < window; ++u) {
            const std::size_t y = i * stride + u;
            if (y >= h) break;
            for (std::size_t v = 0; v < window; ++v) {
              const std::size_t xx = j * stride + v;
              if (xx >= w) break;
              const std::size_t idx = ((b * h + y) * w + xx) * c + k;
              if (!found || in[idx] > best) {
                best = in[idx];
                best_idx = idx;
                found = true;
              }
            }
          }
          const std::size_t o = ((b * oh + i) * ow + j) * c + k;
          out[o] = best;
          r.argmax[o] = best_idx;
        }
      }
    }
  }
  return r;
}

Tensor maxpool2d_backward(const Tensor& grad_out, std::span<const std::size_t> argmax,
                          const Shape& input_shape) {
  if (argmax.size() != grad_out.size()) throw std::invalid_argument("maxpool2d_backward: index size");
  Tensor gin(input_shape);
  for (std::size_t o = 0; o < grad_out.size(); ++o) gin[argmax[o]] += grad_out[o];
  return gin;
}

// ---------------------------------------------------------------------------
// Batch normalization

BatchNormStats BatchNormStats::identity(std::size_t channels) {
  return {Tensor::zeros({channels}), Tensor::full({channels}, 1.0)};
}

namespace {

void check_bn_shapes(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  if (x.empty() || x.rank() < 2) throw std::invalid_argument("batchnorm expects rank >= 2 input");
  const std::size_t c = x.shape().back();
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw std::invalid_argument("batchnorm: gamma/beta must have shape [" + std::to_string(c) + "]");
  }
  if (x.size() == 0 || x.dim(0) == 0) throw std::invalid_argument("batchnorm: batch size 0");
}

}  // namespace

Tensor batchnorm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       BatchNormStats& stats, BatchNormCache* cache) {
  check_bn_shapes(x, gamma, beta);
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.size() / c;
  std::vector<double> mu(c, 0.0), var(c, 0.0);
  const double* in = x.raw();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) mu[k] += in[r * c + k];
  for (auto& m : mu) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) {
      const double d = in[r * c + k] - mu[k];
      var[k] += d * d;
    }
  for (auto& v : var) v /= static_cast<double>(rows);

  Tensor inv_std({c});
  for (std::size_t k = 0; k < c; ++k) inv_std[k] = 1.0 / std::sqrt(var[k] + kBatchNormEps);

  Tensor xhat(x.shape());
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < c; ++k) {
      const double h = (in[r * c + k] - mu[k]) * inv_std[k];
      xhat[r * c + k] = h;
      out[r * c + k] = gamma[k] * h + beta[k];
    }
  }

  if (stats.running_mean.empty()) stats = BatchNormStats::identity(c);
  for (std::size_t k = 0; k < c; ++k) {
    stats.running_mean[k] = kBatchNormMomentum * stats.running_mean[k] + (1.0 - kBatchNormMomentum) * mu[k];
    stats.running_var[k] = kBatchNormMomentum * stats.running_var[k] + (1.0 - kBatchNormMomentum) * var[k];
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

Tensor batchnorm_infer(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const BatchNormStats& stats) {
  check_bn_shapes(x, gamma, beta);
  const std::size_t c = x.shape().back();
  if (stats.running_mean.shape() != Shape{c} || stats.running_var.shape() != Shape{c}) {
    throw std::invalid_argument("batchnorm: running statistics have the wrong shape");
  }
  std::vector<double> scale(c), shift(c);
  for (std::size_t k = 0; k < c; ++k) {
    scale[k] = gamma[k] / std::sqrt(stats.running_var[k] + kBatchNormEps);
    shift[k] = beta[k] - stats.running_mean[k] * scale[k];
  }
  Tensor out(x.shape());
  const std::size_t rows = x.size() / c;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) out[r * c + k] = x[r * c + k] * scale[k] + shift[k];
  return out;
}

BatchNormGrads batchnorm_backward(const Tensor& grad_out, const Tensor& gamma,
                                  const BatchNormCache& cache) {
  const Tensor& xhat = cache.normalized;
  if (grad_out.shape() != xhat.shape()) throw std::invalid_argument("batchnorm_backward: shape");
  const std::size_t c = xhat.shape().back();
  const std::size_t rows = xhat.size() / c;
  BatchNormGrads g{Tensor(xhat.shape()), Tensor({c}), Tensor({c})};
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < c; ++k) {
      g.beta[k] += grad_out[r * c + k];
      g.gamma[k] += grad_out[r * c + k] * xhat[r * c + k];
    }
  }
  const double m = static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < c; ++k) {
      const double dxhat = grad_out[r * c + k];
      g.input[r * c + k] = gamma[k] * cache.inv_std[k] / m *
                           (m * dxhat - g.beta[k] - xhat[r * c + k] * g.gamma[k]);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Dropout

DropoutResult dropout(const Tensor& x, double rate, Rng& rng, Mode mode) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
  if (mode == Mode::infer || rate == 0.0) return {x, Tensor::full(x.shape(), 1.0)};
  const double keep_scale = 1.0 / (1.0 - rate);
  DropoutResult r{Tensor(x.shape()), Tensor(x.shape())};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double m = rng.uniform() < rate ? 0.0 : keep_scale;
    r.mask[i] = m;
    r.output[i] = x[i] * m;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Dense and activations

Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "dense");
  require_rank(weight, 2, "dense weight");
  const std::size_t n = x.dim(0), fin = x.dim(1), fout = weight.dim(1);
  if (weight.dim(0) != fin) {
    throw std::invalid_argument("dense: input " + shape_to_string(x.shape()) +
                                " incompatible with weight " + shape_to_string(weight.shape()));
  }
  if (!bias.empty() && bias.shape() != Shape{fout}) {
    throw std::invalid_argument("dense: bias must have shape [" + std::to_string(fout) + "]");
  }
  Tensor out({n, fout});
  if (!bias.empty()) {
    for (std::size_t r = 0; r < n; ++r)
      std::copy(bias.raw(), bias.raw() + fout, out.raw() + r * fout);
  }
  gemm(Trans::no, Trans::no, n, fout, fin, 1.0, x.raw(), weight.raw(), bias.empty() ? 0.0 : 1.0,
       out.raw());
  return out;
}

DenseGrads dense_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out) {
  const std::size_t n = x.dim(0), fin = x.dim(1), fout = weight.dim(1);
  DenseGrads g{Tensor({n, fin}), Tensor({fin, fout}), Tensor({fout})};
  gemm(Trans::no, Trans::yes, n, fin, fout, 1.0, grad_out.raw(), weight.raw(), 0.0, g.input.raw());
  gemm(Trans::yes, Trans::no, fin, fout, n, 1.0, x.raw(), grad_out.raw(), 0.0, g.weight.raw());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < fout; ++k) g.bias[k] += grad_out[r * fout + k];
  return g;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw std::invalid_argument("softmax: invalid axis");
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Tensor out(s);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < len; ++l) mx = std::max(mx, x[base + l * inner]);
      double total = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        const double e = std::exp(x[base + l * inner] - mx);
        out[base + l * inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] /= total;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Concatenation

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() < 1) throw std::invalid_argument("concat: rank mismatch");
  for (std::size_t i = 0; i + 1 < a.rank(); ++i) {
    if (a.dim(i) != b.dim(i)) {
      throw std::invalid_argument("concat: shapes " + shape_to_string(a.shape()) + " and " +
                                  shape_to_string(b.shape()) + " differ outside the channel axis");
    }
  }
  const std::size_t ca = a.shape().back(), cb = b.shape().back();
  Shape s = a.shape();
  s.back() = ca + cb;
  Tensor out(s);
  const std::size_t rows = (ca + cb) == 0 ? 0 : out.size() / (ca + cb);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(a.raw() + r * ca, a.raw() + (r + 1) * ca, out.raw() + r * (ca + cb));
    std::copy(b.raw() + r * cb, b.raw() + (r + 1) * cb, out.raw() + r * (ca + cb) + ca);
  }
  return out;
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end) {
  const std::size_t c = x.shape().back();
  if (begin > end || end > c) throw std::invalid_argument("slice_channels: invalid range");
  Shape s = x.shape();
  s.back() = end - begin;
  Tensor out(s);
  const std::size_t rows = c == 0 ? 0 : x.size() / c;
  const std::size_t w = end - begin;
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(x.raw() + r * c + begin, x.raw() + r * c + end, out.raw() + r * w);
  return out;
}

}  // namespace medic::ops
