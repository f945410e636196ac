#include <stdexcept>
#include <string>

#include "medic/ops.hpp"

namespace medic::ops {

void validate_involution(std::size_t channels, std::size_t kernel_size, std::size_t groups,
                         std::size_t reduction) {
  if (kernel_size == 0 || kernel_size % 2 == 0) {
    throw std::invalid_argument("involution kernel size must be odd, got " +
                                std::to_string(kernel_size));
  }
  if (groups == 0 || channels % groups != 0) {
    throw std::invalid_argument("involution groups (" + std::to_string(groups) +
                                ") must divide channels (" + std::to_string(channels) + ")");
  }
  if (reduction == 0 || channels % reduction != 0) {
    throw std::invalid_argument("involution reduction (" + std::to_string(reduction) +
                                ") must divide channels (" + std::to_string(channels) + ")");
  }
}

std::size_t involution_group(std::size_t channel, std::size_t channels, std::size_t groups) {
  // ceil((k+1) * G / C) - 1
  return ((channel + 1) * groups + channels - 1) / channels - 1;
}

std::size_t strided_extent(std::size_t in, std::size_t stride) {
  if (stride == 0) throw std::invalid_argument("stride must be >= 1");
  return (in + stride - 1) / stride;
}

std::size_t involution_param_count(std::size_t channels, std::size_t kernel_size,
                                   std::size_t groups, std::size_t reduction, bool with_bias) {
  validate_involution(channels, kernel_size, groups, reduction);
  const std::size_t hidden = channels / reduction;
  const std::size_t taps = kernel_size * kernel_size * groups;
  std::size_t n = channels * hidden + hidden * taps;
  if (with_bias) n += hidden + taps;
  return n;
}

Tensor involution_sites(const Tensor& x, std::size_t stride) {
  if (x.rank() != 4) throw std::invalid_argument("involution expects [N,H,W,C] input");
  if (stride == 1) return x;
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t oh = strided_extent(h, stride), ow = strided_extent(w, stride);
  Tensor s({n, oh, ow, c});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t k = 0; k < c; ++k)
          s[((b * oh + i) * ow + j) * c + k] = x[((b * h + i * stride) * w + j * stride) * c + k];
  return s;
}

Tensor involution_sites_backward(const Tensor& grad_sites, const Shape& input_shape,
                                 std::size_t stride) {
  if (stride == 1) return grad_sites;
  const std::size_t n = input_shape[0], h = input_shape[1], w = input_shape[2], c = input_shape[3];
  const std::size_t oh = grad_sites.dim(1), ow = grad_sites.dim(2);
  Tensor g(input_shape);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t k = 0; k < c; ++k)
          g[((b * h + i * stride) * w + j * stride) * c + k] +=
              grad_sites[((b * oh + i) * ow + j) * c + k];
  return g;
}

Tensor generate_involution_kernels(const Tensor& x, const InvolutionParams& p) {
  const Tensor sites = involution_sites(x, p.stride);
  const std::size_t n = sites.dim(0), oh = sites.dim(1), ow = sites.dim(2), c = sites.dim(3);
  validate_involution(c, p.kernel_size, p.groups, p.reduction);
  const std::size_t taps = p.kernel_size * p.kernel_size * p.groups;
  if (p.w0.rank() != 2 || p.w0.dim(0) != c || p.w1.rank() != 2 || p.w1.dim(0) != p.w0.dim(1) ||
      p.w1.dim(1) != taps) {
    throw std::invalid_argument("involution meta-weights have inconsistent shapes: W0 " +
                                shape_to_string(p.w0.shape()) + ", W1 " +
                                shape_to_string(p.w1.shape()));
  }
  const Tensor pixels = sites.reshape({n * oh * ow, c});
  Tensor hidden = dense(pixels, p.w0, p.b0);
  if (p.bottleneck_norm) {
    hidden = batchnorm_infer(hidden, p.bottleneck_norm->gamma, p.bottleneck_norm->beta,
                             p.bottleneck_norm->stats);
  }
  hidden = relu(hidden);
  Tensor kernels = dense(hidden, p.w1, p.b1);
  return std::move(kernels).reshape({n, oh, ow, p.kernel_size, p.kernel_size, p.groups});
}

namespace {

struct ApplyDims {
  std::size_t n, h, w, c, oh, ow, k, g, stride;
  std::ptrdiff_t half;
};

ApplyDims apply_dims(const Tensor& x, const Tensor& kernels, std::size_t kernel_size,
                     std::size_t groups, std::size_t stride) {
  if (x.rank() != 4) throw std::invalid_argument("involution expects [N,H,W,C] input");
  const std::size_t c = x.dim(3);
  if (kernel_size % 2 == 0) throw std::invalid_argument("involution kernel size must be odd");
  if (groups == 0 || c % groups != 0) throw std::invalid_argument("involution groups must divide C");
  ApplyDims d{x.dim(0), x.dim(1), x.dim(2), c, strided_extent(x.dim(1), stride),
              strided_extent(x.dim(2), stride), kernel_size, groups, stride,
              static_cast<std::ptrdiff_t>(kernel_size / 2)};
  const Shape expected{d.n, d.oh, d.ow, kernel_size, kernel_size, groups};
  if (kernels.shape() != expected) {
    throw std::invalid_argument("involution kernels have shape " +
                                shape_to_string(kernels.shape()) + ", expected " +
                                shape_to_string(expected));
  }
  return d;
}

}  // namespace

Tensor involution_apply(const Tensor& x, const Tensor& kernels, std::size_t kernel_size,
                        std::size_t groups, std::size_t stride) {
  const ApplyDims d = apply_dims(x, kernels, kernel_size, groups, stride);
  const std::size_t group_width = d.c / d.g;
  Tensor y({d.n, d.oh, d.ow, d.c});
  const double* in = x.raw();
  const double* ker = kernels.raw();
  double* out = y.raw();
  for (std::size_t b = 0; b < d.n; ++b) {
    for (std::size_t i = 0; i < d.oh; ++i) {
      for (std::size_t j = 0; j < d.ow; ++j) {
        const std::size_t pos = (b * d.oh + i) * d.ow + j;
        const double* kp = ker + pos * d.k * d.k * d.g;
        double* yp = out + pos * d.c;
        const auto ci = static_cast<std::ptrdiff_t>(i * d.stride);
        const auto cj = static_cast<std::ptrdiff_t>(j * d.stride);
        for (std::size_t u = 0; u < d.k; ++u) {
          const std::ptrdiff_t yy = ci + static_cast<std::ptrdiff_t>(u) - d.half;
          if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(d.h)) continue;
          for (std::size_t v = 0; v < d.k; ++v) {
            const std::ptrdiff_t xx = cj + static_cast<std::ptrdiff_t>(v) - d.half;
            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(d.w)) continue;
            const double* xp = in + ((b * d.h + static_cast<std::size_t>(yy)) * d.w +
                                     static_cast<std::size_t>(xx)) * d.c;
            const double* tap = kp + (u * d.k + v) * d.g;
            for (std::size_t grp = 0; grp < d.g; ++grp) {
              const double hv = tap[grp];
              const std::size_t k0 = grp * group_width;
              for (std::size_t k = k0; k < k0 + group_width; ++k) yp[k] += hv * xp[k];
            }
          }
        }
      }
    }
  }
  return y;
}

InvolutionApplyGrads involution_apply_backward(const Tensor& x, const Tensor& kernels,
                                               const Tensor& grad_out, std::size_t kernel_size,
                                               std::size_t groups, std::size_t stride) {
  const ApplyDims d = apply_dims(x, kernels, kernel_size, groups, stride);
  if (grad_out.shape() != Shape{d.n, d.oh, d.ow, d.c}) {
    throw std::invalid_argument("involution backward: gradient shape mismatch");
  }
  const std::size_t group_width = d.c / d.g;
  InvolutionApplyGrads g{Tensor(x.shape()), Tensor(kernels.shape())};
  const double* in = x.raw();
  const double* ker = kernels.raw();
  const double* gy = grad_out.raw();
  double* gx = g.input.raw();
  double* gk = g.kernels.raw();
  for (std::size_t b = 0; b < d.n; ++b) {
    for (std::size_t i = 0; i < d.oh; ++i) {
      for (std::size_t j = 0; j < d.ow; ++j) {
        const std::size_t pos = (b * d.oh + i) * d.ow + j;
        const double* kp = ker + pos * d.k * d.k * d.g;
        double* gkp = gk + pos * d.k * d.k * d.g;
        const double* gyp = gy + pos * d.c;
        const auto ci = static_cast<std::ptrdiff_t>(i * d.stride);
        const auto cj = static_cast<std::ptrdiff_t>(j * d.stride);
        for (std::size_t u = 0; u < d.k; ++u) {
          const std::ptrdiff_t yy = ci + static_cast<std::ptrdiff_t>(u) - d.half;
          if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(d.h)) continue;
          for (std::size_t v = 0; v < d.k; ++v) {
            const std::ptrdiff_t xx = cj + static_cast<std::ptrdiff_t>(v) - d.half;
            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(d.w)) continue;
            const std::size_t off = ((b * d.h + static_cast<std::size_t>(yy)) * d.w +
                                     static_cast<std::size_t>(xx)) * d.c;
            const std::size_t tap = (u * d.k + v) * d.g;
            for (std::size_t grp = 0; grp < d.g; ++grp) {
              const double hv = kp[tap + grp];
              double acc = 0.0;
              const std::size_t k0 = grp * group_width;
              for (std::size_t k = k0; k < k0 + group_width; ++k) {
                gx[off + k] += hv * gyp[k];
                acc += in[off + k] * gyp[k];
              }
              gkp[tap + grp] += acc;
            }
          }
        }
      }
    }
  }
  return g;
}

InvolutionResult involution2d(const Tensor& x, const InvolutionParams& p) {
  InvolutionResult r;
  r.kernels = generate_involution_kernels(x, p);
  r.output = involution_apply(x, r.kernels, p.kernel_size, p.groups, p.stride);
  return r;
}

}  // namespace medic::ops
