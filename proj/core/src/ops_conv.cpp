#include <algorithm>
#include <stdexcept>
#include <type_traits>
#include <vector>

#include "medic/gemm.hpp"
#include "medic/ops.hpp"

namespace medic::ops {

WindowPlan plan_window(std::size_t in_h, std::size_t in_w, std::size_t kernel_h,
                       std::size_t kernel_w, std::size_t stride, Padding padding) {
  if (stride == 0 || kernel_h == 0 || kernel_w == 0) {
    throw std::invalid_argument("window kernel and stride must be >= 1");
  }
  WindowPlan p{in_h, in_w, kernel_h, kernel_w, stride, 0, 0, 0, 0};
  if (padding == Padding::same) {
    p.out_h = (in_h + stride - 1) / stride;
    p.out_w = (in_w + stride - 1) / stride;
    const auto total = [&](std::size_t out, std::size_t in, std::size_t k) -> std::size_t {
      const std::size_t need = (out - 1) * stride + k;
      return need > in ? need - in : 0;
    };
    p.pad_top = total(p.out_h, in_h, kernel_h) / 2;
    p.pad_left = total(p.out_w, in_w, kernel_w) / 2;
  } else {
    if (in_h < kernel_h || in_w < kernel_w) {
      throw std::invalid_argument("valid convolution: input smaller than kernel");
    }
    p.out_h = (in_h - kernel_h) / stride + 1;
    p.out_w = (in_w - kernel_w) / stride + 1;
  }
  return p;
}

namespace {

/// Column rows for output rows [oy0, oy1) of one image.
void im2col_block(const double* img, const WindowPlan& plan, std::size_t c, std::size_t oy0,
                  std::size_t oy1, double* cols) {
  const std::size_t row_len = plan.kernel_h * plan.kernel_w * c;
  const auto h = static_cast<std::ptrdiff_t>(plan.in_h), w = static_cast<std::ptrdiff_t>(plan.in_w);
  for (std::size_t oy = oy0; oy < oy1; ++oy) {
    for (std::size_t ox = 0; ox < plan.out_w; ++ox) {
      double* row = cols + ((oy - oy0) * plan.out_w + ox) * row_len;
      for (std::size_t kh = 0; kh < plan.kernel_h; ++kh) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * plan.stride + kh) -
                                  static_cast<std::ptrdiff_t>(plan.pad_top);
        for (std::size_t kw = 0; kw < plan.kernel_w; ++kw) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * plan.stride + kw) -
                                    static_cast<std::ptrdiff_t>(plan.pad_left);
          double* dst = row + (kh * plan.kernel_w + kw) * c;
          if (iy < 0 || ix < 0 || iy >= h || ix >= w) {
            std::fill(dst, dst + c, 0.0);
          } else {
            const double* src = img + (static_cast<std::size_t>(iy * w + ix)) * c;
            std::copy(src, src + c, dst);
          }
        }
      }
    }
  }
}

/// Scatter-adds column rows for output rows [oy0, oy1) into one image.
void col2im_block(const double* cols, const WindowPlan& plan, std::size_t c, std::size_t oy0,
                  std::size_t oy1, double* img) {
  const std::size_t row_len = plan.kernel_h * plan.kernel_w * c;
  const auto h = static_cast<std::ptrdiff_t>(plan.in_h), w = static_cast<std::ptrdiff_t>(plan.in_w);
  for (std::size_t oy = oy0; oy < oy1; ++oy) {
    for (std::size_t ox = 0; ox < plan.out_w; ++ox) {
      const double* row = cols + ((oy - oy0) * plan.out_w + ox) * row_len;
      for (std::size_t kh = 0; kh < plan.kernel_h; ++kh) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * plan.stride + kh) -
                                  static_cast<std::ptrdiff_t>(plan.pad_top);
        if (iy < 0 || iy >= h) continue;
        for (std::size_t kw = 0; kw < plan.kernel_w; ++kw) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * plan.stride + kw) -
                                    static_cast<std::ptrdiff_t>(plan.pad_left);
          if (ix < 0 || ix >= w) continue;
          const double* src = row + (kh * plan.kernel_w + kw) * c;
          double* dst = img + static_cast<std::size_t>(iy * w + ix) * c;
          for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
        }
      }
    }
  }
}

/// Output rows per block so a column block stays cache-sized.
std::size_t block_rows(const WindowPlan& plan, std::size_t row_len) {
  constexpr std::size_t kBlockDoubles = 1 << 15;
  return std::max<std::size_t>(1, kBlockDoubles / std::max<std::size_t>(1, plan.out_w * row_len));
}

}  // namespace

Tensor im2col(const Tensor& x, const WindowPlan& plan) {
  const std::size_t n = x.dim(0), c = x.dim(3);
  const std::size_t row_len = plan.kernel_h * plan.kernel_w * c;
  const std::size_t per_image = plan.out_h * plan.out_w * row_len;
  Tensor cols({n * plan.out_h * plan.out_w, row_len});
  for (std::size_t b = 0; b < n; ++b) {
    im2col_block(x.raw() + b * plan.in_h * plan.in_w * c, plan, c, 0, plan.out_h,
                 cols.raw() + b * per_image);
  }
  return cols;
}

Tensor col2im(const Tensor& cols, std::size_t n, std::size_t channels, const WindowPlan& plan) {
  const std::size_t c = channels;
  const std::size_t row_len = plan.kernel_h * plan.kernel_w * c;
  if (cols.rank() != 2 || cols.dim(0) != n * plan.out_h * plan.out_w || cols.dim(1) != row_len) {
    throw std::invalid_argument("col2im: column matrix has the wrong shape");
  }
  const std::size_t per_image = plan.out_h * plan.out_w * row_len;
  Tensor x({n, plan.in_h, plan.in_w, c});
  for (std::size_t b = 0; b < n; ++b) {
    col2im_block(cols.raw() + b * per_image, plan, c, 0, plan.out_h,
                 x.raw() + b * plan.in_h * plan.in_w * c);
  }
  return x;
}

namespace {

void check_kernel(const Tensor& x, const ConvParams& p, std::size_t in_channel_axis,
                  const char* op) {
  if (x.rank() != 4) {
    throw std::invalid_argument(std::string(op) + ": expected [N,H,W,C] input, got " +
                                shape_to_string(x.shape()));
  }
  if (p.kernel.rank() != 4) throw std::invalid_argument(std::string(op) + ": kernel must be rank 4");
  if (p.kernel.dim(in_channel_axis) != x.dim(3)) {
    throw std::invalid_argument(std::string(op) + ": kernel " + shape_to_string(p.kernel.shape()) +
                                " does not accept " + std::to_string(x.dim(3)) + " input channels");
  }
  const std::size_t out_c = p.kernel.dim(in_channel_axis == 2 ? 3 : 2);
  if (!p.bias.empty() && p.bias.shape() != Shape{out_c}) {
    throw std::invalid_argument(std::string(op) + ": bias must have shape [" +
                                std::to_string(out_c) + "]");
  }
}

void add_bias(Tensor& y, const Tensor& bias) {
  if (bias.empty()) return;
  const std::size_t c = bias.size();
  const std::size_t rows = y.size() / c;
  double* out = y.raw();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) out[r * c + k] += bias[k];
}

Tensor bias_grad(const Tensor& grad_out) {
  const std::size_t c = grad_out.shape().back();
  Tensor g({c});
  const std::size_t rows = grad_out.size() / c;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) g[k] += grad_out[r * c + k];
  return g;
}


/// Direct convolution for narrow layers, where im2col traffic dominates.
/// Channel counts are compile-time constants (CIN = 0: read at run time) so
/// the per-pixel accumulator stays in registers.
template <std::size_t CIN, std::size_t COUT>
void direct_forward(const Tensor& x, const Tensor& kernel, const WindowPlan& plan, Tensor& y) {
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = CIN ? CIN : x.dim(3);
  const double* wk = kernel.raw();
  for (std::size_t b = 0; b < n; ++b) {
    const double* img = x.raw() + b * h * w * cin;
    for (std::size_t oy = 0; oy < plan.out_h; ++oy) {
      for (std::size_t ox = 0; ox < plan.out_w; ++ox) {
        double acc[COUT] = {};
        for (std::size_t kh = 0; kh < plan.kernel_h; ++kh) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * plan.stride + kh) -
                                    static_cast<std::ptrdiff_t>(plan.pad_top);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kw = 0; kw < plan.kernel_w; ++kw) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * plan.stride + kw) -
                                      static_cast<std::ptrdiff_t>(plan.pad_left);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const double* in = img + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin;
            const double* wt = wk + (kh * plan.kernel_w + kw) * cin * COUT;
            for (std::size_t ci = 0; ci < cin; ++ci)
              for (std::size_t co = 0; co < COUT; ++co) acc[co] += in[ci] * wt[ci * COUT + co];
          }
        }
        double* out = y.raw() + ((b * plan.out_h + oy) * plan.out_w + ox) * COUT;
        for (std::size_t co = 0; co < COUT; ++co) out[co] = acc[co];
      }
    }
  }
}

template <std::size_t CIN, std::size_t COUT>
void direct_backward(const Tensor& x, const Tensor& kernel, const WindowPlan& plan, const Tensor& dy,
                     Tensor& dx, Tensor& dw) {
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = CIN ? CIN : x.dim(3);
  const double* wk = kernel.raw();
  double* gw = dw.raw();
  for (std::size_t b = 0; b < n; ++b) {
    const double* img = x.raw() + b * h * w * cin;
    double* dimg = dx.raw() + b * h * w * cin;
    for (std::size_t oy = 0; oy < plan.out_h; ++oy) {
      for (std::size_t ox = 0; ox < plan.out_w; ++ox) {
        const double* g = dy.raw() + ((b * plan.out_h + oy) * plan.out_w + ox) * COUT;
        double gv[COUT];
        for (std::size_t co = 0; co < COUT; ++co) gv[co] = g[co];
        for (std::size_t kh = 0; kh < plan.kernel_h; ++kh) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * plan.stride + kh) -
                                    static_cast<std::ptrdiff_t>(plan.pad_top);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kw = 0; kw < plan.kernel_w; ++kw) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * plan.stride + kw) -
                                      static_cast<std::ptrdiff_t>(plan.pad_left);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t off = (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin;
            const std::size_t tap = (kh * plan.kernel_w + kw) * cin * COUT;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              double s = 0.0;
              const double xv = img[off + ci];
              for (std::size_t co = 0; co < COUT; ++co) {
                s += gv[co] * wk[tap + ci * COUT + co];
                gw[tap + ci * COUT + co] += xv * gv[co];
              }
              dimg[off + ci] += s;
            }
          }
        }
      }
    }
  }
}

bool use_direct(std::size_t cin, std::size_t cout) {
  return (cout == 1 || cout == 2 || cout == 4) && cin <= 8;
}

template <std::size_t COUT, class F>
void dispatch_cin(std::size_t cin, F&& f) {
  using std::integral_constant;
  switch (cin) {
    case 3: f(integral_constant<std::size_t, 3>{}, integral_constant<std::size_t, COUT>{}); break;
    case 4: f(integral_constant<std::size_t, 4>{}, integral_constant<std::size_t, COUT>{}); break;
    case 8: f(integral_constant<std::size_t, 8>{}, integral_constant<std::size_t, COUT>{}); break;
    case 16: f(integral_constant<std::size_t, 16>{}, integral_constant<std::size_t, COUT>{}); break;
    default: f(integral_constant<std::size_t, 0>{}, integral_constant<std::size_t, COUT>{}); break;
  }
}

/// Calls f(CIN, COUT) with the matching compile-time widths.
template <class F>
void dispatch_direct(std::size_t cin, std::size_t cout, F&& f) {
  switch (cout) {
    case 1: dispatch_cin<1>(cin, f); break;
    case 2: dispatch_cin<2>(cin, f); break;
    case 4: dispatch_cin<4>(cin, f); break;
    case 8: dispatch_cin<8>(cin, f); break;
    default: throw std::logic_error("no direct convolution kernel for this width");
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const ConvParams& p) {
  check_kernel(x, p, 2, "conv2d");
  const std::size_t kh = p.kernel.dim(0), kw = p.kernel.dim(1), cin = x.dim(3),
                    cout = p.kernel.dim(3);
  const WindowPlan plan = plan_window(x.dim(1), x.dim(2), kh, kw, p.stride, p.padding);
  const std::size_t rows = x.dim(0) * plan.out_h * plan.out_w;
  Tensor y({x.dim(0), plan.out_h, plan.out_w, cout});
  if (kh == 1 && kw == 1 && p.stride == 1) {
    gemm(Trans::no, Trans::no, rows, cout, cin, 1.0, x.raw(), p.kernel.raw(), 0.0, y.raw());
  } else if (use_direct(cin, cout)) {
    dispatch_direct(cin, cout, [&](auto ci, auto co) {
      direct_forward<decltype(ci)::value, decltype(co)::value>(x, p.kernel, plan, y);
    });
  } else {
    const std::size_t k = kh * kw * cin;
    const std::size_t step = block_rows(plan, k);
    std::vector<double> cols(step * plan.out_w * k);
    for (std::size_t b = 0; b < x.dim(0); ++b) {
      const double* img = x.raw() + b * x.dim(1) * x.dim(2) * cin;
      for (std::size_t oy = 0; oy < plan.out_h; oy += step) {
        const std::size_t end = std::min(plan.out_h, oy + step);
        im2col_block(img, plan, cin, oy, end, cols.data());
        gemm(Trans::no, Trans::no, (end - oy) * plan.out_w, cout, k, 1.0, cols.data(),
             p.kernel.raw(), 0.0, y.raw() + (b * plan.out_h + oy) * plan.out_w * cout);
      }
    }
  }
  add_bias(y, p.bias);
  return y;
}

ConvGrads conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& grad_out) {
  check_kernel(x, p, 2, "conv2d_backward");
  const std::size_t kh = p.kernel.dim(0), kw = p.kernel.dim(1), cin = x.dim(3),
                    cout = p.kernel.dim(3);
  const WindowPlan plan = plan_window(x.dim(1), x.dim(2), kh, kw, p.stride, p.padding);
  const std::size_t rows = x.dim(0) * plan.out_h * plan.out_w;
  const std::size_t k = kh * kw * cin;
  if (grad_out.shape() != Shape{x.dim(0), plan.out_h, plan.out_w, cout}) {
    throw std::invalid_argument("conv2d_backward: gradient shape mismatch");
  }
  ConvGrads g;
  g.kernel = Tensor(p.kernel.shape());
  g.bias = bias_grad(grad_out);
  if (kh == 1 && kw == 1 && p.stride == 1) {
    gemm(Trans::yes, Trans::no, cin, cout, rows, 1.0, x.raw(), grad_out.raw(), 0.0, g.kernel.raw());
    g.input = Tensor(x.shape());
    gemm(Trans::no, Trans::yes, rows, cin, cout, 1.0, grad_out.raw(), p.kernel.raw(), 0.0,
         g.input.raw());
    return g;
  }
  g.input = Tensor(x.shape());
  if (use_direct(cin, cout)) {
    dispatch_direct(cin, cout, [&](auto ci, auto co) {
      direct_backward<decltype(ci)::value, decltype(co)::value>(x, p.kernel, plan, grad_out, g.input,
                                                                g.kernel);
    });
    return g;
  }
  const std::size_t step = block_rows(plan, k);
  std::vector<double> cols(step * plan.out_w * k), dcols(cols.size());
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    const std::size_t image = b * x.dim(1) * x.dim(2) * cin;
    for (std::size_t oy = 0; oy < plan.out_h; oy += step) {
      const std::size_t end = std::min(plan.out_h, oy + step);
      const std::size_t m = (end - oy) * plan.out_w;
      const double* dy = grad_out.raw() + (b * plan.out_h + oy) * plan.out_w * cout;
      im2col_block(x.raw() + image, plan, cin, oy, end, cols.data());
      gemm(Trans::yes, Trans::no, k, cout, m, 1.0, cols.data(), dy, 1.0, g.kernel.raw());
      gemm(Trans::no, Trans::yes, m, k, cout, 1.0, dy, p.kernel.raw(), 0.0, dcols.data());
      col2im_block(dcols.data(), plan, cin, oy, end, g.input.raw() + image);
    }
  }
  return g;
}

Tensor conv2d_transpose(const Tensor& y, const ConvParams& p) {
  check_kernel(y, p, 3, "conv2d_transpose");
  const std::size_t kh = p.kernel.dim(0), kw = p.kernel.dim(1), cout = p.kernel.dim(2),
                    cin = y.dim(3);
  const std::size_t n = y.dim(0);
  const std::size_t out_h = y.dim(1) * p.stride, out_w = y.dim(2) * p.stride;
  const WindowPlan plan = plan_window(out_h, out_w, kh, kw, p.stride, Padding::same);
  const std::size_t rows = n * y.dim(1) * y.dim(2);
  const std::size_t k = kh * kw * cout;
  Tensor cols({rows, k});
  gemm(Trans::no, Trans::yes, rows, k, cin, 1.0, y.raw(), p.kernel.raw(), 0.0, cols.raw());
  Tensor out = col2im(cols, n, cout, plan);
  add_bias(out, p.bias);
  return out;
}

ConvGrads conv2d_transpose_backward(const Tensor& y, const ConvParams& p, const Tensor& grad_out) {
  check_kernel(y, p, 3, "conv2d_transpose_backward");
  const std::size_t kh = p.kernel.dim(0), kw = p.kernel.dim(1), cout = p.kernel.dim(2),
                    cin = y.dim(3);
  const std::size_t n = y.dim(0);
  const std::size_t out_h = y.dim(1) * p.stride, out_w = y.dim(2) * p.stride;
  if (grad_out.shape() != Shape{n, out_h, out_w, cout}) {
    throw std::invalid_argument("conv2d_transpose_backward: gradient shape mismatch");
  }
  const WindowPlan plan = plan_window(out_h, out_w, kh, kw, p.stride, Padding::same);
  const std::size_t rows = n * y.dim(1) * y.dim(2);
  const std::size_t k = kh * kw * cout;
  const Tensor cols = im2col(grad_out, plan);
  ConvGrads g;
  g.input = Tensor(y.shape());
  gemm(Trans::no, Trans::no, rows, cin, k, 1.0, cols.raw(), p.kernel.raw(), 0.0, g.input.raw());
  g.kernel = Tensor(p.kernel.shape());
  gemm(Trans::yes, Trans::no, k, cin, rows, 1.0, cols.raw(), y.raw(), 0.0, g.kernel.raw());
  g.bias = bias_grad(grad_out);
  return g;
}

}  // namespace medic::ops
