#include "medic/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

namespace medic::nn {

using ad::Node;

namespace {

Tape& tape_of(Var v) { return v.tape(); }

/// Reduces a gradient to the shape of a (possibly broadcast) operand.
Tensor unbroadcast(const Tensor& grad, const Tensor& operand) {
  if (grad.shape() == operand.shape()) return grad;
  if (operand.size() == 1) return Tensor(operand.shape(), {medic::sum(grad).item()});
  throw std::logic_error("unbroadcast: unsupported broadcast");
}

std::vector<Var> with_optional(std::vector<Var> vars, const std::optional<Var>& extra) {
  if (extra) vars.push_back(*extra);
  return vars;
}

}  // namespace

// ---------------------------------------------------------------------------
// Arithmetic

Var add(Var a, Var b) {
  return tape_of(a).record("add", {a, b}, medic::add(a.value(), b.value()),
                           [](const Tape& t, const Node& n, const Tensor& g) {
                             return std::vector<Tensor>{unbroadcast(g, t.input_value(n, 0)),
                                                        unbroadcast(g, t.input_value(n, 1))};
                           });
}

Var sub(Var a, Var b) {
  return tape_of(a).record("sub", {a, b}, medic::sub(a.value(), b.value()),
                           [](const Tape& t, const Node& n, const Tensor& g) {
                             return std::vector<Tensor>{
                                 unbroadcast(g, t.input_value(n, 0)),
                                 unbroadcast(medic::mul(g, -1.0), t.input_value(n, 1))};
                           });
}

Var mul(Var a, Var b) {
  return tape_of(a).record("mul", {a, b}, medic::mul(a.value(), b.value()),
                           [](const Tape& t, const Node& n, const Tensor& g) {
                             const Tensor& x = t.input_value(n, 0);
                             const Tensor& y = t.input_value(n, 1);
                             return std::vector<Tensor>{unbroadcast(medic::mul(g, y), x),
                                                        unbroadcast(medic::mul(g, x), y)};
                           });
}

Var scale(Var a, double s) {
  return tape_of(a).record("scale", {a}, medic::mul(a.value(), s),
                           [s](const Tape&, const Node&, const Tensor& g) {
                             return std::vector<Tensor>{medic::mul(g, s)};
                           });
}

Var add_scalar(Var a, double s) {
  return tape_of(a).record("add_scalar", {a}, medic::add(a.value(), s),
                           [](const Tape&, const Node&, const Tensor& g) {
                             return std::vector<Tensor>{g};
                           });
}

Var sum(Var x) {
  return tape_of(x).record("sum", {x}, medic::sum(x.value()),
                           [](const Tape& t, const Node& n, const Tensor& g) {
                             return std::vector<Tensor>{
                                 Tensor::full(t.input_value(n, 0).shape(), g.item())};
                           });
}

Var mean(Var x) {
  return tape_of(x).record("mean", {x}, medic::mean(x.value()),
                           [](const Tape& t, const Node& n, const Tensor& g) {
                             const Tensor& in = t.input_value(n, 0);
                             return std::vector<Tensor>{Tensor::full(
                                 in.shape(), g.item() / static_cast<double>(in.size()))};
                           });
}

Var matmul(Var a, Var b) {
  return tape_of(a).record("matmul", {a, b}, medic::matmul(a.value(), b.value()),
                           [](const Tape& t, const Node& n, const Tensor& g) {
                             const Tensor& x = t.input_value(n, 0);
                             const Tensor& y = t.input_value(n, 1);
                             return std::vector<Tensor>{medic::matmul(g, medic::transpose(y)),
                                                        medic::matmul(medic::transpose(x), g)};
                           });
}

Var reshape(Var x, Shape shape) {
  return tape_of(x).record("reshape", {x}, x.value().reshape(std::move(shape)),
                           [](const Tape& t, const Node& n, const Tensor& g) {
                             return std::vector<Tensor>{g.reshape(t.input_value(n, 0).shape())};
                           });
}

Var log(Var x) {
  return tape_of(x).record("log", {x}, medic::log(x.value()),
                           [](const Tape& t, const Node& n, const Tensor& g) {
                             return std::vector<Tensor>{medic::div(g, t.input_value(n, 0))};
                           });
}

Var clamp(Var x, double lo, double hi) {
  Tensor out(x.shape());
  const Tensor& in = x.value();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::min(std::max(in[i], lo), hi);
  return tape_of(x).record("clamp", {x}, std::move(out),
                           [lo, hi](const Tape& t, const Node& n, const Tensor& g) {
                             const Tensor& in = t.input_value(n, 0);
                             Tensor gi(in.shape());
                             for (std::size_t i = 0; i < in.size(); ++i)
                               gi[i] = (in[i] >= lo && in[i] <= hi) ? g[i] : 0.0;
                             return std::vector<Tensor>{std::move(gi)};
                           });
}

Var clamp_min(Var x, double lo) { return clamp(x, lo, std::numeric_limits<double>::infinity()); }

Var pick(Var x, std::size_t flat) {
  if (flat >= x.value().size()) throw std::out_of_range("pick: index out of range");
  return tape_of(x).record("pick", {x}, Tensor::scalar(x.value()[flat]),
                           [flat](const Tape& t, const Node& n, const Tensor& g) {
                             Tensor gi(t.input_value(n, 0).shape());
                             gi[flat] = g.item();
                             return std::vector<Tensor>{std::move(gi)};
                           });
}

Var masked_mean(Var x, const Tensor& mask) {
  if (mask.shape() != x.shape()) throw std::invalid_argument("masked_mean: mask shape mismatch");
  double total = 0.0, count = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0.0) {
      total += x.value()[i];
      count += 1.0;
    }
  }
  if (count == 0.0) throw std::invalid_argument("masked_mean: empty mask");
  auto m = std::make_shared<Tensor>(mask);
  return tape_of(x).record("masked_mean", {x}, Tensor::scalar(total / count),
                           [m, count](const Tape&, const Node&, const Tensor& g) {
                             Tensor gi(m->shape());
                             for (std::size_t i = 0; i < gi.size(); ++i)
                               gi[i] = (*m)[i] != 0.0 ? g.item() / count : 0.0;
                             return std::vector<Tensor>{std::move(gi)};
                           });
}

// ---------------------------------------------------------------------------
// Activations

Var relu(Var x) {
  return tape_of(x).record("relu", {x}, ops::relu(x.value()),
                           [](const Tape& t, const Node& n, const Tensor& g) {
                             const Tensor& in = t.input_value(n, 0);
                             Tensor gi(in.shape());
                             for (std::size_t i = 0; i < in.size(); ++i)
                               gi[i] = in[i] > 0.0 ? g[i] : 0.0;
                             return std::vector<Tensor>{std::move(gi)};
                           });
}

Var sigmoid(Var x) {
  return tape_of(x).record("sigmoid", {x}, ops::sigmoid(x.value()),
                           [](const Tape&, const Node& n, const Tensor& g) {
                             const Tensor& s = n.value;
                             Tensor gi(s.shape());
                             for (std::size_t i = 0; i < s.size(); ++i)
                               gi[i] = g[i] * s[i] * (1.0 - s[i]);
                             return std::vector<Tensor>{std::move(gi)};
                           });
}

Var softmax(Var x, std::size_t axis) {
  return tape_of(x).record(
      "softmax", {x}, ops::softmax(x.value(), axis),
      [axis](const Tape&, const Node& n, const Tensor& g) {
        const Tensor& s = n.value;
        const Shape& sh = s.shape();
        std::size_t outer = 1, inner = 1;
        for (std::size_t i = 0; i < axis; ++i) outer *= sh[i];
        for (std::size_t i = axis + 1; i < sh.size(); ++i) inner *= sh[i];
        const std::size_t len = sh[axis];
        Tensor gi(sh);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double dotp = 0.0;
            for (std::size_t l = 0; l < len; ++l) dotp += g[base + l * inner] * s[base + l * inner];
            for (std::size_t l = 0; l < len; ++l) {
              const std::size_t idx = base + l * inner;
              gi[idx] = s[idx] * (g[idx] - dotp);
            }
          }
        }
        return std::vector<Tensor>{std::move(gi)};
      });
}

// ---------------------------------------------------------------------------
// Layers

Var dense(Var x, Var weight, std::optional<Var> bias) {
  Tensor out = ops::dense(x.value(), weight.value(), bias ? bias->value() : Tensor{});
  const bool has_bias = bias.has_value();
  return tape_of(x).record(
      "dense", with_optional({x, weight}, bias), std::move(out),
      [has_bias](const Tape& t, const Node& n, const Tensor& g) {
        ops::DenseGrads d = ops::dense_backward(t.input_value(n, 0), t.input_value(n, 1), g);
        std::vector<Tensor> r{std::move(d.input), std::move(d.weight)};
        if (has_bias) r.push_back(std::move(d.bias));
        return r;
      });
}

Var conv2d(Var x, Var kernel, std::optional<Var> bias, std::size_t stride, ops::Padding padding) {
  ops::ConvParams p{kernel.value(), bias ? bias->value() : Tensor{}, stride, padding};
  Tensor out = ops::conv2d(x.value(), p);
  const bool has_bias = bias.has_value();
  return tape_of(x).record(
      "conv2d", with_optional({x, kernel}, bias), std::move(out),
      [has_bias, stride, padding](const Tape& t, const Node& n, const Tensor& g) {
        const ops::ConvParams p{t.input_value(n, 1), Tensor{}, stride, padding};
        ops::ConvGrads d = ops::conv2d_backward(t.input_value(n, 0), p, g);
        std::vector<Tensor> r{std::move(d.input), std::move(d.kernel)};
        if (has_bias) r.push_back(std::move(d.bias));
        return r;
      });
}

Var conv2d_transpose(Var x, Var kernel, std::optional<Var> bias, std::size_t stride) {
  ops::ConvParams p{kernel.value(), bias ? bias->value() : Tensor{}, stride, ops::Padding::same};
  Tensor out = ops::conv2d_transpose(x.value(), p);
  const bool has_bias = bias.has_value();
  return tape_of(x).record(
      "conv2d_transpose", with_optional({x, kernel}, bias), std::move(out),
      [has_bias, stride](const Tape& t, const Node& n, const Tensor& g) {
        const ops::ConvParams p{t.input_value(n, 1), Tensor{}, stride, ops::Padding::same};
        ops::ConvGrads d = ops::conv2d_transpose_backward(t.input_value(n, 0), p, g);
        std::vector<Tensor> r{std::move(d.input), std::move(d.kernel)};
        if (has_bias) r.push_back(std::move(d.bias));
        return r;
      });
}

Var maxpool2d(Var x, std::size_t window, std::size_t stride, ops::PoolRounding rounding) {
  ops::PoolResult r = ops::maxpool2d(x.value(), window, stride, rounding);
  auto indices = std::make_shared<std::vector<std::size_t>>(std::move(r.argmax));
  return tape_of(x).record("maxpool2d", {x}, std::move(r.output),
                           [indices](const Tape& t, const Node& n, const Tensor& g) {
                             return std::vector<Tensor>{ops::maxpool2d_backward(
                                 g, *indices, t.input_value(n, 0).shape())};
                           });
}

Var batchnorm(Var x, Var gamma, Var beta, const ops::BatchNormStats& stats, ops::Mode mode,
              ops::BatchNormStats* update) {
  if (mode == ops::Mode::infer) {
    Tensor out = ops::batchnorm_infer(x.value(), gamma.value(), beta.value(), stats);
    // Affine in x with fixed statistics.
    std::vector<double> inv_std(stats.running_var.size());
    for (std::size_t k = 0; k < inv_std.size(); ++k)
      inv_std[k] = 1.0 / std::sqrt(stats.running_var[k] + ops::kBatchNormEps);
    auto mean = std::make_shared<Tensor>(stats.running_mean);
    return tape_of(x).record(
        "batchnorm_infer", {x, gamma, beta}, std::move(out),
        [inv_std, mean](const Tape& t, const Node& n, const Tensor& g) {
          const Tensor& in = t.input_value(n, 0);
          const Tensor& gm = t.input_value(n, 1);
          const std::size_t c = gm.size();
          Tensor gi(in.shape()), gg({c}), gb({c});
          for (std::size_t i = 0; i < in.size(); ++i) {
            const std::size_t k = i % c;
            gi[i] = g[i] * gm[k] * inv_std[k];
            gg[k] += g[i] * (in[i] - (*mean)[k]) * inv_std[k];
            gb[k] += g[i];
          }
          return std::vector<Tensor>{std::move(gi), std::move(gg), std::move(gb)};
        });
  }
  auto cache = std::make_shared<ops::BatchNormCache>();
  ops::BatchNormStats folded = stats;
  Tensor out = ops::batchnorm_train(x.value(), gamma.value(), beta.value(), folded, cache.get());
  if (update) *update = std::move(folded);
  return tape_of(x).record("batchnorm", {x, gamma, beta}, std::move(out),
                           [cache](const Tape& t, const Node& n, const Tensor& g) {
                             ops::BatchNormGrads d =
                                 ops::batchnorm_backward(g, t.input_value(n, 1), *cache);
                             return std::vector<Tensor>{std::move(d.input), std::move(d.gamma),
                                                        std::move(d.beta)};
                           });
}

Var dropout(Var x, double rate, Rng& rng, ops::Mode mode) {
  ops::DropoutResult r = ops::dropout(x.value(), rate, rng, mode);
  auto mask = std::make_shared<Tensor>(std::move(r.mask));
  return tape_of(x).record("dropout", {x}, std::move(r.output),
                           [mask](const Tape&, const Node&, const Tensor& g) {
                             return std::vector<Tensor>{medic::mul(g, *mask)};
                           });
}

Var concat_channels(Var a, Var b) {
  const std::size_t ca = a.shape().back(), cb = b.shape().back();
  return tape_of(a).record("concat", {a, b}, ops::concat_channels(a.value(), b.value()),
                           [ca, cb](const Tape&, const Node&, const Tensor& g) {
                             return std::vector<Tensor>{ops::slice_channels(g, 0, ca),
                                                        ops::slice_channels(g, ca, ca + cb)};
                           });
}

// ---------------------------------------------------------------------------
// Involution

Var involution_sites(Var x, std::size_t stride) {
  if (stride == 1) return x;
  return tape_of(x).record("involution_sites", {x}, ops::involution_sites(x.value(), stride),
                           [stride](const Tape& t, const Node& n, const Tensor& g) {
                             return std::vector<Tensor>{ops::involution_sites_backward(
                                 g, t.input_value(n, 0).shape(), stride)};
                           });
}

Var involution_apply(Var x, Var kernels, const InvolutionShape& s) {
  Tensor out = ops::involution_apply(x.value(), kernels.value(), s.kernel_size, s.groups, s.stride);
  return tape_of(x).record(
      "involution_apply", {x, kernels}, std::move(out),
      [s](const Tape& t, const Node& n, const Tensor& g) {
        ops::InvolutionApplyGrads d = ops::involution_apply_backward(
            t.input_value(n, 0), t.input_value(n, 1), g, s.kernel_size, s.groups, s.stride);
        return std::vector<Tensor>{std::move(d.input), std::move(d.kernels)};
      });
}

InvolutionOutputs involution2d(Var x, const InvolutionVars& p, const InvolutionShape& s,
                               ops::Mode mode) {
  if (x.value().rank() != 4) throw std::invalid_argument("involution expects [N,H,W,C] input");
  const Var sites = involution_sites(x, s.stride);
  const Shape& ss = sites.shape();
  const std::size_t positions = ss[0] * ss[1] * ss[2];
  Var hidden = dense(reshape(sites, {positions, ss[3]}), p.w0, p.b0);
  if (p.norm_gamma) {
    if (!p.norm_beta || !p.norm_stats) throw std::invalid_argument("involution norm incomplete");
    hidden = batchnorm(hidden, *p.norm_gamma, *p.norm_beta, *p.norm_stats, mode, p.norm_update);
  }
  hidden = relu(hidden);
  Var flat = dense(hidden, p.w1, p.b1);
  Var kernels = reshape(flat, {ss[0], ss[1], ss[2], s.kernel_size, s.kernel_size, s.groups});
  return {involution_apply(x, kernels, s), kernels};
}

}  // namespace medic::nn
