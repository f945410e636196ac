#include "medic/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>

#include "medic/losses.hpp"
#include "medic/nn.hpp"
#include "medic/rng.hpp"

namespace medic::gradcheck {

using ad::Tape;
using ad::Var;

namespace {

// Orders of magnitude above the finite-difference step, so no central
// difference straddles a ReLU kink or a pooling tie.
constexpr double kKinkMargin = 1e-3;
constexpr int kMaxRedraws = 200;

struct Problem {
  std::vector<Tensor> params;
  ad::ScalarFn fn;
};

/// Reduces an output to a scalar with fixed random weights so every output
/// element carries a distinct gradient.
Var weighted_sum(Var y, const Tensor& weights) {
  return nn::sum(nn::mul(y, y.tape().constant(weights)));
}

double min_abs(const Tensor& t) {
  double m = INFINITY;
  for (double v : t.values()) m = std::min(m, std::abs(v));
  return m;
}

Tensor binary_mask(Rng& rng, const Shape& shape) {
  Tensor m(shape);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  return m;
}

struct InvolutionSetup {
  Shape x;
  std::size_t k, g, width, stride;
  bool norm;
};

Problem involution_problem(Rng& rng, const InvolutionSetup& s) {
  const std::size_t c = s.x[3], taps = s.k * s.k * s.g;
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    Tensor x = normal_tensor(rng, s.x, 0.0, 1.0);
    Tensor w0 = normal_tensor(rng, {c, s.width}, 0.0, 0.7);
    Tensor b0 = normal_tensor(rng, {s.width}, 0.0, 0.3);
    Tensor w1 = normal_tensor(rng, {s.width, taps}, 0.0, 0.7);
    Tensor b1 = normal_tensor(rng, {taps}, 0.0, 0.3);
    Tensor gamma = uniform_tensor(rng, {s.width}, 0.5, 1.5);
    Tensor beta = normal_tensor(rng, {s.width}, 0.0, 0.3);

    // Reject draws whose ReLU inputs sit near the kink.
    const Tensor sites = ops::involution_sites(x, s.stride);
    const std::size_t positions = sites.size() / c;
    Tensor pre = ops::dense(sites.reshape({positions, c}), w0, b0);
    if (s.norm) {
      ops::BatchNormStats stats = ops::BatchNormStats::identity(s.width);
      pre = ops::batchnorm_train(pre, gamma, beta, stats);
    }
    if (min_abs(pre) < kKinkMargin) continue;

    const InvolutionSetup setup = s;
    Tensor r = normal_tensor(
        rng, {s.x[0], ops::strided_extent(s.x[1], s.stride), ops::strided_extent(s.x[2], s.stride), c}, 0.0, 1.0);
    Problem p;
    p.params = {x, w0, b0, w1, b1};
    if (s.norm) {
      p.params.push_back(gamma);
      p.params.push_back(beta);
    }
    auto stats = std::make_shared<ops::BatchNormStats>(ops::BatchNormStats::identity(s.width));
    p.fn = [setup, r, stats](Tape&, std::span<const Var> v) {
      nn::InvolutionVars iv;
      iv.w0 = v[1];
      iv.b0 = v[2];
      iv.w1 = v[3];
      iv.b1 = v[4];
      if (setup.norm) {
        iv.norm_gamma = v[5];
        iv.norm_beta = v[6];
        iv.norm_stats = stats.get();
      }
      const auto out = nn::involution2d(v[0], iv, {setup.k, setup.g, setup.stride}, ops::Mode::train);
      return weighted_sum(out.output, r);
    };
    return p;
  }
  throw std::runtime_error("could not draw kink-free involution inputs");
}

Problem conv_problem(Rng& rng, Shape xs, std::size_t k, std::size_t cout, std::size_t stride,
                     ops::Padding padding) {
  Tensor x = normal_tensor(rng, xs, 0.0, 1.0);
  Tensor kernel = normal_tensor(rng, {k, k, xs[3], cout}, 0.0, 0.5);
  Tensor bias = normal_tensor(rng, {cout}, 0.0, 0.5);
  const Tensor y = ops::conv2d(x, {kernel, bias, stride, padding});
  Tensor r = normal_tensor(rng, y.shape(), 0.0, 1.0);
  return {{x, kernel, bias}, [=](Tape&, std::span<const Var> v) {
            return weighted_sum(nn::conv2d(v[0], v[1], v[2], stride, padding), r);
          }};
}

Problem conv_transpose_problem(Rng& rng) {
  Tensor y = normal_tensor(rng, {2, 3, 3, 4}, 0.0, 1.0);
  Tensor kernel = normal_tensor(rng, {2, 2, 3, 4}, 0.0, 0.5);
  Tensor bias = normal_tensor(rng, {3}, 0.0, 0.5);
  Tensor r = normal_tensor(rng, {2, 6, 6, 3}, 0.0, 1.0);
  return {{y, kernel, bias}, [=](Tape&, std::span<const Var> v) {
            return weighted_sum(nn::conv2d_transpose(v[0], v[1], v[2], 2), r);
          }};
}

Problem dense_problem(Rng& rng) {
  Tensor x = normal_tensor(rng, {4, 5}, 0.0, 1.0);
  Tensor w = normal_tensor(rng, {5, 3}, 0.0, 0.5);
  Tensor b = normal_tensor(rng, {3}, 0.0, 0.5);
  Tensor r = normal_tensor(rng, {4, 3}, 0.0, 1.0);
  return {{x, w, b}, [=](Tape&, std::span<const Var> v) { return weighted_sum(nn::dense(v[0], v[1], v[2]), r); }};
}

Problem batchnorm_problem(Rng& rng) {
  Tensor x = normal_tensor(rng, {3, 2, 2, 3}, 0.5, 1.5);
  Tensor gamma = uniform_tensor(rng, {3}, 0.5, 1.5);
  Tensor beta = normal_tensor(rng, {3}, 0.0, 0.5);
  Tensor r = normal_tensor(rng, x.shape(), 0.0, 1.0);
  return {{x, gamma, beta}, [=](Tape&, std::span<const Var> v) {
            const auto stats = ops::BatchNormStats::identity(3);
            return weighted_sum(nn::batchnorm(v[0], v[1], v[2], stats, ops::Mode::train), r);
          }};
}

std::vector<std::size_t> labels_for(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> labels(n);
  for (auto& l : labels) l = static_cast<std::size_t>(rng.uniform_int(k));
  return labels;
}

Problem maxpool_problem(Rng& rng) {
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    Tensor x = normal_tensor(rng, {2, 5, 5, 2}, 0.0, 1.0);
    // Every window needs a clear winner: redraw when two values nearly tie.
    std::vector<double> v = x.values();
    std::sort(v.begin(), v.end());
    bool ok = true;
    for (std::size_t i = 1; i < v.size(); ++i) ok = ok && v[i] - v[i - 1] > 1e-4;
    if (!ok) continue;
    Tensor r = normal_tensor(rng, {2, 3, 3, 2}, 0.0, 1.0);
    return {{x}, [=](Tape&, std::span<const Var> vars) {
              return weighted_sum(nn::maxpool2d(vars[0], 2, 2, ops::PoolRounding::ceil), r);
            }};
  }
  throw std::runtime_error("could not draw tie-free pooling inputs");
}

using Builder = std::function<Problem(Rng&)>;

const std::vector<std::pair<std::string, Builder>>& registry() {
  static const std::vector<std::pair<std::string, Builder>> ops = {
      {"involution2d", [](Rng& r) { return involution_problem(r, {{2, 5, 5, 4}, 3, 2, 2, 1, false}); }},
      {"involution2d-stride2", [](Rng& r) { return involution_problem(r, {{1, 6, 5, 2}, 3, 1, 1, 2, false}); }},
      {"involution2d-k5-norm", [](Rng& r) { return involution_problem(r, {{2, 6, 6, 4}, 5, 2, 2, 1, true}); }},
      {"conv2d", [](Rng& r) { return conv_problem(r, {2, 5, 5, 3}, 3, 4, 1, ops::Padding::same); }},
      {"conv2d-stride2", [](Rng& r) { return conv_problem(r, {2, 7, 6, 2}, 3, 3, 2, ops::Padding::same); }},
      {"conv2d-valid", [](Rng& r) { return conv_problem(r, {1, 6, 6, 2}, 3, 2, 1, ops::Padding::valid); }},
      {"conv2d_transpose", conv_transpose_problem},
      {"dense", dense_problem},
      {"batchnorm-train", batchnorm_problem},
      {"maxpool2d", maxpool_problem},
      {"softmax+cross-entropy",
       [](Rng& r) {
         Tensor z = normal_tensor(r, {4, 5}, 0.0, 1.0);
         const auto labels = labels_for(r, 4, 5);
         return Problem{{z}, [=](Tape&, std::span<const Var> v) {
                          return loss::cross_entropy(nn::softmax(v[0], 1), labels);
                        }};
       }},
      {"softmax-cross-entropy-fused",
       [](Rng& r) {
         Tensor z = normal_tensor(r, {4, 5}, 0.0, 1.0);
         const auto labels = labels_for(r, 4, 5);
         return Problem{{z}, [=](Tape&, std::span<const Var> v) { return loss::softmax_cross_entropy(v[0], labels); }};
       }},
      {"bce",
       [](Rng& r) {
         Tensor p = uniform_tensor(r, {2, 3, 3, 1}, 0.05, 0.95);
         const Tensor m = binary_mask(r, p.shape());
         return Problem{{p}, [=](Tape&, std::span<const Var> v) { return loss::bce(v[0], m); }};
       }},
      {"sigmoid-bce",
       [](Rng& r) {
         Tensor z = normal_tensor(r, {2, 3, 3, 1}, 0.0, 2.0);
         const Tensor m = binary_mask(r, z.shape());
         return Problem{{z}, [=](Tape&, std::span<const Var> v) { return loss::sigmoid_bce(v[0], m); }};
       }},
      {"dice_loss",
       [](Rng& r) {
         Tensor p = uniform_tensor(r, {2, 3, 3, 1}, 0.05, 0.95);
         const Tensor m = binary_mask(r, p.shape());
         return Problem{{p}, [=](Tape&, std::span<const Var> v) { return loss::dice_loss(v[0], m); }};
       }},
  };
  return ops;
}

}  // namespace

std::vector<std::string> op_names() {
  std::vector<std::string> names;
  for (const auto& [name, _] : registry()) names.push_back(name);
  return names;
}

ad::GradCheckResult check_op(const std::string& op, std::uint64_t seed, double eps) {
  const auto& ops = registry();
  for (std::size_t i = 0; i < ops.size(); ++i) {
    if (ops[i].first != op) continue;
    Rng rng(seed * 1000 + i);
    Problem p = ops[i].second(rng);
    return ad::grad_check(p.fn, p.params, eps);
  }
  throw std::invalid_argument("unknown grad-check op '" + op + "'");
}

std::vector<Entry> run_suite(const std::vector<std::uint64_t>& seeds, const std::vector<std::string>& ops) {
  std::vector<Entry> out;
  for (const auto& op : ops)
    for (auto seed : seeds) out.push_back({op, seed, check_op(op, seed)});
  return out;
}

}  // namespace medic::gradcheck
