#include "medic/model.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "medic/nn.hpp"

namespace medic::zoo {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::size_t auto_reduction(std::size_t channels) {
  for (std::size_t r = std::min<std::size_t>(4, channels); r >= 1; --r)
    if (channels % r == 0) return r;
  return 1;
}

struct ResolvedInvolution {
  std::size_t reduction;
  std::size_t width;
  std::size_t taps;
};

ResolvedInvolution resolve(const InvolutionLayer& inv, std::size_t channels) {
  ResolvedInvolution r{};
  if (inv.bottleneck_width != 0) {
    // Explicit width: only K and G are constrained.
    ops::validate_involution(channels, inv.kernel_size, inv.groups, 1);
    r.reduction = 1;
    r.width = inv.bottleneck_width;
  } else {
    r.reduction = inv.reduction != 0 ? inv.reduction : auto_reduction(channels);
    ops::validate_involution(channels, inv.kernel_size, inv.groups, r.reduction);
    r.width = channels / r.reduction;
  }
  r.taps = inv.kernel_size * inv.kernel_size * inv.groups;
  return r;
}

std::string padding_name(ops::Padding p) { return p == ops::Padding::same ? "same" : "valid"; }
std::string rounding_name(ops::PoolRounding r) {
  return r == ops::PoolRounding::floor ? "floor" : "ceil";
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::involution: return "involution";
    case LayerKind::conv: return "conv";
    case LayerKind::conv_transpose: return "conv_transpose";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::dropout: return "dropout";
    case LayerKind::dense: return "dense";
    case LayerKind::activation: return "activation";
    case LayerKind::concat_skip: return "concat_skip";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::medic_cls: return "medic-cls";
    case ModelKind::medic_seg: return "medic-seg";
    case ModelKind::cnn: return "cnn";
    case ModelKind::inn: return "inn";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& s) {
  if (s == "medic-cls") return ModelKind::medic_cls;
  if (s == "medic-seg" || s == "unet") return ModelKind::medic_seg;
  if (s == "cnn") return ModelKind::cnn;
  if (s == "inn") return ModelKind::inn;
  throw std::invalid_argument("unknown model kind '" + s + "'");
}

bool is_segmentation(ModelKind kind) { return kind == ModelKind::medic_seg; }

// ---------------------------------------------------------------------------
// Config text

std::string to_text(const ModelConfig& c) {
  std::ostringstream os;
  os << "kind = " << to_string(c.kind) << '\n';
  os << "input_shape = " << c.input_shape.at(0) << 'x' << c.input_shape.at(1) << 'x'
     << c.input_shape.at(2) << '\n';
  os << "num_classes = " << c.num_classes << '\n';
  os << "n_involutions = " << c.n_involutions << '\n';
  os << "width_divisor = " << c.width_divisor << '\n';
  os << "extra_convs = " << (c.extra_convs ? 1 : 0) << '\n';
  os << "involution_bias = " << (c.conventions.involution_bias ? 1 : 0) << '\n';
  os << "bottleneck_norm = " << (c.conventions.bottleneck_norm ? 1 : 0) << '\n';
  os << "bottleneck_width = " << c.conventions.bottleneck_width << '\n';
  os << "involution_reduction = " << c.conventions.involution_reduction << '\n';
  os << "pool_rounding = " << rounding_name(c.conventions.pool_rounding) << '\n';
  os << "conv_padding = " << padding_name(c.conventions.conv_padding) << '\n';
  os << "seed = " << c.seed << '\n';
  return os.str();
}

ModelConfig model_config_from_text(const std::string& text) {
  ModelConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "kind") c.kind = parse_model_kind(value);
    else if (key == "input_shape") {
      Shape s;
      std::istringstream vs(value);
      std::string part;
      while (std::getline(vs, part, 'x')) s.push_back(std::stoul(part));
      if (s.size() != 3) throw std::invalid_argument("input_shape must be HxWxC");
      c.input_shape = s;
    } else if (key == "num_classes") c.num_classes = std::stoul(value);
    else if (key == "n_involutions") c.n_involutions = std::stoul(value);
    else if (key == "width_divisor") c.width_divisor = std::stoul(value);
    else if (key == "extra_convs") c.extra_convs = value == "1";
    else if (key == "involution_bias") c.conventions.involution_bias = value == "1";
    else if (key == "bottleneck_norm") c.conventions.bottleneck_norm = value == "1";
    else if (key == "bottleneck_width") c.conventions.bottleneck_width = std::stoul(value);
    else if (key == "involution_reduction") c.conventions.involution_reduction = std::stoul(value);
    else if (key == "pool_rounding")
      c.conventions.pool_rounding = value == "ceil" ? ops::PoolRounding::ceil : ops::PoolRounding::floor;
    else if (key == "conv_padding")
      c.conventions.conv_padding = value == "valid" ? ops::Padding::valid : ops::Padding::same;
    else if (key == "seed") c.seed = std::stoull(value);
    else throw std::invalid_argument("unknown model config key '" + key + "'");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Shape propagation

std::size_t Architecture::index_of(const std::string& layer_name) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].name == layer_name) return i;
  throw std::invalid_argument("no layer named '" + layer_name + "'");
}

std::size_t Architecture::count(LayerKind kind) const {
  return static_cast<std::size_t>(std::count_if(
      layers.begin(), layers.end(), [kind](const LayerSpec& l) { return l.kind() == kind; }));
}

namespace {

Shape require_image(const Shape& in, const std::string& name) {
  if (in.size() != 3) {
    throw std::invalid_argument("layer '" + name + "' expects an [H,W,C] feature map, got " +
                                shape_to_string(in));
  }
  return in;
}

Shape propagate(const LayerSpec& layer, const Shape& in,
                const std::map<std::string, Shape>& named) {
  const std::string& name = layer.name;
  return std::visit(
      overloaded{
          [&](const InvolutionLayer& l) -> Shape {
            const Shape s = require_image(in, name);
            resolve(l, s[2]);
            return {ops::strided_extent(s[0], l.stride), ops::strided_extent(s[1], l.stride), s[2]};
          },
          [&](const ConvLayer& l) -> Shape {
            const Shape s = require_image(in, name);
            if (l.filters == 0) throw std::invalid_argument("layer '" + name + "': zero filters");
            const auto plan = ops::plan_window(s[0], s[1], l.kernel, l.kernel, l.stride, l.padding);
            return {plan.out_h, plan.out_w, l.filters};
          },
          [&](const ConvTransposeLayer& l) -> Shape {
            const Shape s = require_image(in, name);
            return {s[0] * l.stride, s[1] * l.stride, l.filters};
          },
          [&](const MaxPoolLayer& l) -> Shape {
            const Shape s = require_image(in, name);
            const std::size_t h = ops::pooled_extent(s[0], l.window, l.stride, l.rounding);
            const std::size_t w = ops::pooled_extent(s[1], l.window, l.stride, l.rounding);
            if (h == 0 || w == 0) {
              throw std::invalid_argument("layer '" + name + "': input " + shape_to_string(s) +
                                          " too small to pool");
            }
            return {h, w, s[2]};
          },
          [&](const BatchNormLayer&) -> Shape { return in; },
          [&](const DropoutLayer& l) -> Shape {
            if (!(l.rate >= 0.0 && l.rate < 1.0)) {
              throw std::invalid_argument("layer '" + name + "': dropout rate outside [0,1)");
            }
            return in;
          },
          [&](const DenseLayer& l) -> Shape {
            if (in.size() != 1) {
              throw std::invalid_argument("layer '" + name + "' expects a flat input, got " +
                                          shape_to_string(in));
            }
            return {l.units};
          },
          [&](const ActivationLayer&) -> Shape { return in; },
          [&](const ConcatSkipLayer& l) -> Shape {
            const auto it = named.find(l.from);
            if (it == named.end()) {
              throw std::invalid_argument("layer '" + name + "': skip source '" + l.from +
                                          "' is not an earlier layer");
            }
            const Shape s = require_image(in, name);
            const Shape& o = it->second;
            if (o.size() != 3 || o[0] != s[0] || o[1] != s[1]) {
              throw std::invalid_argument("layer '" + name + "': skip " + shape_to_string(o) +
                                          " does not match " + shape_to_string(s));
            }
            return {s[0], s[1], s[2] + o[2]};
          },
          [&](const FlattenLayer&) -> Shape { return {shape_size(in)}; },
      },
      layer.params);
}

}  // namespace

Architecture make_architecture(const ModelConfig& config, std::vector<LayerSpec> layers) {
  if (config.input_shape.size() != 3) throw std::invalid_argument("input shape must be [H,W,C]");
  Architecture arch{config, std::move(layers), {}, {}};
  std::map<std::string, Shape> named;
  Shape cur = config.input_shape;
  for (const auto& layer : arch.layers) {
    if (named.count(layer.name)) throw std::invalid_argument("duplicate layer name '" + layer.name + "'");
    arch.input_shapes.push_back(cur);
    cur = propagate(layer, cur, named);
    named[layer.name] = cur;
    arch.output_shapes.push_back(cur);
  }
  return arch;
}

// ---------------------------------------------------------------------------
// Counting

std::size_t layer_parameter_count(const LayerSpec& layer, const Shape& in, CountPolicy policy) {
  return std::visit(
      overloaded{
          [&](const InvolutionLayer& l) -> std::size_t {
            const std::size_t c = in.at(2);
            const ResolvedInvolution r = resolve(l, c);
            std::size_t n = c * r.width + r.width * r.taps;
            if (l.with_bias) n += r.width + r.taps;
            if (l.bottleneck_norm) n += (policy.include_running_stats ? 4 : 2) * r.width;
            return n;
          },
          [&](const ConvLayer& l) -> std::size_t {
            return l.kernel * l.kernel * in.at(2) * l.filters + l.filters;
          },
          [&](const ConvTransposeLayer& l) -> std::size_t {
            return l.kernel * l.kernel * l.filters * in.at(2) + l.filters;
          },
          [&](const BatchNormLayer&) -> std::size_t {
            return (policy.include_running_stats ? 4 : 2) * in.back();
          },
          [&](const DenseLayer& l) -> std::size_t { return in.at(0) * l.units + l.units; },
          [&](const auto&) -> std::size_t { return 0; },
      },
      layer.params);
}

std::vector<LayerCount> per_layer_counts(const Architecture& arch, CountPolicy policy) {
  std::vector<LayerCount> out;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& l = arch.layers[i];
    out.push_back({l.name, l.kind(), layer_parameter_count(l, arch.input_shapes[i], policy)});
  }
  return out;
}

std::size_t closed_form_parameter_count(const Architecture& arch, CountPolicy policy) {
  std::size_t total = 0;
  for (const auto& c : per_layer_counts(arch, policy)) total += c.count;
  return total;
}

// ---------------------------------------------------------------------------
// Parameters

void ParameterStore::add(std::string name, Tensor value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  index_[name] = entries_.size();
  entries_.emplace_back(std::move(name), std::move(value));
}

const Tensor& ParameterStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("no parameter named '" + name + "'");
  return entries_[it->second].second;
}

Tensor& ParameterStore::get(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("no parameter named '" + name + "'");
  return entries_[it->second].second;
}

Model build(const Architecture& arch) {
  Model m{arch, {}, {}};
  Rng rng(arch.config.seed);
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& layer = arch.layers[i];
    const Shape& in = arch.input_shapes[i];
    const std::string& n = layer.name;
    std::visit(
        overloaded{
            [&](const InvolutionLayer& l) {
              const std::size_t c = in[2];
              const ResolvedInvolution r = resolve(l, c);
              m.params.add(n + ".w0", normal_init(rng, {c, r.width}, c));
              if (l.with_bias) m.params.add(n + ".b0", Tensor::zeros({r.width}));
              if (l.bottleneck_norm) {
                m.params.add(n + ".norm_gamma", Tensor::full({r.width}, 1.0));
                m.params.add(n + ".norm_beta", Tensor::zeros({r.width}));
                m.buffers[n + ".norm"] = ops::BatchNormStats::identity(r.width);
              }
              // Every output sums K*K generated taps, each fed by `width` bottleneck units.
              m.params.add(n + ".w1", normal_init(rng, {r.width, r.taps}, r.width * l.kernel_size * l.kernel_size));
              if (l.with_bias) m.params.add(n + ".b1", Tensor::zeros({r.taps}));
            },
            [&](const ConvLayer& l) {
              const std::size_t fan_in = l.kernel * l.kernel * in[2];
              m.params.add(n + ".kernel", normal_init(rng, {l.kernel, l.kernel, in[2], l.filters}, fan_in));
              m.params.add(n + ".bias", Tensor::zeros({l.filters}));
            },
            [&](const ConvTransposeLayer& l) {
              // Each output pixel sums ceil(K/s)^2 taps per input channel.
              const std::size_t taps = (l.kernel + l.stride - 1) / l.stride;
              const std::size_t fan_in = taps * taps * in[2];
              m.params.add(n + ".kernel", normal_init(rng, {l.kernel, l.kernel, l.filters, in[2]}, fan_in));
              m.params.add(n + ".bias", Tensor::zeros({l.filters}));
            },
            [&](const BatchNormLayer&) {
              const std::size_t c = in.back();
              m.params.add(n + ".gamma", Tensor::full({c}, 1.0));
              m.params.add(n + ".beta", Tensor::zeros({c}));
              m.buffers[n] = ops::BatchNormStats::identity(c);
            },
            [&](const DenseLayer& l) {
              m.params.add(n + ".weight", normal_init(rng, {in[0], l.units}, in[0]));
              m.params.add(n + ".bias", Tensor::zeros({l.units}));
            },
            [&](const auto&) {},
        },
        layer.params);
  }
  return m;
}

Model build(const ModelConfig& config) { return build(describe(config)); }

std::size_t count_parameters(const Model& model, CountPolicy policy) {
  std::size_t total = 0;
  for (const auto& [name, t] : model.params.entries()) total += t.size();
  if (policy.include_running_stats) {
    for (const auto& [name, s] : model.buffers) total += s.running_mean.size() + s.running_var.size();
  }
  return total;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

ad::Var activate(ad::Var x, Activation fn) {
  switch (fn) {
    case Activation::none: return x;
    case Activation::relu: return nn::relu(x);
    case Activation::sigmoid: return nn::sigmoid(x);
    case Activation::softmax: return nn::softmax(x, x.shape().size() - 1);
  }
  return x;
}

}  // namespace

ForwardTrace forward(const Model& model, ad::Tape& tape, ad::Var input,
                     const ForwardOptions& options) {
  const Architecture& arch = model.arch;
  Shape expected{input.shape().empty() ? 0 : input.shape()[0]};
  expected.insert(expected.end(), arch.config.input_shape.begin(), arch.config.input_shape.end());
  if (input.shape() != expected || expected[0] == 0) {
    throw std::invalid_argument("input shape " + shape_to_string(input.shape()) +
                                " does not match model input [N," +
                                shape_to_string(arch.config.input_shape).substr(1));
  }
  const bool train = options.mode == ops::Mode::train;

  ForwardTrace trace;
  std::map<std::string, ad::Var> pvars;
  for (const auto& [name, value] : model.params.entries()) {
    const ad::Var v = tape.leaf(value, options.param_grads, name);
    pvars[name] = v;
    trace.params.emplace_back(name, v);
  }
  auto param = [&](const std::string& name) { return pvars.at(name); };
  auto optional_param = [&](const std::string& name) -> std::optional<ad::Var> {
    const auto it = pvars.find(name);
    if (it == pvars.end()) return std::nullopt;
    return it->second;
  };
  auto update_slot = [&](const std::string& key) -> ops::BatchNormStats* {
    if (!train || !options.update_buffers) return nullptr;
    return &(*options.update_buffers)[key];
  };

  ad::Var cur = input;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& layer = arch.layers[i];
    const std::string& n = layer.name;
    if (options.logits && i + 1 == arch.layers.size() && layer.kind() == LayerKind::activation) break;
    try {
      cur = std::visit(
          overloaded{
              [&](const InvolutionLayer& l) {
                nn::InvolutionVars v;
                v.w0 = param(n + ".w0");
                v.b0 = optional_param(n + ".b0");
                v.w1 = param(n + ".w1");
                v.b1 = optional_param(n + ".b1");
                if (l.bottleneck_norm) {
                  v.norm_gamma = param(n + ".norm_gamma");
                  v.norm_beta = param(n + ".norm_beta");
                  v.norm_stats = &model.buffers.at(n + ".norm");
                  v.norm_update = update_slot(n + ".norm");
                }
                auto out = nn::involution2d(cur, v, {l.kernel_size, l.groups, l.stride}, options.mode);
                trace.involution_kernels[n] = out.kernels;
                return out.output;
              },
              [&](const ConvLayer& l) {
                return activate(nn::conv2d(cur, param(n + ".kernel"), param(n + ".bias"), l.stride,
                                           l.padding),
                                l.activation);
              },
              [&](const ConvTransposeLayer& l) {
                return activate(nn::conv2d_transpose(cur, param(n + ".kernel"), param(n + ".bias"),
                                                     l.stride),
                                l.activation);
              },
              [&](const MaxPoolLayer& l) { return nn::maxpool2d(cur, l.window, l.stride, l.rounding); },
              [&](const BatchNormLayer&) {
                return nn::batchnorm(cur, param(n + ".gamma"), param(n + ".beta"),
                                     model.buffers.at(n), options.mode, update_slot(n));
              },
              [&](const DropoutLayer& l) {
                if (train && !options.rng) throw std::invalid_argument("dropout needs an Rng in train mode");
                Rng unused(0);
                return nn::dropout(cur, l.rate, options.rng ? *options.rng : unused, options.mode);
              },
              [&](const DenseLayer& l) {
                return activate(nn::dense(cur, param(n + ".weight"), param(n + ".bias")), l.activation);
              },
              [&](const ActivationLayer& l) { return activate(cur, l.fn); },
              [&](const ConcatSkipLayer& l) { return nn::concat_channels(cur, trace.layer_outputs.at(l.from)); },
              [&](const FlattenLayer&) {
                const std::size_t batch = cur.shape()[0];
                return nn::reshape(cur, {batch, cur.value().size() / batch});
              },
          },
          layer.params);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("layer '" + n + "': " + e.what());
    }
    trace.layer_outputs[n] = cur;
  }
  trace.output = cur;
  return trace;
}

Tensor predict(const Model& model, const Tensor& x, bool logits) {
  ad::Tape tape;
  ForwardOptions opt;
  opt.mode = ops::Mode::infer;
  opt.logits = logits;
  opt.param_grads = false;
  const ad::Var in = tape.constant(x);
  return forward(model, tape, in, opt).output.value();
}

}  // namespace medic::zoo
