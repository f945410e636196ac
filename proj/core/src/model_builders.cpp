#include <stdexcept>
#include <string>

#include "medic/model.hpp"

namespace medic::zoo {

namespace {

InvolutionLayer involution_from(const Conventions& c) {
  InvolutionLayer inv;
  inv.with_bias = c.involution_bias;
  inv.bottleneck_norm = c.bottleneck_norm;
  inv.bottleneck_width = c.bottleneck_width;
  inv.reduction = c.involution_reduction;
  return inv;
}

void add(std::vector<LayerSpec>& layers, std::string name, LayerParams params) {
  layers.push_back(LayerSpec{std::move(name), std::move(params)});
}

void conv_block(std::vector<LayerSpec>& layers, const std::string& prefix, std::size_t filters,
                const Conventions& c) {
  add(layers, prefix, ConvLayer{filters, 3, 1, c.conv_padding, Activation::relu});
  add(layers, prefix + "_pool", MaxPoolLayer{2, 2, c.pool_rounding});
  add(layers, prefix + "_bn", BatchNormLayer{});
}

void dense_head(std::vector<LayerSpec>& layers, std::size_t num_classes) {
  add(layers, "dropout", DropoutLayer{0.1});
  add(layers, "flatten", FlattenLayer{});
  const std::size_t widths[] = {256, 192, 96, 64};
  for (std::size_t i = 0; i < 4; ++i) {
    add(layers, "dense" + std::to_string(i + 1), DenseLayer{widths[i], Activation::relu, false});
  }
  add(layers, "classifier", DenseLayer{num_classes, Activation::none, true});
  add(layers, "softmax", ActivationLayer{Activation::softmax});
}

void check_classes(const ModelConfig& config) {
  if (config.num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
}

}  // namespace

Conventions paper_conventions(ModelKind kind) {
  Conventions c;
  c.bottleneck_norm = true;
  if (kind == ModelKind::medic_cls || kind == ModelKind::inn) c.bottleneck_width = 2;
  return c;
}

Architecture describe_medic_cls(const ModelConfig& config) {
  check_classes(config);
  if (config.n_involutions < 1 || config.n_involutions > 3) {
    throw std::invalid_argument("Med-IC (Cls) supports 1..3 involution layers, got " +
                                std::to_string(config.n_involutions));
  }
  const Conventions& c = config.conventions;
  std::vector<LayerSpec> layers;
  // Extra involutions (Hybrid-2/3) stack directly on the first one.
  for (std::size_t i = 1; i <= config.n_involutions; ++i) {
    add(layers, "inv" + std::to_string(i), involution_from(c));
  }
  add(layers, "inv_relu", ActivationLayer{Activation::relu});
  add(layers, "inv_pool", MaxPoolLayer{2, 2, c.pool_rounding});
  add(layers, "inv_bn", BatchNormLayer{});
  conv_block(layers, "conv1", 64, c);
  conv_block(layers, "conv2", 128, c);
  dense_head(layers, config.num_classes);
  return make_architecture(config, std::move(layers));
}

Architecture describe_cnn_baseline(const ModelConfig& config) {
  check_classes(config);
  const Conventions& c = config.conventions;
  std::vector<LayerSpec> layers;
  conv_block(layers, "conv1", 64, c);
  conv_block(layers, "conv2", 128, c);
  conv_block(layers, "conv3", 256, c);
  dense_head(layers, config.num_classes);
  return make_architecture(config, std::move(layers));
}

Architecture describe_inn_baseline(const ModelConfig& config) {
  check_classes(config);
  const Conventions& c = config.conventions;
  std::vector<LayerSpec> layers;
  add(layers, "inv1", involution_from(c));
  add(layers, "inv_relu", ActivationLayer{Activation::relu});
  add(layers, "inv_pool", MaxPoolLayer{2, 2, c.pool_rounding});
  add(layers, "inv_bn", BatchNormLayer{});
  dense_head(layers, config.num_classes);
  return make_architecture(config, std::move(layers));
}

Architecture describe_medic_seg(const ModelConfig& config) {
  if (config.n_involutions > 3) {
    throw std::invalid_argument("Med-IC (Seg) supports 0..3 involution layers, got " +
                                std::to_string(config.n_involutions));
  }
  const std::size_t div = config.width_divisor;
  if (div == 0 || 16 % div != 0) {
    throw std::invalid_argument("width_divisor must divide 16, got " + std::to_string(div));
  }
  const Conventions& c = config.conventions;
  const std::size_t enc_widths[] = {16, 32, 64, 128, 256, 512};
  std::vector<LayerSpec> layers;

  // Involution layers sit on top of the first encoder block, on the image,
  // and feed it directly (no activation of their own).
  for (std::size_t i = 1; i <= config.n_involutions; ++i) {
    add(layers, "inv" + std::to_string(i), involution_from(c));
  }

  for (std::size_t b = 0; b < 6; ++b) {
    const std::string block = "enc" + std::to_string(b + 1);
    const std::size_t width = enc_widths[b] / div;
    std::size_t convs = b == 5 ? 1 : 3;
    if (b == 5 && config.extra_convs) convs += 2;
    for (std::size_t j = 0; j < convs; ++j) {
      add(layers, block + "_conv" + std::to_string(j + 1),
          ConvLayer{width, 3, 1, ops::Padding::same, Activation::relu});
    }
    add(layers, block + "_drop", DropoutLayer{0.1});
    if (b < 5) add(layers, block + "_pool", MaxPoolLayer{2, 2, c.pool_rounding});
  }

  for (std::size_t d = 0; d < 5; ++d) {
    const std::string block = "dec" + std::to_string(d + 1);
    const std::size_t width = enc_widths[4 - d] / div;
    add(layers, block + "_up", ConvTransposeLayer{width, 2, 2, Activation::none});
    add(layers, block + "_skip", ConcatSkipLayer{"enc" + std::to_string(5 - d) + "_drop"});
    for (std::size_t j = 0; j < 3; ++j) {
      add(layers, block + "_conv" + std::to_string(j + 1),
          ConvLayer{width, 3, 1, ops::Padding::same, Activation::relu});
    }
    add(layers, block + "_drop", DropoutLayer{0.1});
  }

  add(layers, "head", ConvLayer{1, 1, 1, ops::Padding::same, Activation::none});
  add(layers, "sigmoid", ActivationLayer{Activation::sigmoid});
  return make_architecture(config, std::move(layers));
}

Architecture describe(const ModelConfig& config) {
  switch (config.kind) {
    case ModelKind::medic_cls: return describe_medic_cls(config);
    case ModelKind::medic_seg: return describe_medic_seg(config);
    case ModelKind::cnn: return describe_cnn_baseline(config);
    case ModelKind::inn: return describe_inn_baseline(config);
  }
  throw std::invalid_argument("unknown model kind");
}

Model build_medic_cls(const Shape& input_shape, std::size_t num_classes,
                      std::size_t n_involutions, std::uint64_t seed) {
  ModelConfig c;
  c.kind = ModelKind::medic_cls;
  c.conventions = paper_conventions(c.kind);
  c.input_shape = input_shape;
  c.num_classes = num_classes;
  c.n_involutions = n_involutions;
  c.seed = seed;
  return build(c);
}

Model build_medic_seg(const Shape& input_shape, std::size_t n_involutions,
                      std::size_t width_divisor, std::uint64_t seed) {
  ModelConfig c;
  c.kind = ModelKind::medic_seg;
  c.conventions = paper_conventions(c.kind);
  c.input_shape = input_shape;
  c.n_involutions = n_involutions;
  c.width_divisor = width_divisor;
  c.seed = seed;
  return build(c);
}

Model build_cnn_baseline(const Shape& input_shape, std::size_t num_classes, std::uint64_t seed) {
  ModelConfig c;
  c.kind = ModelKind::cnn;
  c.conventions = paper_conventions(c.kind);
  c.input_shape = input_shape;
  c.num_classes = num_classes;
  c.n_involutions = 0;
  c.seed = seed;
  return build(c);
}

Model build_inn_baseline(const Shape& input_shape, std::size_t num_classes, std::uint64_t seed) {
  ModelConfig c;
  c.kind = ModelKind::inn;
  c.conventions = paper_conventions(c.kind);
  c.input_shape = input_shape;
  c.num_classes = num_classes;
  c.n_involutions = 1;
  c.seed = seed;
  return build(c);
}

}  // namespace medic::zoo
