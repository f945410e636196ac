#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "medic/autodiff.hpp"
#include "medic/ops.hpp"
#include "medic/rng.hpp"
#include "medic/tensor.hpp"

namespace medic::zoo {

// ---------------------------------------------------------------------------
// Layer descriptions

enum class Activation { none, relu, sigmoid, softmax };

struct InvolutionLayer {
  std::size_t kernel_size = 3;
  std::size_t groups = 1;
  /// 0 selects the largest divisor r of C with r <= 4.
  std::size_t reduction = 0;
  std::size_t stride = 1;
  bool with_bias = true;
  /// Batch norm between the two kernel-generation projections.
  bool bottleneck_norm = false;
  /// Explicit bottleneck width; 0 means C / r.
  std::size_t bottleneck_width = 0;
};

struct ConvLayer {
  std::size_t filters = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  ops::Padding padding = ops::Padding::same;
  Activation activation = Activation::none;
};

struct ConvTransposeLayer {
  std::size_t filters = 0;
  std::size_t kernel = 2;
  std::size_t stride = 2;
  Activation activation = Activation::none;
};

struct MaxPoolLayer {
  std::size_t window = 2;
  std::size_t stride = 2;
  ops::PoolRounding rounding = ops::PoolRounding::floor;
};

struct BatchNormLayer {};

struct DropoutLayer {
  double rate = 0.1;
};

struct DenseLayer {
  std::size_t units = 0;
  Activation activation = Activation::none;
  /// Final class-score projection (not one of the hidden dense layers).
  bool classifier = false;
};

struct ActivationLayer {
  Activation fn = Activation::relu;
};

/// Concatenates the running activation with the output of an earlier layer.
struct ConcatSkipLayer {
  std::string from;
};

struct FlattenLayer {};

using LayerParams = std::variant<InvolutionLayer, ConvLayer, ConvTransposeLayer, MaxPoolLayer,
                                 BatchNormLayer, DropoutLayer, DenseLayer, ActivationLayer,
                                 ConcatSkipLayer, FlattenLayer>;

enum class LayerKind {
  involution,
  conv,
  conv_transpose,
  maxpool,
  batchnorm,
  dropout,
  dense,
  activation,
  concat_skip,
  flatten
};

std::string to_string(LayerKind kind);

struct LayerSpec {
  std::string name;
  LayerParams params;

  [[nodiscard]] LayerKind kind() const { return static_cast<LayerKind>(params.index()); }
};

// ---------------------------------------------------------------------------
// Model configuration

enum class ModelKind { medic_cls, medic_seg, cnn, inn };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& s);
bool is_segmentation(ModelKind kind);

/// Conventions the published parameter counts leave open; every builder
/// honours them so the calibration search can sweep them.
struct Conventions {
  bool involution_bias = true;
  bool bottleneck_norm = false;
  std::size_t bottleneck_width = 0;  // 0: C / r
  std::size_t involution_reduction = 0;  // 0: automatic
  ops::PoolRounding pool_rounding = ops::PoolRounding::floor;
  ops::Padding conv_padding = ops::Padding::same;
};

/// Conventions under which the builders reproduce the published per-layer
/// deltas: a normalized kernel-generation bottleneck of width 1 (segmentation)
/// or 2 (classification), counted with batch-norm running statistics.
Conventions paper_conventions(ModelKind kind);

struct ModelConfig {
  ModelKind kind = ModelKind::medic_cls;
  /// Per-sample input shape [H, W, C].
  Shape input_shape{28, 28, 3};
  std::size_t num_classes = 2;
  std::size_t n_involutions = 1;
  /// Divides every convolution width of the segmentation model (4 = quarter width).
  std::size_t width_divisor = 1;
  /// Two extra 512-wide convolutions in the deepest U-Net block.
  bool extra_convs = false;
  Conventions conventions;
  std::uint64_t seed = 0;
};

/// Serializes to / parses from `key = value` lines.
std::string to_text(const ModelConfig& config);
ModelConfig model_config_from_text(const std::string& text);

/// Layer list plus symbolically propagated per-sample shapes.
struct Architecture {
  ModelConfig config;
  std::vector<LayerSpec> layers;
  std::vector<Shape> input_shapes;   // per layer
  std::vector<Shape> output_shapes;  // per layer

  [[nodiscard]] std::size_t index_of(const std::string& layer_name) const;
  [[nodiscard]] std::size_t count(LayerKind kind) const;
};

/// Propagates shapes from config.input_shape through `layers`; throws
/// std::invalid_argument naming the offending layer on any mismatch.
Architecture make_architecture(const ModelConfig& config, std::vector<LayerSpec> layers);

Architecture describe_medic_cls(const ModelConfig& config);
Architecture describe_medic_seg(const ModelConfig& config);
Architecture describe_cnn_baseline(const ModelConfig& config);
Architecture describe_inn_baseline(const ModelConfig& config);
Architecture describe(const ModelConfig& config);

// ---------------------------------------------------------------------------
// Parameter counting

struct CountPolicy {
  /// Count batch-norm running mean/variance as well (Keras "total params").
  bool include_running_stats = false;
};

/// Keras-style totals (running statistics included), as in the published tables.
inline constexpr CountPolicy kPaperCountPolicy{true};

struct LayerCount {
  std::string name;
  LayerKind kind;
  std::size_t count;
};

std::size_t layer_parameter_count(const LayerSpec& layer, const Shape& input_shape,
                                  CountPolicy policy = {});
std::vector<LayerCount> per_layer_counts(const Architecture& arch, CountPolicy policy = {});
std::size_t closed_form_parameter_count(const Architecture& arch, CountPolicy policy = {});

// ---------------------------------------------------------------------------
// Models with bound parameters

class ParameterStore {
 public:
  void add(std::string name, Tensor value);
  [[nodiscard]] bool contains(const std::string& name) const { return index_.count(name) != 0; }
  [[nodiscard]] const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

using BufferStore = std::map<std::string, ops::BatchNormStats>;

struct Model {
  Architecture arch;
  ParameterStore params;
  /// Batch-norm running statistics keyed by owning layer name.
  BufferStore buffers;
};

/// Allocates and initializes parameters (He-normal weights, zero biases,
/// unit gamma) from config.seed.
Model build(const Architecture& arch);
Model build(const ModelConfig& config);

Model build_medic_cls(const Shape& input_shape = {28, 28, 3}, std::size_t num_classes = 2,
                      std::size_t n_involutions = 1, std::uint64_t seed = 0);
Model build_medic_seg(const Shape& input_shape = {128, 128, 3}, std::size_t n_involutions = 1,
                      std::size_t width_divisor = 1, std::uint64_t seed = 0);
Model build_cnn_baseline(const Shape& input_shape, std::size_t num_classes, std::uint64_t seed = 0);
Model build_inn_baseline(const Shape& input_shape, std::size_t num_classes, std::uint64_t seed = 0);

/// Learnable scalars held by the model (running statistics optional).
std::size_t count_parameters(const Model& model, CountPolicy policy = {});

// ---------------------------------------------------------------------------
// Forward pass

struct ForwardOptions {
  ops::Mode mode = ops::Mode::infer;
  /// Dropout randomness; required in train mode.
  Rng* rng = nullptr;
  /// Receives updated batch-norm statistics in train mode.
  BufferStore* update_buffers = nullptr;
  /// Stop before a trailing activation layer and return pre-activation scores.
  bool logits = false;
  /// Register parameters as differentiable leaves.
  bool param_grads = true;
};

struct ForwardTrace {
  ad::Var output;
  std::map<std::string, ad::Var> layer_outputs;
  /// Generated kernels of every involution layer.
  std::map<std::string, ad::Var> involution_kernels;
  std::vector<std::pair<std::string, ad::Var>> params;
};

/// Applies the layers in order. `input` is [N, H, W, C] matching the
/// declared input shape.
ForwardTrace forward(const Model& model, ad::Tape& tape, ad::Var input,
                     const ForwardOptions& options = {});

/// Inference-mode forward without gradient bookkeeping.
Tensor predict(const Model& model, const Tensor& x, bool logits = false);

// ---------------------------------------------------------------------------
// Checkpoints
//
//   "MDIC-CKPT" | u32 version | string kind | string hyperparameters
//   | u32 record count | (string name, tensor record)*
// Strings are u32 length + bytes; tensors use the MDIC tensor format.
// Parameter records are named "param/<name>", running statistics
// "buffer/<layer>/mean" and "buffer/<layer>/var".

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& os, const Model& model);
Model read_checkpoint(std::istream& is);
void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace medic::zoo
