#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "medic/model.hpp"

namespace medic::explain {

enum class KernelReduction { center_tap, l2_norm };
enum class Palette { gray, viridis };

std::string to_string(KernelReduction r);
KernelReduction parse_reduction(const std::string& s);

struct Heatmap {
  /// [H, W] min-max normalized to [0, 1] (all 0 when constant).
  Tensor values;
  /// [h, w] map at the layer's resolution before upsampling and normalization.
  Tensor raw;
  std::string model_id;
  std::string layer;
  std::string input_id;
  std::string method;
};

/// (x - min) / (max - min); all zeros for a constant input.
Tensor normalize_min_max(const Tensor& map);

/// Collapses generated kernels [N?, h, w, K, K, G] (first sample when
/// batched) to [h, w]: the centre tap averaged over groups, or the L2 norm
/// over K x K x G.
Tensor reduce_kernels(const Tensor& kernels, KernelReduction reduction);

/// Runs `image` ([H, W, C]) through the model and maps the kernels that the
/// named involution layer generates. Throws std::invalid_argument if the
/// layer is missing or not an involution.
Heatmap involution_kernel_map(const zoo::Model& model, const Tensor& image, const std::string& layer,
                              KernelReduction reduction = KernelReduction::center_tap,
                              const std::string& input_id = "input");

/// Classification: score = logit of `class_index` (default: predicted class).
/// Segmentation: score = mean output logit inside `mask` (default: predicted
/// mask; the whole image when the prediction is empty).
struct CamTarget {
  std::optional<std::size_t> class_index;
  std::optional<Tensor> mask;
};

/// relu(sum_c alpha_c A_c) with alpha_c the spatial mean of dS/dA_c;
/// activations and gradients are [h, w, c].
Tensor grad_cam_map(const Tensor& activations, const Tensor& gradients);

Heatmap grad_cam(const zoo::Model& model, const Tensor& image, const std::string& layer,
                 const CamTarget& target = {}, const std::string& input_id = "input");

/// RGB of the viridis-like ramp at v in [0, 1].
std::array<unsigned char, 3> palette_color(double v);

/// 8-bit PGM (gray) or PPM (palette) bytes; gray bytes are floor(255 v + 0.5).
std::vector<unsigned char> encode_heatmap(const Heatmap& heatmap, Palette palette);
void write_heatmap(const Heatmap& heatmap, const std::filesystem::path& path, Palette palette);

/// `<input-id>_<layer>_<method>.pgm|ppm`
std::string heatmap_filename(const Heatmap& heatmap, Palette palette);

/// Centroid (y, x) of the pixels whose deviation from the map's median is at
/// least half the largest deviation.
std::array<double, 2> response_peak(const Tensor& map);

}  // namespace medic::explain
