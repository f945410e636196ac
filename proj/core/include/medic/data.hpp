#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "medic/tensor.hpp"

namespace medic::data {

enum class Task { cls, seg };

std::string to_string(Task task);
Task parse_task(const std::string& s);

struct Sample {
  /// [H, W, C] with values in [0, 1].
  Tensor input;
  /// Class index (classification).
  std::size_t label = 0;
  /// [H, W, 1] with values in {0, 1} (segmentation).
  Tensor mask;
  std::string id;
};

struct LoadOptions {
  /// Resize every image to this size; 0 keeps the decoded size (all images
  /// must then agree).
  std::size_t height = 0;
  std::size_t width = 0;
  /// Force 1 or 3 channels (gray is replicated, color averaged); 0 keeps.
  std::size_t channels = 0;
};

struct LoadReport {
  std::size_t skipped = 0;
  std::vector<std::string> warnings;
};

struct ClassificationDataset {
  std::vector<std::string> class_names;
  std::vector<Sample> samples;
  LoadReport report;
};

struct SegmentationDataset {
  std::vector<Sample> samples;
  LoadReport report;
};

/// One subdirectory per class; class indices follow lexicographic order of
/// the directory names. Unreadable files are skipped with a warning; an empty
/// class directory is a DataError.
ClassificationDataset load_classification_dataset(const std::filesystem::path& root,
                                                  const LoadOptions& options = {});

/// Pairs images with masks of the same stem (extension-insensitive). Masks
/// are binarized at 0.5 of their maximum intensity.
SegmentationDataset load_segmentation_dataset(const std::filesystem::path& images_dir,
                                              const std::filesystem::path& masks_dir,
                                              const LoadOptions& options = {});

/// Line-based "path<TAB>label" manifest; paths relative to the manifest.
ClassificationDataset load_manifest(const std::filesystem::path& manifest,
                                    const LoadOptions& options = {});

/// Corner-aligned bilinear interpolation: output pixel i samples source
/// coordinate i * (H_in - 1) / (H_out - 1) (the centre when H_out = 1).
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);
/// Nearest-neighbour resize with the same coordinate map, re-binarized at 0.5.
Tensor resize_mask(const Tensor& mask, std::size_t height, std::size_t width);

/// Values >= 0.5 * max become 1, the rest 0 (all 0 when max is 0).
Tensor binarize_mask(const Tensor& mask);

struct SplitOptions {
  double test_fraction = 0.2;
  /// Fraction of the remaining (non-test) samples used for validation.
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  bool stratified = true;
};

struct SplitDataset {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
  std::uint64_t seed = 0;
  double test_fraction = 0.2;
  double val_fraction = 0.1;
};

/// test = round(test_fraction * n), val = round(val_fraction * (n - test)),
/// per class when stratified. Each partition keeps input order.
SplitDataset split_dataset(const std::vector<Sample>& samples, const SplitOptions& options = {});

struct SynthOptions {
  double noise_sigma = 0.05;
  std::size_t channels = 3;
};

/// Ellipse blob geometry, in pixel units with pixel (y, x) centred at
/// (y + 0.5, x + 0.5).
struct Ellipse {
  double cy = 0, cx = 0;
  double ry = 1, rx = 1;
  double angle = 0;
  [[nodiscard]] bool contains(double y, double x) const;
};

/// Mask [H, W, 1] of the pixel centres inside `e`.
Tensor rasterize(const Ellipse& e, std::size_t height, std::size_t width);

/// Synthetic blob images. Classification: class 0 iff the blob centre lies in
/// the left half (blobs stay inside their half). Segmentation: one blob per
/// image with its exact mask. Gaussian noise is added and values clipped to
/// [0, 1].
std::vector<Sample> synth_blobs(Task task, std::size_t n, std::size_t image_size,
                                std::uint64_t seed, const SynthOptions& options = {});
/// Blob geometry used for sample i of synth_blobs with the same arguments.
std::vector<Ellipse> synth_geometry(Task task, std::size_t n, std::size_t image_size,
                                    std::uint64_t seed);

/// Renders one blob image without noise (used for explainability fixtures).
Tensor render_blob(const Ellipse& e, std::size_t image_size, std::size_t channels,
                   double background, double foreground);

// Batching

Tensor stack_inputs(const std::vector<Sample>& samples, std::span<const std::size_t> indices);
Tensor stack_masks(const std::vector<Sample>& samples, std::span<const std::size_t> indices);
std::vector<std::size_t> gather_labels(const std::vector<Sample>& samples,
                                       std::span<const std::size_t> indices);

}  // namespace medic::data
