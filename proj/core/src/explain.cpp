#include "medic/explain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "medic/data.hpp"
#include "medic/error.hpp"
#include "medic/image_io.hpp"
#include "medic/nn.hpp"

namespace medic::explain {

std::string to_string(KernelReduction r) { return r == KernelReduction::center_tap ? "center_tap" : "l2_norm"; }

KernelReduction parse_reduction(const std::string& s) {
  if (s == "center_tap" || s == "center-tap") return KernelReduction::center_tap;
  if (s == "l2_norm" || s == "l2-norm") return KernelReduction::l2_norm;
  throw std::invalid_argument("unknown kernel reduction '" + s + "'");
}

Tensor normalize_min_max(const Tensor& map) {
  Tensor out(map.shape());
  if (map.size() == 0) return out;
  const auto [lo, hi] = std::minmax_element(map.values().begin(), map.values().end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = (map[i] - *lo) / range;
  return out;
}

Tensor reduce_kernels(const Tensor& kernels, KernelReduction reduction) {
  if (kernels.rank() != 5 && kernels.rank() != 6) {
    throw std::invalid_argument("reduce_kernels expects [N,h,w,K,K,G] or [h,w,K,K,G]");
  }
  const std::size_t off = kernels.rank() - 5;
  const std::size_t h = kernels.dim(off), w = kernels.dim(off + 1), k = kernels.dim(off + 2);
  const std::size_t g = kernels.dim(off + 4);
  const std::size_t per = k * k * g;
  Tensor out({h, w});
  for (std::size_t p = 0; p < h * w; ++p) {
    const double* base = kernels.raw() + p * per;
    double v = 0.0;
    if (reduction == KernelReduction::center_tap) {
      const std::size_t centre = (k / 2) * k + k / 2;
      for (std::size_t q = 0; q < g; ++q) v += base[centre * g + q];
      v /= static_cast<double>(g);
    } else {
      for (std::size_t q = 0; q < per; ++q) v += base[q] * base[q];
      v = std::sqrt(v);
    }
    out[p] = v;
  }
  return out;
}

namespace {

Tensor as_batch(const zoo::Model& model, const Tensor& image) {
  if (image.shape() != model.arch.config.input_shape) {
    throw DataError("image shape " + shape_to_string(image.shape()) + " does not match model input " +
                    shape_to_string(model.arch.config.input_shape));
  }
  Shape s{1};
  s.insert(s.end(), image.shape().begin(), image.shape().end());
  return image.reshape(s);
}

Tensor upsample(const Tensor& map, std::size_t height, std::size_t width) {
  const Tensor m3 = map.reshape({map.dim(0), map.dim(1), 1});
  return data::resize_bilinear(m3, height, width).reshape({height, width});
}

std::string model_id(const zoo::Model& model) {
  return zoo::to_string(model.arch.config.kind) + "-n" + std::to_string(model.arch.config.n_involutions) +
         "-s" + std::to_string(model.arch.config.seed);
}

}  // namespace

Heatmap involution_kernel_map(const zoo::Model& model, const Tensor& image, const std::string& layer,
                              KernelReduction reduction, const std::string& input_id) {
  const std::size_t idx = model.arch.index_of(layer);
  if (model.arch.layers[idx].kind() != zoo::LayerKind::involution) {
    throw std::invalid_argument("layer '" + layer + "' is not an involution layer");
  }
  ad::Tape tape;
  zoo::ForwardOptions opt;
  opt.param_grads = false;
  const auto trace = zoo::forward(model, tape, tape.constant(as_batch(model, image)), opt);
  Heatmap h;
  h.raw = reduce_kernels(trace.involution_kernels.at(layer).value(), reduction);
  h.values = normalize_min_max(upsample(h.raw, image.dim(0), image.dim(1)));
  h.model_id = model_id(model);
  h.layer = layer;
  h.input_id = input_id;
  h.method = "kernel-map";
  return h;
}

Tensor grad_cam_map(const Tensor& a, const Tensor& g) {
  if (a.rank() != 3 || a.shape() != g.shape()) {
    throw std::invalid_argument("grad_cam_map expects matching [h,w,c] activations and gradients");
  }
  const std::size_t h = a.dim(0), w = a.dim(1), c = a.dim(2);
  std::vector<double> alpha(c, 0.0);
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t k = 0; k < c; ++k) alpha[k] += g[p * c + k];
  for (auto& v : alpha) v /= static_cast<double>(h * w);
  Tensor out({h, w});
  for (std::size_t p = 0; p < h * w; ++p) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += alpha[k] * a[p * c + k];
    out[p] = std::max(s, 0.0);
  }
  return out;
}

Heatmap grad_cam(const zoo::Model& model, const Tensor& image, const std::string& layer,
                 const CamTarget& target, const std::string& input_id) {
  const std::size_t idx = model.arch.index_of(layer);
  if (model.arch.output_shapes[idx].size() != 3) {
    throw std::invalid_argument("layer '" + layer + "' does not produce a spatial feature map");
  }
  ad::Tape tape;
  zoo::ForwardOptions opt;
  opt.param_grads = false;
  opt.logits = true;
  const ad::Var input = tape.leaf(as_batch(model, image), true, "input");
  const auto trace = zoo::forward(model, tape, input, opt);
  const Tensor& out = trace.output.value();

  ad::Var score;
  if (zoo::is_segmentation(model.arch.config.kind)) {
    Tensor mask;
    if (target.mask) {
      Shape s{1};
      s.insert(s.end(), target.mask->shape().begin(), target.mask->shape().end());
      mask = target.mask->reshape(s);
      if (mask.shape() != out.shape()) throw std::invalid_argument("grad_cam: target mask shape mismatch");
    } else {
      mask = Tensor(out.shape());
      for (std::size_t i = 0; i < out.size(); ++i) mask[i] = out[i] >= 0.0 ? 1.0 : 0.0;
    }
    bool any = false;
    for (double v : mask.values()) any = any || v != 0.0;
    if (!any) {
      if (target.mask) throw std::invalid_argument("grad_cam: target mask is empty");
      mask = Tensor::full(out.shape(), 1.0);
    }
    score = nn::masked_mean(trace.output, mask);
  } else {
    const std::size_t classes = out.dim(1);
    std::size_t cls = 0;
    for (std::size_t j = 1; j < classes; ++j)
      if (out[j] > out[cls]) cls = j;
    if (target.class_index) cls = *target.class_index;
    if (cls >= classes) throw std::invalid_argument("grad_cam: class index out of range");
    score = nn::pick(trace.output, cls);
  }

  const ad::Var activations = trace.layer_outputs.at(layer);
  const ad::GradientMap grads = tape.backward(score);
  const Shape& as = activations.shape();
  const Shape hwc{as[1], as[2], as[3]};
  Heatmap h;
  h.raw = grad_cam_map(activations.value().reshape(hwc), grads.at(activations).reshape(hwc));
  h.values = normalize_min_max(upsample(h.raw, image.dim(0), image.dim(1)));
  h.model_id = model_id(model);
  h.layer = layer;
  h.input_id = input_id;
  h.method = "grad-cam";
  return h;
}

std::array<unsigned char, 3> palette_color(double v) {
  static constexpr double stops[5][3] = {
      {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
  const double t = std::clamp(v, 0.0, 1.0) * 4.0;
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(t), 3);
  const double f = t - static_cast<double>(i);
  std::array<unsigned char, 3> rgb{};
  for (std::size_t k = 0; k < 3; ++k) {
    rgb[k] = static_cast<unsigned char>(std::floor(stops[i][k] + f * (stops[i + 1][k] - stops[i][k]) + 0.5));
  }
  return rgb;
}

std::vector<unsigned char> encode_heatmap(const Heatmap& heatmap, Palette palette) {
  const Tensor& v = heatmap.values;
  if (v.rank() != 2) throw std::invalid_argument("heatmap values must be [H,W]");
  const std::size_t h = v.dim(0), w = v.dim(1);
  if (palette == Palette::gray) return io::encode_pnm(v.reshape({h, w, 1}));
  Tensor rgb({h, w, 3});
  for (std::size_t p = 0; p < h * w; ++p) {
    const auto c = palette_color(v[p]);
    for (std::size_t k = 0; k < 3; ++k) rgb[p * 3 + k] = c[k] / 255.0;
  }
  return io::encode_pnm(rgb);
}

void write_heatmap(const Heatmap& heatmap, const std::filesystem::path& path, Palette palette) {
  const auto bytes = encode_heatmap(heatmap, palette);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write heatmap '" + path.string() + "'");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("write failed for '" + path.string() + "'");
}

std::string heatmap_filename(const Heatmap& heatmap, Palette palette) {
  return heatmap.input_id + "_" + heatmap.layer + "_" + heatmap.method +
         (palette == Palette::gray ? ".pgm" : ".ppm");
}

std::array<double, 2> response_peak(const Tensor& map) {
  if (map.rank() != 2 || map.size() == 0) throw std::invalid_argument("response_peak expects [H,W]");
  std::vector<double> sorted = map.values();
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
  const double median = sorted[sorted.size() / 2];
  double peak = 0.0;
  for (double v : map.values()) peak = std::max(peak, std::abs(v - median));
  const std::size_t w = map.dim(1);
  double sy = 0, sx = 0, n = 0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (peak > 0.0 && std::abs(map[i] - median) >= 0.5 * peak) {
      sy += static_cast<double>(i / w);
      sx += static_cast<double>(i % w);
      n += 1.0;
    }
  }
  if (n == 0.0) return {static_cast<double>(map.dim(0) - 1) / 2.0, static_cast<double>(w - 1) / 2.0};
  return {sy / n, sx / n};
}

}  // namespace medic::explain
