#include "medic/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <stdexcept>

#include "medic/error.hpp"
#include "medic/image_io.hpp"
#include "medic/rng.hpp"

namespace fs = std::filesystem;

namespace medic::data {

std::string to_string(Task task) { return task == Task::cls ? "cls" : "seg"; }

Task parse_task(const std::string& s) {
  if (s == "cls") return Task::cls;
  if (s == "seg") return Task::seg;
  throw ConfigError("unknown task '" + s + "' (expected cls or seg)");
}

namespace {

void warn(LoadReport& report, const std::string& message) {
  std::cerr << "warning: " << message << '\n';
  report.warnings.push_back(message);
  ++report.skipped;
}

std::vector<fs::path> sorted_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && io::is_image_file(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

Tensor convert_channels(const Tensor& img, std::size_t channels) {
  const std::size_t c = img.dim(2);
  if (channels == 0 || channels == c) return img;
  const std::size_t pixels = img.dim(0) * img.dim(1);
  Tensor out({img.dim(0), img.dim(1), channels});
  for (std::size_t p = 0; p < pixels; ++p) {
    if (c == 1) {
      for (std::size_t k = 0; k < channels; ++k) out[p * channels + k] = img[p];
    } else {
      double s = 0.0;
      for (std::size_t k = 0; k < c; ++k) s += img[p * c + k];
      for (std::size_t k = 0; k < channels; ++k) out[p * channels + k] = s / static_cast<double>(c);
    }
  }
  return out;
}

Tensor prepare(Tensor img, const LoadOptions& o) {
  img = convert_channels(img, o.channels);
  if (o.height != 0 && o.width != 0) img = resize_bilinear(img, o.height, o.width);
  return img;
}

void check_uniform(const std::vector<Sample>& samples) {
  for (const auto& s : samples) {
    if (s.input.shape() != samples.front().input.shape()) {
      throw DataError("images differ in shape (" + shape_to_string(s.input.shape()) + " vs " +
                      shape_to_string(samples.front().input.shape()) +
                      "); pass a target size to resize");
    }
  }
}

double source_coord(std::size_t i, std::size_t in, std::size_t out) {
  if (out == 1) return (static_cast<double>(in) - 1.0) / 2.0;
  return static_cast<double>(i) * (static_cast<double>(in) - 1.0) / (static_cast<double>(out) - 1.0);
}

}  // namespace

ClassificationDataset load_classification_dataset(const fs::path& root, const LoadOptions& options) {
  if (!fs::is_directory(root)) throw DataError("dataset root '" + root.string() + "' is not a directory");
  ClassificationDataset ds;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) ds.class_names.push_back(entry.path().filename().string());
  }
  std::sort(ds.class_names.begin(), ds.class_names.end());
  if (ds.class_names.empty()) throw DataError("no class directories under '" + root.string() + "'");
  for (std::size_t label = 0; label < ds.class_names.size(); ++label) {
    const auto files = sorted_files(root / ds.class_names[label]);
    if (files.empty()) throw DataError("class directory '" + ds.class_names[label] + "' is empty");
    for (const auto& f : files) {
      try {
        Sample s;
        s.input = prepare(io::read_image(f), options);
        s.label = label;
        s.id = ds.class_names[label] + "/" + f.stem().string();
        ds.samples.push_back(std::move(s));
      } catch (const DataError& e) {
        warn(ds.report, "skipping '" + f.string() + "': " + e.what());
      }
    }
  }
  if (ds.samples.empty()) throw DataError("no readable images under '" + root.string() + "'");
  check_uniform(ds.samples);
  return ds;
}

SegmentationDataset load_segmentation_dataset(const fs::path& images_dir, const fs::path& masks_dir,
                                              const LoadOptions& options) {
  if (!fs::is_directory(images_dir)) throw DataError("'" + images_dir.string() + "' is not a directory");
  if (!fs::is_directory(masks_dir)) throw DataError("'" + masks_dir.string() + "' is not a directory");
  std::map<std::string, fs::path> masks;
  for (const auto& m : sorted_files(masks_dir)) masks.emplace(m.stem().string(), m);

  SegmentationDataset ds;
  for (const auto& f : sorted_files(images_dir)) {
    const auto it = masks.find(f.stem().string());
    if (it == masks.end()) {
      warn(ds.report, "no mask for '" + f.string() + "'");
      continue;
    }
    try {
      Sample s;
      s.input = prepare(io::read_image(f), options);
      Tensor m = convert_channels(io::read_image(it->second), 1);
      m = binarize_mask(m);
      if (options.height != 0 && options.width != 0) m = resize_mask(m, options.height, options.width);
      if (m.dim(0) != s.input.dim(0) || m.dim(1) != s.input.dim(1)) {
        throw DataError("mask size differs from image size");
      }
      s.mask = std::move(m);
      s.id = f.stem().string();
      ds.samples.push_back(std::move(s));
    } catch (const DataError& e) {
      warn(ds.report, "skipping '" + f.string() + "': " + e.what());
    }
  }
  if (ds.samples.empty()) throw DataError("no image/mask pairs under '" + images_dir.string() + "'");
  check_uniform(ds.samples);
  return ds;
}

ClassificationDataset load_manifest(const fs::path& manifest, const LoadOptions& options) {
  std::ifstream is(manifest);
  if (!is) throw DataError("cannot open manifest '" + manifest.string() + "'");
  std::vector<std::pair<fs::path, std::string>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("manifest line without a tab: '" + line + "'");
    rows.emplace_back(manifest.parent_path() / line.substr(0, tab), line.substr(tab + 1));
  }
  ClassificationDataset ds;
  std::set<std::string> names;
  for (const auto& r : rows) names.insert(r.second);
  ds.class_names.assign(names.begin(), names.end());
  for (const auto& [path, name] : rows) {
    try {
      Sample s;
      s.input = prepare(io::read_image(path), options);
      s.label = static_cast<std::size_t>(
          std::lower_bound(ds.class_names.begin(), ds.class_names.end(), name) - ds.class_names.begin());
      s.id = path.stem().string();
      ds.samples.push_back(std::move(s));
    } catch (const DataError& e) {
      warn(ds.report, "skipping '" + path.string() + "': " + e.what());
    }
  }
  if (ds.samples.empty()) throw DataError("manifest lists no readable images");
  check_uniform(ds.samples);
  return ds;
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3) throw std::invalid_argument("resize_bilinear expects [H,W,C]");
  if (height == 0 || width == 0) throw std::invalid_argument("resize target must be positive");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (h == height && w == width) return image;
  Tensor out({height, width, c});
  for (std::size_t i = 0; i < height; ++i) {
    const double sy = source_coord(i, h, height);
    const auto y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t j = 0; j < width; ++j) {
      const double sx = source_coord(j, w, width);
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t k = 0; k < c; ++k) {
        const double a = image[(y0 * w + x0) * c + k], b = image[(y0 * w + x1) * c + k];
        const double d = image[(y1 * w + x0) * c + k], e = image[(y1 * w + x1) * c + k];
        out[(i * width + j) * c + k] =
            (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * d + fx * e);
      }
    }
  }
  return out;
}

Tensor resize_mask(const Tensor& mask, std::size_t height, std::size_t width) {
  if (mask.rank() != 3) throw std::invalid_argument("resize_mask expects [H,W,C]");
  if (height == 0 || width == 0) throw std::invalid_argument("resize target must be positive");
  const std::size_t h = mask.dim(0), w = mask.dim(1), c = mask.dim(2);
  Tensor out({height, width, c});
  for (std::size_t i = 0; i < height; ++i) {
    const auto y = static_cast<std::size_t>(std::floor(source_coord(i, h, height) + 0.5));
    for (std::size_t j = 0; j < width; ++j) {
      const auto x = static_cast<std::size_t>(std::floor(source_coord(j, w, width) + 0.5));
      for (std::size_t k = 0; k < c; ++k)
        out[(i * width + j) * c + k] = mask[(y * w + x) * c + k] >= 0.5 ? 1.0 : 0.0;
    }
  }
  return out;
}

Tensor binarize_mask(const Tensor& mask) {
  double peak = 0.0;
  for (double v : mask.values()) peak = std::max(peak, v);
  Tensor out(mask.shape());
  if (peak <= 0.0) return out;
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] >= 0.5 * peak ? 1.0 : 0.0;
  return out;
}

SplitDataset split_dataset(const std::vector<Sample>& samples, const SplitOptions& o) {
  if (!(o.test_fraction >= 0.0 && o.test_fraction < 1.0 && o.val_fraction >= 0.0 && o.val_fraction < 1.0)) {
    throw ConfigError("split fractions must lie in [0, 1)");
  }
  SplitDataset out;
  out.seed = o.seed;
  out.test_fraction = o.test_fraction;
  out.val_fraction = o.val_fraction;

  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < samples.size(); ++i) groups[o.stratified ? samples[i].label : 0].push_back(i);

  Rng rng(o.seed);
  std::vector<int> where(samples.size(), 0);  // 0 train, 1 val, 2 test
  for (auto& [label, idx] : groups) {
    if (o.stratified && idx.size() < 3) {
      throw DataError("class " + std::to_string(label) + " has fewer than 3 samples");
    }
    rng.shuffle(idx);
    const auto n = static_cast<double>(idx.size());
    const auto n_test = static_cast<std::size_t>(std::llround(o.test_fraction * n));
    const auto n_val =
        static_cast<std::size_t>(std::llround(o.val_fraction * static_cast<double>(idx.size() - n_test)));
    for (std::size_t k = 0; k < idx.size(); ++k) where[idx[k]] = k < n_test ? 2 : (k < n_test + n_val ? 1 : 0);
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    (where[i] == 0 ? out.train : where[i] == 1 ? out.val : out.test).push_back(samples[i]);
  }
  return out;
}

bool Ellipse::contains(double y, double x) const {
  const double dy = y - cy, dx = x - cx;
  const double c = std::cos(angle), s = std::sin(angle);
  const double u = dx * c + dy * s;
  const double v = -dx * s + dy * c;
  return (u / rx) * (u / rx) + (v / ry) * (v / ry) <= 1.0;
}

Tensor rasterize(const Ellipse& e, std::size_t height, std::size_t width) {
  Tensor m({height, width, 1});
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      m[y * width + x] = e.contains(static_cast<double>(y) + 0.5, static_cast<double>(x) + 0.5) ? 1.0 : 0.0;
  return m;
}

namespace {

Ellipse draw_geometry(Task task, std::size_t index, std::size_t size, Rng& r) {
  const double s = static_cast<double>(size);
  Ellipse e;
  const double lo = task == Task::cls ? 0.08 : 0.10;
  const double hi = task == Task::cls ? 0.16 : 0.22;
  e.ry = r.uniform(lo, hi) * s;
  e.rx = r.uniform(lo, hi) * s;
  e.angle = r.uniform(0.0, std::numbers::pi);
  const double m = std::max(e.rx, e.ry) + 0.5;
  e.cy = r.uniform(m, s - m);
  if (task == Task::cls) {
    // Class 0 blobs sit entirely in the left half, class 1 in the right.
    e.cx = index % 2 == 0 ? r.uniform(m, s / 2 - m) : r.uniform(s / 2 + m, s - m);
  } else {
    e.cx = r.uniform(m, s - m);
  }
  return e;
}

}  // namespace

std::vector<Ellipse> synth_geometry(Task task, std::size_t n, std::size_t image_size, std::uint64_t seed) {
  Rng master(seed);
  std::vector<Ellipse> out;
  for (std::size_t i = 0; i < n; ++i) {
    Rng r = master.split();
    out.push_back(draw_geometry(task, i, image_size, r));
  }
  return out;
}

Tensor render_blob(const Ellipse& e, std::size_t image_size, std::size_t channels, double background,
                   double foreground) {
  const Tensor mask = rasterize(e, image_size, image_size);
  Tensor img({image_size, image_size, channels});
  for (std::size_t p = 0; p < mask.size(); ++p)
    for (std::size_t k = 0; k < channels; ++k) img[p * channels + k] = mask[p] != 0.0 ? foreground : background;
  return img;
}

std::vector<Sample> synth_blobs(Task task, std::size_t n, std::size_t image_size, std::uint64_t seed,
                                const SynthOptions& options) {
  if (n == 0) throw ConfigError("synth_blobs needs n >= 1");
  if (image_size < 8) throw ConfigError("synthetic images must be at least 8 pixels wide");
  if (options.channels == 0) throw ConfigError("synthetic images need at least one channel");
  Rng master(seed);
  std::vector<Sample> out;
  out.reserve(n);
  const std::size_t c = options.channels;
  for (std::size_t i = 0; i < n; ++i) {
    Rng r = master.split();
    const Ellipse e = draw_geometry(task, i, image_size, r);
    const Tensor mask = rasterize(e, image_size, image_size);
    const double bg = r.uniform(0.1, 0.35);
    const double fg = r.uniform(0.6, 0.9);
    std::vector<double> tint(c);
    for (auto& t : tint) t = r.uniform(-0.05, 0.05);
    Sample s;
    s.input = Tensor({image_size, image_size, c});
    for (std::size_t p = 0; p < mask.size(); ++p) {
      for (std::size_t k = 0; k < c; ++k) {
        const double v = (mask[p] != 0.0 ? fg : bg) + tint[k] + options.noise_sigma * r.normal();
        s.input[p * c + k] = std::clamp(v, 0.0, 1.0);
      }
    }
    if (task == Task::cls) {
      s.label = i % 2;
    } else {
      s.mask = mask;
    }
    char id[32];
    std::snprintf(id, sizeof id, "synth_%05zu", i);
    s.id = id;
    out.push_back(std::move(s));
  }
  return out;
}

Tensor stack_inputs(const std::vector<Sample>& samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("stack_inputs: empty batch");
  const Shape& s = samples.at(indices[0]).input.shape();
  Shape shape{indices.size()};
  shape.insert(shape.end(), s.begin(), s.end());
  Tensor out(shape);
  const std::size_t per = shape_size(s);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Tensor& x = samples.at(indices[b]).input;
    if (x.shape() != s) throw DataError("batch mixes image shapes");
    std::copy(x.raw(), x.raw() + per, out.raw() + b * per);
  }
  return out;
}

Tensor stack_masks(const std::vector<Sample>& samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("stack_masks: empty batch");
  const Shape& s = samples.at(indices[0]).mask.shape();
  if (s.empty()) throw DataError("sample has no mask");
  Shape shape{indices.size()};
  shape.insert(shape.end(), s.begin(), s.end());
  Tensor out(shape);
  const std::size_t per = shape_size(s);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Tensor& m = samples.at(indices[b]).mask;
    if (m.shape() != s) throw DataError("batch mixes mask shapes");
    std::copy(m.raw(), m.raw() + per, out.raw() + b * per);
  }
  return out;
}

std::vector<std::size_t> gather_labels(const std::vector<Sample>& samples, std::span<const std::size_t> indices) {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(samples.at(i).label);
  return out;
}

}  // namespace medic::data
