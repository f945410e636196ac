#include "medic/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>

#include "medic/error.hpp"

namespace medic::io {

namespace {

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

class PnmReader {
 public:
  explicit PnmReader(const std::vector<unsigned char>& b) : b_(b) {}

  void skip_space() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number() {
    skip_space();
    if (pos_ >= b_.size() || !std::isdigit(b_[pos_])) throw DataError("malformed PNM header");
    std::size_t v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_++] - '0');
      if (v > (1u << 30)) throw DataError("PNM value out of range");
    }
    return v;
  }

  unsigned char byte() {
    if (pos_ >= b_.size()) throw DataError("truncated PNM payload");
    return b_[pos_++];
  }

  void single_space() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_])) throw DataError("malformed PNM header");
    ++pos_;
  }

 private:
  const std::vector<unsigned char>& b_;
  std::size_t pos_ = 2;
};

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

Tensor read_png(const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw DataError("cannot open '" + path.string() + "'");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng init failed");
  }
  std::vector<unsigned char> pixels;
  png_uint_32 width = 0, height = 0;
  int channels = 0;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG '" + path.string() + "'");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  channels = png_get_channels(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  pixels.resize(rowbytes * height);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  if (channels != 1 && channels != 3) throw DataError("unsupported PNG channel layout");
  Tensor out({height, width, static_cast<std::size_t>(channels)});
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width * channels; ++x) out[y * width * channels + x] = pixels[y * rowbytes + x] / 255.0;
  return out;
}

}  // namespace

unsigned char to_byte(double v) {
  const double s = std::floor(255.0 * v + 0.5);
  return static_cast<unsigned char>(std::clamp(s, 0.0, 255.0));
}

bool is_image_file(const std::filesystem::path& path) {
  const std::string e = lower_ext(path);
  return e == ".png" || e == ".ppm" || e == ".pgm" || e == ".pnm";
}

Tensor decode_pnm(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P') throw DataError("not a PNM file");
  const char kind = static_cast<char>(bytes[1]);
  if (kind != '2' && kind != '3' && kind != '5' && kind != '6') {
    throw DataError(std::string("unsupported PNM variant P") + kind);
  }
  PnmReader r(bytes);
  const std::size_t w = r.number(), h = r.number(), maxval = r.number();
  if (w == 0 || h == 0) throw DataError("PNM has zero extent");
  if (maxval == 0 || maxval > 65535) throw DataError("PNM maxval out of range");
  const std::size_t c = (kind == '3' || kind == '6') ? 3 : 1;
  Tensor out({h, w, c});
  const bool ascii = kind == '2' || kind == '3';
  if (!ascii) r.single_space();
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::size_t v = 0;
    if (ascii) {
      v = r.number();
    } else if (maxval < 256) {
      v = r.byte();
    } else {
      v = static_cast<std::size_t>(r.byte()) << 8;
      v |= r.byte();
    }
    if (v > maxval) throw DataError("PNM sample exceeds maxval");
    out[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return out;
}

std::vector<unsigned char> encode_pnm(const Tensor& image) {
  if (image.rank() != 3 || (image.dim(2) != 1 && image.dim(2) != 3)) {
    throw std::invalid_argument("encode_pnm expects [H,W,1] or [H,W,3], got " +
                                shape_to_string(image.shape()));
  }
  const std::string header = std::string(image.dim(2) == 1 ? "P5" : "P6") + "\n" +
                             std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) +
                             "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(header.size() + image.size());
  for (std::size_t i = 0; i < image.size(); ++i) out.push_back(to_byte(image[i]));
  return out;
}

void write_pnm(const std::filesystem::path& path, const Tensor& image) {
  const auto bytes = encode_pnm(image);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write '" + path.string() + "'");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("write failed for '" + path.string() + "'");
}

Tensor read_image(const std::filesystem::path& path) {
  const std::string e = lower_ext(path);
  if (e == ".png") return read_png(path);
  if (e == ".ppm" || e == ".pgm" || e == ".pnm") return decode_pnm(read_bytes(path));
  throw DataError("unsupported image format '" + path.string() + "'");
}

}  // namespace medic::io
