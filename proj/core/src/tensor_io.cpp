#include "medic/tensor_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "medic/error.hpp"

namespace medic {

namespace binio {

namespace {

template <typename T>
void write_le(std::ostream& os, T v) {
  std::array<unsigned char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!is.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) {
    throw DataError("unexpected end of binary stream");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T v;
  std::memcpy(&v, bytes.data(), sizeof(T));
  return v;
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { write_le(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { write_le(os, v); }
void write_f64(std::ostream& os, double v) { write_le(os, v); }
void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::uint32_t read_u32(std::istream& is) { return read_le<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return read_le<std::uint64_t>(is); }
double read_f64(std::istream& is) { return read_le<double>(is); }
std::string read_string(std::istream& is) {
  const auto n = read_u32(is);
  if (n > (1u << 24)) throw DataError("string record too long");
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw DataError("unexpected end of binary stream");
  return s;
}

}  // namespace binio

void write_tensor(std::ostream& os, const Tensor& t) {
  if (t.empty()) throw std::invalid_argument("cannot serialize an empty tensor");
  os.write("MDIC", 4);
  binio::write_u32(os, kTensorFormatVersion);
  binio::write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) binio::write_u64(os, e);
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(t.raw()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  } else {
    for (double v : t.data()) binio::write_f64(os, v);
  }
}

Tensor read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "MDIC", 4) != 0) {
    throw DataError("bad tensor magic");
  }
  const auto version = binio::read_u32(is);
  if (version != kTensorFormatVersion) {
    throw DataError("unsupported tensor format version " + std::to_string(version));
  }
  const auto rank = binio::read_u32(is);
  if (rank == 0 || rank > 16) throw DataError("invalid tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) e = binio::read_u64(is);
  std::vector<double> data(shape_size(shape));
  if constexpr (std::endian::native == std::endian::little) {
    if (!is.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(data.size() * sizeof(double)))) {
      throw DataError("truncated tensor payload");
    }
  } else {
    for (auto& v : data) v = binio::read_f64(is);
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  return read_tensor(is);
}

}  // namespace medic
