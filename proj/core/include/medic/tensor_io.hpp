#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "medic/tensor.hpp"

namespace medic {

/// Binary tensor record:
///   "MDIC" | u32 version | u32 rank | u64 extents[rank] | f64 payload
/// All integers and doubles little-endian.
inline constexpr std::uint32_t kTensorFormatVersion = 1;

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

namespace binio {

void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f64(std::ostream& os, double v);
void write_string(std::ostream& os, const std::string& s);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
double read_f64(std::istream& is);
std::string read_string(std::istream& is);

}  // namespace binio

}  // namespace medic
