#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "medic/tensor.hpp"

namespace medic::io {

/// Decodes a PGM/PPM (P2, P3, P5, P6; maxval up to 65535) or PNG file into an
/// [H, W, C] tensor with values v / maxval in [0, 1]. C is 1 for gray, 3 for
/// color; PNG alpha channels are dropped. Throws DataError.
Tensor read_image(const std::filesystem::path& path);

/// Encodes an [H, W, 1] or [H, W, 3] tensor with values in [0, 1] as 8-bit
/// binary PGM (P5) or PPM (P6). Values map to bytes by floor(255 v + 0.5).
void write_pnm(const std::filesystem::path& path, const Tensor& image);
std::vector<unsigned char> encode_pnm(const Tensor& image);
Tensor decode_pnm(const std::vector<unsigned char>& bytes);

/// 8-bit quantization used by the encoders: floor(255 v + 0.5), clamped.
unsigned char to_byte(double v);

bool is_image_file(const std::filesystem::path& path);

}  // namespace medic::io
