#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "scan/tensor.hpp"

namespace scan {

/// Reads a binary P6 PPM with maxval 255 into a (1,3,H,W) tensor, mapping each
/// byte v to v / 127.5 - 1. Comments in the header are accepted.
Tensor read_image(const std::filesystem::path& path);

/// Writes a (1,3,H,W) tensor as P6 with the inverse mapping, rounding half
/// away from zero and clamping to [0, 255].
void write_image(const Tensor& image, const std::filesystem::path& path);

/// The byte mapping used by write_image, exposed for callers that need the
/// quantized values without touching the filesystem.
std::uint8_t to_byte(real value);
real from_byte(std::uint8_t byte);

/// Parses PPM bytes already in memory; `what` names the source in errors.
Tensor decode_ppm(const std::vector<std::uint8_t>& bytes, const std::string& what);
std::vector<std::uint8_t> encode_ppm(const Tensor& image);

}  // namespace scan
