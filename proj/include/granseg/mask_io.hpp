#pragma once

#include "granseg/core_types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace granseg {

// PNG codecs. Masks are written as 8-bit grayscale with values {0, 255};
// on read any value > 127 is foreground.
std::vector<std::uint8_t> encode_mask_png(const BinaryMask& m);
BinaryMask decode_mask_png(const std::vector<std::uint8_t>& bytes, MaskRole role = MaskRole::ground_truth);
void write_mask_png(const std::filesystem::path& path, const BinaryMask& m);
BinaryMask read_mask_png(const std::filesystem::path& path, MaskRole role = MaskRole::ground_truth);

std::vector<std::uint8_t> encode_image_png(const Image& img);
/// Accepts gray, gray+alpha, RGB and RGBA PNGs; alpha is dropped.
Image decode_image_png(const std::vector<std::uint8_t>& bytes, std::string id = {});
void write_image_png(const std::filesystem::path& path, const Image& img);
Image read_image_png(const std::filesystem::path& path, std::string id = {});

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

// Run-length encoding over row-major pixel order. Runs alternate starting
// with background, so a mask whose first pixel is foreground starts with 0.
std::vector<std::uint32_t> rle_encode(const BinaryMask& m);
BinaryMask rle_decode(const std::vector<std::uint32_t>& counts, int height, int width,
                      MaskRole role = MaskRole::prediction);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Nearest-neighbour resampling.
BinaryMask resize_nearest(const BinaryMask& m, int height, int width);
/// Bilinear resampling (pixel-centre aligned).
Image resize_bilinear(const Image& img, int height, int width);

} // namespace granseg
