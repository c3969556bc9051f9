#pragma once

// 8-bit PNG reading and writing (gray or RGB) and label-mask PNGs, where the
// pixel value is the label index and 255 marks ignored pixels.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "vismem/segmentation.hpp"

namespace vismem {

struct Image8 {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const Image8&, const Image8&) = default;
};

inline constexpr std::uint8_t kIgnorePixel = 255;

std::string encode_png(const Image8& image);
Image8 decode_png(std::string_view bytes, std::uint32_t channels);

void write_png(const Image8& image, const std::filesystem::path& path);
// Converts to the requested channel count (1 or 3) on load.
Image8 read_png(const std::filesystem::path& path, std::uint32_t channels);

Image8 mask_to_image(const LabelMask& mask);
LabelMask image_to_mask(const Image8& image);
void write_mask_png(const LabelMask& mask, const std::filesystem::path& path);
LabelMask read_mask_png(const std::filesystem::path& path);

}  // namespace vismem
