#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dpst/tensor.hpp"

namespace dpst::image {

/// 8-bit interleaved RGB raster.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  const std::uint8_t* at(std::size_t x, std::size_t y) const {
    return pixels.data() + (y * width + x) * 3;
  }
  std::uint8_t* at(std::size_t x, std::size_t y) { return pixels.data() + (y * width + x) * 3; }
};

/// Reads PNG, binary PPM (P6) or JPEG by extension; gray and alpha are dropped to RGB.
RgbImage read_image(const std::filesystem::path& path);

/// Same as read_image but only accepts lossless formats (PNG, PPM).
RgbImage read_lossless_image(const std::filesystem::path& path);

/// Writes PNG or PPM by extension.
void write_image(const RgbImage& image, const std::filesystem::path& path);

/// {H, W, 3} tensor in [0, 1].
Tensor to_tensor(const RgbImage& image);

/// Clamps to [0, 1] and rounds to 8 bits.
RgbImage from_tensor(const Tensor& image);

/// Bilinear resampling with half-pixel centers and edge clamping.
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);

}  // namespace dpst::image
