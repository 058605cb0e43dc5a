#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fot/tensor.hpp"

namespace fot {

/// 8-bit interleaved RGB. The float view is v/255 in [0,1]; the 8-bit ->
/// float -> 8-bit round trip is lossless.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel

  uint8_t at(int x, int y, int c) const {
    return rgb[(static_cast<size_t>(y) * width + x) * 3 + static_cast<size_t>(c)];
  }
  int64_t pixels() const { return static_cast<int64_t>(width) * height; }
};

/// Binary PPM (P6, maxval 255).
ImageBuffer read_ppm(const std::string& path);
void write_ppm(const std::string& path, const ImageBuffer& img);

Tensor image_to_tensor(const ImageBuffer& img);          // [1,3,H,W] in [0,1]
ImageBuffer tensor_to_image(const Tensor& t);            // clamps to [0,1], rounds to 8-bit

/// Replicate-edge padding on the right/bottom up to the next multiple of m.
ImageBuffer pad_to_multiple(const ImageBuffer& img, int m = 64);
ImageBuffer crop_image(const ImageBuffer& img, int width, int height);

}  // namespace fot
