#include "fot/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace fot {

namespace {
[[noreturn]] void bad(const std::string& msg) { throw std::runtime_error("ppm: " + msg); }

// Reads one whitespace/comment-delimited token from a P6 header.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) bad("truncated header");
  return tok;
}
}  // namespace

ImageBuffer read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) bad("cannot open " + path);
  if (next_token(f) != "P6") bad(path + " is not a binary PPM (P6)");
  ImageBuffer img;
  img.width = std::stoi(next_token(f));
  img.height = std::stoi(next_token(f));
  int maxval = std::stoi(next_token(f));
  if (img.width <= 0 || img.height <= 0) bad("bad dimensions in " + path);
  if (maxval != 255) bad("only maxval 255 supported, got " + std::to_string(maxval));
  img.rgb.resize(static_cast<size_t>(img.width) * img.height * 3);
  f.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.rgb.size())) bad("truncated pixels in " + path);
  return img;
}

void write_ppm(const std::string& path, const ImageBuffer& img) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) bad("cannot open " + path + " for writing");
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!f) bad("short write to " + path);
}

Tensor image_to_tensor(const ImageBuffer& img) {
  int64_t h = img.height, w = img.width;
  std::vector<float> data(static_cast<size_t>(3 * h * w));
  constexpr float kInv = 1.0f / 255.0f;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        data[static_cast<size_t>((c * h + y) * w + x)] =
            img.rgb[static_cast<size_t>((y * w + x) * 3 + c)] * kInv;
  return Tensor::from_data({1, 3, h, w}, std::move(data));
}

ImageBuffer tensor_to_image(const Tensor& t) {
  if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 3)
    throw std::invalid_argument("tensor_to_image: expects [1,3,H,W], got " + shape_str(t.shape()));
  ImageBuffer img;
  img.height = static_cast<int>(t.dim(2));
  img.width = static_cast<int>(t.dim(3));
  img.rgb.resize(static_cast<size_t>(img.width) * img.height * 3);
  const float* d = t.data().data();
  int64_t h = img.height, w = img.width;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        float v = d[(c * h + y) * w + x];
        v = std::clamp(v, 0.0f, 1.0f);
        img.rgb[static_cast<size_t>((y * w + x) * 3 + c)] =
            static_cast<uint8_t>(std::lround(v * 255.0f));
      }
  return img;
}

ImageBuffer pad_to_multiple(const ImageBuffer& img, int m) {
  int pw = (img.width + m - 1) / m * m;
  int ph = (img.height + m - 1) / m * m;
  if (pw == img.width && ph == img.height) return img;
  ImageBuffer out;
  out.width = pw;
  out.height = ph;
  out.rgb.resize(static_cast<size_t>(pw) * ph * 3);
  for (int y = 0; y < ph; ++y) {
    int sy = std::min(y, img.height - 1);
    for (int x = 0; x < pw; ++x) {
      int sx = std::min(x, img.width - 1);
      for (int c = 0; c < 3; ++c)
        out.rgb[(static_cast<size_t>(y) * pw + x) * 3 + static_cast<size_t>(c)] = img.at(sx, sy, c);
    }
  }
  return out;
}

ImageBuffer crop_image(const ImageBuffer& img, int width, int height) {
  if (width > img.width || height > img.height)
    throw std::invalid_argument("crop_image: target larger than source");
  if (width == img.width && height == img.height) return img;
  ImageBuffer out;
  out.width = width;
  out.height = height;
  out.rgb.resize(static_cast<size_t>(width) * height * 3);
  for (int y = 0; y < height; ++y)
    std::copy_n(img.rgb.data() + (static_cast<size_t>(y) * img.width) * 3,
                static_cast<size_t>(width) * 3,
                out.rgb.data() + static_cast<size_t>(y) * width * 3);
  return out;
}

}  // namespace fot
