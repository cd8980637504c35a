#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "urcsa/tensor.hpp"

// 8-bit PNG input/output through libpng's simplified API. Images are
// [3 x H x W] in [0, 1]; alpha is dropped on load.
namespace urcsa {

namespace detail {
inline bool has_png_signature(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  unsigned char sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), 8);
  return in.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0;
}

// Bit depth from the IHDR chunk (byte 24 of a well-formed file).
inline int png_bit_depth(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  unsigned char head[26] = {};
  in.read(reinterpret_cast<char*>(head), 26);
  return in.gcount() == 26 ? head[24] : -1;
}
}  // namespace detail

// Round-half-up quantisation after clamping to [0, 1].
inline std::uint8_t quantize_unit(double v) {
  const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<std::uint8_t>(std::floor(c * 255.0 + 0.5));
}

template <typename T = float>
Tensor<T> load_png(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw FileNotFoundError("no such file '" + path.string() + "'");
  if (!detail::has_png_signature(path)) throw NotAnImageError("'" + path.string() + "' is not a PNG image");
  const int depth = detail::png_bit_depth(path);
  if (depth > 8) {
    throw UnsupportedDepthError("'" + path.string() + "' has " + std::to_string(depth) +
                                "-bit samples; only 8-bit PNG is supported");
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw NotAnImageError("cannot decode '" + path.string() + "': " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw NotAnImageError("cannot decode '" + path.string() + "': " + image.message);
  }
  const std::size_t h = image.height, w = image.width, plane = h * w;
  std::vector<T> data(3 * plane);
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < 3; ++c) data[c * plane + p] = static_cast<T>(buffer[p * 3 + c]) / T(255);
  return Tensor<T>(Shape{3, h, w}, std::move(data));
}

template <typename T>
void save_png(const Tensor<T>& img, const std::filesystem::path& path) {
  if (img.ndim() != 3 || img.dim(0) != 3) throw DimensionError("save_png: expected 3xHxW, got " + to_string(img.shape()));
  const std::size_t h = img.dim(1), w = img.dim(2), plane = h * w;
  std::vector<png_byte> buffer(3 * plane);
  const auto d = img.data();
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < 3; ++c) buffer[p * 3 + c] = quantize_unit(static_cast<double>(d[c * plane + p]));
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buffer.data(), 0, nullptr)) {
    throw IoError("cannot write '" + path.string() + "': " + image.message);
  }
}

}  // namespace urcsa
