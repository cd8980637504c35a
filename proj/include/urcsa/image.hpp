#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "urcsa/ops.hpp"
#include "urcsa/random.hpp"

// Non-differentiable image utilities used around the network.
namespace urcsa {

template <typename T>
struct PaddedImage {
  Tensor<T> image;
  std::size_t height = 0;  // original size
  std::size_t width = 0;
};

// Mirror index into [0, n) for any i >= 0, excluding the edge sample
// (…, 2, 1, 0, 1, 2, …). Single-sample axes replicate.
inline std::size_t reflect_index(std::size_t i, std::size_t n) {
  if (n <= 1) return 0;
  const std::size_t period = 2 * (n - 1);
  const std::size_t j = i % period;
  return j < n ? j : period - j;
}

// Reflect-pads bottom and right so both spatial dims are multiples of m.
template <typename T>
PaddedImage<T> pad_to_multiple(const Tensor<T>& img, std::size_t m = 4) {
  detail::require_chw(img, "pad_to_multiple");
  if (m == 0) throw UsageError("pad_to_multiple: multiple must be >= 1");
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const std::size_t ph = (h + m - 1) / m * m, pw = (w + m - 1) / m * m;
  if (ph == h && pw == w) return {img, h, w};
  std::vector<T> out(c * ph * pw);
  const auto src = img.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < ph; ++y) {
      const std::size_t sy = reflect_index(y, h);
      for (std::size_t x = 0; x < pw; ++x) out[(ch * ph + y) * pw + x] = src[(ch * h + sy) * w + reflect_index(x, w)];
    }
  return {Tensor<T>(Shape{c, ph, pw}, std::move(out)), h, w};
}

template <typename T>
Tensor<T> crop_to(const Tensor<T>& img, std::size_t h, std::size_t w) {
  if (img.dim(1) == h && img.dim(2) == w) return img;
  NoGradGuard guard;
  return crop2d(img, 0, 0, h, w);
}

template <typename T>
Tensor<T> clamp01(const Tensor<T>& img) {
  std::vector<T> out(img.data().begin(), img.data().end());
  for (auto& v : out) v = std::clamp(v, T(0), T(1));
  return Tensor<T>(img.shape(), std::move(out));
}

// Adds N(0, sigma^2) noise to every sample (no clamping).
template <typename T>
Tensor<T> add_gaussian_noise(const Tensor<T>& img, double sigma, Rng& rng) {
  std::vector<T> out(img.data().begin(), img.data().end());
  if (sigma > 0) {
    for (auto& v : out) v = static_cast<T>(static_cast<double>(v) + sigma * rng.normal());
  }
  return Tensor<T>(img.shape(), std::move(out));
}

template <typename Dst, typename Src>
Tensor<Dst> convert(const Tensor<Src>& x) {
  std::vector<Dst> out(x.numel());
  const auto d = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<Dst>(d[i]);
  return Tensor<Dst>(x.shape(), std::move(out));
}

}  // namespace urcsa
