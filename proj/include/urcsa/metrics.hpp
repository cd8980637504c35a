#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "urcsa/losses.hpp"

// Evaluation metrics on [3 x H x W] images with unit dynamic range.
namespace urcsa {

inline constexpr double kPsnrCap = 100.0;

template <typename T>
double mse(const Tensor<T>& pred, const Tensor<T>& gt) {
  require_same_shape(pred, gt, "mse");
  const auto a = pred.data();
  const auto b = gt.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

// 10 log10(1 / MSE), capped at kPsnrCap (identical images).
template <typename T>
double psnr(const Tensor<T>& pred, const Tensor<T>& gt) {
  const double m = mse(pred, gt);
  if (m <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

// Mean SSIM; shares its kernel with ssim_loss so ssim_index == 1 - ssim_loss.
template <typename T>
double ssim_index(const Tensor<T>& pred, const Tensor<T>& gt) {
  NoGradGuard guard;
  return 1.0 - static_cast<double>(ssim_loss(pred, gt).item());
}

// Root mean squared error on the 0-255 scale.
template <typename T>
double rmse(const Tensor<T>& pred, const Tensor<T>& gt) {
  return 255.0 * std::sqrt(mse(pred, gt));
}

struct Lab {
  double l, a, b;
};

// sRGB (D65) in [0,1] to CIE L*a*b*.
inline Lab srgb_to_lab(double r, double g, double b) {
  const auto linear = [](double v) { return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4); };
  const double rl = linear(r), gl = linear(g), bl = linear(b);
  const double x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
  const double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
  const double z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
  constexpr double xn = 0.95047, yn = 1.0, zn = 1.08883;
  constexpr double delta = 6.0 / 29.0;
  const auto f = [](double t) {
    return t > delta * delta * delta ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
  };
  const double fx = f(x / xn), fy = f(y / yn), fz = f(z / zn);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

// Mean CIE76 colour difference over pixels.
template <typename T>
double delta_e76(const Tensor<T>& pred, const Tensor<T>& gt) {
  require_same_shape(pred, gt, "delta_e76");
  if (pred.ndim() != 3 || pred.dim(0) != 3) throw DimensionError("delta_e76: expected 3xHxW images");
  const std::size_t plane = pred.dim(1) * pred.dim(2);
  const auto p = pred.data();
  const auto q = gt.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    const Lab a = srgb_to_lab(p[i], p[plane + i], p[2 * plane + i]);
    const Lab b = srgb_to_lab(q[i], q[plane + i], q[2 * plane + i]);
    acc += std::sqrt((a.l - b.l) * (a.l - b.l) + (a.a - b.a) * (a.a - b.a) + (a.b - b.b) * (a.b - b.b));
  }
  return acc / static_cast<double>(plane);
}

template <typename T>
using FrameSequence = std::vector<Tensor<T>>;

struct TemporalMetrics {
  double ab = 0.0;
  double mabd = 0.0;
  double tpsnr = 0.0;
  double tssim = 0.0;
};

namespace detail {

template <typename T>
std::vector<double> brightness_planes_mean(const FrameSequence<T>& seq) {
  std::vector<double> means;
  for (const auto& f : seq) {
    NoGradGuard guard;
    const Tensor<T> b = brightness_map(f);
    double acc = 0.0;
    for (T v : b.data()) acc += static_cast<double>(v);
    means.push_back(acc / static_cast<double>(b.numel()));
  }
  return means;
}

// Per adjacent pair, mean over pixels of |bright_{k+1} - bright_k|.
template <typename T>
std::vector<double> mabd_vector(const FrameSequence<T>& seq) {
  NoGradGuard guard;
  std::vector<double> out;
  for (std::size_t k = 0; k + 1 < seq.size(); ++k) {
    const Tensor<T> a = brightness_map(seq[k]);
    const Tensor<T> b = brightness_map(seq[k + 1]);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
      acc += std::abs(static_cast<double>(b[i]) - static_cast<double>(a[i]));
    out.push_back(acc / static_cast<double>(a.numel()));
  }
  return out;
}

inline double population_variance(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return acc / static_cast<double>(v.size());
}

}  // namespace detail

// AB    = |Var_k(mean brightness of pred_k) - Var_k(mean brightness of gt_k)|
// MABD  = mean squared difference of the pred and gt MABD vectors
// TPSNR = mean_k psnr(pred_k, pred_k+1)
// TSSIM = mean_k ssim_index(pred_k, pred_k+1)
template <typename T>
TemporalMetrics temporal_metrics(const FrameSequence<T>& pred, const FrameSequence<T>& gt) {
  if (pred.size() != gt.size()) {
    throw DimensionError("temporal_metrics: sequence lengths differ (" + std::to_string(pred.size()) + " vs " +
                         std::to_string(gt.size()) + ")");
  }
  if (pred.size() < 2) throw DimensionError("temporal_metrics: need at least two frames");
  for (std::size_t k = 0; k < pred.size(); ++k) {
    require_same_shape(pred[k], pred[0], "temporal_metrics");
    require_same_shape(gt[k], pred[0], "temporal_metrics");
  }
  TemporalMetrics m;
  m.ab = std::abs(detail::population_variance(detail::brightness_planes_mean(pred)) -
                  detail::population_variance(detail::brightness_planes_mean(gt)));
  const auto vp = detail::mabd_vector(pred);
  const auto vg = detail::mabd_vector(gt);
  double acc = 0.0;
  for (std::size_t k = 0; k < vp.size(); ++k) acc += (vp[k] - vg[k]) * (vp[k] - vg[k]);
  m.mabd = acc / static_cast<double>(vp.size());
  for (std::size_t k = 0; k + 1 < pred.size(); ++k) {
    m.tpsnr += psnr(pred[k], pred[k + 1]);
    m.tssim += ssim_index(pred[k], pred[k + 1]);
  }
  m.tpsnr /= static_cast<double>(pred.size() - 1);
  m.tssim /= static_cast<double>(pred.size() - 1);
  return m;
}

}  // namespace urcsa
