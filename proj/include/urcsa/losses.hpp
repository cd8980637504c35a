#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "urcsa/checkpoint.hpp"
#include "urcsa/conv.hpp"
#include "urcsa/ops.hpp"
#include "urcsa/param.hpp"

// Training objectives. Every loss reduces by the mean over all elements it
// compares, so weights stay comparable across crop sizes.
namespace urcsa {

// ------------------------------------------------------------------- SSIM

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

template <typename T>
std::vector<T> gaussian_kernel(std::size_t size = kSsimWindow, double sigma = kSsimSigma) {
  std::vector<double> k(size);
  const double centre = (static_cast<double>(size) - 1.0) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - centre;
    total += (k[i] = std::exp(-d * d / (2.0 * sigma * sigma)));
  }
  std::vector<T> out(size);
  for (std::size_t i = 0; i < size; ++i) out[i] = static_cast<T>(k[i] / total);
  return out;
}

// Per-window SSIM over the valid region, [C x (H-10) x (W-10)].
template <typename T>
Tensor<T> ssim_map(const Tensor<T>& x, const Tensor<T>& y) {
  detail::require_chw(x, "ssim");
  if (x.shape() != y.shape()) {
    throw DimensionError("ssim: shape mismatch " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  }
  if (x.dim(1) < kSsimWindow || x.dim(2) < kSsimWindow) {
    throw DimensionError("ssim: image " + to_string(x.shape()) + " smaller than the 11x11 window");
  }
  const std::vector<T> g = gaussian_kernel<T>();
  const std::span<const T> taps(g);
  const Tensor<T> mu_x = separable_filter_valid(x, taps);
  const Tensor<T> mu_y = separable_filter_valid(y, taps);
  const Tensor<T> mu_xx = mul(mu_x, mu_x);
  const Tensor<T> mu_yy = mul(mu_y, mu_y);
  const Tensor<T> mu_xy = mul(mu_x, mu_y);
  const Tensor<T> var_x = sub(separable_filter_valid(mul(x, x), taps), mu_xx);
  const Tensor<T> var_y = sub(separable_filter_valid(mul(y, y), taps), mu_yy);
  const Tensor<T> cov = sub(separable_filter_valid(mul(x, y), taps), mu_xy);
  const T c1 = static_cast<T>(kSsimC1), c2 = static_cast<T>(kSsimC2);
  const Tensor<T> luminance = div(add_scalar(scalar_mul(mu_xy, T(2)), c1), add_scalar(add(mu_xx, mu_yy), c1));
  const Tensor<T> structure = div(add_scalar(scalar_mul(cov, T(2)), c2), add_scalar(add(var_x, var_y), c2));
  return mul(luminance, structure);
}

template <typename T>
Tensor<T> ssim_loss(const Tensor<T>& pred, const Tensor<T>& gt) {
  return add_scalar(scalar_mul(mean(ssim_map(pred, gt)), T(-1)), T(1));
}

// ---------------------------------------------------------------- pixel losses

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

template <typename T>
Tensor<T> smooth_l1_loss(const Tensor<T>& pred, const Tensor<T>& gt) {
  require_same_shape(pred, gt, "smooth_l1_loss");
  return mean(smooth_l1(sub(pred, gt)));
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& gt) {
  require_same_shape(pred, gt, "mse_loss");
  return mean(square(sub(pred, gt)));
}

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& gt) {
  require_same_shape(pred, gt, "l1_loss");
  return mean(abs(sub(pred, gt)));
}

inline constexpr double kTvEpsilon = 1e-8;

// Mean over channels and positions (i < H-1, j < W-1) of
// sqrt(|(I(i,j) - I(i+1,j)) * (I(i,j) - I(i,j+1))| + eps).
template <typename T>
Tensor<T> tv_loss(const Tensor<T>& img) {
  detail::require_chw(img, "tv_loss");
  const std::size_t h = img.dim(1), w = img.dim(2);
  if (h < 2 || w < 2) throw DimensionError("tv_loss: image " + to_string(img.shape()) + " must be at least 2x2");
  const Tensor<T> centre = crop2d(img, 0, 0, h - 1, w - 1);
  const Tensor<T> dh = sub(centre, crop2d(img, 1, 0, h - 1, w - 1));
  const Tensor<T> dv = sub(centre, crop2d(img, 0, 1, h - 1, w - 1));
  return mean(sqrt(add_scalar(abs(mul(dh, dv)), static_cast<T>(kTvEpsilon))));
}

// --------------------------------------------------------------- perceptual

// Fixed convolutional feature network standing in for a pretrained VGG: a
// stack of {3x3 conv, leaky ReLU, 2x2 max pool} blocks whose weights never
// receive gradients.
template <typename T>
class FeatureExtractor {
 public:
  explicit FeatureExtractor(std::vector<std::size_t> widths = {8, 16, 32}, std::uint64_t seed = 7,
                            std::size_t layer = 0)
      : widths_(std::move(widths)), seed_(seed) {
    if (widths_.empty()) throw UsageError("feature extractor needs at least one block");
    layer_ = layer == 0 ? widths_.size() : layer;
    if (layer_ > widths_.size()) throw UsageError("feature extractor layer out of range");
    Rng rng(seed);
    std::size_t cin = 3;
    for (std::size_t i = 0; i < widths_.size(); ++i) {
      convs_.push_back(Conv<T>::create(params_, "extractor.block" + std::to_string(i), cin, widths_[i], 3, 1, rng));
      cin = widths_[i];
    }
    for (auto& p : params_.params()) p.value.set_requires_grad(false);
  }

  // Output of block `layer()` (1-based).
  Tensor<T> features(const Tensor<T>& img) const {
    Tensor<T> h = img;
    const T slope = static_cast<T>(kLeakySlope);
    for (std::size_t i = 0; i < layer_; ++i) h = maxpool2d(leaky_relu(convs_[i](h), slope));
    return h;
  }

  std::size_t layer() const { return layer_; }
  const std::vector<std::size_t>& widths() const { return widths_; }
  const ParameterSet<T>& params() const { return params_; }

  std::string description() const {
    std::ostringstream os;
    os << "extractor_widths=";
    for (std::size_t i = 0; i < widths_.size(); ++i) os << (i ? "," : "") << widths_[i];
    os << '\n';
    return os.str();
  }

  void save_weights(const std::filesystem::path& path) const {
    write_checkpoint(make_checkpoint(params_, description()), path);
  }

  // Replaces the random weights with an external set in the parameter file
  // format (names extractor.block<i>.weight / .bias).
  void load_weights(const std::filesystem::path& path) {
    apply_checkpoint(params_, read_checkpoint(path));
    for (auto& p : params_.params()) p.value.set_requires_grad(false);
  }

 private:
  std::vector<std::size_t> widths_;
  std::uint64_t seed_;
  std::size_t layer_;
  ParameterSet<T> params_;
  std::vector<Conv<T>> convs_;
};

// Mean absolute difference between extractor features of pred and gt.
template <typename T>
Tensor<T> perceptual_loss(const Tensor<T>& pred, const Tensor<T>& gt, const FeatureExtractor<T>& extractor) {
  require_same_shape(pred, gt, "perceptual_loss");
  Tensor<T> target;
  {
    NoGradGuard guard;
    target = extractor.features(gt);
  }
  return l1_loss(extractor.features(pred), target);
}

// ---------------------------------------------------------------- temporal

inline constexpr std::array<double, 3> kLumaWeights = {0.299, 0.587, 0.114};

template <typename T>
Tensor<T> brightness_map(const Tensor<T>& img) {
  detail::require_chw(img, "brightness_map");
  if (img.dim(0) != 3) throw DimensionError("brightness_map: expected 3 channels, got " + to_string(img.shape()));
  const std::array<T, 3> w = {static_cast<T>(kLumaWeights[0]), static_cast<T>(kLumaWeights[1]),
                              static_cast<T>(kLumaWeights[2])};
  return weighted_channel_sum(img, std::span<const T>(w));
}

// Mean |maxpool(bright_k) - maxpool(bright_k+1)| with 2x2 / stride 2 pooling.
template <typename T>
Tensor<T> l_dif(const Tensor<T>& pred_k, const Tensor<T>& pred_k1) {
  require_same_shape(pred_k, pred_k1, "l_dif");
  return l1_loss(maxpool2d(brightness_map(pred_k)), maxpool2d(brightness_map(pred_k1)));
}

// Mean squared mismatch between predicted and ground-truth frame differences.
template <typename T>
Tensor<T> l_self(const Tensor<T>& pred_k, const Tensor<T>& pred_k1, const Tensor<T>& gt_k, const Tensor<T>& gt_k1) {
  require_same_shape(pred_k, pred_k1, "l_self");
  require_same_shape(pred_k, gt_k, "l_self");
  require_same_shape(gt_k, gt_k1, "l_self");
  return mean(square(sub(sub(pred_k1, pred_k), sub(gt_k1, gt_k))));
}

// -------------------------------------------------------------- composites

enum class Stage { stage1, stage2, video };

struct LossWeights {
  double tv_weight = 0.001;
  double alpha = 2.0;
  double beta = 2.0;

  void validate() const {
    if (tv_weight < 0 || alpha < 0 || beta < 0) throw ConfigError("loss weights must be non-negative");
  }
};

// Individual terms; unused ones stay undefined.
template <typename T>
struct LossTerms {
  Tensor<T> perceptual, ssim, smooth_l1, tv, mse, dif, self_sim;
};

// stage1 = Lp + Ls + Lsl1 + tv_weight * Ltv
// stage2 = Lp + Ls + Lsl1 + Lmse
// video  = alpha * Ldif + beta * Lself + stage1
template <typename T>
Tensor<T> composite_loss(Stage stage, const LossTerms<T>& t, const LossWeights& w = {}) {
  const auto need = [](const Tensor<T>& x, const char* name) {
    if (!x.defined()) throw UsageError(std::string("composite_loss: missing term ") + name);
  };
  need(t.perceptual, "perceptual");
  need(t.ssim, "ssim");
  need(t.smooth_l1, "smooth_l1");
  const Tensor<T> base = add(add(t.perceptual, t.ssim), t.smooth_l1);
  if (stage == Stage::stage2) {
    need(t.mse, "mse");
    return add(base, t.mse);
  }
  need(t.tv, "tv");
  const Tensor<T> stage1 = add(base, scalar_mul(t.tv, static_cast<T>(w.tv_weight)));
  if (stage == Stage::stage1) return stage1;
  if (!t.dif.defined() || !t.self_sim.defined()) {
    throw UsageError("composite_loss: video stage requires a frame pair (dif and self terms)");
  }
  return add(add(scalar_mul(t.dif, static_cast<T>(w.alpha)), scalar_mul(t.self_sim, static_cast<T>(w.beta))), stage1);
}

// Image terms for one prediction.
template <typename T>
LossTerms<T> image_terms(const Tensor<T>& pred, const Tensor<T>& gt, Stage stage,
                         const FeatureExtractor<T>& extractor) {
  LossTerms<T> t;
  t.perceptual = perceptual_loss(pred, gt, extractor);
  t.ssim = ssim_loss(pred, gt);
  t.smooth_l1 = smooth_l1_loss(pred, gt);
  if (stage == Stage::stage2) t.mse = mse_loss(pred, gt);
  else t.tv = tv_loss(pred);
  return t;
}

template <typename T>
Tensor<T> image_loss(const Tensor<T>& pred, const Tensor<T>& gt, Stage stage, const FeatureExtractor<T>& extractor,
                     const LossWeights& w = {}, LossTerms<T>* terms_out = nullptr) {
  if (stage == Stage::video) throw UsageError("image_loss: video stage requires a frame pair");
  LossTerms<T> t = image_terms(pred, gt, stage, extractor);
  Tensor<T> total = composite_loss(stage, t, w);
  if (terms_out) *terms_out = std::move(t);
  return total;
}

// Video objective on an adjacent frame pair. The image terms are the mean of
// the two frames' stage-1 terms.
template <typename T>
Tensor<T> video_loss(const Tensor<T>& pred_k, const Tensor<T>& pred_k1, const Tensor<T>& gt_k,
                     const Tensor<T>& gt_k1, const FeatureExtractor<T>& extractor, const LossWeights& w = {},
                     LossTerms<T>* terms_out = nullptr) {
  const LossTerms<T> a = image_terms(pred_k, gt_k, Stage::stage1, extractor);
  const LossTerms<T> b = image_terms(pred_k1, gt_k1, Stage::stage1, extractor);
  const auto avg = [](const Tensor<T>& x, const Tensor<T>& y) { return scalar_mul(add(x, y), T(0.5)); };
  LossTerms<T> t;
  t.perceptual = avg(a.perceptual, b.perceptual);
  t.ssim = avg(a.ssim, b.ssim);
  t.smooth_l1 = avg(a.smooth_l1, b.smooth_l1);
  t.tv = avg(a.tv, b.tv);
  t.dif = l_dif(pred_k, pred_k1);
  t.self_sim = l_self(pred_k, pred_k1, gt_k, gt_k1);
  Tensor<T> total = composite_loss(Stage::video, t, w);
  if (terms_out) *terms_out = std::move(t);
  return total;
}

}  // namespace urcsa
