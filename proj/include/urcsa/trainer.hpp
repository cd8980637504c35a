#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "urcsa/checkpoint.hpp"
#include "urcsa/enhance.hpp"
#include "urcsa/losses.hpp"
#include "urcsa/metrics.hpp"

namespace urcsa {

// ------------------------------------------------------------------ optimiser

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a parameter set. Moments are allocated on first
// use and indexed by registration order.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

  // Applies one update from the accumulated gradients, then clears them.
  void step(ParameterSet<T>& params, double lr) {
    auto& list = params.params();
    if (first_.empty()) {
      for (const auto& p : list) {
        first_.emplace_back(p.value.numel(), T(0));
        second_.emplace_back(p.value.numel(), T(0));
      }
    }
    if (first_.size() != list.size()) throw UsageError("Adam: parameter set changed between steps");
    for (const auto& p : list) {
      if (!p.value.has_grad()) throw UsageError("Adam: parameter '" + p.name + "' has no gradient");
    }
    ++step_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    const T b1 = static_cast<T>(opts_.beta1), b2 = static_cast<T>(opts_.beta2);
    for (std::size_t i = 0; i < list.size(); ++i) {
      auto value = list[i].value.mutable_data();
      const auto grad = list[i].value.grad();
      auto& m = first_[i];
      auto& v = second_[i];
      for (std::size_t j = 0; j < value.size(); ++j) {
        const T g = grad[j];
        m[j] = b1 * m[j] + (T(1) - b1) * g;
        v[j] = b2 * v[j] + (T(1) - b2) * g * g;
        const double mhat = static_cast<double>(m[j]) / c1;
        const double vhat = static_cast<double>(v[j]) / c2;
        value[j] = static_cast<T>(static_cast<double>(value[j]) - lr * mhat / (std::sqrt(vhat) + opts_.eps));
      }
      list[i].value.clear_grad();
    }
  }

  std::uint64_t steps() const { return step_; }
  const std::vector<std::vector<T>>& first_moments() const { return first_; }
  const std::vector<std::vector<T>>& second_moments() const { return second_; }

 private:
  AdamOptions opts_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<T>> first_, second_;
};

// ------------------------------------------------------------------- config

// Smallest multiple of 4 that fits the 11x11 SSIM window.
inline constexpr std::size_t kMinTrainSide = 12;

struct TrainConfig {
  double initial_lr = 5e-4;
  double decay_factor = 1.2;
  std::size_t decay_every = 50;  // epochs
  std::size_t total_epochs = 600;
  double stage1_fraction = 2.0 / 3.0;
  std::size_t crop_h = 128;  // capped at the image size, then rounded down to a multiple of 4
  std::size_t crop_w = 128;
  std::size_t batch_size = 1;
  std::size_t max_steps = 0;  // 0 = no limit
  std::size_t validate_every = 1;
  std::uint64_t seed = 0;
  LossWeights loss;

  void validate() const {
    if (!(stage1_fraction > 0.0 && stage1_fraction < 1.0)) throw ConfigError("stage1_fraction must be in (0, 1)");
    if (crop_h == 0 || crop_w == 0 || crop_h % 4 || crop_w % 4) {
      throw ConfigError("crop size must be positive and divisible by 4");
    }
    if (crop_h < kMinTrainSide || crop_w < kMinTrainSide) {
      throw ConfigError("crop size must be at least " + std::to_string(kMinTrainSide) + " (SSIM window)");
    }
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (decay_every == 0) throw ConfigError("decay_every must be positive");
    if (initial_lr <= 0.0 || decay_factor <= 0.0) throw ConfigError("learning rate settings must be positive");
    if (validate_every == 0) throw ConfigError("validate_every must be positive");
    loss.validate();
  }

  Stage stage_for_epoch(std::size_t epoch) const {
    return static_cast<double>(epoch) < stage1_fraction * static_cast<double>(total_epochs) ? Stage::stage1
                                                                                            : Stage::stage2;
  }
};

// initial_lr / decay_factor^floor(epoch / decay_every)
inline double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.initial_lr / std::pow(cfg.decay_factor, static_cast<double>(epoch / cfg.decay_every));
}

// --------------------------------------------------------------------- data

template <typename T>
struct ImagePair {
  Tensor<T> low;
  Tensor<T> high;
  std::string name;
};

// Adjacent frames k and k+1 of one scene.
template <typename T>
struct FramePair {
  Tensor<T> low_k, low_k1;
  Tensor<T> high_k, high_k1;
  std::string name;
};

struct CropWindow {
  std::size_t top = 0, left = 0, height = 0, width = 0;
};

inline CropWindow random_crop_window(std::size_t h, std::size_t w, std::size_t crop_h, std::size_t crop_w, Rng& rng) {
  if (crop_h > h || crop_w > w) {
    throw DimensionError("random crop " + std::to_string(crop_h) + "x" + std::to_string(crop_w) +
                         " larger than image " + std::to_string(h) + "x" + std::to_string(crop_w));
  }
  CropWindow win{0, 0, crop_h, crop_w};
  win.top = static_cast<std::size_t>(rng.index(h - crop_h + 1));
  win.left = static_cast<std::size_t>(rng.index(w - crop_w + 1));
  return win;
}

template <typename T>
Tensor<T> apply_crop(const Tensor<T>& img, const CropWindow& win) {
  NoGradGuard guard;
  return crop2d(img, win.top, win.left, win.height, win.width);
}

// Same random window on both images.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> random_crop_pair(const Tensor<T>& low, const Tensor<T>& high, std::size_t crop_h,
                                                 std::size_t crop_w, Rng& rng) {
  require_same_shape(low, high, "random_crop_pair");
  const CropWindow win = random_crop_window(low.dim(1), low.dim(2), crop_h, crop_w, rng);
  return {apply_crop(low, win), apply_crop(high, win)};
}

// ---------------------------------------------------------------------- log

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  Stage stage = Stage::stage1;
  std::size_t steps = 0;  // optimiser steps completed at the end of the epoch
  // Mean term values over the epoch; terms absent from the active objective are NaN.
  double perceptual = 0.0, ssim_term = 0.0, smooth_l1 = 0.0;
  double tv = NAN, mse = NAN, dif = NAN, self_sim = NAN;
};

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::stage1: return "1";
    case Stage::stage2: return "2";
    case Stage::video: return "video";
  }
  return "?";
}

// One log line. The first five keys are fixed; the rest name the active
// objective's terms.
inline std::string format_epoch(const EpochRecord& r) {
  char buf[512];
  int n = std::snprintf(buf, sizeof buf, "epoch=%zu lr=%.6g loss=%.6g psnr=%.4f ssim=%.4f stage=%s lp=%.6g ls=%.6g lsl1=%.6g",
                        r.epoch, r.lr, r.loss, r.psnr, r.ssim, stage_name(r.stage), r.perceptual, r.ssim_term,
                        r.smooth_l1);
  std::string line(buf, static_cast<std::size_t>(n));
  const auto extra = [&](const char* key, double v) {
    if (std::isnan(v)) return;
    std::snprintf(buf, sizeof buf, " %s=%.6g", key, v);
    line += buf;
  };
  extra("ltv", r.tv);
  extra("lmse", r.mse);
  extra("ldif", r.dif);
  extra("lself", r.self_sim);
  return line;
}

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  std::size_t steps = 0;
  double best_psnr = -1.0;
  std::size_t best_epoch = 0;
};

struct TrainOptions {
  std::ostream* log = nullptr;                       // one line per epoch
  std::optional<std::filesystem::path> checkpoint;  // written at best validation PSNR
};

// ------------------------------------------------------------------ evaluate

struct ImageScores {
  double psnr = 0.0;
  double ssim = 0.0;
};

template <typename T>
ImageScores evaluate_pairs(const Model<T>& model, const std::vector<ImagePair<T>>& pairs) {
  ImageScores s;
  for (const auto& p : pairs) {
    const Tensor<T> out = enhance(model, p.low);
    s.psnr += psnr(out, p.high);
    s.ssim += ssim_index(out, p.high);
  }
  s.psnr /= static_cast<double>(pairs.size());
  s.ssim /= static_cast<double>(pairs.size());
  return s;
}

namespace detail {

struct TermAccumulator {
  double total = 0, lp = 0, ls = 0, lsl1 = 0, tv = 0, mse = 0, dif = 0, self_sim = 0;
  std::size_t n = 0;

  template <typename T>
  void add(const Tensor<T>& loss, const LossTerms<T>& t) {
    total += static_cast<double>(loss.item());
    lp += static_cast<double>(t.perceptual.item());
    ls += static_cast<double>(t.ssim.item());
    lsl1 += static_cast<double>(t.smooth_l1.item());
    if (t.tv.defined()) tv += static_cast<double>(t.tv.item());
    if (t.mse.defined()) mse += static_cast<double>(t.mse.item());
    if (t.dif.defined()) dif += static_cast<double>(t.dif.item());
    if (t.self_sim.defined()) self_sim += static_cast<double>(t.self_sim.item());
    ++n;
  }

  void fill(EpochRecord& r, bool has_tv, bool has_mse, bool has_video) const {
    const double d = n ? static_cast<double>(n) : 1.0;
    r.loss = total / d;
    r.perceptual = lp / d;
    r.ssim_term = ls / d;
    r.smooth_l1 = lsl1 / d;
    r.tv = has_tv ? tv / d : NAN;
    r.mse = has_mse ? mse / d : NAN;
    r.dif = has_video ? dif / d : NAN;
    r.self_sim = has_video ? self_sim / d : NAN;
  }
};

template <typename T>
void finish_epoch(const Model<T>& model, EpochRecord& rec, const ImageScores& scores, bool validated,
                  TrainingLog& log, const TrainOptions& opts) {
  if (validated) {
    rec.psnr = scores.psnr;
    rec.ssim = scores.ssim;
    if (rec.psnr > log.best_psnr) {
      log.best_psnr = rec.psnr;
      log.best_epoch = rec.epoch;
      if (opts.checkpoint) save_checkpoint(model, *opts.checkpoint);
    }
  } else {
    rec.psnr = NAN;
    rec.ssim = NAN;
  }
  log.epochs.push_back(rec);
  if (opts.log) *opts.log << format_epoch(rec) << '\n' << std::flush;
}

template <typename T>
bool is_last_epoch(const TrainConfig& cfg, std::size_t epoch, std::size_t steps) {
  return epoch + 1 == cfg.total_epochs || (cfg.max_steps && steps >= cfg.max_steps);
}

template <typename T>
void require_trainable(const Tensor<T>& img, const std::string& name) {
  if (img.dim(1) < kMinTrainSide || img.dim(2) < kMinTrainSide)
    throw DimensionError("training image '" + name + "' is " + to_string(img.shape()) + "; both sides must be at least " +
                         std::to_string(kMinTrainSide));
}

}  // namespace detail

// Staged image training. Epochs [0, stage1_fraction * total) optimise the
// stage-1 objective, the rest stage 2. Validation runs full-size padded
// inference on `val` (or on `train` when `val` is empty).
template <typename T>
TrainingLog train_images(Model<T>& model, const std::vector<ImagePair<T>>& train,
                         const std::vector<ImagePair<T>>& val, const TrainConfig& cfg,
                         const FeatureExtractor<T>& extractor, const TrainOptions& opts = {}) {
  cfg.validate();
  if (train.empty()) throw UsageError("train_images: empty dataset");
  for (const auto& p : train) detail::require_trainable(p.low, p.name);
  const auto& validation = val.empty() ? train : val;
  Rng rng(cfg.seed);
  Adam<T> adam;
  TrainingLog log;
  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 0; epoch < cfg.total_epochs; ++epoch) {
    const Stage stage = cfg.stage_for_epoch(epoch);
    const double lr = lr_at_epoch(cfg, epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

    detail::TermAccumulator acc;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      if (cfg.max_steps && log.steps >= cfg.max_steps) break;
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const T scale = T(1) / static_cast<T>(end - start);
      for (std::size_t s = start; s < end; ++s) {
        const auto& pair = train[order[s]];
        const auto [low, high] = random_crop_pair(pair.low, pair.high, std::min(cfg.crop_h, pair.low.dim(1)) / 4 * 4,
                                                  std::min(cfg.crop_w, pair.low.dim(2)) / 4 * 4, rng);
        LossTerms<T> terms;
        const Tensor<T> loss = image_loss(model.forward(low), high, stage, extractor, cfg.loss, &terms);
        acc.add(loss, terms);
        backward(scalar_mul(loss, scale));
      }
      adam.step(model.params(), lr);
      ++log.steps;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.stage = stage;
    rec.steps = log.steps;
    acc.fill(rec, stage == Stage::stage1, stage == Stage::stage2, false);
    const bool last = detail::is_last_epoch<T>(cfg, epoch, log.steps);
    const bool validate = last || (epoch + 1) % cfg.validate_every == 0;
    detail::finish_epoch(model, rec, validate ? evaluate_pairs(model, validation) : ImageScores{}, validate, log,
                         opts);
    if (last) break;
  }
  return log;
}

// Video training on adjacent frame pairs. Both frames pass through the same
// parameters and one random window is shared by all four frames.
template <typename T>
TrainingLog train_video(Model<T>& model, const std::vector<FramePair<T>>& train, const TrainConfig& cfg,
                        const FeatureExtractor<T>& extractor, const TrainOptions& opts = {}) {
  cfg.validate();
  if (train.empty()) throw UsageError("train_video: empty dataset");
  for (const auto& fp : train) {
    if (!fp.low_k.defined() || !fp.low_k1.defined() || !fp.high_k.defined() || !fp.high_k1.defined()) {
      throw UsageError("train_video: sample '" + fp.name + "' is not a complete frame pair");
    }
    require_same_shape(fp.low_k, fp.low_k1, "train_video");
    require_same_shape(fp.low_k, fp.high_k, "train_video");
    require_same_shape(fp.high_k, fp.high_k1, "train_video");
  }
  std::vector<ImagePair<T>> frames;
  for (const auto& fp : train) {
    detail::require_trainable(fp.low_k, fp.name);
    frames.push_back({fp.low_k, fp.high_k, fp.name + "#k"});
    frames.push_back({fp.low_k1, fp.high_k1, fp.name + "#k1"});
  }
  Rng rng(cfg.seed);
  Adam<T> adam;
  TrainingLog log;
  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 0; epoch < cfg.total_epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

    detail::TermAccumulator acc;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      if (cfg.max_steps && log.steps >= cfg.max_steps) break;
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const T scale = T(1) / static_cast<T>(end - start);
      for (std::size_t s = start; s < end; ++s) {
        const auto& fp = train[order[s]];
        const CropWindow win =
            random_crop_window(fp.low_k.dim(1), fp.low_k.dim(2), std::min(cfg.crop_h, fp.low_k.dim(1)) / 4 * 4,
                               std::min(cfg.crop_w, fp.low_k.dim(2)) / 4 * 4, rng);
        LossTerms<T> terms;
        const Tensor<T> loss =
            video_loss(model.forward(apply_crop(fp.low_k, win)), model.forward(apply_crop(fp.low_k1, win)),
                       apply_crop(fp.high_k, win), apply_crop(fp.high_k1, win), extractor, cfg.loss, &terms);
        acc.add(loss, terms);
        backward(scalar_mul(loss, scale));
      }
      adam.step(model.params(), lr);
      ++log.steps;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.stage = Stage::video;
    rec.steps = log.steps;
    acc.fill(rec, true, false, true);
    const bool last = detail::is_last_epoch<T>(cfg, epoch, log.steps);
    const bool validate = last || (epoch + 1) % cfg.validate_every == 0;
    detail::finish_epoch(model, rec, validate ? evaluate_pairs(model, frames) : ImageScores{}, validate, log, opts);
    if (last) break;
  }
  return log;
}

}  // namespace urcsa
