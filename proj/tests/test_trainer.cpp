#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "test_util.hpp"
#include "urcsa/trainer.hpp"

using namespace urcsa;
using test::random_tensor;

namespace {

ModelConfig tiny_model(std::uint64_t seed = 3) {
  ModelConfig cfg;
  cfg.base_channels = 4;
  cfg.n_blocks = 1;
  cfg.seed = seed;
  return cfg;
}

TrainConfig tiny_train(std::size_t epochs) {
  TrainConfig cfg;
  cfg.total_epochs = epochs;
  cfg.crop_h = cfg.crop_w = 12;
  cfg.initial_lr = 2e-3;
  cfg.seed = 11;
  return cfg;
}

// Smooth synthetic scene and a darkened copy.
template <typename T>
std::vector<ImagePair<T>> toy_pairs(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ImagePair<T>> out;
  for (std::size_t k = 0; k < n; ++k) {
    Tensor<T> high({3, h, w});
    const double a = rng.uniform(0.2, 0.8), fx = rng.uniform(0.1, 0.5), fy = rng.uniform(0.1, 0.5);
    auto d = high.mutable_data();
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
          d[(c * h + i) * w + j] = static_cast<T>(a + 0.2 * std::sin(fx * i + c) * std::cos(fy * j));
    out.push_back({scalar_mul(high, T(0.3)), high, "p" + std::to_string(k)});
  }
  return out;
}

const FeatureExtractor<double>& extractor_d() {
  static const FeatureExtractor<double> fe;
  return fe;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Gives `p` the gradient `g` via d/dp sum(p * g).
void set_grad(ParameterSet<double>& set, const std::vector<double>& g) {
  auto& p = set.params()[0].value;
  backward(sum(mul(p, TensorD(p.shape(), g))));
}

}  // namespace

TEST(Adam, MatchesScalarOracleOverTenSteps) {
  ParameterSet<double> set;
  TensorD p = set.add("w", {2});
  p.mutable_data()[0] = 0.5;
  p.mutable_data()[1] = -1.25;
  Adam<double> adam;
  double x[2] = {0.5, -1.25}, m[2] = {0, 0}, v[2] = {0, 0};
  const double lr = 0.01;
  for (int t = 1; t <= 10; ++t) {
    const std::vector<double> g = {std::sin(0.7 * t) + 0.1, 0.3 * t - 1.4};
    set_grad(set, g);
    adam.step(set, lr);
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      x[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(p[i], x[i], 1e-12) << "step " << t;
    }
    EXPECT_FALSE(p.has_grad());
    EXPECT_EQ(adam.steps(), static_cast<std::uint64_t>(t));
  }
  ASSERT_EQ(adam.first_moments().size(), 1u);
  EXPECT_EQ(adam.first_moments()[0].size(), p.numel());
  EXPECT_EQ(adam.second_moments()[0].size(), p.numel());
}

TEST(Adam, Examples) {
  ParameterSet<double> set;
  TensorD p = set.add("w", {3});
  Adam<double> adam;
  EXPECT_THROW(adam.step(set, 0.1), UsageError);
  set_grad(set, {0, 0, 0});
  adam.step(set, 0.1);
  test::expect_values(p, {0, 0, 0}, 0.0);
  Adam<double> fresh;
  set_grad(set, {3.0, -0.5, 1e-3});
  fresh.step(set, 0.01);
  test::expect_values(p, {-0.01, 0.01, -0.01}, 1e-7);
}

TEST(Schedule, Examples) {
  TrainConfig cfg;
  EXPECT_DOUBLE_EQ(lr_at_epoch(cfg, 0), 5e-4);
  EXPECT_NEAR(lr_at_epoch(cfg, 50), 5e-4 / 1.2, 1e-18);
  EXPECT_NEAR(lr_at_epoch(cfg, 50), 4.1667e-4, 1e-8);
  EXPECT_NEAR(lr_at_epoch(cfg, 100), 5e-4 / 1.44, 1e-18);
}

TEST(Schedule, PiecewiseConstantNonIncreasing) {
  TrainConfig cfg;
  cfg.decay_every = 7;
  for (std::size_t e = 1; e < 100; ++e) {
    const double prev = lr_at_epoch(cfg, e - 1), cur = lr_at_epoch(cfg, e);
    EXPECT_LE(cur, prev);
    if (e % 7 == 0) {
      EXPECT_NEAR(prev / cur, 1.2, 1e-12);
    } else {
      EXPECT_EQ(cur, prev);
    }
  }
}

TEST(TrainConfig, ValidationAndStageSplit) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  for (double f : {0.0, 1.0, -0.5}) {
    TrainConfig bad = cfg;
    bad.stage1_fraction = f;
    EXPECT_THROW(bad.validate(), ConfigError);
  }
  TrainConfig crop = cfg;
  crop.crop_w = 30;
  EXPECT_THROW(crop.validate(), ConfigError);
  crop.crop_w = 8;  // below the SSIM window
  EXPECT_THROW(crop.validate(), ConfigError);
  cfg.total_epochs = 6;
  for (std::size_t e = 0; e < 6; ++e) EXPECT_EQ(cfg.stage_for_epoch(e), e < 4 ? Stage::stage1 : Stage::stage2);
}

TEST(Crop, FullSizeIsIdentity) {
  Rng rng(1);
  const TensorD low = random_tensor({3, 8, 6}, rng), high = random_tensor({3, 8, 6}, rng);
  const auto [a, b] = random_crop_pair(low, high, 8, 6, rng);
  test::expect_values(a, std::vector<double>(low.data().begin(), low.data().end()), 0.0);
  test::expect_values(b, std::vector<double>(high.data().begin(), high.data().end()), 0.0);
}

TEST(Crop, SameWindowOnBothImages) {
  // Pixel value encodes its position, so the crop reveals its offset.
  TensorD low({3, 20, 24}), high({3, 20, 24});
  for (std::size_t i = 0; i < low.numel(); ++i) {
    low.mutable_data()[i] = static_cast<double>(i);
    high.mutable_data()[i] = 2.0 * static_cast<double>(i);
  }
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const auto [a, b] = random_crop_pair(low, high, 8, 12, rng);
    EXPECT_EQ(a.shape(), (Shape{3, 8, 12}));
    const auto top = static_cast<std::size_t>(a[0]) / 24, left = static_cast<std::size_t>(a[0]) % 24;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 12; ++j) {
          const double want = static_cast<double>((c * 20 + top + i) * 24 + left + j);
          ASSERT_EQ(a.at(c, i, j), want);
          ASSERT_EQ(b.at(c, i, j), 2 * want);
        }
  }
}

TEST(Crop, ReproducibleAndBounded) {
  Rng a(9), b(9);
  for (int i = 0; i < 50; ++i) {
    const CropWindow wa = random_crop_window(30, 17, 12, 8, a), wb = random_crop_window(30, 17, 12, 8, b);
    EXPECT_EQ(wa.top, wb.top);
    EXPECT_EQ(wa.left, wb.left);
    EXPECT_LE(wa.top + 12, 30u);
    EXPECT_LE(wa.left + 8, 17u);
  }
  EXPECT_THROW(random_crop_window(8, 8, 12, 8, a), DimensionError);
  EXPECT_THROW(random_crop_pair(TensorD({3, 8, 8}, 0.0), TensorD({3, 8, 8}, 0.0), 8, 12, a), DimensionError);
}

TEST(TrainImages, StageSwitchVisibleInLog) {
  Model<double> model(tiny_model());
  const auto data = toy_pairs<double>(2, 12, 12, 1);
  std::ostringstream log;
  const TrainingLog result = train_images(model, data, {}, tiny_train(3), extractor_d(), {&log, {}});
  ASSERT_EQ(result.epochs.size(), 3u);
  std::istringstream lines(log.str());
  std::string line;
  std::vector<std::string> all;
  while (std::getline(lines, line)) all.push_back(line);
  ASSERT_EQ(all.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(all[e].rfind("epoch=" + std::to_string(e) + " lr=", 0), 0u) << all[e];
    for (const char* key : {" loss=", " psnr=", " ssim=", " lp=", " ls=", " lsl1="})
      EXPECT_NE(all[e].find(key), std::string::npos) << all[e];
  }
  // total 3, fraction 2/3: epochs 0-1 stage 1, epoch 2 stage 2.
  for (std::size_t e = 0; e < 2; ++e) {
    EXPECT_NE(all[e].find("stage=1"), std::string::npos);
    EXPECT_NE(all[e].find(" ltv="), std::string::npos);
    EXPECT_EQ(all[e].find(" lmse="), std::string::npos);
  }
  EXPECT_NE(all[2].find("stage=2"), std::string::npos);
  EXPECT_NE(all[2].find(" lmse="), std::string::npos);
  EXPECT_EQ(all[2].find(" ltv="), std::string::npos);
  EXPECT_EQ(result.epochs[2].stage, Stage::stage2);
  EXPECT_TRUE(std::isnan(result.epochs[2].tv));
}

TEST(TrainImages, LossDecreasesOnToySet) {
  Model<double> model(tiny_model());
  const auto data = toy_pairs<double>(4, 16, 16, 2);
  TrainConfig cfg = tiny_train(12);
  cfg.crop_h = cfg.crop_w = 16;
  const TrainingLog log = train_images(model, data, {}, cfg, extractor_d());
  EXPECT_LT(log.epochs[1].loss, log.epochs[0].loss);
  EXPECT_LT(log.epochs[7].loss, log.epochs[0].loss);
  EXPECT_EQ(log.steps, 48u);
  EXPECT_EQ(log.epochs.back().steps, 48u);
}

TEST(TrainImages, CheckpointAtBestValidation) {
  test::TempDir dir("trainer_ckpt");
  Model<double> model(tiny_model());
  const auto train = toy_pairs<double>(2, 12, 12, 3), val = toy_pairs<double>(1, 12, 16, 4);
  TrainOptions opts;
  opts.checkpoint = dir.path() / "best.ckpt";
  const TrainingLog log = train_images(model, train, val, tiny_train(4), extractor_d(), opts);
  ASSERT_TRUE(std::filesystem::exists(*opts.checkpoint));
  double best = -1;
  for (const auto& r : log.epochs) best = std::max(best, r.psnr);
  EXPECT_EQ(log.best_psnr, best);
  EXPECT_EQ(log.epochs[log.best_epoch].psnr, best);
  const Model<double> restored = load_checkpoint<double>(*opts.checkpoint);
  EXPECT_NEAR(evaluate_pairs(restored, val).psnr, best, 1e-4);  // checkpoints store float32
}

TEST(TrainImages, StepBudgetAndValidationCadence) {
  Model<double> model(tiny_model());
  const auto data = toy_pairs<double>(3, 12, 12, 5);
  TrainConfig cfg = tiny_train(100);
  cfg.max_steps = 7;
  cfg.validate_every = 2;
  cfg.batch_size = 2;
  const TrainingLog log = train_images(model, data, {}, cfg, extractor_d());
  EXPECT_EQ(log.steps, 7u);
  ASSERT_EQ(log.epochs.size(), 4u);  // 2 steps per epoch
  EXPECT_TRUE(std::isnan(log.epochs[0].psnr));
  EXPECT_FALSE(std::isnan(log.epochs[1].psnr));
  EXPECT_FALSE(std::isnan(log.epochs[3].psnr));  // last epoch always validates
}

TEST(TrainImages, Errors) {
  Model<double> model(tiny_model());
  EXPECT_THROW(train_images(model, {}, {}, tiny_train(1), extractor_d()), UsageError);
  TrainConfig bad = tiny_train(1);
  bad.batch_size = 0;
  EXPECT_THROW(train_images(model, toy_pairs<double>(1, 12, 12, 1), {}, bad, extractor_d()), ConfigError);
  EXPECT_THROW(train_images(model, toy_pairs<double>(1, 8, 16, 1), {}, tiny_train(1), extractor_d()), DimensionError);
}

TEST(TrainImages, DeterministicAtSinglePrecision) {
  test::TempDir dir("trainer_det");
  const FeatureExtractor<float> fe;
  const auto data = toy_pairs<float>(2, 16, 16, 6);
  std::string logs[2];
  for (int run = 0; run < 2; ++run) {
    Model<float> model(tiny_model(21));
    std::ostringstream os;
    TrainOptions opts{&os, dir.path() / ("run" + std::to_string(run) + ".ckpt")};
    train_images(model, data, {}, tiny_train(3), fe, opts);
    logs[run] = os.str();
  }
  EXPECT_EQ(logs[0], logs[1]);
  const std::string a = slurp(dir.path() / "run0.ckpt"), b = slurp(dir.path() / "run1.ckpt");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, b);
}

namespace {

std::vector<FramePair<double>> flicker_clip(std::size_t h, std::size_t w, double flicker) {
  const auto base = toy_pairs<double>(1, h, w, 8)[0];
  FramePair<double> fp;
  fp.low_k = base.low;
  fp.low_k1 = add_scalar(base.low.clone(), flicker);
  fp.high_k = base.high;
  fp.high_k1 = base.high;
  fp.name = "clip";
  return {fp};
}

}  // namespace

TEST(TrainVideo, ZeroTemporalWeightsMatchImageTraining) {
  const auto clip = flicker_clip(12, 12, 0.05);
  TrainConfig cfg = tiny_train(3);
  cfg.stage1_fraction = 0.99;  // image run stays in stage 1
  cfg.loss.alpha = cfg.loss.beta = 0.0;
  Model<double> video_model(tiny_model()), image_model(tiny_model());
  const TrainingLog vl = train_video(video_model, clip, cfg, extractor_d());
  // The clip's two frames as one batch of two: same averaged gradient.
  TrainConfig icfg = cfg;
  icfg.batch_size = 2;
  const std::vector<ImagePair<double>> frames = {{clip[0].low_k, clip[0].high_k, "k"},
                                                 {clip[0].low_k1, clip[0].high_k1, "k1"}};
  const TrainingLog il = train_images(image_model, frames, {}, icfg, extractor_d());
  ASSERT_EQ(vl.epochs.size(), il.epochs.size());
  for (std::size_t e = 0; e < vl.epochs.size(); ++e) {
    EXPECT_NEAR(vl.epochs[e].loss, il.epochs[e].loss, 1e-10) << e;
    EXPECT_NEAR(vl.epochs[e].psnr, il.epochs[e].psnr, 1e-8) << e;
  }
  const auto& pv = video_model.params().params();
  const auto& pi = image_model.params().params();
  for (std::size_t i = 0; i < pv.size(); ++i)
    for (std::size_t j = 0; j < pv[i].value.numel(); ++j) ASSERT_NEAR(pv[i].value[j], pi[i].value[j], 1e-10);
}

TEST(TrainVideo, StaticClipHasZeroTemporalTerms) {
  auto clip = flicker_clip(12, 12, 0.0);
  Model<double> model(tiny_model());
  std::ostringstream os;
  const TrainingLog log = train_video(model, clip, tiny_train(2), extractor_d(), {&os, {}});
  for (const auto& r : log.epochs) {
    EXPECT_EQ(r.stage, Stage::video);
    EXPECT_EQ(r.dif, 0.0);
    EXPECT_EQ(r.self_sim, 0.0);
    EXPECT_GE(r.perceptual, 0.0);
    EXPECT_GE(r.tv, 0.0);
  }
  EXPECT_NE(os.str().find("stage=video"), std::string::npos);
  EXPECT_NE(os.str().find(" ldif=0 lself=0"), std::string::npos) << os.str();
}

TEST(TrainVideo, FlickerTermsLoggedAndDecrease) {
  const auto clip = flicker_clip(16, 16, 0.15);
  Model<double> model(tiny_model());
  TrainConfig cfg = tiny_train(10);
  cfg.crop_h = cfg.crop_w = 16;
  const TrainingLog log = train_video(model, clip, cfg, extractor_d());
  for (const auto& r : log.epochs) {
    EXPECT_GT(r.dif, 0.0);
    EXPECT_GE(r.self_sim, 0.0);
  }
  EXPECT_LT(log.epochs.back().loss, log.epochs.front().loss);
}

TEST(TrainVideo, RejectsUnpairedFrames) {
  Model<double> model(tiny_model());
  auto clip = flicker_clip(12, 12, 0.1);
  auto missing = clip;
  missing[0].high_k1 = TensorD();
  EXPECT_THROW(train_video(model, missing, tiny_train(1), extractor_d()), UsageError);
  auto ragged = clip;
  ragged[0].low_k1 = TensorD({3, 12, 16}, 0.1);
  EXPECT_THROW(train_video(model, ragged, tiny_train(1), extractor_d()), DimensionError);
  EXPECT_THROW(train_video(model, {}, tiny_train(1), extractor_d()), UsageError);
}
