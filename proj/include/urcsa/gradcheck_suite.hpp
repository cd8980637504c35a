#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "urcsa/gradcheck.hpp"
#include "urcsa/losses.hpp"
#include "urcsa/network.hpp"

// Finite-difference checks over every module and the assembled network, in
// double precision. Shared by the CLI `gradcheck` command and the acceptance
// binary.
namespace urcsa {

struct GradCheckSuiteOptions {
  std::uint64_t seed = 0;
  std::size_t channels = 4;  // feature width C
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t n_blocks = 3;
  std::size_t network_stride = 1;  // 1 = every network parameter
  bool include_network = true;
};

struct GradCheckEntry {
  std::string name;
  GradCheckResult result;
  double threshold = 0.0;
  double seconds = 0.0;
  bool passed() const { return result.max_rel_error < threshold; }
};

inline constexpr double kModuleThreshold = 1e-5;
inline constexpr double kNetworkThreshold = 1e-4;

namespace detail {

inline TensorD uniform_tensor(const Shape& shape, Rng& rng, double lo, double hi) {
  TensorD t(shape);
  for (auto& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

inline std::vector<TensorD> with_params(TensorD x, const ParameterSet<double>& params, const std::string& prefix = "") {
  std::vector<TensorD> out{std::move(x)};
  for (const auto& p : params.params())
    if (p.name.rfind(prefix, 0) == 0) out.push_back(p.value);
  return out;
}

// Non-zero fusion gates so both fusion branches carry gradient.
inline void randomize_gates(ParameterSet<double>& params, Rng& rng) {
  for (auto& p : params.params())
    if (p.name.find("lambda") != std::string::npos)
      for (auto& v : p.value.mutable_data()) v = rng.uniform(-1, 1);
}

}  // namespace detail

inline std::vector<GradCheckEntry> run_gradcheck_suite(const GradCheckSuiteOptions& o,
                                                       const std::function<void(const GradCheckEntry&)>& on_entry = {}) {
  std::vector<GradCheckEntry> out;
  const std::size_t c = o.channels, h = o.height, w = o.width;
  Rng rng(o.seed);
  const auto record = [&](const std::string& name, double threshold, const std::function<GradCheckResult()>& run) {
    const auto t0 = std::chrono::steady_clock::now();
    GradCheckEntry e{name, run(), threshold, 0.0};
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_entry) on_entry(e);
    out.push_back(std::move(e));
  };

  for (BranchMode mode : {BranchMode::both, BranchMode::avg_only, BranchMode::max_only}) {
    ParameterSet<double> params;
    const RcsaParams<double> p = RcsaParams<double>::create(params, "rcsa", c, c, mode, rng);
    detail::randomize_gates(params, rng);
    TensorD f = detail::uniform_tensor({c, h, w}, rng, -1, 1);
    const TensorD residual = detail::uniform_tensor({c, h, w}, rng, -1, 1);
    const TensorD target = detail::uniform_tensor({c, h, w}, rng, -1, 1);
    record(std::string("rcsa[") + to_string(mode) + "]", kModuleThreshold, [&] {
      return grad_check_tensors<double>([&] { return sum(mul(rcsa_forward(f, p, residual), target)); },
                                        detail::with_params(f, params), kModuleGradCheck);
    });
  }

  for (bool improved : {true, false}) {
    ParameterSet<double> params;
    const UnetParams<double> p = UnetParams<double>::create(params, "unet", UnetConfig{c, c, c, improved}, rng);
    TensorD x = detail::uniform_tensor({c, h, w}, rng, -1, 1);
    const TensorD target = detail::uniform_tensor({c, h, w}, rng, -1, 1);
    record(improved ? "unet[improved]" : "unet[plain]", kModuleThreshold, [&] {
      return grad_check_tensors<double>([&] { return sum(mul(unet_forward(x, p), target)); },
                                        detail::with_params(x, params), kModuleGradCheck);
    });
  }

  for (Ordering ordering : {Ordering::u_rcsa, Ordering::rcsa_u}) {
    ModelConfig cfg;
    cfg.base_channels = c;
    cfg.n_blocks = 1;
    cfg.ordering = ordering;
    cfg.seed = o.seed + 1;
    Model<double> m(cfg);
    detail::randomize_gates(m.params(), rng);
    TensorD x = detail::uniform_tensor({c, h, w}, rng, -1, 1);
    const TensorD target = detail::uniform_tensor({c, h, w}, rng, -1, 1);
    record(std::string("block[") + to_string(ordering) + "]", kModuleThreshold, [&] {
      return grad_check_tensors<double>([&] { return sum(mul(m.block_forward(x), target)); },
                                        detail::with_params(x, m.params(), "block."), kModuleGradCheck);
    });
  }

  {
    const FeatureExtractor<double> fe({8, 16}, o.seed + 2);
    const std::size_t lh = std::max<std::size_t>(h, 12), lw = std::max<std::size_t>(w, 12);
    // Noisy diagonal ramp: keeps the TV products away from their kink at 0.
    TensorD x = detail::uniform_tensor({3, lh, lw}, rng, 0, 0.02);
    auto xd = x.mutable_data();
    for (std::size_t i = 0; i < xd.size(); ++i) xd[i] += 0.5 * static_cast<double>(i / lw % lh + i % lw) / (lh + lw);
    const TensorD g = detail::uniform_tensor({3, lh, lw}, rng, 0, 1);
    const TensorD x1 = detail::uniform_tensor({3, lh, lw}, rng, 0, 1);
    const TensorD g1 = detail::uniform_tensor({3, lh, lw}, rng, 0, 1);
    record("loss[stage1]", kModuleThreshold, [&] {
      return grad_check_tensors<double>([&] { return image_loss(x, g, Stage::stage1, fe); }, {x}, kLossGradCheck);
    });
    record("loss[stage2]", kModuleThreshold, [&] {
      return grad_check_tensors<double>([&] { return image_loss(x, g, Stage::stage2, fe); }, {x}, kLossGradCheck);
    });
    record("loss[video]", kModuleThreshold, [&] {
      return grad_check_tensors<double>([&] { return video_loss(x, x1, g, g1, fe); }, {x}, kLossGradCheck);
    });
  }

  if (o.include_network) {
    for (Ordering ordering : {Ordering::u_rcsa, Ordering::rcsa_u}) {
      ModelConfig cfg;
      cfg.base_channels = c;
      cfg.n_blocks = o.n_blocks;
      cfg.ordering = ordering;
      cfg.seed = o.seed + 3;
      Model<double> m(cfg);
      detail::randomize_gates(m.params(), rng);
      TensorD x = detail::uniform_tensor({3, h, w}, rng, 0, 1);
      const TensorD target = detail::uniform_tensor({3, h, w}, rng, -1, 1);
      GradCheckOptions opts = kNetworkGradCheck;
      opts.stride = o.network_stride;
      record(std::string("network[") + to_string(ordering) + "]", kNetworkThreshold, [&] {
        return grad_check_tensors<double>([&] { return sum(mul(m.forward(x), target)); },
                                          detail::with_params(x, m.params()), opts);
      });
    }
  }
  return out;
}

}  // namespace urcsa
