#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "urcsa/tensor.hpp"

namespace urcsa {

struct GradCheckOptions {
  double eps = 1e-4;
  std::size_t stride = 1;
  double abs_floor = 1e-8;  // denominator floor
  // Optional extra floor as a fraction of the largest analytic gradient
  // magnitude. Deep graphs have entries many orders below the gradient scale
  // where central differences are limited by round-off; this compares those
  // in absolute terms relative to the scale.
  double floor_ratio = 0.0;
  // Drop samples where the +eps or -eps evaluation takes a different branch
  // at any ReLU, abs or max than the unperturbed one. Across a kink the
  // central difference is not an estimate of the gradient.
  bool skip_kinks = true;
};

// Presets for multi-tensor checks. Gradients of individual parameters span
// many orders of magnitude and the smallest are round-off limited at any
// step, so the denominator is floored at 1e-5 of the largest one. Kink
// skipping makes the default 1e-4 step usable through the ReLU and max paths.
// The losses use 1e-5: sqrt(|p| + 1e-8) in the TV term is sharply curved.
inline constexpr GradCheckOptions kModuleGradCheck{.eps = 1e-4, .stride = 1, .abs_floor = 1e-8, .floor_ratio = 1e-5};
inline constexpr GradCheckOptions kNetworkGradCheck = kModuleGradCheck;
inline constexpr GradCheckOptions kLossGradCheck{.eps = 1e-5, .stride = 1, .abs_floor = 1e-8, .floor_ratio = 1e-5};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double gradient_scale = 0.0;  // max |analytic| over checked entries
  std::size_t checked = 0;
  std::size_t skipped = 0;  // samples straddling a kink
};

// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// Compares reverse-mode gradients of a scalar loss against central
// differences for every `stride`-th element of each tensor in `wrt`. The
// tensors are perturbed in place and restored; `loss_fn` must read them.
template <typename T>
GradCheckResult grad_check_tensors(const std::function<Tensor<T>()>& loss_fn, std::vector<Tensor<T>> wrt,
                                   const GradCheckOptions& opts = {}) {
  std::vector<bool> previously(wrt.size());
  for (std::size_t t = 0; t < wrt.size(); ++t) {
    previously[t] = wrt[t].requires_grad();
    wrt[t].set_requires_grad(true);
    wrt[t].clear_grad();
  }
  backward(loss_fn());

  auto& trace = detail::branch_trace();
  const auto traced = [&](double& value) {
    trace.active = opts.skip_kinks;
    trace.hash = detail::BranchTrace{}.hash;
    value = static_cast<double>(loss_fn().item());
    trace.active = false;
    return trace.hash;
  };
  double base_value = 0.0;
  std::uint64_t base_hash = 0;
  {
    NoGradGuard guard;
    base_hash = traced(base_value);
  }
  std::size_t skipped = 0;

  struct Sample {
    std::size_t tensor, index;
    double analytic, numeric;
  };
  std::vector<Sample> samples;
  const std::size_t stride = std::max<std::size_t>(opts.stride, 1);
  for (std::size_t t = 0; t < wrt.size(); ++t) {
    std::vector<T> analytic(wrt[t].numel(), T(0));
    if (wrt[t].has_grad()) std::copy(wrt[t].grad().begin(), wrt[t].grad().end(), analytic.begin());
    auto values = wrt[t].mutable_data();
    for (std::size_t i = 0; i < values.size(); i += stride) {
      const T original = values[i];
      double plus, minus;
      bool crossed;
      {
        NoGradGuard guard;
        values[i] = original + static_cast<T>(opts.eps);
        crossed = traced(plus) != base_hash;
        values[i] = original - static_cast<T>(opts.eps);
        crossed = (traced(minus) != base_hash) || crossed;
      }
      values[i] = original;
      if (opts.skip_kinks && crossed) {
        ++skipped;
        continue;
      }
      samples.push_back({t, i, static_cast<double>(analytic[i]), (plus - minus) / (2.0 * opts.eps)});
    }
  }
  for (std::size_t t = 0; t < wrt.size(); ++t) {
    wrt[t].clear_grad();
    wrt[t].set_requires_grad(previously[t]);
  }

  GradCheckResult result;
  result.skipped = skipped;
  for (const auto& s : samples) result.gradient_scale = std::max(result.gradient_scale, std::abs(s.analytic));
  const double floor = std::max(opts.floor_ratio * result.gradient_scale, opts.abs_floor);
  for (const auto& s : samples) {
    const double err = relative_error(s.analytic, s.numeric, floor);
    ++result.checked;
    if (err > result.max_rel_error || result.checked == 1) {
      result.max_rel_error = err;
      result.worst_tensor = s.tensor;
      result.worst_index = s.index;
      result.analytic = s.analytic;
      result.numeric = s.numeric;
    }
  }
  return result;
}

// Max relative error between the analytic gradient of f at x and central
// differences.
template <typename T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x,
                  const GradCheckOptions& opts = {}) {
  Tensor<T> probe = x.clone();
  return grad_check_tensors<T>([&] { return f(probe); }, {probe}, opts).max_rel_error;
}

}  // namespace urcsa
