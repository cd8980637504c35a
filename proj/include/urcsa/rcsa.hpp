#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "urcsa/ops.hpp"
#include "urcsa/param.hpp"

// Row-Column Separated Attention.
//
// The input feature map F [C x H x W] is summarised by per-row and per-column
// mean and max statistics. Each of the four statistic maps is treated as a
// short token sequence (H row tokens or W column tokens, C features each) and
// passed through its own single-head self-attention. The row and column
// results of each statistic are recombined into a full-resolution map by a
// per-channel outer product, and the mean and max maps are mixed with a
// learned per-channel gate a = sigmoid(lambda), b = 1 - a.
namespace urcsa {

enum class BranchMode { both, avg_only, max_only };

inline const char* to_string(BranchMode m) {
  switch (m) {
    case BranchMode::both: return "both";
    case BranchMode::avg_only: return "avg_only";
    case BranchMode::max_only: return "max_only";
  }
  return "?";
}

inline BranchMode parse_branch_mode(const std::string& s) {
  if (s == "both") return BranchMode::both;
  if (s == "avg_only") return BranchMode::avg_only;
  if (s == "max_only") return BranchMode::max_only;
  throw ConfigError("unknown rcsa_branch '" + s + "' (expected both, avg_only or max_only)");
}

inline bool uses_avg(BranchMode m) { return m != BranchMode::max_only; }
inline bool uses_max(BranchMode m) { return m != BranchMode::avg_only; }

// Query/key/value projections of one attention branch, each [C x C].
template <typename T>
struct AttentionBranch {
  Tensor<T> wq, wk, wv;

  static AttentionBranch create(ParameterSet<T>& params, const std::string& name, std::size_t c, Rng& rng) {
    AttentionBranch b{params.add(name + ".wq", Shape{c, c}), params.add(name + ".wk", Shape{c, c}),
                      params.add(name + ".wv", Shape{c, c})};
    init_uniform(b.wq, c, rng);
    init_uniform(b.wk, c, rng);
    init_uniform(b.wv, c, rng);
    return b;
  }
};

enum Branch : std::size_t { kRowAvg = 0, kRowMax = 1, kColAvg = 2, kColMax = 3 };

template <typename T>
struct RcsaParams {
  std::size_t channels = 0;  // width of the fused map
  BranchMode mode = BranchMode::both;
  std::array<std::optional<AttentionBranch<T>>, 4> branches;
  Tensor<T> lambda;  // [channels], only in BranchMode::both
  Conv<T> out_proj;  // 1x1, channels -> out_channels

  static RcsaParams create(ParameterSet<T>& params, const std::string& name, std::size_t channels,
                           std::size_t out_channels, BranchMode mode, Rng& rng) {
    RcsaParams p;
    p.channels = channels;
    p.mode = mode;
    static constexpr const char* names[4] = {"row_avg", "row_max", "col_avg", "col_max"};
    for (std::size_t b = 0; b < 4; ++b) {
      const bool is_avg = b == kRowAvg || b == kColAvg;
      if (is_avg ? uses_avg(mode) : uses_max(mode)) {
        p.branches[b] = AttentionBranch<T>::create(params, name + "." + names[b], channels, rng);
      }
    }
    if (mode == BranchMode::both) p.lambda = params.add(name + ".lambda", Shape{channels});
    p.out_proj = Conv<T>::create(params, name + ".out_proj", channels, out_channels, 1, 1, rng);
    return p;
  }

  // Closed-form parameter count: three C'xC' projections per active branch,
  // one lambda per fused channel when both statistics are used, and the 1x1
  // output projection.
  static constexpr std::size_t param_count(std::size_t channels, std::size_t out_channels, BranchMode mode) {
    const std::size_t branches = mode == BranchMode::both ? 4 : 2;
    return branches * 3 * channels * channels + (mode == BranchMode::both ? channels : 0) +
           conv_param_count(channels, out_channels, 1);
  }
};

template <typename T>
struct RowColStats {
  Tensor<T> fh_avg, fh_max;  // [C x H x 1]
  Tensor<T> fw_avg, fw_max;  // [C x 1 x W]

  std::size_t scalar_count() const {
    return fh_avg.numel() + fh_max.numel() + fw_avg.numel() + fw_max.numel();
  }
};

template <typename T>
RowColStats<T> row_col_stats(const Tensor<T>& f) {
  detail::require_chw(f, "row_col_stats");
  return {reduce(f, 2, ReduceKind::mean), reduce(f, 2, ReduceKind::max), reduce(f, 1, ReduceKind::mean),
          reduce(f, 1, ReduceKind::max)};
}

// Fraction of the dense map that enters the attention branches, 2/H + 2/W.
inline double attention_input_ratio(std::size_t h, std::size_t w) {
  return 2.0 / static_cast<double>(h) + 2.0 / static_cast<double>(w);
}

// Optional record of intermediate values for inspection and tests.
template <typename T>
struct RcsaTrace {
  std::vector<Tensor<T>> attention;  // [L x L] weight matrices, one per active branch
  Tensor<T> gate_a, gate_b;          // [channels]
  Tensor<T> avg_map, max_map, fused;
  std::size_t attention_input_scalars = 0;
};

// Single-head self-attention over the L tokens of x [C x L]:
// softmax(Q K^T / sqrt(C)) V with Q = x^T Wq, K = x^T Wk, V = x^T Wv.
template <typename T>
Tensor<T> branch_attention(const Tensor<T>& x, const AttentionBranch<T>& branch, Tensor<T>* weights_out = nullptr) {
  if (x.ndim() != 2 || x.dim(0) != branch.wq.dim(0)) {
    throw DimensionError("branch_attention: expected [" + std::to_string(branch.wq.dim(0)) + " x L], got " +
                         to_string(x.shape()));
  }
  const std::size_t c = x.dim(0);
  const Tensor<T> tokens = transpose2d(x);  // [L x C]
  const Tensor<T> q = matmul(tokens, branch.wq);
  const Tensor<T> k = matmul(tokens, branch.wk);
  const Tensor<T> v = matmul(tokens, branch.wv);
  const T scale = T(1) / std::sqrt(static_cast<T>(c));
  const Tensor<T> weights = softmax_last(scalar_mul(matmul(q, transpose2d(k)), scale));
  if (weights_out) *weights_out = weights;
  return transpose2d(matmul(weights, v));
}

namespace detail {

// Runs the row and column branches of one statistic and recombines them.
template <typename T>
Tensor<T> statistic_map(const Tensor<T>& rows, const Tensor<T>& cols, const AttentionBranch<T>& row_branch,
                        const AttentionBranch<T>& col_branch, RcsaTrace<T>* trace) {
  const std::size_t c = rows.dim(0), h = rows.dim(1), w = cols.dim(2);
  Tensor<T> wr, wc;
  const Tensor<T> ar = branch_attention(reshape(rows, Shape{c, h}), row_branch, &wr);
  const Tensor<T> ac = branch_attention(reshape(cols, Shape{c, w}), col_branch, &wc);
  if (trace) {
    trace->attention.push_back(wr);
    trace->attention.push_back(wc);
  }
  return channel_outer(ar, ac);
}

}  // namespace detail

// Fused attention map [channels x H x W] before the output projection.
template <typename T>
Tensor<T> rcsa_fuse(const Tensor<T>& f, const RcsaParams<T>& p, RcsaTrace<T>* trace = nullptr) {
  detail::require_chw(f, "rcsa");
  if (f.dim(0) != p.channels) {
    throw DimensionError("rcsa: expected " + std::to_string(p.channels) + " channels, got " + to_string(f.shape()));
  }
  const RowColStats<T> stats = row_col_stats(f);
  Tensor<T> avg_map, max_map;
  std::size_t scalars = 0;
  if (uses_avg(p.mode)) {
    avg_map = detail::statistic_map(stats.fh_avg, stats.fw_avg, *p.branches[kRowAvg], *p.branches[kColAvg], trace);
    scalars += stats.fh_avg.numel() + stats.fw_avg.numel();
  }
  if (uses_max(p.mode)) {
    max_map = detail::statistic_map(stats.fh_max, stats.fw_max, *p.branches[kRowMax], *p.branches[kColMax], trace);
    scalars += stats.fh_max.numel() + stats.fw_max.numel();
  }
  Tensor<T> fused;
  if (p.mode == BranchMode::both) {
    const Tensor<T> a = sigmoid(p.lambda);
    const Tensor<T> b = add_scalar(scalar_mul(a, T(-1)), T(1));
    fused = add(channel_scale(avg_map, a), channel_scale(max_map, b));
    if (trace) {
      trace->gate_a = a;
      trace->gate_b = b;
    }
  } else {
    fused = p.mode == BranchMode::avg_only ? avg_map : max_map;
  }
  if (trace) {
    trace->avg_map = avg_map;
    trace->max_map = max_map;
    trace->fused = fused;
    trace->attention_input_scalars = scalars;
  }
  return fused;
}

// Projected attention output, plus `residual` when one is supplied.
template <typename T>
Tensor<T> rcsa_forward(const Tensor<T>& f, const RcsaParams<T>& p, const Tensor<T>& residual = {},
                       RcsaTrace<T>* trace = nullptr) {
  Tensor<T> out = p.out_proj(rcsa_fuse(f, p, trace));
  return residual.defined() ? add(out, residual) : out;
}

}  // namespace urcsa
