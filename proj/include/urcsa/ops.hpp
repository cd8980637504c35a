#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "urcsa/linalg.hpp"
#include "urcsa/tensor.hpp"

// Differentiable tensor operations. Every op validates shapes eagerly and
// records a backward closure only when an input requires a gradient.
namespace urcsa {

namespace detail {

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

enum class Broadcast { none, a_scalar, b_scalar };

template <typename T>
Broadcast check_binary(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::none;
  if (a.numel() == 1) return Broadcast::a_scalar;
  if (b.numel() == 1) return Broadcast::b_scalar;
  throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                       to_string(b.shape()));
}

// Elementwise binary op with scalar broadcast. `da`/`db` return the partial
// derivative of the output w.r.t. each operand given (a, b, y).
template <typename T, typename Fwd, typename Da, typename Db>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* op, Fwd fwd, Da da, Db db) {
  const Broadcast mode = check_binary(a, b, op);
  const Shape shape = mode == Broadcast::a_scalar ? b.shape() : a.shape();
  const std::size_t n = numel(shape);
  const bool sa = mode == Broadcast::a_scalar;
  const bool sb = mode == Broadcast::b_scalar;
  std::vector<T> out(n);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ad[sa ? 0 : i], bd[sb ? 0 : i]);
  return make_result<T>(shape, std::move(out), {a.impl(), b.impl()}, op,
                        [sa, sb, da, db](TensorImpl<T>& self) {
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          const std::size_t n = self.data.size();
                          if (pa.requires_grad) {
                            auto& g = pa.ensure_grad();
                            for (std::size_t i = 0; i < n; ++i) {
                              const T av = pa.data[sa ? 0 : i], bv = pb.data[sb ? 0 : i];
                              g[sa ? 0 : i] += self.grad[i] * da(av, bv, self.data[i]);
                            }
                          }
                          if (pb.requires_grad) {
                            auto& g = pb.ensure_grad();
                            for (std::size_t i = 0; i < n; ++i) {
                              const T av = pa.data[sa ? 0 : i], bv = pb.data[sb ? 0 : i];
                              g[sb ? 0 : i] += self.grad[i] * db(av, bv, self.data[i]);
                            }
                          }
                        });
}

// Elementwise unary op; `d` returns dy/dx given (x, y).
template <typename T, typename Fwd, typename D>
Tensor<T> unary_op(const Tensor<T>& x, const char* op, Fwd fwd, D d) {
  const auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = fwd(xd[i]);
  return make_result<T>(x.shape(), std::move(out), {x.impl()}, op, [d](TensorImpl<T>& self) {
    auto& px = *self.parents[0];
    auto& g = px.ensure_grad();
    for (std::size_t i = 0; i < self.data.size(); ++i) g[i] += self.grad[i] * d(px.data[i], self.data[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
      [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, "div", [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T x, T y, T) { return -x / (y * y); });
}

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& x, T s) {
  return detail::unary_op(
      x, "scalar_mul", [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary_op(
      x, "add_scalar", [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary_op(
      x, "sigmoid",
      [](T v) {
        // Split on sign so exp never overflows.
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

namespace detail {
template <typename T, typename Pred>
void trace_branches(const Tensor<T>& x, Pred pred) {
  auto& trace = branch_trace();
  if (!trace.active) return;
  for (T v : x.data()) trace.mix(static_cast<std::uint64_t>(pred(v)));
}

inline void trace_indices(const std::vector<std::size_t>& idx) {
  auto& trace = branch_trace();
  if (!trace.active) return;
  for (std::size_t i : idx) trace.mix(i);
}
}  // namespace detail

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  detail::trace_branches(x, [](T v) { return v > T(0); });
  return detail::unary_op(
      x, "leaky_relu", [slope](T v) { return v > T(0) ? v : v * slope; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  detail::trace_branches(x, [](T v) { return v > T(0) ? 1 : (v < T(0) ? 2 : 0); });
  return detail::unary_op(
      x, "abs", [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return detail::unary_op(
      x, "sqrt", [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary_op(
      x, "square", [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

// Huber-style smooth L1 with unit threshold.
template <typename T>
Tensor<T> smooth_l1(const Tensor<T>& d) {
  detail::trace_branches(d, [](T v) { return v >= T(1) ? 1 : (v <= T(-1) ? 2 : 0); });
  return detail::unary_op(
      d, "smooth_l1",
      [](T v) {
        const T a = std::abs(v);
        return a < T(1) ? T(0.5) * v * v : a - T(0.5);
      },
      [](T v, T) { return std::abs(v) < T(1) ? v : (v > T(0) ? T(1) : T(-1)); });
}

enum class OpKind { add, sub, mul, scalar_mul, sigmoid, leaky_relu };

// Uniform entry point over the basic elementwise kinds. `param` is the scalar
// for scalar_mul and the slope for leaky_relu.
template <typename T>
Tensor<T> elementwise(OpKind kind, const Tensor<T>& a, const Tensor<T>& b = {}, T param = T(0)) {
  const auto need_b = [&] {
    if (!b.defined()) throw UsageError("binary elementwise op requires a second operand");
  };
  switch (kind) {
    case OpKind::add: need_b(); return add(a, b);
    case OpKind::sub: need_b(); return sub(a, b);
    case OpKind::mul: need_b(); return mul(a, b);
    case OpKind::scalar_mul: return scalar_mul(a, param);
    case OpKind::sigmoid: return sigmoid(a);
    case OpKind::leaky_relu: return leaky_relu(a, param);
  }
  throw UsageError("unknown elementwise op");
}

// ----------------------------------------------------------------- reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  return detail::make_result<T>(Shape{1}, {acc}, {x.impl()}, "sum", [](detail::TensorImpl<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    const T gv = self.grad[0];
    for (auto& v : g) v += gv;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  const T n = static_cast<T>(x.numel());
  T acc = T(0);
  for (T v : x.data()) acc += v;
  return detail::make_result<T>(Shape{1}, {acc / n}, {x.impl()}, "mean",
                                [n](detail::TensorImpl<T>& self) {
                                  auto& g = self.parents[0]->ensure_grad();
                                  const T gv = self.grad[0] / n;
                                  for (auto& v : g) v += gv;
                                });
}

enum class ReduceKind { mean, max };

// Reduces one axis, keeping it with size 1. Max ties go to the first element
// in scan order.
template <typename T>
Tensor<T> reduce(const Tensor<T>& x, std::size_t axis, ReduceKind kind) {
  if (axis >= x.ndim()) {
    throw DimensionError("reduce: axis " + std::to_string(axis) + " out of range for " +
                         to_string(x.shape()));
  }
  const Shape& s = x.shape();
  const std::size_t len = s[axis];
  if (len == 0) throw DimensionError("reduce: empty axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[axis] = 1;
  std::vector<T> out(outer * inner);
  const auto xd = x.data();

  if (kind == ReduceKind::mean) {
    const T inv = T(1) / static_cast<T>(len);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) {
        T acc = T(0);
        for (std::size_t k = 0; k < len; ++k) acc += xd[(o * len + k) * inner + i];
        out[o * inner + i] = acc * inv;
      }
    return detail::make_result<T>(out_shape, std::move(out), {x.impl()}, "reduce_mean",
                                  [outer, inner, len, inv](detail::TensorImpl<T>& self) {
                                    auto& g = self.parents[0]->ensure_grad();
                                    for (std::size_t o = 0; o < outer; ++o)
                                      for (std::size_t i = 0; i < inner; ++i) {
                                        const T gv = self.grad[o * inner + i] * inv;
                                        for (std::size_t k = 0; k < len; ++k)
                                          g[(o * len + k) * inner + i] += gv;
                                      }
                                  });
  }

  std::vector<std::size_t> argmax(outer * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      std::size_t best = o * len * inner + i;
      for (std::size_t k = 1; k < len; ++k) {
        const std::size_t idx = (o * len + k) * inner + i;
        if (xd[idx] > xd[best]) best = idx;
      }
      argmax[o * inner + i] = best;
      out[o * inner + i] = xd[best];
    }
  detail::trace_indices(argmax);
  return detail::make_result<T>(out_shape, std::move(out), {x.impl()}, "reduce_max",
                                [argmax = std::move(argmax)](detail::TensorImpl<T>& self) {
                                  auto& g = self.parents[0]->ensure_grad();
                                  for (std::size_t j = 0; j < argmax.size(); ++j) g[argmax[j]] += self.grad[j];
                                });
}

// Softmax over the last axis, max-subtracted.
template <typename T>
Tensor<T> softmax_last(const Tensor<T>& x) {
  const std::size_t len = x.shape().back();
  const std::size_t rows = len ? x.numel() / len : 0;
  const auto xd = x.data();
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xd.data() + r * len;
    T* o = out.data() + r * len;
    const T peak = *std::max_element(in, in + len);
    T total = T(0);
    for (std::size_t k = 0; k < len; ++k) total += (o[k] = std::exp(in[k] - peak));
    for (std::size_t k = 0; k < len; ++k) o[k] /= total;
  }
  return detail::make_result<T>(x.shape(), std::move(out), {x.impl()}, "softmax",
                                [rows, len](detail::TensorImpl<T>& self) {
                                  auto& g = self.parents[0]->ensure_grad();
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    const T* y = self.data.data() + r * len;
                                    const T* gy = self.grad.data() + r * len;
                                    T dot = T(0);
                                    for (std::size_t k = 0; k < len; ++k) dot += gy[k] * y[k];
                                    for (std::size_t k = 0; k < len; ++k) g[r * len + k] += y[k] * (gy[k] - dot);
                                  }
                                });
}

// -------------------------------------------------------------- linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + to_string(a.shape()) + " by " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  linalg::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
  return detail::make_result<T>(Shape{m, n}, std::move(out), {a.impl(), b.impl()}, "matmul",
                                [m, n, k](detail::TensorImpl<T>& self) {
                                  auto& pa = *self.parents[0];
                                  auto& pb = *self.parents[1];
                                  // dA = dC * B^T, dB = A^T * dC
                                  if (pa.requires_grad)
                                    linalg::gemm_nt(m, k, n, self.grad.data(), pb.data.data(), pa.ensure_grad().data());
                                  if (pb.requires_grad)
                                    linalg::gemm_tn(k, n, m, pa.data.data(), self.grad.data(), pb.ensure_grad().data());
                                });
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x) {
  if (x.ndim() != 2) throw DimensionError("transpose2d: expected 2-D tensor, got " + to_string(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(r * c);
  linalg::transpose(r, c, x.data().data(), out.data());
  return detail::make_result<T>(Shape{c, r}, std::move(out), {x.impl()}, "transpose",
                                [r, c](detail::TensorImpl<T>& self) {
                                  auto& g = self.parents[0]->ensure_grad();
                                  for (std::size_t i = 0; i < r; ++i)
                                    for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
                                });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + to_string(x.shape()) + " to " + to_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return detail::make_result<T>(std::move(shape), std::move(out), {x.impl()}, "reshape",
                                [](detail::TensorImpl<T>& self) {
                                  auto& g = self.parents[0]->ensure_grad();
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                });
}

// ------------------------------------------------------- channel-major images

namespace detail {
template <typename T>
void require_chw(const Tensor<T>& x, const char* op) {
  if (!x.defined() || x.ndim() != 3) {
    throw DimensionError(std::string(op) + ": expected CxHxW tensor, got " +
                         (x.defined() ? to_string(x.shape()) : std::string("<undefined>")));
  }
}
}  // namespace detail

// Channels of `a` precede channels of `b`. An undefined or zero-channel `b`
// returns `a` unchanged.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (!b.defined() || b.numel() == 0) return a;
  if (!a.defined() || a.numel() == 0) return b;
  detail::require_chw(a, "concat_channels");
  detail::require_chw(b, "concat_channels");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
    throw DimensionError("concat_channels: spatial mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
  const std::size_t na = a.numel();
  std::vector<T> out;
  out.reserve(na + b.numel());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  return detail::make_result<T>(Shape{a.dim(0) + b.dim(0), a.dim(1), a.dim(2)}, std::move(out),
                                {a.impl(), b.impl()}, "concat", [na](detail::TensorImpl<T>& self) {
                                  auto& pa = *self.parents[0];
                                  auto& pb = *self.parents[1];
                                  if (pa.requires_grad) {
                                    auto& g = pa.ensure_grad();
                                    for (std::size_t i = 0; i < na; ++i) g[i] += self.grad[i];
                                  }
                                  if (pb.requires_grad) {
                                    auto& g = pb.ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[na + i];
                                  }
                                });
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  detail::require_chw(x, "slice_channels");
  if (begin + count > x.dim(0) || count == 0) {
    throw DimensionError("slice_channels: range [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") invalid for " + to_string(x.shape()));
  }
  const std::size_t plane = x.dim(1) * x.dim(2);
  const std::size_t offset = begin * plane;
  std::vector<T> out(x.data().begin() + offset, x.data().begin() + offset + count * plane);
  return detail::make_result<T>(Shape{count, x.dim(1), x.dim(2)}, std::move(out), {x.impl()},
                                "slice_channels", [offset](detail::TensorImpl<T>& self) {
                                  auto& g = self.parents[0]->ensure_grad();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i) g[offset + i] += self.grad[i];
                                });
}

// Spatial window [top, top+h) x [left, left+w) of every channel.
template <typename T>
Tensor<T> crop2d(const Tensor<T>& x, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  detail::require_chw(x, "crop2d");
  const std::size_t c = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (top + h > H || left + w > W || h == 0 || w == 0) {
    throw DimensionError("crop2d: window out of bounds for " + to_string(x.shape()));
  }
  std::vector<T> out(c * h * w);
  const auto xd = x.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h; ++i)
      std::copy_n(xd.begin() + (ch * H + top + i) * W + left, w, out.begin() + (ch * h + i) * w);
  return detail::make_result<T>(Shape{c, h, w}, std::move(out), {x.impl()}, "crop2d",
                                [c, H, W, top, left, h, w](detail::TensorImpl<T>& self) {
                                  auto& g = self.parents[0]->ensure_grad();
                                  for (std::size_t ch = 0; ch < c; ++ch)
                                    for (std::size_t i = 0; i < h; ++i)
                                      for (std::size_t j = 0; j < w; ++j)
                                        g[(ch * H + top + i) * W + left + j] += self.grad[(ch * h + i) * w + j];
                                });
}

// Per-channel outer product: rows [C x H], cols [C x W] -> [C x H x W].
template <typename T>
Tensor<T> channel_outer(const Tensor<T>& rows, const Tensor<T>& cols) {
  if (rows.ndim() != 2 || cols.ndim() != 2 || rows.dim(0) != cols.dim(0)) {
    throw DimensionError("channel_outer: expected [C x H] and [C x W], got " + to_string(rows.shape()) +
                         " and " + to_string(cols.shape()));
  }
  const std::size_t c = rows.dim(0), h = rows.dim(1), w = cols.dim(1);
  std::vector<T> out(c * h * w);
  const auto r = rows.data();
  const auto q = cols.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) out[(ch * h + i) * w + j] = r[ch * h + i] * q[ch * w + j];
  return detail::make_result<T>(Shape{c, h, w}, std::move(out), {rows.impl(), cols.impl()}, "channel_outer",
                                [c, h, w](detail::TensorImpl<T>& self) {
                                  auto& pr = *self.parents[0];
                                  auto& pc = *self.parents[1];
                                  if (pr.requires_grad) {
                                    auto& g = pr.ensure_grad();
                                    for (std::size_t ch = 0; ch < c; ++ch)
                                      for (std::size_t i = 0; i < h; ++i) {
                                        T acc = T(0);
                                        for (std::size_t j = 0; j < w; ++j)
                                          acc += self.grad[(ch * h + i) * w + j] * pc.data[ch * w + j];
                                        g[ch * h + i] += acc;
                                      }
                                  }
                                  if (pc.requires_grad) {
                                    auto& g = pc.ensure_grad();
                                    for (std::size_t ch = 0; ch < c; ++ch)
                                      for (std::size_t i = 0; i < h; ++i) {
                                        const T rv = pr.data[ch * h + i];
                                        for (std::size_t j = 0; j < w; ++j)
                                          g[ch * w + j] += self.grad[(ch * h + i) * w + j] * rv;
                                      }
                                  }
                                });
}

// Multiplies every plane of x [C x H x W] by the matching entry of s [C].
template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& s) {
  detail::require_chw(x, "channel_scale");
  if (s.numel() != x.dim(0)) {
    throw DimensionError("channel_scale: " + std::to_string(s.numel()) + " scales for " +
                         std::to_string(x.dim(0)) + " channels");
  }
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  const auto sd = s.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < plane; ++p) out[ch * plane + p] = xd[ch * plane + p] * sd[ch];
  return detail::make_result<T>(x.shape(), std::move(out), {x.impl(), s.impl()}, "channel_scale",
                                [c, plane](detail::TensorImpl<T>& self) {
                                  auto& px = *self.parents[0];
                                  auto& ps = *self.parents[1];
                                  if (px.requires_grad) {
                                    auto& g = px.ensure_grad();
                                    for (std::size_t ch = 0; ch < c; ++ch)
                                      for (std::size_t p = 0; p < plane; ++p)
                                        g[ch * plane + p] += self.grad[ch * plane + p] * ps.data[ch];
                                  }
                                  if (ps.requires_grad) {
                                    auto& g = ps.ensure_grad();
                                    for (std::size_t ch = 0; ch < c; ++ch) {
                                      T acc = T(0);
                                      for (std::size_t p = 0; p < plane; ++p)
                                        acc += self.grad[ch * plane + p] * px.data[ch * plane + p];
                                      g[ch] += acc;
                                    }
                                  }
                                });
}

// Fixed-weight channel combination [C x H x W] -> [1 x H x W].
template <typename T>
Tensor<T> weighted_channel_sum(const Tensor<T>& x, std::span<const T> weights) {
  detail::require_chw(x, "weighted_channel_sum");
  if (weights.size() != x.dim(0)) {
    throw DimensionError("weighted_channel_sum: " + std::to_string(weights.size()) + " weights for " +
                         std::to_string(x.dim(0)) + " channels");
  }
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  std::vector<T> w(weights.begin(), weights.end());
  std::vector<T> out(plane, T(0));
  const auto xd = x.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < plane; ++p) out[p] += w[ch] * xd[ch * plane + p];
  return detail::make_result<T>(Shape{1, x.dim(1), x.dim(2)}, std::move(out), {x.impl()},
                                "weighted_channel_sum", [c, plane, w](detail::TensorImpl<T>& self) {
                                  auto& g = self.parents[0]->ensure_grad();
                                  for (std::size_t ch = 0; ch < c; ++ch)
                                    for (std::size_t p = 0; p < plane; ++p) g[ch * plane + p] += w[ch] * self.grad[p];
                                });
}

}  // namespace urcsa
