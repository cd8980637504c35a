#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "urcsa/linalg.hpp"
#include "urcsa/ops.hpp"

// Spatial operators on single images laid out as [C x H x W].
namespace urcsa {

inline std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

namespace detail {

// cols[(c*k + ky)*k + kx][oy*ow + ox] = x[c][oy*s + ky - p][ox*s + kx - p], zero outside.
template <typename T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t oh, std::size_t ow, T* cols) {
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = cols + ((ch * k + ky) * k + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          T* dst = row + oy * ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          const T* src = x + (ch * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? T(0) : src[ix];
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t oh, std::size_t ow, T* x) {
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = cols + ((ch * k + ky) * k + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = x + (ch * h + static_cast<std::size_t>(iy)) * w;
          const T* src = row + oy * ow;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace detail

// 2-D cross-correlation with explicit zero padding. `bias` may be undefined.
// weight: [C_out x C_in x k x k].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride = 1,
                 std::size_t pad = 0) {
  detail::require_chw(x, "conv2d");
  if (weight.ndim() != 4 || weight.dim(2) != weight.dim(3)) {
    throw DimensionError("conv2d: weight must be [Cout x Cin x k x k], got " + to_string(weight.shape()));
  }
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin) {
    throw DimensionError("conv2d: weight expects " + std::to_string(weight.dim(1)) + " input channels, got " +
                         std::to_string(cin));
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  if (k > h + 2 * pad || k > w + 2 * pad) {
    throw DimensionError("conv2d: kernel " + std::to_string(k) + " larger than padded input " + to_string(x.shape()));
  }
  if (bias.defined() && bias.numel() != cout) {
    throw DimensionError("conv2d: bias has " + std::to_string(bias.numel()) + " entries for " +
                         std::to_string(cout) + " outputs");
  }
  const std::size_t oh = conv_output_size(h, k, stride, pad);
  const std::size_t ow = conv_output_size(w, k, stride, pad);
  const std::size_t ksize = cin * k * k, opix = oh * ow;
  const bool direct = k == 1 && stride == 1 && pad == 0;

  std::vector<T> cols;
  if (!direct) {
    cols.resize(ksize * opix);
    detail::im2col(x.data().data(), cin, h, w, k, stride, pad, oh, ow, cols.data());
  }
  const T* colp = direct ? x.data().data() : cols.data();

  std::vector<T> out(cout * opix, T(0));
  if (bias.defined()) {
    const auto bd = bias.data();
    for (std::size_t o = 0; o < cout; ++o) std::fill_n(out.begin() + o * opix, opix, bd[o]);
  }
  linalg::gemm_nn(cout, opix, ksize, weight.data().data(), colp, out.data());

  std::vector<detail::ImplPtr<T>> inputs{x.impl(), weight.impl()};
  if (bias.defined()) inputs.push_back(bias.impl());
  // Columns are only needed for the weight gradient.
  if (!weight.requires_grad() || !grad_enabled()) cols.clear();

  return detail::make_result<T>(
      Shape{cout, oh, ow}, std::move(out), std::move(inputs), "conv2d",
      [cin, h, w, cout, k, stride, pad, oh, ow, ksize, opix, direct,
       cols = std::move(cols)](detail::TensorImpl<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        const T* gout = self.grad.data();
        if (pw.requires_grad) {
          const T* colp = direct ? px.data.data() : cols.data();
          linalg::gemm_nt(cout, ksize, opix, gout, colp, pw.ensure_grad().data());
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
          auto& gb = self.parents[2]->ensure_grad();
          for (std::size_t o = 0; o < cout; ++o) {
            T acc = T(0);
            for (std::size_t p = 0; p < opix; ++p) acc += gout[o * opix + p];
            gb[o] += acc;
          }
        }
        if (px.requires_grad) {
          auto& gx = px.ensure_grad();
          if (direct) {
            linalg::gemm_tn(ksize, opix, cout, pw.data.data(), gout, gx.data());
          } else {
            std::vector<T> dcols(ksize * opix, T(0));
            linalg::gemm_tn(ksize, opix, cout, pw.data.data(), gout, dcols.data());
            detail::col2im(dcols.data(), cin, h, w, k, stride, pad, oh, ow, gx.data());
          }
        }
      });
}

// Max pooling; trailing rows/cols that do not fill a window are dropped.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t k = 2, std::size_t stride = 2) {
  detail::require_chw(x, "maxpool2d");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h < k || w < k) throw DimensionError("maxpool2d: input " + to_string(x.shape()) + " smaller than window");
  const std::size_t oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
  std::vector<T> out(c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const auto xd = x.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (ch * h + oy * stride) * w + ox * stride;
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::size_t idx = (ch * h + oy * stride + ky) * w + ox * stride + kx;
            if (xd[idx] > xd[best]) best = idx;
          }
        const std::size_t o = (ch * oh + oy) * ow + ox;
        argmax[o] = best;
        out[o] = xd[best];
      }
  detail::trace_indices(argmax);
  return detail::make_result<T>(Shape{c, oh, ow}, std::move(out), {x.impl()}, "maxpool2d",
                                [argmax = std::move(argmax)](detail::TensorImpl<T>& self) {
                                  auto& g = self.parents[0]->ensure_grad();
                                  for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
                                });
}

// Nearest-neighbour 2x upsampling.
template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  detail::require_chw(x, "upsample2x");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = 2 * h, ow = 2 * w;
  std::vector<T> out(c * oh * ow);
  const auto xd = x.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) out[(ch * oh + y) * ow + xx] = xd[(ch * h + y / 2) * w + xx / 2];
  return detail::make_result<T>(Shape{c, oh, ow}, std::move(out), {x.impl()}, "upsample2x",
                                [c, h, w, oh, ow](detail::TensorImpl<T>& self) {
                                  auto& g = self.parents[0]->ensure_grad();
                                  for (std::size_t ch = 0; ch < c; ++ch)
                                    for (std::size_t y = 0; y < oh; ++y)
                                      for (std::size_t xx = 0; xx < ow; ++xx)
                                        g[(ch * h + y / 2) * w + xx / 2] += self.grad[(ch * oh + y) * ow + xx];
                                });
}

// Depthwise separable filter, valid region only: the same 1-D kernel is
// applied along W and then along H on every channel.
template <typename T>
Tensor<T> separable_filter_valid(const Tensor<T>& x, std::span<const T> kernel) {
  detail::require_chw(x, "separable_filter_valid");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), k = kernel.size();
  if (k == 0 || h < k || w < k) {
    throw DimensionError("separable_filter_valid: image " + to_string(x.shape()) + " smaller than " +
                         std::to_string(k) + "-tap window");
  }
  const std::size_t oh = h - k + 1, ow = w - k + 1;
  std::vector<T> taps(kernel.begin(), kernel.end());
  std::vector<T> tmp(c * h * ow, T(0));
  std::vector<T> out(c * oh * ow, T(0));
  const auto xd = x.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      const T* src = xd.data() + (ch * h + y) * w;
      T* dst = tmp.data() + (ch * h + y) * ow;
      for (std::size_t t = 0; t < k; ++t)
        for (std::size_t j = 0; j < ow; ++j) dst[j] += taps[t] * src[j + t];
    }
    for (std::size_t y = 0; y < oh; ++y) {
      T* dst = out.data() + (ch * oh + y) * ow;
      for (std::size_t t = 0; t < k; ++t) {
        const T* src = tmp.data() + (ch * h + y + t) * ow;
        for (std::size_t j = 0; j < ow; ++j) dst[j] += taps[t] * src[j];
      }
    }
  }
  return detail::make_result<T>(Shape{c, oh, ow}, std::move(out), {x.impl()}, "separable_filter",
                                [c, h, w, k, oh, ow, taps](detail::TensorImpl<T>& self) {
                                  auto& g = self.parents[0]->ensure_grad();
                                  std::vector<T> gtmp(h * ow);
                                  for (std::size_t ch = 0; ch < c; ++ch) {
                                    std::fill(gtmp.begin(), gtmp.end(), T(0));
                                    for (std::size_t y = 0; y < oh; ++y) {
                                      const T* gy = self.grad.data() + (ch * oh + y) * ow;
                                      for (std::size_t t = 0; t < k; ++t) {
                                        T* dst = gtmp.data() + (y + t) * ow;
                                        for (std::size_t j = 0; j < ow; ++j) dst[j] += taps[t] * gy[j];
                                      }
                                    }
                                    for (std::size_t y = 0; y < h; ++y) {
                                      const T* src = gtmp.data() + y * ow;
                                      T* dst = g.data() + (ch * h + y) * w;
                                      for (std::size_t t = 0; t < k; ++t)
                                        for (std::size_t j = 0; j < ow; ++j) dst[j + t] += taps[t] * src[j];
                                    }
                                  }
                                });
}

}  // namespace urcsa
