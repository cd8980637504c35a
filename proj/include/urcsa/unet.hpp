#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "urcsa/conv.hpp"
#include "urcsa/param.hpp"

// Two-level encoder/decoder. Widths double per level (c, 2c, 4c).
//
// The improved variant adds, at each decoder level, an additive residual from
// the matching encoder output onto the upsampled features, and concatenates a
// re-extracted copy of the encoder output (an extra conv) instead of the raw
// encoder output. The plain variant concatenates upsampled and raw encoder
// features. Both recover the level width with a 1x1 conv after the decoder
// conv block.
namespace urcsa {

struct UnetConfig {
  std::size_t in_channels = 32;
  std::size_t out_channels = 32;
  std::size_t base_channels = 32;
  bool improved = true;
};

template <typename T>
struct UnetParams {
  UnetConfig config;
  ConvBlock<T> enc0, enc1, enc2;
  Conv<T> down0, down1;  // stride-2 3x3
  Conv<T> up1, up0;      // 3x3 after nearest 2x upsampling
  std::optional<Conv<T>> reextract1, reextract0;
  ConvBlock<T> dec1, dec0;
  Conv<T> recover1, recover0;  // 1x1

  static UnetParams create(ParameterSet<T>& params, const std::string& name, const UnetConfig& cfg, Rng& rng) {
    const std::size_t c0 = cfg.base_channels, c1 = 2 * c0, c2 = 4 * c0;
    UnetParams u;
    u.config = cfg;
    u.enc0 = ConvBlock<T>::create(params, name + ".enc0", cfg.in_channels, c0, rng);
    u.down0 = Conv<T>::create(params, name + ".down0", c0, c1, 3, 2, rng);
    u.enc1 = ConvBlock<T>::create(params, name + ".enc1", c1, c1, rng);
    u.down1 = Conv<T>::create(params, name + ".down1", c1, c2, 3, 2, rng);
    u.enc2 = ConvBlock<T>::create(params, name + ".enc2", c2, c2, rng);
    u.up1 = Conv<T>::create(params, name + ".up1", c2, c1, 3, 1, rng);
    if (cfg.improved) u.reextract1 = Conv<T>::create(params, name + ".reextract1", c1, c1, 3, 1, rng);
    u.dec1 = ConvBlock<T>::create(params, name + ".dec1", 2 * c1, 2 * c1, rng);
    u.recover1 = Conv<T>::create(params, name + ".recover1", 2 * c1, c1, 1, 1, rng);
    u.up0 = Conv<T>::create(params, name + ".up0", c1, c0, 3, 1, rng);
    if (cfg.improved) u.reextract0 = Conv<T>::create(params, name + ".reextract0", c0, c0, 3, 1, rng);
    u.dec0 = ConvBlock<T>::create(params, name + ".dec0", 2 * c0, 2 * c0, rng);
    u.recover0 = Conv<T>::create(params, name + ".recover0", 2 * c0, cfg.out_channels, 1, 1, rng);
    return u;
  }

  static constexpr std::size_t param_count(const UnetConfig& cfg) {
    const std::size_t c0 = cfg.base_channels, c1 = 2 * c0, c2 = 4 * c0;
    std::size_t n = ConvBlock<T>::param_count(cfg.in_channels, c0) + conv_param_count(c0, c1, 3) +
                    ConvBlock<T>::param_count(c1, c1) + conv_param_count(c1, c2, 3) +
                    ConvBlock<T>::param_count(c2, c2) + conv_param_count(c2, c1, 3) +
                    ConvBlock<T>::param_count(2 * c1, 2 * c1) + conv_param_count(2 * c1, c1, 1) +
                    conv_param_count(c1, c0, 3) + ConvBlock<T>::param_count(2 * c0, 2 * c0) +
                    conv_param_count(2 * c0, cfg.out_channels, 1);
    if (cfg.improved) n += reextract_param_count(cfg.base_channels);
    return n;
  }

  // Parameters that the improved variant adds over the plain one.
  static constexpr std::size_t reextract_param_count(std::size_t base) {
    return conv_param_count(2 * base, 2 * base, 3) + conv_param_count(base, base, 3);
  }
};

namespace detail {

template <typename T>
Tensor<T> decoder_level(const Tensor<T>& deep, const Tensor<T>& skip, const Conv<T>& up,
                        const std::optional<Conv<T>>& reextract, const ConvBlock<T>& block, const Conv<T>& recover) {
  const T slope = static_cast<T>(kLeakySlope);
  Tensor<T> upsampled = leaky_relu(up(upsample2x(deep)), slope);
  Tensor<T> merged;
  if (reextract) {
    merged = concat_channels(add(upsampled, skip), leaky_relu((*reextract)(skip), slope));
  } else {
    merged = concat_channels(upsampled, skip);
  }
  return recover(block(merged));
}

}  // namespace detail

template <typename T>
Tensor<T> unet_forward(const Tensor<T>& x, const UnetParams<T>& p) {
  detail::require_chw(x, "unet_forward");
  if (x.dim(1) % 4 != 0 || x.dim(2) % 4 != 0) {
    throw DimensionError("unet_forward: spatial size " + to_string(x.shape()) + " not divisible by 4");
  }
  if (x.dim(0) != p.config.in_channels) {
    throw DimensionError("unet_forward: expected " + std::to_string(p.config.in_channels) + " channels, got " +
                         std::to_string(x.dim(0)));
  }
  const T slope = static_cast<T>(kLeakySlope);
  const Tensor<T> e0 = p.enc0(x);
  const Tensor<T> e1 = p.enc1(leaky_relu(p.down0(e0), slope));
  const Tensor<T> e2 = p.enc2(leaky_relu(p.down1(e1), slope));
  const Tensor<T> d1 = detail::decoder_level(e2, e1, p.up1, p.reextract1, p.dec1, p.recover1);
  return detail::decoder_level(d1, e0, p.up0, p.reextract0, p.dec0, p.recover0);
}

}  // namespace urcsa
