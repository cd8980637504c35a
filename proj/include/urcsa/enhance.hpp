#pragma once

#include "urcsa/image.hpp"
#include "urcsa/network.hpp"

namespace urcsa {

// Inference on an image of any size: reflect-pad to a multiple of 4, run the
// network without recording a graph, crop back and clamp to [0, 1].
template <typename T>
Tensor<T> enhance(const Model<T>& model, const Tensor<T>& img) {
  NoGradGuard guard;
  const PaddedImage<T> padded = pad_to_multiple(img, 4);
  return clamp01(crop_to(model.forward(padded.image), padded.height, padded.width));
}

}  // namespace urcsa
