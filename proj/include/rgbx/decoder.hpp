#pragma once

#include <random>
#include <span>
#include <vector>

#include "rgbx/fusion.hpp"
#include "rgbx/nn/module.hpp"

namespace rgbx::decoder {

using nn::Tensor;

inline constexpr int kIgnoreId = 255;

// FPN-style head: lateral 1x1 convs to a common width (C_1), top-down
// nearest-neighbour upsample-and-add, 3x3 smoothing conv + ReLU, 1x1
// classifier at stride 4, bilinear x4 upsample to input resolution.
class SegmentationHead {
 public:
  SegmentationHead(nn::ParamList& sink, std::mt19937_64& rng, const std::array<int, 4>& channels,
                   int num_classes);

  // Returns (B, H, W, K) logits where H, W = 4 * stage-1 size.
  Tensor forward(const fusion::FusedPyramid& fused) const;

  std::vector<nn::Conv2d> lateral;
  nn::Conv2d smooth;
  nn::Conv2d classifier;
};

// Mean per-pixel negative log-softmax, skipping kIgnoreId labels.
Tensor cross_entropy_loss(const Tensor& logits, std::span<const int> labels);

// Per-pixel argmax over classes; ties resolve to the lowest class id.
std::vector<int> argmax_classes(const Tensor& logits);

}  // namespace rgbx::decoder
