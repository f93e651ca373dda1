#pragma once

#include <array>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rgbx/model_config.hpp"
#include "rgbx/nn/module.hpp"

namespace rgbx::encoder {

using nn::Tensor;

inline constexpr int kNumStages = 4;
// Input height and width must be multiples of the deepest stride.
inline constexpr int kMaxStride = 32;

struct StageSpec {
  int index;     // 1..4
  int stride;    // 2^(index + 1)
  int channels;
};

StageSpec stage_spec(int index, const std::array<int, 4>& channels);

// Stage i is (B, H / 2^(i+1), W / 2^(i+1), C_i), stored at position i-1.
using FeaturePyramid = std::array<Tensor, kNumStages>;

struct DecoupledFeatures {
  FeaturePyramid global_rgb;
  FeaturePyramid global_x;
  FeaturePyramid local_rgb;
  FeaturePyramid local_x;
};

// 1-channel X data is copied into three identical channels; 3-channel data
// passes through untouched.
Tensor replicate_x_channels(const Tensor& x);

// Miniature ConvNeXt: 4x4/4 patchify stem, then 2x2/2 downsampling between
// stages; each block is dw7x7 -> LN -> 1x1 (x4) -> GELU -> 1x1 + residual.
class Backbone {
 public:
  // Parameters are named under `prefix` and owned by this object.
  Backbone(std::mt19937_64& rng, const std::string& prefix, const ModelConfig& cfg);

  FeaturePyramid forward(const Tensor& image) const;
  const nn::ParamList& params() const { return params_; }

 private:
  struct Block {
    nn::Conv2d dwconv;
    nn::LayerNorm norm;
    nn::Conv2d expand;
    nn::Conv2d project;
  };
  struct Stage {
    std::optional<nn::LayerNorm> down_norm;
    nn::Conv2d down;  // stem conv for stage 1
    std::optional<nn::LayerNorm> stem_norm;
    std::vector<Block> blocks;
  };

  std::vector<Stage> stages_;
  nn::ParamList params_;
};

// Residual multi-head self-attention over spatial tokens followed by
// LayerNorm, with no positional encoding and no feed-forward layer:
//   G = LN(MHSA(F) + F)
class GlobalFeatureEnhancer {
 public:
  GlobalFeatureEnhancer(nn::ParamBuilder pb, int channels, int heads, double eps);

  Tensor forward(const Tensor& features) const;

  nn::Conv2d query, key, value;
  nn::LayerNorm norm;
  int heads;
};

// MobileNetV2 inverted residual:
//   L = Conv1x1(ReLU(DWConv3x3(ReLU(Conv1x1(F))))) + F
class LocalFeatureExtractor {
 public:
  LocalFeatureExtractor(nn::ParamBuilder pb, int channels, int expansion);

  Tensor forward(const Tensor& features) const;

  nn::Conv2d expand, dwconv, project;
};

// Shared (or, for ablation, duplicated) backbone feeding per-modality
// enhancer/extractor pairs with separate weights.
class HybridEncoder {
 public:
  HybridEncoder(nn::ParamList& sink, std::mt19937_64& rng, const ModelConfig& cfg);

  // rgb and x must both be (B, H, W, 3) with H, W multiples of 32.
  DecoupledFeatures forward(const Tensor& rgb, const Tensor& x) const;

  const Backbone& backbone_rgb() const { return *backbone_rgb_; }
  const Backbone& backbone_x() const { return *backbone_x_; }
  const std::vector<GlobalFeatureEnhancer>& gfe_rgb() const { return gfe_rgb_; }
  const std::vector<GlobalFeatureEnhancer>& gfe_x() const { return gfe_x_; }
  const std::vector<LocalFeatureExtractor>& lfe_rgb() const { return lfe_rgb_; }
  const std::vector<LocalFeatureExtractor>& lfe_x() const { return lfe_x_; }

 private:
  std::shared_ptr<Backbone> backbone_rgb_;
  std::shared_ptr<Backbone> backbone_x_;
  std::vector<GlobalFeatureEnhancer> gfe_rgb_, gfe_x_;
  std::vector<LocalFeatureExtractor> lfe_rgb_, lfe_x_;
};

void check_input_dims(const Tensor& image);

}  // namespace rgbx::encoder
