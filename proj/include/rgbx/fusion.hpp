#pragma once

#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "rgbx/encoder.hpp"
#include "rgbx/model_config.hpp"
#include "rgbx/nn/module.hpp"

namespace rgbx::fusion {

using nn::Tensor;
using FusedPyramid = encoder::FeaturePyramid;

// Global feature recalibration: bidirectional cross-attention gated by the
// learnable scalars kappa/gamma, concat-reduce-normalize, then a
// squeeze-style channel gate.
class GlobalRecalibration {
 public:
  GlobalRecalibration(nn::ParamBuilder pb, int channels, double eps);

  // G_R' = Softmax(Q_R K_X^T) * kappa * V_R + G_R
  // G_X' = Softmax(Q_X K_R^T) * gamma * V_X + G_X
  std::pair<Tensor, Tensor> cross_attend(const Tensor& g_rgb, const Tensor& g_x) const;
  // F_C = LN(ReLU(Conv1x1_{2C->C}([G_R', G_X'])))
  Tensor fuse(const Tensor& g_rgb, const Tensor& g_x) const;
  // F_G = F_C * sigmoid(Conv1x1(spatial_mean(F_C))) + F_C
  Tensor channel_attend(const Tensor& f_c) const;

  Tensor forward(const Tensor& g_rgb, const Tensor& g_x) const;

  nn::Conv2d query_rgb, key_rgb, value_rgb;
  nn::Conv2d query_x, key_x, value_x;
  nn::ParamPtr kappa, gamma;
  nn::Conv2d reduce;
  nn::LayerNorm norm;
  nn::Conv2d channel_gate;
};

// Legacy-style global fusion stand-in for ablations: concat, 1x1 reduce,
// residual single-head self-attention, LayerNorm.
class ConcatAttentionFusion {
 public:
  ConcatAttentionFusion(nn::ParamBuilder pb, int channels, double eps);
  Tensor forward(const Tensor& g_rgb, const Tensor& g_x) const;

  nn::Conv2d reduce, query, key, value;
  nn::LayerNorm norm;
};

// Local feature fusion:
//   H = DWConv3x3(Conv1x1_{2C->4C}([L_R, L_X]));  H -> (H_M, H_N)
//   F_L = Conv1x1_{2C->C}(H_M * GELU(H_N))
// With duplicate_instead_of_expand the 1x1 expansion is replaced by stacking
// the concatenation twice.
class LocalFeatureFusion {
 public:
  LocalFeatureFusion(nn::ParamBuilder pb, int channels, int expanded_channels, bool duplicate_instead_of_expand);
  Tensor forward(const Tensor& l_rgb, const Tensor& l_x) const;

  std::optional<nn::Conv2d> expand;
  nn::Conv2d dwconv;
  nn::Conv2d project;
  int channels;
};

// Feature enhancement and integration (coordinate-style axis gating):
//   S = F_G + F_L
//   Z_h = mean over width, Z_w = mean over height (as a column)
//   Z = sigmoid(Conv1x1([Z_h; Z_w]))  (concatenated along space)
//   F_F = S * Z_h_hat * Z_w_hat
// With independent_axes the two descriptors get separate convolutions.
class FeatureIntegration {
 public:
  FeatureIntegration(nn::ParamBuilder pb, int channels, bool independent_axes);

  // Exposed for tests: the two axis gates for an already-summed map, shaped
  // (B, h, 1, C) and (B, 1, w, C).
  std::pair<Tensor, Tensor> axis_gates(const Tensor& summed) const;
  Tensor forward(const Tensor& f_g, const Tensor& f_l) const;

  nn::Conv2d gate;                   // shared conv over [Z_h; Z_w]
  std::optional<nn::Conv2d> gate_w;  // only with independent_axes
};

// Channel-gate-only integration stand-in for ablations:
//   S * sigmoid(Conv1x1(spatial_mean(S))), S = F_G + F_L
class ChannelRecalibration {
 public:
  ChannelRecalibration(nn::ParamBuilder pb, int channels);
  Tensor forward(const Tensor& f_g, const Tensor& f_l) const;

  nn::Conv2d gate;
};

// One stage of the fusion block; the configured variants decide which
// submodules exist.
class FusionStage {
 public:
  FusionStage(nn::ParamBuilder pb, int channels, const ModelConfig& cfg);

  Tensor forward(const Tensor& g_rgb, const Tensor& g_x, const Tensor& l_rgb, const Tensor& l_x) const;

  std::optional<GlobalRecalibration> gfrm;
  std::optional<ConcatAttentionFusion> hffm;
  std::optional<LocalFeatureFusion> lffm;  // absent: plain sum of the local maps
  std::optional<FeatureIntegration> feim;
  std::optional<ChannelRecalibration> ffrm;
};

class FusionBlock {
 public:
  FusionBlock(nn::ParamList& sink, std::mt19937_64& rng, const ModelConfig& cfg);

  // Stages are evaluated independently.
  FusedPyramid forward(const encoder::DecoupledFeatures& features) const;

  const std::vector<FusionStage>& stages() const { return stages_; }

 private:
  std::vector<FusionStage> stages_;
};

}  // namespace rgbx::fusion
