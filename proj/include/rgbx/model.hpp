#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>

#include "rgbx/decoder.hpp"
#include "rgbx/encoder.hpp"
#include "rgbx/fusion.hpp"
#include "rgbx/model_config.hpp"

namespace rgbx {

// Encoder -> per-stage fusion -> segmentation head.
class SegmentationModel {
 public:
  SegmentationModel(const ModelConfig& cfg, std::uint64_t seed);

  SegmentationModel(const SegmentationModel&) = delete;
  SegmentationModel& operator=(const SegmentationModel&) = delete;

  // rgb is (B, H, W, 3); x is (B, H, W, 1) or (B, H, W, 3).
  nn::Tensor forward(const nn::Tensor& rgb, const nn::Tensor& x) const;

  // Unique parameters in construction order. A shared backbone appears once.
  const nn::ParamList& parameters() const { return params_; }
  nn::ParamPtr find(std::string_view name) const;
  void zero_grad();

  const ModelConfig& config() const { return cfg_; }
  const encoder::HybridEncoder& encoder() const { return *encoder_; }
  const fusion::FusionBlock& fusion() const { return *fusion_; }
  const decoder::SegmentationHead& head() const { return *head_; }

 private:
  ModelConfig cfg_;
  nn::ParamList params_;
  std::optional<encoder::HybridEncoder> encoder_;
  std::optional<fusion::FusionBlock> fusion_;
  std::optional<decoder::SegmentationHead> head_;
};

// Sum of trainable element counts, optionally restricted to one group.
std::int64_t count_parameters(const SegmentationModel& model,
                              std::optional<nn::ParamGroup> group = std::nullopt);
std::map<nn::ParamGroup, std::int64_t> count_parameters_by_group(const SegmentationModel& model);

}  // namespace rgbx
