#include "rgbx/encoder.hpp"

#include <cmath>

#include "rgbx/errors.hpp"
#include "rgbx/nn/attention.hpp"

namespace rgbx::encoder {

StageSpec stage_spec(int index, const std::array<int, 4>& channels) {
  if (index < 1 || index > kNumStages) throw ConfigError("stage index must be in [1, 4]");
  return {index, 1 << (index + 1), channels[static_cast<std::size_t>(index - 1)]};
}

Tensor replicate_x_channels(const Tensor& x) {
  if (x.channels() == 3) return x;
  if (x.channels() != 1) {
    throw DataError("X input must have 1 or 3 channels, got " + std::to_string(x.channels()));
  }
  return nn::concat({x, x, x}, 3);
}

void check_input_dims(const Tensor& image) {
  if (image.height() % kMaxStride != 0 || image.width() % kMaxStride != 0) {
    throw ShapeError("input spatial size " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                     " is not a multiple of " + std::to_string(kMaxStride));
  }
  if (image.channels() != 3) {
    throw ShapeError("backbone expects 3 input channels, got " + std::to_string(image.channels()));
  }
}

Backbone::Backbone(std::mt19937_64& rng, const std::string& prefix, const ModelConfig& cfg) {
  nn::ParamBuilder root(params_, rng, nn::ParamGroup::backbone, prefix);
  for (int i = 0; i < kNumStages; ++i) {
    nn::ParamBuilder pb = root.sub("stage" + std::to_string(i + 1));
    const int c = cfg.channels[i];
    Stage stage;
    if (i == 0) {
      stage.down = nn::make_conv(pb, "stem", 3, c, 4, {.stride = 4});
      stage.stem_norm = nn::make_layer_norm(pb, "stem_norm", c, cfg.norm_eps);
    } else {
      stage.down_norm = nn::make_layer_norm(pb, "down_norm", cfg.channels[i - 1], cfg.norm_eps);
      stage.down = nn::make_conv(pb, "down", cfg.channels[i - 1], c, 2, {.stride = 2});
    }
    for (int b = 0; b < cfg.depths[i]; ++b) {
      nn::ParamBuilder bb = pb.sub("block" + std::to_string(b));
      stage.blocks.push_back(Block{
          nn::make_conv(bb, "dwconv", c, c, 7, {.stride = 1, .padding = 3, .groups = c}),
          nn::make_layer_norm(bb, "norm", c, cfg.norm_eps),
          nn::make_conv(bb, "expand", c, 4 * c, 1),
          nn::make_conv(bb, "project", 4 * c, c, 1),
      });
    }
    stages_.push_back(std::move(stage));
  }
}

FeaturePyramid Backbone::forward(const Tensor& image) const {
  check_input_dims(image);
  FeaturePyramid out;
  Tensor x = image;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const Stage& stage = stages_[i];
    if (stage.down_norm) x = (*stage.down_norm)(x);
    x = stage.down(x);
    if (stage.stem_norm) x = (*stage.stem_norm)(x);
    for (const Block& blk : stage.blocks) {
      Tensor y = blk.dwconv(x);
      y = blk.norm(y);
      y = nn::gelu(blk.expand(y));
      x = nn::add(blk.project(y), x);
    }
    out[i] = x;
  }
  return out;
}

GlobalFeatureEnhancer::GlobalFeatureEnhancer(nn::ParamBuilder pb, int channels, int heads_, double eps)
    : query(nn::make_conv(pb, "query", channels, channels, 1)),
      key(nn::make_conv(pb, "key", channels, channels, 1)),
      value(nn::make_conv(pb, "value", channels, channels, 1)),
      norm(nn::make_layer_norm(pb, "norm", channels, eps)),
      heads(heads_) {
  if (heads < 1 || channels % heads != 0) {
    throw ConfigError("GFE: " + std::to_string(heads) + " heads do not divide " + std::to_string(channels) +
                      " channels");
  }
}

Tensor GlobalFeatureEnhancer::forward(const Tensor& features) const {
  const double head_dim = static_cast<double>(features.channels() / heads);
  Tensor attended = nn::spatial_attention(query(features), key(features), value(features), heads,
                                          1.0 / std::sqrt(head_dim));
  return norm(nn::add(attended, features));
}

LocalFeatureExtractor::LocalFeatureExtractor(nn::ParamBuilder pb, int channels, int expansion)
    : expand(nn::make_conv(pb, "expand", channels, expansion * channels, 1)),
      dwconv(nn::make_conv(pb, "dwconv", expansion * channels, expansion * channels, 3,
                           {.stride = 1, .padding = 1, .groups = expansion * channels})),
      project(nn::make_conv(pb, "project", expansion * channels, channels, 1)) {}

Tensor LocalFeatureExtractor::forward(const Tensor& features) const {
  Tensor h = nn::relu(expand(features));
  h = nn::relu(dwconv(h));
  return nn::add(project(h), features);
}

HybridEncoder::HybridEncoder(nn::ParamList& sink, std::mt19937_64& rng, const ModelConfig& cfg) {
  cfg.validate();
  if (cfg.sharing == BackboneSharing::shared) {
    backbone_rgb_ = std::make_shared<Backbone>(rng, "backbone", cfg);
    backbone_x_ = backbone_rgb_;
    sink.insert(sink.end(), backbone_rgb_->params().begin(), backbone_rgb_->params().end());
  } else {
    backbone_rgb_ = std::make_shared<Backbone>(rng, "backbone_rgb", cfg);
    backbone_x_ = std::make_shared<Backbone>(rng, "backbone_x", cfg);
    sink.insert(sink.end(), backbone_rgb_->params().begin(), backbone_rgb_->params().end());
    sink.insert(sink.end(), backbone_x_->params().begin(), backbone_x_->params().end());
  }
  for (int i = 0; i < kNumStages; ++i) {
    const std::string stage = "stage" + std::to_string(i + 1);
    if (cfg.gfe) {
      nn::ParamBuilder pb(sink, rng, nn::ParamGroup::gfe, "gfe");
      gfe_rgb_.emplace_back(pb.sub("rgb").sub(stage), cfg.channels[i], cfg.gfe_heads[i], cfg.norm_eps);
      gfe_x_.emplace_back(pb.sub("x").sub(stage), cfg.channels[i], cfg.gfe_heads[i], cfg.norm_eps);
    }
    if (cfg.lfe) {
      nn::ParamBuilder pb(sink, rng, nn::ParamGroup::lfe, "lfe");
      lfe_rgb_.emplace_back(pb.sub("rgb").sub(stage), cfg.channels[i], cfg.lfe_expansion);
      lfe_x_.emplace_back(pb.sub("x").sub(stage), cfg.channels[i], cfg.lfe_expansion);
    }
  }
}

DecoupledFeatures HybridEncoder::forward(const Tensor& rgb, const Tensor& x) const {
  if (rgb.shape() != x.shape()) {
    throw ShapeError("rgb " + nn::to_string(rgb.shape()) + " and x " + nn::to_string(x.shape()) +
                     " must have identical shapes");
  }
  check_input_dims(rgb);
  const FeaturePyramid fr = backbone_rgb_->forward(rgb);
  const FeaturePyramid fx = backbone_x_->forward(x);
  DecoupledFeatures out;
  for (std::size_t i = 0; i < kNumStages; ++i) {
    out.global_rgb[i] = gfe_rgb_.empty() ? fr[i] : gfe_rgb_[i].forward(fr[i]);
    out.global_x[i] = gfe_x_.empty() ? fx[i] : gfe_x_[i].forward(fx[i]);
    out.local_rgb[i] = lfe_rgb_.empty() ? fr[i] : lfe_rgb_[i].forward(fr[i]);
    out.local_x[i] = lfe_x_.empty() ? fx[i] : lfe_x_[i].forward(fx[i]);
  }
  return out;
}

}  // namespace rgbx::encoder
