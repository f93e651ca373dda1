#include "rgbx/fusion.hpp"

#include <cmath>

#include "rgbx/errors.hpp"
#include "rgbx/nn/attention.hpp"

namespace rgbx::fusion {

namespace {

constexpr std::array<bool, 4> kSpatial{false, true, true, false};
constexpr std::array<bool, 4> kAlongWidth{false, false, true, false};
constexpr std::array<bool, 4> kAlongHeight{false, true, false, false};

void require_same(const Tensor& a, const Tensor& b, const char* where) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(where) + ": inputs " + nn::to_string(a.shape()) + " and " +
                     nn::to_string(b.shape()) + " differ");
  }
}

}  // namespace

GlobalRecalibration::GlobalRecalibration(nn::ParamBuilder pb, int c, double eps)
    : query_rgb(nn::make_conv(pb, "query_rgb", c, c, 1)),
      key_rgb(nn::make_conv(pb, "key_rgb", c, c, 1)),
      value_rgb(nn::make_conv(pb, "value_rgb", c, c, 1)),
      query_x(nn::make_conv(pb, "query_x", c, c, 1)),
      key_x(nn::make_conv(pb, "key_x", c, c, 1)),
      value_x(nn::make_conv(pb, "value_x", c, c, 1)),
      kappa(pb.constant("kappa", {1, 1, 1, 1}, 0.0, false)),
      gamma(pb.constant("gamma", {1, 1, 1, 1}, 0.0, false)),
      reduce(nn::make_conv(pb, "reduce", 2 * c, c, 1)),
      norm(nn::make_layer_norm(pb, "norm", c, eps)),
      channel_gate(nn::make_conv(pb, "channel_gate", c, c, 1)) {}

std::pair<Tensor, Tensor> GlobalRecalibration::cross_attend(const Tensor& g_rgb, const Tensor& g_x) const {
  require_same(g_rgb, g_x, "GFRM cross-attention");
  // Queries and values stay in their own modality; keys come from the other.
  const Tensor attended_rgb = nn::spatial_attention(query_rgb(g_rgb), key_x(g_x), value_rgb(g_rgb), 1, 1.0);
  const Tensor attended_x = nn::spatial_attention(query_x(g_x), key_rgb(g_rgb), value_x(g_x), 1, 1.0);
  return {nn::add(nn::mul(attended_rgb, kappa->tensor), g_rgb),
          nn::add(nn::mul(attended_x, gamma->tensor), g_x)};
}

Tensor GlobalRecalibration::fuse(const Tensor& g_rgb, const Tensor& g_x) const {
  require_same(g_rgb, g_x, "GFRM fuse");
  return norm(nn::relu(reduce(nn::concat({g_rgb, g_x}, 3))));
}

Tensor GlobalRecalibration::channel_attend(const Tensor& f_c) const {
  const Tensor gate = nn::sigmoid(channel_gate(nn::mean(f_c, kSpatial)));
  return nn::add(nn::mul(f_c, gate), f_c);
}

Tensor GlobalRecalibration::forward(const Tensor& g_rgb, const Tensor& g_x) const {
  auto [r, x] = cross_attend(g_rgb, g_x);
  return channel_attend(fuse(r, x));
}

ConcatAttentionFusion::ConcatAttentionFusion(nn::ParamBuilder pb, int c, double eps)
    : reduce(nn::make_conv(pb, "reduce", 2 * c, c, 1)),
      query(nn::make_conv(pb, "query", c, c, 1)),
      key(nn::make_conv(pb, "key", c, c, 1)),
      value(nn::make_conv(pb, "value", c, c, 1)),
      norm(nn::make_layer_norm(pb, "norm", c, eps)) {}

Tensor ConcatAttentionFusion::forward(const Tensor& g_rgb, const Tensor& g_x) const {
  require_same(g_rgb, g_x, "HFFM");
  const Tensor f = reduce(nn::concat({g_rgb, g_x}, 3));
  const double scale = 1.0 / std::sqrt(static_cast<double>(f.channels()));
  return norm(nn::add(nn::spatial_attention(query(f), key(f), value(f), 1, scale), f));
}

LocalFeatureFusion::LocalFeatureFusion(nn::ParamBuilder pb, int c, int expanded_channels, bool duplicate_instead_of_expand)
    : dwconv(nn::make_conv(pb, "dwconv", 4 * c, 4 * c, 3, {.stride = 1, .padding = 1, .groups = 4 * c})),
      project(nn::make_conv(pb, "project", 2 * c, c, 1)),
      channels(c) {
  if (expanded_channels != 4 * c) {
    throw ConfigError("LFFM: expanded channels must be exactly 4*C = " + std::to_string(4 * c) + ", got " +
                      std::to_string(expanded_channels));
  }
  if (!duplicate_instead_of_expand) expand = nn::make_conv(pb, "expand", 2 * c, 4 * c, 1);
}

Tensor LocalFeatureFusion::forward(const Tensor& l_rgb, const Tensor& l_x) const {
  require_same(l_rgb, l_x, "LFFM");
  const Tensor cat = nn::concat({l_rgb, l_x}, 3);
  const Tensor widened = expand ? (*expand)(cat) : nn::concat({cat, cat}, 3);
  const Tensor h = dwconv(widened);
  const Tensor h_m = nn::slice(h, 3, 0, 2 * channels);
  const Tensor h_n = nn::slice(h, 3, 2 * channels, 2 * channels);
  return project(nn::mul(h_m, nn::gelu(h_n)));
}

FeatureIntegration::FeatureIntegration(nn::ParamBuilder pb, int c, bool independent_axes)
    : gate(nn::make_conv(pb, independent_axes ? "gate_h" : "gate", c, c, 1)) {
  if (independent_axes) gate_w = nn::make_conv(pb, "gate_w", c, c, 1);
}

std::pair<Tensor, Tensor> FeatureIntegration::axis_gates(const Tensor& summed) const {
  const int B = summed.batch(), h = summed.height(), w = summed.width(), C = summed.channels();
  const Tensor z_h = nn::mean(summed, kAlongWidth);                                   // (B, h, 1, C)
  const Tensor z_w = nn::reshape(nn::mean(summed, kAlongHeight), {B, w, 1, C});       // (B, w, 1, C)
  if (gate_w) {
    return {nn::sigmoid(gate(z_h)), nn::reshape(nn::sigmoid((*gate_w)(z_w)), {B, 1, w, C})};
  }
  const Tensor z = nn::sigmoid(gate(nn::concat({z_h, z_w}, 1)));                     // (B, h + w, 1, C)
  return {nn::slice(z, 1, 0, h), nn::reshape(nn::slice(z, 1, h, w), {B, 1, w, C})};
}

Tensor FeatureIntegration::forward(const Tensor& f_g, const Tensor& f_l) const {
  require_same(f_g, f_l, "FEIM");
  const Tensor s = nn::add(f_g, f_l);
  auto [gate_h, gate_wide] = axis_gates(s);
  return nn::mul(nn::mul(s, gate_h), gate_wide);
}

ChannelRecalibration::ChannelRecalibration(nn::ParamBuilder pb, int c)
    : gate(nn::make_conv(pb, "gate", c, c, 1)) {}

Tensor ChannelRecalibration::forward(const Tensor& f_g, const Tensor& f_l) const {
  require_same(f_g, f_l, "FFRM");
  const Tensor s = nn::add(f_g, f_l);
  return nn::mul(s, nn::sigmoid(gate(nn::mean(s, kSpatial))));
}

FusionStage::FusionStage(nn::ParamBuilder pb, int c, const ModelConfig& cfg) {
  switch (cfg.global) {
    case GlobalFusion::gfrm: gfrm.emplace(pb.sub("gfrm"), c, cfg.norm_eps); break;
    case GlobalFusion::hffm: hffm.emplace(pb.sub("hffm"), c, cfg.norm_eps); break;
  }
  switch (cfg.local) {
    case LocalFusion::lffm: lffm.emplace(pb.sub("lffm"), c, 4 * c, false); break;
    case LocalFusion::lffm_dup: lffm.emplace(pb.sub("lffm"), c, 4 * c, true); break;
    case LocalFusion::none: break;
  }
  switch (cfg.integrate) {
    case Integration::feim: feim.emplace(pb.sub("feim"), c, false); break;
    case Integration::feim_noninteract: feim.emplace(pb.sub("feim"), c, true); break;
    case Integration::ffrm: ffrm.emplace(pb.sub("ffrm"), c); break;
  }
}

Tensor FusionStage::forward(const Tensor& g_rgb, const Tensor& g_x, const Tensor& l_rgb, const Tensor& l_x) const {
  const Tensor f_g = gfrm ? gfrm->forward(g_rgb, g_x) : hffm->forward(g_rgb, g_x);
  const Tensor f_l = lffm ? lffm->forward(l_rgb, l_x) : nn::add(l_rgb, l_x);
  return feim ? feim->forward(f_g, f_l) : ffrm->forward(f_g, f_l);
}

FusionBlock::FusionBlock(nn::ParamList& sink, std::mt19937_64& rng, const ModelConfig& cfg) {
  nn::ParamBuilder pb(sink, rng, nn::ParamGroup::fusion, "fusion");
  for (int i = 0; i < encoder::kNumStages; ++i) {
    stages_.emplace_back(pb.sub("stage" + std::to_string(i + 1)), cfg.channels[i], cfg);
  }
}

FusedPyramid FusionBlock::forward(const encoder::DecoupledFeatures& f) const {
  FusedPyramid out;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    out[i] = stages_[i].forward(f.global_rgb[i], f.global_x[i], f.local_rgb[i], f.local_x[i]);
  }
  return out;
}

}  // namespace rgbx::fusion
