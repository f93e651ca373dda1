#include "rgbx/nn/module.hpp"

#include <cmath>

#include "rgbx/errors.hpp"

namespace rgbx::nn {

std::string_view to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::backbone: return "backbone";
    case ParamGroup::gfe: return "gfe";
    case ParamGroup::lfe: return "lfe";
    case ParamGroup::fusion: return "fusion";
    case ParamGroup::decoder: return "decoder";
  }
  return "unknown";
}

ParamBuilder::ParamBuilder(ParamList& sink, std::mt19937_64& rng, ParamGroup group, std::string prefix)
    : sink_(&sink), rng_(&rng), group_(group), prefix_(std::move(prefix)) {}

ParamBuilder ParamBuilder::sub(std::string_view name) const {
  ParamBuilder b = *this;
  b.prefix_ = full_name(name);
  return b;
}

ParamBuilder ParamBuilder::with_group(ParamGroup group) const {
  ParamBuilder b = *this;
  b.group_ = group;
  return b;
}

std::string ParamBuilder::full_name(std::string_view name) const {
  if (prefix_.empty()) return std::string(name);
  return prefix_ + "." + std::string(name);
}

ParamPtr ParamBuilder::trunc_normal(std::string_view name, const Shape& shape, double stddev) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> values(static_cast<std::size_t>(numel(shape)));
  for (double& v : values) {
    double z;
    do {
      z = dist(*rng_);
    } while (std::abs(z) > 2.0);
    v = z * stddev;
  }
  auto p = std::make_shared<Parameter>();
  p->name = full_name(name);
  p->tensor = Tensor::from(shape, std::move(values), true);
  p->group = group_;
  p->decay = true;
  sink_->push_back(p);
  return p;
}

ParamPtr ParamBuilder::constant(std::string_view name, const Shape& shape, double value, bool decay) {
  auto p = std::make_shared<Parameter>();
  p->name = full_name(name);
  p->tensor = Tensor::full(shape, value, true);
  p->group = group_;
  p->decay = decay;
  sink_->push_back(p);
  return p;
}

Tensor Conv2d::operator()(const Tensor& x) const {
  return conv2d(x, weight->tensor, bias ? bias->tensor : Tensor{}, spec);
}

Conv2d make_conv(ParamBuilder& pb, std::string_view name, int in_channels, int out_channels, int kernel,
                 ConvSpec spec, bool with_bias) {
  if (in_channels % spec.groups != 0 || out_channels % spec.groups != 0) {
    throw ConfigError("conv " + std::string(name) + ": channels not divisible by groups");
  }
  ParamBuilder sub = pb.sub(name);
  Conv2d conv;
  conv.spec = spec;
  conv.weight = sub.trunc_normal("weight", {kernel, kernel, in_channels / spec.groups, out_channels});
  if (with_bias) conv.bias = sub.constant("bias", {1, 1, 1, out_channels}, 0.0, false);
  return conv;
}

Tensor LayerNorm::operator()(const Tensor& x) const {
  return layer_norm(x, gamma->tensor, beta->tensor, eps);
}

LayerNorm make_layer_norm(ParamBuilder& pb, std::string_view name, int channels, double eps) {
  ParamBuilder sub = pb.sub(name);
  LayerNorm ln;
  ln.gamma = sub.constant("gamma", {1, 1, 1, channels}, 1.0, false);
  ln.beta = sub.constant("beta", {1, 1, 1, channels}, 0.0, false);
  ln.eps = eps;
  return ln;
}

}  // namespace rgbx::nn
