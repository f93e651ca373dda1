#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "rgbx/nn/ops.hpp"
#include "rgbx/nn/tensor.hpp"

namespace rgbx::nn {

// Parameter groups used for learning-rate multipliers and per-group counts.
enum class ParamGroup { backbone, gfe, lfe, fusion, decoder };

std::string_view to_string(ParamGroup group);
inline constexpr ParamGroup kAllGroups[] = {ParamGroup::backbone, ParamGroup::gfe, ParamGroup::lfe,
                                            ParamGroup::fusion, ParamGroup::decoder};

struct Parameter {
  std::string name;
  Tensor tensor;
  ParamGroup group = ParamGroup::decoder;
  bool decay = true;
  bool trainable = true;

  std::int64_t count() const { return tensor.size(); }
};

using ParamPtr = std::shared_ptr<Parameter>;
using ParamList = std::vector<ParamPtr>;

// Creates named parameters under a dotted prefix and appends them to a sink.
class ParamBuilder {
 public:
  ParamBuilder(ParamList& sink, std::mt19937_64& rng, ParamGroup group, std::string prefix = {});

  ParamBuilder sub(std::string_view name) const;
  ParamBuilder with_group(ParamGroup group) const;

  // Truncated normal (cut at two standard deviations), subject to decay.
  ParamPtr trunc_normal(std::string_view name, const Shape& shape, double stddev = 0.02);
  ParamPtr constant(std::string_view name, const Shape& shape, double value, bool decay);

  std::mt19937_64& rng() { return *rng_; }

 private:
  std::string full_name(std::string_view name) const;

  ParamList* sink_;
  std::mt19937_64* rng_;
  ParamGroup group_;
  std::string prefix_;
};

struct Conv2d {
  ParamPtr weight;
  ParamPtr bias;  // null when the layer has no bias
  ConvSpec spec;

  Tensor operator()(const Tensor& x) const;
  int in_channels() const { return weight->tensor.dim(2) * spec.groups; }
  int out_channels() const { return weight->tensor.dim(3); }
};

// Weight (k, k, in / groups, out), bias zero-initialized and never decayed.
Conv2d make_conv(ParamBuilder& pb, std::string_view name, int in_channels, int out_channels,
                 int kernel, ConvSpec spec = {}, bool with_bias = true);

struct LayerNorm {
  ParamPtr gamma;
  ParamPtr beta;
  double eps = 1e-6;

  Tensor operator()(const Tensor& x) const;
};

LayerNorm make_layer_norm(ParamBuilder& pb, std::string_view name, int channels, double eps = 1e-6);

}  // namespace rgbx::nn
