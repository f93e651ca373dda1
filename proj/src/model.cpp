#include "rgbx/model.hpp"

#include <unordered_set>

#include "rgbx/errors.hpp"

namespace rgbx {

SegmentationModel::SegmentationModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  encoder_.emplace(params_, rng, cfg_);
  fusion_.emplace(params_, rng, cfg_);
  head_.emplace(params_, rng, cfg_.channels, cfg_.num_classes);

  std::unordered_set<std::string> names;
  for (const auto& p : params_) {
    if (!names.insert(p->name).second) throw ContractError("duplicate parameter name " + p->name);
  }
}

nn::Tensor SegmentationModel::forward(const nn::Tensor& rgb, const nn::Tensor& x) const {
  const nn::Tensor x3 = encoder::replicate_x_channels(x);
  const auto features = encoder_->forward(rgb, x3);
  return head_->forward(fusion_->forward(features));
}

nn::ParamPtr SegmentationModel::find(std::string_view name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p;
  }
  return nullptr;
}

void SegmentationModel::zero_grad() {
  for (auto& p : params_) p->tensor.zero_grad();
}

std::int64_t count_parameters(const SegmentationModel& model, std::optional<nn::ParamGroup> group) {
  std::int64_t total = 0;
  for (const auto& p : model.parameters()) {
    if (!p->trainable) continue;
    if (group && p->group != *group) continue;
    total += p->count();
  }
  return total;
}

std::map<nn::ParamGroup, std::int64_t> count_parameters_by_group(const SegmentationModel& model) {
  std::map<nn::ParamGroup, std::int64_t> out;
  for (auto g : nn::kAllGroups) out[g] = 0;
  for (const auto& p : model.parameters()) {
    if (p->trainable) out[p->group] += p->count();
  }
  return out;
}

}  // namespace rgbx
