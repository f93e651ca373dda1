#include "rgbx/model_config.hpp"

#include "rgbx/errors.hpp"

namespace rgbx {

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view key, std::string_view s, const std::array<std::pair<std::string_view, E>, N>& table) {
  std::string valid;
  for (const auto& [name, value] : table) {
    if (name == s) return value;
    if (!valid.empty()) valid += ", ";
    valid += name;
  }
  throw ConfigError("unknown value '" + std::string(s) + "' for " + std::string(key) + " (valid: " + valid + ")");
}

constexpr std::array<std::pair<std::string_view, BackboneSharing>, 2> kSharing{{
    {"shared", BackboneSharing::shared}, {"separate", BackboneSharing::separate}}};
constexpr std::array<std::pair<std::string_view, GlobalFusion>, 2> kGlobal{{
    {"gfrm", GlobalFusion::gfrm}, {"hffm", GlobalFusion::hffm}}};
constexpr std::array<std::pair<std::string_view, LocalFusion>, 3> kLocal{{
    {"lffm", LocalFusion::lffm}, {"lffm_dup", LocalFusion::lffm_dup}, {"none", LocalFusion::none}}};
constexpr std::array<std::pair<std::string_view, Integration>, 3> kIntegrate{{
    {"feim", Integration::feim}, {"feim_noninteract", Integration::feim_noninteract}, {"ffrm", Integration::ffrm}}};

template <typename E, std::size_t N>
std::string_view name_of(E v, const std::array<std::pair<std::string_view, E>, N>& table) {
  for (const auto& [name, value] : table) {
    if (value == v) return name;
  }
  return "?";
}

}  // namespace

std::string_view to_string(BackboneSharing v) { return name_of(v, kSharing); }
std::string_view to_string(GlobalFusion v) { return name_of(v, kGlobal); }
std::string_view to_string(LocalFusion v) { return name_of(v, kLocal); }
std::string_view to_string(Integration v) { return name_of(v, kIntegrate); }

BackboneSharing parse_sharing(std::string_view s) { return parse_enum("backbone.sharing", s, kSharing); }
GlobalFusion parse_global_fusion(std::string_view s) { return parse_enum("fusion.global", s, kGlobal); }
LocalFusion parse_local_fusion(std::string_view s) { return parse_enum("fusion.local", s, kLocal); }
Integration parse_integration(std::string_view s) { return parse_enum("fusion.integrate", s, kIntegrate); }

bool parse_on_off(std::string_view key, std::string_view s) {
  if (s == "on" || s == "true" || s == "1") return true;
  if (s == "off" || s == "false" || s == "0") return false;
  throw ConfigError("unknown value '" + std::string(s) + "' for " + std::string(key) + " (valid: on, off)");
}

void ModelConfig::validate() const {
  if (backbone == "dinat" || backbone == "unireplknet" || backbone == "convnext") {
    throw ConfigError("backbone.kind '" + backbone + "' names a pretrained backbone that is not bundled; use 'toy'");
  }
  if (backbone != "toy") {
    throw ConfigError("unknown value '" + backbone + "' for backbone.kind (valid: toy)");
  }
  for (int i = 0; i < 4; ++i) {
    if (channels[i] < 1) throw ConfigError("model.channels must be positive");
    if (depths[i] < 0) throw ConfigError("model.depths must be non-negative");
    if (gfe_heads[i] < 1 || channels[i] % gfe_heads[i] != 0) {
      throw ConfigError("model.gfe_heads[" + std::to_string(i) + "] = " + std::to_string(gfe_heads[i]) +
                        " does not divide " + std::to_string(channels[i]) + " channels");
    }
  }
  if (lfe_expansion < 1) throw ConfigError("model.lfe_expansion must be >= 1");
  if (num_classes < 2) throw ConfigError("model.num_classes must be >= 2");
  if (norm_eps < 0.0) throw ConfigError("model.norm_eps must be >= 0");
}

}  // namespace rgbx
