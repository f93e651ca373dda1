#pragma once

#include <array>
#include <string>
#include <string_view>

namespace rgbx {

enum class BackboneSharing { shared, separate };
enum class GlobalFusion { gfrm, hffm };
enum class LocalFusion { lffm, lffm_dup, none };
enum class Integration { feim, feim_noninteract, ffrm };

// Architecture knobs, including every ablation switch.
struct ModelConfig {
  std::string backbone = "toy";
  std::array<int, 4> channels{16, 32, 64, 128};
  std::array<int, 4> depths{1, 1, 2, 1};
  std::array<int, 4> gfe_heads{1, 2, 4, 8};
  int lfe_expansion = 4;
  int num_classes = 4;
  double norm_eps = 1e-6;

  BackboneSharing sharing = BackboneSharing::shared;
  bool gfe = true;
  bool lfe = true;
  GlobalFusion global = GlobalFusion::gfrm;
  LocalFusion local = LocalFusion::lffm;
  Integration integrate = Integration::feim;

  // Throws ConfigError on the first invalid field.
  void validate() const;
};

std::string_view to_string(BackboneSharing v);
std::string_view to_string(GlobalFusion v);
std::string_view to_string(LocalFusion v);
std::string_view to_string(Integration v);

// Parse flag values; unknown values raise ConfigError listing the valid ones.
BackboneSharing parse_sharing(std::string_view s);
GlobalFusion parse_global_fusion(std::string_view s);
LocalFusion parse_local_fusion(std::string_view s);
Integration parse_integration(std::string_view s);
bool parse_on_off(std::string_view key, std::string_view s);

}  // namespace rgbx
