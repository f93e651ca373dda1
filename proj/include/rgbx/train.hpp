#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "rgbx/config.hpp"
#include "rgbx/data.hpp"
#include "rgbx/metrics.hpp"
#include "rgbx/model.hpp"

namespace rgbx::train {

namespace fs = std::filesystem;

struct TrainConfig {
  ModelConfig model;

  double base_lr = 1e-4;
  double weight_decay = 5e-2;
  double backbone_lr_multiplier = 0.1;
  double poly_power = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 10;
  int batch_size = 2;
  std::uint64_t seed = 0;
  int max_steps = 0;  // 0: no cap; otherwise ends training and sets the schedule horizon
  int eval_every = 1;

  fs::path train_dir;
  fs::path val_dir;
  bool zero_x = false;  // replace X by zeros in training and evaluation
  data::AugmentConfig augment;

  // Unknown keys raise ConfigError listing the valid ones. Relative data
  // paths resolve against `base_dir`.
  static TrainConfig from_config(const Config& cfg, const fs::path& base_dir = {});
  static TrainConfig load(const fs::path& path);
  static const std::set<std::string>& known_keys();

  void validate() const;
  // Canonical key = value text; reloading it reproduces this config.
  std::string to_text() const;
  std::uint64_t hash() const { return fnv1a(to_text()); }
};

// base_lr * (1 - step / total_steps)^power, for 0 <= step <= total_steps.
double lr_at(std::int64_t step, std::int64_t total_steps, double base_lr, double power);

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-2;
  double backbone_lr_multiplier = 0.1;
};

// Decoupled weight decay: p -= lr_g * wd * p, then the bias-corrected Adam
// update p -= lr_g * m_hat / (sqrt(v_hat) + eps). lr_g is the backbone
// multiplier times lr for backbone parameters and lr otherwise.
class AdamW {
 public:
  struct Moments {
    std::vector<double> m, v;
  };

  AdamW(nn::ParamList params, AdamWOptions options);

  // Params that never received a grad are skipped entirely. A NaN/Inf
  // gradient raises NumericError naming the parameter, before anything moves.
  void step(double lr);

  std::int64_t steps() const { return t_; }
  const AdamWOptions& options() const { return opt_; }
  const nn::ParamList& params() const { return params_; }
  const std::vector<Moments>& moments() const { return moments_; }

  void restore(std::int64_t steps, std::vector<Moments> moments);

 private:
  nn::ParamList params_;
  AdamWOptions opt_;
  std::vector<Moments> moments_;
  std::int64_t t_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  std::optional<double> val_miou;
  std::optional<double> val_pixel_acc;
  std::int64_t steps = 0;  // optimizer steps completed at the end of this epoch
  double lr = 0.0;         // learning rate of the last step

  bool operator==(const EpochRecord&) const = default;
};

struct NamedArray {
  std::string name;
  std::vector<double> values;
  bool operator==(const NamedArray&) const = default;
};

struct Checkpoint {
  std::string config_text;
  std::uint64_t config_hash = 0;
  std::vector<NamedArray> params;
  std::vector<NamedArray> moment1, moment2;
  std::int64_t step = 0;
  int epoch = 0;  // epochs completed
  std::string rng_state;
  std::vector<EpochRecord> curve;
  std::optional<double> best_miou;

  bool operator==(const Checkpoint&) const = default;
};

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path);
Checkpoint load_checkpoint(const fs::path& path);
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

// Copies checkpointed values into a freshly built model with the same config.
void load_weights(SegmentationModel& model, const Checkpoint& ckpt);

// Logits -> confusion matrix over the whole dataset, without gradients.
// Samples are snapped to multiples of 32 before the forward pass.
eval::ConfusionMatrix evaluate(const SegmentationModel& model, const data::Dataset& dataset, bool zero_x = false);

struct RunOptions {
  std::optional<fs::path> out_dir;  // checkpoints, curve.csv, metrics.json
  std::ostream* log = nullptr;
  std::optional<int> stop_after_epoch;  // stop early (used to exercise resume)
};

struct TrainResult {
  std::vector<EpochRecord> curve;
  std::optional<double> best_miou;
  std::int64_t steps = 0;
  double final_loss = 0.0;
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, data::Dataset train_set, std::optional<data::Dataset> val_set = std::nullopt);

  // Loads datasets from cfg.train_dir / cfg.val_dir.
  explicit Trainer(TrainConfig cfg);

  void resume(const Checkpoint& ckpt);
  TrainResult run(const RunOptions& options = {});

  Checkpoint checkpoint() const;
  SegmentationModel& model() { return *model_; }
  const TrainConfig& config() const { return cfg_; }
  std::int64_t total_steps() const { return total_steps_; }
  int epochs_done() const { return epoch_; }

 private:
  double train_epoch(std::ostream* log);

  TrainConfig cfg_;
  data::Dataset train_set_;
  std::optional<data::Dataset> val_set_;
  std::unique_ptr<SegmentationModel> model_;
  std::unique_ptr<AdamW> optimizer_;
  std::mt19937_64 rng_;
  std::int64_t total_steps_ = 0;
  int epoch_ = 0;
  std::vector<EpochRecord> curve_;
  std::optional<double> best_miou_;
};

struct GridRow {
  std::string group;    // backbone, encoder or fusion
  std::string variant;  // row label
  Config overrides;
};

struct AblationGrid {
  fs::path base_config;
  Config common;  // overrides applied to every row
  std::vector<GridRow> rows;

  static AblationGrid load(const fs::path& path);
};

struct AblationResult {
  std::string group;
  std::string variant;
  std::optional<double> miou;
  std::int64_t params = 0;
  double wall_time = 0.0;
  double final_loss = 0.0;
  std::string status;  // "ok" or the failure reason
};

// Trains every row (each writes under out_dir/<index>_<variant>/) and
// returns one result per row. Configuration errors abort the whole grid;
// numeric failures are recorded per row.
std::vector<AblationResult> run_ablation_grid(const AblationGrid& grid, const fs::path& out_dir,
                                              std::ostream* log = nullptr);
std::string ablation_csv(const std::vector<AblationResult>& rows);
std::string ablation_table(const std::vector<AblationResult>& rows);

}  // namespace rgbx::train
