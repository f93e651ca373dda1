// Command-line front end: train, eval, ablate, params, gen-synthetic.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rgbx/data.hpp"
#include "rgbx/errors.hpp"
#include "rgbx/metrics.hpp"
#include "rgbx/model.hpp"
#include "rgbx/train.hpp"

namespace fs = std::filesystem;
using namespace rgbx;

namespace {

enum Exit { kOk = 0, kConfig = 2, kData = 3, kNumeric = 4 };

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

int cmd_train(const fs::path& config_path, std::optional<std::uint64_t> seed, const fs::path& out,
              const std::optional<fs::path>& resume) {
  Config cfg = Config::load(config_path);
  if (seed) cfg.set("train.seed", std::to_string(*seed));
  train::Trainer trainer(train::TrainConfig::from_config(cfg, config_path.parent_path()));
  if (resume) {
    trainer.resume(train::load_checkpoint(*resume));
    std::cout << "resumed after epoch " << trainer.epochs_done() << "\n";
  }
  std::cout << "parameters: " << count_parameters(trainer.model()) << ", steps: " << trainer.total_steps() << "\n";
  const auto result = trainer.run({out, &std::cout, std::nullopt});
  std::cout << "done: " << result.steps << " steps, final loss " << result.final_loss;
  if (result.best_miou) std::cout << ", best val mIoU " << 100.0 * *result.best_miou << "%";
  std::cout << "\ncheckpoints in " << out.string() << "\n";
  return kOk;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& data_dir, bool zero_x, const std::optional<fs::path>& json) {
  const train::Checkpoint ckpt = train::load_checkpoint(checkpoint);
  const auto cfg = train::TrainConfig::from_config(Config::parse(ckpt.config_text));
  SegmentationModel model(cfg.model, cfg.seed);
  train::load_weights(model, ckpt);
  const data::Dataset dataset(data_dir);
  if (dataset.meta().num_classes != cfg.model.num_classes) {
    throw ConfigError("dataset has " + std::to_string(dataset.meta().num_classes) + " classes, checkpoint expects " +
                      std::to_string(cfg.model.num_classes));
  }
  const auto report = eval::compute_metrics(train::evaluate(model, dataset, zero_x || cfg.zero_x));
  std::cout << eval::to_text(report);
  if (json) write_file(*json, eval::to_json(report).dump(2) + "\n");
  return kOk;
}

int cmd_ablate(const fs::path& grid_path, const fs::path& out, const std::vector<std::string>& sets) {
  auto grid = train::AblationGrid::load(grid_path);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + kv + "'");
    grid.common.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  const auto rows = train::run_ablation_grid(grid, out, &std::cout);
  write_file(out / "ablation.csv", train::ablation_csv(rows));
  const std::string table = train::ablation_table(rows);
  write_file(out / "ablation.txt", table);
  std::cout << "\n" << table << "results in " << (out / "ablation.csv").string() << "\n";
  for (const auto& r : rows) {
    if (r.status != "ok") return kNumeric;
  }
  return kOk;
}

int cmd_params(const fs::path& config_path, bool by_group) {
  const auto cfg = train::TrainConfig::load(config_path);
  const SegmentationModel model(cfg.model, cfg.seed);
  if (by_group) {
    for (const auto& [group, count] : count_parameters_by_group(model)) {
      std::cout << nn::to_string(group) << " " << count << "\n";
    }
  }
  std::cout << "total " << count_parameters(model) << "\n";
  return kOk;
}

int cmd_gen_synthetic(const fs::path& spec_path, int n, const fs::path& out, std::uint64_t seed) {
  const auto spec = data::SyntheticTaskSpec::load(spec_path);
  std::mt19937_64 rng(seed);
  const auto pairs = data::generate_synthetic(spec, n, rng);
  const auto report = data::analyze(spec);
  data::DatasetMeta meta;
  meta.num_classes = spec.num_classes;
  meta.x_kind = data::XKind::synthetic;
  meta.extra = report.to_meta();
  data::write_dataset(out, pairs, meta);
  write_file(out / "bayes_report.txt", report.to_text());
  std::cout << "wrote " << n << " pairs to " << out.string() << "\n" << report.to_text();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RGB-X segmentation: training, evaluation and ablation tools"};
  app.require_subcommand(1);

  auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
  fs::path train_config, train_out = "runs/train";
  std::optional<std::uint64_t> train_seed;
  std::optional<fs::path> resume;
  train_cmd->add_option("--config", train_config, "config file")->required();
  train_cmd->add_option("--seed", train_seed, "override train.seed");
  train_cmd->add_option("--out", train_out, "output directory");
  train_cmd->add_option("--resume", resume, "checkpoint to continue from");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  fs::path eval_ckpt, eval_data;
  bool eval_zero_x = false;
  std::optional<fs::path> eval_json;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
  eval_cmd->add_flag("--zero-x", eval_zero_x, "replace X by zeros");
  eval_cmd->add_option("--json", eval_json, "also write the report as JSON");

  auto* ablate_cmd = app.add_subcommand("ablate", "run an ablation grid");
  fs::path grid_path, ablate_out;
  ablate_cmd->add_option("--grid", grid_path, "grid file")->required();
  ablate_cmd->add_option("--out", ablate_out, "output directory")->required();
  std::vector<std::string> ablate_sets;
  ablate_cmd->add_option("--set", ablate_sets, "key=value override applied to every row (repeatable)");

  auto* params_cmd = app.add_subcommand("params", "count trainable parameters");
  fs::path params_config;
  bool by_group = false;
  params_cmd->add_option("--config", params_config, "config file")->required();
  params_cmd->add_flag("--by-group", by_group, "break the count down by parameter group");

  auto* gen_cmd = app.add_subcommand("gen-synthetic", "write a synthetic joint-rule dataset");
  fs::path spec_path, gen_out;
  int gen_n = 0;
  std::uint64_t gen_seed = 0;
  gen_cmd->add_option("--spec", spec_path, "synthetic task spec")->required();
  gen_cmd->add_option("--n", gen_n, "number of pairs")->required();
  gen_cmd->add_option("--out", gen_out, "output directory")->required();
  gen_cmd->add_option("--seed", gen_seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*train_cmd) return cmd_train(train_config, train_seed, train_out, resume);
    if (*eval_cmd) return cmd_eval(eval_ckpt, eval_data, eval_zero_x, eval_json);
    if (*ablate_cmd) return cmd_ablate(grid_path, ablate_out, ablate_sets);
    if (*params_cmd) return cmd_params(params_config, by_group);
    if (*gen_cmd) return cmd_gen_synthetic(spec_path, gen_n, gen_out, gen_seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kOk;
}
