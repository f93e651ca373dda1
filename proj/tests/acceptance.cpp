// Acceptance checks. Prints one PASS/FAIL line per criterion; the exit code is
// the number of failures. `acceptance --only NAME` runs a single criterion.
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rgbx/config.hpp"
#include "rgbx/decoder.hpp"
#include "rgbx/errors.hpp"
#include "rgbx/metrics.hpp"
#include "rgbx/model.hpp"
#include "rgbx/train.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace rgbx;
using namespace rgbx::testing;

namespace {

// Pinned tolerances and budgets.
constexpr double kFidelityTol = 1e-10;
constexpr double kGradTol = 1e-4;
constexpr double kFscIdentityTol = 1e-12;
constexpr double kOverfitAcc = 0.99;
constexpr int kOverfitSteps = 300;
constexpr double kJointIouFull = 0.90;
constexpr double kJointIouZeroX = 0.60;
constexpr double kFidelitySeconds = 60, kGradSeconds = 300, kOverfitSeconds = 900, kFusionSeconds = 2700;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rgbx_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

nn::ParamBuilder builder(nn::ParamList& params, std::mt19937_64& rng) {
  return nn::ParamBuilder(params, rng, nn::ParamGroup::fusion);
}

train::TrainConfig toy_config(const std::vector<std::pair<std::string, std::string>>& overrides) {
  Config c = Config::load(fs::path(RGBX_CONFIG_DIR) / "toy.cfg");
  for (const auto& [k, v] : overrides) c.set(k, v);
  return train::TrainConfig::from_config(c, RGBX_CONFIG_DIR);
}

data::Dataset synthetic(int n, std::uint64_t seed, int image_size = 64) {
  auto spec = data::SyntheticTaskSpec::default_task();
  spec.image_size = image_size;
  std::mt19937_64 rng(seed);
  data::DatasetMeta meta;
  meta.num_classes = spec.num_classes;
  return data::Dataset(data::generate_synthetic(spec, n, rng), meta);
}

// ---------------------------------------------------------------------------

Outcome equation_fidelity() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  double worst = 0.0;
  std::string worst_name;
  auto note = [&](const std::string& name, double err) {
    if (std::isnan(err) || err > worst) {
      worst = err;
      worst_name = name;
    }
  };

  for (int trial = 0; trial < 3; ++trial) {
    const int b = 1 + trial % 2, h = 8 - trial, w = 8 - 2 * trial, c = 8;
    nn::ParamList params;
    const encoder::GlobalFeatureEnhancer gfe(builder(params, rng), c, 2, 1e-6);
    const fusion::GlobalRecalibration gfrm(builder(params, rng), c, 1e-6);
    const fusion::LocalFeatureFusion lffm(builder(params, rng), c, 4 * c, false);
    const fusion::LocalFeatureFusion lffm_dup(builder(params, rng), c, 4 * c, true);
    const fusion::FeatureIntegration feim(builder(params, rng), c, false);
    const fusion::FeatureIntegration feim_ind(builder(params, rng), c, true);
    randomize(params, rng);
    const Tensor a = random_tensor({b, h, w, c}, rng), x = random_tensor({b, h, w, c}, rng);

    note("gfe attention", rel_error(gfe.forward(a), gfe_oracle(gfe, a)));
    const auto [r, s] = gfrm.cross_attend(a, x);
    const auto [ro, so] = cross_attend_oracle(gfrm, a, x);
    note("gfrm cross-attention", std::max(rel_error(r, ro), rel_error(s, so)));
    note("gfrm fuse", rel_error(gfrm.fuse(a, x), gfrm_fuse_oracle(gfrm, a, x)));
    note("channel pooling", rel_error(gfrm.channel_attend(a), channel_attend_oracle(gfrm, a)));
    note("lffm", rel_error(lffm.forward(a, x), lffm_oracle(lffm, a, x)));
    note("lffm duplicated", rel_error(lffm_dup.forward(a, x), lffm_oracle(lffm_dup, a, x)));
    note("feim", rel_error(feim.forward(a, x), feim_oracle(feim, a, x)));
    note("feim independent", rel_error(feim_ind.forward(a, x), feim_oracle(feim_ind, a, x)));

    // axis pooling: row means and column means both average to the global mean
    const Tensor sum = nn::add(a, x);
    for (int bi = 0; bi < b; ++bi)
      for (int ch = 0; ch < c; ++ch) {
        double total = 0.0, rows = 0.0, cols = 0.0;
        for (int i = 0; i < h; ++i) {
          double rm = 0.0;
          for (int j = 0; j < w; ++j) rm += sum.at(bi, i, j, ch) / w, total += sum.at(bi, i, j, ch);
          rows += rm / h;
        }
        for (int j = 0; j < w; ++j) {
          double cm = 0.0;
          for (int i = 0; i < h; ++i) cm += sum.at(bi, i, j, ch) / h;
          cols += cm / w;
        }
        const double g = total / (h * w);
        note("pooling consistency", std::max(std::abs(rows - g), std::abs(cols - g)) / std::max(std::abs(g), 1.0));
      }

    // loss
    const Tensor logits = random_tensor({b, h, w, 5}, rng, -3.0, 3.0);
    std::vector<int> labels(static_cast<std::size_t>(b * h * w));
    std::uniform_int_distribution<int> cls(0, 5);
    for (auto& l : labels) l = cls(rng) == 5 ? decoder::kIgnoreId : cls(rng) % 5;
    labels[0] = 0;
    const double loss = decoder::cross_entropy_loss(logits, labels).item();
    const double oracle = cross_entropy_loop(logits, labels, decoder::kIgnoreId);
    note("cross-entropy", std::abs(loss - oracle) / std::abs(oracle));

    // metrics
    std::vector<int> pred(labels.size());
    for (auto& p : pred) p = cls(rng) % 5;
    eval::ConfusionMatrix cm(5);
    cm.accumulate(pred, labels);
    const auto rep = eval::compute_metrics(cm);
    const auto counts = count_loop(pred, labels, 5, decoder::kIgnoreId);
    for (int k = 0; k < 5; ++k) {
      const auto& pc = rep.per_class[k];
      const auto& o = counts[k];
      const bool same = pc.tp == o.tp && pc.fp == o.fp && pc.fn == o.fn;
      note("metric counts", same ? 0.0 : 1.0);
      if (o.tp + o.fp + o.fn > 0) {
        const double iou = static_cast<double>(o.tp) / static_cast<double>(o.tp + o.fp + o.fn);
        note("metric iou", std::abs(*pc.iou - iou) / std::max(iou, 1e-300));
      }
    }
  }

  // optimizer step
  {
    auto make = [](double v, nn::ParamGroup g) {
      auto p = std::make_shared<nn::Parameter>();
      p->name = "p";
      p->tensor = Tensor::from({1, 1, 1, 1}, {v}, true);
      p->group = g;
      p->decay = true;
      return p;
    };
    auto head = make(0.7, nn::ParamGroup::decoder), bb = make(-0.3, nn::ParamGroup::backbone);
    train::AdamWOptions o;
    train::AdamW opt({head, bb}, o);
    double ph = 0.7, pb = -0.3, mh = 0, vh = 0, mb = 0, vb = 0;
    std::uniform_real_distribution<double> gd(-2.0, 2.0);
    for (int t = 1; t <= 20; ++t) {
      const double g = gd(rng), lr = train::lr_at(t - 1, 20, 1e-3, 0.9);
      Tensor(head->tensor).mutable_grad()[0] = g;
      Tensor(bb->tensor).mutable_grad()[0] = -g;
      opt.step(lr);
      ph = adamw_scalar_oracle(ph, g, lr, o.beta1, o.beta2, o.eps, o.weight_decay, t, mh, vh);
      pb = adamw_scalar_oracle(pb, -g, o.backbone_lr_multiplier * lr, o.beta1, o.beta2, o.eps, o.weight_decay, t, mb,
                               vb);
      note("adamw step",
           std::max(std::abs(head->tensor.item() - ph) / std::abs(ph), std::abs(bb->tensor.item() - pb) / std::abs(pb)));
    }
  }

  const double secs = seconds_since(t0);
  return {worst <= kFidelityTol && secs < kFidelitySeconds,
          "max rel error " + fmt(worst) + " (" + worst_name + ") <= " + fmt(kFidelityTol) + ", " + fmt(secs) +
              " s < " + fmt(kFidelitySeconds) + " s"};
}

// ---------------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string where;
  std::int64_t checked = 0;
  auto record = [&](const std::string& name, const GradCheck& r) {
    checked += r.checked;
    if (!(r.max_rel_error <= worst)) {
      worst = r.max_rel_error;
      where = name + " " + r.worst;
    }
  };
  auto with = [](const nn::ParamList& params, std::vector<GradTarget> inputs) {
    auto t = targets_of(params);
    t.insert(t.end(), inputs.begin(), inputs.end());
    return t;
  };

  std::mt19937_64 rng(202);
  auto input = [&](const nn::Shape& s) { return random_tensor(s, rng, -1.0, 1.0, true); };
  {
    nn::ParamList p;
    const encoder::GlobalFeatureEnhancer m(builder(p, rng), 8, 2, 1e-6);
    randomize(p, rng);
    Tensor a = input({1, 3, 3, 8});
    const Tensor w = random_tensor({1, 3, 3, 8}, rng);
    record("gfe", grad_check([&] { return weighted_sum(m.forward(a), w); }, with(p, {{"in", a}}), rng));
  }
  {
    nn::ParamList p;
    const encoder::LocalFeatureExtractor m(builder(p, rng), 4, 2);
    randomize(p, rng);
    Tensor a = input({1, 4, 4, 4});
    const Tensor w = random_tensor({1, 4, 4, 4}, rng);
    record("lfe", grad_check([&] { return weighted_sum(m.forward(a), w); }, with(p, {{"in", a}}), rng));
  }
  {
    nn::ParamList p;
    const fusion::GlobalRecalibration m(builder(p, rng), 4, 1e-6);
    randomize(p, rng);
    fill(m.kappa, 0.6);
    fill(m.gamma, -0.4);
    Tensor a = input({1, 3, 3, 4}), b = input({1, 3, 3, 4});
    const Tensor w = random_tensor({1, 3, 3, 4}, rng);
    record("gfrm", grad_check([&] { return weighted_sum(m.forward(a, b), w); }, with(p, {{"a", a}, {"b", b}}), rng));
  }
  for (bool dup : {false, true}) {
    nn::ParamList p;
    const fusion::LocalFeatureFusion m(builder(p, rng), 3, 12, dup);
    randomize(p, rng);
    Tensor a = input({1, 3, 4, 3}), b = input({1, 3, 4, 3});
    const Tensor w = random_tensor({1, 3, 4, 3}, rng);
    record("lffm", grad_check([&] { return weighted_sum(m.forward(a, b), w); }, with(p, {{"a", a}, {"b", b}}), rng));
  }
  for (bool ind : {false, true}) {
    nn::ParamList p;
    const fusion::FeatureIntegration m(builder(p, rng), 4, ind);
    randomize(p, rng);
    Tensor a = input({2, 3, 4, 4}), b = input({2, 3, 4, 4});
    const Tensor w = random_tensor({2, 3, 4, 4}, rng);
    record("feim", grad_check([&] { return weighted_sum(m.forward(a, b), w); }, with(p, {{"a", a}, {"b", b}}), rng));
  }
  {
    nn::ParamList p;
    const std::array<int, 4> ch{4, 4, 6, 6};
    const decoder::SegmentationHead head(p, rng, ch, 3);
    randomize(p, rng);
    fusion::FusedPyramid pyr;
    std::vector<GradTarget> inputs;
    for (int i = 0; i < 4; ++i) {
      pyr[i] = input({1, 8 >> i, 8 >> i, ch[i]});
      inputs.push_back({"stage" + std::to_string(i + 1), pyr[i]});
    }
    std::vector<int> labels(32 * 32);
    std::uniform_int_distribution<int> cls(0, 2);
    for (auto& l : labels) l = cls(rng);
    record("decoder",
           grad_check([&] { return decoder::cross_entropy_loss(head.forward(pyr), labels); }, with(p, inputs), rng));
  }
  {
    ModelConfig cfg;
    cfg.channels = {4, 4, 8, 8};
    cfg.depths = {1, 1, 1, 1};
    cfg.gfe_heads = {1, 2, 2, 4};
    cfg.lfe_expansion = 2;
    cfg.num_classes = 3;
    SegmentationModel model(cfg, 3);
    randomize(model.parameters(), rng, -0.3, 0.3);
    for (const auto& st : model.fusion().stages()) {
      fill(st.gfrm->kappa, 0.5);
      fill(st.gfrm->gamma, 0.5);
    }
    Tensor rgb = random_tensor({1, 32, 32, 3}, rng, 0.0, 1.0, true);
    Tensor x = random_tensor({1, 32, 32, 3}, rng, 0.0, 1.0, true);
    std::vector<int> labels(32 * 32);
    std::uniform_int_distribution<int> cls(0, 2);
    for (auto& l : labels) l = cls(rng);
    record("end-to-end",
           grad_check([&] { return decoder::cross_entropy_loss(model.forward(rgb, x), labels); },
                      with(model.parameters(), {{"rgb", rgb}, {"x", x}}), rng, 3));
  }
  const double secs = seconds_since(t0);
  return {worst < kGradTol && secs < kGradSeconds,
          "max rel error " + fmt(worst) + " < " + fmt(kGradTol) + " over " + std::to_string(checked) +
              " elements (worst: " + where + "), " + fmt(secs) + " s < " + fmt(kGradSeconds) + " s"};
}

// ---------------------------------------------------------------------------

Outcome identities() {
  // Exercised on every stage of a toy model with random weights and inputs.
  const auto cfg = toy_config({});
  SegmentationModel model(cfg.model, 7);
  std::mt19937_64 rng(303);
  randomize(model.parameters(), rng);
  int checks = 0, failures = 0;
  std::string failed;
  auto expect = [&](bool ok, const std::string& what) {
    ++checks;
    if (!ok) {
      ++failures;
      if (failed.empty()) failed = " first failure: " + what;
    }
  };

  const auto& enc = model.encoder();
  for (int i = 0; i < 4; ++i) {
    const int c = cfg.model.channels[i];
    const nn::Shape s{2, 8 >> (i / 2), 8 >> (i / 2), c};
    const Tensor a = random_tensor(s, rng, -2.0, 2.0), b = random_tensor(s, rng, -2.0, 2.0);
    const std::string stage = " at stage " + std::to_string(i + 1);

    const auto& gfrm = *model.fusion().stages()[i].gfrm;
    fill(gfrm.kappa, 0.0);
    fill(gfrm.gamma, 0.0);
    const auto [r, x] = gfrm.cross_attend(a, b);
    expect(bit_equal(r, a) && bit_equal(x, b), "kappa = gamma = 0 cross-attend" + stage);

    const auto& lfe = enc.lfe_rgb()[i];
    fill(lfe.project.weight, 0.0);
    fill(lfe.project.bias, 0.0);
    expect(bit_equal(lfe.forward(a), a), "zeroed lfe" + stage);

    const auto& gfe = enc.gfe_rgb()[i];
    fill(gfe.value.weight, 0.0);
    fill(gfe.value.bias, 0.0);
    expect(bit_equal(gfe.forward(a), gfe.norm(a)), "zeroed gfe attention" + stage);

    const auto& feim = *model.fusion().stages()[i].feim;
    fill(feim.gate.weight, 0.0);
    fill(feim.gate.bias, 0.0);
    expect(bit_equal(feim.forward(a, b), nn::scale(nn::add(a, b), 0.25)), "zeroed feim" + stage);
  }
  return {failures == 0, std::to_string(checks - failures) + "/" + std::to_string(checks) + " exact" + failed};
}

// ---------------------------------------------------------------------------

Outcome weight_sharing() {
  const SegmentationModel shared(toy_config({{"backbone.sharing", "shared"}}).model, 0);
  const SegmentationModel separate(toy_config({{"backbone.sharing", "separate"}}).model, 0);
  const std::int64_t a = count_parameters(shared), b = count_parameters(separate);
  const std::int64_t one = count_parameters(shared, nn::ParamGroup::backbone);
  std::cout << "  shared " << a << ", separate " << b << ", one backbone " << one << "\n";
  return {a == b - one && one > 0, "shared " + std::to_string(a) + " == separate " + std::to_string(b) +
                                       " - backbone " + std::to_string(one)};
}

// ---------------------------------------------------------------------------

Outcome overfit() {
  const auto t0 = Clock::now();
  const auto cfg = toy_config({{"train.base_lr", "2e-3"},
                               {"train.epochs", "60"},
                               {"train.max_steps", std::to_string(kOverfitSteps)},
                               {"train.eval_every", "1"},
                               {"data.augment", "off"}});
  const data::Dataset pairs = synthetic(10, 404);
  train::Trainer trainer(cfg, pairs);
  const auto result = trainer.run();
  const auto rep = eval::compute_metrics(train::evaluate(trainer.model(), pairs));
  const double secs = seconds_since(t0);
  return {rep.pixel_accuracy >= kOverfitAcc && result.steps <= kOverfitSteps && secs < kOverfitSeconds,
          "pixel accuracy " + fmt(100 * rep.pixel_accuracy) + "% >= " + fmt(100 * kOverfitAcc) + "% after " +
              std::to_string(result.steps) + " steps, " + fmt(secs) + " s < " + fmt(kOverfitSeconds) + " s"};
}

// ---------------------------------------------------------------------------

Outcome fusion_benefit() {
  const auto t0 = Clock::now();
  const auto report = data::analyze(data::SyntheticTaskSpec::default_task());
  const data::Dataset train_set = synthetic(500, 505), val_set = synthetic(100, 506);

  auto joint_ious = [&](bool zero_x) {
    const auto cfg = toy_config({{"train.base_lr", "2e-3"},
                                 {"train.epochs", "6"},
                                 {"train.eval_every", "1"},
                                 {"train.seed", "0"},
                                 {"data.zero_x", zero_x ? "on" : "off"}});
    train::Trainer trainer(cfg, train_set);
    trainer.run();
    const auto rep = eval::compute_metrics(train::evaluate(trainer.model(), val_set, zero_x));
    std::vector<double> out;
    for (int k : report.joint_only_classes) out.push_back(rep.per_class[k].iou.value_or(0.0));
    return out;
  };
  const auto full = joint_ious(false), blind = joint_ious(true);
  const double secs = seconds_since(t0);

  bool ok = !full.empty() && secs < kFusionSeconds;
  std::string detail;
  for (std::size_t i = 0; i < full.size(); ++i) {
    const int k = report.joint_only_classes[i];
    ok = ok && full[i] >= kJointIouFull && blind[i] <= kJointIouZeroX;
    detail += "class " + std::to_string(k) + " IoU " + fmt(full[i]) + " >= " + fmt(kJointIouFull) + ", zero-X " +
              fmt(blind[i]) + " <= " + fmt(kJointIouZeroX) + " (single-modality Bayes " +
              fmt(std::max(report.rgb_only[k], report.x_only[k])) + "); ";
  }
  return {ok, detail + fmt(secs) + " s < " + fmt(kFusionSeconds) + " s"};
}

// ---------------------------------------------------------------------------

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

Outcome ablation_smoke() {
  const fs::path dir = scratch("ablation");
  const std::string cli = RGBX_CLI;
  const std::string gen = cli + " gen-synthetic --spec " + (fs::path(RGBX_CONFIG_DIR) / "synthetic.spec").string();
  if (std::system((gen + " --n 16 --seed 1 --out " + (dir / "train").string() + " > /dev/null").c_str()) != 0 ||
      std::system((gen + " --n 4 --seed 2 --out " + (dir / "val").string() + " > /dev/null").c_str()) != 0) {
    return {false, "could not generate the smoke dataset"};
  }
  const fs::path grid = fs::path(RGBX_CONFIG_DIR) / "ablation.grid";
  const std::string cmd = cli + " ablate --grid " + grid.string() + " --out " + (dir / "out").string() +
                          " --set data.train_dir=" + (dir / "train").string() +
                          " --set data.val_dir=" + (dir / "val").string() + " > " + (dir / "log.txt").string();
  const int status = std::system(cmd.c_str());
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;

  const auto expected = train::AblationGrid::load(grid).rows;
  std::ifstream in(dir / "out" / "ablation.csv");
  std::string line;
  std::getline(in, line);
  const auto header = split(line);
  bool ok = code == 0 && header.size() == 7 && header[0] == "group" && header[2] == "miou";
  std::size_t n = 0, encoder_rows = 0, fusion_rows = 0;
  std::string params_line;
  while (std::getline(in, line)) {
    const auto f = split(line);
    if (f.size() != header.size() || n >= expected.size()) {
      ok = false;
      break;
    }
    const bool finite = !f[2].empty() && std::isfinite(std::stod(f[2])) && std::isfinite(std::stod(f[5]));
    ok = ok && f[0] == expected[n].group && f[1] == expected[n].variant && f[6] == "ok" && finite;
    encoder_rows += f[0] == "encoder";
    fusion_rows += f[0] == "fusion";
    if (f[0] == "backbone") params_line += (params_line.empty() ? "" : ", ") + f[1] + " " + f[3] + " params";
    ++n;
  }
  ok = ok && n == expected.size() && encoder_rows == 4 && fusion_rows == 6;
  return {ok, "exit " + std::to_string(code) + ", " + std::to_string(n) + "/" + std::to_string(expected.size()) +
                  " rows ok (" + std::to_string(encoder_rows) + " encoder, " + std::to_string(fusion_rows) +
                  " fusion); " + params_line};
}

// ---------------------------------------------------------------------------

Outcome metrics_oracle() {
  std::mt19937_64 rng(606);
  int mismatches = 0;
  double worst_identity = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = std::uniform_int_distribution<int>(1, 5)(rng);
    const int n = std::uniform_int_distribution<int>(1, 400)(rng);
    std::uniform_int_distribution<int> cls(0, k - 1);
    std::bernoulli_distribution ignore(0.1);
    std::vector<int> pred(n), truth(n);
    for (int i = 0; i < n; ++i) {
      pred[i] = cls(rng);
      truth[i] = ignore(rng) ? eval::kIgnoreId : cls(rng);
    }
    truth[0] = cls(rng);  // keep at least one counted pixel
    eval::ConfusionMatrix cm(k);
    cm.accumulate(pred, truth);
    const auto rep = eval::compute_metrics(cm);
    const auto counts = count_loop(pred, truth, k, eval::kIgnoreId);
    std::int64_t counted = 0, correct = 0;
    for (int c = 0; c < k; ++c) {
      const auto& m = rep.per_class[c];
      const auto& o = counts[c];
      counted += o.tp + o.fn;
      correct += o.tp;
      const auto ratio = [](std::int64_t a, std::int64_t b) {
        return b == 0 ? std::optional<double>() : std::optional<double>(static_cast<double>(a) / static_cast<double>(b));
      };
      bool same = m.tp == o.tp && m.fp == o.fp && m.fn == o.fn;
      same = same && m.iou == ratio(o.tp, o.tp + o.fp + o.fn) && m.pre == ratio(o.tp, o.tp + o.fp) &&
             m.rec == ratio(o.tp, o.tp + o.fn) && m.acc == m.rec && m.fsc == ratio(2 * o.tp, 2 * o.tp + o.fp + o.fn);
      mismatches += !same;
      if (m.iou && m.fsc) worst_identity = std::max(worst_identity, std::abs(*m.fsc - 2 * *m.iou / (1 + *m.iou)));
    }
    mismatches += rep.pixel_count != counted ||
                  rep.pixel_accuracy != static_cast<double>(correct) / static_cast<double>(counted);
  }
  return {mismatches == 0 && worst_identity <= kFscIdentityTol,
          std::to_string(mismatches) + " mismatches over 1000 pairs, Fsc identity error " + fmt(worst_identity) +
              " <= " + fmt(kFscIdentityTol)};
}

// ---------------------------------------------------------------------------

Outcome determinism_resume() {
  const auto cfg = toy_config({{"train.epochs", "3"}, {"train.seed", "11"}});
  const data::Dataset train_set = synthetic(6, 707), val_set = synthetic(2, 708);

  train::Trainer a(cfg, train_set, val_set), b(cfg, train_set, val_set);
  const auto ra = a.run(), rb = b.run();
  const bool identical = ra.curve == rb.curve && a.checkpoint() == b.checkpoint();

  const fs::path dir = scratch("resume");
  train::Trainer first(cfg, train_set, val_set);
  first.run({.stop_after_epoch = 1});
  train::save_checkpoint(first.checkpoint(), dir / "mid.ckpt");
  train::Trainer second(cfg, train_set, val_set);
  second.resume(train::load_checkpoint(dir / "mid.ckpt"));
  const auto rs = second.run();
  const bool resumed = rs.curve == ra.curve && second.checkpoint() == a.checkpoint();

  return {identical && resumed && !ra.curve.empty(),
          std::string("same-seed runs ") + (identical ? "bit-identical" : "differ") + ", resume after epoch 1 " +
              (resumed ? "equals" : "differs from") + " the uninterrupted run (" + std::to_string(ra.curve.size()) +
              " epochs, final loss " + fmt(ra.final_loss) + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"equation_fidelity", equation_fidelity}, {"gradients", gradients},
      {"identities", identities},               {"weight_sharing", weight_sharing},
      {"overfit", overfit},                     {"fusion_benefit", fusion_benefit},
      {"ablation_smoke", ablation_smoke},       {"metrics_oracle", metrics_oracle},
      {"determinism_resume", determinism_resume}};

  CLI::App app{"acceptance checks"};
  std::string only;
  app.add_option("--only", only, "run a single criterion");
  CLI11_PARSE(app, argc, argv);

  int failures = 0, ran = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && only != name) continue;
    ++ran;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  if (ran == 0) {
    std::cerr << "unknown criterion '" << only << "'\n";
    return 2;
  }
  return failures;
}
