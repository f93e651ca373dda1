#include "rgbx/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <cereal/archives/portable_binary.hpp>
#include <cereal/types/optional.hpp>
#include <cereal/types/string.hpp>
#include <cereal/types/vector.hpp>

#include "rgbx/decoder.hpp"
#include "rgbx/errors.hpp"

namespace rgbx::train {

template <class Archive>
void serialize(Archive& ar, NamedArray& a) {
  ar(a.name, a.values);
}

template <class Archive>
void serialize(Archive& ar, EpochRecord& r) {
  ar(r.epoch, r.mean_loss, r.val_miou, r.val_pixel_acc, r.steps, r.lr);
}

template <class Archive>
void serialize(Archive& ar, Checkpoint& c) {
  ar(c.config_text, c.config_hash, c.params, c.moment1, c.moment2, c.step, c.epoch, c.rng_state, c.curve,
     c.best_miou);
}

namespace {

constexpr std::uint32_t kCheckpointMagic = 0x52474258;  // "RGBX"
constexpr std::uint32_t kCheckpointVersion = 1;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <std::size_t N>
std::array<int, N> to_array(const std::vector<int>& v, const std::string& key) {
  if (v.size() != N) throw ConfigError(key + " needs " + std::to_string(N) + " values, got " + std::to_string(v.size()));
  std::array<int, N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

template <std::size_t N>
std::string join(const std::array<int, N>& a) {
  std::string s;
  for (std::size_t i = 0; i < N; ++i) s += (i ? " " : "") + std::to_string(a[i]);
  return s;
}

fs::path resolve(const std::string& value, const fs::path& base_dir) {
  if (value.empty()) return {};
  fs::path p(value);
  return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char ch : s) out += std::isalnum(static_cast<unsigned char>(ch)) ? ch : '_';
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

}  // namespace

const std::set<std::string>& TrainConfig::known_keys() {
  static const std::set<std::string> keys = {
      "train.base_lr",      "train.weight_decay", "train.backbone_lr_multiplier",
      "train.poly_power",   "train.beta1",        "train.beta2",
      "train.adam_eps",     "train.epochs",       "train.batch_size",
      "train.seed",         "train.max_steps",    "train.eval_every",
      "model.channels",     "model.depths",       "model.gfe_heads",
      "model.lfe_expansion", "model.num_classes", "model.norm_eps",
      "backbone.kind",      "backbone.sharing",   "encoder.gfe",
      "encoder.lfe",        "fusion.global",      "fusion.local",
      "fusion.integrate",   "data.train_dir",     "data.val_dir",
      "data.zero_x",        "data.augment",       "data.crop",
      "data.scale_min",     "data.scale_max",     "data.flip_prob",
      "data.brightness",    "data.contrast",      "data.saturation",
      "data.hue"};
  return keys;
}

TrainConfig TrainConfig::from_config(const Config& cfg, const fs::path& base_dir) {
  cfg.require_known(known_keys());
  TrainConfig t;
  t.base_lr = cfg.get_double("train.base_lr", t.base_lr);
  t.weight_decay = cfg.get_double("train.weight_decay", t.weight_decay);
  t.backbone_lr_multiplier = cfg.get_double("train.backbone_lr_multiplier", t.backbone_lr_multiplier);
  t.poly_power = cfg.get_double("train.poly_power", t.poly_power);
  t.beta1 = cfg.get_double("train.beta1", t.beta1);
  t.beta2 = cfg.get_double("train.beta2", t.beta2);
  t.adam_eps = cfg.get_double("train.adam_eps", t.adam_eps);
  t.epochs = cfg.get_int("train.epochs", t.epochs);
  t.batch_size = cfg.get_int("train.batch_size", t.batch_size);
  if (auto seed = cfg.get("train.seed")) {
    try {
      std::size_t used = 0;
      t.seed = std::stoull(*seed, &used);
      if (used != seed->size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ConfigError("'" + *seed + "' is not a valid seed (key train.seed)");
    }
  }
  t.max_steps = cfg.get_int("train.max_steps", t.max_steps);
  t.eval_every = cfg.get_int("train.eval_every", t.eval_every);

  ModelConfig& m = t.model;
  if (cfg.has("model.channels")) m.channels = to_array<4>(cfg.get_ints("model.channels"), "model.channels");
  if (cfg.has("model.depths")) m.depths = to_array<4>(cfg.get_ints("model.depths"), "model.depths");
  if (cfg.has("model.gfe_heads")) m.gfe_heads = to_array<4>(cfg.get_ints("model.gfe_heads"), "model.gfe_heads");
  m.lfe_expansion = cfg.get_int("model.lfe_expansion", m.lfe_expansion);
  m.num_classes = cfg.get_int("model.num_classes", m.num_classes);
  m.norm_eps = cfg.get_double("model.norm_eps", m.norm_eps);
  m.backbone = cfg.get_string("backbone.kind", m.backbone);
  if (auto v = cfg.get("backbone.sharing")) m.sharing = parse_sharing(*v);
  if (auto v = cfg.get("encoder.gfe")) m.gfe = parse_on_off("encoder.gfe", *v);
  if (auto v = cfg.get("encoder.lfe")) m.lfe = parse_on_off("encoder.lfe", *v);
  if (auto v = cfg.get("fusion.global")) m.global = parse_global_fusion(*v);
  if (auto v = cfg.get("fusion.local")) m.local = parse_local_fusion(*v);
  if (auto v = cfg.get("fusion.integrate")) m.integrate = parse_integration(*v);

  t.train_dir = resolve(cfg.get_string("data.train_dir", ""), base_dir);
  t.val_dir = resolve(cfg.get_string("data.val_dir", ""), base_dir);
  t.zero_x = cfg.get_bool("data.zero_x", false);
  data::AugmentConfig& a = t.augment;
  a.enabled = cfg.get_bool("data.augment", a.enabled);
  a.crop = cfg.get_int("data.crop", a.crop);
  a.scale_min = cfg.get_double("data.scale_min", a.scale_min);
  a.scale_max = cfg.get_double("data.scale_max", a.scale_max);
  a.flip_prob = cfg.get_double("data.flip_prob", a.flip_prob);
  a.brightness = cfg.get_double("data.brightness", a.brightness);
  a.contrast = cfg.get_double("data.contrast", a.contrast);
  a.saturation = cfg.get_double("data.saturation", a.saturation);
  a.hue = cfg.get_double("data.hue", a.hue);
  t.validate();
  return t;
}

TrainConfig TrainConfig::load(const fs::path& path) {
  return from_config(Config::load(path), path.parent_path());
}

void TrainConfig::validate() const {
  model.validate();
  if (!(base_lr > 0) || !(backbone_lr_multiplier > 0)) throw ConfigError("learning rates must be positive");
  if (weight_decay < 0) throw ConfigError("train.weight_decay must be non-negative");
  if (!(poly_power > 0)) throw ConfigError("train.poly_power must be positive");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("AdamW betas must lie in [0, 1)");
  if (!(adam_eps > 0)) throw ConfigError("train.adam_eps must be positive");
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (max_steps < 0) throw ConfigError("train.max_steps must be non-negative");
  if (eval_every < 1) throw ConfigError("train.eval_every must be at least 1");
  augment.validate();
  if (batch_size > 1 && augment.enabled && augment.crop == 0 && augment.scale_min != augment.scale_max) {
    throw ConfigError("random rescaling with batch_size > 1 needs data.crop so samples stack");
  }
}

std::string TrainConfig::to_text() const {
  Config c;
  c.set("train.base_lr", fmt_double(base_lr));
  c.set("train.weight_decay", fmt_double(weight_decay));
  c.set("train.backbone_lr_multiplier", fmt_double(backbone_lr_multiplier));
  c.set("train.poly_power", fmt_double(poly_power));
  c.set("train.beta1", fmt_double(beta1));
  c.set("train.beta2", fmt_double(beta2));
  c.set("train.adam_eps", fmt_double(adam_eps));
  c.set("train.epochs", std::to_string(epochs));
  c.set("train.batch_size", std::to_string(batch_size));
  c.set("train.seed", std::to_string(seed));
  c.set("train.max_steps", std::to_string(max_steps));
  c.set("train.eval_every", std::to_string(eval_every));
  c.set("model.channels", join(model.channels));
  c.set("model.depths", join(model.depths));
  c.set("model.gfe_heads", join(model.gfe_heads));
  c.set("model.lfe_expansion", std::to_string(model.lfe_expansion));
  c.set("model.num_classes", std::to_string(model.num_classes));
  c.set("model.norm_eps", fmt_double(model.norm_eps));
  c.set("backbone.kind", model.backbone);
  c.set("backbone.sharing", std::string(to_string(model.sharing)));
  c.set("encoder.gfe", model.gfe ? "on" : "off");
  c.set("encoder.lfe", model.lfe ? "on" : "off");
  c.set("fusion.global", std::string(to_string(model.global)));
  c.set("fusion.local", std::string(to_string(model.local)));
  c.set("fusion.integrate", std::string(to_string(model.integrate)));
  if (!train_dir.empty()) c.set("data.train_dir", train_dir.string());
  if (!val_dir.empty()) c.set("data.val_dir", val_dir.string());
  c.set("data.zero_x", zero_x ? "on" : "off");
  c.set("data.augment", augment.enabled ? "on" : "off");
  c.set("data.crop", std::to_string(augment.crop));
  c.set("data.scale_min", fmt_double(augment.scale_min));
  c.set("data.scale_max", fmt_double(augment.scale_max));
  c.set("data.flip_prob", fmt_double(augment.flip_prob));
  c.set("data.brightness", fmt_double(augment.brightness));
  c.set("data.contrast", fmt_double(augment.contrast));
  c.set("data.saturation", fmt_double(augment.saturation));
  c.set("data.hue", fmt_double(augment.hue));
  return c.serialize();
}

double lr_at(std::int64_t step, std::int64_t total_steps, double base_lr, double power) {
  if (total_steps <= 0 || step < 0 || step > total_steps) {
    throw ContractError("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  }
  return base_lr * std::pow(1.0 - static_cast<double>(step) / static_cast<double>(total_steps), power);
}

AdamW::AdamW(nn::ParamList params, AdamWOptions options) : params_(std::move(params)), opt_(options) {
  for (const auto& p : params_) {
    const auto n = static_cast<std::size_t>(p->count());
    moments_.push_back({std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
  }
}

void AdamW::step(double lr) {
  for (const auto& p : params_) {
    if (!p->trainable || !p->tensor.has_grad()) continue;
    for (double g : p->tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + p->name);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    nn::Parameter& p = *params_[i];
    // like torch, a parameter that never received a gradient is left alone
    if (!p.trainable || !p.tensor.has_grad()) continue;
    const double group_lr = p.group == nn::ParamGroup::backbone ? lr * opt_.backbone_lr_multiplier : lr;
    const double decay = p.decay ? group_lr * opt_.weight_decay : 0.0;
    auto w = p.tensor.mutable_data();
    const auto g = p.tensor.grad();
    auto& m = moments_[i].m;
    auto& v = moments_[i].v;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      w[j] -= decay * w[j];
      m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * gj;
      v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * gj * gj;
      w[j] -= group_lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + opt_.eps);
    }
  }
}

void AdamW::restore(std::int64_t steps, std::vector<Moments> moments) {
  if (moments.size() != moments_.size()) throw ContractError("AdamW::restore: parameter count mismatch");
  for (std::size_t i = 0; i < moments.size(); ++i) {
    if (moments[i].m.size() != moments_[i].m.size() || moments[i].v.size() != moments_[i].v.size()) {
      throw ContractError("AdamW::restore: moment size mismatch for " + params_[i]->name);
    }
  }
  t_ = steps;
  moments_ = std::move(moments);
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream os(std::ios::binary);
  {
    cereal::PortableBinaryOutputArchive ar(os);
    ar(kCheckpointMagic, kCheckpointVersion, ckpt);
  }
  return os.str();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  Checkpoint ckpt;
  std::uint32_t magic = 0, version = 0;
  try {
    cereal::PortableBinaryInputArchive ar(is);
    ar(magic, version);
    if (magic != kCheckpointMagic || version != kCheckpointVersion) throw DataError("not a checkpoint file");
    ar(ckpt);
  } catch (const cereal::Exception& e) {
    throw DataError(std::string("truncated or corrupt checkpoint: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

void load_weights(SegmentationModel& model, const Checkpoint& ckpt) {
  const auto& params = model.parameters();
  if (ckpt.params.size() != params.size()) throw DataError("checkpoint parameter list does not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const NamedArray& a = ckpt.params[i];
    if (a.name != params[i]->name || static_cast<std::int64_t>(a.values.size()) != params[i]->count()) {
      throw DataError("checkpoint entry " + a.name + " does not match parameter " + params[i]->name);
    }
    auto w = params[i]->tensor.mutable_data();
    std::copy(a.values.begin(), a.values.end(), w.begin());
  }
}

eval::ConfusionMatrix evaluate(const SegmentationModel& model, const data::Dataset& dataset, bool zero_x) {
  nn::NoGradGuard no_grad;
  eval::ConfusionMatrix cm(model.config().num_classes);
  for (const auto& pair : dataset.pairs()) {
    const data::SamplePair p = data::resize_to_multiple(pair);
    const data::Batch batch = data::make_batch(std::span<const data::SamplePair>(&p, 1), zero_x);
    const auto pred = decoder::argmax_classes(model.forward(batch.rgb, batch.x));
    cm.accumulate(pred, batch.labels, dataset.meta().ignore_id);
  }
  return cm;
}

Trainer::Trainer(TrainConfig cfg)
    : Trainer(cfg, [&] {
        if (cfg.train_dir.empty()) throw ConfigError("data.train_dir is not set");
        return data::Dataset(cfg.train_dir);
      }(),
      cfg.val_dir.empty() ? std::nullopt : std::optional<data::Dataset>(data::Dataset(cfg.val_dir))) {}

Trainer::Trainer(TrainConfig cfg, data::Dataset train_set, std::optional<data::Dataset> val_set)
    : cfg_(std::move(cfg)), train_set_(std::move(train_set)), val_set_(std::move(val_set)), rng_(cfg_.seed) {
  cfg_.validate();
  const int K = cfg_.model.num_classes;
  if (train_set_.meta().num_classes != K) {
    throw ConfigError("training data has " + std::to_string(train_set_.meta().num_classes) +
                      " classes but model.num_classes = " + std::to_string(K));
  }
  if (val_set_ && val_set_->meta().num_classes != K) {
    throw ConfigError("validation data has " + std::to_string(val_set_->meta().num_classes) +
                      " classes but model.num_classes = " + std::to_string(K));
  }
  if (train_set_.size() == 0) throw DataError("training set is empty");
  model_ = std::make_unique<SegmentationModel>(cfg_.model, cfg_.seed);
  optimizer_ = std::make_unique<AdamW>(
      model_->parameters(),
      AdamWOptions{cfg_.beta1, cfg_.beta2, cfg_.adam_eps, cfg_.weight_decay, cfg_.backbone_lr_multiplier});
  const std::int64_t per_epoch =
      (static_cast<std::int64_t>(train_set_.size()) + cfg_.batch_size - 1) / cfg_.batch_size;
  total_steps_ = per_epoch * cfg_.epochs;
  if (cfg_.max_steps > 0) total_steps_ = std::min<std::int64_t>(total_steps_, cfg_.max_steps);
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.config_text = cfg_.to_text();
  c.config_hash = cfg_.hash();
  const auto& params = model_->parameters();
  const auto& moments = optimizer_->moments();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto w = params[i]->tensor.data();
    c.params.push_back({params[i]->name, {w.begin(), w.end()}});
    c.moment1.push_back({params[i]->name, moments[i].m});
    c.moment2.push_back({params[i]->name, moments[i].v});
  }
  c.step = optimizer_->steps();
  c.epoch = epoch_;
  std::ostringstream rng;
  rng << rng_;
  c.rng_state = rng.str();
  c.curve = curve_;
  c.best_miou = best_miou_;
  return c;
}

void Trainer::resume(const Checkpoint& ckpt) {
  if (ckpt.config_hash != cfg_.hash()) {
    throw ConfigError("checkpoint was written with a different configuration");
  }
  load_weights(*model_, ckpt);
  std::vector<AdamW::Moments> moments;
  for (std::size_t i = 0; i < ckpt.moment1.size() && i < ckpt.moment2.size(); ++i) {
    moments.push_back({ckpt.moment1[i].values, ckpt.moment2[i].values});
  }
  optimizer_->restore(ckpt.step, std::move(moments));
  std::istringstream rng(ckpt.rng_state);
  rng >> rng_;
  if (!rng) throw DataError("checkpoint RNG state is corrupt");
  epoch_ = ckpt.epoch;
  curve_ = ckpt.curve;
  best_miou_ = ckpt.best_miou;
}

double Trainer::train_epoch(std::ostream* log) {
  std::vector<std::size_t> order(train_set_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng_);

  double loss_sum = 0.0;
  int batches = 0;
  const auto B = static_cast<std::size_t>(cfg_.batch_size);
  for (std::size_t start = 0; start < order.size(); start += B) {
    if (optimizer_->steps() >= total_steps_) break;
    std::vector<data::SamplePair> samples;
    for (std::size_t i = start; i < std::min(order.size(), start + B); ++i) {
      const data::SamplePair& src = train_set_[order[i]];
      std::mt19937_64 sample_rng(data::sample_seed(cfg_.seed, epoch_, src.id));
      samples.push_back(data::augment(src, sample_rng, cfg_.augment));
    }
    const data::Batch batch = data::make_batch(std::span<const data::SamplePair>(samples), cfg_.zero_x);
    const nn::Tensor logits = model_->forward(batch.rgb, batch.x);
    const nn::Tensor loss = decoder::cross_entropy_loss(logits, batch.labels);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      throw NumericError("loss became non-finite at step " + std::to_string(optimizer_->steps()));
    }
    nn::backward(loss);
    optimizer_->step(lr_at(optimizer_->steps(), total_steps_, cfg_.base_lr, cfg_.poly_power));
    model_->zero_grad();
    loss_sum += value;
    ++batches;
  }
  if (log && batches == 0) *log << "epoch " << epoch_ + 1 << ": step budget exhausted\n";
  return batches ? loss_sum / batches : 0.0;
}

TrainResult Trainer::run(const RunOptions& options) {
  if (options.out_dir) fs::create_directories(*options.out_dir);
  std::optional<eval::MetricsReport> last_report;
  while (epoch_ < cfg_.epochs && optimizer_->steps() < total_steps_) {
    if (options.stop_after_epoch && epoch_ >= *options.stop_after_epoch) break;
    EpochRecord rec;
    rec.mean_loss = train_epoch(options.log);
    ++epoch_;
    rec.epoch = epoch_;
    rec.steps = optimizer_->steps();
    rec.lr = lr_at(std::max<std::int64_t>(0, rec.steps - 1), total_steps_, cfg_.base_lr, cfg_.poly_power);

    const bool finished = epoch_ == cfg_.epochs || optimizer_->steps() >= total_steps_;
    bool improved = false;
    if (val_set_ && (epoch_ % cfg_.eval_every == 0 || finished)) {
      last_report = eval::compute_metrics(evaluate(*model_, *val_set_, cfg_.zero_x));
      rec.val_miou = last_report->mean_iou;
      rec.val_pixel_acc = last_report->pixel_accuracy;
      if (rec.val_miou && (!best_miou_ || *rec.val_miou > *best_miou_)) {
        best_miou_ = rec.val_miou;
        improved = true;
      }
    }
    curve_.push_back(rec);

    if (options.log) {
      char line[160];
      std::snprintf(line, sizeof line, "epoch %3d  steps %6lld  loss %.6f  lr %.3e", rec.epoch,
                    static_cast<long long>(rec.steps), rec.mean_loss, rec.lr);
      *options.log << line;
      if (rec.val_miou) *options.log << "  val mIoU " << fmt_double(100.0 * *rec.val_miou).substr(0, 7);
      *options.log << "\n" << std::flush;
    }
    if (options.out_dir) {
      const Checkpoint ckpt = checkpoint();
      save_checkpoint(ckpt, *options.out_dir / "last.ckpt");
      if (improved) save_checkpoint(ckpt, *options.out_dir / "best.ckpt");
      std::string csv = "epoch,steps,loss,lr,val_miou,val_pixel_acc\n";
      for (const auto& r : curve_) {
        csv += std::to_string(r.epoch) + "," + std::to_string(r.steps) + "," + fmt_double(r.mean_loss) + "," +
               fmt_double(r.lr) + "," + (r.val_miou ? fmt_double(*r.val_miou) : "") + "," +
               (r.val_pixel_acc ? fmt_double(*r.val_pixel_acc) : "") + "\n";
      }
      write_text(*options.out_dir / "curve.csv", csv);
    }
  }
  if (options.out_dir && last_report) {
    write_text(*options.out_dir / "metrics.json", eval::to_json(*last_report).dump(2) + "\n");
    write_text(*options.out_dir / "metrics.txt", eval::to_text(*last_report));
  }

  TrainResult result;
  result.curve = curve_;
  result.best_miou = best_miou_;
  result.steps = optimizer_->steps();
  result.final_loss = curve_.empty() ? 0.0 : curve_.back().mean_loss;
  return result;
}

AblationGrid AblationGrid::load(const fs::path& path) {
  const Config cfg = Config::load(path);
  AblationGrid grid;
  for (const auto& section : cfg.sections()) {
    if (section.name.empty()) {
      for (const auto& [k, v] : section.entries) {
        if (k == "base") {
          grid.base_config = resolve(v, path.parent_path());
        } else {
          grid.common.set(k, v);
        }
      }
      continue;
    }
    if (section.name.rfind("row ", 0) != 0) {
      throw ConfigError("grid section [" + section.name + "] must be named [row <label>]");
    }
    GridRow row;
    row.variant = section.name.substr(4);
    for (const auto& [k, v] : section.entries) {
      if (k == "group") {
        row.group = v;
      } else {
        row.overrides.set(k, v);
      }
    }
    if (row.group != "backbone" && row.group != "encoder" && row.group != "fusion") {
      throw ConfigError("row '" + row.variant + "': group must be one of backbone, encoder, fusion");
    }
    grid.rows.push_back(std::move(row));
  }
  if (grid.base_config.empty()) throw ConfigError("grid file " + path.string() + " has no 'base = <config>' line");
  if (grid.rows.empty()) throw ConfigError("grid file " + path.string() + " defines no rows");
  return grid;
}

std::vector<AblationResult> run_ablation_grid(const AblationGrid& grid, const fs::path& out_dir, std::ostream* log) {
  const Config base = Config::load(grid.base_config);
  const fs::path base_dir = grid.base_config.parent_path();

  // Validate every row before spending time on training.
  std::vector<TrainConfig> configs;
  for (const auto& row : grid.rows) {
    Config c = base;
    c.merge(grid.common);
    c.merge(row.overrides);
    try {
      configs.push_back(TrainConfig::from_config(c, base_dir));
    } catch (const ConfigError& e) {
      throw ConfigError("row '" + row.variant + "': " + e.what());
    }
  }

  fs::create_directories(out_dir);
  std::vector<AblationResult> results;
  for (std::size_t i = 0; i < grid.rows.size(); ++i) {
    const GridRow& row = grid.rows[i];
    AblationResult r;
    r.group = row.group;
    r.variant = row.variant;
    if (log) *log << "== [" << row.group << "] " << row.variant << "\n" << std::flush;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      Trainer trainer(configs[i]);
      r.params = count_parameters(trainer.model());
      char dir[16];
      std::snprintf(dir, sizeof dir, "%02zu_", i);
      const TrainResult tr = trainer.run({out_dir / (dir + sanitize(row.variant)), log, std::nullopt});
      r.final_loss = tr.final_loss;
      if (!tr.curve.empty()) r.miou = tr.curve.back().val_miou;
      r.status = "ok";
    } catch (const NumericError& e) {
      r.status = std::string("numeric: ") + e.what();
    }
    r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    results.push_back(r);
  }
  return results;
}

std::string ablation_csv(const std::vector<AblationResult>& rows) {
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return out + "\"";
  };
  std::string csv = "group,variant,miou,params,wall_time,final_loss,status\n";
  for (const auto& r : rows) {
    char nums[96];
    std::snprintf(nums, sizeof nums, "%lld,%.3f,%.6f", static_cast<long long>(r.params), r.wall_time, r.final_loss);
    csv += quote(r.group) + "," + quote(r.variant) + "," + (r.miou ? fmt_double(*r.miou) : "") + "," + nums +
           "," + quote(r.status) + "\n";
  }
  return csv;
}

std::string ablation_table(const std::vector<AblationResult>& rows) {
  std::ostringstream os;
  std::size_t width = 7;
  for (const auto& r : rows) width = std::max(width, r.variant.size());
  for (const char* group : {"backbone", "encoder", "fusion"}) {
    bool header = false;
    for (const auto& r : rows) {
      if (r.group != group) continue;
      if (!header) {
        os << "[" << group << "]\n";
        char line[160];
        std::snprintf(line, sizeof line, "  %-*s  %8s  %10s  %9s  %s\n", static_cast<int>(width), "variant",
                      "mIoU(%)", "#params", "time(s)", "status");
        os << line;
        header = true;
      }
      char miou[16] = "     n/a";
      if (r.miou) std::snprintf(miou, sizeof miou, "%8.2f", 100.0 * *r.miou);
      char line[256];
      std::snprintf(line, sizeof line, "  %-*s  %8s  %10lld  %9.1f  %s\n", static_cast<int>(width),
                    r.variant.c_str(), miou, static_cast<long long>(r.params), r.wall_time, r.status.c_str());
      os << line;
    }
    if (header) os << "\n";
  }
  return os.str();
}

}  // namespace rgbx::train
