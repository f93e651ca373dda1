#include "rgbx/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "rgbx/config.hpp"
#include "rgbx/errors.hpp"

namespace rgbx::data {

namespace {

constexpr const char* kMetaFile = "dataset.meta";
constexpr const char* kManifestFile = "manifest.txt";

fs::path image_path(const fs::path& root, const char* modality, const std::string& id) {
  return root / modality / (id + ".png");
}

cv::Mat read_png(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("missing sample file: " + path.string());
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw DataError("cannot decode image: " + path.string());
  return m;
}

double unit_scale(const cv::Mat& m, const fs::path& path) {
  switch (m.depth()) {
    case CV_8U: return 1.0 / 255.0;
    case CV_16U: return 1.0 / 65535.0;
    default: throw DataError("unsupported bit depth in " + path.string());
  }
}

// 8/16-bit 1- or 3-channel image (alpha dropped) -> doubles in [0,1], RGB order.
cv::Mat to_unit(const cv::Mat& raw, const fs::path& path) {
  cv::Mat m = raw;
  if (m.channels() == 4) cv::cvtColor(m, m, cv::COLOR_BGRA2BGR);
  if (m.channels() != 1 && m.channels() != 3) {
    throw DataError("expected 1 or 3 channels in " + path.string() + ", found " + std::to_string(m.channels()));
  }
  if (m.channels() == 3) cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
  cv::Mat out;
  m.convertTo(out, CV_64F, unit_scale(m, path));
  return out;
}

// Reverses channel order (RGB <-> BGR) for any depth; cvtColor lacks CV_64F.
cv::Mat swap_rb(const cv::Mat& m) {
  cv::Mat out(m.size(), m.type());
  const int from_to[] = {0, 2, 1, 1, 2, 0};
  cv::mixChannels(&m, 1, &out, 1, from_to, 3);
  return out;
}

cv::Mat gray3(const cv::Mat& gray) {
  cv::Mat out;
  cv::merge(std::vector<cv::Mat>{gray, gray, gray}, out);
  return out;
}

cv::Mat clamp_unit(const cv::Mat& m) {
  cv::Mat out;
  cv::max(m, 0.0, out);
  cv::min(out, 1.0, out);
  return out;
}

void write_png(const fs::path& path, const cv::Mat& m) {
  fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw DataError("cannot write image: " + path.string());
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int snap(int n, int multiple) { return std::max(multiple, static_cast<int>(std::lround(double(n) / multiple)) * multiple); }

SamplePair resized(const SamplePair& p, int rows, int cols) {
  if (rows == p.rows() && cols == p.cols()) return p;
  SamplePair out = p;
  const cv::Size size(cols, rows);
  cv::resize(p.rgb, out.rgb, size, 0, 0, cv::INTER_LINEAR);
  cv::resize(p.x, out.x, size, 0, 0, cv::INTER_LINEAR);
  cv::resize(p.label, out.label, size, 0, 0, cv::INTER_NEAREST);
  return out;
}

std::uint64_t splitmix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Luma used by the contrast and saturation jitter.
cv::Mat gray_of(const cv::Mat& rgb) {
  cv::Mat g;
  cv::transform(rgb, g, cv::Matx13d(0.299, 0.587, 0.114));
  return g;
}

cv::Mat shift_hue(const cv::Mat& rgb, double shift) {
  cv::Mat f, hsv;
  rgb.convertTo(f, CV_32F);
  cv::cvtColor(f, hsv, cv::COLOR_RGB2HSV);  // H in [0, 360)
  const float delta = static_cast<float>(shift * 360.0);
  hsv.forEach<cv::Vec3f>([delta](cv::Vec3f& px, const int*) {
    float h = std::fmod(px[0] + delta, 360.0f);
    px[0] = h < 0 ? h + 360.0f : h;
  });
  cv::cvtColor(hsv, f, cv::COLOR_HSV2RGB);
  cv::Mat out;
  f.convertTo(out, CV_64F);
  return out;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, sep)) {
    if (part.find_first_not_of(" \t") != std::string::npos) parts.push_back(part);
  }
  return parts;
}

std::vector<std::vector<double>> parse_table(const Config& cfg, const std::string& key) {
  std::vector<std::vector<double>> rows;
  for (const auto& row : split(cfg.get_string(key, ""), ';')) rows.push_back(parse_number_list(row, key));
  return rows;
}

}  // namespace

std::string to_string(XKind kind) {
  switch (kind) {
    case XKind::depth: return "depth";
    case XKind::normal: return "normal";
    case XKind::thermal: return "thermal";
    case XKind::polarization: return "polarization";
    case XKind::synthetic: return "synthetic";
  }
  return "synthetic";
}

XKind parse_x_kind(const std::string& text) {
  for (XKind k : {XKind::depth, XKind::normal, XKind::thermal, XKind::polarization, XKind::synthetic}) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("unknown x_kind '" + text + "' (valid: depth, normal, thermal, polarization, synthetic)");
}

void check_pair(const SamplePair& p) {
  const std::string who = "sample '" + p.id + "': ";
  if (p.rgb.type() != CV_64FC3) throw DataError(who + "rgb must be 3-channel double");
  if (p.x.type() != CV_64FC1 && p.x.type() != CV_64FC3) throw DataError(who + "x must be 1- or 3-channel double");
  if (p.label.type() != CV_32SC1) throw DataError(who + "label must be single-channel int");
  if (p.x.size() != p.rgb.size() || p.label.size() != p.rgb.size()) {
    throw DataError(who + "rgb/x/label dimensions differ");
  }
}

SamplePair clone(const SamplePair& p) {
  return {p.rgb.clone(), p.x.clone(), p.label.clone(), p.id, p.source};
}

DatasetMeta read_meta(const fs::path& root) {
  const fs::path path = root / kMetaFile;
  if (!fs::exists(path)) throw DataError("missing dataset metadata: " + path.string());
  Config cfg;
  try {
    cfg = Config::load(path);
  } catch (const ConfigError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  DatasetMeta meta;
  meta.num_classes = cfg.get_int("num_classes", 0);
  if (meta.num_classes < 1) throw DataError(path.string() + ": num_classes must be positive");
  meta.x_kind = parse_x_kind(cfg.get_string("x_kind", "synthetic"));
  meta.ignore_id = cfg.get_int("ignore_id", kIgnoreId);
  for (const auto& [k, v] : cfg.values()) {
    if (k != "num_classes" && k != "x_kind" && k != "ignore_id") meta.extra[k] = v;
  }
  return meta;
}

void write_meta(const fs::path& root, const DatasetMeta& meta) {
  fs::create_directories(root);
  std::ofstream out(root / kMetaFile);
  out << "num_classes = " << meta.num_classes << "\n"
      << "x_kind = " << to_string(meta.x_kind) << "\n"
      << "ignore_id = " << meta.ignore_id << "\n";
  for (const auto& [k, v] : meta.extra) out << k << " = " << v << "\n";
  if (!out) throw DataError("cannot write " + (root / kMetaFile).string());
}

std::vector<std::string> read_manifest(const fs::path& root) {
  std::ifstream in(root / kManifestFile);
  if (!in) throw DataError("missing manifest: " + (root / kManifestFile).string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    ids.push_back(line.substr(first, last - first + 1));
  }
  return ids;
}

SamplePair load_pair(const fs::path& root, const std::string& id) {
  const fs::path rgb_path = image_path(root, "rgb", id);
  const fs::path x_path = image_path(root, "x", id);
  const fs::path label_path = image_path(root, "labels", id);
  SamplePair p;
  p.id = id;
  p.source = root.string();

  cv::Mat rgb = read_png(rgb_path);
  cv::Mat x = read_png(x_path);
  cv::Mat label = read_png(label_path);

  p.rgb = to_unit(rgb, rgb_path);
  if (p.rgb.channels() == 1) p.rgb = gray3(p.rgb);
  p.x = to_unit(x, x_path);
  if (label.channels() != 1) throw DataError("label image must be single-channel: " + label_path.string());
  label.convertTo(p.label, CV_32S);

  if (p.x.size() != p.rgb.size()) {
    throw DataError("dimension mismatch: " + x_path.string() + " is " + std::to_string(p.x.cols) + "x" +
                    std::to_string(p.x.rows) + ", rgb is " + std::to_string(p.rgb.cols) + "x" +
                    std::to_string(p.rgb.rows));
  }
  if (p.label.size() != p.rgb.size()) throw DataError("dimension mismatch: " + label_path.string());
  return p;
}

void write_pair(const fs::path& root, const SamplePair& p) {
  check_pair(p);
  cv::Mat rgb8, x16, label8;
  swap_rb(p.rgb).convertTo(rgb8, CV_8U, 255.0);
  (p.x.channels() == 3 ? swap_rb(p.x) : p.x).convertTo(x16, CV_16U, 65535.0);
  double lo = 0, hi = 0;
  cv::minMaxLoc(p.label, &lo, &hi);
  if (lo < 0 || hi > 255) throw DataError("sample '" + p.id + "': label values do not fit in 8 bits");
  p.label.convertTo(label8, CV_8U);
  write_png(image_path(root, "rgb", p.id), rgb8);
  write_png(image_path(root, "x", p.id), x16);
  write_png(image_path(root, "labels", p.id), label8);
}

void write_dataset(const fs::path& root, std::span<const SamplePair> pairs, const DatasetMeta& meta) {
  fs::create_directories(root);
  std::ofstream manifest(root / kManifestFile);
  for (const auto& p : pairs) {
    write_pair(root, p);
    manifest << p.id << "\n";
  }
  if (!manifest) throw DataError("cannot write manifest in " + root.string());
  write_meta(root, meta);
}

Dataset::Dataset(const fs::path& root) : meta_(read_meta(root)) {
  for (const auto& id : read_manifest(root)) pairs_.push_back(load_pair(root, id));
  if (pairs_.empty()) throw DataError("dataset " + root.string() + " lists no samples");
  for (const auto& p : pairs_) {
    for (auto it = p.label.begin<int>(); it != p.label.end<int>(); ++it) {
      if (*it != meta_.ignore_id && (*it < 0 || *it >= meta_.num_classes)) {
        throw DataError("sample '" + p.id + "' has label " + std::to_string(*it) + " outside [0, " +
                        std::to_string(meta_.num_classes) + ")");
      }
    }
  }
}

Dataset::Dataset(std::vector<SamplePair> pairs, DatasetMeta meta) : meta_(std::move(meta)), pairs_(std::move(pairs)) {
  for (const auto& p : pairs_) check_pair(p);
}

void AugmentConfig::validate() const {
  if (scale_min <= 0 || scale_max < scale_min) throw ConfigError("augment: need 0 < scale_min <= scale_max");
  if (crop < 0 || crop % kSizeMultiple != 0) {
    throw ConfigError("augment: crop " + std::to_string(crop) + " is not a multiple of 32");
  }
  if (flip_prob < 0 || flip_prob > 1) throw ConfigError("augment: flip_prob must lie in [0, 1]");
  if (brightness < 0 || contrast < 0 || saturation < 0 || hue < 0 || hue > 0.5) {
    throw ConfigError("augment: jitter ranges must be non-negative (hue <= 0.5)");
  }
}

SamplePair resize_to_multiple(const SamplePair& pair, int multiple) {
  return resized(pair, snap(pair.rows(), multiple), snap(pair.cols(), multiple));
}

SamplePair augment(const SamplePair& pair, std::mt19937_64& rng, const AugmentConfig& cfg) {
  check_pair(pair);
  if (!cfg.enabled) return clone(resize_to_multiple(pair));
  cfg.validate();

  const double s = uniform(rng, cfg.scale_min, cfg.scale_max);
  const int rows = std::max(1, static_cast<int>(std::lround(pair.rows() * s)));
  const int cols = std::max(1, static_cast<int>(std::lround(pair.cols() * s)));
  SamplePair out = clone(resized(pair, rows, cols));

  if (cfg.crop > 0) {
    if (cfg.crop > rows || cfg.crop > cols) {
      throw ConfigError("augment: crop " + std::to_string(cfg.crop) + " exceeds resized image " +
                        std::to_string(cols) + "x" + std::to_string(rows));
    }
    const int y0 = std::uniform_int_distribution<int>(0, rows - cfg.crop)(rng);
    const int x0 = std::uniform_int_distribution<int>(0, cols - cfg.crop)(rng);
    const cv::Rect roi(x0, y0, cfg.crop, cfg.crop);
    out.rgb = out.rgb(roi).clone();
    out.x = out.x(roi).clone();
    out.label = out.label(roi).clone();
  } else {
    out = clone(resize_to_multiple(out));
  }

  if (std::bernoulli_distribution(cfg.flip_prob)(rng)) {
    cv::flip(out.rgb, out.rgb, 1);
    cv::flip(out.x, out.x, 1);
    cv::flip(out.label, out.label, 1);
  }

  // Photometric jitter touches rgb only.
  cv::Mat& rgb = out.rgb;
  if (cfg.brightness > 0) {
    rgb = clamp_unit(rgb * uniform(rng, 1 - cfg.brightness, 1 + cfg.brightness));
  }
  if (cfg.contrast > 0) {
    const double f = uniform(rng, 1 - cfg.contrast, 1 + cfg.contrast);
    const double m = cv::mean(gray_of(rgb))[0];
    rgb = clamp_unit((rgb - cv::Scalar::all(m)) * f + cv::Scalar::all(m));
  }
  if (cfg.saturation > 0) {
    const double f = uniform(rng, 1 - cfg.saturation, 1 + cfg.saturation);
    const cv::Mat g = gray3(gray_of(rgb));
    rgb = clamp_unit(g + (rgb - g) * f);
  }
  if (cfg.hue > 0) rgb = clamp_unit(shift_hue(rgb, uniform(rng, -cfg.hue, cfg.hue)));
  return out;
}

std::uint64_t sample_seed(std::uint64_t seed, int epoch, const std::string& id) {
  return splitmix(splitmix(seed) ^ splitmix(static_cast<std::uint64_t>(epoch) + 0x51ed27ULL) ^ fnv1a(id));
}

Batch make_batch(std::span<const SamplePair* const> pairs, bool zero_x) {
  if (pairs.empty()) throw ContractError("make_batch: no samples");
  const SamplePair& first = *pairs.front();
  const int B = static_cast<int>(pairs.size());
  const int H = first.rows(), W = first.cols(), xc = first.x.channels();
  std::vector<double> rgb, x;
  Batch batch;
  rgb.reserve(static_cast<std::size_t>(B) * H * W * 3);
  x.reserve(static_cast<std::size_t>(B) * H * W * xc);
  batch.labels.reserve(static_cast<std::size_t>(B) * H * W);
  for (const SamplePair* p : pairs) {
    check_pair(*p);
    if (p->rows() != H || p->cols() != W || p->x.channels() != xc) {
      throw ShapeError("make_batch: sample '" + p->id + "' differs in size from '" + first.id + "'");
    }
    for (int r = 0; r < H; ++r) {
      const double* pr = p->rgb.ptr<double>(r);
      const double* px = p->x.ptr<double>(r);
      const int* pl = p->label.ptr<int>(r);
      rgb.insert(rgb.end(), pr, pr + W * 3);
      if (zero_x) {
        x.insert(x.end(), static_cast<std::size_t>(W) * xc, 0.0);
      } else {
        x.insert(x.end(), px, px + W * xc);
      }
      batch.labels.insert(batch.labels.end(), pl, pl + W);
    }
  }
  batch.rgb = nn::Tensor::from({B, H, W, 3}, std::move(rgb));
  batch.x = nn::Tensor::from({B, H, W, xc}, std::move(x));
  return batch;
}

Batch make_batch(std::span<const SamplePair> pairs, bool zero_x) {
  std::vector<const SamplePair*> ptrs;
  for (const auto& p : pairs) ptrs.push_back(&p);
  return make_batch(std::span<const SamplePair* const>(ptrs), zero_x);
}

SyntheticTaskSpec SyntheticTaskSpec::default_task() {
  SyntheticTaskSpec s;
  s.rgb_palette = {{0.75, 0.25, 0.25}, {0.25, 0.75, 0.25}, {0.25, 0.25, 0.75}};
  s.x_levels = {0.3, 0.8};
  // Class 2 needs both modalities: red cells split into 0/2 by the X level.
  s.rules = {{0, 2}, {1, 1}, {3, 3}};
  return s;
}

SyntheticTaskSpec SyntheticTaskSpec::parse(const std::string& text) {
  const Config cfg = Config::parse(text);
  cfg.require_known({"num_classes", "image_size", "grid", "rgb_palette", "x_levels", "rules", "weights",
                     "rgb_noise", "x_noise"});
  SyntheticTaskSpec s;
  s.num_classes = cfg.get_int("num_classes", s.num_classes);
  s.image_size = cfg.get_int("image_size", s.image_size);
  s.grid = cfg.get_int("grid", s.grid);
  s.rgb_noise = cfg.get_double("rgb_noise", s.rgb_noise);
  s.x_noise = cfg.get_double("x_noise", s.x_noise);
  s.x_levels = cfg.get_doubles("x_levels");
  for (const auto& row : parse_table(cfg, "rgb_palette")) {
    if (row.size() != 3) throw ConfigError("rgb_palette entries need three components");
    s.rgb_palette.push_back({row[0], row[1], row[2]});
  }
  for (const auto& row : parse_table(cfg, "rules")) {
    std::vector<int> ids;
    for (double v : row) {
      if (v != std::floor(v)) throw ConfigError("rules must hold integer class ids");
      ids.push_back(static_cast<int>(v));
    }
    s.rules.push_back(std::move(ids));
  }
  s.weights = parse_table(cfg, "weights");
  s.validate();
  return s;
}

SyntheticTaskSpec SyntheticTaskSpec::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open synthetic spec " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

double SyntheticTaskSpec::weight(int r, int x) const {
  return weights.empty() ? 1.0 : weights[static_cast<std::size_t>(r)][static_cast<std::size_t>(x)];
}

void SyntheticTaskSpec::validate() const {
  if (num_classes < 2 || num_classes > 255) throw ConfigError("synthetic: num_classes must lie in [2, 255]");
  if (image_size < kSizeMultiple || image_size % kSizeMultiple != 0) {
    throw ConfigError("synthetic: image_size must be a positive multiple of 32");
  }
  if (grid < 1 || image_size % grid != 0) throw ConfigError("synthetic: grid must divide image_size");
  if (rgb_palette.empty() || x_levels.empty()) throw ConfigError("synthetic: palette and x_levels are required");
  if (rules.size() != rgb_palette.size()) throw ConfigError("synthetic: rules need one row per palette colour");
  for (const auto& row : rules) {
    if (row.size() != x_levels.size()) throw ConfigError("synthetic: rules need one column per x level");
    for (int c : row) {
      if (c < 0 || c >= num_classes) throw ConfigError("synthetic: rule class " + std::to_string(c) + " out of range");
    }
  }
  if (!weights.empty()) {
    if (weights.size() != rules.size()) throw ConfigError("synthetic: weights must match the rules table");
    for (const auto& row : weights) {
      if (row.size() != x_levels.size()) throw ConfigError("synthetic: weights must match the rules table");
      for (double w : row) {
        if (w < 0) throw ConfigError("synthetic: weights must be non-negative");
      }
    }
  }
  if (rgb_noise < 0 || x_noise < 0) throw ConfigError("synthetic: noise levels must be non-negative");

  const BayesReport report = analyze(*this);
  for (int c : report.joint_only_classes) {
    const auto k = static_cast<std::size_t>(c);
    if (report.prevalence[k] >= 0.10 && std::max(report.rgb_only[k], report.x_only[k]) <= 0.55) return;
  }
  throw ConfigError(
      "synthetic: no joint-only class (needs >= 10% prevalence and <= 55% single-modality Bayes accuracy)");
}

// Buckets are assumed separable despite the noise, so a single modality
// reveals exactly its bucket and nothing else.
BayesReport analyze(const SyntheticTaskSpec& spec) {
  const int K = spec.num_classes;
  const int R = static_cast<int>(spec.rules.size());
  const int X = R ? static_cast<int>(spec.rules.front().size()) : 0;
  BayesReport rep;
  rep.prevalence.assign(K, 0.0);
  rep.rgb_only.assign(K, 0.0);
  rep.x_only.assign(K, 0.0);
  rep.joint.assign(K, 0.0);

  double total = 0.0;
  for (int r = 0; r < R; ++r) {
    for (int x = 0; x < X; ++x) {
      rep.prevalence[spec.rules[r][x]] += spec.weight(r, x);
      total += spec.weight(r, x);
    }
  }
  if (total <= 0) return rep;

  // Credits class c with its mass in every bucket where it is (one of) the
  // most likely classes; ties share the bucket evenly.
  auto bayes = [&](int buckets, auto&& cell) {
    std::vector<double> correct(K, 0.0);
    for (int b = 0; b < buckets; ++b) {
      std::vector<double> mass(K, 0.0);
      cell(b, mass);
      const double best = *std::max_element(mass.begin(), mass.end());
      if (best <= 0) continue;
      const auto winners = std::count(mass.begin(), mass.end(), best);
      for (int c = 0; c < K; ++c) {
        if (mass[c] == best) correct[c] += mass[c] / static_cast<double>(winners);
      }
    }
    return correct;
  };
  const auto rgb_correct = bayes(R, [&](int r, std::vector<double>& m) {
    for (int x = 0; x < X; ++x) m[spec.rules[r][x]] += spec.weight(r, x);
  });
  const auto x_correct = bayes(X, [&](int x, std::vector<double>& m) {
    for (int r = 0; r < R; ++r) m[spec.rules[r][x]] += spec.weight(r, x);
  });
  for (int c = 0; c < K; ++c) {
    const double mass = rep.prevalence[c];
    if (mass > 0) {
      rep.rgb_only[c] = rgb_correct[c] / mass;
      rep.x_only[c] = x_correct[c] / mass;
      rep.joint[c] = 1.0;
      if (rep.rgb_only[c] < 1.0 && rep.x_only[c] < 1.0) rep.joint_only_classes.push_back(c);
    }
    rep.prevalence[c] = mass / total;
  }
  return rep;
}

std::map<std::string, std::string> BayesReport::to_meta() const {
  auto join = [](const std::vector<double>& v) {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
    return os.str();
  };
  std::string joint_only;
  for (int c : joint_only_classes) joint_only += (joint_only.empty() ? "" : " ") + std::to_string(c);
  return {{"prevalence", join(prevalence)},
          {"bayes_rgb_only", join(rgb_only)},
          {"bayes_x_only", join(x_only)},
          {"bayes_joint", join(joint)},
          {"joint_only_classes", joint_only}};
}

std::string BayesReport::to_text() const {
  std::ostringstream os;
  os << "class  prevalence  rgb-only  x-only  joint\n";
  char line[96];
  for (std::size_t c = 0; c < prevalence.size(); ++c) {
    const bool jo = std::find(joint_only_classes.begin(), joint_only_classes.end(), static_cast<int>(c)) !=
                    joint_only_classes.end();
    std::snprintf(line, sizeof line, "%5zu  %10.4f  %8.4f  %6.4f  %5.4f%s\n", c, prevalence[c], rgb_only[c],
                  x_only[c], joint[c], jo ? "  (joint-only)" : "");
    os << line;
  }
  return os.str();
}

std::vector<SamplePair> generate_synthetic(const SyntheticTaskSpec& spec, int n, std::mt19937_64& rng) {
  spec.validate();
  if (n < 1) throw ConfigError("generate_synthetic: n must be positive");
  const int R = static_cast<int>(spec.rules.size());
  const int X = static_cast<int>(spec.x_levels.size());
  const std::int64_t cells_per_image = static_cast<std::int64_t>(spec.grid) * spec.grid;
  const std::int64_t total_cells = cells_per_image * n;

  // Largest-remainder quotas per combination.
  double wsum = 0.0;
  for (int r = 0; r < R; ++r)
    for (int x = 0; x < X; ++x) wsum += spec.weight(r, x);
  std::vector<std::int64_t> quota(static_cast<std::size_t>(R * X));
  std::vector<std::pair<double, int>> remainders;
  std::int64_t assigned = 0;
  for (int i = 0; i < R * X; ++i) {
    const double exact = total_cells * spec.weight(i / X, i % X) / wsum;
    quota[i] = static_cast<std::int64_t>(std::floor(exact));
    assigned += quota[i];
    remainders.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total_cells; ++i, ++assigned) ++quota[remainders[i % remainders.size()].second];

  std::vector<int> combos;
  combos.reserve(static_cast<std::size_t>(total_cells));
  for (int i = 0; i < R * X; ++i) combos.insert(combos.end(), static_cast<std::size_t>(quota[i]), i);
  std::shuffle(combos.begin(), combos.end(), rng);

  std::normal_distribution<double> rgb_noise(0.0, spec.rgb_noise > 0 ? spec.rgb_noise : 1.0);
  std::normal_distribution<double> x_noise(0.0, spec.x_noise > 0 ? spec.x_noise : 1.0);
  const int S = spec.image_size;
  const int cell = S / spec.grid;
  std::vector<SamplePair> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    SamplePair p;
    char id[32];
    std::snprintf(id, sizeof id, "syn%05d", i);
    p.id = id;
    p.source = "synthetic";
    p.rgb.create(S, S, CV_64FC3);
    p.x.create(S, S, CV_64FC1);
    p.label.create(S, S, CV_32SC1);
    for (int row = 0; row < S; ++row) {
      for (int col = 0; col < S; ++col) {
        const int combo = combos[static_cast<std::size_t>(i * cells_per_image + (row / cell) * spec.grid + col / cell)];
        const int r = combo / X, x = combo % X;
        auto& px = p.rgb.at<cv::Vec3d>(row, col);
        for (int ch = 0; ch < 3; ++ch) {
          const double noise = spec.rgb_noise > 0 ? rgb_noise(rng) : 0.0;
          px[ch] = std::clamp(spec.rgb_palette[r][ch] + noise, 0.0, 1.0);
        }
        const double noise = spec.x_noise > 0 ? x_noise(rng) : 0.0;
        p.x.at<double>(row, col) = std::clamp(spec.x_levels[x] + noise, 0.0, 1.0);
        p.label.at<int>(row, col) = spec.rules[r][x];
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace rgbx::data
