#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "rgbx/nn/tensor.hpp"

namespace rgbx::data {

namespace fs = std::filesystem;

inline constexpr int kIgnoreId = 255;
inline constexpr int kSizeMultiple = 32;

enum class XKind { depth, normal, thermal, polarization, synthetic };
std::string to_string(XKind kind);
XKind parse_x_kind(const std::string& text);

// rgb: CV_64FC3 in R,G,B order, values in [0,1].
// x: CV_64FC1 or CV_64FC3, values in [0,1] (normals stored as (v+1)/2).
// label: CV_32SC1, values < K or kIgnoreId.
struct SamplePair {
  cv::Mat rgb;
  cv::Mat x;
  cv::Mat label;
  std::string id;
  std::string source;

  int rows() const { return rgb.rows; }
  int cols() const { return rgb.cols; }
};

// Throws DataError unless rgb/x/label share spatial dims and types.
void check_pair(const SamplePair& pair);
// Deep copy.
SamplePair clone(const SamplePair& pair);

struct DatasetMeta {
  int num_classes = 0;
  XKind x_kind = XKind::synthetic;
  int ignore_id = kIgnoreId;
  std::map<std::string, std::string> extra;  // anything else found in dataset.meta
};

DatasetMeta read_meta(const fs::path& root);
void write_meta(const fs::path& root, const DatasetMeta& meta);
std::vector<std::string> read_manifest(const fs::path& root);

// Reads root/{rgb,x,labels}/<id>.png. Missing files and dimension
// mismatches raise DataError naming the offending path.
SamplePair load_pair(const fs::path& root, const std::string& id);
// RGB as 8-bit, X as 16-bit, labels as 8-bit PNG.
void write_pair(const fs::path& root, const SamplePair& pair);
// Writes every pair, the manifest and dataset.meta.
void write_dataset(const fs::path& root, std::span<const SamplePair> pairs, const DatasetMeta& meta);

// Eagerly loaded dataset directory.
class Dataset {
 public:
  explicit Dataset(const fs::path& root);
  Dataset(std::vector<SamplePair> pairs, DatasetMeta meta);

  const DatasetMeta& meta() const { return meta_; }
  std::size_t size() const { return pairs_.size(); }
  const SamplePair& operator[](std::size_t i) const { return pairs_[i]; }
  const std::vector<SamplePair>& pairs() const { return pairs_; }

 private:
  DatasetMeta meta_;
  std::vector<SamplePair> pairs_;
};

struct AugmentConfig {
  bool enabled = true;
  double scale_min = 1.0;
  double scale_max = 1.0;
  int crop = 0;  // 0 keeps the resized image, snapped to a multiple of 32
  double flip_prob = 0.5;
  double brightness = 0.2;
  double contrast = 0.2;
  double saturation = 0.2;
  double hue = 0.05;

  void validate() const;
};

// Random resize, crop and horizontal flip applied identically to rgb, x and
// label (label by nearest neighbour), then brightness/contrast/saturation/hue
// jitter on rgb only. Every emitted side is a multiple of 32.
SamplePair augment(const SamplePair& pair, std::mt19937_64& rng, const AugmentConfig& cfg);

// Bilinear (rgb, x) / nearest (label) resize so both sides are multiples of
// `multiple`; a no-op when they already are.
SamplePair resize_to_multiple(const SamplePair& pair, int multiple = kSizeMultiple);

// Per-sample augmentation seed; independent of visiting order.
std::uint64_t sample_seed(std::uint64_t seed, int epoch, const std::string& id);

struct Batch {
  nn::Tensor rgb;           // (B, H, W, 3)
  nn::Tensor x;             // (B, H, W, 1 or 3)
  std::vector<int> labels;  // B*H*W, row-major
};

// Stacks pairs of equal size. zero_x replaces the X modality by zeros.
Batch make_batch(std::span<const SamplePair* const> pairs, bool zero_x = false);
Batch make_batch(std::span<const SamplePair> pairs, bool zero_x = false);

// Images split into grid x grid cells; each cell draws an (rgb bucket,
// x bucket) combination and is labelled by rules[rgb][x].
struct SyntheticTaskSpec {
  int num_classes = 4;
  int image_size = 64;
  int grid = 4;
  std::vector<std::array<double, 3>> rgb_palette;
  std::vector<double> x_levels;
  std::vector<std::vector<int>> rules;  // [rgb bucket][x bucket] -> class
  std::vector<std::vector<double>> weights;  // combination frequencies; uniform when empty
  double rgb_noise = 0.04;
  double x_noise = 0.04;

  static SyntheticTaskSpec parse(const std::string& text);
  static SyntheticTaskSpec load(const fs::path& path);
  static SyntheticTaskSpec default_task();

  double weight(int r, int x) const;
  // Throws ConfigError for malformed tables, or when no class with at least
  // 10% prevalence is ambiguous under both single modalities.
  void validate() const;
};

// Bayes-optimal per-class accuracy when only one modality is visible
// (ties between classes are split evenly), plus class prevalence.
struct BayesReport {
  std::vector<double> prevalence;
  std::vector<double> rgb_only;
  std::vector<double> x_only;
  std::vector<double> joint;
  std::vector<int> joint_only_classes;

  std::map<std::string, std::string> to_meta() const;
  std::string to_text() const;
};

BayesReport analyze(const SyntheticTaskSpec& spec);

// Cell combinations follow exact dataset-level quotas (largest remainder),
// shuffled across all n images.
std::vector<SamplePair> generate_synthetic(const SyntheticTaskSpec& spec, int n, std::mt19937_64& rng);

}  // namespace rgbx::data
