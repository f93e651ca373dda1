#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace rgbx::eval {

inline constexpr int kIgnoreId = 255;

// counts(t, p) = number of pixels with true class t predicted as p.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  int num_classes() const { return k_; }
  std::int64_t at(int truth, int pred) const { return counts_[static_cast<std::size_t>(truth * k_ + pred)]; }
  std::int64_t total() const;

  // Pixels whose truth is ignore_id are skipped; predictions must never carry it.
  void accumulate(std::span<const int> pred, std::span<const int> truth, int ignore_id = kIgnoreId);
  void merge(const ConfusionMatrix& other);

  bool operator==(const ConfusionMatrix& other) const = default;

 private:
  int k_;
  std::vector<std::int64_t> counts_;
};

ConfusionMatrix accumulate(ConfusionMatrix cm, std::span<const int> pred, std::span<const int> truth,
                           int ignore_id = kIgnoreId);

// Undefined values (zero denominators) are std::nullopt.
struct ClassMetrics {
  std::int64_t tp = 0, fp = 0, fn = 0;
  std::optional<double> acc, pre, rec, iou, fsc;
};

enum class UndefinedPolicy { exclude, zero };  // how undefined classes enter the means
enum class AccuracyMode { per_class, global };  // what mAcc reports

struct MetricsOptions {
  UndefinedPolicy undefined = UndefinedPolicy::exclude;
  AccuracyMode accuracy = AccuracyMode::per_class;
};

struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  std::vector<std::string> class_names;
  std::optional<double> mean_acc, mean_pre, mean_rec, mean_iou, mean_fsc;
  double pixel_accuracy = 0.0;
  std::int64_t pixel_count = 0;
  MetricsOptions options;
};

// Acc_k = Rec_k = TP/(TP+FN); Pre_k = TP/(TP+FP); IoU_k = TP/(TP+FP+FN);
// Fsc_k = 2TP/(2TP+FP+FN) (the harmonic mean of Pre and Rec).
// Throws ContractError for an empty matrix.
MetricsReport compute_metrics(const ConfusionMatrix& cm, const MetricsOptions& options = {},
                              std::vector<std::string> class_names = {});

nlohmann::json to_json(const MetricsReport& report);
std::string to_text(const MetricsReport& report);
std::string csv_header();
std::string csv_row(const MetricsReport& report, int epoch);

}  // namespace rgbx::eval
