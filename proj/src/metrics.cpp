#include "rgbx/metrics.hpp"

#include <cstdio>
#include <numeric>
#include <sstream>

#include "rgbx/errors.hpp"

namespace rgbx::eval {

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
  if (num_classes < 1) throw ConfigError("confusion matrix needs at least one class");
  counts_.assign(static_cast<std::size_t>(k_) * k_, 0);
}

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0});
}

void ConfusionMatrix::accumulate(std::span<const int> pred, std::span<const int> truth, int ignore_id) {
  if (pred.size() != truth.size()) {
    throw ShapeError("accumulate: " + std::to_string(pred.size()) + " predictions vs " +
                     std::to_string(truth.size()) + " labels");
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == ignore_id) throw ContractError("accumulate: prediction carries the ignore id");
    if (pred[i] < 0 || pred[i] >= k_) throw ContractError("accumulate: prediction out of range");
  }
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i];
    if (t == ignore_id) continue;
    if (t < 0 || t >= k_) throw ContractError("accumulate: label " + std::to_string(t) + " out of range");
    ++counts_[static_cast<std::size_t>(t * k_ + pred[i])];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw ShapeError("merge: class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

ConfusionMatrix accumulate(ConfusionMatrix cm, std::span<const int> pred, std::span<const int> truth,
                           int ignore_id) {
  cm.accumulate(pred, truth, ignore_id);
  return cm;
}

namespace {

std::optional<double> ratio(std::int64_t num, std::int64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

std::optional<double> mean_of(const std::vector<std::optional<double>>& values, UndefinedPolicy policy) {
  double s = 0.0;
  int n = 0;
  for (const auto& v : values) {
    if (v) {
      s += *v;
      ++n;
    } else if (policy == UndefinedPolicy::zero) {
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / n;
}

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::string fmt(const std::optional<double>& v) {
  if (!v) return "    n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%7.2f", 100.0 * *v);
  return buf;
}

}  // namespace

MetricsReport compute_metrics(const ConfusionMatrix& cm, const MetricsOptions& options,
                              std::vector<std::string> class_names) {
  const std::int64_t total = cm.total();
  if (total == 0) throw ContractError("compute_metrics: no pixels were evaluated");
  const int K = cm.num_classes();
  MetricsReport r;
  r.options = options;
  r.pixel_count = total;
  if (class_names.empty()) {
    for (int k = 0; k < K; ++k) class_names.push_back("class" + std::to_string(k));
  }
  r.class_names = std::move(class_names);

  std::int64_t correct = 0;
  std::vector<std::optional<double>> acc, pre, rec, iou, fsc;
  for (int k = 0; k < K; ++k) {
    ClassMetrics m;
    m.tp = cm.at(k, k);
    for (int j = 0; j < K; ++j) {
      if (j == k) continue;
      m.fn += cm.at(k, j);
      m.fp += cm.at(j, k);
    }
    correct += m.tp;
    m.acc = ratio(m.tp, m.tp + m.fn);
    m.rec = m.acc;
    m.pre = ratio(m.tp, m.tp + m.fp);
    m.iou = ratio(m.tp, m.tp + m.fp + m.fn);
    m.fsc = ratio(2 * m.tp, 2 * m.tp + m.fp + m.fn);
    acc.push_back(m.acc);
    pre.push_back(m.pre);
    rec.push_back(m.rec);
    iou.push_back(m.iou);
    fsc.push_back(m.fsc);
    r.per_class.push_back(m);
  }
  r.pixel_accuracy = static_cast<double>(correct) / static_cast<double>(total);
  r.mean_acc = options.accuracy == AccuracyMode::global ? std::optional<double>(r.pixel_accuracy)
                                                        : mean_of(acc, options.undefined);
  r.mean_pre = mean_of(pre, options.undefined);
  r.mean_rec = mean_of(rec, options.undefined);
  r.mean_iou = mean_of(iou, options.undefined);
  r.mean_fsc = mean_of(fsc, options.undefined);
  return r;
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["accuracy_definition"] = r.options.accuracy == AccuracyMode::per_class
                                 ? "per-class TP/(TP+FN); mAcc is its class mean"
                                 : "global pixel accuracy";
  j["undefined_policy"] = r.options.undefined == UndefinedPolicy::exclude ? "exclude" : "zero";
  j["pixel_count"] = r.pixel_count;
  j["pixel_accuracy"] = r.pixel_accuracy;
  j["means"] = {{"mAcc", opt(r.mean_acc)}, {"mPre", opt(r.mean_pre)}, {"mRec", opt(r.mean_rec)},
                {"mIoU", opt(r.mean_iou)}, {"mFsc", opt(r.mean_fsc)}};
  j["per_class"] = nlohmann::json::array();
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    const auto& m = r.per_class[k];
    j["per_class"].push_back({{"name", r.class_names[k]}, {"tp", m.tp}, {"fp", m.fp}, {"fn", m.fn},
                              {"acc", opt(m.acc)}, {"pre", opt(m.pre)}, {"rec", opt(m.rec)},
                              {"iou", opt(m.iou)}, {"fsc", opt(m.fsc)}});
  }
  return j;
}

std::string to_text(const MetricsReport& r) {
  std::ostringstream os;
  os << "# Acc: " << (r.options.accuracy == AccuracyMode::per_class ? "per-class TP/(TP+FN), mAcc = class mean"
                                                                    : "global pixel accuracy")
     << "; undefined classes " << (r.options.undefined == UndefinedPolicy::exclude ? "excluded from" : "scored 0 in")
     << " means\n";
  os << "class            Acc     Pre     Rec     IoU     Fsc\n";
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    const auto& m = r.per_class[k];
    char name[16];
    std::snprintf(name, sizeof name, "%-12s", r.class_names[k].c_str());
    os << name << ' ' << fmt(m.acc) << ' ' << fmt(m.pre) << ' ' << fmt(m.rec) << ' ' << fmt(m.iou) << ' '
       << fmt(m.fsc) << '\n';
  }
  os << "mean         " << fmt(r.mean_acc) << ' ' << fmt(r.mean_pre) << ' ' << fmt(r.mean_rec) << ' '
     << fmt(r.mean_iou) << ' ' << fmt(r.mean_fsc) << '\n';
  os << "pixels " << r.pixel_count << ", pixel accuracy " << fmt(r.pixel_accuracy) << '\n';
  return os.str();
}

std::string csv_header() { return "epoch,mAcc,mPre,mRec,mIoU,mFsc,pixel_acc,pixels"; }

std::string csv_row(const MetricsReport& r, int epoch) {
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return std::string(buf);
  };
  std::ostringstream os;
  os << epoch << ',' << cell(r.mean_acc) << ',' << cell(r.mean_pre) << ',' << cell(r.mean_rec) << ','
     << cell(r.mean_iou) << ',' << cell(r.mean_fsc) << ',' << cell(r.pixel_accuracy) << ',' << r.pixel_count;
  return os.str();
}

}  // namespace rgbx::eval
