// SPDX-License-Identifier: Apache-2.0
#include "stfcn/metrics.hpp"

#include <numeric>
#include <sstream>

#include "stfcn/errors.hpp"

namespace stfcn {

ConfusionMatrix::ConfusionMatrix(std::size_t n_cl, int ignore_label)
    : n_cl_(n_cl), ignore_label_(ignore_label), counts_(n_cl * n_cl, 0) {
  if (n_cl == 0) throw ConfigError("confusion matrix needs at least one class");
}

void ConfusionMatrix::accumulate(const LabelMap& pred, const LabelMap& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw DimensionError("accumulate: prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                         " vs ground truth " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  const auto n = static_cast<int>(n_cl_);
  // validate first so a bad map leaves the matrix untouched
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int g = gt.labels[i];
    if (g == ignore_label_) continue;
    const int p = pred.labels[i];
    if (g < 0 || g >= n) throw DataError("accumulate: ground-truth label " + std::to_string(g) + " out of range");
    if (p < 0 || p >= n) throw DataError("accumulate: predicted label " + std::to_string(p) + " out of range");
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int g = gt.labels[i];
    if (g == ignore_label_) continue;
    ++counts_[static_cast<std::size_t>(g) * n_cl_ + static_cast<std::size_t>(pred.labels[i])];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.n_cl_ != n_cl_) throw DimensionError("merge: class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t i) const {
  std::uint64_t s = 0;
  for (std::size_t j = 0; j < n_cl_; ++j) s += at(i, j);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t i) const {
  std::uint64_t s = 0;
  for (std::size_t j = 0; j < n_cl_; ++j) s += at(j, i);
  return s;
}

std::vector<double> per_class_iu(const ConfusionMatrix& cm) {
  std::vector<double> iu(cm.n_cl(), -1.0);
  for (std::size_t i = 0; i < cm.n_cl(); ++i) {
    const std::uint64_t union_ = cm.row_sum(i) + cm.col_sum(i) - cm.at(i, i);
    if (union_ > 0) iu[i] = static_cast<double>(cm.at(i, i)) / static_cast<double>(union_);
  }
  return iu;
}

MeanIU mean_iu(const ConfusionMatrix& cm, std::span<const std::size_t> classes) {
  const auto iu = per_class_iu(cm);
  MeanIU r;
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t c : classes) {
    if (c >= cm.n_cl()) throw DimensionError("mean_iu: class " + std::to_string(c) + " out of range");
    if (iu[c] < 0.0) {
      r.excluded.push_back(c);
      continue;
    }
    sum += iu[c];
    ++used;
  }
  if (used == 0) throw DataError("mean IU undefined: no class has pixels in prediction or ground truth");
  r.value = sum / static_cast<double>(used);
  return r;
}

MeanIU mean_iu(const ConfusionMatrix& cm) {
  std::vector<std::size_t> all(cm.n_cl());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return mean_iu(cm, all);
}

double pixel_accuracy(const ConfusionMatrix& cm, std::span<const std::size_t> classes) {
  std::uint64_t hit = 0, total = 0;
  for (std::size_t c : classes) {
    hit += cm.at(c, c);
    total += cm.row_sum(c);
  }
  if (total == 0) throw DataError("pixel accuracy undefined: no ground-truth pixels");
  return static_cast<double>(hit) / static_cast<double>(total);
}

double pixel_accuracy(const ConfusionMatrix& cm) {
  std::vector<std::size_t> all(cm.n_cl());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return pixel_accuracy(cm, all);
}

double mean_accuracy(const ConfusionMatrix& cm) {
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < cm.n_cl(); ++i) {
    const std::uint64_t t = cm.row_sum(i);
    if (t == 0) continue;
    sum += static_cast<double>(cm.at(i, i)) / static_cast<double>(t);
    ++used;
  }
  if (used == 0) throw DataError("mean accuracy undefined: no ground-truth pixels");
  return sum / static_cast<double>(used);
}

MetricsReport make_report(const ConfusionMatrix& cm) {
  MetricsReport r;
  const MeanIU miu = mean_iu(cm);
  r.mean_iu = miu.value;
  r.excluded_classes = miu.excluded;
  r.pixel_accuracy = pixel_accuracy(cm);
  r.mean_accuracy = mean_accuracy(cm);
  r.per_class_iu = per_class_iu(cm);
  return r;
}

nlohmann::json to_json(const MetricsReport& report) {
  auto per_class = nlohmann::json::array();
  for (double v : report.per_class_iu) per_class.push_back(v < 0.0 ? nlohmann::json(nullptr) : nlohmann::json(v));
  return {{"mean_iu", report.mean_iu},
          {"pixel_accuracy", report.pixel_accuracy},
          {"mean_accuracy", report.mean_accuracy},
          {"per_class_iu", per_class},
          {"excluded_classes", report.excluded_classes}};
}

std::string to_csv(const MetricsReport& report) {
  std::ostringstream os;
  os.precision(17);
  os << "metric,value\n";
  os << "mean_iu," << report.mean_iu << '\n';
  os << "pixel_accuracy," << report.pixel_accuracy << '\n';
  os << "mean_accuracy," << report.mean_accuracy << '\n';
  for (std::size_t c = 0; c < report.per_class_iu.size(); ++c) {
    os << "iu_" << c << ',';
    if (report.per_class_iu[c] >= 0.0) os << report.per_class_iu[c];
    os << '\n';
  }
  return os.str();
}

}  // namespace stfcn
