// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "stfcn/label_map.hpp"

namespace stfcn {

/// counts[g][p] = pixels of ground-truth class g predicted as p. Pixels whose
/// ground truth is the ignore label are never counted.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t n_cl, int ignore_label = kDefaultIgnoreLabel);

  void accumulate(const LabelMap& pred, const LabelMap& gt);
  /// Elementwise sum; both matrices must have the same class count.
  void merge(const ConfusionMatrix& other);

  std::size_t n_cl() const noexcept { return n_cl_; }
  int ignore_label() const noexcept { return ignore_label_; }
  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * n_cl_ + pred]; }
  std::uint64_t& at(std::size_t gt, std::size_t pred) { return counts_[gt * n_cl_ + pred]; }
  std::uint64_t total() const;
  /// t_i: pixels whose ground truth is class i.
  std::uint64_t row_sum(std::size_t i) const;
  /// sum_j n_ji: pixels predicted as class i.
  std::uint64_t col_sum(std::size_t i) const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t n_cl_;
  int ignore_label_;
  std::vector<std::uint64_t> counts_;
};

/// IU_i = n_ii / (t_i + sum_j n_ji - n_ii); negative (-1) where the union is empty.
std::vector<double> per_class_iu(const ConfusionMatrix& cm);

struct MeanIU {
  double value = 0.0;
  /// Classes absent from both prediction and ground truth.
  std::vector<std::size_t> excluded;
};

/// Mean of IU over classes with a non-empty union. Throws DataError when every
/// class is absent.
MeanIU mean_iu(const ConfusionMatrix& cm);
/// Mean IU restricted to `classes` (same exclusion rule).
MeanIU mean_iu(const ConfusionMatrix& cm, std::span<const std::size_t> classes);
double pixel_accuracy(const ConfusionMatrix& cm);
/// Pixel accuracy over ground-truth pixels of `classes` only.
double pixel_accuracy(const ConfusionMatrix& cm, std::span<const std::size_t> classes);
/// Mean of n_ii / t_i over classes with t_i > 0.
double mean_accuracy(const ConfusionMatrix& cm);

struct MetricsReport {
  double mean_iu = 0.0;
  double pixel_accuracy = 0.0;
  double mean_accuracy = 0.0;
  std::vector<double> per_class_iu;
  std::vector<std::size_t> excluded_classes;
};

MetricsReport make_report(const ConfusionMatrix& cm);
nlohmann::json to_json(const MetricsReport& report);
/// Two-column CSV (metric,value); per-class IU rows are iu_<class>.
std::string to_csv(const MetricsReport& report);

}  // namespace stfcn
