#include "editlab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "editlab/error.hpp"

namespace editlab {

void MetricSeries::validate() const {
  if (labels.size() != values.size()) {
    throw Error(ErrorCode::kShapeError, "labels and values differ in length");
  }
  if (values.size() < 2) throw Error(ErrorCode::kShapeError, "series needs >= 2 values");
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kNumericalError, "non-finite series value");
  }
}

TauResult kendall_tau(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::kShapeError, "series lengths differ");
  const std::size_t n = x.size();
  if (n < 2) throw Error(ErrorCode::kShapeError, "kendall_tau needs >= 2 points");

  long long concordant = 0;
  long long discordant = 0;
  long long tied_x = 0;
  long long tied_y = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx == 0.0) ++tied_x;
      if (dy == 0.0) ++tied_y;
      if (dx == 0.0 || dy == 0.0) continue;
      if ((dx > 0.0) == (dy > 0.0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const auto pairs = static_cast<long long>(n * (n - 1) / 2);
  const double denom = std::sqrt(static_cast<double>(pairs - tied_x) *
                                 static_cast<double>(pairs - tied_y));
  if (denom == 0.0) return TauResult{std::numeric_limits<double>::quiet_NaN(), true};
  return TauResult{static_cast<double>(concordant - discordant) / denom, false};
}

TauResult kendall_tau(const MetricSeries& x, const MetricSeries& y) {
  return kendall_tau(std::span<const double>(x.values), std::span<const double>(y.values));
}

double coverage_proportion(std::span<const double> values, double range_min,
                           double range_max) {
  if (values.empty()) throw Error(ErrorCode::kEmptyDataset, "coverage of an empty series");
  if (!(range_max > range_min)) throw Error(ErrorCode::kShapeError, "empty range");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  return (*hi - *lo) / (range_max - range_min);
}

double std_dev(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::kEmptyDataset, "std of an empty series");
  const auto n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / n);
}

double rank_stability(const std::map<std::string, MetricSeries>& series_by_dataset) {
  if (series_by_dataset.size() < 2) {
    throw Error(ErrorCode::kShapeError, "rank stability needs >= 2 datasets");
  }
  // Align every dataset to the label order of the first one.
  const MetricSeries& reference = series_by_dataset.begin()->second;
  reference.validate();
  const std::set<std::string> reference_labels(reference.labels.begin(), reference.labels.end());
  if (reference_labels.size() != reference.labels.size()) {
    throw Error(ErrorCode::kLabelMismatch, "duplicate method label");
  }
  std::vector<std::vector<double>> aligned;
  for (const auto& [name, series] : series_by_dataset) {
    series.validate();
    if (std::set<std::string>(series.labels.begin(), series.labels.end()) != reference_labels ||
        series.labels.size() != reference.labels.size()) {
      throw Error(ErrorCode::kLabelMismatch, "dataset '" + name + "' has different methods");
    }
    std::vector<double> values;
    for (const std::string& label : reference.labels) {
      const auto it = std::find(series.labels.begin(), series.labels.end(), label);
      values.push_back(series.values[static_cast<std::size_t>(it - series.labels.begin())]);
    }
    aligned.push_back(std::move(values));
  }
  double total = 0.0;
  int count = 0;
  for (std::size_t a = 0; a < aligned.size(); ++a) {
    for (std::size_t b = a + 1; b < aligned.size(); ++b) {
      const TauResult tau = kendall_tau(aligned[a], aligned[b]);
      if (tau.degenerate) throw Error(ErrorCode::kDegenerate, "all-tied method series");
      total += tau.value;
      ++count;
    }
  }
  return total / count;
}

}  // namespace editlab
