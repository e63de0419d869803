#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

namespace editlab {

// Values observed under an ordered list of conditions (lambda values, method
// names, ...).
struct MetricSeries {
  std::vector<std::string> labels;
  std::vector<double> values;

  void validate() const;  // ShapeError unless sizes match, >= 2, all finite
};

struct TauResult {
  double value = 0.0;       // NaN when degenerate
  bool degenerate = false;  // one side has no untied pairs
};

// Kendall's tau-b over all pairs, tie-corrected:
//   (concordant - discordant) / sqrt((n0 - ties_x) (n0 - ties_y)).
TauResult kendall_tau(std::span<const double> x, std::span<const double> y);
TauResult kendall_tau(const MetricSeries& x, const MetricSeries& y);

// (max - min) / (range_max - range_min).
double coverage_proportion(std::span<const double> values, double range_min,
                           double range_max);

// Population standard deviation (divisor N).
double std_dev(std::span<const double> values);

// Kendall's tau between per-dataset series aligned by label. With more than
// two datasets the pairwise taus are averaged.
double rank_stability(const std::map<std::string, MetricSeries>& series_by_dataset);

}  // namespace editlab
