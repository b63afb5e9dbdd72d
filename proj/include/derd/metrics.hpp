// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "derd/pixel_select.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace derd {

/// Depth-error summary. Errors are in meters; percentages are 0-100; SILog
/// and log RMSE are scaled by 100.
struct MetricsReport {
  double mean_err = 0.0;
  double median_err = 0.0;
  double bad_pix = 0.0;
  double silog = 0.0;
  double aerrr = 0.0;
  double log_rmse = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  /// All valid estimated pixels, with or without ground truth.
  std::size_t n_points = 0;
  /// Pixels valid in both maps; the population of every error metric.
  std::size_t n_overlap = 0;
  double bad_pix_threshold = 0.10;
  /// False when median_err is a weighted mean of per-report medians.
  bool median_exact = true;
  /// Absolute errors, kept when requested so aggregates can pool medians.
  std::vector<double> abs_errors;

  bool operator==(const MetricsReport&) const = default;
};

struct MetricsOptions {
  /// Relative error |e| / z_gt above which a pixel counts as bad.
  double bad_pix_threshold = 0.10;
  bool retain_errors = false;
};

MetricsReport compute_metrics(const DepthMap& est, const DepthMap& gt,
                              const MetricsOptions& opts = {});

/// Overlap-weighted combination of per-frame reports.
MetricsReport aggregate(std::span<const MetricsReport> reports);

std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& label, const MetricsReport& r);
std::string metrics_json(const MetricsReport& r);

/// Fixed-width comparison table, one row per method (errors in cm).
std::string format_metrics_table(std::span<const std::pair<std::string, MetricsReport>> rows);

}  // namespace derd
