// SPDX-License-Identifier: Apache-2.0
#include "derd/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace derd {

namespace {

double median_of(std::vector<double> v) {
  const std::size_t n = v.size();
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (n % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

}  // namespace

MetricsReport compute_metrics(const DepthMap& est, const DepthMap& gt, const MetricsOptions& opts) {
  if (est.width != gt.width || est.height != gt.height)
    throw std::invalid_argument("metrics: depth maps differ in resolution");
  MetricsReport r;
  r.bad_pix_threshold = opts.bad_pix_threshold;
  r.n_points = est.valid_count();

  std::vector<double> abs_err;
  double sum_abs = 0.0, sum_rel = 0.0, sum_d = 0.0, sum_d2 = 0.0;
  std::size_t bad = 0, d1 = 0, d2 = 0, d3 = 0;
  for (std::size_t k = 0; k < est.depth.size(); ++k) {
    if (!est.valid[k] || !gt.valid[k]) continue;
    const double ze = est.depth[k];
    const double zg = gt.depth[k];
    if (!(ze > 0.0) || !(zg > 0.0)) throw std::domain_error("metrics: non-positive depth");
    const double e = std::abs(ze - zg);
    const double d = std::log(ze) - std::log(zg);
    abs_err.push_back(e);
    sum_abs += e;
    sum_rel += e / zg;
    sum_d += d;
    sum_d2 += d * d;
    if (e / zg > opts.bad_pix_threshold) ++bad;
    const double ratio = std::max(ze / zg, zg / ze);
    if (ratio < 1.25) ++d1;
    if (ratio < 1.25 * 1.25) ++d2;
    if (ratio < 1.25 * 1.25 * 1.25) ++d3;
  }
  const std::size_t n = abs_err.size();
  if (n == 0) throw std::invalid_argument("metrics: no pixel is valid in both maps");
  const double nd = static_cast<double>(n);
  r.n_overlap = n;
  r.mean_err = sum_abs / nd;
  r.median_err = median_of(abs_err);
  r.aerrr = 100.0 * sum_rel / nd;
  const double mean_d = sum_d / nd;
  const double mean_d2 = sum_d2 / nd;
  r.log_rmse = 100.0 * std::sqrt(mean_d2);
  r.silog = 100.0 * std::max(0.0, mean_d2 - mean_d * mean_d);
  r.bad_pix = 100.0 * static_cast<double>(bad) / nd;
  r.delta1 = 100.0 * static_cast<double>(d1) / nd;
  r.delta2 = 100.0 * static_cast<double>(d2) / nd;
  r.delta3 = 100.0 * static_cast<double>(d3) / nd;
  if (opts.retain_errors) r.abs_errors = std::move(abs_err);
  return r;
}

MetricsReport aggregate(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate: no reports");
  if (reports.size() == 1) return reports.front();
  MetricsReport out;
  out.bad_pix_threshold = reports.front().bad_pix_threshold;
  double total = 0.0;
  bool pooled = true;
  for (const auto& r : reports) {
    total += static_cast<double>(r.n_overlap);
    out.n_points += r.n_points;
    out.n_overlap += r.n_overlap;
    if (r.abs_errors.size() != r.n_overlap) pooled = false;
  }
  for (const auto& r : reports) {
    const double w = total > 0.0 ? static_cast<double>(r.n_overlap) / total : 0.0;
    out.mean_err += w * r.mean_err;
    out.bad_pix += w * r.bad_pix;
    out.silog += w * r.silog;
    out.aerrr += w * r.aerrr;
    out.log_rmse += w * r.log_rmse;
    out.delta1 += w * r.delta1;
    out.delta2 += w * r.delta2;
    out.delta3 += w * r.delta3;
    if (!pooled) out.median_err += w * r.median_err;
  }
  if (pooled) {
    std::vector<double> all;
    for (const auto& r : reports) all.insert(all.end(), r.abs_errors.begin(), r.abs_errors.end());
    out.median_err = median_of(all);
    out.abs_errors = std::move(all);
  }
  out.median_exact = pooled;
  return out;
}

std::string metrics_csv_header() {
  return "label,mean_err_m,median_err_m,bad_pix_pct,bad_pix_threshold,silog,aerrr_pct,log_rmse,"
         "delta1_pct,delta2_pct,delta3_pct,n_points,n_overlap,median_exact";
}

std::string metrics_csv_row(const std::string& label, const MetricsReport& r) {
  std::ostringstream ss;
  ss.precision(10);
  ss << label << ',' << r.mean_err << ',' << r.median_err << ',' << r.bad_pix << ','
     << r.bad_pix_threshold << ',' << r.silog << ',' << r.aerrr << ',' << r.log_rmse << ','
     << r.delta1 << ',' << r.delta2 << ',' << r.delta3 << ',' << r.n_points << ','
     << r.n_overlap << ',' << (r.median_exact ? 1 : 0);
  return ss.str();
}

std::string metrics_json(const MetricsReport& r) {
  const nlohmann::json j = {{"mean_err_m", r.mean_err},
                            {"median_err_m", r.median_err},
                            {"bad_pix_pct", r.bad_pix},
                            {"bad_pix_threshold", r.bad_pix_threshold},
                            {"silog", r.silog},
                            {"aerrr_pct", r.aerrr},
                            {"log_rmse", r.log_rmse},
                            {"delta1_pct", r.delta1},
                            {"delta2_pct", r.delta2},
                            {"delta3_pct", r.delta3},
                            {"n_points", r.n_points},
                            {"n_overlap", r.n_overlap},
                            {"median_exact", r.median_exact}};
  return j.dump(2);
}

std::string format_metrics_table(std::span<const std::pair<std::string, MetricsReport>> rows) {
  std::ostringstream ss;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-28s %9s %9s %8s %7s %7s %8s %7s %7s %7s %8s\n", "Method",
                "Mean[cm]", "Med[cm]", "bad-pix", "SILog", "AErrR", "logRMSE", "d<1.25",
                "d<1.25^2", "d<1.25^3", "#Points");
  ss << buf;
  for (const auto& [label, r] : rows) {
    std::snprintf(buf, sizeof buf,
                  "%-28s %9.2f %9.2f %8.2f %7.2f %7.2f %8.2f %7.2f %7.2f %7.2f %8zu\n",
                  label.c_str(), 100.0 * r.mean_err, 100.0 * r.median_err, r.bad_pix, r.silog,
                  r.aerrr, r.log_rmse, r.delta1, r.delta2, r.delta3, r.n_points);
    ss << buf;
  }
  if (!rows.empty()) {
    std::snprintf(buf, sizeof buf, "(bad-pix: relative error > %.0f%%)\n",
                  100.0 * rows.front().second.bad_pix_threshold);
    ss << buf;
  }
  return ss.str();
}

}  // namespace derd
