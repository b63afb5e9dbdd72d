// SPDX-License-Identifier: Apache-2.0
#include "derd/metrics.hpp"
#include "derd/random.hpp"
#include "oracles.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cmath>

using namespace derd;

namespace {

DepthMap row_map(std::initializer_list<double> z) {
  DepthMap m(static_cast<int>(z.size()), 1);
  int x = 0;
  for (double v : z) m.set(x++, 0, v);
  return m;
}

std::pair<DepthMap, DepthMap> random_maps(Rng& rng, int w, int h) {
  DepthMap est(w, h), gt(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double z = rng.uniform(0.5, 20.0);
      if (rng.uniform() < 0.8) gt.set(x, y, z);
      if (rng.uniform() < 0.6) est.set(x, y, z * std::exp(0.3 * rng.normal()));
    }
  // Guarantee overlap.
  est.set(0, 0, 3.0);
  gt.set(0, 0, 2.0);
  return {est, gt};
}

void check_close(double a, double b, double tol = 1e-9) {
  CHECK(std::abs(a - b) <= tol * std::max(1.0, std::abs(b)));
}

}  // namespace

TEST_CASE("identical maps") {
  const auto m = row_map({1.0, 2.5, 7.0});
  const auto r = compute_metrics(m, m);
  CHECK(r.mean_err == 0.0);
  CHECK(r.median_err == 0.0);
  CHECK(r.bad_pix == 0.0);
  CHECK(r.silog == 0.0);
  CHECK(r.aerrr == 0.0);
  CHECK(r.log_rmse == 0.0);
  CHECK(r.delta1 == 100.0);
  CHECK(r.delta2 == 100.0);
  CHECK(r.delta3 == 100.0);
  CHECK(r.n_points == 3);
  CHECK(r.n_overlap == 3);
}

TEST_CASE("two-pixel hand example") {
  const auto r = compute_metrics(row_map({1.0, 2.0}), row_map({2.0, 2.0}));
  CHECK(r.mean_err == doctest::Approx(0.5));
  CHECK(r.median_err == doctest::Approx(0.5));
  CHECK(r.aerrr == doctest::Approx(25.0));
  CHECK(r.log_rmse == doctest::Approx(49.01).epsilon(1e-4));
  CHECK(r.silog == doctest::Approx(12.01).epsilon(1e-3));
  CHECK(r.delta1 == 50.0);
  // Ratio 2 exceeds 1.25^3, so the first pixel is outside every delta band.
  CHECK(r.delta2 == 50.0);
  CHECK(r.delta3 == 50.0);
  CHECK(r.bad_pix == 50.0);
}

TEST_CASE("delta boundary is strict") {
  const auto r = compute_metrics(row_map({1.0}), row_map({1.25}));
  CHECK(r.delta1 == 0.0);
  CHECK(r.delta2 == 100.0);
  const auto s = compute_metrics(row_map({1.25}), row_map({1.0}));
  CHECK(s.delta1 == 0.0);
  CHECK(s.delta2 == 100.0);
}

TEST_CASE("bad-pix threshold is configurable") {
  const auto est = row_map({1.05, 1.2, 2.0});
  const auto gt = row_map({1.0, 1.0, 1.0});
  CHECK(compute_metrics(est, gt).bad_pix == doctest::Approx(200.0 / 3.0));
  MetricsOptions o;
  o.bad_pix_threshold = 0.5;
  const auto r = compute_metrics(est, gt, o);
  CHECK(r.bad_pix == doctest::Approx(100.0 / 3.0));
  CHECK(r.bad_pix_threshold == 0.5);
}

TEST_CASE("masks and counts") {
  DepthMap est(3, 1), gt(3, 1);
  est.set(0, 0, 1.0);
  est.set(1, 0, 2.0);
  gt.set(1, 0, 2.0);
  gt.set(2, 0, 5.0);
  const auto r = compute_metrics(est, gt);
  CHECK(r.n_points == 2);
  CHECK(r.n_overlap == 1);
  CHECK(r.mean_err == 0.0);
}

TEST_CASE("errors") {
  DepthMap est(2, 1), gt(2, 1);
  est.set(0, 0, 1.0);
  gt.set(1, 0, 1.0);
  CHECK_THROWS(compute_metrics(est, gt));
  CHECK_THROWS(compute_metrics(row_map({0.0}), row_map({1.0})));
  CHECK_THROWS(compute_metrics(row_map({1.0}), row_map({-2.0})));
  CHECK_THROWS(compute_metrics(row_map({1.0}), row_map({1.0, 2.0})));
  CHECK_THROWS(aggregate({}));
}

TEST_CASE("aggregate") {
  const auto a = compute_metrics(row_map({1.0, 2.0, 4.0}), row_map({1.5, 2.0, 3.0}));
  const MetricsReport one[] = {a};
  CHECK(aggregate(one) == a);
  const MetricsReport two[] = {a, a};
  const auto b = aggregate(two);
  check_close(b.mean_err, a.mean_err);
  check_close(b.median_err, a.median_err);
  check_close(b.silog, a.silog);
  check_close(b.delta1, a.delta1);
  CHECK(b.n_points == 2 * a.n_points);

  MetricsReport r1, r3;
  r1.n_overlap = r1.n_points = 1;
  r1.mean_err = 0.0;
  r3.n_overlap = r3.n_points = 3;
  r3.mean_err = 4.0;
  r3.median_err = 4.0;
  const MetricsReport mix[] = {r1, r3};
  const auto c = aggregate(mix);
  CHECK(c.mean_err == 3.0);
  CHECK(c.median_err == 3.0);
  CHECK_FALSE(c.median_exact);
  CHECK(c.n_points == 4);

  MetricsOptions keep;
  keep.retain_errors = true;
  const auto p = compute_metrics(row_map({1.0, 2.0}), row_map({1.0, 2.0}), keep);
  const auto q = compute_metrics(row_map({5.0, 5.0, 5.0}), row_map({1.0, 1.0, 1.0}), keep);
  const MetricsReport pooled[] = {p, q};
  const auto d = aggregate(pooled);
  CHECK(d.median_exact);
  CHECK(d.median_err == 4.0);
}

TEST_CASE("random maps agree with a loop reimplementation") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const auto [est, gt] = random_maps(rng, 17, 11);
    const double thr = rng.uniform(0.02, 0.3);
    MetricsOptions o;
    o.bad_pix_threshold = thr;
    const auto r = compute_metrics(est, gt, o);
    const auto l = oracle::loop_metrics(est, gt, thr);
    check_close(r.mean_err, l.mean);
    check_close(r.median_err, l.median);
    check_close(r.bad_pix, l.bad);
    check_close(r.silog, l.silog);
    check_close(r.aerrr, l.aerrr);
    check_close(r.log_rmse, l.log_rmse);
    check_close(r.delta1, l.d1);
    check_close(r.delta2, l.d2);
    check_close(r.delta3, l.d3);
    CHECK(r.n_points == l.n_points);
    CHECK(r.n_overlap == l.n);

    CHECK(r.silog >= 0.0);
    CHECK(r.delta1 <= r.delta2);
    CHECK(r.delta2 <= r.delta3);
    for (double v : {r.bad_pix, r.aerrr, r.delta1, r.delta2, r.delta3}) {
      CHECK(std::isfinite(v));
      CHECK(v >= 0.0);
    }
    for (double v : {r.bad_pix, r.delta1, r.delta2, r.delta3}) CHECK(v <= 100.0);
  }
}

TEST_CASE("joint scaling") {
  Rng rng(32);
  for (int trial = 0; trial < 20; ++trial) {
    auto [est, gt] = random_maps(rng, 9, 9);
    const double k = rng.uniform(0.1, 10.0);
    const auto r = compute_metrics(est, gt);
    for (auto& z : est.depth) z *= k;
    for (auto& z : gt.depth) z *= k;
    const auto s = compute_metrics(est, gt);
    check_close(s.silog, r.silog, 1e-7);
    check_close(s.log_rmse, r.log_rmse, 1e-9);
    check_close(s.aerrr, r.aerrr, 1e-9);
    check_close(s.mean_err, k * r.mean_err, 1e-9);
    check_close(s.median_err, k * r.median_err, 1e-9);
    // Ratios can move across a threshold by one ulp after scaling.
    CHECK(std::abs(s.delta1 - r.delta1) <= 100.0 / r.n_overlap + 1e-9);
    CHECK(std::abs(s.bad_pix - r.bad_pix) <= 100.0 / r.n_overlap + 1e-9);
  }
}

TEST_CASE("report formats") {
  const auto r = compute_metrics(row_map({1.0, 2.0}), row_map({2.0, 2.0}));
  const auto header = metrics_csv_header();
  const auto row = metrics_csv_row("argmax", r);
  CHECK(std::count(header.begin(), header.end(), ',') == std::count(row.begin(), row.end(), ','));
  CHECK(row.rfind("argmax,", 0) == 0);
  const auto j = nlohmann::json::parse(metrics_json(r));
  CHECK(j.at("mean_err_m").get<double>() == doctest::Approx(0.5));
  CHECK(j.at("bad_pix_threshold").get<double>() == 0.10);
  CHECK(j.at("n_points").get<int>() == 2);
  const std::pair<std::string, MetricsReport> rows[] = {{"argmax", r}, {"network", r}};
  const auto t = format_metrics_table(rows);
  CHECK(t.find("network") != std::string::npos);
  CHECK(t.find("50.00") != std::string::npos);
  CHECK(std::count(t.begin(), t.end(), '\n') >= 3);
}
