// SPDX-License-Identifier: Apache-2.0
// Reference implementations used to cross-check the library. They favour
// plain loops and brute force over speed and share no code paths with the
// optimized implementations beyond basic types.
#pragma once

#include "derd/dsi.hpp"
#include "derd/metrics.hpp"
#include "derd/network.hpp"
#include "derd/pixel_select.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace derd::oracle {

/// Pose at t on a two-sample trajectory, by direct lerp/slerp.
inline Pose two_sample_pose(const TimedPose& a, const TimedPose& b, double t) {
  const double f = (t - a.t) / (b.t - a.t);
  Pose p;
  p.translation = (1.0 - f) * a.pose.translation + f * b.pose.translation;
  p.rotation = a.pose.rotation.slerp(f, b.pose.rotation).normalized();
  return p;
}

/// Dense ray sampling: every event ray is sampled at `samples` points in the
/// world frame, each sample is mapped into the reference camera, and the
/// sample pair bracketing a plane gives the plane crossing by linear
/// interpolation. One vote per (event, plane), at the rounded projection.
inline std::vector<float> ray_sampling_dsi(std::span<const Event> packet, const Pose& T_w_event,
                                           const Pose& T_w_ref, const CameraIntrinsics& K,
                                           const std::vector<double>& depths, int samples) {
  const int W = K.width;
  const int H = K.height;
  const int D = static_cast<int>(depths.size());
  std::vector<float> grid(static_cast<std::size_t>(D) * W * H, 0.0f);
  const Eigen::Matrix3d R_we = T_w_event.rotation.toRotationMatrix();
  const Eigen::Matrix3d R_rw = T_w_ref.rotation.conjugate().toRotationMatrix();
  const Eigen::Vector3d t_rw = -(R_rw * T_w_ref.translation);
  for (const Event& e : packet) {
    const Eigen::Vector3d ray_c((e.x - K.cx) / K.fx, (e.y - K.cy) / K.fy, 1.0);
    const Eigen::Vector3d dir_w = R_we * ray_c;
    const Eigen::Vector3d origin_w = T_w_event.translation;
    // Samples along s in (0, inf): s = s0 * u / (1 - u), u uniform in (0, 1).
    const double s0 = depths[D / 2];
    std::vector<Eigen::Vector3d> pts(samples);
    for (int k = 0; k < samples; ++k) {
      const double u = (k + 0.5) / samples;
      const Eigen::Vector3d pw = origin_w + (s0 * u / (1.0 - u)) * dir_w;
      pts[k] = R_rw * pw + t_rw;
    }
    std::set<int> voted;
    for (int k = 0; k + 1 < samples; ++k) {
      const Eigen::Vector3d& a = pts[k];
      const Eigen::Vector3d& b = pts[k + 1];
      for (int i = 0; i < D; ++i) {
        const double da = a.z() - depths[i];
        const double db = b.z() - depths[i];
        if (!((da <= 0.0 && db > 0.0) || (da >= 0.0 && db < 0.0))) continue;
        if (voted.count(i)) continue;
        voted.insert(i);
        const double f = da / (da - db);
        const Eigen::Vector3d P = a + f * (b - a);
        const double x = std::floor(K.fx * P.x() / depths[i] + K.cx + 0.5);
        const double y = std::floor(K.fy * P.y() / depths[i] + K.cy + 0.5);
        if (x < 0 || y < 0 || x >= W || y >= H) continue;
        grid[(static_cast<std::size_t>(i) * H + static_cast<std::size_t>(y)) * W +
             static_cast<std::size_t>(x)] += 1.0f;
      }
    }
  }
  return grid;
}

/// Random single-packet voting problem: two-sample trajectory, reference
/// pose near the trajectory, events anywhere on the sensor.
struct VotingScene {
  CameraIntrinsics K;
  Trajectory traj;
  Pose ref;
  std::vector<Event> events;
  DsiShape shape;
};

template <class Rng>
VotingScene random_voting_scene(Rng& rng, int size, int planes, int n_events) {
  VotingScene s;
  const double f = size * rng.uniform(0.8, 1.2);
  s.K = {f, f * rng.uniform(0.95, 1.05), (size - 1) * rng.uniform(0.4, 0.6),
         (size - 1) * rng.uniform(0.4, 0.6), size, size};
  auto small_pose = [&](double trans, double rot) {
    Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    axis.normalize();
    const Eigen::Quaterniond q(Eigen::AngleAxisd(rng.uniform(-rot, rot), axis));
    return Pose(Eigen::Vector3d(rng.uniform(-trans, trans), rng.uniform(-trans, trans),
                                rng.uniform(-trans, trans)),
                q);
  };
  const double t0 = rng.uniform(0.0, 1.0);
  const double t1 = t0 + rng.uniform(0.05, 1.0);
  s.traj = Trajectory({{t0, small_pose(0.4, 0.15)}, {t1, small_pose(0.4, 0.15)}});
  s.ref = small_pose(0.2, 0.1);
  s.shape = {planes, rng.uniform(0.5, 1.5), rng.uniform(3.0, 8.0)};
  std::vector<double> ts(n_events);
  for (auto& t : ts) t = rng.uniform(t0, t1);
  std::sort(ts.begin(), ts.end());
  for (double t : ts) {
    Event e;
    e.t = t;
    e.x = static_cast<std::uint16_t>(rng.uniform_index(size));
    e.y = static_cast<std::uint16_t>(rng.uniform_index(size));
    e.polarity = rng.uniform() < 0.5 ? -1 : 1;
    s.events.push_back(e);
  }
  return s;
}

/// Oracle DSI for a single-packet scene.
inline std::vector<float> oracle_dsi(const VotingScene& s, int samples = 10000) {
  const auto& sm = s.traj.samples();
  const std::size_t n = s.events.size();
  const double t_med = 0.5 * (s.events[(n - 1) / 2].t + s.events[n / 2].t);
  const Pose T_we = two_sample_pose(sm.front(), sm.back(), t_med);
  return ray_sampling_dsi(s.events, T_we, s.ref, s.K,
                          plane_depths(s.shape.z_min, s.shape.z_max, s.shape.num_planes), samples);
}

struct LoopMetrics {
  double mean = 0, median = 0, bad = 0, silog = 0, aerrr = 0, log_rmse = 0, d1 = 0, d2 = 0, d3 = 0;
  std::size_t n_points = 0, n = 0;
};

inline LoopMetrics loop_metrics(const DepthMap& est, const DepthMap& gt, double bad_thr) {
  LoopMetrics m;
  std::vector<double> abs_err;
  double sum_d = 0, sum_d2 = 0;
  for (int y = 0; y < est.height; ++y)
    for (int x = 0; x < est.width; ++x) {
      if (!est.is_valid(x, y)) continue;
      ++m.n_points;
      if (!gt.is_valid(x, y)) continue;
      const double ze = est.at(x, y);
      const double zg = gt.at(x, y);
      const double e = std::abs(ze - zg);
      abs_err.push_back(e);
      m.mean += e;
      m.aerrr += e / zg;
      if (e / zg > bad_thr) m.bad += 1;
      const double d = std::log(ze) - std::log(zg);
      sum_d += d;
      sum_d2 += d * d;
      const double ratio = std::max(ze / zg, zg / ze);
      if (ratio < 1.25) m.d1 += 1;
      if (ratio < 1.25 * 1.25) m.d2 += 1;
      if (ratio < 1.25 * 1.25 * 1.25) m.d3 += 1;
    }
  const double n = static_cast<double>(abs_err.size());
  m.n = abs_err.size();
  std::sort(abs_err.begin(), abs_err.end());
  const std::size_t h = abs_err.size() / 2;
  m.median = abs_err.size() % 2 ? abs_err[h] : 0.5 * (abs_err[h - 1] + abs_err[h]);
  m.mean /= n;
  m.aerrr *= 100.0 / n;
  m.bad *= 100.0 / n;
  m.d1 *= 100.0 / n;
  m.d2 *= 100.0 / n;
  m.d3 *= 100.0 / n;
  m.log_rmse = 100.0 * std::sqrt(sum_d2 / n);
  m.silog = 100.0 * (sum_d2 / n - (sum_d / n) * (sum_d / n));
  return m;
}

/// Direct 6-deep loop convolution with depth padding 1 and stride 2.
inline std::vector<double> loop_conv(const std::vector<double>& in, int D, int rows, int cols,
                                     const ModelParams& p, int channels) {
  const int steps = (D - 1) / 2 + 1;
  const int orow = rows - 2;
  const int ocol = cols - 2;
  std::vector<double> out(static_cast<std::size_t>(steps) * channels * orow * ocol);
  for (int s = 0; s < steps; ++s)
    for (int c = 0; c < channels; ++c)
      for (int r = 0; r < orow; ++r)
        for (int q = 0; q < ocol; ++q) {
          double acc = p.conv_b.data[c];
          for (int kd = 0; kd < 3; ++kd) {
            const int d = 2 * s - 1 + kd;
            if (d < 0 || d >= D) continue;
            for (int kr = 0; kr < 3; ++kr)
              for (int kc = 0; kc < 3; ++kc)
                acc += p.conv_w.data[((c * 3 + kd) * 3 + kr) * 3 + kc] *
                       in[(static_cast<std::size_t>(d) * rows + r + kr) * cols + q + kc];
          }
          out[((static_cast<std::size_t>(s) * channels + c) * orow + r) * ocol + q] =
              std::max(acc, 0.0);
        }
  return out;
}

/// Distance of the nearest non-differentiable point: ReLU pre-activations
/// and active loss residuals.
inline double kink_margin(std::span<const double> input, int D, std::span<const double> target,
                          std::span<const std::uint8_t> mask, const NetworkConfig& cfg,
                          const ModelParams& p) {
  const auto a = forward(input, D, cfg, p);
  double m = 1e300;
  for (double v : a.conv_pre) m = std::min(m, std::abs(v));
  for (double v : a.dense1_pre) m = std::min(m, std::abs(v));
  for (std::size_t k = 0; k < target.size(); ++k)
    if (mask[k]) m = std::min(m, std::abs(a.output[k] - target[k]));
  return m;
}

struct GradCheck {
  std::size_t compared = 0;
  std::size_t failures = 0;
  double worst_ratio = 0.0;  // max |diff| / allowed
  std::string worst_name;
};

/// Central finite differences on every parameter, compared with `analytic`.
/// Entry passes when |fd - ga| <= max(abs_floor, rel * max(|fd|, |ga|)).
inline GradCheck finite_difference_check(std::span<const double> input, int D,
                                         std::span<const double> target,
                                         std::span<const std::uint8_t> mask,
                                         const NetworkConfig& cfg, ModelParams params,
                                         const ModelParams& analytic, double step, double rel,
                                         double abs_floor) {
  GradCheck r;
  auto loss = [&](const ModelParams& p) {
    return masked_mae(forward(input, D, cfg, p).output, target, mask);
  };
  auto named = params.named();
  const auto ga = analytic.named();
  for (std::size_t t = 0; t < named.size(); ++t) {
    auto& data = named[t].second->data;
    const auto& g = ga[t].second->data;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + step;
      const double lp = loss(params);
      data[i] = orig - step;
      const double lm = loss(params);
      data[i] = orig;
      const double fd = (lp - lm) / (2.0 * step);
      const double allowed = std::max(abs_floor, rel * std::max(std::abs(fd), std::abs(g[i])));
      const double ratio = std::abs(fd - g[i]) / allowed;
      ++r.compared;
      if (ratio > 1.0) ++r.failures;
      if (ratio > r.worst_ratio) {
        r.worst_ratio = ratio;
        r.worst_name = named[t].first + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

}  // namespace derd::oracle
