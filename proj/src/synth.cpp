// SPDX-License-Identifier: Apache-2.0
#include "derd/synth.hpp"

#include "derd/error.hpp"
#include "derd/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>

namespace derd {

namespace {

double round_px(double v) { return std::floor(v + 0.5); }

struct Projection {
  bool ok = false;
  double u = 0.0;
  double v = 0.0;
  double z = 0.0;
};

Projection project_world(const Eigen::Vector3d& p_w, const Pose& T_cw, const CameraIntrinsics& K) {
  const Eigen::Vector3d p = T_cw * p_w;
  Projection out;
  if (!(p.z() > 1e-6)) return out;
  out.u = K.fx * p.x() / p.z() + K.cx;
  out.v = K.fy * p.y() / p.z() + K.cy;
  out.z = p.z();
  out.ok = round_px(out.u) >= 0 && round_px(out.v) >= 0 && round_px(out.u) < K.width &&
           round_px(out.v) < K.height;
  return out;
}

// Fraction of the step at which the rounded coordinate moved from a to b.
double crossing_fraction(double a, double b) {
  const double ra = round_px(a);
  const double rb = round_px(b);
  if (ra == rb || a == b) return 0.0;
  const double boundary = ra + (rb > ra ? 0.5 : -0.5);
  return std::clamp((boundary - a) / (b - a), 0.0, 1.0);
}

std::vector<Event> simulate_camera(const std::vector<Eigen::Vector3d>& points,
                                   const SceneSpec& spec, const Pose& body_to_cam, Rng& rng) {
  const auto& K = spec.camera;
  const auto steps = static_cast<std::size_t>(std::ceil(spec.duration / spec.micro_dt - 1e-9));
  std::vector<Projection> prev(points.size());
  std::vector<std::int8_t> polarity(points.size(), 1);
  std::vector<Event> events;
  for (std::size_t k = 0; k <= steps; ++k) {
    const double t = std::min(spec.duration, static_cast<double>(k) * spec.micro_dt);
    const double t_prev = k == 0 ? 0.0 : std::min(spec.duration, (k - 1.0) * spec.micro_dt);
    const Pose T_cw = (spec.left_pose_at(t) * body_to_cam).inverse();
    for (std::size_t i = 0; i < points.size(); ++i) {
      const Projection cur = project_world(points[i], T_cw, K);
      const Projection& old = prev[i];
      if (k > 0 && cur.ok && old.ok &&
          (round_px(cur.u) != round_px(old.u) || round_px(cur.v) != round_px(old.v))) {
        const double alpha =
            std::max(crossing_fraction(old.u, cur.u), crossing_fraction(old.v, cur.v));
        Event e;
        e.t = t_prev + alpha * (t - t_prev);
        double x = round_px(cur.u);
        double y = round_px(cur.v);
        if (spec.noise.pixel_jitter_std > 0.0) {
          x = round_px(cur.u + spec.noise.pixel_jitter_std * rng.normal());
          y = round_px(cur.v + spec.noise.pixel_jitter_std * rng.normal());
        }
        if (x >= 0 && y >= 0 && x < K.width && y < K.height) {
          e.x = static_cast<std::uint16_t>(x);
          e.y = static_cast<std::uint16_t>(y);
          e.polarity = polarity[i];
          polarity[i] = static_cast<std::int8_t>(-polarity[i]);
          events.push_back(e);
        }
      }
      prev[i] = cur;
    }
  }
  const auto n_spurious = static_cast<std::size_t>(std::llround(spec.noise.spurious_rate * spec.duration));
  for (std::size_t i = 0; i < n_spurious; ++i) {
    Event e;
    e.t = rng.uniform(0.0, spec.duration);
    e.x = static_cast<std::uint16_t>(rng.uniform_index(K.width));
    e.y = static_cast<std::uint16_t>(rng.uniform_index(K.height));
    e.polarity = rng.uniform() < 0.5 ? -1 : 1;
    events.push_back(e);
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
  return events;
}

}  // namespace

void SceneSpec::validate() const {
  camera.validate();
  if (!(duration > 0.0)) throw ConfigError("scene duration must be positive");
  if (!(micro_dt > 0.0)) throw ConfigError("micro_dt must be positive");
  if (!(pose_rate > 0.0) || !(gt_rate > 0.0)) throw ConfigError("pose and GT rates must be positive");
  if (stereo_baseline < 0.0) throw ConfigError("stereo baseline must be >= 0");
  if (noise.pixel_jitter_std < 0.0 || noise.spurious_rate < 0.0)
    throw ConfigError("noise parameters must be >= 0");
  const auto pts = scene_points();
  constexpr int kChecks = 21;
  for (const auto& p : pts) {
    int in_front = 0;
    for (int k = 0; k < kChecks; ++k) {
      const Pose T_cw = left_pose_at(duration * k / (kChecks - 1)).inverse();
      if ((T_cw * p).z() > 0.0) ++in_front;
    }
    if (in_front < 0.9 * kChecks) throw ConfigError("scene point behind the camera for >10% of the trajectory");
  }
}

std::vector<Eigen::Vector3d> SceneSpec::scene_points() const {
  std::vector<Eigen::Vector3d> pts = edge_points;
  const Pose T_cw = start.inverse();
  for (const auto& s : segments) {
    const double z = std::max(0.1, 0.5 * ((T_cw * s.a).z() + (T_cw * s.b).z()));
    const double step_m = segment_step_px * z / camera.fx;
    const int n = std::max(2, static_cast<int>(std::ceil((s.b - s.a).norm() / step_m)) + 1);
    for (int i = 0; i < n; ++i) pts.push_back(s.a + (s.b - s.a) * (static_cast<double>(i) / (n - 1)));
  }
  return pts;
}

Pose SceneSpec::left_pose_at(double t) const {
  const double f = std::clamp(t / duration, 0.0, 1.0);
  return Pose(start.translation + f * (end.translation - start.translation),
              start.rotation.slerp(f, end.rotation));
}

Pose SceneSpec::left_to_right() const {
  return Pose(Eigen::Vector3d(stereo_baseline, 0.0, 0.0), Eigen::Quaterniond::Identity());
}

DepthMap render_depth(const std::vector<Eigen::Vector3d>& points, const Pose& T_wc,
                      const CameraIntrinsics& K) {
  DepthMap dm(K.width, K.height);
  const Pose T_cw = T_wc.inverse();
  for (const auto& p : points) {
    const Projection pr = project_world(p, T_cw, K);
    if (!pr.ok) continue;
    const int x = static_cast<int>(round_px(pr.u));
    const int y = static_cast<int>(round_px(pr.v));
    if (!dm.is_valid(x, y) || pr.z < dm.at(x, y)) dm.set(x, y, pr.z);
  }
  return dm;
}

SyntheticSequence generate(std::uint64_t seed, const SceneSpec& spec) {
  spec.validate();
  const auto points = spec.scene_points();
  Rng rng(seed);
  SyntheticSequence seq;
  seq.calib.left = spec.camera;
  seq.calib.right = spec.camera;
  seq.calib.stereo = spec.stereo_baseline > 0.0;
  seq.calib.left_to_right = spec.left_to_right();

  const auto n_poses = static_cast<std::size_t>(std::ceil(spec.duration * spec.pose_rate)) + 1;
  std::vector<TimedPose> samples;
  for (std::size_t i = 0; i < n_poses; ++i) {
    const double t = spec.duration * static_cast<double>(i) / static_cast<double>(n_poses - 1);
    samples.push_back({t, spec.left_pose_at(t)});
  }
  seq.traj_left = Trajectory(std::move(samples));
  seq.traj_right = seq.traj_left.right_multiplied(seq.calib.left_to_right);

  seq.events_left = simulate_camera(points, spec, Pose::identity(), rng);
  if (seq.calib.stereo) seq.events_right = simulate_camera(points, spec, seq.calib.left_to_right, rng);
  if (seq.events_left.empty())
    std::cerr << "warning: synthetic sequence produced no events (static camera?)\n";

  const auto n_gt = static_cast<std::size_t>(std::floor(spec.duration * spec.gt_rate + 1e-9)) + 1;
  for (std::size_t k = 0; k < n_gt; ++k) {
    GtFrame f;
    f.t = std::min(spec.duration, static_cast<double>(k) / spec.gt_rate);
    const Pose T_wl = spec.left_pose_at(f.t);
    f.left = render_depth(points, T_wl, spec.camera);
    if (seq.calib.stereo) f.right = render_depth(points, T_wl * seq.calib.left_to_right, spec.camera);
    seq.gt.push_back(std::move(f));
  }
  return seq;
}

int expected_plane(double z, double z_min, double z_max, int num_planes) {
  if (!(z >= z_min && z <= z_max)) throw std::out_of_range("expected_plane: depth outside range");
  const auto depths = plane_depths(z_min, z_max, num_planes);
  const double w = 1.0 / z;
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < num_planes; ++i) {
    const double d = std::abs(1.0 / depths[i] - w);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

SceneSpec random_desk_scene(std::uint64_t seed, double stereo_baseline, const NoiseSpec& noise) {
  Rng rng(seed);
  SceneSpec s;
  s.stereo_baseline = stereo_baseline;
  s.noise = noise;
  s.start = Pose::identity();
  const double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double travel = rng.uniform(0.4, 0.6);
  const Eigen::Vector3d axis = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized();
  const double angle = rng.uniform(0.0, 4.0) * std::numbers::pi / 180.0;
  s.end = Pose(Eigen::Vector3d(travel * std::cos(heading), travel * std::sin(heading),
                               rng.uniform(-0.1, 0.1)),
               Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis)));
  const Eigen::Vector3d mid = 0.5 * s.end.translation;

  // Depth uniform in inverse depth between 1.2 m and 6 m.
  auto random_point = [&]() {
    const double w = rng.uniform(1.0 / 6.0, 1.0 / 1.2);
    const double z = 1.0 / w;
    return Eigen::Vector3d(mid.x() + rng.uniform(-0.4, 0.4) * z, mid.y() + rng.uniform(-0.4, 0.4) * z, z);
  };
  for (int i = 0; i < 15; ++i) s.edge_points.push_back(random_point());
  for (int i = 0; i < 20; ++i) {
    const Eigen::Vector3d c = random_point();
    Eigen::Vector3d dir(rng.normal(), rng.normal(), 0.3 * rng.normal());
    dir.normalize();
    const double half = rng.uniform(0.05, 0.2) * c.z();
    s.segments.push_back({c - half * dir, c + half * dir});
  }
  return s;
}

namespace {

nlohmann::json vec_json(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }
Eigen::Vector3d json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw DataError("scene JSON: expected a 3-vector");
  return {v[0], v[1], v[2]};
}
nlohmann::json pose_json(const Pose& p) {
  const auto& q = p.rotation;
  return {{"t", vec_json(p.translation)}, {"q", {q.x(), q.y(), q.z(), q.w()}}};
}
Pose json_pose(const nlohmann::json& j) {
  const auto q = j.at("q").get<std::vector<double>>();
  if (q.size() != 4) throw DataError("scene JSON: expected a quaternion");
  return Pose(json_vec(j.at("t")), Eigen::Quaterniond(q[3], q[0], q[1], q[2]));
}

}  // namespace

void write_scene_json(const std::filesystem::path& path, const SceneSpec& s) {
  nlohmann::json j;
  j["camera"] = {{"fx", s.camera.fx}, {"fy", s.camera.fy}, {"cx", s.camera.cx},
                 {"cy", s.camera.cy}, {"width", s.camera.width}, {"height", s.camera.height}};
  j["edge_points"] = nlohmann::json::array();
  for (const auto& p : s.edge_points) j["edge_points"].push_back(vec_json(p));
  j["segments"] = nlohmann::json::array();
  for (const auto& seg : s.segments) j["segments"].push_back({vec_json(seg.a), vec_json(seg.b)});
  j["segment_step_px"] = s.segment_step_px;
  j["start"] = pose_json(s.start);
  j["end"] = pose_json(s.end);
  j["duration"] = s.duration;
  j["stereo_baseline"] = s.stereo_baseline;
  j["micro_dt"] = s.micro_dt;
  j["pose_rate"] = s.pose_rate;
  j["gt_rate"] = s.gt_rate;
  j["noise"] = {{"pixel_jitter_std", s.noise.pixel_jitter_std},
                {"spurious_rate", s.noise.spurious_rate}};
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << std::setprecision(17) << j.dump(2) << '\n';
}

SceneSpec read_scene_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scene file " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    SceneSpec s;
    const auto& c = j.at("camera");
    s.camera = {c.at("fx").get<double>(), c.at("fy").get<double>(), c.at("cx").get<double>(),
                c.at("cy").get<double>(), c.at("width").get<int>(), c.at("height").get<int>()};
    for (const auto& p : j.value("edge_points", nlohmann::json::array())) s.edge_points.push_back(json_vec(p));
    for (const auto& seg : j.value("segments", nlohmann::json::array()))
      s.segments.push_back({json_vec(seg.at(0)), json_vec(seg.at(1))});
    s.segment_step_px = j.value("segment_step_px", s.segment_step_px);
    s.start = json_pose(j.at("start"));
    s.end = json_pose(j.at("end"));
    s.duration = j.at("duration").get<double>();
    s.stereo_baseline = j.value("stereo_baseline", 0.0);
    s.micro_dt = j.value("micro_dt", s.micro_dt);
    s.pose_rate = j.value("pose_rate", s.pose_rate);
    s.gt_rate = j.value("gt_rate", s.gt_rate);
    if (j.contains("noise")) {
      s.noise.pixel_jitter_std = j["noise"].value("pixel_jitter_std", 0.0);
      s.noise.spurious_rate = j["noise"].value("spurious_rate", 0.0);
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace derd
