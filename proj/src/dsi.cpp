// SPDX-License-Identifier: Apache-2.0
#include "derd/dsi.hpp"

#include "binary_io.hpp"
#include "derd/error.hpp"
#include "derd/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace derd {

std::string to_string(VoteMode m) { return m == VoteMode::nearest ? "nearest" : "bilinear"; }

std::string to_string(FusionMethod m) {
  switch (m) {
    case FusionMethod::harmonic: return "harmonic";
    case FusionMethod::arithmetic: return "arithmetic";
    case FusionMethod::geometric: return "geometric";
    case FusionMethod::min: return "min";
  }
  return "?";
}

VoteMode parse_vote_mode(const std::string& s) {
  if (s == "nearest") return VoteMode::nearest;
  if (s == "bilinear") return VoteMode::bilinear;
  throw ConfigError("unknown vote mode '" + s + "'");
}

FusionMethod parse_fusion_method(const std::string& s) {
  if (s == "harmonic") return FusionMethod::harmonic;
  if (s == "arithmetic") return FusionMethod::arithmetic;
  if (s == "geometric") return FusionMethod::geometric;
  if (s == "min") return FusionMethod::min;
  throw ConfigError("unknown fusion method '" + s + "'");
}

void DsiShape::validate() const {
  if (!(z_min > 0.0) || !(z_max > z_min))
    throw std::invalid_argument("depth range requires 0 < z_min < z_max");
  if (num_planes < 2) throw std::invalid_argument("at least two depth planes required");
}

std::vector<double> plane_depths(double z_min, double z_max, int num_planes) {
  DsiShape{num_planes, z_min, z_max}.validate();
  std::vector<double> z(num_planes);
  const double inv_min = 1.0 / z_min;
  const double inv_max = 1.0 / z_max;
  z.front() = z_min;
  z.back() = z_max;
  for (int i = 1; i + 1 < num_planes; ++i) {
    const double f = static_cast<double>(i) / (num_planes - 1);
    z[i] = 1.0 / (inv_min + f * (inv_max - inv_min));
  }
  return z;
}

DsiGrid::DsiGrid(const DsiShape& shape, const CameraIntrinsics& K, const Pose& ref_pose)
    : shape_(shape), K_(K), ref_pose_(ref_pose) {
  shape_.validate();
  K_.validate();
  depths_ = plane_depths(shape.z_min, shape.z_max, shape.num_planes);
  counts_.assign(static_cast<std::size_t>(shape.num_planes) * K.width * K.height, 0.0f);
}

double DsiGrid::total() const {
  double s = 0.0;
  for (float c : counts_) s += c;
  return s;
}

bool DsiGrid::same_layout(const DsiGrid& o) const {
  return shape_.num_planes == o.shape_.num_planes && shape_.z_min == o.shape_.z_min &&
         shape_.z_max == o.shape_.z_max && K_.width == o.K_.width && K_.height == o.K_.height &&
         ref_pose_ == o.ref_pose_;
}

DsiGrid& DsiGrid::operator+=(const DsiGrid& other) {
  if (!same_layout(other)) throw std::invalid_argument("DSI layout mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

double packet_median_time(std::span<const Event> packet) {
  if (packet.empty()) throw std::invalid_argument("empty packet");
  const std::size_t n = packet.size();
  return 0.5 * (packet[(n - 1) / 2].t + packet[n / 2].t);
}

std::span<const Event> events_in_window(std::span<const Event> events, double t_begin,
                                        double t_end) {
  const auto lo = std::lower_bound(events.begin(), events.end(), t_begin,
                                   [](const Event& e, double t) { return e.t < t; });
  const auto hi = std::upper_bound(lo, events.end(), t_end,
                                   [](double t, const Event& e) { return t < e.t; });
  return {lo, hi};
}

namespace {

void vote_packet(std::span<const Event> packet, const Pose& T_ref_event,
                 const CameraIntrinsics& event_K, const CameraIntrinsics& ref_K,
                 VoteMode mode, DsiGrid& grid) {
  const Eigen::Matrix3d R = T_ref_event.rotation.toRotationMatrix();
  const Eigen::Vector3d& t = T_ref_event.translation;
  const auto& depths = grid.depths();
  const int W = ref_K.width;
  const int H = ref_K.height;
  for (const Event& e : packet) {
    const Eigen::Vector3d ray((e.x - event_K.cx) / event_K.fx, (e.y - event_K.cy) / event_K.fy,
                              1.0);
    const Eigen::Vector3d dir = R * ray;
    if (std::abs(dir.z()) < 1e-12) continue;
    for (int i = 0; i < grid.num_planes(); ++i) {
      const double z = depths[i];
      const double s = (z - t.z()) / dir.z();
      if (!(s > 0.0)) continue;
      const Eigen::Vector3d P = s * dir + t;
      const double u = ref_K.fx * P.x() / z + ref_K.cx;
      const double v = ref_K.fy * P.y() / z + ref_K.cy;
      if (mode == VoteMode::nearest) {
        const double xr = std::floor(u + 0.5);
        const double yr = std::floor(v + 0.5);
        if (xr < 0.0 || yr < 0.0 || xr >= W || yr >= H) continue;
        grid.at(i, static_cast<int>(xr), static_cast<int>(yr)) += 1.0f;
      } else {
        if (!(u >= 0.0 && v >= 0.0 && u <= W - 1 && v <= H - 1)) continue;
        const int x0 = static_cast<int>(std::floor(u));
        const int y0 = static_cast<int>(std::floor(v));
        const double ax = u - x0;
        const double ay = v - y0;
        const double w[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
        const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
        const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
        for (int k = 0; k < 4; ++k) {
          if (w[k] == 0.0) continue;
          grid.at(i, xs[k], ys[k]) += static_cast<float>(w[k]);
        }
      }
    }
  }
}

}  // namespace

DsiGrid build_dsi(std::span<const Event> events, const Trajectory& traj,
                  const CameraIntrinsics& event_K, const Pose& ref_pose,
                  const CameraIntrinsics& ref_K, const DsiShape& shape,
                  const VotingConfig& cfg) {
  if (cfg.packet_size < 1) throw std::invalid_argument("packet_size must be >= 1");
  event_K.validate();
  DsiGrid grid(shape, ref_K, ref_pose);
  if (events.empty()) return grid;
  if (traj.samples().size() < 2) throw std::invalid_argument("trajectory needs >= 2 samples");
  for (const Event& e : events) {
    if (!(e.t >= traj.t_begin() && e.t <= traj.t_end()))
      throw std::out_of_range("event at t=" + std::to_string(e.t) + " outside trajectory span");
    if (e.x >= event_K.width || e.y >= event_K.height)
      throw std::out_of_range("event pixel outside the sensor");
  }

  const std::size_t n_packets = (events.size() + cfg.packet_size - 1) / cfg.packet_size;
  const std::size_t workers =
      std::min(n_packets, cfg.workers == 0 ? default_workers() : cfg.workers);
  auto packet = [&](std::size_t p) {
    const std::size_t begin = p * cfg.packet_size;
    return events.subspan(begin, std::min(cfg.packet_size, events.size() - begin));
  };
  auto vote_range = [&](std::size_t begin, std::size_t end, DsiGrid& target) {
    for (std::size_t p = begin; p < end; ++p) {
      const auto pk = packet(p);
      const Pose T_we = interpolate_pose(traj, packet_median_time(pk));
      vote_packet(pk, relative_pose(ref_pose, T_we), event_K, ref_K, cfg.vote_mode, target);
    }
  };

  if (workers <= 1) {
    vote_range(0, n_packets, grid);
    return grid;
  }
  std::vector<DsiGrid> partial(workers, grid);
  parallel_for(n_packets, workers, [&](std::size_t b, std::size_t e, std::size_t w) {
    vote_range(b, e, partial[w]);
  });
  for (const auto& g : partial) grid += g;
  return grid;
}

DsiGrid build_dsi(std::span<const Event> events, const Trajectory& traj, const Pose& ref_pose,
                  const CameraIntrinsics& K, const DsiShape& shape, const VotingConfig& cfg) {
  return build_dsi(events, traj, K, ref_pose, K, shape, cfg);
}

float fuse_voxel(float a, float b, FusionMethod method) {
  const double x = a;
  const double y = b;
  switch (method) {
    case FusionMethod::harmonic:
      return x + y == 0.0 ? 0.0f : static_cast<float>(2.0 * x * y / (x + y));
    case FusionMethod::arithmetic: return static_cast<float>(0.5 * (x + y));
    case FusionMethod::geometric: return static_cast<float>(std::sqrt(x * y));
    case FusionMethod::min: return std::min(a, b);
  }
  return 0.0f;
}

DsiGrid fuse(const DsiGrid& a, const DsiGrid& b, FusionMethod method) {
  if (!a.same_layout(b)) throw std::invalid_argument("fuse: DSI shape or anchor mismatch");
  DsiGrid out = a;
  auto ca = a.counts();
  auto cb = b.counts();
  auto co = out.counts();
  for (std::size_t i = 0; i < co.size(); ++i) co[i] = fuse_voxel(ca[i], cb[i], method);
  return out;
}

// ---------------------------------------------------------------------------
// Files

namespace {

bool is_csv(const std::filesystem::path& p) { return p.extension() == ".csv"; }

}  // namespace

std::vector<Event> read_events(const std::filesystem::path& path) {
  std::vector<Event> events;
  if (is_csv(path)) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open event file " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line[0] == '#' || line[0] == 't') continue;
      std::replace(line.begin(), line.end(), ',', ' ');
      std::istringstream ss(line);
      double t;
      long x, y, p;
      if (!(ss >> t >> x >> y >> p) || x < 0 || y < 0 || x > 65535 || y > 65535 ||
          (p != 1 && p != -1 && p != 0))
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed event");
      events.push_back({t, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                        static_cast<std::int8_t>(p == 0 ? -1 : p)});
    }
  } else {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open event file " + path.string());
    while (in.peek() != std::char_traits<char>::eof()) {
      Event e;
      e.t = detail::read_le<double>(in, "event record");
      e.x = detail::read_le<std::uint16_t>(in, "event record");
      e.y = detail::read_le<std::uint16_t>(in, "event record");
      e.polarity = detail::read_le<std::int8_t>(in, "event record");
      events.push_back(e);
    }
  }
  for (std::size_t i = 1; i < events.size(); ++i)
    if (events[i].t < events[i - 1].t) throw DataError(path.string() + ": events not time-sorted");
  return events;
}

void write_events(const std::filesystem::path& path, std::span<const Event> events) {
  if (is_csv(path)) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "t,x,y,p\n" << std::setprecision(17);
    for (const auto& e : events)
      out << e.t << ',' << e.x << ',' << e.y << ',' << int(e.polarity) << '\n';
  } else {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& e : events) {
      detail::write_le(out, e.t);
      detail::write_le(out, e.x);
      detail::write_le(out, e.y);
      detail::write_le(out, e.polarity);
    }
  }
}

void write_dsi(const std::filesystem::path& path, const DsiGrid& dsi) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write("DSI1", 4);
  detail::write_le<std::uint32_t>(out, dsi.num_planes());
  detail::write_le<std::uint32_t>(out, dsi.width());
  detail::write_le<std::uint32_t>(out, dsi.height());
  detail::write_le(out, dsi.z_min());
  detail::write_le(out, dsi.z_max());
  const auto& p = dsi.ref_pose();
  for (double v : {p.translation.x(), p.translation.y(), p.translation.z(), p.rotation.x(),
                   p.rotation.y(), p.rotation.z(), p.rotation.w()})
    detail::write_le(out, v);
  const auto& K = dsi.intrinsics();
  for (double v : {K.fx, K.fy, K.cx, K.cy}) detail::write_le(out, v);
  for (float c : dsi.counts()) detail::write_le(out, c);
}

DsiGrid read_dsi(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open DSI file " + path.string());
  const std::string what = "DSI file " + path.string();
  detail::expect_magic(in, "DSI1", what);
  DsiShape shape;
  CameraIntrinsics K;
  shape.num_planes = static_cast<int>(detail::read_le<std::uint32_t>(in, what));
  K.width = static_cast<int>(detail::read_le<std::uint32_t>(in, what));
  K.height = static_cast<int>(detail::read_le<std::uint32_t>(in, what));
  shape.z_min = detail::read_le<double>(in, what);
  shape.z_max = detail::read_le<double>(in, what);
  double pose[7];
  for (double& v : pose) v = detail::read_le<double>(in, what);
  K.fx = detail::read_le<double>(in, what);
  K.fy = detail::read_le<double>(in, what);
  K.cx = detail::read_le<double>(in, what);
  K.cy = detail::read_le<double>(in, what);
  Pose ref;
  ref.translation = {pose[0], pose[1], pose[2]};
  // Stored quaternions are already unit; keep them bit-exact.
  ref.rotation = Eigen::Quaterniond(pose[6], pose[3], pose[4], pose[5]);
  DsiGrid grid;
  try {
    grid = DsiGrid(shape, K, ref);
  } catch (const std::invalid_argument& e) {
    throw DataError(what + ": " + e.what());
  }
  for (float& c : grid.counts()) c = detail::read_le<float>(in, what);
  return grid;
}

}  // namespace derd
