// SPDX-License-Identifier: Apache-2.0
#include "derd/geometry.hpp"

#include "derd/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace derd {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("focal lengths must be positive");
  if (width < 1 || height < 1) throw std::invalid_argument("image size must be positive");
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height))
    throw std::invalid_argument("principal point outside the image");
}

Pose::Pose(const Eigen::Vector3d& t, const Eigen::Quaterniond& q)
    : translation(t), rotation(q.normalized()) {}

Pose Pose::inverse() const {
  const Eigen::Quaterniond q_inv = rotation.conjugate();
  return Pose(-(q_inv * translation), q_inv);
}

Pose Pose::operator*(const Pose& other) const {
  return Pose(rotation * other.translation + translation, rotation * other.rotation);
}

Eigen::Vector3d Pose::operator*(const Eigen::Vector3d& p) const {
  return rotation * p + translation;
}

bool Pose::operator==(const Pose& other) const {
  return translation == other.translation && rotation.coeffs() == other.rotation.coeffs();
}

Trajectory::Trajectory(std::vector<TimedPose> samples) : samples_(std::move(samples)) {
  for (std::size_t i = 1; i < samples_.size(); ++i)
    if (!(samples_[i].t > samples_[i - 1].t))
      throw std::invalid_argument("trajectory timestamps must be strictly increasing");
}

Trajectory Trajectory::right_multiplied(const Pose& offset) const {
  std::vector<TimedPose> out;
  out.reserve(samples_.size());
  for (const auto& s : samples_) out.push_back({s.t, s.pose * offset});
  return Trajectory(std::move(out));
}

Eigen::Vector2d project(const CameraIntrinsics& K, const Eigen::Vector3d& p) {
  if (!(p.z() > 0.0)) throw std::domain_error("behind camera");
  return {K.fx * p.x() / p.z() + K.cx, K.fy * p.y() / p.z() + K.cy};
}

Eigen::Vector3d back_project(const CameraIntrinsics& K, const Eigen::Vector2d& pixel,
                             double depth) {
  if (!(depth > 0.0)) throw std::domain_error("back_project: depth must be positive");
  return depth * Eigen::Vector3d((pixel.x() - K.cx) / K.fx, (pixel.y() - K.cy) / K.fy, 1.0);
}

Pose interpolate_pose(const Trajectory& traj, double t) {
  const auto& s = traj.samples();
  if (s.empty()) throw std::out_of_range("interpolate_pose: empty trajectory");
  if (!(t >= s.front().t && t <= s.back().t))
    throw std::out_of_range("interpolate_pose: time out of range");
  // First sample with timestamp >= t.
  const auto it = std::lower_bound(s.begin(), s.end(), t,
                                   [](const TimedPose& a, double v) { return a.t < v; });
  if (it->t == t) return it->pose;
  const TimedPose& b = *it;
  const TimedPose& a = *(it - 1);
  const double f = (t - a.t) / (b.t - a.t);
  const Eigen::Vector3d trans = a.pose.translation + f * (b.pose.translation - a.pose.translation);
  // Eigen's slerp flips the sign of the far endpoint when the dot product is
  // negative, which selects the shortest arc.
  return Pose(trans, a.pose.rotation.slerp(f, b.pose.rotation));
}

Pose relative_pose(const Pose& T_wr, const Pose& T_we) { return T_wr.inverse() * T_we; }

double pose_distance(const Pose& a, const Pose& b) {
  return (a.translation - b.translation).norm() + a.rotation.angularDistance(b.rotation);
}

namespace {

std::vector<double> split_numbers(const std::string& line, const std::filesystem::path& path,
                                  std::size_t line_no) {
  std::vector<double> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cell, &used));
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
    }
  }
  return out;
}

nlohmann::json intrinsics_to_json(const CameraIntrinsics& K) {
  return {{"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx}, {"cy", K.cy},
          {"width", K.width}, {"height", K.height}};
}

CameraIntrinsics intrinsics_from_json(const nlohmann::json& j) {
  CameraIntrinsics K;
  K.fx = j.at("fx").get<double>();
  K.fy = j.at("fy").get<double>();
  K.cx = j.at("cx").get<double>();
  K.cy = j.at("cy").get<double>();
  K.width = j.at("width").get<int>();
  K.height = j.at("height").get<int>();
  K.validate();
  return K;
}

}  // namespace

Trajectory read_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open pose file " + path.string());
  std::vector<TimedPose> samples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#' || std::isalpha(static_cast<unsigned char>(line[0])))
      continue;
    const auto v = split_numbers(line, path, line_no);
    if (v.size() != 8)
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 8 columns");
    const Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    if (std::abs(q.norm() - 1.0) > 1e-3)
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": quaternion not unit");
    samples.push_back({v[0], Pose({v[1], v[2], v[3]}, q)});
  }
  try {
    return Trajectory(std::move(samples));
  } catch (const std::invalid_argument& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "t,tx,ty,tz,qx,qy,qz,qw\n" << std::setprecision(17);
  for (const auto& s : traj.samples()) {
    const auto& t = s.pose.translation;
    const auto& q = s.pose.rotation;
    out << s.t << ',' << t.x() << ',' << t.y() << ',' << t.z() << ',' << q.x() << ',' << q.y()
        << ',' << q.z() << ',' << q.w() << '\n';
  }
}

StereoCalibration read_calibration(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open calibration file " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    StereoCalibration c;
    c.left = intrinsics_from_json(j.at("left"));
    c.stereo = j.contains("right");
    if (c.stereo) {
      c.right = intrinsics_from_json(j.at("right"));
      const auto& e = j.at("left_to_right");
      const auto t = e.at("t").get<std::vector<double>>();
      const auto q = e.at("q").get<std::vector<double>>();  // qx qy qz qw
      if (t.size() != 3 || q.size() != 4) throw DataError("left_to_right: bad sizes");
      c.left_to_right = Pose({t[0], t[1], t[2]}, Eigen::Quaterniond(q[3], q[0], q[1], q[2]));
    } else {
      c.right = c.left;
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_calibration(const std::filesystem::path& path, const StereoCalibration& calib) {
  nlohmann::json j;
  j["left"] = intrinsics_to_json(calib.left);
  if (calib.stereo) {
    j["right"] = intrinsics_to_json(calib.right);
    const auto& t = calib.left_to_right.translation;
    const auto& q = calib.left_to_right.rotation;
    j["left_to_right"] = {{"t", {t.x(), t.y(), t.z()}}, {"q", {q.x(), q.y(), q.z(), q.w()}}};
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace derd
