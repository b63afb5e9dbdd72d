// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace derd {

/// Rectified pinhole camera.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  /// Throws std::invalid_argument when any invariant is violated.
  void validate() const;

  bool operator==(const CameraIntrinsics&) const = default;
};

/// Rigid transform, camera-to-world: p_world = rotation * p_cam + translation.
struct Pose {
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();

  Pose() = default;
  Pose(const Eigen::Vector3d& t, const Eigen::Quaterniond& q);

  static Pose identity() { return {}; }

  Pose inverse() const;
  Pose operator*(const Pose& other) const;
  Eigen::Vector3d operator*(const Eigen::Vector3d& p) const;

  bool operator==(const Pose& other) const;
};

struct TimedPose {
  double t = 0.0;
  Pose pose;
};

/// Strictly time-ordered pose samples.
class Trajectory {
 public:
  Trajectory() = default;
  /// Throws std::invalid_argument unless timestamps strictly increase.
  explicit Trajectory(std::vector<TimedPose> samples);

  const std::vector<TimedPose>& samples() const { return samples_; }
  bool empty() const { return samples_.empty(); }
  double t_begin() const { return samples_.front().t; }
  double t_end() const { return samples_.back().t; }

  /// Applies a fixed body-frame offset to every sample (T_w_b * offset).
  Trajectory right_multiplied(const Pose& offset) const;

 private:
  std::vector<TimedPose> samples_;
};

Eigen::Vector2d project(const CameraIntrinsics& K, const Eigen::Vector3d& p);
Eigen::Vector3d back_project(const CameraIntrinsics& K, const Eigen::Vector2d& pixel,
                             double depth);

/// Linear translation, shortest-arc slerp rotation. Sample timestamps
/// return the stored pose unchanged; no extrapolation.
Pose interpolate_pose(const Trajectory& traj, double t);

/// T_wr^-1 * T_we: maps event-camera coordinates into the reference camera.
Pose relative_pose(const Pose& T_wr, const Pose& T_we);

/// Translation distance plus rotation angle (radians).
double pose_distance(const Pose& a, const Pose& b);

// Pose CSV: `t,tx,ty,tz,qx,qy,qz,qw`, optional header line.
Trajectory read_trajectory_csv(const std::filesystem::path& path);
void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj);

struct StereoCalibration {
  CameraIntrinsics left;
  CameraIntrinsics right;
  /// Pose of the right camera expressed in the left camera frame.
  Pose left_to_right;
  bool stereo = true;
};

StereoCalibration read_calibration(const std::filesystem::path& path);
void write_calibration(const std::filesystem::path& path, const StereoCalibration& calib);

}  // namespace derd
