// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "derd/dsi.hpp"
#include "derd/geometry.hpp"
#include "derd/pixel_select.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace derd {

struct EdgeSegment {
  Eigen::Vector3d a = Eigen::Vector3d::Zero();
  Eigen::Vector3d b = Eigen::Vector3d::Zero();
};

struct NoiseSpec {
  /// Std-dev of Gaussian jitter added to each emitted event pixel.
  double pixel_jitter_std = 0.0;
  /// Uniformly distributed spurious events per second and camera.
  double spurious_rate = 0.0;
};

/// Point/segment edge scene observed by a (stereo) camera moving on a
/// straight, constant-speed path.
struct SceneSpec {
  CameraIntrinsics camera{60.0, 60.0, 31.5, 31.5, 64, 64};
  std::vector<Eigen::Vector3d> edge_points;
  std::vector<EdgeSegment> segments;
  /// Segment sampling step, in pixels at the segment's depth.
  double segment_step_px = 0.8;
  Pose start;
  Pose end;
  double duration = 1.0;
  /// Right camera offset along the left camera's x axis; 0 = monocular.
  double stereo_baseline = 0.0;
  double micro_dt = 1e-3;
  /// Rate of the emitted pose samples and of the ground-truth frames.
  double pose_rate = 200.0;
  double gt_rate = 10.0;
  NoiseSpec noise;

  /// Throws ConfigError when a field is out of range or fewer than 90% of
  /// the points stay in front of the camera over the trajectory.
  void validate() const;
  /// Edge points plus sampled segments, in world coordinates.
  std::vector<Eigen::Vector3d> scene_points() const;
  Pose left_pose_at(double t) const;
  Pose left_to_right() const;
};

struct GtFrame {
  double t = 0.0;
  DepthMap left;
  DepthMap right;
};

struct SyntheticSequence {
  StereoCalibration calib;
  Trajectory traj_left;
  Trajectory traj_right;
  std::vector<Event> events_left;
  std::vector<Event> events_right;
  std::vector<GtFrame> gt;
};

SyntheticSequence generate(std::uint64_t seed, const SceneSpec& spec);

/// Index of the plane whose inverse depth is nearest to 1/z.
int expected_plane(double z, double z_min, double z_max, int num_planes);

/// Z-buffered 1-pixel splat of world points into a camera.
DepthMap render_depth(const std::vector<Eigen::Vector3d>& points, const Pose& T_wc,
                      const CameraIntrinsics& K);

/// Random desk-scale scene: 64x64 px cameras, segments and points at
/// 1.2-6 m, 1 s lateral motion.
SceneSpec random_desk_scene(std::uint64_t seed, double stereo_baseline = 0.2,
                            const NoiseSpec& noise = {0.3, 200.0});

void write_scene_json(const std::filesystem::path& path, const SceneSpec& spec);
SceneSpec read_scene_json(const std::filesystem::path& path);

}  // namespace derd
