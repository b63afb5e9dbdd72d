// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "derd/geometry.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace derd {

struct Event {
  double t = 0.0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t polarity = 1;

  bool operator==(const Event&) const = default;
};

enum class VoteMode { nearest, bilinear };
enum class FusionMethod { harmonic, arithmetic, geometric, min };

std::string to_string(VoteMode m);
std::string to_string(FusionMethod m);
VoteMode parse_vote_mode(const std::string& s);
FusionMethod parse_fusion_method(const std::string& s);

struct VotingConfig {
  std::size_t packet_size = 1024;
  VoteMode vote_mode = VoteMode::nearest;
  /// 0 selects default_workers().
  std::size_t workers = 1;
};

/// Depth range and plane count of a DSI.
struct DsiShape {
  int num_planes = 100;
  double z_min = 1.0;
  double z_max = 6.5;

  void validate() const;
};

/// Planes equidistant in inverse depth, from z_min to z_max inclusive.
std::vector<double> plane_depths(double z_min, double z_max, int num_planes);

/// Ray-count volume anchored at a reference viewpoint. Storage is
/// plane-major, then row (y), then column (x).
class DsiGrid {
 public:
  DsiGrid() = default;
  DsiGrid(const DsiShape& shape, const CameraIntrinsics& K, const Pose& ref_pose);

  int num_planes() const { return shape_.num_planes; }
  int width() const { return K_.width; }
  int height() const { return K_.height; }
  double z_min() const { return shape_.z_min; }
  double z_max() const { return shape_.z_max; }
  const DsiShape& shape() const { return shape_; }
  const CameraIntrinsics& intrinsics() const { return K_; }
  const Pose& ref_pose() const { return ref_pose_; }
  const std::vector<double>& depths() const { return depths_; }

  std::size_t index(int plane, int x, int y) const {
    return (static_cast<std::size_t>(plane) * K_.height + y) * K_.width + x;
  }
  float at(int plane, int x, int y) const { return counts_[index(plane, x, y)]; }
  float& at(int plane, int x, int y) { return counts_[index(plane, x, y)]; }

  std::span<const float> counts() const { return counts_; }
  std::span<float> counts() { return counts_; }

  double total() const;
  /// Same anchor, plane lattice and size.
  bool same_layout(const DsiGrid& other) const;

  DsiGrid& operator+=(const DsiGrid& other);

 private:
  DsiShape shape_;
  CameraIntrinsics K_;
  Pose ref_pose_;
  std::vector<double> depths_;
  std::vector<float> counts_;
};

/// Back-projects events through the DSI planes. Events are grouped in packets
/// sharing the pose interpolated at the packet's median timestamp. event_K
/// is the camera that produced the events; the grid uses ref_K.
DsiGrid build_dsi(std::span<const Event> events, const Trajectory& traj,
                  const CameraIntrinsics& event_K, const Pose& ref_pose,
                  const CameraIntrinsics& ref_K, const DsiShape& shape,
                  const VotingConfig& cfg = {});

/// Monocular form: the reference view uses the event camera's intrinsics.
DsiGrid build_dsi(std::span<const Event> events, const Trajectory& traj, const Pose& ref_pose,
                  const CameraIntrinsics& K, const DsiShape& shape, const VotingConfig& cfg = {});

/// Median timestamp of a non-empty, time-sorted packet.
double packet_median_time(std::span<const Event> packet);

/// Events with t in [t_begin, t_end], assuming a time-sorted stream.
std::span<const Event> events_in_window(std::span<const Event> events, double t_begin,
                                        double t_end);

float fuse_voxel(float a, float b, FusionMethod method);
DsiGrid fuse(const DsiGrid& a, const DsiGrid& b, FusionMethod method = FusionMethod::harmonic);

// Event files: CSV `t,x,y,p` or little-endian binary records (f64 t, u16 x,
// u16 y, i8 p). The format is picked from the extension (.csv vs anything else).
std::vector<Event> read_events(const std::filesystem::path& path);
void write_events(const std::filesystem::path& path, std::span<const Event> events);

// DSI file: "DSI1", u32 D, u32 W, u32 H, f64 z_min, f64 z_max,
// 7 x f64 pose (tx ty tz qx qy qz qw), 4 x f64 (fx fy cx cy), D*W*H f32.
void write_dsi(const std::filesystem::path& path, const DsiGrid& dsi);
DsiGrid read_dsi(const std::filesystem::path& path);

}  // namespace derd
