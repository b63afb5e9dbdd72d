// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "derd/dsi.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace derd {

/// Per-pixel maximum ray count over the depth axis, row-major.
struct ConfidenceMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
};

struct PixelCoord {
  int x = 0;
  int y = 0;

  auto operator<=>(const PixelCoord& o) const {
    if (auto c = y <=> o.y; c != 0) return c;
    return x <=> o.x;
  }
  bool operator==(const PixelCoord&) const = default;
};

/// Half-widths of the Sub-DSI frame.
struct SubDsiRadii {
  int r_w = 3;
  int r_h = 3;

  int frame_w() const { return 2 * r_w + 1; }
  int frame_h() const { return 2 * r_h + 1; }
  bool operator==(const SubDsiRadii&) const = default;
};

/// Adaptive Gaussian threshold: select p iff conf(p) > gwm(p) - c.
struct AgtConfig {
  int window = 9;
  double c = -10.0;
  /// Pixels closer than these radii to the border are never selected.
  SubDsiRadii border{3, 3};

  /// 0.3 * ((window - 1) / 2 - 1) + 0.8
  double sigma() const;
  void validate() const;
};

/// Normalized local DSI slab, stored plane-major, then row, then column.
struct SubDsi {
  int num_planes = 0;
  SubDsiRadii radii;
  PixelCoord center;
  std::vector<float> values;

  std::size_t index(int plane, int col, int row) const {
    return (static_cast<std::size_t>(plane) * radii.frame_h() + row) * radii.frame_w() + col;
  }
  float at(int plane, int col, int row) const { return values[index(plane, col, row)]; }
};

/// Semi-dense depth in meters with a validity mask.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<double> depth;
  std::vector<std::uint8_t> valid;

  DepthMap() = default;
  DepthMap(int w, int h)
      : width(w), height(h), depth(static_cast<std::size_t>(w) * h, 0.0),
        valid(static_cast<std::size_t>(w) * h, 0) {}

  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
  bool is_valid(int x, int y) const { return valid[index(x, y)] != 0; }
  double at(int x, int y) const { return depth[index(x, y)]; }
  void set(int x, int y, double z) {
    depth[index(x, y)] = z;
    valid[index(x, y)] = 1;
  }
  std::size_t valid_count() const;
};

ConfidenceMap confidence_map(const DsiGrid& dsi);

/// Gaussian-weighted local mean with replicate padding and a separable kernel.
std::vector<double> gaussian_weighted_mean(const ConfidenceMap& conf, int window, double sigma);

/// Selected pixels, sorted row-major.
std::vector<PixelCoord> agt_select(const ConfidenceMap& conf, const AgtConfig& cfg);

/// agt_select restricted to pixels with a positive ray count, i.e. pixels
/// whose Sub-DSI can be normalized.
std::vector<PixelCoord> select_pixels(const DsiGrid& dsi, const AgtConfig& cfg);

SubDsi extract_subdsi(const DsiGrid& dsi, PixelCoord p, SubDsiRadii radii);

/// Depth of the highest-count plane, ties toward the nearest plane.
DepthMap argmax_depth(const DsiGrid& dsi, std::span<const PixelCoord> pixels);

/// One pass of 4-neighbour dilation; new pixels take the mean of their valid
/// neighbours.
DepthMap morph_dilate(const DepthMap& dm);

// Pixel list CSV `x,y`.
void write_pixels_csv(const std::filesystem::path& path, std::span<const PixelCoord> pixels);
std::vector<PixelCoord> read_pixels_csv(const std::filesystem::path& path);

// PFM (grayscale, little-endian, bottom row first); invalid pixels are NaN.
void write_pfm(const std::filesystem::path& path, const DepthMap& dm);
DepthMap read_pfm(const std::filesystem::path& path);

/// Binary PPM, blue (near) to red (far) over [z_min, z_max]; invalid pixels black.
void write_depth_ppm(const std::filesystem::path& path, const DepthMap& dm, double z_min,
                     double z_max);

}  // namespace derd
