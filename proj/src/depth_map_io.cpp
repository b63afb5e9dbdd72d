// SPDX-License-Identifier: Apache-2.0
#include "derd/pixel_select.hpp"

#include "binary_io.hpp"
#include "derd/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace derd {

void write_pixels_csv(const std::filesystem::path& path, std::span<const PixelCoord> pixels) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "x,y\n";
  for (const auto& p : pixels) out << p.x << ',' << p.y << '\n';
}

std::vector<PixelCoord> read_pixels_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open pixel list " + path.string());
  std::vector<PixelCoord> pixels;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == 'x' || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    PixelCoord p;
    if (!(ss >> p.x >> p.y)) throw DataError(path.string() + ": malformed pixel row '" + line + "'");
    pixels.push_back(p);
  }
  return pixels;
}

void write_pfm(const std::filesystem::path& path, const DepthMap& dm) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "Pf\n" << dm.width << ' ' << dm.height << "\n-1.0\n";
  const float nan = std::numeric_limits<float>::quiet_NaN();
  for (int y = dm.height - 1; y >= 0; --y)
    for (int x = 0; x < dm.width; ++x)
      detail::write_le<float>(out, dm.is_valid(x, y) ? static_cast<float>(dm.at(x, y)) : nan);
}

DepthMap read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open depth map " + path.string());
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  in >> magic >> w >> h >> scale;
  if (magic != "Pf" || w <= 0 || h <= 0 || scale == 0.0)
    throw DataError(path.string() + ": not a grayscale PFM");
  in.get();  // single whitespace after the header
  if (scale > 0.0) throw DataError(path.string() + ": big-endian PFM not supported");
  DepthMap dm(w, h);
  for (int y = h - 1; y >= 0; --y)
    for (int x = 0; x < w; ++x) {
      const float v = detail::read_le<float>(in, "PFM " + path.string());
      if (std::isfinite(v)) dm.set(x, y, v);
    }
  return dm;
}

namespace {

// Piecewise-linear jet: blue -> cyan -> yellow -> red.
std::array<std::uint8_t, 3> jet(double f) {
  f = std::clamp(f, 0.0, 1.0);
  auto ch = [](double v) {
    return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
  };
  const double r = 1.5 - std::abs(4.0 * f - 3.0);
  const double g = 1.5 - std::abs(4.0 * f - 2.0);
  const double b = 1.5 - std::abs(4.0 * f - 1.0);
  return {ch(r), ch(g), ch(b)};
}

}  // namespace

void write_depth_ppm(const std::filesystem::path& path, const DepthMap& dm, double z_min,
                     double z_max) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P6\n" << dm.width << ' ' << dm.height << "\n255\n";
  for (int y = 0; y < dm.height; ++y)
    for (int x = 0; x < dm.width; ++x) {
      std::array<std::uint8_t, 3> rgb{0, 0, 0};
      if (dm.is_valid(x, y)) rgb = jet((dm.at(x, y) - z_min) / (z_max - z_min));
      out.write(reinterpret_cast<const char*>(rgb.data()), 3);
    }
}

}  // namespace derd
