// SPDX-License-Identifier: Apache-2.0
#include "derd/pixel_select.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace derd {

double AgtConfig::sigma() const { return 0.3 * ((window - 1) * 0.5 - 1.0) + 0.8; }

void AgtConfig::validate() const {
  if (window < 3 || window % 2 == 0) throw std::invalid_argument("AGT window must be odd and >= 3");
  if (border.r_w < 0 || border.r_h < 0) throw std::invalid_argument("negative border radii");
}

std::size_t DepthMap::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

ConfidenceMap confidence_map(const DsiGrid& dsi) {
  ConfidenceMap conf{dsi.width(), dsi.height(), {}};
  conf.values.assign(static_cast<std::size_t>(dsi.width()) * dsi.height(), 0.0);
  const std::size_t plane_size = conf.values.size();
  const auto counts = dsi.counts();
  for (int i = 0; i < dsi.num_planes(); ++i)
    for (std::size_t k = 0; k < plane_size; ++k)
      conf.values[k] = std::max(conf.values[k], static_cast<double>(counts[i * plane_size + k]));
  return conf;
}

std::vector<double> gaussian_weighted_mean(const ConfidenceMap& conf, int window, double sigma) {
  const int half = window / 2;
  std::vector<double> kernel(window);
  double sum = 0.0;
  for (int i = 0; i < window; ++i) {
    const double d = i - half;
    kernel[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += kernel[i];
  }
  for (double& k : kernel) k /= sum;

  const int W = conf.width;
  const int H = conf.height;
  std::vector<double> rows(conf.values.size());
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int k = 0; k < window; ++k) acc += kernel[k] * conf.at(std::clamp(x + k - half, 0, W - 1), y);
      rows[static_cast<std::size_t>(y) * W + x] = acc;
    }
  std::vector<double> out(conf.values.size());
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int k = 0; k < window; ++k)
        acc += kernel[k] * rows[static_cast<std::size_t>(std::clamp(y + k - half, 0, H - 1)) * W + x];
      out[static_cast<std::size_t>(y) * W + x] = acc;
    }
  return out;
}

std::vector<PixelCoord> agt_select(const ConfidenceMap& conf, const AgtConfig& cfg) {
  cfg.validate();
  if (cfg.window > std::min(conf.width, conf.height))
    throw std::invalid_argument("AGT window larger than the image");
  const auto gwm = gaussian_weighted_mean(conf, cfg.window, cfg.sigma());
  std::vector<PixelCoord> selected;
  for (int y = cfg.border.r_h; y < conf.height - cfg.border.r_h; ++y)
    for (int x = cfg.border.r_w; x < conf.width - cfg.border.r_w; ++x)
      if (conf.at(x, y) > gwm[static_cast<std::size_t>(y) * conf.width + x] - cfg.c)
        selected.push_back({x, y});
  return selected;
}

std::vector<PixelCoord> select_pixels(const DsiGrid& dsi, const AgtConfig& cfg) {
  const auto conf = confidence_map(dsi);
  auto selected = agt_select(conf, cfg);
  std::erase_if(selected, [&](const PixelCoord& p) { return !(conf.at(p.x, p.y) > 0.0); });
  return selected;
}

SubDsi extract_subdsi(const DsiGrid& dsi, PixelCoord p, SubDsiRadii radii) {
  if (p.x - radii.r_w < 0 || p.y - radii.r_h < 0 || p.x + radii.r_w >= dsi.width() ||
      p.y + radii.r_h >= dsi.height())
    throw std::out_of_range("Sub-DSI window crosses the image border");
  SubDsi s;
  s.num_planes = dsi.num_planes();
  s.radii = radii;
  s.center = p;
  s.values.resize(static_cast<std::size_t>(s.num_planes) * radii.frame_w() * radii.frame_h());
  float peak = 0.0f;
  for (int i = 0; i < s.num_planes; ++i)
    for (int r = 0; r < radii.frame_h(); ++r)
      for (int c = 0; c < radii.frame_w(); ++c) {
        const float v = dsi.at(i, p.x - radii.r_w + c, p.y - radii.r_h + r);
        s.values[s.index(i, c, r)] = v;
        peak = std::max(peak, v);
      }
  if (!(peak > 0.0f)) throw std::domain_error("unselectable pixel: empty Sub-DSI window");
  for (float& v : s.values) v = static_cast<float>(static_cast<double>(v) / peak);
  return s;
}

DepthMap argmax_depth(const DsiGrid& dsi, std::span<const PixelCoord> pixels) {
  DepthMap dm(dsi.width(), dsi.height());
  for (const auto& p : pixels) {
    if (p.x < 0 || p.y < 0 || p.x >= dsi.width() || p.y >= dsi.height())
      throw std::out_of_range("argmax_depth: pixel outside the DSI");
    int best = 0;
    float best_count = dsi.at(0, p.x, p.y);
    for (int i = 1; i < dsi.num_planes(); ++i) {
      const float c = dsi.at(i, p.x, p.y);
      if (c > best_count) {
        best = i;
        best_count = c;
      }
    }
    dm.set(p.x, p.y, dsi.depths()[best]);
  }
  return dm;
}

DepthMap morph_dilate(const DepthMap& dm) {
  DepthMap out = dm;
  static constexpr int dx[4] = {-1, 1, 0, 0};
  static constexpr int dy[4] = {0, 0, -1, 1};
  for (int y = 0; y < dm.height; ++y)
    for (int x = 0; x < dm.width; ++x) {
      if (dm.is_valid(x, y)) continue;
      double sum = 0.0;
      int n = 0;
      for (int k = 0; k < 4; ++k) {
        const int nx = x + dx[k];
        const int ny = y + dy[k];
        if (nx < 0 || ny < 0 || nx >= dm.width || ny >= dm.height || !dm.is_valid(nx, ny)) continue;
        sum += dm.at(nx, ny);
        ++n;
      }
      if (n > 0) out.set(x, y, sum / n);
    }
  return out;
}

}  // namespace derd
