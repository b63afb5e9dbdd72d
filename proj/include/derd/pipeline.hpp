// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "derd/dsi.hpp"
#include "derd/metrics.hpp"
#include "derd/network.hpp"
#include "derd/pixel_select.hpp"
#include "derd/synth.hpp"
#include "derd/trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace derd {

inline constexpr int kManifestVersion = 1;
inline constexpr int kIndexVersion = 1;

enum class WindowAlign { centered, trailing };

/// Every tunable of the pipeline. Presets reproduce the published settings
/// for MVSEC indoor_flying and DSEC zurich_city_04_a, plus a desk-scale
/// synthetic setting.
struct RunConfig {
  std::string preset = "mvsec-indoor";
  int sensor_width = 346;
  int sensor_height = 260;

  // DSI
  double span = 1.0;
  WindowAlign window_align = WindowAlign::centered;
  double z_min = 1.0;
  double z_max = 6.5;
  int num_planes = 100;
  VoteMode vote_mode = VoteMode::nearest;
  std::size_t packet_size = 1024;
  FusionMethod fusion = FusionMethod::harmonic;
  /// Use fused stereo DSIs (true) or the left camera only.
  bool stereo = true;

  // Pixel selection
  SubDsiRadii radii{3, 3};
  int window = 9;
  double agt_c = -10.0;

  // Network and training
  HeadType head = HeadType::single;
  DepthMapping mapping = DepthMapping::linear;
  int conv_channels = 4;
  int hidden = 0;
  int batch_size = 64;
  std::string optimizer = "AdamW";
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::string loss = "MAE";
  int epochs = 3;
  bool ensemble = true;
  SplitMode split = SplitMode::sample;
  std::uint64_t seed = 0;

  // Evaluation
  double bad_pix_threshold = 0.10;
  bool morph_filter = false;

  /// Throws ConfigError on inconsistent fields.
  void validate() const;

  DsiShape dsi_shape() const { return {num_planes, z_min, z_max}; }
  VotingConfig voting() const;
  AgtConfig agt() const;
  NetworkConfig network() const;
  TrainConfig training() const;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

/// "mvsec-indoor", "dsec-zurich04a" or "desk".
RunConfig preset(const std::string& name);
std::vector<std::string> preset_names();

/// Event window around a reference time, clipped to [t_first, t_last].
std::pair<double, double> event_window(double t_ref, double span, WindowAlign align,
                                       double t_first, double t_last);

/// Run metadata: config, seeds, format versions and decision toggles.
nlohmann::json run_metadata(const std::string& command, const RunConfig& cfg,
                            const nlohmann::json& extra = nlohmann::json::object());
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Commands. Each reads and writes only the documented file formats.

struct SynthOptions {
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
  int sequence_id = 0;
  /// Scene file; when empty a random desk scene is drawn from `seed`.
  std::filesystem::path scene;
  double stereo_baseline = 0.2;
  NoiseSpec noise{0.3, 200.0};
  /// Ground-truth frame rate of a random scene [Hz].
  double gt_rate = 10.0;
};

/// Writes scene.json, calib.json, events_{left,right}.bin, poses_left.csv,
/// gt/*.pfm and manifest.json; returns the manifest path.
std::filesystem::path cmd_synth(const SynthOptions& opts, const RunConfig& cfg);

struct BuildDsiOptions {
  std::filesystem::path manifest;
  std::filesystem::path out_dir;
};

/// Builds left (and right + fused) DSIs for every GT frame of a manifest.
/// Returns the path of the DSI index JSON.
std::filesystem::path cmd_build_dsi(const BuildDsiOptions& opts, const RunConfig& cfg);

/// Single DSI anchored at the left camera pose at t_ref.
DsiGrid build_frame_dsi(const std::filesystem::path& events, const std::filesystem::path& poses,
                        const std::filesystem::path& calib, bool right_camera, double t_ref,
                        const RunConfig& cfg);

void cmd_fuse(const std::filesystem::path& a, const std::filesystem::path& b,
              const std::filesystem::path& out, FusionMethod method);

std::vector<PixelCoord> cmd_select(const std::filesystem::path& dsi,
                                   const std::filesystem::path& out_csv, const RunConfig& cfg);

struct TrainOptions {
  std::vector<std::filesystem::path> indices;
  std::filesystem::path out_dir;
};

struct TrainSummary {
  std::vector<std::filesystem::path> models;
  std::size_t samples = 0;
  std::vector<std::vector<double>> epoch_loss;
};

/// Trains on every frame of the given DSI indices; writes member_<k>.derd,
/// train_log.csv and run_meta.json.
TrainSummary cmd_train(const TrainOptions& opts, const RunConfig& cfg);

enum class InferMethod { network, argmax };

struct InferOptions {
  std::filesystem::path index;
  std::filesystem::path out_dir;
  InferMethod method = InferMethod::network;
  std::vector<std::filesystem::path> models;
};

/// Depth maps for every frame of a DSI index; returns the inference index.
std::filesystem::path cmd_infer(const InferOptions& opts, const RunConfig& cfg);

/// Depth map for one DSI.
DepthMap infer_depth(const DsiGrid& dsi, std::span<const PixelCoord> pixels, InferMethod method,
                     const NetworkConfig& net_cfg, std::span<const ModelParams> members,
                     bool morph_filter);

struct EvalResult {
  MetricsReport total;
  std::vector<MetricsReport> frames;
};

/// Evaluates an inference index against its ground truth; writes CSV, JSON
/// and a table rendering next to `out_prefix`.
EvalResult cmd_eval(const std::filesystem::path& infer_index, const std::filesystem::path& out_prefix,
                    const RunConfig& cfg, const std::string& label = "estimate");

struct BenchResult {
  double events_per_second = 0.0;
  double subdsis_per_second = 0.0;
  double ms_per_subdsi = 0.0;
  std::size_t events = 0;
  std::size_t subdsis = 0;
};

BenchResult cmd_bench(const std::filesystem::path& manifest, const std::vector<std::filesystem::path>& models,
                      const RunConfig& cfg, int repeats = 3);

void cmd_render(const std::filesystem::path& depth_pfm, const std::filesystem::path& out_ppm,
                double z_min, double z_max);

}  // namespace derd
