// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "derd/network.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace derd {

/// A DSI and its aligned ground-truth depth.
struct TrainingFrame {
  DsiGrid dsi;
  DepthMap gt;
  int sequence_id = 0;
  int frame_id = 0;
};

struct Sample {
  SubDsi subdsi;
  /// 1 or 9 normalized depths; 3x3 cells are row-major, center at index 4.
  std::vector<double> target;
  std::vector<std::uint8_t> mask;
  int sequence_id = 0;
  int frame_id = 0;
  PixelCoord pixel;
};

struct DatasetStats {
  std::size_t samples = 0;
  std::size_t selected_pixels = 0;
  std::size_t clamped_targets = 0;
};

/// Samples of one frame; empty when no selected pixel has ground truth.
std::vector<Sample> assemble_frame(const TrainingFrame& frame, const AgtConfig& select_cfg,
                                   SubDsiRadii radii, HeadType head, DepthMapping mapping,
                                   DatasetStats& stats);

/// Selection, Sub-DSI extraction and GT pairing for every frame, in frame
/// then row-major pixel order. Throws DataError when nothing is produced.
std::vector<Sample> assemble_dataset(std::span<const TrainingFrame> frames, const AgtConfig& select_cfg,
                                     SubDsiRadii radii, HeadType head,
                                     DepthMapping mapping = DepthMapping::linear,
                                     DatasetStats* stats = nullptr);

enum class SplitMode { sample, frame };

struct TrainConfig {
  int batch_size = 64;
  int epochs = 3;
  std::uint64_t seed = 0;
  AdamWConfig optimizer;
  bool ensemble = true;
  SplitMode split = SplitMode::sample;
  /// 0 selects default_workers().
  std::size_t workers = 0;

  void validate() const;
};

struct StepLog {
  int epoch = 0;
  int step = 0;
  double loss = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<double> epoch_loss;
  std::vector<StepLog> steps;
};

/// Minibatch AdamW on the masked MAE. The batch loss averages over all valid
/// target cells in the batch. Throws NumericError on a non-finite loss.
TrainResult train(std::span<const Sample> samples, const NetworkConfig& net_cfg,
                  const TrainConfig& cfg);

struct EnsembleModel {
  NetworkConfig config;
  std::vector<ModelParams> members;
  std::vector<TrainResult> history;
};

/// Indices of the two disjoint halves used for ensemble training.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> ensemble_split(
    std::span<const Sample> samples, std::uint64_t seed, SplitMode mode);

/// Two members trained concurrently on disjoint halves with seeds seed+1 and seed+2.
EnsembleModel train_ensemble(std::span<const Sample> samples, const NetworkConfig& net_cfg,
                             const TrainConfig& cfg);

/// Normalized [0,1] outputs: per-member forward, clamp, mean over members.
std::vector<std::vector<double>> predict_normalized(const NetworkConfig& cfg,
                                                    std::span<const ModelParams> members,
                                                    std::span<const SubDsi> batch,
                                                    std::size_t workers = 0);

/// Depths in meters, one vector (1 or 9 values) per Sub-DSI.
std::vector<std::vector<double>> predict(const NetworkConfig& cfg,
                                         std::span<const ModelParams> members,
                                         std::span<const SubDsi> batch, double z_min,
                                         double z_max, std::size_t workers = 0);

}  // namespace derd
