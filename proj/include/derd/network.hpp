// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "derd/pixel_select.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace derd {

enum class HeadType { single, multi3x3 };
/// How normalized outputs in [0,1] map onto [z_min, z_max].
enum class DepthMapping { linear, inverse };

std::string to_string(HeadType h);
std::string to_string(DepthMapping m);
HeadType parse_head(const std::string& s);
DepthMapping parse_depth_mapping(const std::string& s);

/// Dense row-major array of doubles.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> dims);

  std::size_t size() const { return data.size(); }
  bool operator==(const Tensor&) const = default;
};

struct NetworkConfig {
  /// Depth planes used for training; inference accepts any depth.
  int num_planes = 100;
  SubDsiRadii radii{3, 3};
  int conv_channels = 4;
  /// GRU width; 0 means the flattened conv frame size, channels*(2r_w-1)*(2r_h-1).
  int hidden = 0;
  HeadType head = HeadType::single;
  DepthMapping mapping = DepthMapping::linear;

  int conv_rows() const { return 2 * radii.r_h - 1; }
  int conv_cols() const { return 2 * radii.r_w - 1; }
  int gru_input() const { return conv_channels * conv_rows() * conv_cols(); }
  int hidden_size() const { return hidden > 0 ? hidden : gru_input(); }
  int out_dim() const { return head == HeadType::single ? 1 : 9; }
  /// Depth steps after the stride-2 convolution: floor((D + 2 - 3) / 2) + 1.
  static int conv_depth(int num_planes) { return (num_planes - 1) / 2 + 1; }

  void validate() const;
  bool operator==(const NetworkConfig&) const = default;
};

inline constexpr int kConvKernel = 3;

/// GRU matrices stack the gates as [update; reset; candidate] blocks of
/// hidden rows each.
struct ModelParams {
  Tensor conv_w;     // C x 1 x 3 x 3 x 3, kernel axes (depth, row, col)
  Tensor conv_b;     // C
  Tensor gru_w_in;   // 3H x I
  Tensor gru_w_rec;  // 3H x H
  Tensor gru_b_in;   // 3H
  Tensor gru_b_rec;  // 3H
  Tensor dense1_w;   // H x H
  Tensor dense1_b;   // H
  Tensor out_w;      // O x H
  Tensor out_b;      // O

  static ModelParams zeros(const NetworkConfig& cfg);
  /// Per-tensor uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) drawn from Rng(seed),
  /// tensors filled in declaration order.
  static ModelParams init(const NetworkConfig& cfg, std::uint64_t seed);

  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
  std::size_t size() const;
  void set_zero();
  bool all_finite() const;
  bool operator==(const ModelParams&) const = default;
};

std::size_t param_count(const NetworkConfig& cfg);

struct ForwardActivations {
  int num_planes = 0;
  int steps = 0;
  std::vector<double> input;      // D x rows x cols
  std::vector<double> conv_pre;   // steps x C x rows' x cols'
  std::vector<double> conv_out;   // ReLU(conv_pre); row t is GRU input x_t
  std::vector<double> hidden;     // (steps + 1) x H, h_0 = 0
  std::vector<double> gate_z;     // steps x H
  std::vector<double> gate_r;     // steps x H
  std::vector<double> candidate;  // steps x H
  std::vector<double> rec_cand;   // steps x H, U_n h_{t-1} + c_n
  std::vector<double> dense1_pre; // H
  std::vector<double> dense1_out; // H
  std::vector<double> output;     // out_dim, unclamped

  std::span<const double> final_hidden() const;
  /// Shape probes.
  std::vector<int> input_shape(const NetworkConfig& cfg) const;
  std::vector<int> conv_shape(const NetworkConfig& cfg) const;
  std::vector<int> gru_sequence_shape(const NetworkConfig& cfg) const;
};

/// Cross-correlation with depth padding 1 and stride 2, no spatial padding,
/// bias and ReLU. Input is D x rows x cols; returns steps x C x rows' x cols'.
std::vector<double> conv3d_relu(std::span<const double> input, int num_planes,
                                const NetworkConfig& cfg, const ModelParams& params,
                                std::vector<double>* pre_activation = nullptr);

/// Runs the GRU from h_0 = 0 over `steps` rows of `sequence`; returns h_T.
std::vector<double> gru_forward(std::span<const double> sequence, int steps,
                                const NetworkConfig& cfg, const ModelParams& params);

/// Dense + ReLU + Dense on the final hidden state.
std::vector<double> head_forward(std::span<const double> h, const NetworkConfig& cfg,
                                 const ModelParams& params);

ForwardActivations forward(std::span<const double> input, int num_planes,
                           const NetworkConfig& cfg, const ModelParams& params);
ForwardActivations forward(const SubDsi& s, const NetworkConfig& cfg, const ModelParams& params);

std::vector<double> subdsi_input(const SubDsi& s);

/// Masked mean absolute error, the training loss.
double masked_mae(std::span<const double> output, std::span<const double> target,
                  std::span<const std::uint8_t> mask);

/// Reverse-mode gradient of masked_mae w.r.t. all parameters, scaled by
/// `scale` and added into `grads`. Returns the loss. |x| has subgradient 0
/// at 0 and ReLU has derivative 0 at 0.
double accumulate_gradients(std::span<const double> input, int num_planes,
                            std::span<const double> target, std::span<const std::uint8_t> mask,
                            const NetworkConfig& cfg, const ModelParams& params, double scale,
                            ModelParams& grads);

struct LossAndGradients {
  double loss = 0.0;
  ModelParams grads;
};

LossAndGradients backward(const SubDsi& s, std::span<const double> target,
                          std::span<const std::uint8_t> mask, const NetworkConfig& cfg,
                          const ModelParams& params);

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  ModelParams m;
  ModelParams v;
  std::uint64_t step = 0;

  static AdamWState zeros_like(const ModelParams& p);
};

/// Decoupled decay theta -= lr*lambda*theta, then the bias-corrected Adam step.
void adamw_step(ModelParams& params, const ModelParams& grads, AdamWState& state,
                const AdamWConfig& cfg);

double denormalize(double u, double z_min, double z_max, DepthMapping mapping = DepthMapping::linear);
/// Inverse of denormalize, clamped to [0,1].
double normalize_depth(double z, double z_min, double z_max,
                       DepthMapping mapping = DepthMapping::linear);

struct Model {
  NetworkConfig config;
  ModelParams params;
};

inline constexpr std::uint32_t kModelFormatVersion = 1;

/// "DERD", u32 version, config block, then named f32 tensors.
void save_model(const std::filesystem::path& path, const ModelParams& params,
                const NetworkConfig& cfg);
Model load_model(const std::filesystem::path& path);

}  // namespace derd
