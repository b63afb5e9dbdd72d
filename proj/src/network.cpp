// SPDX-License-Identifier: Apache-2.0
#include "derd/network.hpp"

#include "derd/error.hpp"
#include "derd/random.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace derd {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

ConstMatMap mat(const Tensor& t) { return {t.data.data(), t.shape[0], t.shape[1]}; }
MatMap mat(Tensor& t) { return {t.data.data(), t.shape[0], t.shape[1]}; }
ConstVecMap vec(const Tensor& t) { return {t.data.data(), static_cast<Eigen::Index>(t.size())}; }
VecMap vec(Tensor& t) { return {t.data.data(), static_cast<Eigen::Index>(t.size())}; }
ConstVecMap vec(std::span<const double> s) { return {s.data(), static_cast<Eigen::Index>(s.size())}; }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::size_t conv_w_index(int c, int kd, int kr, int kc) {
  return ((static_cast<std::size_t>(c) * kConvKernel + kd) * kConvKernel + kr) * kConvKernel + kc;
}

void check_params(const NetworkConfig& cfg, const ModelParams& p) {
  const int H = cfg.hidden_size();
  if (p.gru_w_in.shape != std::vector<int>{3 * H, cfg.gru_input()} ||
      p.out_w.shape != std::vector<int>{cfg.out_dim(), H} ||
      p.conv_w.shape != std::vector<int>{cfg.conv_channels, 1, 3, 3, 3})
    throw std::invalid_argument("model parameters do not match the network config");
}

}  // namespace

std::string to_string(HeadType h) { return h == HeadType::single ? "single" : "multi3x3"; }
std::string to_string(DepthMapping m) { return m == DepthMapping::linear ? "linear" : "inverse"; }

HeadType parse_head(const std::string& s) {
  if (s == "single") return HeadType::single;
  if (s == "multi3x3" || s == "multi") return HeadType::multi3x3;
  throw ConfigError("unknown head '" + s + "'");
}

DepthMapping parse_depth_mapping(const std::string& s) {
  if (s == "linear") return DepthMapping::linear;
  if (s == "inverse") return DepthMapping::inverse;
  throw ConfigError("unknown depth mapping '" + s + "'");
}

Tensor::Tensor(std::vector<int> dims) : shape(std::move(dims)) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  data.assign(n, 0.0);
}

void NetworkConfig::validate() const {
  if (num_planes < 2 || num_planes % 2 != 0)
    throw ConfigError("network depth planes must be even and >= 2");
  if (radii.r_w < 1 || radii.r_h < 1) throw ConfigError("Sub-DSI radii must be >= 1");
  if (conv_channels < 1) throw ConfigError("conv_channels must be >= 1");
  if (hidden < 0) throw ConfigError("hidden must be >= 0");
}

ModelParams ModelParams::zeros(const NetworkConfig& cfg) {
  const int C = cfg.conv_channels;
  const int I = cfg.gru_input();
  const int H = cfg.hidden_size();
  const int O = cfg.out_dim();
  ModelParams p;
  p.conv_w = Tensor({C, 1, 3, 3, 3});
  p.conv_b = Tensor({C});
  p.gru_w_in = Tensor({3 * H, I});
  p.gru_w_rec = Tensor({3 * H, H});
  p.gru_b_in = Tensor({3 * H});
  p.gru_b_rec = Tensor({3 * H});
  p.dense1_w = Tensor({H, H});
  p.dense1_b = Tensor({H});
  p.out_w = Tensor({O, H});
  p.out_b = Tensor({O});
  return p;
}

ModelParams ModelParams::init(const NetworkConfig& cfg, std::uint64_t seed) {
  ModelParams p = zeros(cfg);
  const double conv_fan = 27.0;
  const double fan[] = {conv_fan,
                        conv_fan,
                        static_cast<double>(cfg.gru_input()),
                        static_cast<double>(cfg.hidden_size()),
                        static_cast<double>(cfg.gru_input()),
                        static_cast<double>(cfg.hidden_size()),
                        static_cast<double>(cfg.hidden_size()),
                        static_cast<double>(cfg.hidden_size()),
                        static_cast<double>(cfg.hidden_size()),
                        static_cast<double>(cfg.hidden_size())};
  Rng rng(seed);
  std::size_t k = 0;
  for (auto& [name, t] : p.named()) {
    const double bound = 1.0 / std::sqrt(fan[k++]);
    for (double& v : t->data) v = rng.uniform(-bound, bound);
  }
  return p;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named() {
  return {{"conv.weight", &conv_w},        {"conv.bias", &conv_b},
          {"gru.weight_in", &gru_w_in},    {"gru.weight_rec", &gru_w_rec},
          {"gru.bias_in", &gru_b_in},      {"gru.bias_rec", &gru_b_rec},
          {"dense1.weight", &dense1_w},    {"dense1.bias", &dense1_b},
          {"dense_out.weight", &out_w},    {"dense_out.bias", &out_b}};
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [n, t] : const_cast<ModelParams*>(this)->named()) out.emplace_back(n, t);
  return out;
}

std::size_t ModelParams::size() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named()) n += t->size();
  return n;
}

void ModelParams::set_zero() {
  for (auto& [name, t] : named()) std::fill(t->data.begin(), t->data.end(), 0.0);
}

bool ModelParams::all_finite() const {
  for (const auto& [name, t] : named())
    for (double v : t->data)
      if (!std::isfinite(v)) return false;
  return true;
}

std::size_t param_count(const NetworkConfig& cfg) {
  const std::size_t C = cfg.conv_channels;
  const std::size_t I = cfg.gru_input();
  const std::size_t H = cfg.hidden_size();
  const std::size_t O = cfg.out_dim();
  const std::size_t conv = C * 27 + C;
  const std::size_t gru = 3 * H * I + 3 * H * H + 6 * H;
  const std::size_t dense1 = H * H + H;
  const std::size_t out = O * H + O;
  return conv + gru + dense1 + out;
}

// ---------------------------------------------------------------------------
// Forward

std::span<const double> ForwardActivations::final_hidden() const {
  const std::size_t H = dense1_pre.size();
  return std::span<const double>(hidden).subspan(static_cast<std::size_t>(steps) * H, H);
}

std::vector<int> ForwardActivations::input_shape(const NetworkConfig& cfg) const {
  return {num_planes, 1, cfg.radii.frame_w(), cfg.radii.frame_h()};
}

std::vector<int> ForwardActivations::conv_shape(const NetworkConfig& cfg) const {
  return {steps, cfg.conv_channels, cfg.conv_cols(), cfg.conv_rows()};
}

std::vector<int> ForwardActivations::gru_sequence_shape(const NetworkConfig& cfg) const {
  return {steps, cfg.gru_input()};
}

std::vector<double> conv3d_relu(std::span<const double> input, int num_planes,
                                const NetworkConfig& cfg, const ModelParams& params,
                                std::vector<double>* pre_activation) {
  const int rows = cfg.radii.frame_h();
  const int cols = cfg.radii.frame_w();
  if (num_planes < 1 || input.size() != static_cast<std::size_t>(num_planes) * rows * cols)
    throw std::invalid_argument("conv3d: input shape does not match the Sub-DSI radii");
  const int steps = NetworkConfig::conv_depth(num_planes);
  const int C = cfg.conv_channels;
  const int orows = cfg.conv_rows();
  const int ocols = cfg.conv_cols();
  std::vector<double> pre(static_cast<std::size_t>(steps) * C * orows * ocols);
  const auto& w = params.conv_w.data;
  std::size_t o = 0;
  for (int od = 0; od < steps; ++od)
    for (int c = 0; c < C; ++c)
      for (int r = 0; r < orows; ++r)
        for (int q = 0; q < ocols; ++q, ++o) {
          double acc = params.conv_b.data[c];
          for (int kd = 0; kd < kConvKernel; ++kd) {
            const int d = 2 * od + kd - 1;
            if (d < 0 || d >= num_planes) continue;
            for (int kr = 0; kr < kConvKernel; ++kr) {
              const double* in_row = &input[(static_cast<std::size_t>(d) * rows + r + kr) * cols + q];
              const double* w_row = &w[conv_w_index(c, kd, kr, 0)];
              acc += w_row[0] * in_row[0] + w_row[1] * in_row[1] + w_row[2] * in_row[2];
            }
          }
          pre[o] = acc;
        }
  std::vector<double> out(pre.size());
  std::transform(pre.begin(), pre.end(), out.begin(), [](double v) { return std::max(v, 0.0); });
  if (pre_activation) *pre_activation = std::move(pre);
  return out;
}

namespace {

// Runs the GRU, optionally recording gates for backprop.
void run_gru(std::span<const double> sequence, int steps, const NetworkConfig& cfg,
             const ModelParams& p, ForwardActivations* acts, std::vector<double>& h_out) {
  const int H = cfg.hidden_size();
  const int I = cfg.gru_input();
  if (sequence.size() != static_cast<std::size_t>(steps) * I)
    throw std::invalid_argument("gru_forward: feature length does not match the GRU input size");
  const auto W_in = mat(p.gru_w_in);
  const auto W_rec = mat(p.gru_w_rec);
  const auto b_in = vec(p.gru_b_in);
  const auto b_rec = vec(p.gru_b_rec);
  Eigen::VectorXd h = Eigen::VectorXd::Zero(H);
  Eigen::VectorXd ai(3 * H), ah(3 * H);
  if (acts) {
    acts->hidden.assign(static_cast<std::size_t>(steps + 1) * H, 0.0);
    acts->gate_z.resize(static_cast<std::size_t>(steps) * H);
    acts->gate_r.resize(acts->gate_z.size());
    acts->candidate.resize(acts->gate_z.size());
    acts->rec_cand.resize(acts->gate_z.size());
  }
  for (int t = 0; t < steps; ++t) {
    const ConstVecMap x(sequence.data() + static_cast<std::size_t>(t) * I, I);
    ai.noalias() = W_in * x;
    ai += b_in;
    ah.noalias() = W_rec * h;
    ah += b_rec;
    for (int j = 0; j < H; ++j) {
      const double z = sigmoid(ai[j] + ah[j]);
      const double r = sigmoid(ai[H + j] + ah[H + j]);
      const double g = ah[2 * H + j];
      const double n = std::tanh(ai[2 * H + j] + r * g);
      if (acts) {
        const std::size_t k = static_cast<std::size_t>(t) * H + j;
        acts->gate_z[k] = z;
        acts->gate_r[k] = r;
        acts->candidate[k] = n;
        acts->rec_cand[k] = g;
      }
      h[j] = z * h[j] + (1.0 - z) * n;
    }
    if (acts)
      std::copy(h.data(), h.data() + H, acts->hidden.begin() + static_cast<std::ptrdiff_t>(t + 1) * H);
  }
  h_out.assign(h.data(), h.data() + H);
}

}  // namespace

std::vector<double> gru_forward(std::span<const double> sequence, int steps,
                                const NetworkConfig& cfg, const ModelParams& params) {
  std::vector<double> h;
  run_gru(sequence, steps, cfg, params, nullptr, h);
  return h;
}

std::vector<double> head_forward(std::span<const double> h, const NetworkConfig& cfg,
                                 const ModelParams& params) {
  const int H = cfg.hidden_size();
  if (h.size() != static_cast<std::size_t>(H)) throw std::invalid_argument("head: hidden size mismatch");
  Eigen::VectorXd a = mat(params.dense1_w) * vec(h) + vec(params.dense1_b);
  a = a.unaryExpr([](double v) { return std::max(v, 0.0); });
  const Eigen::VectorXd u = mat(params.out_w) * a + vec(params.out_b);
  return {u.data(), u.data() + u.size()};
}

ForwardActivations forward(std::span<const double> input, int num_planes,
                           const NetworkConfig& cfg, const ModelParams& params) {
  check_params(cfg, params);
  ForwardActivations a;
  a.num_planes = num_planes;
  a.steps = NetworkConfig::conv_depth(num_planes);
  a.input.assign(input.begin(), input.end());
  a.conv_out = conv3d_relu(input, num_planes, cfg, params, &a.conv_pre);
  std::vector<double> h;
  run_gru(a.conv_out, a.steps, cfg, params, &a, h);
  const int H = cfg.hidden_size();
  const Eigen::VectorXd pre = mat(params.dense1_w) * ConstVecMap(h.data(), H) + vec(params.dense1_b);
  a.dense1_pre.assign(pre.data(), pre.data() + H);
  a.dense1_out.resize(H);
  std::transform(a.dense1_pre.begin(), a.dense1_pre.end(), a.dense1_out.begin(),
                 [](double v) { return std::max(v, 0.0); });
  const Eigen::VectorXd u = mat(params.out_w) * vec(a.dense1_out) + vec(params.out_b);
  a.output.assign(u.data(), u.data() + u.size());
  return a;
}

std::vector<double> subdsi_input(const SubDsi& s) { return {s.values.begin(), s.values.end()}; }

ForwardActivations forward(const SubDsi& s, const NetworkConfig& cfg, const ModelParams& params) {
  if (s.radii.r_w != cfg.radii.r_w || s.radii.r_h != cfg.radii.r_h)
    throw std::invalid_argument("Sub-DSI radii do not match the network config");
  return forward(subdsi_input(s), s.num_planes, cfg, params);
}

// ---------------------------------------------------------------------------
// Backward

double masked_mae(std::span<const double> output, std::span<const double> target,
                  std::span<const std::uint8_t> mask) {
  if (output.size() != target.size() || output.size() != mask.size())
    throw std::invalid_argument("loss: output/target/mask size mismatch");
  double sum = 0.0;
  int n = 0;
  for (std::size_t k = 0; k < output.size(); ++k)
    if (mask[k]) {
      sum += std::abs(output[k] - target[k]);
      ++n;
    }
  if (n == 0) throw std::invalid_argument("loss: no valid targets");
  return sum / n;
}

double accumulate_gradients(std::span<const double> input, int num_planes,
                            std::span<const double> target, std::span<const std::uint8_t> mask,
                            const NetworkConfig& cfg, const ModelParams& params, double scale,
                            ModelParams& grads) {
  const ForwardActivations a = forward(input, num_planes, cfg, params);
  const double loss = masked_mae(a.output, target, mask);
  const int H = cfg.hidden_size();
  const int I = cfg.gru_input();
  const int O = cfg.out_dim();

  int n_valid = 0;
  for (auto m : mask) n_valid += m ? 1 : 0;
  Eigen::VectorXd du = Eigen::VectorXd::Zero(O);
  for (int k = 0; k < O; ++k) {
    if (!mask[k]) continue;
    const double e = a.output[k] - target[k];
    du[k] = scale * (e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0)) / n_valid;
  }

  // Head.
  const ConstVecMap r1(a.dense1_out.data(), H);
  mat(grads.out_w).noalias() += du * r1.transpose();
  vec(grads.out_b) += du;
  Eigen::VectorXd da1 = mat(params.out_w).transpose() * du;
  for (int j = 0; j < H; ++j)
    if (!(a.dense1_pre[j] > 0.0)) da1[j] = 0.0;
  const auto hT = a.final_hidden();
  mat(grads.dense1_w).noalias() += da1 * vec(hT).transpose();
  vec(grads.dense1_b) += da1;
  Eigen::VectorXd dh = mat(params.dense1_w).transpose() * da1;

  // GRU, unrolled in reverse.
  const auto W_in = mat(params.gru_w_in);
  const auto W_rec = mat(params.gru_w_rec);
  auto dW_in = mat(grads.gru_w_in);
  auto dW_rec = mat(grads.gru_w_rec);
  auto db_in = vec(grads.gru_b_in);
  auto db_rec = vec(grads.gru_b_rec);
  std::vector<double> d_conv_out(a.conv_out.size(), 0.0);
  Eigen::VectorXd gi(3 * H), gh(3 * H), dh_prev(H);
  for (int t = a.steps - 1; t >= 0; --t) {
    const std::size_t off = static_cast<std::size_t>(t) * H;
    const ConstVecMap h_prev(a.hidden.data() + off, H);
    for (int j = 0; j < H; ++j) {
      const double z = a.gate_z[off + j];
      const double r = a.gate_r[off + j];
      const double n = a.candidate[off + j];
      const double g = a.rec_cand[off + j];
      const double dz = dh[j] * (h_prev[j] - n);
      const double dn = dh[j] * (1.0 - z);
      dh_prev[j] = dh[j] * z;
      const double dan = dn * (1.0 - n * n);
      const double dr = dan * g;
      const double daz = dz * z * (1.0 - z);
      const double dar = dr * r * (1.0 - r);
      gi[j] = daz;
      gi[H + j] = dar;
      gi[2 * H + j] = dan;
      gh[j] = daz;
      gh[H + j] = dar;
      gh[2 * H + j] = dan * r;
    }
    const ConstVecMap x(a.conv_out.data() + static_cast<std::size_t>(t) * I, I);
    dW_in.noalias() += gi * x.transpose();
    db_in += gi;
    VecMap(d_conv_out.data() + static_cast<std::size_t>(t) * I, I).noalias() = W_in.transpose() * gi;
    dW_rec.noalias() += gh * h_prev.transpose();
    db_rec += gh;
    dh_prev.noalias() += W_rec.transpose() * gh;
    dh = dh_prev;
  }

  // Convolution.
  const int rows = cfg.radii.frame_h();
  const int cols = cfg.radii.frame_w();
  const int C = cfg.conv_channels;
  const int orows = cfg.conv_rows();
  const int ocols = cfg.conv_cols();
  auto& dw = grads.conv_w.data;
  auto& dbc = grads.conv_b.data;
  std::size_t o = 0;
  for (int od = 0; od < a.steps; ++od)
    for (int c = 0; c < C; ++c)
      for (int r = 0; r < orows; ++r)
        for (int q = 0; q < ocols; ++q, ++o) {
          if (!(a.conv_pre[o] > 0.0)) continue;
          const double g = d_conv_out[o];
          if (g == 0.0) continue;
          dbc[c] += g;
          for (int kd = 0; kd < kConvKernel; ++kd) {
            const int d = 2 * od + kd - 1;
            if (d < 0 || d >= num_planes) continue;
            for (int kr = 0; kr < kConvKernel; ++kr) {
              const double* in_row = &input[(static_cast<std::size_t>(d) * rows + r + kr) * cols + q];
              double* w_row = &dw[conv_w_index(c, kd, kr, 0)];
              w_row[0] += g * in_row[0];
              w_row[1] += g * in_row[1];
              w_row[2] += g * in_row[2];
            }
          }
        }
  return loss;
}

LossAndGradients backward(const SubDsi& s, std::span<const double> target,
                          std::span<const std::uint8_t> mask, const NetworkConfig& cfg,
                          const ModelParams& params) {
  LossAndGradients out;
  out.grads = ModelParams::zeros(cfg);
  const auto input = subdsi_input(s);
  out.loss = accumulate_gradients(input, s.num_planes, target, mask, cfg, params, 1.0, out.grads);
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

AdamWState AdamWState::zeros_like(const ModelParams& p) {
  AdamWState s{p, p, 0};
  s.m.set_zero();
  s.v.set_zero();
  return s;
}

void adamw_step(ModelParams& params, const ModelParams& grads, AdamWState& state,
                const AdamWConfig& cfg) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  auto p_named = params.named();
  const auto g_named = grads.named();
  auto m_named = state.m.named();
  auto v_named = state.v.named();
  for (std::size_t k = 0; k < p_named.size(); ++k) {
    auto& theta = p_named[k].second->data;
    const auto& g = g_named[k].second->data;
    auto& m = m_named[k].second->data;
    auto& v = v_named[k].second->data;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      theta[i] -= cfg.lr * cfg.weight_decay * theta[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      theta[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

double denormalize(double u, double z_min, double z_max, DepthMapping mapping) {
  u = std::clamp(u, 0.0, 1.0);
  if (mapping == DepthMapping::linear) return z_min + u * (z_max - z_min);
  return 1.0 / (1.0 / z_min + u * (1.0 / z_max - 1.0 / z_min));
}

double normalize_depth(double z, double z_min, double z_max, DepthMapping mapping) {
  double u;
  if (mapping == DepthMapping::linear)
    u = (z - z_min) / (z_max - z_min);
  else
    u = (1.0 / z - 1.0 / z_min) / (1.0 / z_max - 1.0 / z_min);
  return std::clamp(u, 0.0, 1.0);
}

}  // namespace derd
