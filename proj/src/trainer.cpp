// SPDX-License-Identifier: Apache-2.0
#include "derd/trainer.hpp"

#include "derd/error.hpp"
#include "derd/parallel.hpp"
#include "derd/random.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <iterator>
#include <numeric>
#include <thread>

namespace derd {

namespace {

// Gradient partial sums are accumulated in this many fixed groups per batch
// so the summation order does not depend on the worker count.
constexpr std::size_t kGradientGroups = 8;
// Offset between the initialization stream and the shuffle stream of a seed.
constexpr std::uint64_t kShuffleStream = 0x9E3779B97F4A7C15ULL;

int valid_cells(const Sample& s) {
  return static_cast<int>(std::count(s.mask.begin(), s.mask.end(), std::uint8_t{1}));
}

void add_into(ModelParams& dst, const ModelParams& src) {
  auto d = dst.named();
  const auto s = src.named();
  for (std::size_t k = 0; k < d.size(); ++k) {
    auto& a = d[k].second->data;
    const auto& b = s[k].second->data;
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  }
}

TrainResult train_indices(std::span<const Sample> samples, std::vector<std::size_t> indices,
                          const NetworkConfig& net_cfg, const TrainConfig& cfg, std::uint64_t seed) {
  if (indices.empty()) throw DataError("train: no samples");
  net_cfg.validate();
  for (std::size_t i : indices)
    if (samples[i].target.size() != static_cast<std::size_t>(net_cfg.out_dim()))
      throw ConfigError("train: sample targets do not match the network head");

  TrainResult result;
  result.params = ModelParams::init(net_cfg, seed);
  AdamWState opt = AdamWState::zeros_like(result.params);
  Rng shuffle_rng(seed + kShuffleStream);
  const std::size_t workers = cfg.workers == 0 ? default_workers() : cfg.workers;
  std::vector<ModelParams> group_grads(kGradientGroups, ModelParams::zeros(net_cfg));
  std::vector<double> group_loss(kGradientGroups);
  ModelParams grads = ModelParams::zeros(net_cfg);
  std::vector<std::vector<double>> inputs(samples.size());
  int step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(indices));
    double epoch_abs = 0.0;
    double epoch_cells = 0.0;
    for (std::size_t b0 = 0; b0 < indices.size(); b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(indices.size(), b0 + cfg.batch_size);
      const std::span<const std::size_t> batch(indices.data() + b0, b1 - b0);
      double cells = 0.0;
      for (std::size_t i : batch) cells += valid_cells(samples[i]);
      const std::size_t groups = std::min(kGradientGroups, batch.size());
      const std::size_t per_group = (batch.size() + groups - 1) / groups;
      parallel_for(groups, workers, [&](std::size_t g0, std::size_t g1, std::size_t) {
        for (std::size_t g = g0; g < g1; ++g) {
          group_grads[g].set_zero();
          group_loss[g] = 0.0;
          for (std::size_t k = g * per_group; k < std::min(batch.size(), (g + 1) * per_group); ++k) {
            const Sample& s = samples[batch[k]];
            auto& input = inputs[batch[k]];
            if (input.empty()) input = subdsi_input(s.subdsi);
            const double n = valid_cells(s);
            const double loss = accumulate_gradients(input, s.subdsi.num_planes, s.target, s.mask,
                                                     net_cfg, result.params, n / cells, group_grads[g]);
            group_loss[g] += loss * n;
          }
        }
      });
      grads.set_zero();
      double abs_sum = 0.0;
      for (std::size_t g = 0; g < groups; ++g) {
        add_into(grads, group_grads[g]);
        abs_sum += group_loss[g];
      }
      const double batch_loss = abs_sum / cells;
      if (!std::isfinite(batch_loss) || !grads.all_finite())
        throw NumericError("non-finite loss at training step " + std::to_string(step));
      adamw_step(result.params, grads, opt, cfg.optimizer);
      result.steps.push_back({epoch, step, batch_loss});
      epoch_abs += abs_sum;
      epoch_cells += cells;
      ++step;
    }
    result.epoch_loss.push_back(epoch_abs / epoch_cells);
  }
  if (!result.params.all_finite()) throw NumericError("non-finite parameters after training");
  return result;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(optimizer.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (optimizer.weight_decay < 0.0) throw ConfigError("weight decay must be >= 0");
}

std::vector<Sample> assemble_frame(const TrainingFrame& f, const AgtConfig& select_cfg,
                                   SubDsiRadii radii, HeadType head, DepthMapping mapping,
                                   DatasetStats& st) {
  if (f.gt.width != f.dsi.width() || f.gt.height != f.dsi.height())
    throw DataError("ground truth and DSI resolution differ");
  AgtConfig agt = select_cfg;
  agt.border = radii;
  const double z_min = f.dsi.z_min();
  const double z_max = f.dsi.z_max();
  const auto pixels = select_pixels(f.dsi, agt);
  st.selected_pixels += pixels.size();
  const int reach = head == HeadType::single ? 0 : 1;
  std::vector<Sample> samples;
  for (const auto& p : pixels) {
    Sample s;
    s.sequence_id = f.sequence_id;
    s.frame_id = f.frame_id;
    s.pixel = p;
    for (int dy = -reach; dy <= reach; ++dy)
      for (int dx = -reach; dx <= reach; ++dx) {
        const int x = p.x + dx;
        const int y = p.y + dy;
        const bool ok = x >= 0 && y >= 0 && x < f.gt.width && y < f.gt.height && f.gt.is_valid(x, y);
        double u = 0.0;
        if (ok) {
          const double z = f.gt.at(x, y);
          if (z < z_min || z > z_max) ++st.clamped_targets;
          u = normalize_depth(z, z_min, z_max, mapping);
        }
        s.target.push_back(u);
        s.mask.push_back(ok ? 1 : 0);
      }
    if (valid_cells(s) == 0) continue;
    s.subdsi = extract_subdsi(f.dsi, p, radii);
    samples.push_back(std::move(s));
  }
  st.samples += samples.size();
  return samples;
}

std::vector<Sample> assemble_dataset(std::span<const TrainingFrame> frames, const AgtConfig& select_cfg,
                                     SubDsiRadii radii, HeadType head, DepthMapping mapping,
                                     DatasetStats* stats) {
  DatasetStats st;
  std::vector<Sample> samples;
  for (const auto& f : frames) {
    auto part = assemble_frame(f, select_cfg, radii, head, mapping, st);
    std::move(part.begin(), part.end(), std::back_inserter(samples));
  }
  if (stats) *stats = st;
  if (samples.empty()) throw DataError("dataset assembly produced no samples");
  return samples;
}

TrainResult train(std::span<const Sample> samples, const NetworkConfig& net_cfg,
                  const TrainConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  return train_indices(samples, std::move(idx), net_cfg, cfg, cfg.seed);
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> ensemble_split(
    std::span<const Sample> samples, std::uint64_t seed, SplitMode mode) {
  if (samples.size() < 2) throw DataError("ensemble training needs at least two samples");
  Rng rng(seed);
  std::vector<std::size_t> a, b;
  if (mode == SplitMode::sample) {
    std::vector<std::size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(std::span<std::size_t>(idx));
    const std::size_t half = (idx.size() + 1) / 2;
    a.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(half));
    b.assign(idx.begin() + static_cast<std::ptrdiff_t>(half), idx.end());
  } else {
    std::map<std::pair<int, int>, std::vector<std::size_t>> by_frame;
    for (std::size_t i = 0; i < samples.size(); ++i)
      by_frame[{samples[i].sequence_id, samples[i].frame_id}].push_back(i);
    if (by_frame.size() < 2) throw DataError("frame-wise ensemble split needs at least two frames");
    std::vector<const std::vector<std::size_t>*> frames;
    for (const auto& [key, members] : by_frame) frames.push_back(&members);
    rng.shuffle(std::span<const std::vector<std::size_t>*>(frames));
    const std::size_t half = (frames.size() + 1) / 2;
    for (std::size_t k = 0; k < frames.size(); ++k) {
      auto& dst = k < half ? a : b;
      dst.insert(dst.end(), frames[k]->begin(), frames[k]->end());
    }
  }
  return {a, b};
}

EnsembleModel train_ensemble(std::span<const Sample> samples, const NetworkConfig& net_cfg,
                             const TrainConfig& cfg) {
  cfg.validate();
  auto [first, second] = ensemble_split(samples, cfg.seed, cfg.split);
  const std::size_t workers = cfg.workers == 0 ? default_workers() : cfg.workers;
  TrainConfig member_cfg = cfg;
  member_cfg.workers = std::max<std::size_t>(1, workers / 2);

  EnsembleModel model;
  model.config = net_cfg;
  model.history.resize(2);
  std::exception_ptr error;
  std::thread other([&] {
    try {
      model.history[1] = train_indices(samples, second, net_cfg, member_cfg, cfg.seed + 2);
    } catch (...) {
      error = std::current_exception();
    }
  });
  try {
    model.history[0] = train_indices(samples, first, net_cfg, member_cfg, cfg.seed + 1);
  } catch (...) {
    other.join();
    throw;
  }
  other.join();
  if (error) std::rethrow_exception(error);
  for (const auto& h : model.history) model.members.push_back(h.params);
  return model;
}

std::vector<std::vector<double>> predict_normalized(const NetworkConfig& cfg,
                                                    std::span<const ModelParams> members,
                                                    std::span<const SubDsi> batch,
                                                    std::size_t workers) {
  if (members.empty()) throw std::invalid_argument("predict: no model members");
  std::vector<std::vector<double>> out(batch.size());
  parallel_for(batch.size(), workers == 0 ? default_workers() : workers,
               [&](std::size_t b, std::size_t e, std::size_t) {
                 for (std::size_t i = b; i < e; ++i) {
                   std::vector<double> mean(cfg.out_dim(), 0.0);
                   for (const auto& m : members) {
                     const auto acts = forward(batch[i], cfg, m);
                     for (int k = 0; k < cfg.out_dim(); ++k) {
                       if (!std::isfinite(acts.output[k]))
                         throw NumericError("non-finite network output");
                       mean[k] += std::clamp(acts.output[k], 0.0, 1.0);
                     }
                   }
                   for (double& v : mean) v /= static_cast<double>(members.size());
                   out[i] = std::move(mean);
                 }
               });
  return out;
}

std::vector<std::vector<double>> predict(const NetworkConfig& cfg,
                                         std::span<const ModelParams> members,
                                         std::span<const SubDsi> batch, double z_min,
                                         double z_max, std::size_t workers) {
  auto out = predict_normalized(cfg, members, batch, workers);
  for (auto& v : out)
    for (double& u : v) u = denormalize(u, z_min, z_max, cfg.mapping);
  return out;
}

}  // namespace derd
