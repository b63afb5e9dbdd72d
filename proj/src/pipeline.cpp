// SPDX-License-Identifier: Apache-2.0
#include "derd/pipeline.hpp"

#include "derd/error.hpp"
#include "derd/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace derd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string to_string(WindowAlign a) { return a == WindowAlign::centered ? "centered" : "trailing"; }

WindowAlign parse_window_align(const std::string& s) {
  if (s == "centered") return WindowAlign::centered;
  if (s == "trailing") return WindowAlign::trailing;
  throw ConfigError("unknown window alignment: " + s);
}

std::string to_string(SplitMode m) { return m == SplitMode::sample ? "sample" : "frame"; }

SplitMode parse_split(const std::string& s) {
  if (s == "sample") return SplitMode::sample;
  if (s == "frame") return SplitMode::frame;
  throw ConfigError("unknown split mode: " + s);
}

std::string frame_name(int id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", id);
  return buf;
}

fs::path resolve(const fs::path& base_dir, const std::string& rel) {
  const fs::path p(rel);
  return p.is_absolute() ? p : base_dir / p;
}

std::string relative_to(const fs::path& p, const fs::path& dir) {
  return fs::relative(fs::absolute(p), fs::absolute(dir)).generic_string();
}

template <class F>
auto translate_json(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed JSON: ") + e.what());
  }
}

struct IndexFrame {
  int id = 0;
  double t = 0.0;
  fs::path dsi;
  fs::path gt;
};

struct DsiIndex {
  int sequence_id = 0;
  std::vector<IndexFrame> frames;
};

DsiIndex read_index(const fs::path& path, const char* dsi_key = "dsi") {
  const json j = read_json(path);
  const fs::path dir = path.parent_path();
  return translate_json([&] {
    if (j.at("version").get<int>() != kIndexVersion) throw DataError("unsupported index version");
    DsiIndex idx;
    idx.sequence_id = j.value("sequence_id", 0);
    for (const auto& f : j.at("frames")) {
      IndexFrame fr;
      fr.id = f.at("id").get<int>();
      fr.t = f.at("t").get<double>();
      fr.dsi = resolve(dir, f.at(dsi_key).get<std::string>());
      if (f.contains("gt") && !f.at("gt").is_null()) fr.gt = resolve(dir, f.at("gt").get<std::string>());
      idx.frames.push_back(std::move(fr));
    }
    return idx;
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig

void RunConfig::validate() const {
  if (sensor_width <= 0 || sensor_height <= 0) throw ConfigError("sensor size must be positive");
  if (!(span > 0.0)) throw ConfigError("span must be positive");
  try {
    dsi_shape().validate();
    agt().validate();
    network().validate();
    training().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (packet_size == 0) throw ConfigError("packet size must be positive");
  if (optimizer != "AdamW") throw ConfigError("only the AdamW optimizer is available");
  if (loss != "MAE") throw ConfigError("only the MAE loss is available");
  if (!(bad_pix_threshold > 0.0)) throw ConfigError("bad-pixel threshold must be positive");
}

VotingConfig RunConfig::voting() const {
  VotingConfig v;
  v.packet_size = packet_size;
  v.vote_mode = vote_mode;
  v.workers = 0;
  return v;
}

AgtConfig RunConfig::agt() const {
  AgtConfig a;
  a.window = window;
  a.c = agt_c;
  a.border = radii;
  return a;
}

NetworkConfig RunConfig::network() const {
  NetworkConfig n;
  n.num_planes = num_planes;
  n.radii = radii;
  n.conv_channels = conv_channels;
  n.hidden = hidden;
  n.head = head;
  n.mapping = mapping;
  return n;
}

TrainConfig RunConfig::training() const {
  TrainConfig t;
  t.batch_size = batch_size;
  t.epochs = epochs;
  t.seed = seed;
  t.optimizer.lr = lr;
  t.optimizer.weight_decay = weight_decay;
  t.ensemble = ensemble;
  t.split = split;
  t.workers = 0;
  return t;
}

json RunConfig::to_json() const {
  json j;
  j["preset"] = preset;
  j["sensor_width"] = sensor_width;
  j["sensor_height"] = sensor_height;
  j["span"] = span;
  j["window_align"] = to_string(window_align);
  j["z_min"] = z_min;
  j["z_max"] = z_max;
  j["num_planes"] = num_planes;
  j["vote_mode"] = derd::to_string(vote_mode);
  j["packet_size"] = packet_size;
  j["fusion"] = derd::to_string(fusion);
  j["stereo"] = stereo;
  j["r_w"] = radii.r_w;
  j["r_h"] = radii.r_h;
  j["window"] = window;
  j["agt_c"] = agt_c;
  j["head"] = derd::to_string(head);
  j["mapping"] = derd::to_string(mapping);
  j["conv_channels"] = conv_channels;
  j["hidden"] = network().hidden_size();
  j["batch_size"] = batch_size;
  j["optimizer"] = optimizer;
  j["lr"] = lr;
  j["weight_decay"] = weight_decay;
  j["loss"] = loss;
  j["epochs"] = epochs;
  j["ensemble"] = ensemble;
  j["split"] = to_string(split);
  j["seed"] = seed;
  j["bad_pix_threshold"] = bad_pix_threshold;
  j["morph_filter"] = morph_filter;
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  return translate_json([&] {
    RunConfig c = j.contains("preset") ? derd::preset(j.at("preset").get<std::string>()) : RunConfig{};
    c.sensor_width = j.value("sensor_width", c.sensor_width);
    c.sensor_height = j.value("sensor_height", c.sensor_height);
    c.span = j.value("span", c.span);
    if (j.contains("window_align")) c.window_align = parse_window_align(j.at("window_align"));
    c.z_min = j.value("z_min", c.z_min);
    c.z_max = j.value("z_max", c.z_max);
    c.num_planes = j.value("num_planes", c.num_planes);
    if (j.contains("vote_mode")) c.vote_mode = parse_vote_mode(j.at("vote_mode"));
    c.packet_size = j.value("packet_size", c.packet_size);
    if (j.contains("fusion")) c.fusion = parse_fusion_method(j.at("fusion"));
    c.stereo = j.value("stereo", c.stereo);
    c.radii.r_w = j.value("r_w", c.radii.r_w);
    c.radii.r_h = j.value("r_h", c.radii.r_h);
    c.window = j.value("window", c.window);
    c.agt_c = j.value("agt_c", c.agt_c);
    if (j.contains("head")) c.head = parse_head(j.at("head"));
    if (j.contains("mapping")) c.mapping = parse_depth_mapping(j.at("mapping"));
    c.conv_channels = j.value("conv_channels", c.conv_channels);
    c.hidden = j.value("hidden", c.hidden);
    if (c.hidden == c.network().gru_input()) c.hidden = 0;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.optimizer = j.value("optimizer", c.optimizer);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.loss = j.value("loss", c.loss);
    c.epochs = j.value("epochs", c.epochs);
    c.ensemble = j.value("ensemble", c.ensemble);
    if (j.contains("split")) c.split = parse_split(j.at("split"));
    c.seed = j.value("seed", c.seed);
    c.bad_pix_threshold = j.value("bad_pix_threshold", c.bad_pix_threshold);
    c.morph_filter = j.value("morph_filter", c.morph_filter);
    return c;
  });
}

RunConfig preset(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "mvsec-indoor") {
    return c;
  }
  if (name == "dsec-zurich04a") {
    c.sensor_width = 640;
    c.sensor_height = 480;
    c.span = 0.2;
    c.z_min = 4.0;
    c.z_max = 50.0;
    c.agt_c = -2.0;
    return c;
  }
  if (name == "desk") {
    c.sensor_width = 64;
    c.sensor_height = 64;
    c.span = 0.4;
    c.z_min = 1.0;
    c.z_max = 6.5;
    c.num_planes = 20;
    c.agt_c = -4.0;
    c.batch_size = 32;
    c.packet_size = 16;
    return c;
  }
  throw ConfigError("unknown preset: " + name);
}

std::vector<std::string> preset_names() { return {"mvsec-indoor", "dsec-zurich04a", "desk"}; }

std::pair<double, double> event_window(double t_ref, double span, WindowAlign align, double t_first,
                                       double t_last) {
  double b = align == WindowAlign::centered ? t_ref - 0.5 * span : t_ref - span;
  double e = align == WindowAlign::centered ? t_ref + 0.5 * span : t_ref;
  b = std::max(b, t_first);
  e = std::min(e, t_last);
  if (!(b <= e)) throw DataError("event window lies outside the pose trajectory");
  return {b, e};
}

json run_metadata(const std::string& command, const RunConfig& cfg, const json& extra) {
  json j;
  j["command"] = command;
  j["config"] = cfg.to_json();
  j["formats"] = {{"manifest", kManifestVersion},
                  {"index", kIndexVersion},
                  {"model", kModelFormatVersion}};
  j["decisions"] = {{"vote_mode", derd::to_string(cfg.vote_mode)},
                    {"denormalization", derd::to_string(cfg.mapping)},
                    {"fusion", derd::to_string(cfg.fusion)},
                    {"window_align", to_string(cfg.window_align)},
                    {"ensemble_split", to_string(cfg.split)},
                    {"gt_out_of_range", "clamp"},
                    {"multi_pixel_overlap", "mean"},
                    {"member_seeds", json::array({cfg.seed + 1, cfg.seed + 2})}};
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  return j;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// synth

fs::path cmd_synth(const SynthOptions& opts, const RunConfig& cfg) {
  cfg.validate();
  SceneSpec scene;
  if (opts.scene.empty()) {
    scene = random_desk_scene(opts.seed, opts.stereo_baseline, opts.noise);
    scene.gt_rate = opts.gt_rate;
  } else {
    scene = read_scene_json(opts.scene);
  }
  const SyntheticSequence seq = generate(opts.seed, scene);
  const fs::path& dir = opts.out_dir;
  fs::create_directories(dir / "gt");
  write_scene_json(dir / "scene.json", scene);
  write_calibration(dir / "calib.json", seq.calib);
  write_events(dir / "events_left.bin", seq.events_left);
  if (seq.calib.stereo) write_events(dir / "events_right.bin", seq.events_right);
  write_trajectory_csv(dir / "poses_left.csv", seq.traj_left);

  json m;
  m["version"] = kManifestVersion;
  m["sequence_id"] = opts.sequence_id;
  m["calibration"] = "calib.json";
  m["poses"] = "poses_left.csv";
  m["events_left"] = "events_left.bin";
  m["events_right"] = seq.calib.stereo ? json("events_right.bin") : json(nullptr);
  m["frames"] = json::array();
  for (std::size_t k = 0; k < seq.gt.size(); ++k) {
    const std::string name = frame_name(static_cast<int>(k));
    write_pfm(dir / "gt" / ("left_" + name + ".pfm"), seq.gt[k].left);
    json f{{"id", k}, {"t", seq.gt[k].t}, {"gt", "gt/left_" + name + ".pfm"}};
    if (seq.calib.stereo) {
      write_pfm(dir / "gt" / ("right_" + name + ".pfm"), seq.gt[k].right);
      f["gt_right"] = "gt/right_" + name + ".pfm";
    }
    m["frames"].push_back(f);
  }
  const fs::path manifest = dir / "manifest.json";
  write_json(manifest, m);
  write_json(dir / "run_meta.json",
             run_metadata("synth", cfg,
                          {{"seed", opts.seed},
                           {"sequence_id", opts.sequence_id},
                           {"events_left", seq.events_left.size()},
                           {"events_right", seq.events_right.size()}}));
  return manifest;
}

// ---------------------------------------------------------------------------
// build-dsi

namespace {

struct ManifestData {
  fs::path dir;
  int sequence_id = 0;
  StereoCalibration calib;
  Trajectory traj_left;
  fs::path events_left;
  fs::path events_right;
  std::vector<json> frames;
};

ManifestData read_manifest(const fs::path& path) {
  const json m = read_json(path);
  ManifestData d;
  d.dir = path.parent_path();
  translate_json([&] {
    if (m.at("version").get<int>() != kManifestVersion) throw DataError("unsupported manifest version");
    d.sequence_id = m.value("sequence_id", 0);
    d.calib = read_calibration(resolve(d.dir, m.at("calibration").get<std::string>()));
    d.traj_left = read_trajectory_csv(resolve(d.dir, m.at("poses").get<std::string>()));
    d.events_left = resolve(d.dir, m.at("events_left").get<std::string>());
    if (m.contains("events_right") && !m.at("events_right").is_null())
      d.events_right = resolve(d.dir, m.at("events_right").get<std::string>());
    for (const auto& f : m.at("frames")) d.frames.push_back(f);
    return 0;
  });
  if (d.traj_left.empty()) throw DataError("manifest trajectory is empty");
  return d;
}

DsiGrid build_one(std::span<const Event> events, const Trajectory& traj, const CameraIntrinsics& event_K,
                  const Pose& ref_pose, const CameraIntrinsics& ref_K, double t_ref,
                  const RunConfig& cfg) {
  const auto [b, e] = event_window(t_ref, cfg.span, cfg.window_align, traj.t_begin(), traj.t_end());
  const auto window = events_in_window(events, b, e);
  return build_dsi(window, traj, event_K, ref_pose, ref_K, cfg.dsi_shape(), cfg.voting());
}

}  // namespace

DsiGrid build_frame_dsi(const fs::path& events, const fs::path& poses, const fs::path& calib_path,
                        bool right_camera, double t_ref, const RunConfig& cfg) {
  cfg.validate();
  const auto calib = read_calibration(calib_path);
  const Trajectory traj_left = read_trajectory_csv(poses);
  if (traj_left.empty()) throw DataError("empty trajectory");
  const auto ev = read_events(events);
  const Pose ref = interpolate_pose(traj_left, t_ref);
  if (!right_camera) return build_one(ev, traj_left, calib.left, ref, calib.left, t_ref, cfg);
  const Trajectory traj_right = traj_left.right_multiplied(calib.left_to_right);
  return build_one(ev, traj_right, calib.right, ref, calib.left, t_ref, cfg);
}

fs::path cmd_build_dsi(const BuildDsiOptions& opts, const RunConfig& cfg) {
  cfg.validate();
  const ManifestData md = read_manifest(opts.manifest);
  const bool stereo = cfg.stereo && md.calib.stereo && !md.events_right.empty();
  if (cfg.stereo && !stereo) std::cerr << "warning: manifest has no right camera; building monocular DSIs\n";
  const auto ev_left = read_events(md.events_left);
  std::vector<Event> ev_right;
  Trajectory traj_right;
  if (stereo) {
    ev_right = read_events(md.events_right);
    traj_right = md.traj_left.right_multiplied(md.calib.left_to_right);
  }
  const fs::path& out = opts.out_dir;
  fs::create_directories(out / "dsi");

  json idx;
  idx["version"] = kIndexVersion;
  idx["sequence_id"] = md.sequence_id;
  idx["stereo"] = stereo;
  idx["frames"] = json::array();
  translate_json([&] {
    for (const auto& f : md.frames) {
      const int id = f.at("id").get<int>();
      const double t = f.at("t").get<double>();
      const std::string name = frame_name(id);
      const Pose ref = interpolate_pose(md.traj_left, t);
      const DsiGrid left = build_one(ev_left, md.traj_left, md.calib.left, ref, md.calib.left, t, cfg);
      json jf{{"id", id}, {"t", t}};
      const fs::path p_left = out / "dsi" / ("left_" + name + ".dsi");
      write_dsi(p_left, left);
      jf["dsi_left"] = relative_to(p_left, out);
      jf["dsi"] = jf["dsi_left"];
      if (stereo) {
        const DsiGrid right = build_one(ev_right, traj_right, md.calib.right, ref, md.calib.left, t, cfg);
        const fs::path p_right = out / "dsi" / ("right_" + name + ".dsi");
        const fs::path p_fused = out / "dsi" / ("fused_" + name + ".dsi");
        write_dsi(p_right, right);
        write_dsi(p_fused, fuse(left, right, cfg.fusion));
        jf["dsi_right"] = relative_to(p_right, out);
        jf["dsi_fused"] = relative_to(p_fused, out);
        jf["dsi"] = jf["dsi_fused"];
      }
      if (f.contains("gt") && !f.at("gt").is_null())
        jf["gt"] = relative_to(resolve(md.dir, f.at("gt").get<std::string>()), out);
      idx["frames"].push_back(jf);
    }
    return 0;
  });
  const fs::path index_path = out / "index.json";
  write_json(index_path, idx);
  write_json(out / "run_meta.json",
             run_metadata("build-dsi", cfg, {{"manifest", fs::absolute(opts.manifest).string()},
                                             {"stereo", stereo}}));
  return index_path;
}

void cmd_fuse(const fs::path& a, const fs::path& b, const fs::path& out, FusionMethod method) {
  write_dsi(out, fuse(read_dsi(a), read_dsi(b), method));
}

std::vector<PixelCoord> cmd_select(const fs::path& dsi, const fs::path& out_csv, const RunConfig& cfg) {
  cfg.validate();
  const auto pixels = select_pixels(read_dsi(dsi), cfg.agt());
  write_pixels_csv(out_csv, pixels);
  return pixels;
}

// ---------------------------------------------------------------------------
// train

TrainSummary cmd_train(const TrainOptions& opts, const RunConfig& cfg) {
  cfg.validate();
  if (opts.indices.empty()) throw ConfigError("train needs at least one DSI index");
  const NetworkConfig net = cfg.network();
  DatasetStats stats;
  std::vector<Sample> samples;
  std::size_t frames = 0;
  for (const auto& ip : opts.indices) {
    const DsiIndex idx = read_index(ip);
    for (const auto& f : idx.frames) {
      if (f.gt.empty()) continue;
      TrainingFrame tf{read_dsi(f.dsi), read_pfm(f.gt), idx.sequence_id, f.id};
      if (tf.dsi.num_planes() != cfg.num_planes)
        throw ConfigError("DSI plane count differs from the configured num_planes");
      auto part = assemble_frame(tf, cfg.agt(), cfg.radii, cfg.head, cfg.mapping, stats);
      std::move(part.begin(), part.end(), std::back_inserter(samples));
      ++frames;
    }
  }
  if (samples.empty()) throw DataError("no training samples: no selected pixel has ground truth");
  if (stats.clamped_targets > 0)
    std::cerr << "note: " << stats.clamped_targets << " ground-truth depths outside [z_min, z_max] clamped\n";

  const TrainConfig tc = cfg.training();
  std::vector<ModelParams> members;
  std::vector<TrainResult> history;
  if (cfg.ensemble) {
    EnsembleModel em = train_ensemble(samples, net, tc);
    members = std::move(em.members);
    history = std::move(em.history);
  } else {
    TrainResult r = train(samples, net, tc);
    members.push_back(r.params);
    history.push_back(std::move(r));
  }

  fs::create_directories(opts.out_dir);
  TrainSummary sum;
  sum.samples = samples.size();
  json model_names = json::array();
  for (std::size_t k = 0; k < members.size(); ++k) {
    const fs::path mp = opts.out_dir / ("member_" + std::to_string(k) + ".derd");
    save_model(mp, members[k], net);
    sum.models.push_back(mp);
    model_names.push_back(mp.filename().string());
    const fs::path lp =
        opts.out_dir / (members.size() == 1 ? std::string("train_log.csv")
                                            : "train_log_" + std::to_string(k) + ".csv");
    std::ofstream log(lp);
    if (!log) throw DataError("cannot write " + lp.string());
    log << "epoch,step,loss\n";
    log.precision(10);
    for (const auto& s : history[k].steps) log << s.epoch << ',' << s.step << ',' << s.loss << '\n';
    sum.epoch_loss.push_back(history[k].epoch_loss);
  }
  json indices = json::array();
  for (const auto& ip : opts.indices) indices.push_back(fs::absolute(ip).string());
  write_json(opts.out_dir / "run_meta.json",
             run_metadata("train", cfg,
                          {{"indices", indices},
                           {"frames", frames},
                           {"samples", stats.samples},
                           {"selected_pixels", stats.selected_pixels},
                           {"clamped_targets", stats.clamped_targets},
                           {"parameters", param_count(net)},
                           {"models", model_names},
                           {"epoch_loss", sum.epoch_loss}}));
  return sum;
}

// ---------------------------------------------------------------------------
// infer

DepthMap infer_depth(const DsiGrid& dsi, std::span<const PixelCoord> pixels, InferMethod method,
                     const NetworkConfig& net_cfg, std::span<const ModelParams> members,
                     bool morph_filter) {
  DepthMap dm;
  if (method == InferMethod::argmax) {
    dm = argmax_depth(dsi, pixels);
  } else {
    if (members.empty()) throw ConfigError("network inference needs at least one model");
    std::vector<SubDsi> batch;
    batch.reserve(pixels.size());
    for (const auto& p : pixels) batch.push_back(extract_subdsi(dsi, p, net_cfg.radii));
    const auto depth = predict(net_cfg, members, batch, dsi.z_min(), dsi.z_max());
    dm = DepthMap(dsi.width(), dsi.height());
    if (net_cfg.head == HeadType::single) {
      for (std::size_t i = 0; i < pixels.size(); ++i) dm.set(pixels[i].x, pixels[i].y, depth[i][0]);
    } else {
      std::vector<double> sum(dm.depth.size(), 0.0);
      std::vector<int> count(dm.depth.size(), 0);
      for (std::size_t i = 0; i < pixels.size(); ++i)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int x = pixels[i].x + dx;
            const int y = pixels[i].y + dy;
            if (x < 0 || y < 0 || x >= dm.width || y >= dm.height) continue;
            sum[dm.index(x, y)] += depth[i][(dy + 1) * 3 + (dx + 1)];
            ++count[dm.index(x, y)];
          }
      for (int y = 0; y < dm.height; ++y)
        for (int x = 0; x < dm.width; ++x)
          if (const int c = count[dm.index(x, y)]; c > 0) dm.set(x, y, sum[dm.index(x, y)] / c);
    }
  }
  return morph_filter ? morph_dilate(dm) : dm;
}

fs::path cmd_infer(const InferOptions& opts, const RunConfig& cfg) {
  cfg.validate();
  NetworkConfig net = cfg.network();
  std::vector<ModelParams> members;
  json model_paths = json::array();
  if (opts.method == InferMethod::network) {
    if (opts.models.empty()) throw ConfigError("network inference needs --model");
    for (std::size_t k = 0; k < opts.models.size(); ++k) {
      Model m = load_model(opts.models[k]);
      if (k == 0) {
        net = m.config;
      } else if (!(m.config == net)) {
        throw ConfigError("ensemble members have different network configurations");
      }
      members.push_back(std::move(m.params));
      model_paths.push_back(fs::absolute(opts.models[k]).string());
    }
  }
  AgtConfig agt = cfg.agt();
  agt.border = net.radii;

  const DsiIndex idx = read_index(opts.index);
  fs::create_directories(opts.out_dir / "depth");
  fs::create_directories(opts.out_dir / "pixels");
  json out;
  out["version"] = kIndexVersion;
  out["sequence_id"] = idx.sequence_id;
  out["method"] = opts.method == InferMethod::network ? "network" : "argmax";
  out["frames"] = json::array();
  for (const auto& f : idx.frames) {
    const DsiGrid dsi = read_dsi(f.dsi);
    const auto pixels = select_pixels(dsi, agt);
    const DepthMap dm = infer_depth(dsi, pixels, opts.method, net, members, cfg.morph_filter);
    const std::string name = frame_name(f.id);
    const fs::path dp = opts.out_dir / "depth" / (name + ".pfm");
    const fs::path pp = opts.out_dir / "pixels" / (name + ".csv");
    write_pfm(dp, dm);
    write_pixels_csv(pp, pixels);
    json jf{{"id", f.id},
            {"t", f.t},
            {"dsi", relative_to(f.dsi, opts.out_dir)},
            {"depth", relative_to(dp, opts.out_dir)},
            {"pixels", relative_to(pp, opts.out_dir)},
            {"selected", pixels.size()},
            {"valid", dm.valid_count()}};
    if (!f.gt.empty()) jf["gt"] = relative_to(f.gt, opts.out_dir);
    out["frames"].push_back(jf);
  }
  const fs::path path = opts.out_dir / "infer.json";
  write_json(path, out);
  write_json(opts.out_dir / "run_meta.json",
             run_metadata("infer", cfg, {{"index", fs::absolute(opts.index).string()},
                                         {"method", out["method"]},
                                         {"models", model_paths},
                                         {"network", {{"head", derd::to_string(net.head)},
                                                      {"mapping", derd::to_string(net.mapping)},
                                                      {"hidden", net.hidden_size()}}}}));
  return path;
}

// ---------------------------------------------------------------------------
// eval

EvalResult cmd_eval(const fs::path& infer_index, const fs::path& out_prefix, const RunConfig& cfg,
                    const std::string& label) {
  const DsiIndex idx = read_index(infer_index, "depth");
  MetricsOptions mo;
  mo.bad_pix_threshold = cfg.bad_pix_threshold;
  mo.retain_errors = true;
  EvalResult res;
  std::vector<std::string> labels;
  std::size_t uncovered_points = 0;
  for (const auto& f : idx.frames) {
    if (f.gt.empty()) continue;
    const DepthMap est = read_pfm(f.dsi);
    const DepthMap gt = read_pfm(f.gt);
    try {
      res.frames.push_back(compute_metrics(est, gt, mo));
      labels.push_back(label + "/" + frame_name(f.id));
    } catch (const std::invalid_argument&) {
      uncovered_points += est.valid_count();
    }
  }
  if (res.frames.empty()) throw DataError("no frame has estimated pixels with ground truth");
  res.total = aggregate(res.frames);
  res.total.n_points += uncovered_points;

  if (out_prefix.has_parent_path()) fs::create_directories(out_prefix.parent_path());
  const auto with_ext = [&](const char* ext) {
    fs::path p = out_prefix;
    p += ext;
    return p;
  };
  {
    std::ofstream csv(with_ext(".csv"));
    if (!csv) throw DataError("cannot write " + with_ext(".csv").string());
    csv << metrics_csv_header() << '\n';
    for (std::size_t i = 0; i < res.frames.size(); ++i)
      csv << metrics_csv_row(labels[i], res.frames[i]) << '\n';
    csv << metrics_csv_row(label, res.total) << '\n';
  }
  {
    std::ofstream js(with_ext(".json"));
    js << metrics_json(res.total) << '\n';
  }
  {
    std::ofstream tbl(with_ext(".txt"));
    const std::pair<std::string, MetricsReport> row{label, res.total};
    tbl << format_metrics_table(std::span(&row, 1));
  }
  return res;
}

// ---------------------------------------------------------------------------
// bench

BenchResult cmd_bench(const fs::path& manifest, const std::vector<fs::path>& models, const RunConfig& cfg,
                      int repeats) {
  cfg.validate();
  if (repeats < 1) throw ConfigError("repeats must be positive");
  const ManifestData md = read_manifest(manifest);
  const auto events = read_events(md.events_left);
  NetworkConfig net = cfg.network();
  std::vector<ModelParams> members;
  for (const auto& p : models) {
    Model m = load_model(p);
    net = m.config;
    members.push_back(std::move(m.params));
  }
  if (members.empty()) members.push_back(ModelParams::init(net, cfg.seed));

  using clock = std::chrono::steady_clock;
  BenchResult r;
  double build_s = 0.0;
  double infer_s = 0.0;
  std::vector<DsiGrid> dsis;
  translate_json([&] {
    for (const auto& f : md.frames) {
      const double t = f.at("t").get<double>();
      const Pose ref = interpolate_pose(md.traj_left, t);
      const auto [b, e] = event_window(t, cfg.span, cfg.window_align, md.traj_left.t_begin(),
                                       md.traj_left.t_end());
      const auto win = events_in_window(events, b, e);
      DsiGrid g;
      const auto t0 = clock::now();
      for (int k = 0; k < repeats; ++k)
        g = build_dsi(win, md.traj_left, md.calib.left, ref, md.calib.left, cfg.dsi_shape(), cfg.voting());
      build_s += std::chrono::duration<double>(clock::now() - t0).count();
      r.events += win.size() * static_cast<std::size_t>(repeats);
      dsis.push_back(std::move(g));
    }
    return 0;
  });
  AgtConfig agt = cfg.agt();
  agt.border = net.radii;
  for (const auto& g : dsis) {
    const auto pixels = select_pixels(g, agt);
    std::vector<SubDsi> batch;
    for (const auto& p : pixels) batch.push_back(extract_subdsi(g, p, net.radii));
    if (batch.empty()) continue;
    const auto t0 = clock::now();
    for (int k = 0; k < repeats; ++k) (void)predict(net, members, batch, g.z_min(), g.z_max());
    infer_s += std::chrono::duration<double>(clock::now() - t0).count();
    r.subdsis += batch.size() * static_cast<std::size_t>(repeats);
  }
  if (build_s > 0.0) r.events_per_second = static_cast<double>(r.events) / build_s;
  if (infer_s > 0.0 && r.subdsis > 0) {
    r.subdsis_per_second = static_cast<double>(r.subdsis) / infer_s;
    r.ms_per_subdsi = 1e3 * infer_s / static_cast<double>(r.subdsis);
  }
  return r;
}

void cmd_render(const fs::path& depth_pfm, const fs::path& out_ppm, double z_min, double z_max) {
  if (!(z_min > 0.0) || !(z_max > z_min)) throw ConfigError("render needs 0 < z_min < z_max");
  write_depth_ppm(out_ppm, read_pfm(depth_pfm), z_min, z_max);
}

}  // namespace derd
