// SPDX-License-Identifier: Apache-2.0
// derd: command-line front end for the depth-estimation pipeline.
#include "derd/error.hpp"
#include "derd/pipeline.hpp"

#include <CLI11.hpp>

#include <iomanip>
#include <iostream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace {

struct Overrides {
  std::string preset = "mvsec-indoor";
  std::string config_file;
  std::optional<double> span, z_min, z_max, agt_c, lr, weight_decay, bad_pix;
  std::optional<int> planes, r_w, r_h, window, channels, hidden, batch, epochs;
  std::optional<std::size_t> packet_size;
  std::optional<std::string> vote_mode, fusion, head, mapping, split, window_align;
  std::optional<std::uint64_t> seed;
  std::optional<bool> stereo, ensemble, morph;
};

void add_config_flags(CLI::App* app, Overrides& o) {
  app->add_option("--preset", o.preset, "mvsec-indoor | dsec-zurich04a | desk");
  app->add_option("--config", o.config_file, "RunConfig JSON (applied after the preset)");
  app->add_option("--span", o.span, "event window length [s]");
  app->add_option("--window-align", o.window_align, "centered | trailing");
  app->add_option("--z-min", o.z_min);
  app->add_option("--z-max", o.z_max);
  app->add_option("--planes", o.planes, "number of depth planes D");
  app->add_option("--vote-mode", o.vote_mode, "nearest | bilinear");
  app->add_option("--packet-size", o.packet_size);
  app->add_option("--fusion", o.fusion, "harmonic | arithmetic | geometric | min");
  app->add_option("--stereo", o.stereo, "use fused stereo DSIs (true/false)");
  app->add_option("--r-w", o.r_w, "Sub-DSI half width");
  app->add_option("--r-h", o.r_h, "Sub-DSI half height");
  app->add_option("--window", o.window, "AGT window size");
  app->add_option("--agt-c", o.agt_c, "AGT constant C");
  app->add_option("--head", o.head, "single | multi3x3");
  app->add_option("--mapping", o.mapping, "linear | inverse");
  app->add_option("--conv-channels", o.channels);
  app->add_option("--hidden", o.hidden);
  app->add_option("--batch-size", o.batch);
  app->add_option("--lr", o.lr);
  app->add_option("--weight-decay", o.weight_decay);
  app->add_option("--epochs", o.epochs);
  app->add_option("--ensemble", o.ensemble, "true/false");
  app->add_option("--split", o.split, "sample | frame");
  app->add_option("--seed", o.seed);
  app->add_option("--bad-pix-threshold", o.bad_pix);
  app->add_option("--morph-filter", o.morph, "true/false");
}

derd::RunConfig make_config(const Overrides& o) {
  derd::RunConfig c = derd::preset(o.preset);
  if (!o.config_file.empty()) {
    auto j = derd::read_json(o.config_file);
    if (!j.contains("preset")) j["preset"] = o.preset;
    c = derd::RunConfig::from_json(j);
  }
  try {
    if (o.span) c.span = *o.span;
    if (o.window_align)
      c.window_align = derd::RunConfig::from_json({{"window_align", *o.window_align}}).window_align;
    if (o.z_min) c.z_min = *o.z_min;
    if (o.z_max) c.z_max = *o.z_max;
    if (o.planes) c.num_planes = *o.planes;
    if (o.vote_mode) c.vote_mode = derd::parse_vote_mode(*o.vote_mode);
    if (o.packet_size) c.packet_size = *o.packet_size;
    if (o.fusion) c.fusion = derd::parse_fusion_method(*o.fusion);
    if (o.stereo) c.stereo = *o.stereo;
    if (o.r_w) c.radii.r_w = *o.r_w;
    if (o.r_h) c.radii.r_h = *o.r_h;
    if (o.window) c.window = *o.window;
    if (o.agt_c) c.agt_c = *o.agt_c;
    if (o.head) c.head = derd::parse_head(*o.head);
    if (o.mapping) c.mapping = derd::parse_depth_mapping(*o.mapping);
    if (o.channels) c.conv_channels = *o.channels;
    if (o.hidden) c.hidden = *o.hidden;
    if (o.batch) c.batch_size = *o.batch;
    if (o.lr) c.lr = *o.lr;
    if (o.weight_decay) c.weight_decay = *o.weight_decay;
    if (o.epochs) c.epochs = *o.epochs;
    if (o.ensemble) c.ensemble = *o.ensemble;
    if (o.split) c.split = derd::RunConfig::from_json({{"split", *o.split}}).split;
    if (o.seed) c.seed = *o.seed;
    if (o.bad_pix) c.bad_pix_threshold = *o.bad_pix;
    if (o.morph) c.morph_filter = *o.morph;
  } catch (const std::invalid_argument& e) {
    throw derd::ConfigError(e.what());
  }
  c.validate();
  return c;
}

int run(int argc, char** argv) {
  CLI::App app{"Event-based multi-view stereo depth estimation"};
  app.require_subcommand(1);
  Overrides o;

  auto* synth = app.add_subcommand("synth", "generate a synthetic event sequence");
  derd::SynthOptions so;
  synth->add_option("--out", so.out_dir)->required();
  synth->add_option("--scene", so.scene, "scene JSON; random desk scene when omitted");
  synth->add_option("--scene-seed", so.seed, "seed of the scene and event noise");
  synth->add_option("--sequence-id", so.sequence_id);
  synth->add_option("--baseline", so.stereo_baseline, "stereo baseline [m], 0 = monocular");
  synth->add_option("--jitter", so.noise.pixel_jitter_std, "event pixel jitter std [px]");
  synth->add_option("--spurious-rate", so.noise.spurious_rate, "noise events per second");
  synth->add_option("--gt-rate", so.gt_rate, "ground-truth frames per second (random scenes)");
  add_config_flags(synth, o);

  auto* build = app.add_subcommand("build-dsi", "build DSIs for every frame of a manifest");
  derd::BuildDsiOptions bo;
  build->add_option("--manifest", bo.manifest)->required();
  build->add_option("--out", bo.out_dir)->required();
  add_config_flags(build, o);

  auto* fuse = app.add_subcommand("fuse", "fuse two DSIs voxel-wise");
  fs::path fa, fb, fout;
  std::string fmethod = "harmonic";
  fuse->add_option("a", fa)->required();
  fuse->add_option("b", fb)->required();
  fuse->add_option("--out", fout)->required();
  fuse->add_option("--method", fmethod, "harmonic | arithmetic | geometric | min");

  auto* select = app.add_subcommand("select", "adaptive Gaussian threshold pixel selection");
  fs::path sdsi, sout;
  select->add_option("dsi", sdsi)->required();
  select->add_option("--out", sout)->required();
  add_config_flags(select, o);

  auto* train = app.add_subcommand("train", "train the network on DSI indices with ground truth");
  derd::TrainOptions to;
  train->add_option("--index", to.indices, "DSI index JSON (repeatable)")->required();
  train->add_option("--out", to.out_dir)->required();
  add_config_flags(train, o);

  auto* infer = app.add_subcommand("infer", "estimate depth maps");
  derd::InferOptions io;
  std::string imethod = "network";
  infer->add_option("--index", io.index)->required();
  infer->add_option("--out", io.out_dir)->required();
  infer->add_option("--method", imethod, "network | argmax");
  infer->add_option("--model", io.models, "model file (repeat for ensembles)");
  add_config_flags(infer, o);

  auto* eval = app.add_subcommand("eval", "compare estimated depth maps with ground truth");
  fs::path eindex, eout;
  std::string elabel = "estimate";
  eval->add_option("--infer", eindex, "inference index JSON")->required();
  eval->add_option("--out", eout, "output prefix for .csv/.json/.txt")->required();
  eval->add_option("--label", elabel);
  add_config_flags(eval, o);

  auto* bench = app.add_subcommand("bench", "time DSI building and inference on the CPU");
  fs::path bmanifest;
  std::vector<fs::path> bmodels;
  int brepeats = 3;
  bench->add_option("--manifest", bmanifest)->required();
  bench->add_option("--model", bmodels);
  bench->add_option("--repeats", brepeats);
  add_config_flags(bench, o);

  auto* render = app.add_subcommand("render", "pseudo-colour a depth map");
  fs::path rin, rout;
  double rzmin = 1.0, rzmax = 6.5;
  render->add_option("depth", rin)->required();
  render->add_option("--out", rout)->required();
  render->add_option("--z-min", rzmin);
  render->add_option("--z-max", rzmax);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (synth->parsed()) {
    const auto m = derd::cmd_synth(so, make_config(o));
    std::cout << m.string() << '\n';
  } else if (build->parsed()) {
    std::cout << derd::cmd_build_dsi(bo, make_config(o)).string() << '\n';
  } else if (fuse->parsed()) {
    derd::cmd_fuse(fa, fb, fout, derd::parse_fusion_method(fmethod));
  } else if (select->parsed()) {
    const auto px = derd::cmd_select(sdsi, sout, make_config(o));
    std::cout << "selected " << px.size() << " pixels\n";
  } else if (train->parsed()) {
    const auto s = derd::cmd_train(to, make_config(o));
    std::cout << "trained on " << s.samples << " samples\n";
    for (std::size_t k = 0; k < s.models.size(); ++k) {
      std::cout << s.models[k].string() << "  epoch loss:";
      for (double l : s.epoch_loss[k]) std::cout << ' ' << l;
      std::cout << '\n';
    }
  } else if (infer->parsed()) {
    if (imethod == "network") io.method = derd::InferMethod::network;
    else if (imethod == "argmax") io.method = derd::InferMethod::argmax;
    else throw derd::ConfigError("unknown inference method: " + imethod);
    const auto cfg = make_config(o);
    const auto path = derd::cmd_infer(io, cfg);
    const auto j = derd::read_json(path);
    for (const auto& f : j.at("frames"))
      std::cout << "frame " << f.at("id") << ": " << f.at("selected") << " selected, "
                << f.at("valid") << " valid\n";
    std::cout << path.string() << '\n';
  } else if (eval->parsed()) {
    const auto r = derd::cmd_eval(eindex, eout, make_config(o), elabel);
    const std::pair<std::string, derd::MetricsReport> row{elabel, r.total};
    std::cout << derd::format_metrics_table(std::span(&row, 1));
  } else if (bench->parsed()) {
    const auto r = derd::cmd_bench(bmanifest, bmodels, make_config(o), brepeats);
    std::cout << std::fixed << std::setprecision(1) << "DSI build: " << r.events_per_second
              << " events/s (" << r.events << " events)\n"
              << "inference: " << r.subdsis_per_second << " Sub-DSIs/s, " << std::setprecision(4)
              << r.ms_per_subdsi << " ms per Sub-DSI (" << r.subdsis << " Sub-DSIs)\n";
  } else if (render->parsed()) {
    derd::cmd_render(rin, rout, rzmin, rzmax);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const derd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const derd::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 4;
  } catch (const derd::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::out_of_range& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::domain_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
