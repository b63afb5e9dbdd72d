// SPDX-License-Identifier: Apache-2.0
#include "derd/error.hpp"
#include "derd/pipeline.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

using namespace derd;
namespace fs = std::filesystem;

namespace {

// One point moving 5 px per GT frame. Events carry the pixel entered at the
// boundary crossing, which puts the ray intersection half a pixel behind the
// true projection; placing the projection at +0.25 px keeps both in the same
// pixel.
fs::path synth_single_point(const fs::path& dir, bool stereo) {
  const double z = 1.92;
  SceneSpec s;
  s.edge_points = {{5.75 / 60.0 * z, -3.25 / 60.0 * z, z}};
  s.start = Pose::identity();
  s.end = Pose(Eigen::Vector3d(0.8, 0.0, 0.0), Eigen::Quaterniond::Identity());
  s.stereo_baseline = stereo ? 0.2 : 0.0;
  s.gt_rate = 5.0;
  write_scene_json(dir / "scene_in.json", s);
  SynthOptions o;
  o.out_dir = dir / "seq";
  o.scene = dir / "scene_in.json";
  return cmd_synth(o, preset("desk"));
}

int run_cli(const std::string& args) {
  const char* cli = std::getenv("DERD_CLI");
  REQUIRE(cli != nullptr);
  const int rc = std::system((std::string(cli) + " " + args + " >/dev/null 2>&1").c_str());
  REQUIRE(WIFEXITED(rc));
  return WEXITSTATUS(rc);
}

}  // namespace

TEST_CASE("presets carry the published settings") {
  const auto m = preset("mvsec-indoor");
  CHECK(m.sensor_width == 346);
  CHECK(m.sensor_height == 260);
  CHECK(m.span == 1.0);
  CHECK(m.z_min == 1.0);
  CHECK(m.z_max == 6.5);
  CHECK(m.num_planes == 100);
  CHECK(m.radii.frame_w() == 7);
  CHECK(m.radii.frame_h() == 7);
  CHECK(m.window == 9);
  CHECK(m.agt_c == -10.0);
  CHECK(m.batch_size == 64);
  CHECK(m.optimizer == "AdamW");
  CHECK(m.lr == 1e-3);
  CHECK(m.loss == "MAE");
  CHECK(m.epochs == 3);

  const auto d = preset("dsec-zurich04a");
  CHECK(d.sensor_width == 640);
  CHECK(d.sensor_height == 480);
  CHECK(d.span == 0.2);
  CHECK(d.z_min == 4.0);
  CHECK(d.z_max == 50.0);
  CHECK(d.num_planes == 100);
  CHECK(d.radii.frame_w() == 7);
  CHECK(d.window == 9);
  CHECK(d.agt_c == -2.0);
  CHECK(d.batch_size == 64);
  CHECK(d.lr == 1e-3);
  CHECK(d.epochs == 3);

  for (const auto& name : preset_names()) CHECK_NOTHROW(preset(name).validate());
  CHECK_THROWS_AS(preset("kitti"), ConfigError);
}

TEST_CASE("config validation and JSON round trip") {
  auto c = preset("desk");
  c.head = HeadType::multi3x3;
  c.seed = 77;
  c.window_align = WindowAlign::trailing;
  c.split = SplitMode::frame;
  c.lr = 3e-4;
  const auto d = RunConfig::from_json(c.to_json());
  CHECK(d.to_json() == c.to_json());
  CHECK(d.network() == c.network());

  auto bad = preset("desk");
  bad.window = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = preset("desk");
  bad.z_max = 0.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = preset("desk");
  bad.hidden = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = preset("desk");
  bad.optimizer = "SGD";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("event window") {
  CHECK(event_window(0.5, 0.4, WindowAlign::centered, 0.0, 1.0) == std::pair{0.3, 0.7});
  const auto tr = event_window(0.5, 0.4, WindowAlign::trailing, 0.0, 1.0);
  CHECK(tr.first == doctest::Approx(0.1));
  CHECK(tr.second == 0.5);
  CHECK(event_window(0.0, 0.4, WindowAlign::centered, 0.0, 1.0) == std::pair{0.0, 0.2});
  CHECK(event_window(1.0, 0.4, WindowAlign::centered, 0.0, 1.0) == std::pair{0.8, 1.0});
  CHECK_THROWS_AS(event_window(5.0, 0.4, WindowAlign::centered, 0.0, 1.0), DataError);
}

TEST_CASE("single point chain through argmax has no outliers") {
  for (bool stereo : {false, true}) {
    test::TempDir dir("chain");
    const auto manifest = synth_single_point(dir.path(), stereo);
    auto cfg = preset("desk");
    cfg.stereo = stereo;
    // A single point fires a few dozen events per second; one pose per event.
    cfg.packet_size = 1;
    const auto index = cmd_build_dsi({manifest, dir / "dsi"}, cfg);
    auto j = read_json(index);
    REQUIRE(j.at("frames").size() == 6);
    // The first and last frames see half a window of events; keep the interior.
    auto& frames = j.at("frames");
    frames.erase(frames.begin());
    frames.erase(frames.end() - 1);
    write_json(index, j);

    const auto first_dsi = dir / "dsi" / j.at("frames")[2].at("dsi").get<std::string>();
    const auto pixels = cmd_select(first_dsi, dir / "sel.csv", cfg);
    CHECK_FALSE(pixels.empty());
    CHECK(fs::file_size(dir / "sel.csv") > 0);

    InferOptions io;
    io.index = index;
    io.out_dir = dir / "arg";
    io.method = InferMethod::argmax;
    const auto infer = cmd_infer(io, cfg);
    const auto r = cmd_eval(infer, dir / "eval", cfg, "argmax");
    CHECK(r.total.n_overlap == 4);
    CHECK(r.total.bad_pix == 0.0);
    CHECK(fs::exists(dir / "eval.csv"));
    CHECK(fs::exists(dir / "eval.json"));
    CHECK(fs::exists(dir / "eval.txt"));
  }
}

TEST_CASE("train, infer and metadata") {
  test::TempDir dir("train");
  SynthOptions so;
  so.out_dir = dir / "seq";
  so.seed = 1;
  auto cfg = preset("mvsec-indoor");
  const auto manifest = cmd_synth(so, cfg);
  const auto index = cmd_build_dsi({manifest, dir / "dsi"}, cfg);
  const auto sum = cmd_train({{index}, dir / "model"}, cfg);
  REQUIRE(sum.models.size() == 2);
  CHECK(sum.samples > 0);

  const auto meta = read_json(dir / "model" / "run_meta.json");
  const auto& c = meta.at("config");
  CHECK(c.at("span") == 1.0);
  CHECK(c.at("z_min") == 1.0);
  CHECK(c.at("z_max") == 6.5);
  CHECK(c.at("num_planes") == 100);
  CHECK(c.at("r_w") == 3);
  CHECK(c.at("r_h") == 3);
  CHECK(c.at("window") == 9);
  CHECK(c.at("agt_c") == -10.0);
  CHECK(c.at("batch_size") == 64);
  CHECK(c.at("optimizer") == "AdamW");
  CHECK(c.at("lr") == 1e-3);
  CHECK(c.at("loss") == "MAE");
  CHECK(c.at("epochs") == 3);
  CHECK(c.at("sensor_width") == 346);
  CHECK(c.at("sensor_height") == 260);
  CHECK(meta.at("parameters") == 70913);
  CHECK(meta.at("decisions").at("member_seeds") == nlohmann::json::array({1, 2}));
  CHECK(meta.at("formats").contains("model"));

  InferOptions io;
  io.index = index;
  io.out_dir = dir / "net";
  io.models = sum.models;
  const auto inf = read_json(cmd_infer(io, cfg));
  CHECK_FALSE(inf.at("frames").empty());
  for (const auto& f : inf.at("frames")) {
    const auto dm = read_pfm(dir / "net" / f.at("depth").get<std::string>());
    for (std::size_t k = 0; k < dm.depth.size(); ++k)
      if (dm.valid[k]) {
        CHECK(dm.depth[k] >= cfg.z_min);
        CHECK(dm.depth[k] <= cfg.z_max);
      }
  }

  // Plane count mismatch between config and DSIs.
  auto other = cfg;
  other.num_planes = 50;
  CHECK_THROWS_AS(cmd_train({{index}, dir / "model2"}, other), ConfigError);
}

TEST_CASE("multi-pixel head covers at least the single-pixel pixels") {
  test::TempDir dir("multi");
  SynthOptions so;
  so.out_dir = dir / "seq";
  so.seed = 2;
  auto cfg = preset("desk");
  cfg.epochs = 1;
  const auto manifest = cmd_synth(so, cfg);
  const auto index = cmd_build_dsi({manifest, dir / "dsi"}, cfg);
  const auto single_models = cmd_train({{index}, dir / "m1"}, cfg).models;
  auto mcfg = cfg;
  mcfg.head = HeadType::multi3x3;
  const auto multi_models = cmd_train({{index}, dir / "m9"}, mcfg).models;

  InferOptions a{index, dir / "i1", InferMethod::network, single_models};
  InferOptions b{index, dir / "i9", InferMethod::network, multi_models};
  const auto ja = read_json(cmd_infer(a, cfg));
  const auto jb = read_json(cmd_infer(b, mcfg));
  REQUIRE(ja.at("frames").size() == jb.at("frames").size());
  for (std::size_t k = 0; k < ja.at("frames").size(); ++k) {
    const auto& fa = ja.at("frames")[k];
    const auto& fb = jb.at("frames")[k];
    CHECK(fb.at("selected") == fa.at("selected"));
    CHECK(fb.at("valid").get<int>() >= fa.at("valid").get<int>());
  }
}

TEST_CASE("render and fuse commands") {
  test::TempDir dir("render");
  DepthMap dm(4, 3);
  dm.set(1, 1, 2.0);
  dm.set(3, 2, 6.0);
  write_pfm(dir / "d.pfm", dm);
  cmd_render(dir / "d.pfm", dir / "d.ppm", 1.0, 6.5);
  std::ifstream in(dir / "d.ppm", std::ios::binary);
  std::string magic;
  int w = 0, h = 0, maxv = 0;
  in >> magic >> w >> h >> maxv;
  CHECK(magic == "P6");
  CHECK(w == 4);
  CHECK(h == 3);
  CHECK(maxv == 255);

  const CameraIntrinsics K{10, 10, 4.5, 4.5, 10, 10};
  DsiGrid g1({4, 1.0, 3.0}, K, Pose{}), g2({4, 1.0, 3.0}, K, Pose{});
  g1.at(0, 1, 1) = 2;
  g2.at(0, 1, 1) = 6;
  write_dsi(dir / "a.dsi", g1);
  write_dsi(dir / "b.dsi", g2);
  cmd_fuse(dir / "a.dsi", dir / "b.dsi", dir / "f.dsi", FusionMethod::harmonic);
  CHECK(read_dsi(dir / "f.dsi").at(0, 1, 1) == 3.0f);
}

TEST_CASE("CLI exit codes") {
  test::TempDir dir("cli");
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") != 0);
  CHECK(run_cli("synth --out " + (dir / "s").string() + " --preset nope") == 2);
  CHECK(run_cli("synth --out " + (dir / "s").string() + " --preset desk --window 4") == 2);
  CHECK(run_cli("build-dsi --manifest " + (dir / "missing.json").string() + " --out " +
                (dir / "d").string()) == 3);
  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK(run_cli("build-dsi --manifest " + (dir / "broken.json").string() + " --out " +
                (dir / "d").string()) == 3);
  CHECK(run_cli("synth --out " + (dir / "s").string() + " --preset desk --scene-seed 3") == 0);
  CHECK(fs::exists(dir / "s" / "manifest.json"));
  CHECK(run_cli("build-dsi --manifest " + (dir / "s" / "manifest.json").string() + " --out " +
                (dir / "d").string() + " --preset desk") == 0);
  CHECK(run_cli("infer --index " + (dir / "d" / "index.json").string() + " --out " +
                (dir / "i").string() + " --preset desk --method argmax") == 0);
  CHECK(run_cli("eval --infer " + (dir / "i" / "infer.json").string() + " --out " +
                (dir / "e").string() + " --preset desk") == 0);
  CHECK(run_cli("infer --index " + (dir / "d" / "index.json").string() + " --out " +
                (dir / "i2").string() + " --preset desk") == 2);
}
