// SPDX-License-Identifier: Apache-2.0
#include "derd/dsi.hpp"
#include "derd/random.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numeric>

using namespace derd;

TEST_CASE("plane_depths") {
  const auto a = plane_depths(1.0, 6.5, 100);
  REQUIRE(a.size() == 100);
  CHECK(a.front() == 1.0);
  CHECK(a.back() == 6.5);
  for (std::size_t i = 1; i < a.size(); ++i) CHECK(a[i] > a[i - 1]);

  const auto b = plane_depths(1.0, 2.0, 3);
  CHECK(b[0] == 1.0);
  CHECK(b[1] == doctest::Approx(4.0 / 3.0).epsilon(1e-14));
  CHECK(b[2] == 2.0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(1.0 / b[i] == doctest::Approx(1.0 - 0.25 * i));

  const auto c = plane_depths(0.7, 9.0, 2);
  CHECK(c == std::vector<double>{0.7, 9.0});

  CHECK_THROWS(plane_depths(0.0, 1.0, 3));
  CHECK_THROWS(plane_depths(2.0, 1.0, 3));
  CHECK_THROWS(plane_depths(1.0, 2.0, 1));
}

TEST_CASE("empty event list gives a zero grid") {
  const CameraIntrinsics K{10, 10, 4.5, 4.5, 10, 10};
  const Trajectory traj({{0.0, Pose{}}, {1.0, Pose{}}});
  const auto g = build_dsi({}, traj, Pose{}, K, {8, 1.0, 4.0});
  CHECK(g.total() == 0.0);
  CHECK(g.counts().size() == 8u * 10 * 10);
}

TEST_CASE("identity pose votes along the epipole") {
  const CameraIntrinsics K{20, 20, 7, 7, 16, 16};
  const Trajectory traj({{0.0, Pose{}}, {1.0, Pose{}}});
  const std::vector<Event> ev{{0.5, 7, 7, 1}};
  const auto g = build_dsi(ev, traj, Pose{}, K, {8, 1.0, 5.0});
  CHECK(g.total() == 8.0);
  for (int i = 0; i < 8; ++i) CHECK(g.at(i, 7, 7) == 1.0f);
}

TEST_CASE("events outside the trajectory span are rejected") {
  const CameraIntrinsics K{20, 20, 7, 7, 16, 16};
  const Trajectory traj({{0.0, Pose{}}, {1.0, Pose{}}});
  const std::vector<Event> ev{{1.5, 3, 3, 1}};
  CHECK_THROWS_AS(build_dsi(ev, traj, Pose{}, K, {4, 1.0, 5.0}), std::out_of_range);
}

TEST_CASE("packet median timestamp") {
  std::vector<Event> ev{{1.0, 0, 0, 1}, {2.0, 0, 0, 1}, {4.0, 0, 0, 1}};
  CHECK(packet_median_time(ev) == 2.0);
  ev.push_back({10.0, 0, 0, 1});
  CHECK(packet_median_time(ev) == 3.0);
}

TEST_CASE("nearest voting matches the ray-sampling oracle") {
  Rng rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = oracle::random_voting_scene(rng, 16, 8, 50);
    const auto g = build_dsi(s.events, s.traj, s.ref, s.K, s.shape);
    const auto ref = oracle::oracle_dsi(s, 4000);
    const auto c = g.counts();
    CHECK(std::equal(c.begin(), c.end(), ref.begin(), ref.end()));
  }
}

TEST_CASE("vote conservation and parallel merge") {
  Rng rng(99);
  for (int trial = 0; trial < 5; ++trial) {
    auto s = oracle::random_voting_scene(rng, 24, 10, 3000);
    VotingConfig seq{64, VoteMode::nearest, 1};
    VotingConfig par{64, VoteMode::nearest, 4};
    const auto a = build_dsi(s.events, s.traj, s.ref, s.K, s.shape, seq);
    const auto b = build_dsi(s.events, s.traj, s.ref, s.K, s.shape, par);
    const auto ca = a.counts();
    const auto cb = b.counts();
    CHECK(std::equal(ca.begin(), ca.end(), cb.begin(), cb.end()));

    // Count in-bounds crossings directly, packet by packet.
    double crossings = 0;
    const auto depths = plane_depths(s.shape.z_min, s.shape.z_max, s.shape.num_planes);
    for (std::size_t p = 0; p < s.events.size(); p += 64) {
      const std::span<const Event> pk(s.events.data() + p, std::min<std::size_t>(64, s.events.size() - p));
      const Pose T = relative_pose(s.ref, interpolate_pose(s.traj, packet_median_time(pk)));
      for (const auto& e : pk) {
        const Eigen::Vector3d dir =
            T.rotation * Eigen::Vector3d((e.x - s.K.cx) / s.K.fx, (e.y - s.K.cy) / s.K.fy, 1);
        for (double z : depths) {
          const double sc = (z - T.translation.z()) / dir.z();
          if (!(sc > 0)) continue;
          const Eigen::Vector3d P = sc * dir + T.translation;
          const double u = std::floor(s.K.fx * P.x() / z + s.K.cx + 0.5);
          const double v = std::floor(s.K.fy * P.y() / z + s.K.cy + 0.5);
          if (u >= 0 && v >= 0 && u < s.K.width && v < s.K.height) crossings += 1;
        }
      }
    }
    CHECK(a.total() == crossings);
  }
}

TEST_CASE("bilinear voting conserves mass") {
  Rng rng(5);
  auto s = oracle::random_voting_scene(rng, 20, 12, 500);
  const auto g = build_dsi(s.events, s.traj, s.ref, s.K, s.shape, {1024, VoteMode::bilinear, 1});
  const auto depths = plane_depths(s.shape.z_min, s.shape.z_max, s.shape.num_planes);
  const Pose T = relative_pose(s.ref, interpolate_pose(s.traj, packet_median_time(s.events)));
  double inside = 0;
  for (const auto& e : s.events) {
    const Eigen::Vector3d dir =
        T.rotation * Eigen::Vector3d((e.x - s.K.cx) / s.K.fx, (e.y - s.K.cy) / s.K.fy, 1);
    for (double z : depths) {
      const double sc = (z - T.translation.z()) / dir.z();
      if (!(sc > 0)) continue;
      const Eigen::Vector3d P = sc * dir + T.translation;
      const double u = s.K.fx * P.x() / z + s.K.cx;
      const double v = s.K.fy * P.y() / z + s.K.cy;
      if (u >= 0 && v >= 0 && u <= s.K.width - 1 && v <= s.K.height - 1) inside += 1;
    }
  }
  REQUIRE(inside > 0);
  CHECK(std::abs(g.total() - inside) <= 1e-6 * inside);
}

TEST_CASE("fusion examples and algebra") {
  CHECK(fuse_voxel(2, 6, FusionMethod::harmonic) == 3.0f);
  CHECK(fuse_voxel(0, 0, FusionMethod::harmonic) == 0.0f);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const float a = static_cast<float>(rng.uniform(0, 50));
    const float b = static_cast<float>(rng.uniform(0, 50));
    CHECK(fuse_voxel(a, 0, FusionMethod::harmonic) == 0.0f);
    CHECK(fuse_voxel(a, a, FusionMethod::harmonic) == doctest::Approx(a).epsilon(1e-7));
    for (auto m : {FusionMethod::harmonic, FusionMethod::arithmetic, FusionMethod::geometric,
                   FusionMethod::min})
      CHECK(fuse_voxel(a, b, m) == fuse_voxel(b, a, m));
    const float mn = fuse_voxel(a, b, FusionMethod::min);
    const float hm = fuse_voxel(a, b, FusionMethod::harmonic);
    const float gm = fuse_voxel(a, b, FusionMethod::geometric);
    const float am = fuse_voxel(a, b, FusionMethod::arithmetic);
    CHECK(mn <= hm);
    CHECK(hm <= gm);
    CHECK(gm <= am);
  }
}

TEST_CASE("fuse checks layouts") {
  const CameraIntrinsics K{10, 10, 4.5, 4.5, 10, 10};
  DsiGrid a({4, 1.0, 3.0}, K, Pose{});
  DsiGrid b({4, 1.0, 3.0}, K, Pose(Eigen::Vector3d(0.1, 0, 0), Eigen::Quaterniond::Identity()));
  DsiGrid c({5, 1.0, 3.0}, K, Pose{});
  CHECK_THROWS(fuse(a, b));
  CHECK_THROWS(fuse(a, c));
  a.at(1, 2, 3) = 2;
  DsiGrid a2 = a;
  a2.at(1, 2, 3) = 6;
  CHECK(fuse(a, a2).at(1, 2, 3) == 3.0f);
}

TEST_CASE("parse helpers") {
  CHECK(parse_vote_mode("bilinear") == VoteMode::bilinear);
  CHECK(parse_fusion_method("geometric") == FusionMethod::geometric);
  CHECK(to_string(FusionMethod::harmonic) == "harmonic");
  CHECK_THROWS(parse_vote_mode("cubic"));
  CHECK_THROWS(parse_fusion_method("median"));
}

TEST_CASE("event and DSI files") {
  test::TempDir dir("dsi");
  Rng rng(8);
  auto s = oracle::random_voting_scene(rng, 16, 6, 200);
  write_events(dir / "ev.bin", s.events);
  CHECK(read_events(dir / "ev.bin") == s.events);
  write_events(dir / "ev.csv", s.events);
  CHECK(read_events(dir / "ev.csv") == s.events);

  const auto g = build_dsi(s.events, s.traj, s.ref, s.K, s.shape);
  write_dsi(dir / "g.dsi", g);
  const auto h = read_dsi(dir / "g.dsi");
  CHECK(h.same_layout(g));
  CHECK(std::equal(g.counts().begin(), g.counts().end(), h.counts().begin(), h.counts().end()));

  std::ofstream(dir / "bad.dsi") << "DSI0 garbage";
  CHECK_THROWS(read_dsi(dir / "bad.dsi"));
  CHECK_THROWS(read_events(dir / "missing.bin"));
}

TEST_CASE("events_in_window") {
  std::vector<Event> ev;
  for (int i = 0; i < 10; ++i) ev.push_back({0.1 * i, 0, 0, 1});
  const auto w = events_in_window(ev, 0.25, 0.55);
  REQUIRE(w.size() == 3);
  CHECK(w.front().t == doctest::Approx(0.3));
}
