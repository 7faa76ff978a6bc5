// Copyright 2026 The pvnet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "pvnet/geometry.hpp"
#include "pvnet/image.hpp"
#include "pvnet/voxel_map.hpp"
#include "test_util.hpp"

namespace pvnet {
namespace {

CameraIntrinsics small_camera() { return {40.0, 42.0, 15.5, 11.5, 32, 24}; }

Image<float> gray_rgb(std::size_t w, std::size_t h) { return Image<float>(w, h, 3, 0.5f); }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST(Backproject, PrincipalPointAndPinholeFormula) {
  const CameraIntrinsics k{10.0, 10.0, 2.0, 1.0, 5, 3};
  Image<float> depth(5, 3, 1, 0.0f);
  depth.at(2, 1) = 1.0f;
  auto r = backproject_depth(depth, gray_rgb(5, 3), k);
  ASSERT_EQ(r.cloud.size(), 1u);
  EXPECT_EQ(r.cloud.points[0].x, 0.0);
  EXPECT_EQ(r.cloud.points[0].y, 0.0);
  EXPECT_EQ(r.cloud.points[0].z, 1.0);
  EXPECT_EQ(r.invalid_pixels, 14u);

  // u = cx + fx needs a wide image: fx = 2 keeps it inside.
  const CameraIntrinsics k2{2.0, 2.0, 1.0, 0.0, 4, 1};
  Image<float> d2(4, 1, 1, 0.0f);
  d2.at(3, 0) = 2.0f;
  r = backproject_depth(d2, gray_rgb(4, 1), k2);
  EXPECT_DOUBLE_EQ(r.cloud.points[0].x, 2.0);
}

TEST(Backproject, DepthWindowAndAllInvalid) {
  const CameraIntrinsics k{10.0, 10.0, 1.0, 0.0, 3, 1};
  Image<float> depth(3, 1, 1);
  depth.data = {0.3f, 8.0f, 8.5f};
  const auto r = backproject_depth(depth, gray_rgb(3, 1), k);
  ASSERT_EQ(r.cloud.size(), 1u);
  EXPECT_EQ(r.pixel_index, std::vector<std::size_t>{1});
  depth.data = {0.0f, -1.0f, 0.1f};
  EXPECT_THROW(backproject_depth(depth, gray_rgb(3, 1), k), Error);
}

TEST(Backproject, ProjectionRoundTripIsExact) {
  const CameraIntrinsics k = small_camera();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> z(0.31f, 7.9f);
  Image<float> depth(k.width, k.height, 1);
  for (auto& d : depth.data) d = z(rng);
  depth.at(3, 3) = 0.0f;
  const auto r = backproject_depth(depth, gray_rgb(k.width, k.height), k);
  EXPECT_EQ(r.cloud.size(), k.width * k.height - 1);
  for (std::size_t i = 0; i < r.cloud.size(); ++i) {
    const Point& p = r.cloud.points[i];
    const Pixel px = project(k, p.x, p.y, p.z);
    EXPECT_EQ(static_cast<std::size_t>(px.v) * k.width + static_cast<std::size_t>(px.u), r.pixel_index[i]);
  }
}

TEST(Projection, PinholeReference) {
  const CameraIntrinsics k{525.0, 525.0, 319.5, 239.5, 640, 480};
  EXPECT_EQ(project(k, 0.381, 0.0, 2.0).u, 420);
  EXPECT_EQ(project(CameraIntrinsics{1, 1, 0, 0, 1, 1}, 0, 0, 1), (Pixel{0, 0}));
  EXPECT_THROW(project(k, 0, 0, 0), Error);
}

TEST(Intrinsics, ScalingMirroringAndValidation) {
  const CameraIntrinsics k = small_camera();
  const CameraIntrinsics same = k.scaled(k.width, k.height);
  EXPECT_EQ(same.fx, k.fx);
  EXPECT_EQ(same.cx, k.cx);
  const CameraIntrinsics half = k.scaled(16, 12);
  EXPECT_DOUBLE_EQ(half.fx, 20.0);
  EXPECT_DOUBLE_EQ(half.cx, 7.5);
  EXPECT_DOUBLE_EQ(k.mirrored().mirrored().cx, k.cx);
  // A mirrored camera sees the mirrored point at the mirrored column.
  const Pixel a = project(k, 0.31, 0.1, 2.0);
  const Pixel b = project(k.mirrored(), -0.31, 0.1, 2.0);
  EXPECT_EQ(b.u, static_cast<long>(k.width) - 1 - a.u);
  EXPECT_THROW((CameraIntrinsics{0, 1, 0, 0, 2, 2}.validate()), Error);
  EXPECT_THROW((CameraIntrinsics{1, 1, 5, 0, 2, 2}.validate()), Error);

  testing::TempDir dir("intr");
  save_intrinsics(dir.path() / "k.txt", k);
  const CameraIntrinsics l = load_intrinsics(dir.path() / "k.txt");
  EXPECT_EQ(l.fx, k.fx);
  EXPECT_EQ(l.cy, k.cy);
  EXPECT_EQ(l.height, k.height);
}

TEST(Downsample, StrideAndCyclicPadding) {
  EXPECT_EQ(uniform_downsample_indices(8, 4), (std::vector<std::size_t>{0, 2, 4, 6}));
  EXPECT_EQ(uniform_downsample_indices(3, 4), (std::vector<std::size_t>{0, 1, 2, 0}));
  EXPECT_EQ(uniform_downsample_indices(5, 5), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_THROW(uniform_downsample_indices(0, 4), Error);
  PointCloud c;
  for (int i = 0; i < 10; ++i) c.points.push_back({double(i), 0, 1, 0, 0, 0});
  EXPECT_EQ(uniform_downsample(c, 7).size(), 7u);
  EXPECT_EQ(uniform_downsample(c, 10).points, c.points);
}

TEST(Transform, IdentityTranslationRotationAndInverse) {
  PointCloud c;
  c.points.push_back({1, 0, 0, 0.1, 0.2, 0.3});
  c.points.push_back({-2, 5, 0.5, 0, 0, 0});
  EXPECT_EQ(transform_cloud(c, Pose{}).points, c.points);

  Pose t;
  t.translation = {1, 0, 0};
  const auto moved = transform_cloud(c, t);
  EXPECT_EQ(moved.points[0].x, 2.0);
  EXPECT_EQ(moved.points[1].x, -1.0);
  EXPECT_EQ(moved.points[0].r, 0.1);

  Pose rz;
  rz.rotation = Eigen::AngleAxisd(std::numbers::pi / 2, Eigen::Vector3d::UnitZ());
  const auto rot = transform_cloud(c, rz);
  EXPECT_NEAR(rot.points[0].x, 0.0, 1e-15);
  EXPECT_NEAR(rot.points[0].y, 1.0, 1e-15);
  EXPECT_NEAR(rot.points[0].z, 0.0, 1e-15);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int trial = 0; trial < 50; ++trial) {
    Pose p;
    p.rotation = Eigen::Quaterniond(u(rng), u(rng), u(rng), u(rng)).normalized();
    p.translation = {u(rng), u(rng), u(rng)};
    PointCloud cloud;
    for (int i = 0; i < 20; ++i) cloud.points.push_back({u(rng), u(rng), u(rng), 0, 0, 0});
    const auto back = transform_cloud(transform_cloud(cloud, p), p.inverse());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      EXPECT_NEAR(back.points[i].x, cloud.points[i].x, 1e-6);
      EXPECT_NEAR(back.points[i].y, cloud.points[i].y, 1e-6);
      EXPECT_NEAR(back.points[i].z, cloud.points[i].z, 1e-6);
    }
  }
}

TEST(Trajectory, ParsesFixtureAndRejectsBadInput) {
  testing::TempDir dir("traj");
  const auto path = dir.path() / "t.txt";
  {
    std::ofstream(path) << "# header\n"
                           "0.0 0 0 0 0 0 0 1\n"
                           "\n"
                           "0.5 1.25 -2 3 0 0 0.70710678 0.70710678\n"
                           "1.0 0 0 1 1 0 0 0\n";
  }
  const auto poses = load_trajectory(path);
  ASSERT_EQ(poses.size(), 3u);
  EXPECT_EQ(poses[0].rotation.w(), 1.0);
  EXPECT_EQ(poses[1].timestamp, 0.5);
  EXPECT_EQ(poses[1].translation, Eigen::Vector3d(1.25, -2, 3));
  EXPECT_NEAR(poses[1].rotation.norm(), 1.0, 1e-12);
  EXPECT_NEAR(poses[1].rotation.z(), std::sqrt(0.5), 1e-8);
  EXPECT_EQ(poses[2].rotation.x(), 1.0);

  save_trajectory(dir.path() / "u.txt", poses);
  const auto again = load_trajectory(dir.path() / "u.txt");
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(again[i].timestamp, poses[i].timestamp);
    EXPECT_EQ(again[i].translation, poses[i].translation);
    EXPECT_EQ(again[i].rotation.coeffs(), poses[i].rotation.coeffs());
  }

  { std::ofstream(path) << "# nothing\n# here\n"; }
  EXPECT_THROW(load_trajectory(path), Error);
  { std::ofstream(path) << "0 0 0 0 0 0 0 1\n1 0 0 oops 0 0 0 1\n"; }
  try {
    load_trajectory(path);
    FAIL() << "malformed line accepted";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
  { std::ofstream(path) << "0 0 0 0 0 0 0 1.1\n"; }
  EXPECT_THROW(load_trajectory(path), Error);
  { std::ofstream(path) << "0 0 0 0 0 0 0 1.0005\n"; }
  EXPECT_NEAR(load_trajectory(path)[0].rotation.norm(), 1.0, 1e-12);
}

TEST(Trajectory, NearestTimestampWithinTolerance) {
  std::vector<Pose> poses(3);
  poses[0].timestamp = 0.0, poses[1].timestamp = 0.1, poses[2].timestamp = 0.2;
  EXPECT_EQ(nearest_pose(poses, 0.11)->timestamp, 0.1);
  EXPECT_EQ(nearest_pose(poses, 0.215)->timestamp, 0.2);
  EXPECT_FALSE(nearest_pose(poses, 0.25).has_value());
}

TEST(Bayes, ReferenceCases) {
  const std::vector<double> uniform{0.25, 0.25, 0.25, 0.25};
  const std::vector<double> lik{0.1, 0.2, 0.3, 0.4};
  auto r = bayes_update(uniform, lik);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(r.probs[i], lik[i], 1e-15);
  r = bayes_update(lik, uniform);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(r.probs[i], lik[i], 1e-15);

  const std::vector<double> p{0.8, 0.2};
  r = bayes_update(p, p);
  EXPECT_NEAR(r.probs[0], 0.64 / 0.68, 1e-15);
  EXPECT_NEAR(r.probs[0], 0.9412, 5e-5);
  EXPECT_NEAR(r.probs[1], 0.0588, 5e-5);

  const std::vector<double> a{1.0, 0.0}, b{0.0, 1.0};
  r = bayes_update(a, b);
  EXPECT_TRUE(r.conflict);
  EXPECT_EQ(r.probs, a);
}

TEST(Bayes, SequentialFoldEqualsNormalizedProduct) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = 2 + trial % 6, k = 1 + trial % 10;
    std::vector<double> post(c, 1.0 / double(c)), prod(c, 1.0);
    for (std::size_t step = 0; step < k; ++step) {
      std::vector<double> l(c);
      for (double& x : l) x = u(rng);
      post = bayes_update(post, l).probs;
      for (std::size_t i = 0; i < c; ++i) prod[i] *= l[i];
    }
    const double z = std::accumulate(prod.begin(), prod.end(), 0.0);
    for (std::size_t i = 0; i < c; ++i) EXPECT_NEAR(post[i], prod[i] / z, 1e-9);
  }
}

TEST(VoxelMap, SingleFrameAbsorbsLikelihoodIntoUniformPrior) {
  VoxelMap map(3, 0.5);
  PointCloud c;
  c.points.push_back({0.1, 0.1, 0.1, 1, 0, 0});
  c.points.push_back({0.9, 0.1, 0.1, 0, 1, 0});
  const std::vector<double> probs{0.7, 0.2, 0.1, 0.1, 0.1, 0.8};
  const auto st = map.integrate(c, probs, Pose{});
  EXPECT_EQ(st.new_voxels, 2u);
  ASSERT_EQ(map.size(), 2u);
  const auto v = map.voxels();
  EXPECT_EQ(v[0].cell, (CellIndex{0, 0, 0}));
  EXPECT_NEAR(v[0].probs[0], 0.7, 1e-12);
  EXPECT_NEAR(v[1].probs[2], 0.8, 1e-12);
  EXPECT_EQ(v[1].observations, 1u);
  EXPECT_EQ(v[1].mean_color[1], 1.0);
}

TEST(VoxelMap, RepeatedEvidenceSharpensWithoutChangingArgmax) {
  VoxelMap map(3, 0.25);
  PointCloud c;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 1), pr(0.05, 1.0);
  std::vector<double> probs;
  for (int i = 0; i < 200; ++i) {
    c.points.push_back({u(rng), u(rng), u(rng) + 2, 0.5, 0.5, 0.5});
    double row[3] = {pr(rng), pr(rng), pr(rng)};
    const double s = row[0] + row[1] + row[2];
    for (double x : row) probs.push_back(x / s);
  }
  map.integrate(c, probs, Pose{});
  std::vector<std::pair<std::size_t, double>> before;
  for (const auto& v : map.voxels()) before.emplace_back(argmax(v.probs), v.probs[argmax(v.probs)]);
  map.integrate(c, probs, Pose{});
  const auto after = map.voxels();
  for (std::size_t i = 0; i < after.size(); ++i) {
    EXPECT_EQ(argmax(after[i].probs), before[i].first);
    EXPECT_GE(after[i].probs[before[i].first], before[i].second);
    EXPECT_NEAR(std::accumulate(after[i].probs.begin(), after[i].probs.end(), 0.0), 1.0, 1e-6);
  }
}

TEST(VoxelMap, ConflictingFramesMatchIndependentChain) {
  VoxelMap map(2, 1.0);
  PointCloud c;
  c.points.push_back({0.5, 0.5, 0.5, 0, 0, 0});
  const std::vector<double> flat{0.5, 0.5}, peaked{0.9, 0.1}, against{0.3, 0.7};
  map.integrate(c, flat, Pose{});
  map.integrate(c, peaked, Pose{});
  map.integrate(c, against, Pose{});
  std::vector<double> chain{0.5, 0.5};
  for (const auto* l : {&flat, &peaked, &against}) chain = bayes_update(chain, *l).probs;
  const auto v = map.voxels().at(0);
  EXPECT_NEAR(v.probs[0], chain[0], 1e-12);
  EXPECT_EQ(v.observations, 3u);
}

TEST(VoxelMap, ProbabilityFloorAndValidation) {
  VoxelMap map(2, 1.0);
  PointCloud c;
  c.points.push_back({0.5, 0.5, 0.5, 0, 0, 0});
  const std::vector<double> a{1.0, 0.0}, b{0.0, 1.0};
  map.integrate(c, a, Pose{});
  map.integrate(c, b, Pose{});
  const auto v = map.voxels().at(0);
  EXPECT_NEAR(v.probs[0], 0.5, 1e-9);  // the floor makes the two one-hots cancel
  const std::vector<double> bad{0.5};
  EXPECT_THROW(map.integrate(c, bad, Pose{}), Error);
  const std::vector<double> unnormalized{0.5, 0.6};
  EXPECT_THROW(map.integrate(c, unnormalized, Pose{}), Error);
}

TEST(VoxelMap, PoseMovesPointsIntoWorldCells) {
  VoxelMap map(1, 1.0);
  PointCloud c;
  c.points.push_back({0.5, 0.5, 0.5, 0, 0, 0});
  Pose p;
  p.translation = {-2, 0, 0};
  const std::vector<double> one{1.0};
  map.integrate(c, one, p);
  EXPECT_TRUE(map.contains({-2, 0, 0}));
}

TEST(Ply, CellCenterAndRoundTrip) {
  testing::TempDir dir("ply");
  const Palette palette{{255, 0, 0}, {0, 255, 0}, {0, 0, 255}};
  VoxelMap one(3, 0.02);
  PointCloud c;
  c.points.push_back({0.001, 0.002, 0.003, 0, 0, 0});
  const std::vector<double> cls0{0.9, 0.05, 0.05};
  one.integrate(c, cls0, Pose{});
  export_ply(one, palette, dir.path() / "one.ply");
  auto verts = parse_ply(dir.path() / "one.ply");
  ASSERT_EQ(verts.size(), 1u);
  EXPECT_NEAR(verts[0].x, 0.01, 1e-9);
  EXPECT_NEAR(verts[0].y, 0.01, 1e-9);
  EXPECT_NEAR(verts[0].z, 0.01, 1e-9);
  EXPECT_EQ(verts[0].label, 0);
  EXPECT_EQ(verts[0].red, 255);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  std::uniform_int_distribution<int> cls(0, 2);
  auto build = [&](std::uint64_t seed) {
    std::mt19937_64 r(seed);
    VoxelMap m(3, 0.1);
    PointCloud cloud;
    std::vector<double> probs;
    for (int i = 0; i < 500; ++i) {
      cloud.points.push_back({u(r), u(r), u(r), 0.2, 0.4, 0.6});
      const int k = cls(r);
      for (int j = 0; j < 3; ++j) probs.push_back(j == k ? 0.8 : 0.1);
    }
    m.integrate(cloud, probs, Pose{});
    return m;
  };
  const VoxelMap m = build(7);
  export_ply(m, palette, dir.path() / "a.ply");
  export_ply(build(7), palette, dir.path() / "b.ply");
  EXPECT_EQ(slurp(dir.path() / "a.ply"), slurp(dir.path() / "b.ply"));
  verts = parse_ply(dir.path() / "a.ply");
  const auto voxels = m.voxels();
  ASSERT_EQ(verts.size(), voxels.size());
  for (std::size_t i = 0; i < verts.size(); ++i) EXPECT_EQ(verts[i].label, static_cast<int>(argmax(voxels[i].probs)));

  EXPECT_THROW(export_ply(VoxelMap(3, 0.1), palette, dir.path() / "empty.ply"), Error);
  EXPECT_THROW(export_ply(m, palette, dir.path() / "no_such_dir" / "x.ply"), Error);
}

TEST(VoxelAccuracyTest, IdenticalMapsScoreOne) {
  VoxelMap a(2, 0.5), b(2, 0.5);
  PointCloud c;
  c.points.push_back({0.1, 0.1, 0.1, 0, 0, 0});
  c.points.push_back({2.1, 0.1, 0.1, 0, 0, 0});
  const std::vector<double> p{0.9, 0.1, 0.2, 0.8}, q{0.9, 0.1, 0.6, 0.4};
  a.integrate(c, p, Pose{});
  b.integrate(c, p, Pose{});
  EXPECT_EQ(voxel_accuracy(a, b).accuracy, 1.0);
  VoxelMap d(2, 0.5);
  d.integrate(c, q, Pose{});
  EXPECT_EQ(voxel_accuracy(d, b).accuracy, 0.5);
}

TEST(Images, NetpbmRoundTrips) {
  testing::TempDir dir("img");
  DepthImage depth(5, 3, 1);
  for (std::size_t i = 0; i < depth.data.size(); ++i) depth.data[i] = static_cast<std::uint16_t>(i * 4099);
  write_depth(dir.path() / "d.pgm", depth);
  EXPECT_EQ(read_depth(dir.path() / "d.pgm"), depth);
  RgbImage rgb(4, 2, 3);
  for (std::size_t i = 0; i < rgb.data.size(); ++i) rgb.data[i] = static_cast<std::uint8_t>(i * 11);
  write_rgb(dir.path() / "c.ppm", rgb);
  EXPECT_EQ(read_rgb(dir.path() / "c.ppm"), rgb);
  EXPECT_THROW(read_labels(dir.path() / "c.ppm"), Error);
  EXPECT_THROW(read_rgb(dir.path() / "missing.ppm"), Error);
}

TEST(Images, ResizeAndFlip) {
  Image<float> img(4, 2, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(i);
  EXPECT_EQ(resize_bilinear(img, 4, 2), img);
  EXPECT_EQ(flip_horizontal(flip_horizontal(img)), img);
  EXPECT_EQ(flip_horizontal(img).at(0, 1, 2), img.at(3, 1, 2));
  LabelImage lab(4, 4, 1);
  for (std::size_t i = 0; i < 16; ++i) lab.data[i] = static_cast<std::uint8_t>(i);
  EXPECT_EQ(resize_nearest(lab, 4, 4), lab);
  const auto half = resize_nearest(lab, 2, 2);
  EXPECT_EQ(half.at(0, 0), lab.at(1, 1));
  const Image<float> flat(6, 6, 3, 0.25f);
  for (float v : resize_bilinear(flat, 3, 9).data) EXPECT_FLOAT_EQ(v, 0.25f);
  for (float v : bilateral_smooth(flat).data) EXPECT_FLOAT_EQ(v, 0.25f);
}

}  // namespace
}  // namespace pvnet
