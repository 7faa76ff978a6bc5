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

// Ray-cast synthetic RGB-D sequences: an axis-aligned room with boxes on the
// floor, seen from a camera circling the room center.
//
// World frame is z-up with the floor at z = 0. Classes: 0 floor, 1 wall
// (the ceiling shares it), 2.. one per box.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pvnet/geometry.hpp"
#include "pvnet/image.hpp"

namespace pvnet {

struct SynthConfig {
  std::uint64_t seed = 1;
  std::size_t frames = 40;
  std::size_t width = 128, height = 128;
  std::size_t boxes = 4;  ///< 2..4, classes = 2 + boxes

  void validate() const {
    detail::require(frames >= 1, "synth: frames must be >= 1");
    detail::require(width >= 8 && height >= 8, "synth: image must be at least 8x8");
    detail::require(boxes >= 2 && boxes <= 4, "synth: boxes must be in [2,4], got ", boxes);
  }
};

struct Box {
  Eigen::Vector3d lo, hi;
};

struct SynthScene {
  double half_x = 2.5, half_y = 2.5, height = 2.8;
  std::vector<Box> boxes;
  std::uint64_t texture_seed = 0;
  CameraIntrinsics intrinsics;
  std::vector<Pose> poses;  ///< camera to world, one per frame

  std::size_t classes() const { return 2 + boxes.size(); }
};

struct SynthView {
  std::vector<double> depth;          ///< h*w, z-depth in meters
  std::vector<std::uint8_t> labels;   ///< h*w
  RgbImage rgb;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Hash noise in [-1, 1] on a 4 cm lattice of world positions.
inline double lattice_noise(std::uint64_t seed, const Eigen::Vector3d& p) {
  std::uint64_t h = seed;
  for (int i = 0; i < 3; ++i) h = splitmix64(h ^ static_cast<std::uint64_t>(std::llround(std::floor(p[i] / 0.04))));
  return static_cast<double>(h >> 11) / static_cast<double>(1ULL << 53) * 2.0 - 1.0;
}

inline Eigen::Quaterniond look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target) {
  const Eigen::Vector3d f = (target - eye).normalized();
  const Eigen::Vector3d r = f.cross(Eigen::Vector3d::UnitZ()).normalized();
  const Eigen::Vector3d d = f.cross(r);
  Eigen::Matrix3d m;
  m.col(0) = r, m.col(1) = d, m.col(2) = f;
  return Eigen::Quaterniond(m).normalized();
}

/// Entry distance of a ray into an axis-aligned box, or +inf.
inline double ray_box(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Box& b, int& axis) {
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  axis = -1;
  for (int i = 0; i < 3; ++i) {
    if (d[i] == 0.0) {
      if (o[i] < b.lo[i] || o[i] > b.hi[i]) return std::numeric_limits<double>::infinity();
      continue;
    }
    double a = (b.lo[i] - o[i]) / d[i], c = (b.hi[i] - o[i]) / d[i];
    if (a > c) std::swap(a, c);
    if (a > t0) t0 = a, axis = i;
    t1 = std::min(t1, c);
  }
  return (t0 <= t1 && axis >= 0) ? t0 : std::numeric_limits<double>::infinity();
}

}  // namespace detail

inline SynthScene make_scene(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  SynthScene s;
  s.half_x = uniform(2.4, 3.0);
  s.half_y = uniform(2.4, 3.0);
  s.texture_seed = rng();
  // Boxes stay near the center, clear of each other and of the camera circle.
  for (std::size_t tries = 0; s.boxes.size() < cfg.boxes; ++tries) {
    detail::require(tries < 10000, "synth: could not place ", cfg.boxes, " boxes");
    const double sx = uniform(0.4, 0.9), sy = uniform(0.4, 0.9), sz = uniform(0.3, 1.0);
    const double a = uniform(0.0, 2.0 * M_PI), r = uniform(0.0, 1.0);
    const Eigen::Vector3d c(r * std::cos(a), r * std::sin(a), 0.0);
    Box b{c - Eigen::Vector3d(sx / 2, sy / 2, 0.0), c + Eigen::Vector3d(sx / 2, sy / 2, sz)};
    if (b.hi.head<2>().norm() > 1.5 || b.lo.head<2>().norm() > 1.5) continue;
    bool overlaps = false;
    for (const Box& o : s.boxes)
      overlaps |= b.lo.x() < o.hi.x() + 0.1 && o.lo.x() < b.hi.x() + 0.1 && b.lo.y() < o.hi.y() + 0.1 &&
                  o.lo.y() < b.hi.y() + 0.1;
    if (!overlaps) s.boxes.push_back(b);
  }

  const double f = 0.8 * static_cast<double>(cfg.width);
  s.intrinsics = {f, f, (static_cast<double>(cfg.width) - 1) / 2, (static_cast<double>(cfg.height) - 1) / 2,
                  cfg.width, cfg.height};
  const double phase = uniform(0.0, 2.0 * M_PI);
  for (std::size_t i = 0; i < cfg.frames; ++i) {
    const double th = phase + 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(cfg.frames);
    const Eigen::Vector3d eye(2.0 * std::cos(th), 2.0 * std::sin(th), 1.3 + 0.1 * std::sin(3 * th));
    const Eigen::Vector3d target(0.3 * std::cos(th + M_PI / 2), 0.3 * std::sin(th + M_PI / 2), 0.0);
    Pose p;
    p.timestamp = 1.0 + static_cast<double>(i) / 30.0;
    p.rotation = detail::look_at(eye, target);
    p.translation = eye;
    s.poses.push_back(p);
  }
  return s;
}

/// Renders one view by casting a ray through every pixel center.
inline SynthView render_view(const SynthScene& s, const Pose& pose) {
  static const std::array<std::array<double, 3>, 6> base{{{0.55, 0.42, 0.30},
                                                          {0.82, 0.80, 0.74},
                                                          {0.80, 0.18, 0.16},
                                                          {0.20, 0.62, 0.25},
                                                          {0.20, 0.32, 0.80},
                                                          {0.88, 0.74, 0.16}}};
  const CameraIntrinsics& k = s.intrinsics;
  const Eigen::Matrix3d rot = pose.rotation.toRotationMatrix();
  const Eigen::Vector3d o = pose.translation;
  const Eigen::Vector3d light = Eigen::Vector3d(0.3, -0.4, 1.0).normalized();
  SynthView v;
  v.depth.assign(k.width * k.height, 0.0);
  v.labels.assign(k.width * k.height, 0);
  v.rgb = RgbImage(k.width, k.height, 3);
  for (std::size_t y = 0; y < k.height; ++y) {
    for (std::size_t x = 0; x < k.width; ++x) {
      // Camera-frame direction with unit z, so the hit distance is the z-depth.
      const Eigen::Vector3d dc((static_cast<double>(x) - k.cx) / k.fx, (static_cast<double>(y) - k.cy) / k.fy, 1.0);
      const Eigen::Vector3d d = rot * dc;
      double t = std::numeric_limits<double>::infinity();
      std::uint8_t label = 1;
      Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
      auto plane = [&](int axis, double at, std::uint8_t cls, double sign) {
        if (d[axis] == 0.0) return;
        const double tp = (at - o[axis]) / d[axis];
        if (tp > 0 && tp < t) {
          t = tp, label = cls;
          normal = Eigen::Vector3d::Zero();
          normal[axis] = sign;
        }
      };
      plane(2, 0.0, 0, 1.0);
      plane(2, s.height, 1, -1.0);
      plane(0, -s.half_x, 1, 1.0);
      plane(0, s.half_x, 1, -1.0);
      plane(1, -s.half_y, 1, 1.0);
      plane(1, s.half_y, 1, -1.0);
      for (std::size_t b = 0; b < s.boxes.size(); ++b) {
        int axis = -1;
        const double tb = detail::ray_box(o, d, s.boxes[b], axis);
        if (tb < t) {
          t = tb, label = static_cast<std::uint8_t>(2 + b);
          normal = Eigen::Vector3d::Zero();
          normal[axis] = d[axis] > 0 ? -1.0 : 1.0;
        }
      }
      const Eigen::Vector3d hit = o + t * d;
      const double shade = 0.65 + 0.35 * std::max(0.0, normal.dot(light));
      double tex = 0.08 * detail::lattice_noise(s.texture_seed + label, hit);
      if (label == 0) tex += ((static_cast<long>(std::floor(hit.x() / 0.5)) + static_cast<long>(std::floor(hit.y() / 0.5))) % 2 ? 0.05 : -0.05);
      const std::size_t at = y * k.width + x;
      v.depth[at] = t;
      v.labels[at] = label;
      for (std::size_t c = 0; c < 3; ++c) {
        const double val = std::clamp(base[label % base.size()][c] * shade + tex, 0.0, 1.0);
        v.rgb.at(x, y, c) = static_cast<std::uint8_t>(std::lround(val * 255.0));
      }
    }
  }
  return v;
}

/// Millimeter depth, 0 where the range does not fit 16 bits.
inline DepthImage depth_to_millimeters(const std::vector<double>& depth, std::size_t w, std::size_t h) {
  DepthImage out(w, h, 1);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    const long mm = std::lround(depth[i] * 1000.0);
    out.data[i] = (mm > 0 && mm <= 65535) ? static_cast<std::uint16_t>(mm) : 0;
  }
  return out;
}

inline std::string frame_stem(std::size_t i) {
  std::ostringstream s;
  s << std::setw(6) << std::setfill('0') << i;
  return s.str();
}

/// Writes intrinsics.txt, associations.txt, groundtruth.txt, scene.txt and
/// rgb/, depth/, labels/ images under `dir`.
inline SynthScene write_synthetic_sequence(const SynthConfig& cfg, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const SynthScene scene = make_scene(cfg);
  for (const char* sub : {"rgb", "depth", "labels"}) fs::create_directories(dir / sub);
  save_intrinsics(dir / "intrinsics.txt", scene.intrinsics);
  save_trajectory(dir / "groundtruth.txt", scene.poses);

  std::ofstream assoc(dir / "associations.txt");
  detail::require(assoc.good(), (dir / "associations.txt").string(), ": cannot open for writing");
  assoc << "# timestamp rgb depth labels\n" << std::fixed << std::setprecision(6);
  for (std::size_t i = 0; i < scene.poses.size(); ++i) {
    const SynthView v = render_view(scene, scene.poses[i]);
    const std::string stem = frame_stem(i);
    write_rgb(dir / "rgb" / (stem + ".ppm"), v.rgb);
    write_depth(dir / "depth" / (stem + ".pgm"), depth_to_millimeters(v.depth, cfg.width, cfg.height));
    LabelImage labels(cfg.width, cfg.height, 1);
    labels.data = v.labels;
    write_labels(dir / "labels" / (stem + ".pgm"), labels);
    assoc << scene.poses[i].timestamp << " rgb/" << stem << ".ppm depth/" << stem << ".pgm labels/" << stem
          << ".pgm\n";
  }

  std::ofstream desc(dir / "scene.txt");
  desc << std::setprecision(17) << "# class name\n0 floor\n1 wall\n";
  for (std::size_t b = 0; b < scene.boxes.size(); ++b) desc << 2 + b << " box" << b + 1 << '\n';
  desc << "# room half_x half_y height\nroom " << scene.half_x << ' ' << scene.half_y << ' ' << scene.height << '\n';
  for (const Box& b : scene.boxes)
    desc << "box " << b.lo.x() << ' ' << b.lo.y() << ' ' << b.lo.z() << ' ' << b.hi.x() << ' ' << b.hi.y() << ' '
         << b.hi.z() << '\n';
  detail::require(assoc.good() && desc.good(), dir.string(), ": write failed");
  return scene;
}

}  // namespace pvnet
