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

// Pinhole camera, point clouds, rigid poses and trajectory files.

#pragma once

#include <Eigen/Geometry>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pvnet/image.hpp"

namespace pvnet {

struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  std::size_t width = 0, height = 0;

  void validate() const {
    detail::require(fx > 0 && fy > 0 && std::isfinite(fx) && std::isfinite(fy), "intrinsics: focal lengths must be > 0");
    detail::require(width > 0 && height > 0, "intrinsics: empty image size");
    detail::require(cx >= 0 && cx < static_cast<double>(width) && cy >= 0 && cy < static_cast<double>(height),
                    "intrinsics: principal point (", cx, ",", cy, ") outside ", width, "x", height);
  }

  /// The same camera sampled at a different resolution (pixel centers aligned).
  CameraIntrinsics scaled(std::size_t w, std::size_t h) const {
    const double sx = static_cast<double>(w) / static_cast<double>(width);
    const double sy = static_cast<double>(h) / static_cast<double>(height);
    return {fx * sx, fy * sy, (cx + 0.5) * sx - 0.5, (cy + 0.5) * sy - 0.5, w, h};
  }

  /// Camera for the horizontally mirrored image.
  CameraIntrinsics mirrored() const { return {fx, fy, static_cast<double>(width) - 1.0 - cx, cy, width, height}; }

  /// Camera for an image zoomed by `s` about its center.
  CameraIntrinsics zoomed(double s) const {
    const double ux = (static_cast<double>(width) - 1.0) / 2.0, uy = (static_cast<double>(height) - 1.0) / 2.0;
    return {fx * s, fy * s, s * (cx - ux) + ux, s * (cy - uy) + uy, width, height};
  }
};

inline CameraIntrinsics load_intrinsics(const std::filesystem::path& path) {
  std::ifstream in(path);
  detail::require(in.good(), path.string(), ": cannot open");
  CameraIntrinsics k;
  in >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height;
  detail::require(!in.fail(), path.string(), ": expected 'fx fy cx cy width height'");
  k.validate();
  return k;
}

inline void save_intrinsics(const std::filesystem::path& path, const CameraIntrinsics& k) {
  std::ofstream out(path);
  detail::require(out.good(), path.string(), ": cannot open for writing");
  out << std::setprecision(17) << k.fx << ' ' << k.fy << ' ' << k.cx << ' ' << k.cy << ' ' << k.width << ' '
      << k.height << '\n';
}

struct Pixel {
  long u = 0, v = 0;
  bool operator==(const Pixel&) const = default;
};

/// Nearest-pixel projection of a camera-frame point (z > 0 required).
inline Pixel project(const CameraIntrinsics& k, double x, double y, double z) {
  detail::require(z > 0 && std::isfinite(z), "project: non-positive depth ", z);
  return {std::lround(k.fx * x / z + k.cx), std::lround(k.fy * y / z + k.cy)};
}

/// (x, y, z) in meters, (r, g, b) in [0,1].
struct Point {
  double x = 0, y = 0, z = 0;
  double r = 0, g = 0, b = 0;
  bool operator==(const Point&) const = default;
};

struct PointCloud {
  std::vector<Point> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  /// [n,6] rows of x y z r g b.
  template <typename T>
  Tensor<T> to_tensor() const {
    Tensor<T> t({points.size(), 6});
    for (std::size_t i = 0; i < points.size(); ++i) {
      const Point& p = points[i];
      const double row[6] = {p.x, p.y, p.z, p.r, p.g, p.b};
      for (std::size_t j = 0; j < 6; ++j) t[i * 6 + j] = static_cast<T>(row[j]);
    }
    return t;
  }
};

struct DepthRange {
  double min = 0.3;  ///< exclusive
  double max = 8.0;  ///< inclusive
};

struct BackprojectResult {
  PointCloud cloud;
  std::vector<std::size_t> pixel_index;  ///< v * width + u of each point
  std::size_t invalid_pixels = 0;
};

/// Lifts every valid depth pixel (meters) to a camera-frame point.
inline BackprojectResult backproject_depth(const Image<float>& depth_m, const Image<float>& rgb,
                                           const CameraIntrinsics& k, DepthRange range = {}) {
  k.validate();
  detail::require(depth_m.channels == 1, "backproject: depth must have one channel");
  detail::require(depth_m.width == k.width && depth_m.height == k.height, "backproject: depth is ", depth_m.width, "x",
                  depth_m.height, ", intrinsics expect ", k.width, "x", k.height);
  detail::require(rgb.width == depth_m.width && rgb.height == depth_m.height && rgb.channels == 3,
                  "backproject: color image does not match depth");
  BackprojectResult r;
  r.cloud.points.reserve(depth_m.pixels());
  for (std::size_t v = 0; v < k.height; ++v) {
    for (std::size_t u = 0; u < k.width; ++u) {
      // Compare at the image's own precision so a stored 0.3f counts as 0.3 m.
      const float zf = depth_m.at(u, v);
      if (!(zf > static_cast<float>(range.min) && zf <= static_cast<float>(range.max))) {
        ++r.invalid_pixels;
        continue;
      }
      const double z = zf;
      Point p;
      p.z = z;
      p.x = (static_cast<double>(u) - k.cx) * z / k.fx;
      p.y = (static_cast<double>(v) - k.cy) * z / k.fy;
      p.r = rgb.at(u, v, 0), p.g = rgb.at(u, v, 1), p.b = rgb.at(u, v, 2);
      r.cloud.points.push_back(p);
      r.pixel_index.push_back(v * k.width + u);
    }
  }
  detail::require(!r.cloud.empty(), "backproject: every depth pixel is invalid");
  return r;
}

/// Millimeter depth image to meters (0 stays 0, i.e. invalid).
inline Image<float> depth_to_meters(const DepthImage& mm) {
  Image<float> out(mm.width, mm.height, 1);
  for (std::size_t i = 0; i < mm.data.size(); ++i) out.data[i] = static_cast<float>(mm.data[i]) / 1000.0f;
  return out;
}

/// Indices floor(i * n / target), cycling i mod n when n < target.
inline std::vector<std::size_t> uniform_downsample_indices(std::size_t n, std::size_t target) {
  detail::require(n >= 1, "downsample: empty cloud");
  detail::require(target >= 1, "downsample: target must be >= 1");
  std::vector<std::size_t> idx(target);
  for (std::size_t i = 0; i < target; ++i) idx[i] = n >= target ? i * n / target : i % n;
  return idx;
}

inline PointCloud select_points(const PointCloud& cloud, const std::vector<std::size_t>& idx) {
  PointCloud out;
  out.points.reserve(idx.size());
  for (std::size_t i : idx) out.points.push_back(cloud.points.at(i));
  return out;
}

inline PointCloud uniform_downsample(const PointCloud& cloud, std::size_t target) {
  return select_points(cloud, uniform_downsample_indices(cloud.size(), target));
}

/// Mirror image of the cloud matching a horizontal image flip.
inline PointCloud flip_cloud(PointCloud cloud) {
  for (Point& p : cloud.points) p.x = -p.x;
  return cloud;
}

struct Pose {
  double timestamp = 0;
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }

  Pose inverse() const {
    Pose inv;
    inv.timestamp = timestamp;
    inv.rotation = rotation.conjugate();
    inv.translation = -(inv.rotation * translation);
    return inv;
  }
};

inline PointCloud transform_cloud(PointCloud cloud, const Pose& pose) {
  const Eigen::Matrix3d r = pose.rotation.toRotationMatrix();
  for (Point& p : cloud.points) {
    const Eigen::Vector3d q = r * Eigen::Vector3d(p.x, p.y, p.z) + pose.translation;
    p.x = q.x(), p.y = q.y(), p.z = q.z();
  }
  return cloud;
}

/// Reads "timestamp tx ty tz qx qy qz qw" lines; '#' starts a comment line.
inline std::vector<Pose> load_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  detail::require(in.good(), path.string(), ": cannot open trajectory");
  std::vector<Pose> poses;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    double v[8];
    for (double& x : v) ls >> x;
    std::string extra;
    detail::require(!ls.fail() && !(ls >> extra), path.string(), ":", lineno,
                    ": expected 'timestamp tx ty tz qx qy qz qw'");
    for (double x : v) detail::require(std::isfinite(x), path.string(), ":", lineno, ": non-finite value");
    Pose p;
    p.timestamp = v[0];
    p.translation = {v[1], v[2], v[3]};
    Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    const double norm = q.norm();
    detail::require(std::abs(norm - 1.0) <= 1e-3, path.string(), ":", lineno, ": quaternion norm ", norm,
                    " is not unit");
    q.coeffs() /= norm;
    p.rotation = q;
    poses.push_back(p);
  }
  detail::require(!poses.empty(), path.string(), ": trajectory has no poses");
  return poses;
}

inline void save_trajectory(const std::filesystem::path& path, const std::vector<Pose>& poses) {
  std::ofstream out(path);
  detail::require(out.good(), path.string(), ": cannot open for writing");
  out << "# timestamp tx ty tz qx qy qz qw\n" << std::setprecision(17);
  for (const Pose& p : poses) {
    const auto& q = p.rotation;
    out << p.timestamp << ' ' << p.translation.x() << ' ' << p.translation.y() << ' ' << p.translation.z() << ' '
        << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << q.w() << '\n';
  }
}

/// Pose with the closest timestamp, if within `tolerance` seconds.
inline std::optional<Pose> nearest_pose(const std::vector<Pose>& poses, double timestamp, double tolerance = 0.02) {
  const Pose* best = nullptr;
  for (const Pose& p : poses)
    if (!best || std::abs(p.timestamp - timestamp) < std::abs(best->timestamp - timestamp)) best = &p;
  if (!best || std::abs(best->timestamp - timestamp) > tolerance) return std::nullopt;
  return *best;
}

}  // namespace pvnet
