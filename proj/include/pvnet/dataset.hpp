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

// RGB-D sequence directories and the per-frame preprocessing into network
// samples.
//
// A sequence directory holds intrinsics.txt ("fx fy cx cy width height") and
// associations.txt with lines "timestamp rgb depth [labels]", paths relative
// to the directory. RGB is binary PPM, depth 16-bit PGM in millimeters
// (0 = invalid), labels 8-bit PGM with 255 = ignore.

#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pvnet/config.hpp"
#include "pvnet/geometry.hpp"
#include "pvnet/image.hpp"
#include "pvnet/network.hpp"
#include "pvnet/objectives.hpp"

namespace pvnet {

struct FrameRecord {
  double timestamp = 0;
  std::filesystem::path rgb, depth, labels;  ///< labels empty when absent
};

struct Dataset {
  std::filesystem::path root;
  CameraIntrinsics intrinsics;
  std::vector<FrameRecord> frames;
};

inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.root = dir;
  detail::require(std::filesystem::is_directory(dir), dir.string(), ": not a directory");
  ds.intrinsics = load_intrinsics(dir / "intrinsics.txt");
  const auto list = dir / "associations.txt";
  std::ifstream in(list);
  detail::require(in.good(), list.string(), ": cannot open");
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    FrameRecord r;
    std::string rgb, depth, labels, extra;
    ls >> r.timestamp >> rgb >> depth;
    detail::require(!ls.fail(), list.string(), ":", lineno, ": expected 'timestamp rgb depth [labels]'");
    if (ls >> labels) r.labels = dir / labels;
    detail::require(!(ls >> extra), list.string(), ":", lineno, ": trailing fields");
    r.rgb = dir / rgb;
    r.depth = dir / depth;
    ds.frames.push_back(std::move(r));
  }
  detail::require(!ds.frames.empty(), list.string(), ": no frames listed");
  return ds;
}

/// Frame indices of the training split (`holdout == false`) or the held-out
/// split: the last frame of every group of `every` is held out.
inline std::vector<std::size_t> split_indices(std::size_t n, std::size_t every, bool holdout) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i)
    if ((i % every == every - 1) == holdout) out.push_back(i);
  return out;
}

struct RawFrame {
  Image<float> rgb;    ///< [0,1]
  Image<float> depth;  ///< meters
  LabelImage labels;   ///< empty when unlabeled
  double timestamp = 0;

  bool labeled() const { return !labels.data.empty(); }
};

inline RawFrame load_frame(const Dataset& ds, std::size_t index) {
  const FrameRecord& r = ds.frames.at(index);
  const CameraIntrinsics& k = ds.intrinsics;
  RawFrame f;
  f.timestamp = r.timestamp;
  const RgbImage rgb = read_rgb(r.rgb);
  const DepthImage depth = read_depth(r.depth);
  detail::require(rgb.width == k.width && rgb.height == k.height, r.rgb.string(), ": ", rgb.width, "x", rgb.height,
                  " does not match the intrinsics ", k.width, "x", k.height);
  detail::require(depth.width == k.width && depth.height == k.height, r.depth.string(), ": ", depth.width, "x",
                  depth.height, " does not match the intrinsics ", k.width, "x", k.height);
  f.rgb = to_unit_float(rgb);
  f.depth = depth_to_meters(depth);
  if (!r.labels.empty()) {
    f.labels = read_labels(r.labels);
    detail::require(f.labels.width == k.width && f.labels.height == k.height, r.labels.string(),
                    ": label image does not match the intrinsics");
  }
  return f;
}

/// Loads the listed frames, skipping (and logging) the unreadable ones.
inline std::vector<std::pair<std::size_t, RawFrame>> load_frames(const Dataset& ds,
                                                                 const std::vector<std::size_t>& indices,
                                                                 std::size_t* skipped = nullptr) {
  std::vector<std::pair<std::size_t, RawFrame>> out;
  std::size_t bad = 0;
  for (std::size_t i : indices) {
    try {
      out.emplace_back(i, load_frame(ds, i));
    } catch (const Error& e) {
      ++bad;
      std::cerr << "skipping frame " << i << ": " << e.what() << '\n';
    }
  }
  if (skipped) *skipped = bad;
  return out;
}

struct Augment {
  bool flip = false;
  double zoom = 1.0;
};

/// Resizes to the network resolution, builds the downsampled cloud and
/// applies the augmentation jointly to image, labels, cloud and camera.
inline Sample preprocess(const RawFrame& f, const CameraIntrinsics& k, const PipelineConfig& cfg,
                         const Augment& aug = {}) {
  const std::size_t W = cfg.input_width, H = cfg.input_height;
  Image<float> rgb = resize_bilinear(f.rgb, W, H);
  if (cfg.smoothing) rgb = bilateral_smooth(rgb);
  LabelImage labels;
  if (f.labeled()) labels = resize_nearest(f.labels, W, H);

  const BackprojectResult bp = backproject_depth(f.depth, f.rgb, k, cfg.depth);
  const std::vector<std::size_t> idx = uniform_downsample_indices(bp.cloud.size(), cfg.points);
  Sample s;
  s.cloud = select_points(bp.cloud, idx);
  if (f.labeled())
    for (std::size_t i : idx) s.point_labels.push_back(f.labels.data[bp.pixel_index[i]]);
  s.intrinsics = k.scaled(W, H);

  if (aug.flip) {
    rgb = flip_horizontal(rgb);
    if (f.labeled()) labels = flip_horizontal(labels);
    s.cloud = flip_cloud(std::move(s.cloud));
    s.intrinsics = s.intrinsics.mirrored();
  }
  if (aug.zoom != 1.0) {
    rgb = zoom_bilinear(rgb, aug.zoom);
    if (f.labeled()) labels = zoom_nearest(labels, aug.zoom, kIgnoreLabel);
    s.intrinsics = s.intrinsics.zoomed(aug.zoom);
  }
  s.rgb = to_chw<float>(rgb);
  s.labels = std::move(labels.data);
  return s;
}

/// Draws a training augmentation: flip with probability 1/2, zoom uniform in
/// [1 - a, 1 + a].
inline Augment draw_augment(const PipelineConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Augment a;
  const double u = unit(rng), z = unit(rng);
  a.flip = cfg.augment_flip && u < 0.5;
  a.zoom = 1.0 + cfg.augment_scale * (2.0 * z - 1.0);
  return a;
}

}  // namespace pvnet
