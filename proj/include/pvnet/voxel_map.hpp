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

// Sparse semantic voxel map with recursive Bayesian label fusion.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "pvnet/geometry.hpp"

namespace pvnet {

/// Likelihoods are clamped to this before fusion so a single overconfident
/// observation cannot zero a class forever.
inline constexpr double kProbabilityFloor = 1e-6;

struct BayesResult {
  std::vector<double> probs;
  bool conflict = false;  ///< every product was zero; prior returned unchanged
};

/// posterior_i = prior_i * likelihood_i / Z.
inline BayesResult bayes_update(std::span<const double> prior, std::span<const double> likelihood) {
  detail::require(prior.size() == likelihood.size() && !prior.empty(), "bayes_update: ", prior.size(), " priors vs ",
                  likelihood.size(), " likelihoods");
  BayesResult r;
  r.probs.resize(prior.size());
  double z = 0.0;
  for (std::size_t i = 0; i < prior.size(); ++i) {
    detail::require(prior[i] >= 0 && likelihood[i] >= 0, "bayes_update: negative probability at class ", i);
    r.probs[i] = prior[i] * likelihood[i];
    z += r.probs[i];
  }
  if (!(z > 0.0)) {
    r.probs.assign(prior.begin(), prior.end());
    r.conflict = true;
    return r;
  }
  for (double& p : r.probs) p /= z;
  return r;
}

struct CellIndex {
  std::int64_t x = 0, y = 0, z = 0;
  auto operator<=>(const CellIndex&) const = default;
};

struct CellIndexHash {
  std::size_t operator()(const CellIndex& c) const {
    std::uint64_t h = static_cast<std::uint64_t>(c.x) * 0x9E3779B97F4A7C15ULL;
    h ^= static_cast<std::uint64_t>(c.y) * 0xC2B2AE3D27D4EB4FULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(c.z) * 0x165667B19E3779F9ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

struct LabeledVoxel {
  CellIndex cell;
  std::span<const double> probs;
  std::uint32_t observations = 0;
  std::array<double, 3> mean_color{};
};

struct IntegrateStats {
  std::size_t points = 0;
  std::size_t new_voxels = 0;
  std::size_t conflicts = 0;
};

/// Class distributions live in one flat array indexed by voxel slot; the
/// hash map only resolves cell -> slot.
class VoxelMap {
 public:
  VoxelMap(std::size_t classes, double edge) : classes_(classes), edge_(edge) {
    detail::require(classes >= 1, "voxel map: class count must be >= 1");
    detail::require(edge > 0 && std::isfinite(edge), "voxel map: edge length must be > 0");
  }

  std::size_t classes() const { return classes_; }
  double edge() const { return edge_; }
  std::size_t size() const { return cells_.size(); }
  bool empty() const { return cells_.empty(); }

  CellIndex cell_of(double x, double y, double z) const {
    return {static_cast<std::int64_t>(std::floor(x / edge_)), static_cast<std::int64_t>(std::floor(y / edge_)),
            static_cast<std::int64_t>(std::floor(z / edge_))};
  }

  std::array<double, 3> cell_center(const CellIndex& c) const {
    return {(static_cast<double>(c.x) + 0.5) * edge_, (static_cast<double>(c.y) + 0.5) * edge_,
            (static_cast<double>(c.z) + 0.5) * edge_};
  }

  /// Fuses one frame. `probs` is [n, classes] row-major, rows summing to 1.
  /// Points sharing a voxel update it sequentially in point order.
  IntegrateStats integrate(const PointCloud& camera_cloud, std::span<const double> probs, const Pose& pose) {
    detail::require(probs.size() == camera_cloud.size() * classes_, "integrate: ", camera_cloud.size(), " points but ",
                    probs.size(), " probabilities for ", classes_, " classes");
    for (std::size_t i = 0; i < camera_cloud.size(); ++i) {
      const double s = std::accumulate(probs.begin() + i * classes_, probs.begin() + (i + 1) * classes_, 0.0);
      detail::require(std::abs(s - 1.0) <= 1e-4, "integrate: probabilities of point ", i, " sum to ", s);
    }
    const PointCloud world = transform_cloud(camera_cloud, pose);
    IntegrateStats st;
    std::vector<double> lik(classes_);
    for (std::size_t i = 0; i < world.size(); ++i) {
      const Point& p = world.points[i];
      const CellIndex cell = cell_of(p.x, p.y, p.z);
      auto [it, inserted] = cells_.try_emplace(cell, cells_.size());
      const std::size_t slot = it->second;
      if (inserted) {
        ++st.new_voxels;
        order_.push_back(cell);
        probs_.insert(probs_.end(), classes_, 1.0 / static_cast<double>(classes_));
        counts_.push_back(0);
        colors_.insert(colors_.end(), 3, 0.0);
      }
      for (std::size_t k = 0; k < classes_; ++k) lik[k] = std::max(probs[i * classes_ + k], kProbabilityFloor);
      const std::span<double> cur(probs_.data() + slot * classes_, classes_);
      BayesResult r = bayes_update(cur, lik);
      if (r.conflict) ++st.conflicts;
      std::copy(r.probs.begin(), r.probs.end(), cur.begin());
      const double n = static_cast<double>(++counts_[slot]);
      double* col = colors_.data() + slot * 3;
      col[0] += (p.r - col[0]) / n;
      col[1] += (p.g - col[1]) / n;
      col[2] += (p.b - col[2]) / n;
      ++st.points;
    }
    return st;
  }

  /// Voxels sorted lexicographically by cell index.
  std::vector<LabeledVoxel> voxels() const {
    std::vector<CellIndex> sorted = order_;
    std::sort(sorted.begin(), sorted.end());
    std::vector<LabeledVoxel> out;
    out.reserve(sorted.size());
    for (const CellIndex& c : sorted) out.push_back(voxel(c));
    return out;
  }

  bool contains(const CellIndex& c) const { return cells_.count(c) != 0; }

  LabeledVoxel voxel(const CellIndex& c) const {
    const auto it = cells_.find(c);
    detail::require(it != cells_.end(), "voxel map: no voxel at (", c.x, ",", c.y, ",", c.z, ")");
    const std::size_t s = it->second;
    return {c,
            std::span<const double>(probs_.data() + s * classes_, classes_),
            counts_[s],
            {colors_[s * 3], colors_[s * 3 + 1], colors_[s * 3 + 2]}};
  }

 private:
  std::size_t classes_;
  double edge_;
  std::unordered_map<CellIndex, std::size_t, CellIndexHash> cells_;
  std::vector<CellIndex> order_;  // insertion order, slot i <-> order_[i]
  std::vector<double> probs_;
  std::vector<std::uint32_t> counts_;
  std::vector<double> colors_;
};

inline std::size_t argmax(std::span<const double> p) {
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

using Palette = std::vector<std::array<std::uint8_t, 3>>;

struct PlyVertex {
  double x = 0, y = 0, z = 0;
  std::uint8_t red = 0, green = 0, blue = 0;
  int label = 0;
  double confidence = 0;
};

/// ASCII PLY, one vertex per voxel at its cell center, colored by the palette
/// entry of the argmax class.
inline void export_ply(const VoxelMap& map, const Palette& palette, const std::filesystem::path& path) {
  detail::require(!map.empty(), "export_ply: map is empty");
  detail::require(palette.size() >= map.classes(), "export_ply: palette has ", palette.size(), " colors for ",
                  map.classes(), " classes");
  std::ostringstream body;
  body << std::setprecision(9);
  const auto voxels = map.voxels();
  for (const LabeledVoxel& v : voxels) {
    const auto c = map.cell_center(v.cell);
    const std::size_t label = argmax(v.probs);
    const auto& rgb = palette[label];
    // Narrow to the declared float type first: 9 digits round-trip a float,
    // not a double, and rounding the text later could land on the other float.
    body << float(c[0]) << ' ' << float(c[1]) << ' ' << float(c[2]) << ' ' << int(rgb[0]) << ' ' << int(rgb[1]) << ' '
         << int(rgb[2]) << ' ' << label << ' ' << float(v.probs[label]) << '\n';
  }
  std::ofstream out(path, std::ios::binary);
  detail::require(out.good(), path.string(), ": cannot open for writing");
  out << "ply\nformat ascii 1.0\nelement vertex " << voxels.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\n"
         "property int label\nproperty float confidence\nend_header\n"
      << body.str();
  detail::require(out.good(), path.string(), ": write failed");
}

inline std::vector<PlyVertex> parse_ply(const std::filesystem::path& path) {
  std::ifstream in(path);
  detail::require(in.good(), path.string(), ": cannot open");
  std::string line;
  std::getline(in, line);
  detail::require(line == "ply", path.string(), ": not a PLY file");
  std::size_t count = 0;
  bool saw_count = false;
  std::vector<std::string> props;
  while (std::getline(in, line) && line != "end_header") {
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "format") {
      std::string fmt;
      ls >> fmt;
      detail::require(fmt == "ascii", path.string(), ": only ASCII PLY is supported");
    } else if (kw == "element") {
      std::string name;
      ls >> name >> count;
      detail::require(name == "vertex" && !ls.fail(), path.string(), ": unexpected element '", line, "'");
      saw_count = true;
    } else if (kw == "property") {
      std::string type, name;
      ls >> type >> name;
      props.push_back(name);
    }
  }
  detail::require(line == "end_header" && saw_count, path.string(), ": incomplete header");
  const std::vector<std::string> expected{"x", "y", "z", "red", "green", "blue", "label", "confidence"};
  detail::require(props == expected, path.string(), ": unexpected vertex properties");
  std::vector<PlyVertex> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    int r, g, b;
    PlyVertex& v = out[i];
    in >> v.x >> v.y >> v.z >> r >> g >> b >> v.label >> v.confidence;
    detail::require(!in.fail(), path.string(), ": truncated at vertex ", i);
    v.red = static_cast<std::uint8_t>(r), v.green = static_cast<std::uint8_t>(g), v.blue = static_cast<std::uint8_t>(b);
  }
  return out;
}

struct VoxelAccuracy {
  double accuracy = 0;
  std::size_t compared = 0;
  std::size_t missing = 0;  ///< reference voxels absent from the prediction
};

/// Fraction of reference voxels whose argmax label the prediction matches.
inline VoxelAccuracy voxel_accuracy(const VoxelMap& predicted, const VoxelMap& reference) {
  detail::require(predicted.classes() == reference.classes(), "voxel_accuracy: class counts differ");
  detail::require(!reference.empty(), "voxel_accuracy: reference map is empty");
  VoxelAccuracy acc;
  std::size_t hits = 0;
  for (const LabeledVoxel& ref : reference.voxels()) {
    if (!predicted.contains(ref.cell)) {
      ++acc.missing;
      continue;
    }
    ++acc.compared;
    if (argmax(predicted.voxel(ref.cell).probs) == argmax(ref.probs)) ++hits;
  }
  acc.accuracy = static_cast<double>(hits) / static_cast<double>(acc.compared + acc.missing);
  return acc;
}

}  // namespace pvnet
