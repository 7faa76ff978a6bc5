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

// Point-cloud branch: shared per-point MLP, max-pooled global feature tiled
// back onto every point, and the projection of per-point scores into an
// image-aligned score map.

#pragma once

#include <limits>
#include <random>
#include <string>
#include <vector>

#include "pvnet/geometry.hpp"
#include "pvnet/layers.hpp"

namespace pvnet {

struct VoxelNetConfig {
  std::size_t in_dim = 6;
  std::size_t classes = 6;
  std::vector<std::size_t> pre_widths{32, 64, 128};  ///< shared MLP before the max-pool
  std::vector<std::size_t> post_hidden{128, 64};     ///< after the concat; a final linear emits the classes
  bool all_levels = true;  ///< concat every pre-pool level with the global feature, else only the last

  std::size_t concat_width() const {
    std::size_t w = pre_widths.back();
    if (all_levels)
      for (std::size_t l : pre_widths) w += l;
    else
      w += pre_widths.back();
    return w;
  }

  void validate() const {
    detail::require(classes >= 1 && in_dim >= 1, "voxelnet: classes and input width must be >= 1");
    detail::require(!pre_widths.empty(), "voxelnet: need at least one pre-pool layer");
    for (std::size_t w : pre_widths) detail::require(w >= 1, "voxelnet: layer widths must be >= 1");
    for (std::size_t w : post_hidden) detail::require(w >= 1, "voxelnet: layer widths must be >= 1");
  }
};

template <typename T>
struct VoxelOutput {
  Var<T> scores;               ///< [clouds * n, classes]
  std::vector<Var<T>> global;  ///< per cloud, [1, last pre-pool width]
  std::vector<Var<T>> levels;  ///< per-point features of every pre-pool level
};

template <typename T>
class VoxelNet {
 public:
  VoxelNet(const VoxelNetConfig& cfg, ParameterSet<T>& ps, std::mt19937_64& rng, const std::string& prefix = "voxel")
      : cfg_(cfg) {
    cfg_.validate();
    std::size_t d = cfg_.in_dim;
    for (std::size_t i = 0; i < cfg_.pre_widths.size(); ++i) {
      pre_.push_back(PointBnRelu<T>::make(ps, prefix + ".pre" + std::to_string(i + 1), d, cfg_.pre_widths[i], rng, T{1}));
      d = cfg_.pre_widths[i];
    }
    d = cfg_.concat_width();
    for (std::size_t i = 0; i < cfg_.post_hidden.size(); ++i) {
      post_.push_back(
          PointBnRelu<T>::make(ps, prefix + ".post" + std::to_string(i + 1), d, cfg_.post_hidden[i], rng, T{1}));
      d = cfg_.post_hidden[i];
    }
    out_w_ = &ps.add(prefix + ".out.weight", gaussian_init<T>({cfg_.classes, d}, rng), T{1});
    out_b_ = &ps.add(prefix + ".out.bias", Tensor<T>({cfg_.classes}), T{1});
  }

  const VoxelNetConfig& config() const { return cfg_; }

  /// `points` is [clouds * n, in_dim], clouds stacked along rows, each `n` points.
  /// Batch-norm statistics span every point; the max-pool runs per cloud.
  VoxelOutput<T> forward(const Var<T>& points, std::size_t n, BnMode mode) const {
    const Shape& s = points.shape();
    detail::require(s.size() == 2 && s[1] == cfg_.in_dim, "voxelnet: expected [points, ", cfg_.in_dim, "], got ",
                    shape_string(s));
    detail::require(n >= 1 && s[0] >= 1, "voxelnet: empty cloud");
    detail::require(s[0] % n == 0, "voxelnet: ", s[0], " rows do not split into clouds of ", n);
    const std::size_t clouds = s[0] / n;

    VoxelOutput<T> out;
    Var<T> x = points;
    for (const auto& layer : pre_) {
      x = layer(x, mode);
      out.levels.push_back(x);
    }
    std::vector<Range> parts;
    for (std::size_t k = 0; k < clouds; ++k) parts.push_back({k * n, (k + 1) * n});
    std::vector<Var<T>> tiled;
    for (const Var<T>& part : clouds == 1 ? std::vector<Var<T>>{x} : slice(x, 0, parts)) {
      Var<T> g = reduce_max_over_points(part);
      out.global.push_back(g);
      tiled.push_back(tile_rows(g, n));
    }
    std::vector<Var<T>> cat{tiled.size() == 1 ? tiled[0] : concat(tiled, 0)};
    if (cfg_.all_levels)
      cat.insert(cat.end(), out.levels.begin(), out.levels.end());
    else
      cat.push_back(out.levels.back());
    x = concat(cat, 1);
    for (const auto& layer : post_) x = layer(x, mode);
    out.scores = pointwise_linear(x, out_w_->var, out_b_->var);
    return out;
  }

 private:
  VoxelNetConfig cfg_;
  std::vector<PointBnRelu<T>> pre_;
  std::vector<PointBnRelu<T>> post_;
  Parameter<T>* out_w_ = nullptr;
  Parameter<T>* out_b_ = nullptr;
};

template <typename T>
struct ScatterResult {
  Var<T> map;                       ///< [c,h,w]
  std::vector<std::uint8_t> mask;   ///< [h,w], 1 where a point landed
  std::vector<long> winner;         ///< [h,w], winning point index or -1
  std::size_t dropped = 0;          ///< points projecting outside the image
};

/// Writes each point's scores at its projected pixel; the nearest point (then
/// the lowest index) wins a pixel. Uncovered pixels hold zeros.
template <typename T>
ScatterResult<T> reshape_backproject(const Var<T>& scores, const PointCloud& cloud, const CameraIntrinsics& k,
                                     std::size_t h, std::size_t w) {
  detail::require(k.fx > 0 && k.fy > 0 && std::isfinite(k.fx) && std::isfinite(k.fy) && std::isfinite(k.cx) &&
                      std::isfinite(k.cy),
                  "reshape_backproject: degenerate intrinsics");
  const Shape& s = scores.shape();
  detail::require(s.size() == 2 && s[0] == cloud.size(), "reshape_backproject: scores ", shape_string(s), " for ",
                  cloud.size(), " points");
  const std::size_t c = s[1];
  ScatterResult<T> r;
  r.mask.assign(h * w, 0);
  r.winner.assign(h * w, -1);
  std::vector<double> best_z(h * w, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point& p = cloud.points[i];
    detail::require(p.z > 0, "reshape_backproject: point ", i, " has non-positive depth ", p.z);
    const Pixel px = project(k, p.x, p.y, p.z);
    if (px.u < 0 || px.v < 0 || px.u >= static_cast<long>(w) || px.v >= static_cast<long>(h)) {
      ++r.dropped;
      continue;
    }
    const std::size_t at = static_cast<std::size_t>(px.v) * w + static_cast<std::size_t>(px.u);
    if (p.z < best_z[at]) {
      best_z[at] = p.z;
      r.winner[at] = static_cast<long>(i);
      r.mask[at] = 1;
    }
  }
  Tensor<T> out({c, h, w});
  const T* sv = scores.value().data();
  for (std::size_t at = 0; at < h * w; ++at) {
    if (r.winner[at] < 0) continue;
    const std::size_t i = static_cast<std::size_t>(r.winner[at]);
    for (std::size_t k2 = 0; k2 < c; ++k2) out[k2 * h * w + at] = sv[i * c + k2];
  }
  r.map = detail::make_result<T>(std::move(out), {scores}, [winner = r.winner, c, hw = h * w](Node<T>& self) {
    Tensor<T>& g = self.inputs[0]->grad_slot();
    for (std::size_t at = 0; at < hw; ++at) {
      if (winner[at] < 0) continue;
      const std::size_t i = static_cast<std::size_t>(winner[at]);
      for (std::size_t k2 = 0; k2 < c; ++k2) g[i * c + k2] += self.grad[k2 * hw + at];
    }
  });
  return r;
}

}  // namespace pvnet
