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

// The combined Pixel-Voxel network: both branches, the scatter of point
// scores into the image plane and the fusion stacks on top.

#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "pvnet/checkpoint.hpp"
#include "pvnet/fusion.hpp"
#include "pvnet/pixelnet.hpp"
#include "pvnet/voxelnet.hpp"

namespace pvnet {

struct NetworkConfig {
  PixelNetConfig pixel;
  VoxelNetConfig voxel;
  bool use_voxelnet = true;
  std::string fusion_plan;  ///< empty selects the default chain

  std::size_t classes() const { return pixel.classes; }

  void validate() const {
    pixel.validate();
    if (use_voxelnet) {
      voxel.validate();
      detail::require(voxel.classes == pixel.classes, "network: pixel branch has ", pixel.classes,
                      " classes, voxel branch ", voxel.classes);
    }
    plan();  // throws on a malformed or incomplete fusion plan
  }

  FusionPlan plan() const {
    return build_fusion_topology(fusion_plan.empty() ? default_fusion_spec(use_voxelnet) : fusion_plan,
                                 pixel.context_stacks, pixel.skip_taps.size(), use_voxelnet);
  }
};

/// One network input: image, its camera and a fixed-size point cloud.
struct Sample {
  Tensor<float> rgb;                       ///< [3,h,w] in [0,1]
  std::vector<std::uint8_t> labels;        ///< h*w, empty when unlabeled
  PointCloud cloud;                        ///< camera frame
  std::vector<std::uint8_t> point_labels;  ///< per point, empty when unlabeled
  CameraIntrinsics intrinsics;             ///< matches the rgb resolution
};

/// kPixelSum scores the plain sum of the PixelNet maps (the pixel stage),
/// kVoxel the scattered VoxelNet scores alone (the voxel stage; pixels no
/// point reaches score zero). kFused runs both branches and the fusion plan.
enum class Head { kPixelSum, kVoxel, kFused };

template <typename T>
struct NetworkOutput {
  Var<T> scores;                       ///< [n,c,h,w] at input resolution
  std::map<std::string, Var<T>> maps;  ///< base score maps, [n,c,h/s,w/s]
  Var<T> voxel_scores;                 ///< [n*points, c] when the voxel branch ran
  std::size_t dropped_points = 0;      ///< points that fell outside the fusion grid
};

template <typename T>
class PixelVoxelNet {
 public:
  PixelVoxelNet(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg), plan_(cfg.plan()) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    pixel_ = std::make_unique<PixelNet<T>>(cfg_.pixel, ps_, rng);
    if (cfg_.use_voxelnet) voxel_ = std::make_unique<VoxelNet<T>>(cfg_.voxel, ps_, rng);
    fusion_ = std::make_unique<FusionNetwork<T>>(plan_, cfg_.classes(), ps_, rng);
  }

  const NetworkConfig& config() const { return cfg_; }
  const FusionPlan& plan() const { return plan_; }
  ParameterSet<T>& parameters() { return ps_; }
  const ParameterSet<T>& parameters() const { return ps_; }
  const PixelNet<T>& pixel() const { return *pixel_; }
  const FusionNetwork<T>& fusion() const { return *fusion_; }
  bool has_voxelnet() const { return voxel_ != nullptr; }

  const VoxelNet<T>& voxel() const {
    detail::require(voxel_ != nullptr, "network: the voxel branch is disabled");
    return *voxel_;
  }

  /// Parameter name prefixes: "pixel.", "voxel." and one per fusion stack.
  static std::string fusion_prefix(const std::string& stack) { return "fusion." + stack + "."; }

  void load(const CheckpointRecords& records) { ps_.assign(records); }

  /// Head matching what a checkpoint trained: fused if it holds fusion
  /// weights, voxel-only if it holds nothing but VoxelNet weights.
  static Head head_for(const CheckpointRecords& records) {
    bool pixel = false;
    for (const auto& [name, t] : records) {
      if (name.rfind("fusion.", 0) == 0) return Head::kFused;
      pixel = pixel || name.rfind("pixel.", 0) == 0;
    }
    return pixel || records.empty() ? Head::kPixelSum : Head::kVoxel;
  }

  static Var<T> rgb_batch(const std::vector<const Sample*>& batch) {
    detail::require(!batch.empty(), "network: empty batch");
    const Shape s = batch[0]->rgb.shape();
    detail::require(s.size() == 3, "network: rgb must be [3,h,w]");
    Tensor<T> t({batch.size(), s[0], s[1], s[2]});
    const std::size_t plane = shape_numel(s);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      detail::require(batch[i]->rgb.shape() == s, "network: batch images differ in size");
      for (std::size_t j = 0; j < plane; ++j) t[i * plane + j] = static_cast<T>(batch[i]->rgb[j]);
    }
    return Var<T>::constant(std::move(t));
  }

  static Var<T> point_batch(const std::vector<const Sample*>& batch) {
    detail::require(!batch.empty(), "network: empty batch");
    const std::size_t n = batch[0]->cloud.size();
    Tensor<T> t({batch.size() * n, 6});
    for (std::size_t i = 0; i < batch.size(); ++i) {
      detail::require(batch[i]->cloud.size() == n, "network: batch clouds differ in size");
      const Tensor<T> one = batch[i]->cloud.template to_tensor<T>();
      std::copy(one.data(), one.data() + one.numel(), t.data() + i * n * 6);
    }
    return Var<T>::constant(std::move(t));
  }

  /// Per-point scores of the voxel branch alone, [n*points, c].
  Var<T> voxel_scores(const std::vector<const Sample*>& batch, BnMode mode) const {
    return voxel().forward(point_batch(batch), batch[0]->cloud.size(), mode).scores;
  }

  NetworkOutput<T> forward(const std::vector<const Sample*>& batch, BnMode mode, Head head) const {
    const Var<T> rgb = rgb_batch(batch);
    const std::size_t h = rgb.shape()[2], w = rgb.shape()[3];
    NetworkOutput<T> out;
    if (head == Head::kVoxel) {
      scatter_voxel_scores(batch, mode, h, w, out);
      out.scores = upsample_bilinear(out.maps.at("voxel"), h, w);
      return out;
    }
    const PixelOutput<T> px = pixel_->forward(rgb, mode);
    for (std::size_t i = 0; i < px.context_scores.size(); ++i)
      out.maps["context:" + std::to_string(i + 1)] = px.context_scores[i];
    for (std::size_t i = 0; i < px.skip_scores.size(); ++i)
      out.maps["skip:" + std::to_string(i + 1)] = px.skip_scores[i];

    if (head == Head::kPixelSum) {
      std::vector<Var<T>> all;
      for (const auto& m : px.context_scores) all.push_back(m);
      for (const auto& m : px.skip_scores) all.push_back(m);
      out.scores = upsample_bilinear(add(all), h, w);
      return out;
    }

    if (voxel_) scatter_voxel_scores(batch, mode, h, w, out);
    out.scores = upsample_bilinear((*fusion_)(out.maps), h, w);
    return out;
  }

 private:
  // VoxelNet scores scattered into the fusion grid as out.maps["voxel"].
  void scatter_voxel_scores(const std::vector<const Sample*>& batch, BnMode mode, std::size_t h, std::size_t w,
                            NetworkOutput<T>& out) const {
    const std::size_t fh = h / cfg_.pixel.fusion_stride, fw = w / cfg_.pixel.fusion_stride;
    const std::size_t n = batch[0]->cloud.size();
    out.voxel_scores = voxel_scores(batch, mode);
    std::vector<Range> parts;
    for (std::size_t i = 0; i < batch.size(); ++i) parts.push_back({i * n, (i + 1) * n});
    const std::vector<Var<T>> per_cloud =
        batch.size() == 1 ? std::vector<Var<T>>{out.voxel_scores} : slice(out.voxel_scores, 0, parts);
    std::vector<Var<T>> maps;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const CameraIntrinsics k = batch[i]->intrinsics.scaled(fw, fh);
      ScatterResult<T> s = reshape_backproject(per_cloud[i], batch[i]->cloud, k, fh, fw);
      out.dropped_points += s.dropped;
      maps.push_back(reshape(s.map, {1, cfg_.classes(), fh, fw}));
    }
    out.maps["voxel"] = maps.size() == 1 ? maps[0] : concat(maps, 0);
  }

  NetworkConfig cfg_;
  FusionPlan plan_;
  ParameterSet<T> ps_;
  std::unique_ptr<PixelNet<T>> pixel_;
  std::unique_ptr<VoxelNet<T>> voxel_;
  std::unique_ptr<FusionNetwork<T>> fusion_;
};

}  // namespace pvnet
