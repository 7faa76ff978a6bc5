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

// RGB branch: pooled conv backbone, chained context stacks and skip stacks,
// each ending in a 1x1 score conv.

#pragma once

#include <random>
#include <string>
#include <vector>

#include "pvnet/layers.hpp"

namespace pvnet {

struct LayerSpec {
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::string name;
};

/// Receptive field after each layer: RF_j = RF_{j-1} + (k_j - 1) * (product of
/// strides before layer j), starting from RF_0 = 1.
inline std::vector<std::size_t> receptive_field(const std::vector<LayerSpec>& layers) {
  detail::require(!layers.empty(), "receptive_field: empty layer list");
  std::vector<std::size_t> rf;
  std::size_t cur = 1, jump = 1;
  for (const LayerSpec& l : layers) {
    detail::require(l.kernel >= 1 && l.stride >= 1, "receptive_field: layer '", l.name, "' has k=", l.kernel,
                    " S=", l.stride);
    cur += (l.kernel - 1) * jump;
    jump *= l.stride;
    rf.push_back(cur);
  }
  return rf;
}

/// VGG-16 conv1_1 .. pool5, the reference topology for receptive-field checks.
inline std::vector<LayerSpec> vgg16_through_pool5() {
  std::vector<LayerSpec> l;
  const int convs[5] = {2, 2, 3, 3, 3};
  for (int b = 0; b < 5; ++b) {
    for (int i = 0; i < convs[b]; ++i)
      l.push_back({3, 1, "conv" + std::to_string(b + 1) + "_" + std::to_string(i + 1)});
    l.push_back({2, 2, "pool" + std::to_string(b + 1)});
  }
  return l;
}

struct StageSpec {
  std::size_t convs = 2;
  std::size_t kernel = 3;
  std::size_t width = 16;
  std::size_t pool = 2;
};

struct PixelNetConfig {
  std::size_t in_channels = 3;
  std::size_t classes = 6;
  std::vector<StageSpec> stages{{2, 3, 16, 2}, {2, 3, 32, 2}, {2, 3, 64, 2}, {2, 3, 64, 2}};
  std::vector<std::size_t> skip_taps{2, 3, 4};  ///< 1-based stages whose pooled output feeds a skip stack
  std::size_t skip_width = 32;
  std::size_t skip_kernel = 3;
  std::size_t context_stacks = 3;
  std::size_t context_kernel = 5;
  std::size_t context_width = 64;
  std::size_t fusion_stride = 4;  ///< score maps are fused at input / fusion_stride

  std::size_t total_stride() const {
    std::size_t s = 1;
    for (const auto& st : stages) s *= st.pool;
    return s;
  }

  void validate() const {
    detail::require(classes >= 1, "pixelnet: classes must be >= 1");
    detail::require(!stages.empty(), "pixelnet: backbone needs at least one stage");
    for (const auto& st : stages)
      detail::require(st.convs >= 1 && st.kernel % 2 == 1 && st.width >= 1 && st.pool >= 1,
                      "pixelnet: invalid backbone stage (convs ", st.convs, ", kernel ", st.kernel, ", width ",
                      st.width, ", pool ", st.pool, ")");
    for (std::size_t t : skip_taps)
      detail::require(t >= 1 && t <= stages.size(), "pixelnet: skip tap ", t, " names no backbone stage");
    detail::require(context_stacks >= 1, "pixelnet: need at least one context stack");
    detail::require(context_kernel % 2 == 1, "pixelnet: context kernel must be odd");
    detail::require(fusion_stride >= 1 && total_stride() % fusion_stride == 0, "pixelnet: fusion stride ",
                    fusion_stride, " must divide the backbone stride ", total_stride());
  }
};

template <typename T>
struct PixelOutput {
  std::vector<Var<T>> context_scores;  ///< one per context stack, at fusion resolution
  std::vector<Var<T>> skip_scores;     ///< one per skip tap, at fusion resolution
};

template <typename T>
class PixelNet {
 public:
  PixelNet(const PixelNetConfig& cfg, ParameterSet<T>& ps, std::mt19937_64& rng, const std::string& prefix = "pixel")
      : cfg_(cfg) {
    cfg_.validate();
    // Trunk at multiplier 1; context and skip stacks count as new layers (10).
    std::size_t cin = cfg_.in_channels;
    for (std::size_t s = 0; s < cfg_.stages.size(); ++s) {
      std::vector<ConvBnRelu<T>> convs;
      for (std::size_t j = 0; j < cfg_.stages[s].convs; ++j) {
        convs.push_back(ConvBnRelu<T>::make(ps, prefix + ".stage" + std::to_string(s + 1) + ".conv" + std::to_string(j + 1),
                                            cin, cfg_.stages[s].width, cfg_.stages[s].kernel, rng, T{1}));
        cin = cfg_.stages[s].width;
      }
      stages_.push_back(std::move(convs));
    }
    for (std::size_t i = 0; i < cfg_.context_stacks; ++i) {
      const std::string n = prefix + ".context" + std::to_string(i + 1);
      context_.push_back(ConvBnRelu<T>::make(ps, n + ".conv", cin, cfg_.context_width, cfg_.context_kernel, rng, T{10}));
      context_score_.push_back(Conv<T>::make(ps, n + ".score", cfg_.context_width, cfg_.classes, 1, rng, T{10}));
      cin = cfg_.context_width;
    }
    for (std::size_t t : cfg_.skip_taps) {
      const std::string n = prefix + ".skip" + std::to_string(t);
      skip_.push_back(
          ConvBnRelu<T>::make(ps, n + ".conv", cfg_.stages[t - 1].width, cfg_.skip_width, cfg_.skip_kernel, rng, T{10}));
      skip_score_.push_back(Conv<T>::make(ps, n + ".score", cfg_.skip_width, cfg_.classes, 1, rng, T{10}));
    }
  }

  const PixelNetConfig& config() const { return cfg_; }

  /// Layers from the input through the last context stack.
  std::vector<LayerSpec> layer_specs() const {
    std::vector<LayerSpec> l;
    for (std::size_t s = 0; s < cfg_.stages.size(); ++s) {
      for (std::size_t j = 0; j < cfg_.stages[s].convs; ++j)
        l.push_back({cfg_.stages[s].kernel, 1, "stage" + std::to_string(s + 1) + ".conv" + std::to_string(j + 1)});
      l.push_back({cfg_.stages[s].pool, cfg_.stages[s].pool, "stage" + std::to_string(s + 1) + ".pool"});
    }
    for (std::size_t i = 0; i < cfg_.context_stacks; ++i)
      l.push_back({cfg_.context_kernel, 1, "context" + std::to_string(i + 1)});
    return l;
  }

  /// `rgb` is [3,h,w] or [n,3,h,w]; h and w must be multiples of the backbone stride.
  PixelOutput<T> forward(const Var<T>& rgb, BnMode mode) const {
    const detail::ImageDims d = detail::image_dims(rgb.shape(), "pixelnet");
    const std::size_t stride = cfg_.total_stride();
    detail::require(d.c == cfg_.in_channels, "pixelnet: input has ", d.c, " channels, expected ", cfg_.in_channels);
    detail::require(d.h % stride == 0 && d.w % stride == 0, "pixelnet: input ", d.h, "x", d.w,
                    " is not a multiple of the backbone stride ", stride, "; pad by ", (stride - d.h % stride) % stride,
                    " rows and ", (stride - d.w % stride) % stride, " columns");
    const std::size_t fh = d.h / cfg_.fusion_stride, fw = d.w / cfg_.fusion_stride;

    std::vector<Var<T>> pooled;
    Var<T> x = rgb;
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      for (const auto& conv : stages_[s]) x = conv(x, mode);
      if (cfg_.stages[s].pool > 1) x = maxpool2d(x, cfg_.stages[s].pool, cfg_.stages[s].pool).output;
      pooled.push_back(x);
    }

    PixelOutput<T> out;
    for (std::size_t i = 0; i < context_.size(); ++i) {
      const Shape before = x.shape();
      x = context_[i](x, mode);
      detail::require(x.shape()[x.shape().size() - 1] == before.back() && x.shape()[x.shape().size() - 2] ==
                          before[before.size() - 2],
                      "pixelnet: context stack changed the spatial extent");
      out.context_scores.push_back(upsample_bilinear(context_score_[i](x), fh, fw));
    }
    for (std::size_t i = 0; i < skip_.size(); ++i) {
      const Var<T>& tap = pooled[cfg_.skip_taps[i] - 1];
      out.skip_scores.push_back(upsample_bilinear(skip_score_[i](skip_[i](tap, mode)), fh, fw));
    }
    return out;
  }

 private:
  PixelNetConfig cfg_;
  std::vector<std::vector<ConvBnRelu<T>>> stages_;
  std::vector<ConvBnRelu<T>> context_;
  std::vector<Conv<T>> context_score_;
  std::vector<ConvBnRelu<T>> skip_;
  std::vector<Conv<T>> skip_score_;
};

}  // namespace pvnet
