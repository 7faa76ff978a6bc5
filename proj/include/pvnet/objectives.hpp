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

// Class-weighted loss, class statistics, learning-rate policies and
// segmentation metrics.

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "pvnet/ops.hpp"

namespace pvnet {

inline constexpr std::uint8_t kIgnoreLabel = 255;
inline constexpr double kDefaultRareThreshold = 0.025;

/// 2^ceil(log10(delta / p)). Rare classes (p < delta) get weights >= 1.
inline double class_weight(double p, double delta) {
  detail::require(p > 0.0, "class_weight: frequency must be > 0, got ", p);
  detail::require(delta > 0.0, "class_weight: threshold must be > 0, got ", delta);
  // The 1e-12 slack keeps exact powers of ten (delta/p == 10^k) on k
  // instead of rounding up on the last ulp of log10.
  return std::exp2(std::ceil(std::log10(delta / p) - 1e-12));
}

struct ClassStats {
  std::vector<double> frequencies;
  std::vector<double> weights;
  double delta = kDefaultRareThreshold;
  std::vector<std::size_t> rare_classes;  ///< p_j < delta and p_j > 0
  double rare_frequency_sum = 0.0;        ///< compare against the 15% rule
  std::vector<std::size_t> absent_classes;  ///< p_j == 0, weight forced to 1
  std::uint64_t labeled_pixels = 0;
};

/// Uniform weights with no frequency information.
inline ClassStats uniform_class_stats(std::size_t classes) {
  ClassStats s;
  s.frequencies.assign(classes, 1.0 / static_cast<double>(classes));
  s.weights.assign(classes, 1.0);
  return s;
}

/// Per-class pixel frequencies over every non-ignored label.
inline ClassStats class_frequencies(const std::vector<std::span<const std::uint8_t>>& label_images,
                                    std::size_t classes, double delta = kDefaultRareThreshold) {
  detail::require(classes >= 1 && classes < kIgnoreLabel, "class_frequencies: class count ", classes, " unsupported");
  std::vector<std::uint64_t> counts(classes, 0);
  std::uint64_t total = 0;
  for (const auto& img : label_images) {
    for (std::uint8_t l : img) {
      if (l == kIgnoreLabel) continue;
      detail::require(l < classes, "class_frequencies: label ", int(l), " out of range [0,", classes, ")");
      ++counts[l];
      ++total;
    }
  }
  detail::require(total > 0, "class_frequencies: no labeled pixels");
  ClassStats s;
  s.delta = delta;
  s.labeled_pixels = total;
  for (std::size_t j = 0; j < classes; ++j) {
    const double p = static_cast<double>(counts[j]) / static_cast<double>(total);
    s.frequencies.push_back(p);
    if (counts[j] == 0) {
      s.weights.push_back(1.0);
      s.absent_classes.push_back(j);
      continue;
    }
    s.weights.push_back(class_weight(p, delta));
    if (p < delta) {
      s.rare_classes.push_back(j);
      s.rare_frequency_sum += p;
    }
  }
  return s;
}

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;  ///< d loss / d scores
  std::size_t contributing = 0;
};

/// Mean over non-ignored locations of -w_y * log softmax(scores)_y.
/// `scores` is [c,h,w], [n,c,h,w] or [n,c]; `labels` has one entry per location.
template <typename T>
LossResult<T> weighted_nll(const Tensor<T>& scores, std::span<const std::uint8_t> labels,
                           std::span<const double> class_weights) {
  const Shape& xs = scores.shape();
  detail::require(xs.size() >= 2 && xs.size() <= 4, "weighted_nll: unsupported scores rank ", xs.size());
  const detail::AxisSplit sp = detail::split_axis(xs, detail::channel_axis(xs.size()));
  const std::size_t c = sp.extent;
  detail::require(labels.size() == sp.outer * sp.inner, "weighted_nll: ", labels.size(), " labels for ",
                  sp.outer * sp.inner, " locations");
  detail::require(class_weights.size() == c, "weighted_nll: ", class_weights.size(), " weights for ", c, " classes");

  LossResult<T> r;
  r.grad = Tensor<T>(xs);
  for (std::uint8_t l : labels) {
    if (l == kIgnoreLabel) continue;
    detail::require(l < c, "weighted_nll: label ", int(l), " out of range [0,", c, ")");
    ++r.contributing;
  }
  detail::require(r.contributing > 0, "weighted_nll: every location is ignored");
  const double inv_n = 1.0 / static_cast<double>(r.contributing);
  std::vector<double> prob(c);
  double total = 0.0;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::uint8_t y = labels[o * sp.inner + i];
      if (y == kIgnoreLabel) continue;
      const T* base = scores.data() + o * c * sp.inner + i;
      double mx = base[0];
      for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, static_cast<double>(base[k * sp.inner]));
      double denom = 0.0;
      for (std::size_t k = 0; k < c; ++k) denom += std::exp(base[k * sp.inner] - mx);
      const double log_denom = std::log(denom);
      const double w = class_weights[y];
      total += -w * (base[y * sp.inner] - mx - log_denom);
      T* g = r.grad.data() + o * c * sp.inner + i;
      for (std::size_t k = 0; k < c; ++k) {
        const double p = std::exp(base[k * sp.inner] - mx - log_denom);
        g[k * sp.inner] = static_cast<T>(w * (p - (k == y ? 1.0 : 0.0)) * inv_n);
      }
    }
  }
  r.loss = total * inv_n;
  return r;
}

/// Differentiable form of weighted_nll producing a scalar node.
template <typename T>
Var<T> weighted_nll_loss(const Var<T>& scores, std::vector<std::uint8_t> labels, std::vector<double> class_weights) {
  LossResult<T> r = weighted_nll(scores.value(), labels, class_weights);
  return detail::make_result<T>(Tensor<T>({1}, static_cast<T>(r.loss)), {scores},
                                [grad = std::move(r.grad)](Node<T>& self) {
    Tensor<T>& g = self.inputs[0]->grad_slot();
    const T up = self.grad[0];
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += up * grad[i];
  });
}

/// Step policy: `base` until `step_epoch`, then base / `factor`.
inline double lr_step(double base, int epoch, int step_epoch = 15, double factor = 10.0) {
  detail::require(epoch >= 0, "lr_step: negative epoch ", epoch);
  return epoch < step_epoch ? base : base / factor;
}

/// Polynomial policy: base * (1 - iter/max_iter)^power.
inline double lr_poly(double base, long iter, long max_iter, double power = 0.9) {
  detail::require(max_iter > 0, "lr_poly: max_iter must be > 0");
  detail::require(iter >= 0 && iter <= max_iter, "lr_poly: iteration ", iter, " outside [0,", max_iter, "]");
  return base * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

/// counts(i, j): pixels of true class i predicted as j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 0) : classes_(classes), counts_(classes * classes, 0) {}

  std::size_t classes() const { return classes_; }
  std::uint64_t& operator()(std::size_t truth, std::size_t pred) { return counts_[truth * classes_ + pred]; }
  std::uint64_t operator()(std::size_t truth, std::size_t pred) const { return counts_[truth * classes_ + pred]; }

  void add(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> pred) {
    detail::require(truth.size() == pred.size(), "confusion: ", truth.size(), " labels vs ", pred.size(),
                    " predictions");
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth[i] == kIgnoreLabel) continue;
      detail::require(truth[i] < classes_ && pred[i] < classes_, "confusion: label out of range at ", i);
      ++(*this)(truth[i], pred[i]);
    }
  }

  std::uint64_t row_total(std::size_t i) const {
    std::uint64_t s = 0;
    for (std::size_t j = 0; j < classes_; ++j) s += (*this)(i, j);
    return s;
  }
  std::uint64_t column_total(std::size_t j) const {
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < classes_; ++i) s += (*this)(i, j);
    return s;
  }
  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto v : counts_) s += v;
    return s;
  }

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

struct SegMetrics {
  double pixel_accuracy = 0.0;
  double mean_accuracy = 0.0;
  double mean_iou = 0.0;
  std::vector<double> class_accuracy;  ///< NaN for excluded classes
  std::vector<double> class_iou;       ///< NaN for excluded classes
  std::vector<std::size_t> excluded_from_accuracy;  ///< t_i == 0
  std::vector<std::size_t> excluded_from_iou;       ///< empty union
};

inline SegMetrics seg_metrics(const ConfusionMatrix& cm) {
  detail::require(cm.classes() > 0, "seg_metrics: empty confusion matrix");
  const std::uint64_t total = cm.total();
  detail::require(total > 0, "seg_metrics: confusion matrix has no counts");
  SegMetrics m;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t diag = 0;
  double acc_sum = 0.0, iou_sum = 0.0;
  std::size_t acc_n = 0, iou_n = 0;
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    const double nii = static_cast<double>(cm(i, i));
    const double ti = static_cast<double>(cm.row_total(i));
    const double uni = ti + static_cast<double>(cm.column_total(i)) - nii;
    diag += cm(i, i);
    if (ti > 0) {
      m.class_accuracy.push_back(nii / ti);
      acc_sum += nii / ti;
      ++acc_n;
    } else {
      m.class_accuracy.push_back(nan);
      m.excluded_from_accuracy.push_back(i);
    }
    if (uni > 0) {
      m.class_iou.push_back(nii / uni);
      iou_sum += nii / uni;
      ++iou_n;
    } else {
      m.class_iou.push_back(nan);
      m.excluded_from_iou.push_back(i);
    }
  }
  m.pixel_accuracy = static_cast<double>(diag) / static_cast<double>(total);
  m.mean_accuracy = acc_n ? acc_sum / static_cast<double>(acc_n) : 0.0;
  m.mean_iou = iou_n ? iou_sum / static_cast<double>(iou_n) : 0.0;
  return m;
}

}  // namespace pvnet
