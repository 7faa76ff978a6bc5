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

// Training stages, keyframe mapping and evaluation on sequence directories.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pvnet/checkpoint.hpp"
#include "pvnet/config.hpp"
#include "pvnet/dataset.hpp"
#include "pvnet/gradcheck.hpp"
#include "pvnet/network.hpp"
#include "pvnet/objectives.hpp"
#include "pvnet/voxel_map.hpp"

namespace pvnet {

using Network = PixelVoxelNet<float>;

struct StageReport {
  std::vector<double> losses;  ///< one per optimizer step
  std::vector<std::filesystem::path> checkpoints;
  double seconds = 0;
};

namespace detail {

inline std::filesystem::path with_suffix(const std::filesystem::path& p, const std::string& suffix) {
  return p.string() + suffix;
}

/// Records of the parameters (and running stats) under any of `prefixes`.
inline CheckpointRecords records_with_prefix(const Network& net, const std::vector<std::string>& prefixes) {
  CheckpointRecords out;
  for (auto& rec : to_records(net.parameters().records()))
    for (const auto& p : prefixes)
      if (rec.first.rfind(p, 0) == 0) {
        out.push_back(std::move(rec));
        break;
      }
  return out;
}

inline void write_loss_csv(const std::filesystem::path& path, const std::vector<double>& losses,
                           const std::vector<double>& rates) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), path.string(), ": cannot open for writing");
  out << "step,lr,loss\n" << std::setprecision(9);
  for (std::size_t i = 0; i < losses.size(); ++i) out << i << ',' << rates[i] << ',' << losses[i] << '\n';
}

/// Training frames with labels, loaded once.
inline std::vector<RawFrame> training_frames(const PipelineConfig& cfg, const Dataset& ds) {
  std::vector<RawFrame> out;
  for (auto& [i, f] : load_frames(ds, split_indices(ds.frames.size(), cfg.holdout_every, false)))
    if (f.labeled()) out.push_back(std::move(f));
  require(!out.empty(), ds.root.string(), ": no labeled training frames");
  return out;
}

/// Epoch-style cycling through a shuffled order, reshuffled on wrap-around.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, std::mt19937_64& rng) : batch_(std::min(batch, n)), rng_(rng) {
    order_.resize(n);
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    reshuffle();
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> b;
    while (b.size() < batch_) {
      if (pos_ == order_.size()) reshuffle();
      b.push_back(order_[pos_++]);
    }
    return b;
  }

 private:
  void reshuffle() {
    // Fisher-Yates with explicit draws, identical on every standard library.
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_() % i]);
    pos_ = 0;
  }

  std::size_t batch_;
  std::mt19937_64& rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

inline std::vector<Sample> make_batch(const PipelineConfig& cfg, const std::vector<RawFrame>& frames,
                                      const CameraIntrinsics& k, const std::vector<std::size_t>& idx,
                                      std::mt19937_64& rng) {
  std::vector<Sample> out;
  for (std::size_t i : idx) out.push_back(preprocess(frames[i], k, cfg, draw_augment(cfg, rng)));
  return out;
}

inline std::vector<const Sample*> pointers(const std::vector<Sample>& s) {
  std::vector<const Sample*> out;
  for (const auto& x : s) out.push_back(&x);
  return out;
}

inline std::vector<std::uint8_t> stacked_labels(const std::vector<Sample>& batch, bool points) {
  std::vector<std::uint8_t> out;
  for (const auto& s : batch) {
    const auto& l = points ? s.point_labels : s.labels;
    out.insert(out.end(), l.begin(), l.end());
  }
  return out;
}

inline ClassStats image_class_stats(const PipelineConfig& cfg, const std::vector<RawFrame>& frames) {
  std::vector<LabelImage> resized;
  for (const auto& f : frames) resized.push_back(resize_nearest(f.labels, cfg.input_width, cfg.input_height));
  std::vector<std::span<const std::uint8_t>> views;
  for (const auto& l : resized) views.emplace_back(l.data);
  return class_frequencies(views, cfg.classes(), cfg.delta);
}

inline void check_finite(double loss, const char* stage, std::size_t step, const CheckpointRecords& last_good,
                         const std::filesystem::path& out) {
  if (std::isfinite(loss)) return;
  if (!last_good.empty()) save_checkpoint(out, last_good);
  fail(stage, " stage diverged at step ", step, " (loss ", loss, "); last good checkpoint written to ", out.string());
}

inline void sgd(const std::vector<Parameter<float>*>& params, double lr, const PipelineConfig& cfg) {
  sgd_momentum_step(params, lr, cfg.momentum, cfg.weight_decay);
}

}  // namespace detail

/// Trains PixelNet alone with the step schedule. The loss scores the plain sum
/// of every PixelNet map plus, with weight `pixel_aux_weight`, each map on its own.
inline StageReport train_pixel_stage(const PipelineConfig& cfg, const Dataset& ds, const std::filesystem::path& out,
                                     std::ostream& log) {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(cfg.seed ^ 0x5049584Cu);
  Network net(cfg.network, cfg.seed);
  const std::vector<RawFrame> frames = detail::training_frames(cfg, ds);
  const ClassStats stats = detail::image_class_stats(cfg, frames);
  const auto params = net.parameters().with_prefix({"pixel."});
  const std::size_t steps_per_epoch = (frames.size() + cfg.batch - 1) / cfg.batch;
  detail::BatchSampler sampler(frames.size(), cfg.batch, rng);

  StageReport report;
  std::vector<double> rates;
  CheckpointRecords last_good = detail::records_with_prefix(net, {"pixel."});
  for (std::size_t epoch = 0; epoch < cfg.pixel_epochs; ++epoch) {
    const double lr = lr_step(cfg.pixel_lr, static_cast<int>(epoch), static_cast<int>(cfg.pixel_step_epoch));
    double epoch_loss = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::vector<Sample> batch = detail::make_batch(cfg, frames, ds.intrinsics, sampler.next(), rng);
      const std::vector<std::uint8_t> labels = detail::stacked_labels(batch, false);
      const NetworkOutput<float> o = net.forward(detail::pointers(batch), BnMode::kTrain, Head::kPixelSum);
      std::vector<Var<float>> terms{weighted_nll_loss(o.scores, labels, stats.weights)};
      if (cfg.pixel_aux_weight > 0) {
        const float w = static_cast<float>(cfg.pixel_aux_weight / static_cast<double>(o.maps.size()));
        for (const auto& [name, m] : o.maps)
          terms.push_back(scale(weighted_nll_loss(upsample_bilinear(m, cfg.input_height, cfg.input_width), labels,
                                                  stats.weights),
                                w));
      }
      Var<float> loss = add(terms);
      detail::check_finite(loss.value()[0], "pixel", report.losses.size(), last_good, out);
      loss.backward();
      detail::sgd(params, lr, cfg);
      report.losses.push_back(loss.value()[0]);
      rates.push_back(lr);
      epoch_loss += loss.value()[0];
    }
    last_good = detail::records_with_prefix(net, {"pixel."});
    log << "pixel epoch " << epoch + 1 << "/" << cfg.pixel_epochs << " lr " << lr << " loss "
        << epoch_loss / static_cast<double>(steps_per_epoch) << '\n';
  }
  save_checkpoint(out, last_good);
  detail::write_loss_csv(detail::with_suffix(out, ".loss.csv"), report.losses, rates);
  report.checkpoints.push_back(out);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

/// Trains VoxelNet alone with the poly schedule on per-point labels.
inline StageReport train_voxel_stage(const PipelineConfig& cfg, const Dataset& ds, const std::filesystem::path& out,
                                     std::ostream& log) {
  detail::require(cfg.network.use_voxelnet, "voxel stage: use_voxelnet is off in the config");
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(cfg.seed ^ 0x564F58u);
  Network net(cfg.network, cfg.seed);
  const std::vector<RawFrame> frames = detail::training_frames(cfg, ds);
  std::vector<std::vector<std::uint8_t>> point_labels;
  for (const auto& f : frames) point_labels.push_back(preprocess(f, ds.intrinsics, cfg).point_labels);
  std::vector<std::span<const std::uint8_t>> views(point_labels.begin(), point_labels.end());
  const ClassStats stats = class_frequencies(views, cfg.classes(), cfg.delta);
  const auto params = net.parameters().with_prefix({"voxel."});
  detail::BatchSampler sampler(frames.size(), cfg.batch, rng);

  StageReport report;
  std::vector<double> rates;
  CheckpointRecords last_good = detail::records_with_prefix(net, {"voxel."});
  double window = 0;
  for (std::size_t it = 0; it < cfg.voxel_iters; ++it) {
    const double lr = lr_poly(cfg.voxel_lr, static_cast<long>(it), static_cast<long>(cfg.voxel_iters), cfg.poly_power);
    const std::vector<Sample> batch = detail::make_batch(cfg, frames, ds.intrinsics, sampler.next(), rng);
    Var<float> loss = weighted_nll_loss(net.voxel_scores(detail::pointers(batch), BnMode::kTrain),
                                        detail::stacked_labels(batch, true), stats.weights);
    detail::check_finite(loss.value()[0], "voxel", it, last_good, out);
    loss.backward();
    detail::sgd(params, lr, cfg);
    report.losses.push_back(loss.value()[0]);
    rates.push_back(lr);
    window += loss.value()[0];
    if ((it + 1) % 50 == 0 || it + 1 == cfg.voxel_iters) {
      last_good = detail::records_with_prefix(net, {"voxel."});
      const std::size_t span = it % 50 + 1;
      log << "voxel iter " << it + 1 << "/" << cfg.voxel_iters << " lr " << lr << " loss "
          << window / static_cast<double>(span) << '\n';
      window = 0;
    }
  }
  save_checkpoint(out, last_good);
  detail::write_loss_csv(detail::with_suffix(out, ".loss.csv"), report.losses, rates);
  report.checkpoints.push_back(out);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

/// Fine-tunes the whole network once per fusion stack: pass p trains both
/// branches plus stacks 1..p. Later stacks keep their zero initialization,
/// i.e. equal-weight fusion, until their pass. Pass p writes
/// `<out>.pass<p>` and its loss curve; the final pass also writes `out`.
inline StageReport train_joint_stage(const PipelineConfig& cfg, const Dataset& ds,
                                     const std::filesystem::path& pixel_ckpt, const std::filesystem::path& voxel_ckpt,
                                     const std::filesystem::path& out, std::ostream& log) {
  detail::require(!pixel_ckpt.empty() && std::filesystem::is_regular_file(pixel_ckpt),
                  "joint stage needs the pixel-stage checkpoint (got '", pixel_ckpt.string(), "')");
  if (cfg.network.use_voxelnet)
    detail::require(!voxel_ckpt.empty() && std::filesystem::is_regular_file(voxel_ckpt),
                    "joint stage needs the voxel-stage checkpoint (got '", voxel_ckpt.string(), "')");
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(cfg.seed ^ 0x4A4F494Eu);
  Network net(cfg.network, cfg.seed);
  net.load(load_checkpoint(pixel_ckpt));
  if (cfg.network.use_voxelnet) net.load(load_checkpoint(voxel_ckpt));
  const std::vector<RawFrame> frames = detail::training_frames(cfg, ds);
  const ClassStats stats = detail::image_class_stats(cfg, frames);
  detail::BatchSampler sampler(frames.size(), cfg.batch, rng);

  StageReport report;
  std::vector<std::string> prefixes{"pixel.", "voxel."};
  const auto& stacks = net.plan().stacks;
  CheckpointRecords last_good = to_records(net.parameters().records());
  for (std::size_t pass = 0; pass < stacks.size(); ++pass) {
    prefixes.push_back(Network::fusion_prefix(stacks[pass].name));
    const auto params = net.parameters().with_prefix(prefixes);
    std::vector<double> losses, rates;
    double window = 0;
    for (std::size_t it = 0; it < cfg.joint_iters; ++it) {
      const double lr =
          lr_poly(cfg.joint_lr, static_cast<long>(it), static_cast<long>(cfg.joint_iters), cfg.poly_power);
      const std::vector<Sample> batch = detail::make_batch(cfg, frames, ds.intrinsics, sampler.next(), rng);
      Var<float> loss = weighted_nll_loss(net.forward(detail::pointers(batch), BnMode::kTrain, Head::kFused).scores,
                                          detail::stacked_labels(batch, false), stats.weights);
      const double value = loss.value()[0];
      detail::check_finite(value, "joint", report.losses.size(), last_good, out);
      loss.backward();
      detail::sgd(params, lr, cfg);
      net.parameters().zero_grad();  // stacks not yet unfrozen
      losses.push_back(value);
      rates.push_back(lr);
      window += value;
      if ((it + 1) % 25 == 0 || it + 1 == cfg.joint_iters) {
        log << "joint pass " << pass + 1 << "/" << stacks.size() << " (" << stacks[pass].name << ") iter " << it + 1
            << "/" << cfg.joint_iters << " lr " << lr << " loss " << window / static_cast<double>(it % 25 + 1) << '\n';
        window = 0;
      }
    }
    last_good = to_records(net.parameters().records());
    const auto pass_path = detail::with_suffix(out, ".pass" + std::to_string(pass + 1));
    save_checkpoint(pass_path, last_good);
    detail::write_loss_csv(detail::with_suffix(pass_path, ".loss.csv"), losses, rates);
    report.checkpoints.push_back(pass_path);
    report.losses.insert(report.losses.end(), losses.begin(), losses.end());
  }
  save_checkpoint(out, last_good);
  report.checkpoints.push_back(out);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

/// Points with one class distribution each, ready for map integration.
struct LabeledCloud {
  PointCloud cloud;
  std::vector<double> probs;  ///< [n, classes]
};

/// One-hot distributions from the per-point ground truth; ignored points are dropped.
inline LabeledCloud ground_truth_probabilities(const Sample& s, std::size_t classes) {
  detail::require(s.point_labels.size() == s.cloud.size(), "ground truth: frame has no point labels");
  LabeledCloud out;
  for (std::size_t i = 0; i < s.cloud.size(); ++i) {
    const std::uint8_t l = s.point_labels[i];
    if (l == kIgnoreLabel) continue;
    detail::require(l < classes, "ground truth: label ", int(l), " out of range");
    out.cloud.points.push_back(s.cloud.points[i]);
    for (std::size_t k = 0; k < classes; ++k) out.probs.push_back(k == l ? 1.0 : 0.0);
  }
  return out;
}

/// Softmax of `scores` ([1,c,h,w]) at each point's projected pixel. Points
/// projecting outside the image are dropped.
inline LabeledCloud sample_probabilities(const Sample& s, const Tensor<float>& scores) {
  const Shape& sh = scores.shape();
  detail::require(sh.size() == 4 && sh[0] == 1, "sample_probabilities: expected [1,c,h,w] scores");
  const std::size_t c = sh[1], h = sh[2], w = sh[3];
  LabeledCloud out;
  std::vector<double> e(c);
  for (const Point& p : s.cloud.points) {
    const Pixel px = project(s.intrinsics, p.x, p.y, p.z);
    if (px.u < 0 || px.v < 0 || px.u >= static_cast<long>(w) || px.v >= static_cast<long>(h)) continue;
    const std::size_t at = static_cast<std::size_t>(px.v) * w + static_cast<std::size_t>(px.u);
    double mx = scores[at];
    for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, static_cast<double>(scores[k * h * w + at]));
    double z = 0;
    for (std::size_t k = 0; k < c; ++k) z += e[k] = std::exp(scores[k * h * w + at] - mx);
    out.cloud.points.push_back(p);
    for (std::size_t k = 0; k < c; ++k) out.probs.push_back(e[k] / z);
  }
  return out;
}

struct MappingReport {
  std::size_t keyframes = 0;
  std::size_t integrated = 0;
  std::size_t missing_pose = 0;
  std::size_t unreadable = 0;
  std::size_t points = 0;
  double seconds = 0;

  double frames_per_second() const { return seconds > 0 ? static_cast<double>(integrated) / seconds : 0.0; }
};

/// Integrates every `keyframe_stride`-th frame into `map`. `predict` turns a
/// preprocessed frame into a LabeledCloud. Frames that cannot be read or have
/// no pose within 0.02 s are skipped and counted.
template <typename Predict>
MappingReport build_map(const PipelineConfig& cfg, const Dataset& ds, const std::vector<Pose>& trajectory,
                        VoxelMap& map, Predict&& predict, std::ostream& log) {
  const auto start = std::chrono::steady_clock::now();
  MappingReport r;
  for (std::size_t i = 0; i < ds.frames.size(); i += cfg.keyframe_stride) {
    ++r.keyframes;
    const auto pose = nearest_pose(trajectory, ds.frames[i].timestamp);
    if (!pose) {
      ++r.missing_pose;
      log << "frame " << i << ": no pose within 0.02 s of t=" << ds.frames[i].timestamp << ", skipped\n";
      continue;
    }
    RawFrame raw;
    try {
      raw = load_frame(ds, i);
    } catch (const Error& e) {
      ++r.unreadable;
      log << "frame " << i << ": " << e.what() << ", skipped\n";
      continue;
    }
    const LabeledCloud lc = predict(preprocess(raw, ds.intrinsics, cfg));
    const IntegrateStats st = map.integrate(lc.cloud, lc.probs, *pose);
    ++r.integrated;
    r.points += st.points;
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

/// Class scores at input resolution for one sample, [1,c,h,w].
inline Tensor<float> predict_scores(const Network& net, Head head, const Sample& s) {
  return net.forward({&s}, BnMode::kEval, head).scores.value();
}

inline MappingReport run_mapping(const PipelineConfig& cfg, const Dataset& ds, const std::vector<Pose>& trajectory,
                                 const Network& net, Head head, VoxelMap& map, std::ostream& log) {
  return build_map(cfg, ds, trajectory, map,
                   [&](const Sample& s) { return sample_probabilities(s, predict_scores(net, head, s)); }, log);
}

/// The reference map: ground-truth labels pushed through the same mapping path.
inline VoxelMap ground_truth_map(const PipelineConfig& cfg, const Dataset& ds, const std::vector<Pose>& trajectory,
                                 std::ostream& log) {
  VoxelMap map(cfg.classes(), cfg.voxel_edge);
  build_map(cfg, ds, trajectory, map, [&](const Sample& s) { return ground_truth_probabilities(s, cfg.classes()); },
            log);
  return map;
}

/// Fraction of reference voxels whose exported label matches; a vertex
/// addresses the cell containing it.
inline VoxelAccuracy ply_voxel_accuracy(const std::vector<PlyVertex>& vertices, const VoxelMap& reference) {
  detail::require(!reference.empty(), "voxel accuracy: reference map is empty");
  std::map<CellIndex, int> labels;
  for (const PlyVertex& v : vertices) labels[reference.cell_of(v.x, v.y, v.z)] = v.label;
  VoxelAccuracy acc;
  std::size_t hits = 0;
  for (const LabeledVoxel& ref : reference.voxels()) {
    const auto it = labels.find(ref.cell);
    if (it == labels.end()) {
      ++acc.missing;
      continue;
    }
    ++acc.compared;
    if (static_cast<std::size_t>(it->second) == argmax(ref.probs)) ++hits;
  }
  acc.accuracy = static_cast<double>(hits) / static_cast<double>(acc.compared + acc.missing);
  return acc;
}

struct EvalReport {
  ConfusionMatrix confusion;
  SegMetrics metrics;
  std::size_t frames = 0;
  std::size_t skipped = 0;
  std::optional<VoxelAccuracy> voxel;
};

/// Accumulates a confusion matrix over the held-out labeled frames.
template <typename Predict>
EvalReport evaluate_frames(const PipelineConfig& cfg, const Dataset& ds, Predict&& predict_labels) {
  EvalReport r;
  r.confusion = ConfusionMatrix(cfg.classes());
  for (auto& [i, raw] : load_frames(ds, split_indices(ds.frames.size(), cfg.holdout_every, true), &r.skipped)) {
    if (!raw.labeled()) continue;
    const Sample s = preprocess(raw, ds.intrinsics, cfg);
    const std::vector<std::uint8_t> pred = predict_labels(s);
    r.confusion.add(s.labels, pred);
    ++r.frames;
  }
  detail::require(r.frames > 0, ds.root.string(), ": no labeled held-out frames to evaluate");
  r.metrics = seg_metrics(r.confusion);
  return r;
}

/// Per-pixel argmax of [1,c,h,w] scores.
inline std::vector<std::uint8_t> argmax_labels(const Tensor<float>& scores) {
  const std::size_t c = scores.shape()[1], hw = scores.shape()[2] * scores.shape()[3];
  std::vector<std::uint8_t> out(hw);
  for (std::size_t at = 0; at < hw; ++at) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (scores[k * hw + at] > scores[best * hw + at]) best = k;
    out[at] = static_cast<std::uint8_t>(best);
  }
  return out;
}

inline EvalReport evaluate(const PipelineConfig& cfg, const Dataset& ds, const Network& net, Head head) {
  return evaluate_frames(cfg, ds, [&](const Sample& s) { return argmax_labels(predict_scores(net, head, s)); });
}

/// One-line summary for the console.
inline std::string metrics_line(const EvalReport& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4) << "pixel_acc " << r.metrics.pixel_accuracy << "  mean_acc "
      << r.metrics.mean_accuracy << "  mean_iou " << r.metrics.mean_iou;
  if (r.voxel) out << "  voxel_acc " << r.voxel->accuracy;
  out << "  (" << r.frames << " frames)";
  return out.str();
}

/// Machine-readable key=value metrics.
inline std::string metrics_text(const EvalReport& r) {
  std::ostringstream out;
  out << std::setprecision(9);
  auto value = [&](double v) -> std::ostream& { return std::isnan(v) ? out << "nan" : out << v; };
  out << "frames=" << r.frames << '\n' << "pixel_accuracy=";
  value(r.metrics.pixel_accuracy) << "\nmean_accuracy=";
  value(r.metrics.mean_accuracy) << "\nmean_iou=";
  value(r.metrics.mean_iou) << '\n';
  for (std::size_t i = 0; i < r.metrics.class_accuracy.size(); ++i) {
    out << "class" << i << "_accuracy=";
    value(r.metrics.class_accuracy[i]) << "\nclass" << i << "_iou=";
    value(r.metrics.class_iou[i]) << '\n';
  }
  if (r.voxel) {
    out << "voxel_accuracy=";
    value(r.voxel->accuracy) << "\nvoxel_compared=" << r.voxel->compared << "\nvoxel_missing=" << r.voxel->missing
                             << '\n';
  }
  return out.str();
}

inline void write_metrics(const std::filesystem::path& path, const EvalReport& r) {
  std::ofstream out(path, std::ios::binary);
  detail::require(out.good(), path.string(), ": cannot open for writing");
  out << metrics_text(r);
  detail::require(out.good(), path.string(), ": write failed");
}

/// Random labeled samples matching the config's input size and point count,
/// with every point in front of the camera.
inline std::vector<Sample> random_samples(const PipelineConfig& cfg, std::size_t count, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t W = cfg.input_width, H = cfg.input_height;
  const double f = 0.8 * static_cast<double>(W);
  const CameraIntrinsics k{f, f, (static_cast<double>(W) - 1) / 2, (static_cast<double>(H) - 1) / 2, W, H};
  std::vector<Sample> out(count);
  for (Sample& s : out) {
    s.intrinsics = k;
    s.rgb = Tensor<float>({3, H, W});
    for (auto& v : s.rgb.values()) v = static_cast<float>(unit(rng));
    for (std::size_t i = 0; i < H * W; ++i) s.labels.push_back(static_cast<std::uint8_t>(rng() % cfg.classes()));
    for (std::size_t i = 0; i < cfg.points; ++i) {
      const double u = unit(rng) * static_cast<double>(W) - 0.5, v = unit(rng) * static_cast<double>(H) - 0.5;
      const double z = 1.0 + 2.0 * unit(rng);
      s.cloud.points.push_back({(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z, unit(rng), unit(rng), unit(rng)});
      s.point_labels.push_back(static_cast<std::uint8_t>(rng() % cfg.classes()));
    }
  }
  return out;
}

/// Finite-difference check of the full fused loss with respect to every
/// parameter, in double precision on two random samples. Fusion weights are
/// randomized first so the check does not sit at the uniform starting point.
inline GradcheckReport joint_loss_gradcheck(const PipelineConfig& cfg, double eps = 1e-5, std::size_t per_tensor = 0) {
  std::mt19937_64 rng(cfg.seed);
  PixelVoxelNet<double> net(cfg.network, cfg.seed);
  for (Parameter<double>* p : net.parameters().with_prefix({"fusion."}))
    p->var.mutable_value() = gaussian_init<double>(p->var.shape(), rng, 0.03);
  const std::vector<Sample> batch = random_samples(cfg, 2, rng);
  std::vector<double> weights;
  for (std::size_t k = 0; k < cfg.classes(); ++k) weights.push_back(k % 2 ? 2.0 : 1.0);
  const auto loss = [&] {
    return weighted_nll_loss(net.forward(detail::pointers(batch), BnMode::kTrain, Head::kFused).scores,
                             detail::stacked_labels(batch, false), weights);
  };
  return parameter_gradcheck<double>(loss, net.parameters().all(), eps, per_tensor);
}

}  // namespace pvnet
