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

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. The last two criteria drive the pvnet binary through
// a full synth -> train -> map -> eval run, twice.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pvnet/pvnet.hpp"

namespace fs = std::filesystem;
using namespace pvnet;
using D = double;
using VarD = Var<D>;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  // Records a failed sub-check; the first few are reported.
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    if (pass || ++extra_failures_ < 3) detail << (pass ? "" : "; ") << what;
    pass = false;
  }

 private:
  int extra_failures_ = 0;
};

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

Tensor<D> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<D> t(std::move(s));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ------------------------------------------------------------ 1: gradients

struct OpCheck {
  std::string name;
  bool smooth;
  std::function<GradcheckReport()> run;
};

// Scalarizes an op output with a fixed random projection so every output
// element carries a distinct weight.
VarD project(const VarD& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return dot_constant(y, random_tensor(y.shape(), rng));
}

GradcheckReport check(const Tensor<D>& x, const std::function<VarD(const VarD&)>& f, std::uint64_t seed = 99) {
  return finite_difference_gradcheck<D>([&](const VarD& v) { return project(f(v), seed); }, x, 1e-6);
}

std::vector<OpCheck> op_checks() {
  std::mt19937_64 rng(2024);
  const Tensor<D> img = random_tensor({2, 3, 6, 4}, rng);
  const Tensor<D> w3 = random_tensor({4, 3, 3, 3}, rng), b4 = random_tensor({4}, rng);
  const Tensor<D> pts = random_tensor({7, 5}, rng), pw = random_tensor({4, 5}, rng), pb = random_tensor({4}, rng);
  const Tensor<D> gamma = random_tensor({3}, rng, 0.5, 1.5), beta = random_tensor({3}, rng);
  const Tensor<D> maps = random_tensor({2, 4, 3, 3}, rng), other = random_tensor({2, 4, 3, 3}, rng);
  auto c = [](const Tensor<D>& t) { return VarD::constant(t); };

  std::vector<OpCheck> out;
  auto add_check = [&](std::string name, bool smooth, std::function<GradcheckReport()> f) {
    out.push_back({std::move(name), smooth, std::move(f)});
  };
  add_check("conv2d/input", true, [=] { return check(img, [&](const VarD& v) { return conv2d(v, c(w3), c(b4), 1, 1); }); });
  add_check("conv2d/weight", true, [=] { return check(w3, [&](const VarD& v) { return conv2d(c(img), v, c(b4), 1, 1); }); });
  add_check("conv2d/bias", true, [=] { return check(b4, [&](const VarD& v) { return conv2d(c(img), c(w3), v, 1, 1); }); });
  const Tensor<D> odd = random_tensor({2, 3, 7, 5}, rng);
  add_check("conv2d/stride2", true, [=] { return check(odd, [&](const VarD& v) { return conv2d(v, c(w3), 2, 1); }); });
  add_check("pointwise_linear/input", true,
            [=] { return check(pts, [&](const VarD& v) { return pointwise_linear(v, c(pw), c(pb)); }); });
  add_check("pointwise_linear/weight", true,
            [=] { return check(pw, [&](const VarD& v) { return pointwise_linear(c(pts), v, c(pb)); }); });
  add_check("pointwise_linear/bias", true,
            [=] { return check(pb, [&](const VarD& v) { return pointwise_linear(c(pts), c(pw), v); }); });
  add_check("batchnorm/input", true, [=] {
    BatchNormState<D> st(3);
    return check(img, [&](const VarD& v) { return batchnorm(v, c(gamma), c(beta), st, BnMode::kTrain); });
  });
  add_check("batchnorm/gamma", true, [=] {
    BatchNormState<D> st(3);
    return check(gamma, [&](const VarD& v) { return batchnorm(c(img), v, c(beta), st, BnMode::kTrain); });
  });
  add_check("batchnorm/beta", true, [=] {
    BatchNormState<D> st(3);
    return check(beta, [&](const VarD& v) { return batchnorm(c(img), c(gamma), v, st, BnMode::kTrain); });
  });
  add_check("relu", false, [=] { return check(img, [](const VarD& v) { return relu(v); }); });
  add_check("maxpool2d", false, [=] { return check(img, [](const VarD& v) { return maxpool2d(v, 2, 2).output; }); });
  add_check("reduce_max_over_points", false,
            [=] { return check(pts, [](const VarD& v) { return reduce_max_over_points(v); }); });
  const Tensor<D> row = random_tensor({1, 5}, rng);
  add_check("tile_rows", true, [=] { return check(row, [](const VarD& v) { return tile_rows(v, 4); }); });
  add_check("concat/slice", true, [=] {
    return check(maps, [&](const VarD& v) {
      const auto parts = slice(v, 0, {{0, 1}, {1, 2}});
      return concat(std::vector<VarD>{parts[1], c(other), parts[0]}, 0);
    });
  });
  add_check("channel_concat/channel_slice", true, [=] {
    return check(maps, [&](const VarD& v) {
      const auto parts = channel_slice(channel_concat(std::vector<VarD>{v, c(other)}), {{1, 3}, {5, 8}});
      return add(parts[0], slice(parts[1], 1, {{0, 2}})[0]);
    });
  });
  add_check("softmax_over_channels", true, [=] { return check(maps, [](const VarD& v) { return softmax_over_channels(v); }); });
  add_check("hadamard", true, [=] { return check(maps, [&](const VarD& v) { return hadamard(v, c(other)); }); });
  add_check("hadamard/square", true, [=] { return check(maps, [](const VarD& v) { return hadamard(v, v); }); });
  add_check("add/scale/sum", true, [=] {
    return check(maps, [&](const VarD& v) { return scale(add(std::vector<VarD>{v, c(other), v}), D(-1.5)); });
  });
  add_check("sum", true, [=] {
    return finite_difference_gradcheck<D>([](const VarD& v) { return sum(hadamard(v, v)); }, maps, 1e-6);
  });
  add_check("reshape", true, [=] { return check(maps, [](const VarD& v) { return reshape(v, {8, 9}); }); });
  add_check("upsample_bilinear", true, [=] { return check(maps, [](const VarD& v) { return upsample_bilinear(v, 7, 5); }); });
  add_check("weighted_nll_loss", true, [=] {
    std::vector<std::uint8_t> labels;
    std::mt19937_64 r(5);
    for (std::size_t i = 0; i < 18; ++i) labels.push_back(i == 4 ? kIgnoreLabel : static_cast<std::uint8_t>(r() % 4));
    return finite_difference_gradcheck<D>(
        [&](const VarD& v) { return weighted_nll_loss(v, labels, {1.0, 2.0, 0.5, 4.0}); }, maps, 1e-6);
  });
  add_check("reshape_backproject", true, [=] {
    std::mt19937_64 r(6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const CameraIntrinsics k{6.0, 6.0, 3.5, 2.5, 8, 6};
    PointCloud cloud;
    for (int i = 0; i < 20; ++i) {
      const double z = 1.0 + u(r), px = u(r) * 9 - 0.5, py = u(r) * 7 - 0.5;
      cloud.points.push_back({(px - k.cx) * z / k.fx, (py - k.cy) * z / k.fy, z, 0, 0, 0});
    }
    std::mt19937_64 s(7);
    return check(random_tensor({20, 3}, s), [&](const VarD& v) { return reshape_backproject(v, cloud, k, 6, 8).map; });
  });
  add_check("fusion/maps", true, [=] {
    std::mt19937_64 r(8);
    ParameterSet<D> ps;
    FusionStack<D> stack(2, 4, ps, "f", r);
    stack.weight().var.mutable_value() = random_tensor({8, 8, 1, 1}, r, -0.5, 0.5);
    return check(maps, [&](const VarD& v) { return stack({v, c(other)}).fused; });
  });
  add_check("fusion/weights", true, [=] {
    std::mt19937_64 r(9);
    ParameterSet<D> ps;
    FusionStack<D> stack(2, 4, ps, "f", r);
    return check(random_tensor({8, 8, 1, 1}, r, -0.5, 0.5), [&](const VarD& v) {
      const VarD logits = conv2d(channel_concat(std::vector<VarD>{c(maps), c(other)}), v, 1, 0);
      const auto w = channel_slice(softmax_over_channels(logits), {{0, 4}, {4, 8}});
      return add(hadamard(c(maps), w[0]), hadamard(c(other), w[1]));
    });
  });
  return out;
}

Outcome gradient_suite() {
  Outcome o;
  const auto start = std::chrono::steady_clock::now();
  double worst_smooth = 0, worst_other = 0;
  for (const OpCheck& op : op_checks()) {
    const GradcheckReport r = op.run();
    const double tol = op.smooth ? 1e-4 : 1e-3;
    (op.smooth ? worst_smooth : worst_other) = std::max(op.smooth ? worst_smooth : worst_other, r.max_relative_error);
    std::ostringstream what;
    what << op.name << " " << r.max_relative_error;
    o.expect(r.max_relative_error < tol, what.str());
  }
  std::istringstream toy(
      "classes = 2\ninput_width = 8\ninput_height = 8\npoints = 16\nbackbone = 1x3,1x4\nskip_taps = 1,2\n"
      "skip_width = 3\ncontext_stacks = 2\ncontext_kernel = 3\ncontext_width = 3\nfusion_stride = 2\n"
      "voxel_pre = 3,4\nvoxel_post = 4\nseed = 4\n");
  const GradcheckReport toy_r = joint_loss_gradcheck(parse_config(toy, "toy"));
  o.expect(toy_r.max_relative_error < 1e-3, "joint loss 8x8 " + std::to_string(toy_r.max_relative_error));
  const GradcheckReport pipe_r = joint_loss_gradcheck(load_config(fs::path(PVNET_SOURCE_DIR) / "configs" / "gradcheck.cfg"));
  o.expect(pipe_r.max_relative_error < 1e-3, "joint loss 16x16 " + std::to_string(pipe_r.max_relative_error));
  const double s = seconds_since(start);
  o.expect(s < 60.0, "took " + std::to_string(s) + " s");
  if (o.pass)
    o.detail << "smooth ops max " << worst_smooth << ", kinked ops max " << worst_other << ", joint loss "
             << toy_r.max_relative_error << " (8x8) / " << pipe_r.max_relative_error << " (16x16), " << s << " s";
  return o;
}

// ------------------------------------------------------------ 2: fusion

Outcome fusion_algebra() {
  Outcome o;
  std::mt19937_64 rng(31);
  // Weights sum to one under random parameters.
  {
    ParameterSet<D> ps;
    FusionStack<D> stack(3, 4, ps, "f", rng);
    stack.weight().var.mutable_value() = random_tensor({12, 12, 1, 1}, rng, -2, 2);
    stack.bias().var.mutable_value() = random_tensor({12}, rng, -1, 1);
    std::vector<VarD> maps;
    for (int j = 0; j < 3; ++j) maps.push_back(VarD::constant(random_tensor({2, 4, 5, 6}, rng, -3, 3)));
    const auto r = stack(maps);
    double worst = 0;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t p = 0; p < 30; ++p) {
        double total = 0;
        for (const auto& w : r.weights)
          for (std::size_t k = 0; k < 4; ++k) total += w.value()[(n * 4 + k) * 30 + p];
        worst = std::max(worst, std::abs(total - 1.0));
      }
    o.expect(worst <= 1e-6, "weight sum off by " + std::to_string(worst));
    o.detail << "max |sum-1| " << worst;
  }
  // Zero parameters: every weight is exactly 1/(n c) and the output equals
  // (1/(n c)) * sum of the maps, accumulated in the same order.
  for (const auto [n, c] : {std::pair<std::size_t, std::size_t>{2, 3}, {3, 4}, {4, 6}}) {
    for (const bool single : {false, true}) {
      ParameterSet<float> ps;
      const FusionStack<float> stack(n, c, ps, "z", rng);
      std::vector<Var<float>> maps;
      for (std::size_t j = 0; j < n; ++j) {
        Tensor<float> t({1, c, 4, 5});
        std::normal_distribution<float> g(0.0f, 5.0f);
        for (auto& v : t.values()) v = g(rng);
        maps.push_back(Var<float>::constant(single ? reshape(Var<float>::constant(t), {c, 4, 5}).value() : t));
      }
      const auto r = stack(maps);
      const float inv = 1.0f / static_cast<float>(n * c);
      bool weights_exact = true, fused_exact = true;
      for (const auto& w : r.weights)
        for (float v : w.value().values()) weights_exact &= v == inv;
      for (std::size_t i = 0; i < r.fused.value().numel(); ++i) {
        float ref = maps[0].value()[i] * inv;
        for (std::size_t j = 1; j < n; ++j) ref += maps[j].value()[i] * inv;
        fused_exact &= r.fused.value()[i] == ref;
      }
      o.expect(weights_exact, "zero-parameter weights are not exactly 1/(n c)");
      o.expect(fused_exact, "zero-parameter fusion differs from the scaled sum");
    }
  }
  // Shift invariance: adding a constant to every logit (via the bias) leaves
  // weights and output unchanged. Dyadic inputs keep every sum exact, so the
  // comparison is bitwise.
  {
    ParameterSet<D> ps;
    FusionStack<D> stack(3, 2, ps, "s", rng);
    auto dyadic = [&](Shape s, int range) {
      Tensor<D> t(std::move(s));
      for (auto& v : t.values()) v = static_cast<D>(static_cast<long>(rng() % (2 * range + 1)) - range) / 64.0;
      return t;
    };
    stack.weight().var.mutable_value() = dyadic({6, 6, 1, 1}, 64);
    stack.bias().var.mutable_value() = dyadic({6}, 64);
    std::vector<VarD> maps;
    for (int j = 0; j < 3; ++j) maps.push_back(VarD::constant(dyadic({1, 2, 3, 4}, 128)));
    const auto base = stack(maps);
    bool exact = true;
    for (const double shift : {1.0, -8.0, 32.0, 1024.0}) {
      for (auto& v : stack.bias().var.mutable_value().values()) v += shift;
      const auto moved = stack(maps);
      for (auto& v : stack.bias().var.mutable_value().values()) v -= shift;
      exact &= moved.fused.value() == base.fused.value();
      for (std::size_t j = 0; j < 3; ++j) exact &= moved.weights[j].value() == base.weights[j].value();
    }
    o.expect(exact, "bias shift changed the fusion");
  }
  if (o.pass) o.detail << ", zero-parameter fusion and shift invariance bit-exact";
  return o;
}

// ------------------------------------------------------------ 3: permutation

Outcome voxelnet_permutation() {
  Outcome o;
  std::mt19937_64 rng(41);
  ParameterSet<float> ps;
  const VoxelNet<float> net(VoxelNetConfig{}, ps, rng);  // 32,64,128 / 128,64, six classes
  for (auto& [name, bn] : ps.batchnorms()) {
    std::uniform_real_distribution<float> m(-0.1f, 0.1f), v(0.5f, 1.5f);
    for (auto& x : bn->running_mean.values()) x = m(rng);
    for (auto& x : bn->running_var.values()) x = v(rng);
  }
  const std::size_t n = 96;
  Tensor<float> cloud({n, 6});
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (auto& x : cloud.values()) x = u(rng);
  const auto ref = net.forward(Var<float>::constant(cloud), n, BnMode::kEval);
  const std::size_t c = ref.scores.shape()[1];
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t global_mismatch = 0, score_mismatch = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng() % i]);
    Tensor<float> p({n, 6});
    for (std::size_t i = 0; i < n; ++i) std::copy_n(cloud.data() + perm[i] * 6, 6, p.data() + i * 6);
    const auto out = net.forward(Var<float>::constant(p), n, BnMode::kEval);
    global_mismatch += !(out.global[0].value() == ref.global[0].value());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < c; ++k)
        if (out.scores.value()[i * c + k] != ref.scores.value()[perm[i] * c + k]) {
          ++score_mismatch;
          i = n;
          break;
        }
  }
  o.expect(global_mismatch == 0, std::to_string(global_mismatch) + " permutations changed the global feature");
  o.expect(score_mismatch == 0, std::to_string(score_mismatch) + " permutations did not permute the scores");
  if (o.pass) o.detail << "1000 permutations of " << n << " points: global feature and scores exact";
  return o;
}

// ------------------------------------------------------------ 4: receptive field

Outcome receptive_fields() {
  Outcome o;
  auto layers = vgg16_through_pool5();
  const std::size_t pool5 = receptive_field(layers).back();
  auto fc6 = layers;
  fc6.push_back({7, 1, "fc6"});
  const std::size_t with_fc6 = receptive_field(fc6).back();
  for (int i = 0; i < 6; ++i) layers.push_back({5, 1, "context" + std::to_string(i + 1)});
  const std::size_t context = receptive_field(layers).back();
  o.expect(pool5 == 212, "pool5 " + std::to_string(pool5));
  o.expect(with_fc6 == 404, "fc6 " + std::to_string(with_fc6));
  o.expect(context == 980, "six context stacks " + std::to_string(context));
  o.detail << "pool5 " << pool5 << ", fc6 " << with_fc6 << ", six 5x5 context stacks " << context;
  return o;
}

// ------------------------------------------------------------ 5: class weights

Outcome class_weights() {
  Outcome o;
  const double a = class_weight(0.025, 0.025), b = class_weight(0.30, 0.025), c = class_weight(0.001, 0.025);
  o.expect(a == 1.0 && b == 0.5 && c == 4.0,
           "weights " + std::to_string(a) + ", " + std::to_string(b) + ", " + std::to_string(c));
  double prev = std::numeric_limits<double>::infinity();
  std::size_t violations = 0;
  for (int i = 1; i <= 1000; ++i) {
    const double w = class_weight(i / 1000.0, 0.025);
    violations += w > prev;
    prev = w;
  }
  o.expect(violations == 0, std::to_string(violations) + " monotonicity violations");
  o.detail << "w(0.025)=" << a << " w(0.30)=" << b << " w(0.001)=" << c << ", non-increasing on 1000 points";
  return o;
}

// ------------------------------------------------------------ 6: Bayes fold

Outcome bayes_fold() {
  Outcome o;
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> u(0.001, 1.0);
  double worst = 0;
  std::size_t drops = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t c = 2 + trial % 9, k = 1 + trial % 10;
    std::vector<double> post(c, 1.0 / double(c)), logp(c, 0.0);
    for (std::size_t s = 0; s < k; ++s) {
      std::vector<double> l(c);
      for (double& x : l) x = u(rng);
      post = bayes_update(post, l).probs;
      for (std::size_t i = 0; i < c; ++i) logp[i] += std::log(l[i]);
    }
    const double mx = *std::max_element(logp.begin(), logp.end());
    double z = 0;
    for (double& v : logp) z += v = std::exp(v - mx);
    for (std::size_t i = 0; i < c; ++i) worst = std::max(worst, std::abs(post[i] - logp[i] / z));

    // The same evidence again never lowers the probability of the argmax.
    std::vector<double> l(c);
    for (double& x : l) x = u(rng);
    std::vector<double> p = bayes_update(std::vector<double>(c, 1.0 / double(c)), l).probs;
    const std::size_t top = argmax(p);
    for (int rep = 0; rep < 20; ++rep) {
      const std::vector<double> next = bayes_update(p, l).probs;
      drops += next[top] < p[top] || argmax(next) != top;
      p = next;
    }
  }
  o.expect(worst <= 1e-9, "fold differs from normalized product by " + std::to_string(worst));
  o.expect(drops == 0, std::to_string(drops) + " repeated updates lowered the argmax probability");
  o.detail << "max |fold - product| " << worst << " over k<=10, argmax probability never decreased";
  return o;
}

// ------------------------------------------------------------ 7: metrics

Outcome metrics() {
  Outcome o;
  ConfusionMatrix cm(2);
  cm(0, 0) = 3, cm(0, 1) = 1, cm(1, 1) = 4;
  const SegMetrics m = seg_metrics(cm);
  o.expect(m.pixel_accuracy == 0.875 && m.mean_accuracy == 0.875 && m.mean_iou == 0.775,
           "[[3,1],[0,4]] gave " + std::to_string(m.pixel_accuracy) + ", " + std::to_string(m.mean_accuracy) + ", " +
               std::to_string(m.mean_iou));
  std::mt19937_64 rng(71);
  std::size_t violations = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t c = 2 + t % 7;
    ConfusionMatrix r(c);
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j) r(i, j) = rng() % (i == j ? 50 : 20);
    r(0, 0) += 1;
    const SegMetrics s = seg_metrics(r);
    violations += s.mean_iou > s.mean_accuracy;
  }
  o.expect(violations == 0, std::to_string(violations) + " random matrices with mIoU > mean accuracy");
  o.detail << "(" << m.pixel_accuracy << ", " << m.mean_accuracy << ", " << m.mean_iou
           << "), mIoU <= mean accuracy on 200 random matrices";
  return o;
}

// ------------------------------------------------------------ 8, 9: desk runs

struct RunResult {
  bool ok = false;
  std::string error;
  double train_seconds = 0;
  double pixel_accuracy = std::nan(""), voxel_accuracy = std::nan("");
};

std::map<std::string, std::string> read_key_values(const fs::path& p) {
  std::map<std::string, std::string> kv;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);)
    if (const auto eq = line.find('='); eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  return kv;
}

RunResult desk_run(const fs::path& dir) {
  RunResult r;
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cli = PVNET_CLI, cfg = (fs::path(PVNET_SOURCE_DIR) / "configs" / "desk.cfg").string();
  const std::string d = dir.string(), log = (dir / "run.log").string();
  auto run = [&](const std::string& args) {
    const std::string cmd = "\"" + cli + "\" " + args + " >> \"" + log + "\" 2>&1";
    if (std::system(cmd.c_str()) != 0) {
      r.error = "command failed: pvnet " + args + " (see " + log + ")";
      return false;
    }
    return true;
  };
  if (!run("synth --seed 7 --frames 40 --out \"" + d + "/data\"")) return r;
  const auto start = std::chrono::steady_clock::now();
  if (!run("train --stage pixel --config \"" + cfg + "\" --data \"" + d + "/data\" --out \"" + d + "/pixel.ckpt\"")) return r;
  if (!run("train --stage voxel --config \"" + cfg + "\" --data \"" + d + "/data\" --out \"" + d + "/voxel.ckpt\"")) return r;
  if (!run("train --stage joint --config \"" + cfg + "\" --data \"" + d + "/data\" --pixel-ckpt \"" + d +
           "/pixel.ckpt\" --voxel-ckpt \"" + d + "/voxel.ckpt\" --out \"" + d + "/joint.ckpt\""))
    return r;
  r.train_seconds = seconds_since(start);
  if (!run("map --data \"" + d + "/data\" --traj \"" + d + "/data/groundtruth.txt\" --ckpt \"" + d +
           "/joint.ckpt\" --out \"" + d + "/map.ply\""))
    return r;
  if (!run("eval --data \"" + d + "/data\" --ckpt \"" + d + "/joint.ckpt\" --map \"" + d + "/map.ply\" --out \"" + d +
           "/metrics.txt\""))
    return r;
  const auto kv = read_key_values(dir / "metrics.txt");
  if (!kv.count("pixel_accuracy") || !kv.count("voxel_accuracy")) {
    r.error = "metrics file lacks pixel_accuracy or voxel_accuracy";
    return r;
  }
  r.pixel_accuracy = std::stod(kv.at("pixel_accuracy"));
  r.voxel_accuracy = std::stod(kv.at("voxel_accuracy"));
  r.ok = true;
  return r;
}

Outcome desk_quality(const RunResult& r) {
  Outcome o;
  if (!r.ok) {
    o.expect(false, r.error);
    return o;
  }
  o.expect(r.train_seconds < 15 * 60, "training took " + std::to_string(r.train_seconds) + " s");
  o.expect(r.pixel_accuracy >= 0.90, "held-out pixel accuracy " + std::to_string(r.pixel_accuracy));
  o.expect(r.voxel_accuracy >= 0.85, "PLY voxel accuracy " + std::to_string(r.voxel_accuracy));
  if (o.pass)
    o.detail << "three stages in " << r.train_seconds << " s, held-out pixel accuracy " << r.pixel_accuracy
             << ", PLY voxel accuracy " << r.voxel_accuracy;
  return o;
}

Outcome reproducibility(const fs::path& a, const RunResult& ra, const fs::path& b, const RunResult& rb) {
  Outcome o;
  if (!ra.ok || !rb.ok) {
    o.expect(false, ra.ok ? rb.error : ra.error);
    return o;
  }
  std::size_t compared = 0;
  for (const char* f : {"pixel.ckpt", "voxel.ckpt", "joint.ckpt", "metrics.txt", "map.ply"}) {
    const std::string x = slurp(a / f), y = slurp(b / f);
    o.expect(!x.empty() && x == y, std::string(f) + " differs");
    ++compared;
  }
  for (const auto& e : fs::recursive_directory_iterator(a / "data")) {
    if (!e.is_regular_file()) continue;
    o.expect(slurp(e.path()) == slurp(b / "data" / fs::relative(e.path(), a / "data")),
             "data file " + fs::relative(e.path(), a).string() + " differs");
    ++compared;
  }
  if (o.pass) o.detail << compared << " files byte-identical (checkpoints, metrics, PLY, synthetic data)";
  return o;
}

// ------------------------------------------------------------ 10: geometry

Outcome geometry_round_trips(const fs::path& scratch) {
  Outcome o;
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  // Pixel -> point -> pixel, on random depths and off-center cameras.
  std::size_t pixels = 0, wrong = 0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t w = 20 + t, h = 15 + t / 2;
    const CameraIntrinsics k{30 + 60 * u(rng), 30 + 60 * u(rng), w * (0.3 + 0.4 * u(rng)), h * (0.3 + 0.4 * u(rng)),
                             w, h};
    Image<float> depth(w, h, 1), rgb(w, h, 3, 0.5f);
    for (auto& d : depth.data) d = u(rng) < 0.1 ? 0.0f : static_cast<float>(0.4 + 6.0 * u(rng));
    const BackprojectResult bp = backproject_depth(depth, rgb, k);
    for (std::size_t i = 0; i < bp.cloud.size(); ++i) {
      const Point& p = bp.cloud.points[i];
      const Pixel px = project(k, p.x, p.y, p.z);
      wrong += px.u < 0 || px.v < 0 || static_cast<std::size_t>(px.v) * w + static_cast<std::size_t>(px.u) != bp.pixel_index[i];
      ++pixels;
    }
  }
  o.expect(wrong == 0, std::to_string(wrong) + " of " + std::to_string(pixels) + " pixels did not round-trip");

  // Pose then inverse, including poses read back from a trajectory file.
  double worst = 0;
  std::vector<Pose> poses;
  for (int t = 0; t < 200; ++t) {
    Pose p;
    p.timestamp = 1.0 + t / 30.0;
    p.rotation = Eigen::Quaterniond(u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5).normalized();
    p.translation = Eigen::Vector3d(20 * u(rng) - 10, 20 * u(rng) - 10, 20 * u(rng) - 10);
    poses.push_back(p);
  }
  save_trajectory(scratch / "traj.txt", poses);
  const std::vector<Pose> loaded = load_trajectory(scratch / "traj.txt");
  o.expect(loaded.size() == poses.size(), "trajectory length changed");
  for (std::size_t t = 0; t < std::min(loaded.size(), poses.size()); ++t) {
    for (int s = 0; s < 10; ++s) {
      const Eigen::Vector3d x(10 * u(rng) - 5, 10 * u(rng) - 5, 10 * u(rng) - 5);
      worst = std::max(worst, (loaded[t].inverse().apply(loaded[t].apply(x)) - x).norm());
      worst = std::max(worst, (loaded[t].apply(x) - poses[t].apply(x)).norm());
    }
  }
  o.expect(worst <= 1e-6, "pose round trip off by " + std::to_string(worst) + " m");

  // PLY export then parse: every field comes back at its declared float
  // precision and every vertex addresses its own voxel.
  VoxelMap map(6, 0.05);
  PointCloud cloud;
  std::vector<double> probs;
  for (int i = 0; i < 3000; ++i) {
    cloud.points.push_back({4 * u(rng) - 2, 4 * u(rng) - 2, 3 * u(rng), u(rng), u(rng), u(rng)});
    double z = 0;
    std::vector<double> p(6);
    for (double& x : p) z += x = u(rng) + 0.01;
    for (double x : p) probs.push_back(x / z);
  }
  map.integrate(cloud, probs, poses[3]);
  const PipelineConfig defaults;
  export_ply(map, defaults.palette, scratch / "map.ply");
  const std::vector<PlyVertex> verts = parse_ply(scratch / "map.ply");
  const std::vector<LabeledVoxel> voxels = map.voxels();
  std::size_t lossy = 0;
  o.expect(verts.size() == voxels.size(), "PLY vertex count differs from the map");
  for (std::size_t i = 0; i < std::min(verts.size(), voxels.size()); ++i) {
    const PlyVertex& v = verts[i];
    const LabeledVoxel& ref = voxels[i];
    const auto c = map.cell_center(ref.cell);
    const std::size_t label = argmax(ref.probs);
    const auto& rgb = defaults.palette[label];
    const bool same = map.cell_of(v.x, v.y, v.z) == ref.cell && float(v.x) == float(c[0]) &&
                      float(v.y) == float(c[1]) && float(v.z) == float(c[2]) && v.label == int(label) &&
                      float(v.confidence) == float(ref.probs[label]) && v.red == rgb[0] && v.green == rgb[1] &&
                      v.blue == rgb[2];
    lossy += !same;
  }
  o.expect(lossy == 0, std::to_string(lossy) + " PLY vertices lost information");
  if (o.pass)
    o.detail << pixels << " pixels exact, pose round trip " << worst << " m, " << verts.size()
             << " PLY vertices lossless";
  return o;
}

}  // namespace

// With arguments, runs only the listed criteria, e.g. "acceptance 1 10".
// Criterion 9 compares against the run made by 8.
int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const fs::path scratch = fs::temp_directory_path() / ("pvnet_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(scratch);
  int failures = 0;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& f) {
    if (!only.empty() && !only.count(id)) return;
    const auto start = std::chrono::steady_clock::now();
    bool pass = false;
    std::string detail;
    try {
      const Outcome o = f();
      pass = o.pass;
      detail = o.detail.str();
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    failures += !pass;
    std::ostringstream t;
    t.precision(3);
    t << seconds_since(start);
    std::cout << (pass ? "PASS" : "FAIL") << "  " << id << ". " << name << ": " << detail << " [" << t.str() << " s]"
              << std::endl;
  };

  report(1, "gradient suite", gradient_suite);
  report(2, "fusion algebra", fusion_algebra);
  report(3, "VoxelNet permutation invariance", voxelnet_permutation);
  report(4, "receptive fields", receptive_fields);
  report(5, "class weights", class_weights);
  report(6, "Bayes fold", bayes_fold);
  report(7, "segmentation metrics", metrics);

  const fs::path run_a = scratch / "run_a", run_b = scratch / "second_run_b";
  RunResult ra, rb;
  report(8, "desk run", [&] {
    ra = desk_run(run_a);
    return desk_quality(ra);
  });
  report(9, "reproducibility", [&] {
    rb = desk_run(run_b);
    return reproducibility(run_a, ra, run_b, rb);
  });
  report(10, "geometry round trips", [&] { return geometry_round_trips(scratch); });

  std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed"))
            << std::endl;
  if (failures == 0) {
    std::error_code ec;
    fs::remove_all(scratch, ec);
  } else {
    std::cout << "run directories kept in " << scratch.string() << std::endl;
  }
  return failures ? 1 : 0;
}
