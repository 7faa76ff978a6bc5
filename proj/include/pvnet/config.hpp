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

// Pipeline configuration as line-oriented "key = value" text. '#' starts a
// comment; unknown and repeated keys are errors.

#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pvnet/geometry.hpp"
#include "pvnet/network.hpp"
#include "pvnet/objectives.hpp"
#include "pvnet/voxel_map.hpp"

namespace pvnet {

struct PipelineConfig {
  NetworkConfig network;
  Palette palette{{90, 90, 90}, {200, 190, 160}, {200, 40, 40}, {40, 160, 60}, {40, 80, 200}, {220, 180, 30},
                  {160, 60, 180}, {40, 190, 190}};
  std::size_t input_width = 128, input_height = 128;
  std::size_t points = 1024;
  bool smoothing = false;  ///< edge-preserving smoothing after the resize
  bool augment_flip = true;
  double augment_scale = 0.05;  ///< zoom jitter drawn from [1 - a, 1 + a]

  std::size_t batch = 4;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double delta = kDefaultRareThreshold;
  double pixel_lr = 1e-3;
  std::size_t pixel_epochs = 25;
  std::size_t pixel_step_epoch = 15;
  double pixel_aux_weight = 1.0;  ///< per-map auxiliary losses in the pixel stage
  double voxel_lr = 1e-3;
  std::size_t voxel_iters = 500;
  double joint_lr = 1e-3;
  std::size_t joint_iters = 100;  ///< per fine-tuning pass
  double poly_power = 0.9;
  std::uint64_t seed = 1;

  std::size_t holdout_every = 5;  ///< frames with index % holdout_every == holdout_every - 1 are held out
  std::size_t keyframe_stride = 5;
  double voxel_edge = 0.02;
  DepthRange depth{};

  std::size_t classes() const { return network.classes(); }

  void validate() const {
    network.validate();
    detail::require(classes() < kIgnoreLabel, "config: too many classes");
    detail::require(palette.size() >= classes(), "config: palette has ", palette.size(), " colors for ", classes(),
                    " classes");
    const std::size_t stride = network.pixel.total_stride();
    detail::require(input_width % stride == 0 && input_height % stride == 0, "config: input ", input_width, "x",
                    input_height, " is not a multiple of the backbone stride ", stride);
    detail::require(points >= 1, "config: points must be >= 1");
    detail::require(batch >= 1, "config: batch must be >= 1");
    detail::require(augment_scale >= 0 && augment_scale < 0.5, "config: augment_scale must be in [0, 0.5)");
    detail::require(holdout_every >= 2, "config: holdout_every must be >= 2");
    detail::require(keyframe_stride >= 1, "config: keyframe_stride must be >= 1");
    detail::require(voxel_edge > 0, "config: voxel_edge must be > 0");
    detail::require(depth.min >= 0 && depth.max > depth.min, "config: invalid depth window");
    detail::require(momentum >= 0 && momentum < 1, "config: momentum must be in [0,1)");
    detail::require(pixel_lr >= 0 && voxel_lr >= 0 && joint_lr >= 0, "config: learning rates must be >= 0");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

template <typename V>
V parse_number(const std::string& text) {
  std::istringstream in(text);
  V v{};
  in >> v;
  std::string rest;
  require(!in.fail() && !(in >> rest), "expected a number, got '", text, "'");
  if constexpr (std::is_unsigned_v<V>) require(text.find('-') == std::string::npos, "expected >= 0, got '", text, "'");
  return v;
}

inline bool parse_bool(const std::string& text) {
  if (text == "1" || text == "true") return true;
  if (text == "0" || text == "false") return false;
  fail("expected 0/1 or true/false, got '", text, "'");
}

inline std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  if (text.empty() || text == "none") return out;
  for (const auto& s : split(text, ',')) out.push_back(parse_number<std::size_t>(s));
  return out;
}

template <typename V>
std::string join(const std::vector<V>& v, const char* sep = ",") {
  std::ostringstream out;
  for (std::size_t i = 0; i < v.size(); ++i) out << (i ? sep : "") << v[i];
  return v.empty() ? "none" : out.str();
}

/// Backbone as "2x16,2x32": convs x width per stage; 3x3 kernels, 2x2 pools.
inline std::vector<StageSpec> parse_backbone(const std::string& text) {
  std::vector<StageSpec> out;
  for (const auto& s : split(text, ',')) {
    const auto x = s.find('x');
    require(x != std::string::npos, "backbone stage '", s, "' is not CONVSxWIDTH");
    out.push_back({parse_number<std::size_t>(s.substr(0, x)), 3, parse_number<std::size_t>(s.substr(x + 1)), 2});
  }
  return out;
}

inline Palette parse_palette(const std::string& text) {
  Palette out;
  std::istringstream in(text);
  std::string triple;
  while (in >> triple) {
    const auto parts = split(triple, ',');
    require(parts.size() == 3, "palette entry '", triple, "' is not r,g,b");
    std::array<std::uint8_t, 3> c{};
    for (std::size_t i = 0; i < 3; ++i) {
      const auto v = parse_number<unsigned>(parts[i]);
      require(v <= 255, "palette value ", v, " exceeds 255");
      c[i] = static_cast<std::uint8_t>(v);
    }
    out.push_back(c);
  }
  return out;
}

struct ConfigKey {
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

template <typename V>
std::string fmt(V v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

// `field` is a generic lambda returning a reference into the config, so one
// accessor serves both the setter and the getter.
template <typename V, typename F>
ConfigKey number_key(F field) {
  return {[field](PipelineConfig& c, const std::string& v) { field(c) = parse_number<V>(v); },
          [field](const PipelineConfig& c) { return fmt(field(c)); }};
}

template <typename F>
ConfigKey bool_key(F field) {
  return {[field](PipelineConfig& c, const std::string& v) { field(c) = parse_bool(v); },
          [field](const PipelineConfig& c) { return std::string(field(c) ? "1" : "0"); }};
}

inline const std::map<std::string, ConfigKey>& config_keys() {
  static const std::map<std::string, ConfigKey> keys{
      {"classes",
       {[](PipelineConfig& c, const std::string& v) {
          c.network.pixel.classes = c.network.voxel.classes = parse_number<std::size_t>(v);
        },
        [](const PipelineConfig& c) { return fmt(c.classes()); }}},
      {"palette",
       {[](PipelineConfig& c, const std::string& v) { c.palette = parse_palette(v); },
        [](const PipelineConfig& c) {
          std::ostringstream out;
          for (std::size_t i = 0; i < c.palette.size(); ++i)
            out << (i ? " " : "") << int(c.palette[i][0]) << ',' << int(c.palette[i][1]) << ',' << int(c.palette[i][2]);
          return out.str();
        }}},
      {"backbone",
       {[](PipelineConfig& c, const std::string& v) { c.network.pixel.stages = parse_backbone(v); },
        [](const PipelineConfig& c) {
          std::ostringstream out;
          for (std::size_t i = 0; i < c.network.pixel.stages.size(); ++i)
            out << (i ? "," : "") << c.network.pixel.stages[i].convs << 'x' << c.network.pixel.stages[i].width;
          return out.str();
        }}},
      {"skip_taps",
       {[](PipelineConfig& c, const std::string& v) { c.network.pixel.skip_taps = parse_sizes(v); },
        [](const PipelineConfig& c) { return join(c.network.pixel.skip_taps); }}},
      {"voxel_pre",
       {[](PipelineConfig& c, const std::string& v) { c.network.voxel.pre_widths = parse_sizes(v); },
        [](const PipelineConfig& c) { return join(c.network.voxel.pre_widths); }}},
      {"voxel_post",
       {[](PipelineConfig& c, const std::string& v) { c.network.voxel.post_hidden = parse_sizes(v); },
        [](const PipelineConfig& c) { return join(c.network.voxel.post_hidden); }}},
      {"fusion_plan",
       {[](PipelineConfig& c, const std::string& v) { c.network.fusion_plan = v == "default" ? "" : v; },
        [](const PipelineConfig& c) { return c.network.fusion_plan.empty() ? std::string("default") : c.network.fusion_plan; }}},
      {"skip_width", number_key<std::size_t>([](auto& c) -> auto& { return c.network.pixel.skip_width; })},
      {"skip_kernel", number_key<std::size_t>([](auto& c) -> auto& { return c.network.pixel.skip_kernel; })},
      {"context_stacks", number_key<std::size_t>([](auto& c) -> auto& { return c.network.pixel.context_stacks; })},
      {"context_kernel", number_key<std::size_t>([](auto& c) -> auto& { return c.network.pixel.context_kernel; })},
      {"context_width", number_key<std::size_t>([](auto& c) -> auto& { return c.network.pixel.context_width; })},
      {"fusion_stride", number_key<std::size_t>([](auto& c) -> auto& { return c.network.pixel.fusion_stride; })},
      {"use_voxelnet", bool_key([](auto& c) -> auto& { return c.network.use_voxelnet; })},
      {"voxel_all_levels", bool_key([](auto& c) -> auto& { return c.network.voxel.all_levels; })},
      {"input_width", number_key<std::size_t>([](auto& c) -> auto& { return c.input_width; })},
      {"input_height", number_key<std::size_t>([](auto& c) -> auto& { return c.input_height; })},
      {"points", number_key<std::size_t>([](auto& c) -> auto& { return c.points; })},
      {"smoothing", bool_key([](auto& c) -> auto& { return c.smoothing; })},
      {"augment_flip", bool_key([](auto& c) -> auto& { return c.augment_flip; })},
      {"augment_scale", number_key<double>([](auto& c) -> auto& { return c.augment_scale; })},
      {"batch", number_key<std::size_t>([](auto& c) -> auto& { return c.batch; })},
      {"momentum", number_key<double>([](auto& c) -> auto& { return c.momentum; })},
      {"weight_decay", number_key<double>([](auto& c) -> auto& { return c.weight_decay; })},
      {"delta", number_key<double>([](auto& c) -> auto& { return c.delta; })},
      {"pixel_lr", number_key<double>([](auto& c) -> auto& { return c.pixel_lr; })},
      {"pixel_epochs", number_key<std::size_t>([](auto& c) -> auto& { return c.pixel_epochs; })},
      {"pixel_step_epoch", number_key<std::size_t>([](auto& c) -> auto& { return c.pixel_step_epoch; })},
      {"pixel_aux_weight", number_key<double>([](auto& c) -> auto& { return c.pixel_aux_weight; })},
      {"voxel_lr", number_key<double>([](auto& c) -> auto& { return c.voxel_lr; })},
      {"voxel_iters", number_key<std::size_t>([](auto& c) -> auto& { return c.voxel_iters; })},
      {"joint_lr", number_key<double>([](auto& c) -> auto& { return c.joint_lr; })},
      {"joint_iters", number_key<std::size_t>([](auto& c) -> auto& { return c.joint_iters; })},
      {"poly_power", number_key<double>([](auto& c) -> auto& { return c.poly_power; })},
      {"seed", number_key<std::uint64_t>([](auto& c) -> auto& { return c.seed; })},
      {"holdout_every", number_key<std::size_t>([](auto& c) -> auto& { return c.holdout_every; })},
      {"keyframe_stride", number_key<std::size_t>([](auto& c) -> auto& { return c.keyframe_stride; })},
      {"voxel_edge", number_key<double>([](auto& c) -> auto& { return c.voxel_edge; })},
      {"depth_min", number_key<double>([](auto& c) -> auto& { return c.depth.min; })},
      {"depth_max", number_key<double>([](auto& c) -> auto& { return c.depth.max; })},
  };
  return keys;
}

}  // namespace detail

/// Applies "key = value" lines on top of the defaults. `origin` names the
/// source in error messages.
inline PipelineConfig parse_config(std::istream& in, const std::string& origin = "config") {
  PipelineConfig cfg;
  const auto& keys = detail::config_keys();
  std::map<std::string, std::size_t> seen;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    detail::require(eq != std::string::npos, origin, ":", lineno, ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    const auto it = keys.find(key);
    detail::require(it != keys.end(), origin, ":", lineno, ": unknown key '", key, "'");
    if (const auto prev = seen.find(key); prev != seen.end())
      detail::fail(origin, ":", lineno, ": key '", key, "' already set on line ", prev->second);
    seen[key] = lineno;
    try {
      it->second.set(cfg, value);
    } catch (const Error& e) {
      detail::fail(origin, ":", lineno, ": ", key, ": ", e.what());
    }
  }
  cfg.validate();
  return cfg;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  detail::require(in.good(), path.string(), ": cannot open config");
  return parse_config(in, path.string());
}

/// Every key with its current value, in key order; parses back to `cfg`.
inline std::string config_to_string(const PipelineConfig& cfg) {
  std::ostringstream out;
  for (const auto& [key, k] : detail::config_keys()) out << key << " = " << k.get(cfg) << '\n';
  return out.str();
}

inline void save_config(const std::filesystem::path& path, const PipelineConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  detail::require(out.good(), path.string(), ": cannot open for writing");
  out << config_to_string(cfg);
  detail::require(out.good(), path.string(), ": write failed");
}

}  // namespace pvnet
