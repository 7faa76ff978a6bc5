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

// Softmax weighted fusion of n score maps, and the wiring of several fusion
// stacks into a plan.
//
// A plan is written as "A=context:*;B=A,skip:*;C=B,voxel": each stack names
// its inputs, which are base score maps ("context:2", "skip:*", "voxel") or
// earlier stacks. The last stack in evaluation order is the network output.

#pragma once

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pvnet/layers.hpp"

namespace pvnet {

template <typename T>
struct FusionResult {
  Var<T> fused;                 ///< sum_j maps_j * W_j
  std::vector<Var<T>> weights;  ///< W_j, same shape as the maps
};

template <typename T>
class FusionStack {
 public:
  FusionStack() = default;
  FusionStack(std::size_t models, std::size_t classes, ParameterSet<T>& ps, const std::string& name,
              std::mt19937_64& rng)
      : n_(models), c_(classes) {
    detail::require(models >= 2, "fusion stack '", name, "' needs at least 2 inputs, got ", models);
    detail::require(classes >= 1, "fusion stack '", name, "': classes must be >= 1");
    // Zero weights start the stack as an exact equal-weight fusion.
    conv_ = Conv<T>::make(ps, name + ".conv", n_ * c_, n_ * c_, 1, rng, T{10}, /*zero_init=*/true);
  }

  std::size_t models() const { return n_; }
  std::size_t classes() const { return c_; }
  Parameter<T>& weight() const { return *conv_.weight; }
  Parameter<T>& bias() const { return *conv_.bias; }

  FusionResult<T> operator()(const std::vector<Var<T>>& maps) const {
    detail::require(maps.size() == n_, "fusion: stack expects ", n_, " maps, got ", maps.size());
    const std::size_t axis = detail::channel_axis(maps[0].shape().size());
    for (const auto& m : maps) {
      detail::require(m.shape() == maps[0].shape(), "fusion: map shapes differ: ", shape_string(m.shape()), " vs ",
                      shape_string(maps[0].shape()));
      detail::require(m.shape().size() >= 3 && m.shape()[axis] == c_, "fusion: map ", shape_string(m.shape()),
                      " does not have ", c_, " class channels");
    }
    const Var<T> logits = conv_(channel_concat(maps));
    const Var<T> soft = softmax_over_channels(logits);
    std::vector<Range> groups;
    for (std::size_t j = 0; j < n_; ++j) groups.push_back({j * c_, (j + 1) * c_});
    FusionResult<T> r;
    r.weights = channel_slice(soft, groups);
    std::vector<Var<T>> terms;
    for (std::size_t j = 0; j < n_; ++j) terms.push_back(hadamard(maps[j], r.weights[j]));
    r.fused = add(terms);
    return r;
  }

 private:
  std::size_t n_ = 0, c_ = 0;
  Conv<T> conv_;
};

struct FusionStackSpec {
  std::string name;
  std::vector<std::string> sources;
};

/// Stacks in evaluation order; the last one produces the network output.
struct FusionPlan {
  std::vector<FusionStackSpec> stacks;

  const FusionStackSpec& output() const { return stacks.back(); }
  std::string to_string() const {
    std::ostringstream out;
    for (std::size_t i = 0; i < stacks.size(); ++i) {
      out << (i ? ";" : "") << stacks[i].name << "=";
      for (std::size_t j = 0; j < stacks[i].sources.size(); ++j) out << (j ? "," : "") << stacks[i].sources[j];
    }
    return out.str();
  }
};

/// Names of the base score maps a network exposes.
inline std::vector<std::string> base_sources(std::size_t contexts, std::size_t skips, bool voxel) {
  std::vector<std::string> s;
  for (std::size_t i = 1; i <= contexts; ++i) s.push_back("context:" + std::to_string(i));
  for (std::size_t i = 1; i <= skips; ++i) s.push_back("skip:" + std::to_string(i));
  if (voxel) s.push_back("voxel");
  return s;
}

/// The default chain: A fuses the context maps, B adds the skips, C the voxel map.
inline std::string default_fusion_spec(bool voxel) {
  return voxel ? "A=context:*;B=A,skip:*;C=B,voxel" : "A=context:*;B=A,skip:*";
}

/// Parses, expands wildcards, orders stacks topologically and checks that
/// the wiring is complete: every base map and every non-output stack is used,
/// nothing is used twice, and there are no cycles.
inline FusionPlan build_fusion_topology(const std::string& spec, std::size_t contexts, std::size_t skips, bool voxel) {
  const std::vector<std::string> base = base_sources(contexts, skips, voxel);
  const std::set<std::string> base_set(base.begin(), base.end());
  std::vector<FusionStackSpec> declared;
  std::stringstream all(spec);
  std::string item;
  while (std::getline(all, item, ';')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    detail::require(eq != std::string::npos && eq > 0, "fusion plan: expected NAME=sources in '", item, "'");
    FusionStackSpec s{item.substr(0, eq), {}};
    detail::require(!base_set.count(s.name) && s.name.find(':') == std::string::npos,
                    "fusion plan: stack name '", s.name, "' clashes with a score map");
    for (const auto& d : declared) detail::require(d.name != s.name, "fusion plan: stack '", s.name, "' declared twice");
    std::stringstream srcs(item.substr(eq + 1));
    std::string src;
    while (std::getline(srcs, src, ',')) {
      if (src == "context:*" || src == "skip:*") {
        const std::string kind = src.substr(0, src.find(':') + 1);
        for (const auto& b : base)
          if (b.rfind(kind, 0) == 0) s.sources.push_back(b);
      } else if (!src.empty()) {
        s.sources.push_back(src);
      }
    }
    declared.push_back(std::move(s));
  }
  detail::require(!declared.empty(), "fusion plan: no stacks declared");

  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < declared.size(); ++i) index[declared[i].name] = i;
  std::map<std::string, int> uses;
  for (const auto& s : declared) {
    detail::require(s.sources.size() >= 2, "fusion plan: stack '", s.name, "' fuses ", s.sources.size(),
                    " map(s); at least 2 are required");
    for (const auto& src : s.sources) {
      detail::require(base_set.count(src) || index.count(src), "fusion plan: stack '", s.name,
                      "' reads unknown source '", src, "'");
      detail::require(++uses[src] == 1, "fusion plan: source '", src, "' is consumed more than once");
    }
  }

  // Kahn's algorithm in declaration order keeps the result deterministic.
  FusionPlan plan;
  std::vector<bool> done(declared.size(), false);
  for (std::size_t round = 0; round < declared.size(); ++round) {
    bool progressed = false;
    for (std::size_t i = 0; i < declared.size() && !progressed; ++i) {
      if (done[i]) continue;
      bool ready = true;
      for (const auto& src : declared[i].sources)
        if (index.count(src) && !done[index[src]]) ready = false;
      if (ready) {
        done[i] = true;
        plan.stacks.push_back(declared[i]);
        progressed = true;
      }
    }
    detail::require(progressed, "fusion plan: stacks form a cycle");
  }
  for (const auto& b : base)
    detail::require(uses.count(b), "fusion plan: score map '", b, "' is never fused");
  std::size_t sinks = 0;
  for (const auto& s : declared) sinks += uses.count(s.name) ? 0 : 1;
  detail::require(sinks == 1, "fusion plan: expected one output stack, found ", sinks);
  detail::require(!uses.count(plan.output().name), "fusion plan: output stack must be last");
  return plan;
}

/// All fusion stacks of a plan, evaluated in order.
template <typename T>
class FusionNetwork {
 public:
  FusionNetwork(FusionPlan plan, std::size_t classes, ParameterSet<T>& ps, std::mt19937_64& rng,
                const std::string& prefix = "fusion")
      : plan_(std::move(plan)) {
    for (const auto& s : plan_.stacks)
      stacks_.emplace(s.name, FusionStack<T>(s.sources.size(), classes, ps, prefix + "." + s.name, rng));
  }

  const FusionPlan& plan() const { return plan_; }
  const FusionStack<T>& stack(const std::string& name) const { return stacks_.at(name); }

  /// `maps` maps base source names to score maps.
  Var<T> operator()(const std::map<std::string, Var<T>>& maps) const {
    std::map<std::string, Var<T>> values = maps;
    for (const auto& s : plan_.stacks) {
      std::vector<Var<T>> in;
      for (const auto& src : s.sources) {
        const auto it = values.find(src);
        detail::require(it != values.end(), "fusion: missing score map '", src, "'");
        in.push_back(it->second);
      }
      values[s.name] = stacks_.at(s.name)(in).fused;
    }
    return values.at(plan_.output().name);
  }

 private:
  FusionPlan plan_;
  std::map<std::string, FusionStack<T>> stacks_;
};

}  // namespace pvnet
