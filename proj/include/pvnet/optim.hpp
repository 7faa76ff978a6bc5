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

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "pvnet/ops.hpp"

namespace pvnet {

/// A trainable tensor with its momentum buffer.
template <typename T>
struct Parameter {
  std::string name;
  Var<T> var;
  T lr_mult = T{1};
  Tensor<T> velocity;

  Parameter(std::string n, Tensor<T> init, T mult)
      : name(std::move(n)), var(Var<T>::leaf(std::move(init))), lr_mult(mult), velocity(var.shape()) {}
};

/// Owns every parameter and batch-norm state of a model. Entries live on the
/// heap so layers may hold plain pointers to them across moves.
template <typename T>
class ParameterSet {
 public:
  Parameter<T>& add(std::string name, Tensor<T> init, T lr_mult = T{1}) {
    detail::require(!contains(name), "parameter '", name, "' registered twice");
    params_.push_back(std::make_unique<Parameter<T>>(std::move(name), std::move(init), lr_mult));
    return *params_.back();
  }

  BatchNormState<T>& add_batchnorm(std::string name, std::size_t channels) {
    bn_.push_back({std::move(name), std::make_unique<BatchNormState<T>>(channels)});
    return *bn_.back().second;
  }

  bool contains(std::string_view name) const {
    for (const auto& p : params_)
      if (p->name == name) return true;
    return false;
  }

  Parameter<T>& at(std::string_view name) {
    for (auto& p : params_)
      if (p->name == name) return *p;
    detail::fail("no parameter named '", name, "'");
  }

  /// Parameters whose name starts with any of `prefixes`, in registration order.
  std::vector<Parameter<T>*> with_prefix(const std::vector<std::string>& prefixes) {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_)
      for (const auto& pre : prefixes)
        if (p->name.rfind(pre, 0) == 0) {
          out.push_back(p.get());
          break;
        }
    return out;
  }

  std::vector<Parameter<T>*> all() {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  const std::vector<std::unique_ptr<Parameter<T>>>& parameters() const { return params_; }
  const std::vector<std::pair<std::string, std::unique_ptr<BatchNormState<T>>>>& batchnorms() const { return bn_; }

  void zero_grad() {
    for (auto& p : params_) p->var.zero_grad();
  }

  /// Flatten to (name, values) records: parameters first, then running stats.
  std::vector<std::pair<std::string, Tensor<T>>> records() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for (const auto& p : params_) out.emplace_back(p->name, p->var.value());
    for (const auto& [name, s] : bn_) {
      out.emplace_back(name + ".running_mean", s->running_mean);
      out.emplace_back(name + ".running_var", s->running_var);
    }
    return out;
  }

  /// Overwrite matching entries. Unknown names and shape changes are errors;
  /// entries absent from `recs` keep their current values. Returns the count applied.
  template <typename U>
  std::size_t assign(const std::vector<std::pair<std::string, Tensor<U>>>& recs) {
    std::map<std::string, Tensor<T>*> slots;
    for (auto& p : params_) slots[p->name] = &p->var.mutable_value();
    for (auto& [name, s] : bn_) {
      slots[name + ".running_mean"] = &s->running_mean;
      slots[name + ".running_var"] = &s->running_var;
    }
    std::size_t applied = 0;
    for (const auto& [name, t] : recs) {
      auto it = slots.find(name);
      detail::require(it != slots.end(), "checkpoint record '", name, "' has no matching parameter");
      detail::require(it->second->shape() == t.shape(), "checkpoint record '", name, "' has shape ",
                      shape_string(t.shape()), ", model expects ", shape_string(it->second->shape()));
      for (std::size_t i = 0; i < t.numel(); ++i) (*it->second)[i] = static_cast<T>(t[i]);
      ++applied;
    }
    return applied;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::vector<std::pair<std::string, std::unique_ptr<BatchNormState<T>>>> bn_;
};

/// Zero-mean Gaussian with variance 1e-2 for newly initialized weights.
template <typename T>
Tensor<T> gaussian_init(Shape shape, std::mt19937_64& rng, double stddev = 0.1) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

/// v <- momentum*v + grad + decay*theta;  theta <- theta - lr*mult*v.
/// Gradients are cleared afterwards.
template <typename T>
void sgd_momentum_step(const std::vector<Parameter<T>*>& params, double lr, double momentum, double weight_decay) {
  detail::require(lr >= 0.0, "sgd: learning rate must be >= 0, got ", lr);
  for (const Parameter<T>* p : params)
    detail::require(p->var.has_grad(), "sgd: parameter '", p->name, "' has no gradient");
  for (Parameter<T>* p : params) {
    Tensor<T>& theta = p->var.mutable_value();
    const Tensor<T>& g = p->var.grad();
    const double step = lr * static_cast<double>(p->lr_mult);
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      const double v = momentum * p->velocity[i] + g[i] + weight_decay * theta[i];
      p->velocity[i] = static_cast<T>(v);
      theta[i] = static_cast<T>(theta[i] - step * v);
    }
    p->var.zero_grad();
  }
}

}  // namespace pvnet
