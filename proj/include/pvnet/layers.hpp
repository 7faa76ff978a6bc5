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

// Parameterized blocks shared by the networks. Each block registers its
// tensors in a ParameterSet under a dotted name prefix and keeps pointers.

#pragma once

#include <random>
#include <string>

#include "pvnet/ops.hpp"
#include "pvnet/optim.hpp"

namespace pvnet {

/// Conv (no bias) + BatchNorm + ReLU with "same" padding.
template <typename T>
struct ConvBnRelu {
  Parameter<T>* weight = nullptr;
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;
  BatchNormState<T>* bn = nullptr;
  std::size_t kernel = 1;

  static ConvBnRelu make(ParameterSet<T>& ps, const std::string& name, std::size_t cin, std::size_t cout,
                         std::size_t kernel, std::mt19937_64& rng, T lr_mult) {
    detail::require(kernel % 2 == 1, name, ": kernel ", kernel, " must be odd");
    ConvBnRelu b;
    b.kernel = kernel;
    b.weight = &ps.add(name + ".weight", gaussian_init<T>({cout, cin, kernel, kernel}, rng), lr_mult);
    b.gamma = &ps.add(name + ".bn.gamma", Tensor<T>({cout}, T{1}), lr_mult);
    b.beta = &ps.add(name + ".bn.beta", Tensor<T>({cout}), lr_mult);
    b.bn = &ps.add_batchnorm(name + ".bn", cout);
    return b;
  }

  Var<T> operator()(const Var<T>& x, BnMode mode) const {
    return relu(batchnorm(conv2d(x, weight->var, 1, kernel / 2), gamma->var, beta->var, *bn, mode));
  }
};

/// Plain convolution with bias, used for score heads and fusion.
template <typename T>
struct Conv {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;
  std::size_t kernel = 1;

  static Conv make(ParameterSet<T>& ps, const std::string& name, std::size_t cin, std::size_t cout,
                   std::size_t kernel, std::mt19937_64& rng, T lr_mult, bool zero_init = false) {
    Conv c;
    c.kernel = kernel;
    c.weight = &ps.add(name + ".weight",
                       zero_init ? Tensor<T>({cout, cin, kernel, kernel}) : gaussian_init<T>({cout, cin, kernel, kernel}, rng),
                       lr_mult);
    c.bias = &ps.add(name + ".bias", Tensor<T>({cout}), lr_mult);
    return c;
  }

  Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight->var, bias->var, 1, kernel / 2); }
};

/// Shared per-point linear layer (1x1 conv over points), no bias, + BN + ReLU.
template <typename T>
struct PointBnRelu {
  Parameter<T>* weight = nullptr;
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;
  BatchNormState<T>* bn = nullptr;

  static PointBnRelu make(ParameterSet<T>& ps, const std::string& name, std::size_t din, std::size_t dout,
                          std::mt19937_64& rng, T lr_mult) {
    PointBnRelu b;
    b.weight = &ps.add(name + ".weight", gaussian_init<T>({dout, din}, rng), lr_mult);
    b.gamma = &ps.add(name + ".bn.gamma", Tensor<T>({dout}, T{1}), lr_mult);
    b.beta = &ps.add(name + ".bn.beta", Tensor<T>({dout}), lr_mult);
    b.bn = &ps.add_batchnorm(name + ".bn", dout);
    return b;
  }

  Var<T> operator()(const Var<T>& x, BnMode mode) const {
    return relu(batchnorm(pointwise_linear(x, weight->var), gamma->var, beta->var, *bn, mode));
  }
};

}  // namespace pvnet
