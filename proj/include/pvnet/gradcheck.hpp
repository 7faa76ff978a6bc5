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

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "pvnet/optim.hpp"
#include "pvnet/tensor.hpp"

namespace pvnet {

struct GradcheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::string parameter;  ///< set by parameter_gradcheck
};

/// Smallest gradient a central difference of step `eps` resolves at function
/// value `f`: rounding in f is about machine epsilon times |f|, and it is
/// divided by 2*eps. Gradients below 1e4 times that are compared against the
/// floor instead of their own size.
template <typename T>
double difference_floor(double f, double eps) {
  return std::max(1e-8, 1e4 * std::numeric_limits<T>::epsilon() * std::max(1.0, std::abs(f)) / eps);
}

/// Compare the reverse-mode gradient of a scalar function against central
/// differences. Relative error is |a-n| / max(|a|, |n|, floor), floor from
/// difference_floor.
template <typename T>
GradcheckReport finite_difference_gradcheck(const std::function<Var<T>(const Var<T>&)>& f, const Tensor<T>& input,
                                            double eps) {
  detail::require(eps >= 1e-6 && eps <= 1e-2, "gradcheck: eps ", eps, " outside [1e-6, 1e-2]");
  auto evaluate = [&](const Tensor<T>& x) {
    const Var<T> out = f(Var<T>::constant(x));
    detail::require(out.value().numel() == 1, "gradcheck: function must return a scalar");
    const double v = out.value()[0];
    detail::require(std::isfinite(v), "gradcheck: non-finite function value");
    return v;
  };

  Var<T> x = Var<T>::leaf(input);
  Var<T> y = f(x);
  detail::require(y.value().numel() == 1, "gradcheck: function must return a scalar");
  detail::require(std::isfinite(static_cast<double>(y.value()[0])), "gradcheck: non-finite function value");
  y.backward();
  const Tensor<T> analytic = x.has_grad() ? x.grad() : Tensor<T>(input.shape());
  const double floor = difference_floor<T>(y.value()[0], eps);

  GradcheckReport report;
  Tensor<T> probe = input;
  for (std::size_t i = 0; i < input.numel(); ++i) {
    const T orig = probe[i];
    probe[i] = static_cast<T>(orig + eps);
    const double plus = evaluate(probe);
    probe[i] = static_cast<T>(orig - eps);
    const double minus = evaluate(probe);
    probe[i] = orig;
    const double numeric = (plus - minus) / (2.0 * eps);
    const double a = analytic[i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    if (rel > report.max_relative_error) report = {rel, i, a, numeric};
  }
  return report;
}

/// The same comparison for the parameters of a model: `loss` rebuilds the
/// graph from the current parameter values. At most `per_tensor` evenly spaced
/// coordinates of each parameter are probed (0 probes all).
template <typename T>
GradcheckReport parameter_gradcheck(const std::function<Var<T>()>& loss, const std::vector<Parameter<T>*>& params,
                                    double eps, std::size_t per_tensor = 0) {
  detail::require(eps >= 1e-7 && eps <= 1e-2, "gradcheck: eps ", eps, " outside [1e-7, 1e-2]");
  for (Parameter<T>* p : params) p->var.zero_grad();
  Var<T> y = loss();
  detail::require(y.value().numel() == 1, "gradcheck: loss must be a scalar");
  y.backward();
  const double floor = difference_floor<T>(y.value()[0], eps);
  std::vector<Tensor<T>> analytic;
  for (Parameter<T>* p : params) analytic.push_back(p->var.has_grad() ? p->var.grad() : Tensor<T>(p->var.shape()));
  for (Parameter<T>* p : params) p->var.zero_grad();

  GradcheckReport report;
  for (std::size_t j = 0; j < params.size(); ++j) {
    Tensor<T>& theta = params[j]->var.mutable_value();
    const std::size_t n = theta.numel();
    const std::size_t probes = per_tensor == 0 ? n : std::min(n, per_tensor);
    for (std::size_t q = 0; q < probes; ++q) {
      const std::size_t i = q * n / probes;
      const T orig = theta[i];
      theta[i] = static_cast<T>(orig + eps);
      const double plus = loss().value()[0];
      theta[i] = static_cast<T>(orig - eps);
      const double minus = loss().value()[0];
      theta[i] = orig;
      detail::require(std::isfinite(plus) && std::isfinite(minus), "gradcheck: non-finite loss");
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[j][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (rel > report.max_relative_error) report = {rel, i, a, numeric, params[j]->name};
    }
  }
  return report;
}

}  // namespace pvnet
