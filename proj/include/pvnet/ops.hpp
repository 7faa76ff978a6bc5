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

// Differentiable operators. Image tensors are [c,h,w] or [n,c,h,w]; point
// tensors are [n,d]. The "channel" axis is 0 for rank 3 and 1 otherwise.

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "pvnet/tensor.hpp"

namespace pvnet {

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

struct ImageDims {
  std::size_t n, c, h, w;
  std::size_t plane() const { return h * w; }
};

inline ImageDims image_dims(const Shape& s, const char* op) {
  if (s.size() == 3) return {1, s[0], s[1], s[2]};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
  fail(op, ": expected [c,h,w] or [n,c,h,w], got ", shape_string(s));
}

inline Shape image_shape(const Shape& like, std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  if (like.size() == 3) return {c, h, w};
  return {n, c, h, w};
}

inline std::size_t channel_axis(std::size_t rank) { return rank == 3 ? 0 : 1; }

/// Split a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
  std::size_t outer, extent, inner;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s.at(axis), 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <typename T>
void im2col(const T* image, std::size_t cin, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, T* col) {
  const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(h), iw = static_cast<std::ptrdiff_t>(w);
  for (std::size_t c = 0; c < cin; ++c) {
    const T* plane = image + c * h * w;
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        T* row = col + ((c * kh + ki) * kw + kj) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) - static_cast<std::ptrdiff_t>(pad);
          T* out = row + oy * ow;
          if (iy < 0 || iy >= ih) {
            std::fill(out, out + ow, T{0});
            continue;
          }
          const T* src = plane + iy * iw;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kj) - static_cast<std::ptrdiff_t>(pad);
            out[ox] = (ix < 0 || ix >= iw) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, std::size_t cin, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, T* image) {
  const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(h), iw = static_cast<std::ptrdiff_t>(w);
  for (std::size_t c = 0; c < cin; ++c) {
    T* plane = image + c * h * w;
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const T* row = col + ((c * kh + ki) * kw + kj) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= ih) continue;
          T* dst = plane + iy * iw;
          const T* in = row + oy * ow;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kj) - static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < iw) dst[ix] += in[ox];
          }
        }
      }
    }
  }
}

template <typename T>
Var<T> conv2d_impl(const Var<T>& input, const Var<T>& weights, const Var<T>* bias, std::size_t stride,
                   std::size_t pad) {
  const ImageDims d = image_dims(input.shape(), "conv2d");
  const Shape& ws = weights.shape();
  require(ws.size() == 4, "conv2d: weights must be [cout,cin,kh,kw], got ", shape_string(ws));
  const std::size_t cout = ws[0], kh = ws[2], kw = ws[3];
  require(ws[1] == d.c, "conv2d: input has ", d.c, " channels but weights ", shape_string(ws), " expect ", ws[1]);
  require(kh >= 1 && kw >= 1 && stride >= 1, "conv2d: kernel and stride must be >= 1");
  if (bias)
    require(bias->shape() == Shape{cout}, "conv2d: bias ", shape_string(bias->shape()), " does not match cout=", cout);
  require(d.h + 2 * pad >= kh && d.w + 2 * pad >= kw, "conv2d: kernel ", kh, "x", kw, " exceeds padded input ",
          d.h + 2 * pad, "x", d.w + 2 * pad);
  require((d.h + 2 * pad - kh) % stride == 0 && (d.w + 2 * pad - kw) % stride == 0,
          "conv2d: stride ", stride, " does not tile input ", shape_string(input.shape()));
  const std::size_t oh = (d.h + 2 * pad - kh) / stride + 1, ow = (d.w + 2 * pad - kw) / stride + 1;
  const std::size_t K = d.c * kh * kw, P = oh * ow;
  const bool pointwise = kh == 1 && kw == 1 && stride == 1 && pad == 0;

  Tensor<T> out(image_shape(input.shape(), d.n, cout, oh, ow));
  AlignedVector<T> col(pointwise ? 0 : K * P);
  ConstMatMap<T> W(weights.value().data(), cout, K);
  const T* b = bias ? bias->value().data() : nullptr;
  for (std::size_t s = 0; s < d.n; ++s) {
    const T* x = input.value().data() + s * d.c * d.plane();
    if (!pointwise) im2col(x, d.c, d.h, d.w, kh, kw, stride, pad, oh, ow, col.data());
    ConstMatMap<T> C(pointwise ? x : col.data(), K, P);
    MatMap<T> O(out.data() + s * cout * P, cout, P);
    O.noalias() = W * C;
    if (b)
      for (std::size_t o = 0; o < cout; ++o) O.row(o).array() += b[o];
  }

  std::vector<Var<T>> inputs{input, weights};
  if (bias) inputs.push_back(*bias);
  return make_result<T>(std::move(out), std::move(inputs), [=](Node<T>& self) {
    Tensor<T>* gx = input_grad(self, 0);
    Tensor<T>* gw = input_grad(self, 1);
    Tensor<T>* gb = self.inputs.size() > 2 ? input_grad(self, 2) : nullptr;
    const Tensor<T>& xv = self.inputs[0]->value;
    const Tensor<T>& wv = self.inputs[1]->value;
    ConstMatMap<T> Wm(wv.data(), cout, K);
    AlignedVector<T> colbuf(pointwise ? 0 : K * P);
    AlignedVector<T> dcol(gx && !pointwise ? K * P : 0);
    for (std::size_t s = 0; s < d.n; ++s) {
      ConstMatMap<T> G(self.grad.data() + s * cout * P, cout, P);
      if (gb) {
        for (std::size_t o = 0; o < cout; ++o) (*gb)[o] += G.row(o).sum();
      }
      const T* x = xv.data() + s * d.c * d.plane();
      if (gw) {
        if (!pointwise) im2col(x, d.c, d.h, d.w, kh, kw, stride, pad, oh, ow, colbuf.data());
        ConstMatMap<T> C(pointwise ? x : colbuf.data(), K, P);
        MatMap<T>(gw->data(), cout, K).noalias() += G * C.transpose();
      }
      if (gx) {
        T* dx = gx->data() + s * d.c * d.plane();
        if (pointwise) {
          MatMap<T>(dx, K, P).noalias() += Wm.transpose() * G;
        } else {
          MatMap<T>(dcol.data(), K, P).noalias() = Wm.transpose() * G;
          col2im(dcol.data(), d.c, d.h, d.w, kh, kw, stride, pad, oh, ow, dx);
        }
      }
    }
  });
}

}  // namespace detail

/// Cross-correlation with zero padding. weights [cout,cin,kh,kw], bias [cout].
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weights, const Var<T>& bias, std::size_t stride, std::size_t pad) {
  return detail::conv2d_impl(input, weights, &bias, stride, pad);
}

/// Bias-free variant for convolutions feeding a batch-norm.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weights, std::size_t stride, std::size_t pad) {
  return detail::conv2d_impl<T>(input, weights, nullptr, stride, pad);
}

namespace detail {

template <typename T>
Var<T> pointwise_linear_impl(const Var<T>& input, const Var<T>& weights, const Var<T>* bias) {
  const Shape& xs = input.shape();
  const Shape& ws = weights.shape();
  require(xs.size() == 2, "pointwise_linear: input must be [n,d], got ", shape_string(xs));
  require(ws.size() == 2 && ws[1] == xs[1], "pointwise_linear: weights ", shape_string(ws),
          " incompatible with input ", shape_string(xs));
  if (bias)
    require(bias->shape() == Shape{ws[0]}, "pointwise_linear: bias ", shape_string(bias->shape()),
            " does not match ", ws[0]);
  const std::size_t n = xs[0], din = xs[1], dout = ws[0];
  Tensor<T> out({n, dout});
  // Row by row with a fixed accumulation order, so a point's output never
  // depends on its position in the cloud (a blocked GEMM does not promise that).
  const RowMatrix<T> wt = ConstMatMap<T>(weights.value().data(), dout, din).transpose();
  const T* x = input.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    T* o = out.data() + i * dout;
    for (std::size_t k = 0; k < din; ++k) {
      const T xv = x[i * din + k];
      const T* wr = wt.data() + k * dout;
      for (std::size_t j = 0; j < dout; ++j) o[j] += xv * wr[j];
    }
    if (bias) {
      const T* b = bias->value().data();
      for (std::size_t j = 0; j < dout; ++j) o[j] += b[j];
    }
  }

  std::vector<Var<T>> inputs{input, weights};
  if (bias) inputs.push_back(*bias);
  return make_result<T>(std::move(out), std::move(inputs), [=](Node<T>& self) {
    ConstMatMap<T> G(self.grad.data(), n, dout);
    if (Tensor<T>* gx = input_grad(self, 0))
      MatMap<T>(gx->data(), n, din).noalias() += G * ConstMatMap<T>(self.inputs[1]->value.data(), dout, din);
    if (Tensor<T>* gw = input_grad(self, 1))
      MatMap<T>(gw->data(), dout, din).noalias() += G.transpose() * ConstMatMap<T>(self.inputs[0]->value.data(), n, din);
    if (Tensor<T>* gb = self.inputs.size() > 2 ? input_grad(self, 2) : nullptr) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < dout; ++o) (*gb)[o] += G(i, o);
    }
  });
}

}  // namespace detail

/// Shared per-point affine layer: x [n,din], weights [dout,din], bias [dout] -> [n,dout].
template <typename T>
Var<T> pointwise_linear(const Var<T>& input, const Var<T>& weights, const Var<T>& bias) {
  return detail::pointwise_linear_impl(input, weights, &bias);
}

template <typename T>
Var<T> pointwise_linear(const Var<T>& input, const Var<T>& weights) {
  return detail::pointwise_linear_impl<T>(input, weights, nullptr);
}

enum class BnMode { kTrain, kEval };

/// Running statistics owned by a batch-norm layer.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T epsilon = T(1e-5);

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean({channels}, T{0}), running_var({channels}, T{1}) {}
};

/// Per-channel normalization. Statistics run over every axis except the channel axis.
template <typename T>
Var<T> batchnorm(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta, BatchNormState<T>& state, BnMode mode) {
  using namespace detail;
  const Shape& xs = input.shape();
  require(xs.size() >= 2 && xs.size() <= 4, "batchnorm: unsupported rank ", xs.size());
  require(input.value().numel() > 0, "batchnorm: zero-element input");
  const AxisSplit sp = split_axis(xs, channel_axis(xs.size()));
  const std::size_t C = sp.extent;
  require(gamma.shape() == Shape{C} && beta.shape() == Shape{C}, "batchnorm: gamma/beta must be [", C, "]");
  require(state.running_mean.numel() == C, "batchnorm: running statistics sized for ",
          state.running_mean.numel(), " channels, input has ", C);
  const std::size_t m = sp.outer * sp.inner;
  const T* x = input.value().data();
  const T* g = gamma.value().data();
  const T* bt = beta.value().data();

  std::vector<T> mean(C), invstd(C);
  if (mode == BnMode::kTrain) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t o = 0; o < sp.outer; ++o) {
        const T* p = x + (o * C + c) * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(m);
      double v = 0.0;
      for (std::size_t o = 0; o < sp.outer; ++o) {
        const T* p = x + (o * C + c) * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) v += (p[i] - mu) * (p[i] - mu);
      }
      v /= static_cast<double>(m);
      mean[c] = static_cast<T>(mu);
      invstd[c] = static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(state.epsilon)));
      const double unbiased = m > 1 ? v * static_cast<double>(m) / static_cast<double>(m - 1) : v;
      state.running_mean[c] = static_cast<T>((1.0 - state.momentum) * state.running_mean[c] + state.momentum * mu);
      state.running_var[c] = static_cast<T>((1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      invstd[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(state.running_var[c]) + state.epsilon));
    }
  }

  Tensor<T> out(xs);
  Tensor<T> xhat(xs);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (o * C + c) * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const T h = (x[base + i] - mean[c]) * invstd[c];
        xhat[base + i] = h;
        out[base + i] = g[c] * h + bt[c];
      }
    }
  }

  const bool train = mode == BnMode::kTrain;
  return make_result<T>(std::move(out), {input, gamma, beta},
                        [=, xhat = std::move(xhat), invstd = std::move(invstd)](Node<T>& self) {
    const T* dy = self.grad.data();
    const T* gv = self.inputs[1]->value.data();
    Tensor<T>* gx = input_grad(self, 0);
    Tensor<T>* gg = input_grad(self, 1);
    Tensor<T>* gbeta = input_grad(self, 2);
    for (std::size_t c = 0; c < C; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t o = 0; o < sp.outer; ++o) {
        const std::size_t base = (o * C + c) * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) {
          sum_dy += dy[base + i];
          sum_dy_xhat += static_cast<double>(dy[base + i]) * xhat[base + i];
        }
      }
      if (gg) (*gg)[c] += static_cast<T>(sum_dy_xhat);
      if (gbeta) (*gbeta)[c] += static_cast<T>(sum_dy);
      if (!gx) continue;
      const double scale = static_cast<double>(gv[c]) * invstd[c];
      const double md = static_cast<double>(m);
      for (std::size_t o = 0; o < sp.outer; ++o) {
        const std::size_t base = (o * C + c) * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) {
          if (train) {
            (*gx)[base + i] += static_cast<T>(scale * (dy[base + i] - sum_dy / md - xhat[base + i] * sum_dy_xhat / md));
          } else {
            (*gx)[base + i] += static_cast<T>(scale * dy[base + i]);
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& input) {
  Tensor<T> out = input.value();
  for (auto& v : out.values()) v = v > T{0} ? v : T{0};
  return detail::make_result<T>(std::move(out), {input}, [](Node<T>& self) {
    Tensor<T>& gx = self.inputs[0]->grad_slot();
    const Tensor<T>& x = self.inputs[0]->value;
    for (std::size_t i = 0; i < x.numel(); ++i)
      if (x[i] > T{0}) gx[i] += self.grad[i];
  });
}

template <typename T>
struct MaxPoolResult {
  Var<T> output;
  /// Flat index into the input tensor of each output element's maximum.
  std::vector<std::size_t> indices;
};

/// Window maximum. Ties resolve to the lowest flat input index.
template <typename T>
MaxPoolResult<T> maxpool2d(const Var<T>& input, std::size_t k, std::size_t stride) {
  using namespace detail;
  const ImageDims d = image_dims(input.shape(), "maxpool2d");
  require(k >= 1 && stride >= 1, "maxpool2d: window and stride must be >= 1");
  require(k <= d.h && k <= d.w, "maxpool2d: window ", k, " larger than input ", d.h, "x", d.w);
  require((d.h - k) % stride == 0 && (d.w - k) % stride == 0, "maxpool2d: window ", k, "/stride ", stride,
          " does not tile ", d.h, "x", d.w);
  const std::size_t oh = (d.h - k) / stride + 1, ow = (d.w - k) / stride + 1;
  Tensor<T> out(image_shape(input.shape(), d.n, d.c, oh, ow));
  std::vector<std::size_t> idx(out.numel());
  const T* x = input.value().data();
  std::size_t o = 0;
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    const std::size_t base = p * d.plane();
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = base + (oy * stride) * d.w + ox * stride;
        for (std::size_t i = 0; i < k; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            const std::size_t at = base + (oy * stride + i) * d.w + ox * stride + j;
            if (x[at] > x[best]) best = at;
          }
        }
        idx[o] = best;
        out[o] = x[best];
      }
    }
  }
  auto shared_idx = std::make_shared<const std::vector<std::size_t>>(idx);
  Var<T> result = make_result<T>(std::move(out), {input}, [shared_idx](Node<T>& self) {
    Tensor<T>& gx = self.inputs[0]->grad_slot();
    for (std::size_t i = 0; i < shared_idx->size(); ++i) gx[(*shared_idx)[i]] += self.grad[i];
  });
  return {std::move(result), std::move(idx)};
}

/// Columnwise maximum over the rows of [n,d]; ties resolve to the lowest row.
template <typename T>
Var<T> reduce_max_over_points(const Var<T>& input) {
  using namespace detail;
  const Shape& xs = input.shape();
  require(xs.size() == 2, "reduce_max_over_points: expected [n,d], got ", shape_string(xs));
  require(xs[0] >= 1, "reduce_max_over_points: empty point set");
  const std::size_t n = xs[0], dd = xs[1];
  const T* x = input.value().data();
  Tensor<T> out({1, dd});
  std::vector<std::size_t> arg(dd, 0);
  for (std::size_t j = 0; j < dd; ++j) out[j] = x[j];
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t j = 0; j < dd; ++j) {
      if (x[i * dd + j] > out[j]) {
        out[j] = x[i * dd + j];
        arg[j] = i;
      }
    }
  }
  return make_result<T>(std::move(out), {input}, [arg = std::move(arg), dd](Node<T>& self) {
    Tensor<T>& gx = self.inputs[0]->grad_slot();
    for (std::size_t j = 0; j < dd; ++j) gx[arg[j] * dd + j] += self.grad[j];
  });
}

/// Repeat a [1,d] row n times.
template <typename T>
Var<T> tile_rows(const Var<T>& input, std::size_t n) {
  using namespace detail;
  const Shape& xs = input.shape();
  require(xs.size() == 2 && xs[0] == 1, "tile_rows: expected [1,d], got ", shape_string(xs));
  require(n >= 1, "tile_rows: n must be >= 1");
  const std::size_t dd = xs[1];
  Tensor<T> out({n, dd});
  for (std::size_t i = 0; i < n; ++i) std::copy_n(input.value().data(), dd, out.data() + i * dd);
  return make_result<T>(std::move(out), {input}, [n, dd](Node<T>& self) {
    Tensor<T>& gx = self.inputs[0]->grad_slot();
    for (std::size_t j = 0; j < dd; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += self.grad[i * dd + j];
      gx[j] += static_cast<T>(s);
    }
  });
}

/// Concatenate along `axis`; all other extents must agree.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& inputs, std::size_t axis) {
  using namespace detail;
  require(!inputs.empty(), "concat: no inputs");
  const Shape& first = inputs.front().shape();
  require(axis < first.size(), "concat: axis ", axis, " out of range for ", shape_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& v : inputs) {
    const Shape& s = v.shape();
    bool match = s.size() == first.size();
    for (std::size_t i = 0; match && i < s.size(); ++i) match = i == axis || s[i] == first[i];
    require(match, "concat: shape ", shape_string(s), " does not match ", shape_string(first), " off axis ", axis);
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const AxisSplit sp = split_axis(out_shape, axis);
  Tensor<T> out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const std::size_t block = extents[k] * sp.inner;
    const T* src = inputs[k].value().data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(src + o * block, block, out.data() + o * sp.extent * sp.inner + offset * sp.inner);
    offset += extents[k];
  }
  return make_result<T>(std::move(out), inputs, [sp, extents](Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < extents.size(); ++k) {
      const std::size_t block = extents[k] * sp.inner;
      if (Tensor<T>* g = input_grad(self, k)) {
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const T* src = self.grad.data() + o * sp.extent * sp.inner + offset * sp.inner;
          T* dst = g->data() + o * block;
          for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
      offset += extents[k];
    }
  });
}

template <typename T>
Var<T> channel_concat(const std::vector<Var<T>>& inputs) {
  detail::require(inputs.size() >= 2, "channel_concat: need at least 2 inputs, got ", inputs.size());
  return concat(inputs, detail::channel_axis(inputs.front().shape().size()));
}

/// Half-open index range [begin, end).
struct Range {
  std::size_t begin, end;
};

/// Copy out disjoint bands of `axis`.
template <typename T>
std::vector<Var<T>> slice(const Var<T>& input, std::size_t axis, const std::vector<Range>& ranges) {
  using namespace detail;
  const Shape& xs = input.shape();
  require(axis < xs.size(), "slice: axis ", axis, " out of range for ", shape_string(xs));
  require(!ranges.empty(), "slice: no ranges");
  std::vector<Range> sorted = ranges;
  std::sort(sorted.begin(), sorted.end(), [](Range a, Range b) { return a.begin < b.begin; });
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    require(sorted[i].begin < sorted[i].end && sorted[i].end <= xs[axis], "slice: range [", sorted[i].begin, ",",
            sorted[i].end, ") invalid for extent ", xs[axis]);
    require(i == 0 || sorted[i].begin >= sorted[i - 1].end, "slice: ranges overlap at ", sorted[i].begin);
  }
  const AxisSplit sp = split_axis(xs, axis);
  std::vector<Var<T>> parts;
  parts.reserve(ranges.size());
  for (const Range r : ranges) {
    Shape s = xs;
    s[axis] = r.end - r.begin;
    const std::size_t block = s[axis] * sp.inner;
    Tensor<T> out(s);
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(input.value().data() + o * sp.extent * sp.inner + r.begin * sp.inner, block, out.data() + o * block);
    parts.push_back(make_result<T>(std::move(out), {input}, [sp, r, block](Node<T>& self) {
      Tensor<T>& g = self.inputs[0]->grad_slot();
      for (std::size_t o = 0; o < sp.outer; ++o) {
        T* dst = g.data() + o * sp.extent * sp.inner + r.begin * sp.inner;
        const T* src = self.grad.data() + o * block;
        for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
      }
    }));
  }
  return parts;
}

template <typename T>
std::vector<Var<T>> channel_slice(const Var<T>& input, const std::vector<Range>& ranges) {
  return slice(input, detail::channel_axis(input.shape().size()), ranges);
}

/// Softmax across the channel axis at every location, max-subtracted.
template <typename T>
Var<T> softmax_over_channels(const Var<T>& input) {
  using namespace detail;
  const Shape& xs = input.shape();
  require(xs.size() >= 2 && xs.size() <= 4, "softmax_over_channels: unsupported rank ", xs.size());
  const AxisSplit sp = split_axis(xs, channel_axis(xs.size()));
  const T* x = input.value().data();
  Tensor<T> out(xs);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    const std::size_t base = o * sp.extent * sp.inner;
    for (std::size_t i = 0; i < sp.inner; ++i) {
      T mx = x[base + i];
      for (std::size_t c = 1; c < sp.extent; ++c) mx = std::max(mx, x[base + c * sp.inner + i]);
      double denom = 0.0;
      for (std::size_t c = 0; c < sp.extent; ++c) denom += std::exp(static_cast<double>(x[base + c * sp.inner + i] - mx));
      for (std::size_t c = 0; c < sp.extent; ++c)
        out[base + c * sp.inner + i] = static_cast<T>(std::exp(static_cast<double>(x[base + c * sp.inner + i] - mx)) / denom);
    }
  }
  return make_result<T>(std::move(out), {input}, [sp](Node<T>& self) {
    Tensor<T>& gx = self.inputs[0]->grad_slot();
    const Tensor<T>& s = self.value;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      const std::size_t base = o * sp.extent * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) {
        double dot = 0.0;
        for (std::size_t c = 0; c < sp.extent; ++c) dot += static_cast<double>(self.grad[base + c * sp.inner + i]) * s[base + c * sp.inner + i];
        for (std::size_t c = 0; c < sp.extent; ++c) {
          const std::size_t at = base + c * sp.inner + i;
          gx[at] += static_cast<T>(s[at] * (self.grad[at] - dot));
        }
      }
    }
  });
}

template <typename T>
Var<T> hadamard(const Var<T>& a, const Var<T>& b) {
  detail::require(a.shape() == b.shape(), "hadamard: shape mismatch ", shape_string(a.shape()), " vs ",
                  shape_string(b.shape()));
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const Tensor<T>& av = self.inputs[0]->value;
    const Tensor<T>& bv = self.inputs[1]->value;
    if (Tensor<T>* ga = detail::input_grad(self, 0))
      for (std::size_t i = 0; i < av.numel(); ++i) (*ga)[i] += self.grad[i] * bv[i];
    if (Tensor<T>* gb = detail::input_grad(self, 1))
      for (std::size_t i = 0; i < av.numel(); ++i) (*gb)[i] += self.grad[i] * av[i];
  });
}

/// Elementwise sum of equally shaped tensors.
template <typename T>
Var<T> add(const std::vector<Var<T>>& inputs) {
  detail::require(!inputs.empty(), "add: no inputs");
  Tensor<T> out = inputs.front().value();
  for (std::size_t k = 1; k < inputs.size(); ++k) {
    detail::require(inputs[k].shape() == out.shape(), "add: shape mismatch ", shape_string(inputs[k].shape()), " vs ",
                    shape_string(out.shape()));
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += inputs[k].value()[i];
  }
  return detail::make_result<T>(std::move(out), inputs, [](Node<T>& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k)
      if (Tensor<T>* g = detail::input_grad(self, k))
        for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return add<T>(std::vector<Var<T>>{a, b});
}

template <typename T>
Var<T> scale(const Var<T>& input, T factor) {
  Tensor<T> out = input.value();
  for (auto& v : out.values()) v *= factor;
  return detail::make_result<T>(std::move(out), {input}, [factor](Node<T>& self) {
    Tensor<T>& g = self.inputs[0]->grad_slot();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += factor * self.grad[i];
  });
}

/// Scalar sum of all elements (64-bit accumulation).
template <typename T>
Var<T> sum(const Var<T>& input) {
  double s = 0.0;
  for (T v : input.value().values()) s += v;
  return detail::make_result<T>(Tensor<T>({1}, static_cast<T>(s)), {input}, [](Node<T>& self) {
    Tensor<T>& g = self.inputs[0]->grad_slot();
    for (auto& v : g.values()) v += self.grad[0];
  });
}

/// Scalar inner product with a constant tensor; handy for probing gradients.
template <typename T>
Var<T> dot_constant(const Var<T>& input, const Tensor<T>& weights) {
  detail::require(input.shape() == weights.shape(), "dot_constant: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < weights.numel(); ++i) s += static_cast<double>(input.value()[i]) * weights[i];
  return detail::make_result<T>(Tensor<T>({1}, static_cast<T>(s)), {input}, [weights](Node<T>& self) {
    Tensor<T>& g = self.inputs[0]->grad_slot();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[0] * weights[i];
  });
}

template <typename T>
Var<T> reshape(const Var<T>& input, Shape shape) {
  Tensor<T> out = input.value();
  out.reshape(std::move(shape));
  return detail::make_result<T>(std::move(out), {input}, [](Node<T>& self) {
    Tensor<T>& g = self.inputs[0]->grad_slot();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

namespace detail {

struct LerpTap {
  std::size_t lo, hi;
  double frac;
};

inline std::vector<LerpTap> align_corner_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  for (std::size_t i = 0; i < out; ++i) {
    const double src = out == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(src));
    if (lo >= in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace detail

/// Align-corners bilinear resize of every channel plane.
template <typename T>
Var<T> upsample_bilinear(const Var<T>& input, std::size_t h2, std::size_t w2) {
  using namespace detail;
  const ImageDims d = image_dims(input.shape(), "upsample_bilinear");
  require(h2 >= 1 && w2 >= 1, "upsample_bilinear: target size must be >= 1");
  if (h2 == d.h && w2 == d.w) return reshape(input, input.shape());
  const auto ty = align_corner_taps(d.h, h2);
  const auto tx = align_corner_taps(d.w, w2);
  Tensor<T> out(image_shape(input.shape(), d.n, d.c, h2, w2));
  const T* x = input.value().data();
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    const T* src = x + p * d.plane();
    T* dst = out.data() + p * h2 * w2;
    for (std::size_t i = 0; i < h2; ++i) {
      const auto& a = ty[i];
      for (std::size_t j = 0; j < w2; ++j) {
        const auto& b = tx[j];
        const double top = src[a.lo * d.w + b.lo] * (1 - b.frac) + src[a.lo * d.w + b.hi] * b.frac;
        const double bot = src[a.hi * d.w + b.lo] * (1 - b.frac) + src[a.hi * d.w + b.hi] * b.frac;
        dst[i * w2 + j] = static_cast<T>(top * (1 - a.frac) + bot * a.frac);
      }
    }
  }
  return make_result<T>(std::move(out), {input}, [=](Node<T>& self) {
    Tensor<T>& gx = self.inputs[0]->grad_slot();
    for (std::size_t p = 0; p < d.n * d.c; ++p) {
      T* dst = gx.data() + p * d.plane();
      const T* g = self.grad.data() + p * h2 * w2;
      for (std::size_t i = 0; i < h2; ++i) {
        const auto& a = ty[i];
        for (std::size_t j = 0; j < w2; ++j) {
          const auto& b = tx[j];
          const double v = g[i * w2 + j];
          dst[a.lo * d.w + b.lo] += static_cast<T>(v * (1 - a.frac) * (1 - b.frac));
          dst[a.lo * d.w + b.hi] += static_cast<T>(v * (1 - a.frac) * b.frac);
          dst[a.hi * d.w + b.lo] += static_cast<T>(v * a.frac * (1 - b.frac));
          dst[a.hi * d.w + b.hi] += static_cast<T>(v * a.frac * b.frac);
        }
      }
    }
  });
}

}  // namespace pvnet
