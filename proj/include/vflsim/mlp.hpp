// Copyright 2026 the vflsim authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "vflsim/numerics.hpp"
#include "vflsim/rng.hpp"
#include "vflsim/tensor.hpp"

namespace vflsim {

enum class Act { kRelu, kIdentity };

// Small feed-forward network. Parameter flattening order is fixed:
// layer 0 weights row-major, layer 0 bias, layer 1 weights, layer 1 bias, ...
struct Mlp {
  struct Layer {
    Tensor w;  // [out, in]
    std::vector<double> b;
    Act act = Act::kIdentity;
  };

  std::vector<Layer> layers;
  // Bumped on every parameter change; forward traces record it so that
  // backward can reject stale activations.
  std::uint64_t revision = 0;

  std::size_t in_dim() const { return layers.front().w.cols(); }
  std::size_t out_dim() const { return layers.back().w.rows(); }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.w.numel() + l.b.size();
    return n;
  }

  // dims = {in, hidden..., out}; hidden layers relu, output layer identity.
  static Mlp xavier(const std::vector<std::size_t>& dims, Rng& rng) {
    if (dims.size() < 2) throw std::invalid_argument("Mlp: need >= 2 dims");
    Mlp m;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      Layer layer;
      layer.w = Tensor::zeros(dims[l + 1], dims[l]);
      layer.b.assign(dims[l + 1], 0.0);
      const double bound = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
      for (double& v : layer.w.data) v = rng.uniform(-bound, bound);
      layer.act = (l + 2 < dims.size()) ? Act::kRelu : Act::kIdentity;
      m.layers.push_back(std::move(layer));
    }
    m.validate();
    return m;
  }

  void validate() const {
    if (layers.empty()) throw std::invalid_argument("Mlp: no layers");
    for (std::size_t l = 0; l + 1 < layers.size(); ++l)
      if (layers[l].w.rows() != layers[l + 1].w.cols())
        throw std::invalid_argument("Mlp: consecutive layer dims mismatch");
    for (const auto& l : layers)
      if (l.b.size() != l.w.rows())
        throw std::invalid_argument("Mlp: bias length mismatch");
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(param_count());
    for (const auto& l : layers) {
      out.insert(out.end(), l.w.data.begin(), l.w.data.end());
      out.insert(out.end(), l.b.begin(), l.b.end());
    }
    return out;
  }

  void unflatten(const std::vector<double>& flat) {
    if (flat.size() != param_count())
      throw std::invalid_argument("Mlp::unflatten: length mismatch");
    std::size_t p = 0;
    for (auto& l : layers) {
      for (double& v : l.w.data) v = flat[p++];
      for (double& v : l.b) v = flat[p++];
    }
    ++revision;
  }

  // theta <- theta - lr * grad (flat order)
  void apply_update(const std::vector<double>& grad, double lr) {
    if (grad.size() != param_count())
      throw std::invalid_argument("Mlp::apply_update: length mismatch");
    std::size_t p = 0;
    for (auto& l : layers) {
      for (double& v : l.w.data) v -= lr * grad[p++];
      for (double& v : l.b) v -= lr * grad[p++];
    }
    ++revision;
  }
};

// Per-parameter gradients in Mlp flattening order, batch-averaged.
struct GradBundle {
  std::vector<Tensor> w;
  std::vector<std::vector<double>> b;

  std::vector<double> flat() const {
    std::vector<double> out;
    for (std::size_t l = 0; l < w.size(); ++l) {
      out.insert(out.end(), w[l].data.begin(), w[l].data.end());
      out.insert(out.end(), b[l].begin(), b[l].end());
    }
    return out;
  }
};

// Activations retained by forward() for a later backward().
struct ForwardTrace {
  const Mlp* model = nullptr;
  std::uint64_t revision = 0;
  Tensor input;
  std::vector<Tensor> pre;   // pre-activation per layer
  std::vector<Tensor> post;  // post-activation per layer; post.back() == H

  const Tensor& output() const { return post.back(); }
};

inline ForwardTrace forward(const Mlp& mlp, const Tensor& x) {
  if (x.cols() != mlp.in_dim())
    throw std::invalid_argument("forward: input dim mismatch");
  ForwardTrace t;
  t.model = &mlp;
  t.revision = mlp.revision;
  t.input = x;
  const Tensor* a = &t.input;
  for (const auto& layer : mlp.layers) {
    Tensor z = matmul_nt(*a, layer.w);  // [B, out]
    for (std::size_t i = 0; i < z.rows(); ++i)
      for (std::size_t j = 0; j < z.cols(); ++j) z(i, j) += layer.b[j];
    Tensor h = z;
    if (layer.act == Act::kRelu)
      for (double& v : h.data) v = v > 0.0 ? v : 0.0;
    t.pre.push_back(std::move(z));
    t.post.push_back(std::move(h));
    a = &t.post.back();
  }
  t.output().check_finite("forward output");
  return t;
}

inline void check_trace(const Mlp& mlp, const ForwardTrace& t) {
  if (t.model != &mlp || t.revision != mlp.revision)
    throw std::runtime_error("backward: stale or mismatched activations");
}

struct BackwardResult {
  GradBundle grads;      // batch mean
  Tensor input_grad;     // per-sample, [B, in_dim]
};

// Reverse-mode pass. out_grad holds d(mean loss)/dH per sample times B, i.e.
// the per-sample output gradients; the bundle is their batch mean.
inline BackwardResult backward(const Mlp& mlp, const ForwardTrace& t,
                               const Tensor& out_grad) {
  check_trace(mlp, t);
  if (out_grad.rows() != t.input.rows() || out_grad.cols() != mlp.out_dim())
    throw std::invalid_argument("backward: out_grad shape mismatch");
  const double inv_b = 1.0 / static_cast<double>(out_grad.rows());
  BackwardResult res;
  res.grads.w.resize(mlp.layers.size());
  res.grads.b.resize(mlp.layers.size());
  Tensor delta = out_grad;
  for (std::size_t li = mlp.layers.size(); li-- > 0;) {
    const auto& layer = mlp.layers[li];
    if (layer.act == Act::kRelu) {
      const Tensor& pre = t.pre[li];
      for (std::size_t i = 0; i < delta.data.size(); ++i)
        if (pre.data[i] <= 0.0) delta.data[i] = 0.0;
    }
    const Tensor& input = li == 0 ? t.input : t.post[li - 1];
    Tensor gw = matmul_tn(delta, input);  // [out, in]
    for (double& v : gw.data) v *= inv_b;
    std::vector<double> gb(layer.b.size(), 0.0);
    for (std::size_t i = 0; i < delta.rows(); ++i)
      for (std::size_t j = 0; j < delta.cols(); ++j) gb[j] += delta(i, j);
    for (double& v : gb) v *= inv_b;
    res.grads.w[li] = std::move(gw);
    res.grads.b[li] = std::move(gb);
    delta = matmul(delta, layer.w);  // [B, in]
  }
  res.input_grad = std::move(delta);
  return res;
}

// Flat (1/B) sum_i J_i^T g_i, where J_i = dH_i/dtheta. Linear in g.
inline std::vector<double> param_grad_from_output_grads(const Mlp& mlp,
                                                        const Tensor& x,
                                                        const Tensor& g) {
  ForwardTrace t = forward(mlp, x);
  return backward(mlp, t, g).grads.flat();
}

// Adjoint of the map above, reusing an existing forward trace. Row i of the
// result is (1/B) J_i r, so that
// <param_grad_from_output_grads(g), r> == sum_i <g_i, row_i>.
inline Tensor param_grad_adjoint_traced(const Mlp& mlp, const ForwardTrace& t,
                                        const std::vector<double>& r) {
  check_trace(mlp, t);
  if (r.size() != mlp.param_count())
    throw std::invalid_argument("param_grad_adjoint: length mismatch");
  const Tensor& x = t.input;
  const std::size_t batch = x.rows();
  const double inv_b = 1.0 / static_cast<double>(batch);
  // forward-mode tangent propagation with (dW, db) taken from r
  Tensor da;  // tangent of activations, [B, dim]
  std::size_t p = 0;
  for (std::size_t li = 0; li < mlp.layers.size(); ++li) {
    const auto& layer = mlp.layers[li];
    Tensor dw = Tensor::zeros(layer.w.rows(), layer.w.cols());
    for (double& v : dw.data) v = r[p++];
    std::vector<double> db(layer.b.size());
    for (double& v : db) v = r[p++];
    const Tensor& a = li == 0 ? x : t.post[li - 1];
    Tensor dz = matmul_nt(a, dw);  // a * dW^T
    if (li > 0) {
      Tensor carried = matmul_nt(da, layer.w);  // da * W^T
      for (std::size_t i = 0; i < dz.data.size(); ++i)
        dz.data[i] += carried.data[i];
    }
    for (std::size_t i = 0; i < dz.rows(); ++i)
      for (std::size_t j = 0; j < dz.cols(); ++j) dz(i, j) += db[j];
    if (layer.act == Act::kRelu) {
      const Tensor& pre = t.pre[li];
      for (std::size_t i = 0; i < dz.data.size(); ++i)
        if (pre.data[i] <= 0.0) dz.data[i] = 0.0;
    }
    da = std::move(dz);
  }
  for (double& v : da.data) v *= inv_b;
  return da;
}

inline Tensor param_grad_adjoint(const Mlp& mlp, const Tensor& x,
                                 const std::vector<double>& r) {
  ForwardTrace t = forward(mlp, x);
  return param_grad_adjoint_traced(mlp, t, r);
}

}  // namespace vflsim
