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

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "vflsim/tensor.hpp"

namespace vflsim {

inline constexpr double kLogEps = 1e-12;  // floor inside logs

// Row-wise numerically stable softmax.
inline void softmax_row(const double* z, double* out, std::size_t n) {
  double m = z[0];
  for (std::size_t j = 1; j < n; ++j) m = std::max(m, z[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp(z[j] - m);
    sum += out[j];
  }
  for (std::size_t j = 0; j < n; ++j) out[j] /= sum;
}

inline Tensor softmax(const Tensor& logits) {
  Tensor s = logits;
  for (std::size_t i = 0; i < logits.rows(); ++i)
    softmax_row(logits.row(i), s.row(i), logits.cols());
  return s;
}

inline void check_simplex_rows(const Tensor& t, double tol = 1e-9) {
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < t.cols(); ++j) sum += t(i, j);
    if (std::fabs(sum - 1.0) > tol)
      throw std::invalid_argument("target row not normalized to 1");
  }
}

// Gradient of cross-entropy-of-softmax w.r.t. the logits: softmax(z) - target.
// Targets may be one-hot or soft, but every row must sum to 1.
inline Tensor softmax_ce_grad(const Tensor& logits, const Tensor& target) {
  if (logits.rows() != target.rows() || logits.cols() != target.cols())
    throw std::invalid_argument("softmax_ce_grad: shape mismatch");
  check_simplex_rows(target);
  Tensor g = softmax(logits);
  for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] -= target.data[i];
  return g;
}

// Mean over rows of -sum_j target_j * log(prob_j), with epsilon-floored logs.
inline double cross_entropy(const Tensor& target, const Tensor& probs) {
  if (target.rows() != probs.rows() || target.cols() != probs.cols())
    throw std::invalid_argument("cross_entropy: shape mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < target.rows(); ++i)
    for (std::size_t j = 0; j < target.cols(); ++j)
      total -= target(i, j) * std::log(std::max(probs(i, j), kLogEps));
  return total / static_cast<double>(target.rows());
}

// Mean over rows of -sum_j p_j log p_j.
inline double mean_entropy(const Tensor& probs) {
  double total = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i)
    for (std::size_t j = 0; j < probs.cols(); ++j) {
      const double p = probs(i, j);
      if (p > 0.0) total -= p * std::log(std::max(p, kLogEps));
    }
  return total / static_cast<double>(probs.rows());
}

inline std::vector<double> clip_l2(std::vector<double> v, double c) {
  if (c <= 0.0) throw std::invalid_argument("clip_l2: c must be positive");
  const double n = l2_norm(v);
  if (n > c) {
    const double s = c / n;
    for (double& x : v) x *= s;
  }
  return v;
}

// Lowest index wins on ties.
inline int argmax_row(const double* v, std::size_t n) {
  int best = 0;
  for (std::size_t j = 1; j < n; ++j)
    if (v[j] > v[best]) best = static_cast<int>(j);
  return best;
}

inline std::vector<int> argmax_rows(const Tensor& t) {
  std::vector<int> out(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i)
    out[i] = argmax_row(t.row(i), t.cols());
  return out;
}

inline Tensor one_hot(const std::vector<int>& labels, std::size_t classes) {
  Tensor t = Tensor::zeros(labels.size(), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      throw std::invalid_argument("one_hot: label out of range");
    t(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return t;
}

// Central finite differences of a scalar function; the gradient oracle used
// throughout the test suites.
inline std::vector<double> finite_difference_grad(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& v, double eps = 1e-5) {
  if (eps <= 0.0) throw std::invalid_argument("finite_difference_grad: eps");
  std::vector<double> g(v.size());
  std::vector<double> w = v;
  for (std::size_t j = 0; j < v.size(); ++j) {
    w[j] = v[j] + eps;
    const double fp = f(w);
    w[j] = v[j] - eps;
    const double fm = f(w);
    w[j] = v[j];
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("finite_difference_grad: non-finite evaluation");
    g[j] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

// Adaptive moment estimation over a flat parameter vector.
class Adam {
 public:
  Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::vector<double>& params, const std::vector<double>& grad) {
    if (params.size() != m_.size() || grad.size() != m_.size())
      throw std::invalid_argument("Adam::step: size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  int t_ = 0;
  std::vector<double> m_, v_;
};

}  // namespace vflsim
