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

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace vflsim {

// Dense row-major tensor of doubles. Rank is almost always 2 here
// ([batch, dim] or [rows, cols]); rank-1 is allowed for flat vectors.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;

  Tensor(std::initializer_list<std::size_t> s) : shape(s) {
    data.assign(numel(), 0.0);
  }

  static Tensor zeros(std::size_t r, std::size_t c) { return Tensor{{r, c}}; }

  std::size_t numel() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& operator()(std::size_t i, std::size_t j) {
    return data[i * cols() + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return data[i * cols() + j];
  }

  double* row(std::size_t i) { return data.data() + i * cols(); }
  const double* row(std::size_t i) const { return data.data() + i * cols(); }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void check_finite(const char* what) const {
    if (!all_finite())
      throw std::runtime_error(std::string("non-finite values in ") + what);
  }
};

namespace detail {
using EigenMap =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>>;
using EigenCMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>;

inline EigenCMap as_eigen(const Tensor& t) {
  return EigenCMap(t.data.data(), static_cast<Eigen::Index>(t.rows()),
                   static_cast<Eigen::Index>(t.cols()));
}
inline EigenMap as_eigen(Tensor& t) {
  return EigenMap(t.data.data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}
}  // namespace detail

// c = a * b
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dims");
  Tensor c = Tensor::zeros(a.rows(), b.cols());
  detail::as_eigen(c).noalias() = detail::as_eigen(a) * detail::as_eigen(b);
  return c;
}

// c = a * b^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dims");
  Tensor c = Tensor::zeros(a.rows(), b.rows());
  detail::as_eigen(c).noalias() =
      detail::as_eigen(a) * detail::as_eigen(b).transpose();
  return c;
}

// c = a^T * b
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("matmul_tn: inner dims");
  Tensor c = Tensor::zeros(a.cols(), b.cols());
  detail::as_eigen(c).noalias() =
      detail::as_eigen(a).transpose() * detail::as_eigen(b);
  return c;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(const std::vector<double>& v) {
  return std::sqrt(dot(v, v));
}

}  // namespace vflsim
