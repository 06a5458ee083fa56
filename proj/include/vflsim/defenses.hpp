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
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "vflsim/mlp.hpp"
#include "vflsim/numerics.hpp"
#include "vflsim/rng.hpp"

namespace vflsim {

enum class DefenseMode {
  kNone,
  kCoae,
  kDpGaussian,
  kDpLaplace,
  kSparsify,
};

struct DefenseConfig {
  DefenseMode mode = DefenseMode::kNone;
  double sigma = 0.01;    // Gaussian std
  double b = 0.01;        // Laplace scale
  double clip = 0.2;      // l2 clip before noising
  double drop_rate = 0.99;
  double lambda1 = 1.0;
  double lambda2 = 1.0;

  void validate() const {
    if (mode == DefenseMode::kDpGaussian && sigma <= 0.0)
      throw std::invalid_argument("DefenseConfig: sigma must be positive");
    if (mode == DefenseMode::kDpLaplace && b <= 0.0)
      throw std::invalid_argument("DefenseConfig: b must be positive");
    if (drop_rate < 0.0 || drop_rate >= 1.0)
      throw std::invalid_argument("DefenseConfig: drop rate in [0,1)");
    if (lambda2 < 0.0)
      throw std::invalid_argument("DefenseConfig: lambda2 must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Confusional autoencoder
// ---------------------------------------------------------------------------

// Encoder/decoder pair over the label simplex. Both halves are
// fc((6c)^2)-relu-fc(c) with a softmax on top.
struct CoAe {
  Mlp encoder;
  Mlp decoder;
  int classes = 0;
  double final_contra = 0.0;
  double final_entropy = 0.0;

  // Soft fake labels for a batch of (soft or one-hot) labels.
  Tensor encode(const Tensor& y) const {
    return softmax(forward(encoder, y).output());
  }

  Tensor decode(const Tensor& fake) const {
    return softmax(forward(decoder, fake).output());
  }

  void save(const std::string& path) const;
  static CoAe load(const std::string& path);
};

struct CoaeLosses {
  double contra = 0.0;
  double entropy = 0.0;
  double total = 0.0;
};

// L_contra = CE(y, yhat) - lambda1 * CE(y, ytilde)
// L = L_contra - lambda2 * Entropy(ytilde)
inline CoaeLosses coae_losses(const Tensor& y, const Tensor& ytilde,
                              const Tensor& yhat, double lambda1,
                              double lambda2) {
  check_simplex_rows(y);
  CoaeLosses out;
  out.contra = cross_entropy(y, yhat) - lambda1 * cross_entropy(y, ytilde);
  out.entropy = mean_entropy(ytilde);
  out.total = out.contra - lambda2 * out.entropy;
  return out;
}

struct CoaeTrainOptions {
  int classes = 10;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  int steps = 3000;
  std::size_t batch = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int max_retries = 5;
};

class CoaeTrainingFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

// Multiply each row of `g` by the softmax Jacobian of the matching row of
// `probs`: out_i = (diag(p_i) - p_i p_i^T) g_i.
inline Tensor softmax_jacobian_apply(const Tensor& probs, const Tensor& g) {
  Tensor out = Tensor::zeros(g.rows(), g.cols());
  for (std::size_t i = 0; i < g.rows(); ++i) {
    double dotpg = 0.0;
    for (std::size_t j = 0; j < g.cols(); ++j) dotpg += probs(i, j) * g(i, j);
    for (std::size_t j = 0; j < g.cols(); ++j)
      out(i, j) = probs(i, j) * (g(i, j) - dotpg);
  }
  return out;
}

inline bool coae_gates_hold(const CoAe& ae, const CoaeTrainOptions& opt);

inline CoAe train_coae_once(const CoaeTrainOptions& opt, std::uint64_t seed) {
  const int c = opt.classes;
  const std::size_t hidden =
      static_cast<std::size_t>(6 * c) * static_cast<std::size_t>(6 * c);
  Rng rng(seed);
  CoAe ae;
  ae.classes = c;
  ae.encoder = Mlp::xavier({static_cast<std::size_t>(c), hidden,
                            static_cast<std::size_t>(c)}, rng);
  ae.decoder = Mlp::xavier({static_cast<std::size_t>(c), hidden,
                            static_cast<std::size_t>(c)}, rng);

  const std::size_t n_enc = ae.encoder.param_count();
  const std::size_t n_dec = ae.decoder.param_count();
  Adam optim(n_enc + n_dec, opt.lr);
  std::vector<double> params(n_enc + n_dec);

  // Gate-aware checkpointing: the loss landscape pulls the encoder toward a
  // hard permutation (entropy 0), which for small c overshoots the confusion
  // gate even though the trajectory passes through gate-satisfying states.
  // Periodically snapshot the lowest-loss parameters that satisfy the gates
  // and return that snapshot instead of the raw final state.
  std::vector<double> best_params;
  CoaeLosses best_losses{};
  double best_total = std::numeric_limits<double>::infinity();
  const int check_every = 25;

  CoaeLosses last{};
  for (int step = 0; step < opt.steps; ++step) {
    std::vector<int> labels(opt.batch);
    for (auto& l : labels) l = static_cast<int>(rng.below(c));
    const Tensor y = one_hot(labels, c);

    ForwardTrace enc_t = forward(ae.encoder, y);
    const Tensor ytilde = softmax(enc_t.output());
    ForwardTrace dec_t = forward(ae.decoder, ytilde);
    const Tensor yhat = softmax(dec_t.output());
    last = coae_losses(y, ytilde, yhat, opt.lambda1, opt.lambda2);

    // decoder logits gradient of CE(y, yhat)
    Tensor g_dec = yhat;
    for (std::size_t i = 0; i < g_dec.data.size(); ++i)
      g_dec.data[i] -= y.data[i];
    BackwardResult dec_back = backward(ae.decoder, dec_t, g_dec);

    // total gradient w.r.t. ytilde: decoder pullback plus the direct
    // -lambda1*CE(y,ytilde) and -lambda2*Entropy(ytilde) terms
    Tensor g_yt = dec_back.input_grad;
    for (std::size_t i = 0; i < g_yt.rows(); ++i)
      for (std::size_t j = 0; j < g_yt.cols(); ++j) {
        const double p = std::max(ytilde(i, j), kLogEps);
        g_yt(i, j) += opt.lambda1 * y(i, j) / p;
        g_yt(i, j) += opt.lambda2 * (std::log(p) + 1.0);
      }
    const Tensor g_enc = softmax_jacobian_apply(ytilde, g_yt);
    BackwardResult enc_back = backward(ae.encoder, enc_t, g_enc);

    const std::vector<double> fe = ae.encoder.flatten();
    const std::vector<double> fd = ae.decoder.flatten();
    std::copy(fe.begin(), fe.end(), params.begin());
    std::copy(fd.begin(), fd.end(), params.begin() + n_enc);
    std::vector<double> grad(n_enc + n_dec);
    const std::vector<double> ge = enc_back.grads.flat();
    const std::vector<double> gd = dec_back.grads.flat();
    std::copy(ge.begin(), ge.end(), grad.begin());
    std::copy(gd.begin(), gd.end(), grad.begin() + n_enc);
    optim.step(params, grad);
    ae.encoder.unflatten({params.begin(), params.begin() + n_enc});
    ae.decoder.unflatten({params.begin() + n_enc, params.end()});

    if ((step + 1) % check_every == 0 || step + 1 == opt.steps) {
      if (last.total < best_total && coae_gates_hold(ae, opt)) {
        best_params = params;
        best_losses = last;
        best_total = last.total;
      }
    }
  }
  if (!best_params.empty()) {
    ae.encoder.unflatten({best_params.begin(), best_params.begin() + n_enc});
    ae.decoder.unflatten({best_params.begin() + n_enc, best_params.end()});
    last = best_losses;
  }
  ae.final_contra = last.contra;
  ae.final_entropy = last.entropy;
  return ae;
}

inline bool coae_gates_hold(const CoAe& ae, const CoaeTrainOptions& opt) {
  const int c = ae.classes;
  std::vector<int> basis(c);
  std::iota(basis.begin(), basis.end(), 0);
  const Tensor e = one_hot(basis, c);
  const Tensor fake = ae.encode(e);
  const Tensor rec = ae.decode(fake);
  for (int i = 0; i < c; ++i) {
    if (argmax_row(rec.row(i), c) != i) return false;              // reconstruction
    if (opt.lambda1 > 0.0 && argmax_row(fake.row(i), c) == i)      // contrast
      return false;
    if (opt.lambda2 >= 0.5) {                                      // confusion
      double h = 0.0;
      for (int j = 0; j < c; ++j) {
        const double p = fake(i, j);
        if (p > 0.0) h -= p * std::log(std::max(p, kLogEps));
      }
      if (h < 0.5 * std::log(2.0)) return false;
    }
  }
  return true;
}

}  // namespace detail

// Trains a CoAe on freshly sampled one-hot labels and gates the result on
// reconstruction (argmax Dec(Enc(e_i)) == i), contrast (argmax Enc(e_i) != i,
// when lambda1 > 0) and confusion (per-class entropy >= 0.5*ln2, when
// lambda2 >= 0.5). Reseeds up to max_retries times before failing.
inline CoAe train_coae(const CoaeTrainOptions& opt) {
  if (opt.classes < 2) throw std::invalid_argument("train_coae: c >= 2");
  Rng seeder(opt.seed);
  for (int attempt = 0; attempt <= opt.max_retries; ++attempt) {
    const std::uint64_t s = attempt == 0 ? opt.seed : seeder.fork_seed();
    CoAe ae = detail::train_coae_once(opt, s);
    if (detail::coae_gates_hold(ae, opt)) return ae;
  }
  throw CoaeTrainingFailure(
      "train_coae: gates not satisfied after retries (c=" +
      std::to_string(opt.classes) + ")");
}

// Per-sample class gradient the active party emits under CoAE protection:
// softmax(H) - Enc(one_hot(y)).
inline Tensor coae_defended_grads(const CoAe& ae, const std::vector<int>& labels,
                                  const Tensor& fused_logits) {
  if (static_cast<int>(fused_logits.cols()) != ae.classes)
    throw std::invalid_argument("coae_defended_grads: class count mismatch");
  const Tensor fake = ae.encode(one_hot(labels, ae.classes));
  Tensor g = softmax(fused_logits);
  for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] -= fake.data[i];
  return g;
}

inline std::vector<int> coae_decode_predictions(const CoAe& ae,
                                                const Tensor& fused_probs) {
  return argmax_rows(ae.decode(fused_probs));
}

// ---------------------------------------------------------------------------
// CoAe persistence: magic "COAE", version, class count, layer dims, raw
// little-endian f64 weights.
// ---------------------------------------------------------------------------

namespace detail {
inline void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}
inline std::uint32_t read_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw std::runtime_error("CoAe file truncated");
  return v;
}
inline void write_mlp(std::ofstream& out, const Mlp& m) {
  write_u32(out, static_cast<std::uint32_t>(m.layers.size()));
  for (const auto& l : m.layers) {
    write_u32(out, static_cast<std::uint32_t>(l.w.rows()));
    write_u32(out, static_cast<std::uint32_t>(l.w.cols()));
    write_u32(out, l.act == Act::kRelu ? 1u : 0u);
    out.write(reinterpret_cast<const char*>(l.w.data.data()),
              static_cast<std::streamsize>(l.w.data.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(l.b.data()),
              static_cast<std::streamsize>(l.b.size() * sizeof(double)));
  }
}
inline Mlp read_mlp(std::ifstream& in) {
  Mlp m;
  const std::uint32_t n_layers = read_u32(in);
  for (std::uint32_t li = 0; li < n_layers; ++li) {
    Mlp::Layer l;
    const std::uint32_t rows = read_u32(in);
    const std::uint32_t cols = read_u32(in);
    l.act = read_u32(in) ? Act::kRelu : Act::kIdentity;
    l.w = Tensor::zeros(rows, cols);
    l.b.assign(rows, 0.0);
    in.read(reinterpret_cast<char*>(l.w.data.data()),
            static_cast<std::streamsize>(l.w.data.size() * sizeof(double)));
    in.read(reinterpret_cast<char*>(l.b.data()),
            static_cast<std::streamsize>(l.b.size() * sizeof(double)));
    if (!in) throw std::runtime_error("CoAe file truncated");
    m.layers.push_back(std::move(l));
  }
  m.validate();
  return m;
}
}  // namespace detail

inline void CoAe::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write("COAE", 4);
  detail::write_u32(out, 1u);  // version
  detail::write_u32(out, static_cast<std::uint32_t>(classes));
  detail::write_mlp(out, encoder);
  detail::write_mlp(out, decoder);
}

inline CoAe CoAe::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "COAE", 4) != 0)
    throw std::runtime_error("bad CoAe magic in " + path);
  const std::uint32_t version = detail::read_u32(in);
  if (version != 1u)
    throw std::runtime_error("unsupported CoAe version " +
                             std::to_string(version));
  CoAe ae;
  ae.classes = static_cast<int>(detail::read_u32(in));
  ae.encoder = detail::read_mlp(in);
  ae.decoder = detail::read_mlp(in);
  return ae;
}

// ---------------------------------------------------------------------------
// DP and sparsification baselines
// ---------------------------------------------------------------------------

enum class NoiseKind { kGaussian, kLaplace };

// Clip to l2 norm `clip`, then add i.i.d. per-coordinate noise.
inline std::vector<double> dp_noise(const std::vector<double>& g,
                                    NoiseKind kind, double scale, double clip,
                                    Rng& rng) {
  if (scale <= 0.0) throw std::invalid_argument("dp_noise: scale must be > 0");
  std::vector<double> out = clip_l2(g, clip);
  for (double& v : out)
    v += kind == NoiseKind::kGaussian ? rng.normal(0.0, scale)
                                      : rng.laplace(scale);
  return out;
}

// Keep the ceil((1-s)*len) largest-magnitude components, zero the rest.
// Ties broken by lower index.
inline std::vector<double> sparsify(const std::vector<double>& g, double s) {
  if (s < 0.0 || s >= 1.0) throw std::invalid_argument("sparsify: s in [0,1)");
  const std::size_t keep = static_cast<std::size_t>(
      std::ceil((1.0 - s) * static_cast<double>(g.size())));
  std::vector<std::size_t> idx(g.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return std::fabs(g[a]) > std::fabs(g[b]);
  });
  std::vector<double> out(g.size(), 0.0);
  for (std::size_t k = 0; k < keep && k < idx.size(); ++k)
    out[idx[k]] = g[idx[k]];
  return out;
}

// ---------------------------------------------------------------------------
// PD matrix diagnostic
// ---------------------------------------------------------------------------

struct PdMatrix {
  Tensor m;                            // [c, c], row-stochastic where supported
  std::vector<std::uint8_t> supported; // row has any true-label samples

  double mean_row_entropy() const {
    double total = 0.0;
    int rows = 0;
    for (std::size_t i = 0; i < m.rows(); ++i) {
      if (!supported[i]) continue;
      double h = 0.0;
      for (std::size_t j = 0; j < m.cols(); ++j) {
        const double p = m(i, j);
        if (p > 0.0) h -= p * std::log(p);
      }
      total += h;
      ++rows;
    }
    return rows ? total / rows : 0.0;
  }
};

inline PdMatrix pd_matrix(const std::vector<int>& true_labels,
                          const std::vector<int>& restored_labels, int c) {
  if (true_labels.size() != restored_labels.size())
    throw std::invalid_argument("pd_matrix: length mismatch");
  PdMatrix out;
  out.m = Tensor::zeros(c, c);
  out.supported.assign(c, 0);
  std::vector<double> row_count(c, 0.0);
  for (std::size_t i = 0; i < true_labels.size(); ++i) {
    const int t = true_labels[i], r = restored_labels[i];
    if (t < 0 || t >= c || r < 0 || r >= c)
      throw std::invalid_argument("pd_matrix: label out of range");
    out.m(t, r) += 1.0;
    row_count[t] += 1.0;
  }
  for (int i = 0; i < c; ++i) {
    if (row_count[i] > 0.0) {
      out.supported[i] = 1;
      for (int j = 0; j < c; ++j) out.m(i, j) /= row_count[i];
    }
  }
  return out;
}

}  // namespace vflsim
