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
#include <unordered_set>
#include <utility>
#include <vector>

#include "vflsim/defenses.hpp"
#include "vflsim/mlp.hpp"
#include "vflsim/numerics.hpp"
#include "vflsim/opaque.hpp"
#include "vflsim/rng.hpp"
#include "vflsim/tensor.hpp"

namespace vflsim {

// ===========================================================================
// Batch label inference by gradient matching
// ===========================================================================

// Attacker-side guess: free label logits u (the soft label guess is
// softmax(u), which keeps it on the simplex) and a guessed foreign
// contribution H_a' per batch slot.
struct LabelInferenceState {
  Tensor u;        // [B, c]
  Tensor ha;       // [B, c]
  int iterations = 0;
};

// grad of l(softmax(H_p + H_a'), y') w.r.t. the passive model parameters,
// with y' = given soft labels.
inline std::vector<double> simulate_grad(const Mlp& passive_model,
                                         const Tensor& x_batch,
                                         const Tensor& h_p,
                                         const Tensor& ha_prime,
                                         const Tensor& y_prime) {
  if (h_p.rows() != ha_prime.rows() || h_p.cols() != ha_prime.cols() ||
      h_p.rows() != y_prime.rows() || h_p.cols() != y_prime.cols())
    throw std::invalid_argument("simulate_grad: shape mismatch");
  Tensor fused = h_p;
  for (std::size_t i = 0; i < fused.data.size(); ++i)
    fused.data[i] += ha_prime.data[i];
  Tensor g = softmax(fused);
  for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] -= y_prime.data[i];
  return param_grad_from_output_grads(passive_model, x_batch, g);
}

struct MatchLossResult {
  double d = 0.0;
  Tensor du;   // dD/du
  Tensor dha;  // dD/dH_a'
};

// D = ||grad_sim - grad_observed||^2 with analytic gradients through the
// simulated gradient: r = grad_sim - grad_obs, dD/dg_i = 2*(1/B) J_i r,
// then pulled back through the two softmaxes.
inline MatchLossResult match_loss(const Mlp& passive_model,
                                  const ForwardTrace& trace,
                                  const Tensor& ha_prime, const Tensor& u,
                                  const std::vector<double>& observed) {
  if (observed.size() != passive_model.param_count())
    throw std::invalid_argument("match_loss: observed gradient length");
  const Tensor& h_p = trace.output();
  Tensor fused = h_p;
  for (std::size_t i = 0; i < fused.data.size(); ++i)
    fused.data[i] += ha_prime.data[i];
  const Tensor s = softmax(fused);
  const Tensor p = softmax(u);
  Tensor g = s;
  for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] -= p.data[i];

  std::vector<double> sim = backward(passive_model, trace, g).grads.flat();
  std::vector<double> r(sim.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sim.size(); ++i) {
    r[i] = sim[i] - observed[i];
    d += r[i] * r[i];
  }

  Tensor dg = param_grad_adjoint_traced(passive_model, trace, r);
  for (double& v : dg.data) v *= 2.0;

  MatchLossResult out;
  out.d = d;
  out.dha = detail::softmax_jacobian_apply(s, dg);
  out.du = detail::softmax_jacobian_apply(p, dg);
  for (double& v : out.du.data) v = -v;
  return out;
}

inline MatchLossResult match_loss(const Mlp& passive_model,
                                  const Tensor& x_batch,
                                  const Tensor& ha_prime, const Tensor& u,
                                  const std::vector<double>& observed) {
  ForwardTrace t = forward(passive_model, x_batch);
  return match_loss(passive_model, t, ha_prime, u, observed);
}

class AttackDiverged : public std::runtime_error {
 public:
  AttackDiverged(int iter)
      : std::runtime_error("label inference diverged at iteration " +
                          std::to_string(iter)),
        iteration(iter) {}
  int iteration;
};

struct LabelInferenceOptions {
  int iters = 2000;
  double lr = 0.01;
  bool adam = true;  // false: the plain gradient-descent update
  std::uint64_t seed = 0;
};

struct LabelInferenceResult {
  std::vector<int> labels;  // argmax(softmax(u_i)) per slot
  Tensor y_soft;            // softmax(u)
  double final_d = 0.0;
};

// Gradient descent on (u, H_a') to match the observed batch-averaged
// passive-party gradient.
inline LabelInferenceResult infer_labels(const std::vector<double>& observed,
                                         const Mlp& passive_model,
                                         const Tensor& x_batch,
                                         const LabelInferenceOptions& opt) {
  const std::size_t batch = x_batch.rows();
  const std::size_t c = passive_model.out_dim();
  Rng rng(opt.seed);
  LabelInferenceState st;
  st.u = Tensor::zeros(batch, c);
  st.ha = Tensor::zeros(batch, c);
  for (double& v : st.ha.data) v = rng.normal();
  for (double& v : st.u.data) v = rng.normal();

  ForwardTrace trace = forward(passive_model, x_batch);
  const std::size_t n = batch * c;
  Adam optim(2 * n, opt.lr);
  std::vector<double> params(2 * n), grad(2 * n);
  MatchLossResult ml;
  for (int it = 0; it < opt.iters; ++it) {
    ml = match_loss(passive_model, trace, st.ha, st.u, observed);
    if (!std::isfinite(ml.d)) throw AttackDiverged(it);
    if (opt.adam) {
      std::copy(st.u.data.begin(), st.u.data.end(), params.begin());
      std::copy(st.ha.data.begin(), st.ha.data.end(), params.begin() + n);
      std::copy(ml.du.data.begin(), ml.du.data.end(), grad.begin());
      std::copy(ml.dha.data.begin(), ml.dha.data.end(), grad.begin() + n);
      optim.step(params, grad);
      std::copy(params.begin(), params.begin() + n, st.u.data.begin());
      std::copy(params.begin() + n, params.end(), st.ha.data.begin());
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        st.u.data[i] -= opt.lr * ml.du.data[i];
        st.ha.data[i] -= opt.lr * ml.dha.data[i];
      }
    }
    ++st.iterations;
  }
  LabelInferenceResult res;
  res.y_soft = softmax(st.u);
  res.labels = argmax_rows(res.y_soft);
  res.final_d = match_loss(passive_model, trace, st.ha, st.u, observed).d;
  return res;
}

// ===========================================================================
// Per-sample gradient sign inference
// ===========================================================================

class AmbiguousGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// For a plain one-hot cross-entropy gradient over classes, exactly the true
// label's component is negative.
inline int label_from_gradient_sign(const std::vector<double>& g) {
  int neg = -1;
  int count = 0;
  for (std::size_t j = 0; j < g.size(); ++j)
    if (g[j] < 0.0) {
      neg = static_cast<int>(j);
      ++count;
    }
  if (count != 1)
    throw AmbiguousGradient("gradient has " + std::to_string(count) +
                            " negative elements");
  return neg;
}

// ===========================================================================
// Encrypted label substitution
// ===========================================================================

// Turns an encrypted softmax-CE gradient for label y into the gradient for
// label tau, using only homomorphic adds: g + [[e_y]] - [[e_tau]].
inline OpaqueVec replace_gradient_label(const OpaqueVec& g, int tau, int y) {
  const int c = static_cast<int>(g.size());
  if (tau < 0 || tau >= c || y < 0 || y >= c)
    throw std::invalid_argument("replace_gradient_label: index out of range");
  std::vector<double> delta(g.size(), 0.0);
  delta[static_cast<std::size_t>(y)] += 1.0;
  delta[static_cast<std::size_t>(tau)] -= 1.0;
  OpaqueVec out = g;
  out.add(OpaqueVec::encrypt(std::move(delta), g.party(), g.sample()));
  return out;
}

// ===========================================================================
// Gradient-replacement backdoor
// ===========================================================================

struct GrBackdoorConfig {
  int target_label = 0;                    // tau
  std::vector<std::size_t> target_ids;     // clean samples of class tau
  std::vector<std::size_t> backdoor_ids;   // trigger-marked samples
  double gamma = 10.0;
  bool random_h = true;

  void validate() const {
    if (gamma <= 0.0) throw std::invalid_argument("GrBackdoorConfig: gamma > 0");
    std::unordered_set<std::size_t> t(target_ids.begin(), target_ids.end());
    for (std::size_t b : backdoor_ids)
      if (t.count(b))
        throw std::invalid_argument(
            "GrBackdoorConfig: target and backdoor sets must be disjoint");
  }
};

// Identity-steal attack state for one passive party. The forward hook swaps
// each target slot's local input for a random backdoor sample (so the emitted
// H and the later Jacobian both belong to the backdoor sample); the backward
// hook amplifies the gradient received for those slots by gamma. All gradient
// handling stays on the opaque interface.
class GrBackdoorAttacker {
 public:
  GrBackdoorAttacker(GrBackdoorConfig cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)),
        rng_(seed),
        targets_(cfg_.target_ids.begin(), cfg_.target_ids.end()),
        backdoors_(cfg_.backdoor_ids.begin(), cfg_.backdoor_ids.end()) {
    cfg_.validate();
  }

  struct ForwardPlan {
    Tensor x_effective;                  // batch inputs after identity steal
    std::vector<std::uint8_t> emit_random;  // slots that send N(0,1) vectors
    std::vector<std::pair<std::size_t, std::size_t>> ledger;  // <slot, j>
  };

  // x_batch: this party's feature rows for the batch; all_x: its full slice.
  ForwardPlan on_forward(const std::vector<std::size_t>& batch,
                         const Tensor& x_batch, const Tensor& all_x) {
    ForwardPlan plan;
    plan.x_effective = x_batch;
    plan.emit_random.assign(batch.size(), 0);
    for (std::size_t slot = 0; slot < batch.size(); ++slot) {
      const std::size_t id = batch[slot];
      if (targets_.count(id)) {
        if (cfg_.backdoor_ids.empty())
          throw std::runtime_error(
              "gr_forward_hook: backdoor set empty with target slot present");
        const std::size_t j =
            cfg_.backdoor_ids[rng_.below(cfg_.backdoor_ids.size())];
        std::copy(all_x.row(j), all_x.row(j) + all_x.cols(),
                  plan.x_effective.row(slot));
        plan.ledger.emplace_back(slot, j);
      } else if (cfg_.random_h && backdoors_.count(id)) {
        plan.emit_random[slot] = 1;
      }
    }
    return plan;
  }

  // Scales each paired slot's received opaque gradient by gamma. Slots that
  // emitted random vectors discard their received gradient entirely: it was
  // computed against noise and would only corrupt the local model.
  void on_backward(std::vector<OpaqueVec>& g,
                   const std::vector<std::pair<std::size_t, std::size_t>>&
                       ledger,
                   const std::vector<std::uint8_t>& emit_random = {}) const {
    for (std::size_t slot = 0; slot < emit_random.size(); ++slot)
      if (emit_random[slot]) {
        if (slot >= g.size())
          throw std::invalid_argument(
              "gr_backward_hook: emit_random slot absent from batch");
        g[slot].scale(0.0);
      }
    for (const auto& [slot, j] : ledger) {
      if (slot >= g.size())
        throw std::invalid_argument(
            "gr_backward_hook: ledger slot absent from batch");
      // gamma * batch cancels the protocol's batch-mean divisor, so the
      // paired sample's update uses exactly gamma x the slot gradient
      g[slot].scale(cfg_.gamma * static_cast<double>(g.size()));
    }
  }

  double random_h_value(Rng& party_rng) const { return party_rng.normal(); }

  const GrBackdoorConfig& config() const { return cfg_; }

 private:
  GrBackdoorConfig cfg_;
  Rng rng_;
  std::unordered_set<std::size_t> targets_;
  std::unordered_set<std::size_t> backdoors_;
};

// ===========================================================================
// Active-party label poisoning baseline
// ===========================================================================

inline std::vector<int> active_label_poison(std::vector<int> labels,
                                            const std::vector<std::size_t>& ids,
                                            int target) {
  for (std::size_t id : ids) {
    if (id >= labels.size())
      throw std::invalid_argument("active_label_poison: id out of range");
    labels[id] = target;
  }
  return labels;
}

}  // namespace vflsim
