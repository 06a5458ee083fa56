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
#include <memory>
#include <stdexcept>
#include <vector>

#include "vflsim/attacks.hpp"
#include "vflsim/data.hpp"
#include "vflsim/defenses.hpp"
#include "vflsim/mlp.hpp"
#include "vflsim/numerics.hpp"
#include "vflsim/opaque.hpp"
#include "vflsim/rng.hpp"

namespace vflsim {

struct TtpAudit {
  std::size_t decrypts = 0;
  std::size_t per_sample_attempts = 0;
};

// The TTP decrypts batch-aggregated parameter gradients only. Per-sample
// ciphertexts are refused; this is the enforcement point of the threat model.
inline std::vector<double> ttp_decrypt(const OpaqueVec& v,
                                       TtpAudit* audit = nullptr) {
  if (v.scope() != OpaqueVec::Scope::kAggregate) {
    if (audit) ++audit->per_sample_attempts;
    throw ThreatModelViolation(
        "TTP refuses to decrypt a sample-level ciphertext");
  }
  if (audit) ++audit->decrypts;
  return detail::OpaqueAccess::payload(v);
}

namespace detail {

// Models the HE-protected gradient computation of the training protocol: each
// party contracts its plaintext per-sample Jacobians with the encrypted
// per-sample output gradients; the result is an encrypted batch-averaged
// parameter gradient. Party code cannot read the inputs or the output.
inline OpaqueVec opaque_param_grad(const Mlp& model, const ForwardTrace& trace,
                                   const std::vector<OpaqueVec>& g,
                                   int party) {
  const std::size_t batch = trace.input.rows();
  if (g.size() != batch)
    throw std::invalid_argument("opaque_param_grad: one gradient per slot");
  Tensor out_grad = Tensor::zeros(batch, model.out_dim());
  for (std::size_t i = 0; i < batch; ++i) {
    const auto& payload = OpaqueAccess::payload(g[i]);
    if (payload.size() != model.out_dim())
      throw std::invalid_argument("opaque_param_grad: gradient width");
    std::copy(payload.begin(), payload.end(), out_grad.row(i));
  }
  std::vector<double> flat = backward(model, trace, out_grad).grads.flat();
  return OpaqueAccess::make(std::move(flat), OpaqueVec::Scope::kAggregate,
                            party, -1);
}

// Fused logits per sample: the active party's own H plus the (encrypted)
// passive contributions. Evaluated inside the protected computation.
inline Tensor fuse_logits(const Tensor& h_active,
                          const std::vector<std::vector<OpaqueVec>>& enc_h) {
  Tensor logits = h_active;
  for (const auto& party_h : enc_h) {
    if (party_h.size() != logits.rows())
      throw std::invalid_argument("fuse_logits: slot count mismatch");
    for (std::size_t i = 0; i < party_h.size(); ++i) {
      const auto& payload = OpaqueAccess::payload(party_h[i]);
      if (payload.size() != logits.cols())
        throw std::invalid_argument("fuse_logits: width mismatch");
      for (std::size_t j = 0; j < payload.size(); ++j)
        logits(i, j) += payload[j];
    }
  }
  return logits;
}

}  // namespace detail

// A label-free party. Holds its vertical slice and sub-model; may carry an
// attack hook.
struct PassiveParty {
  int id = 0;
  Mlp model;
  Tensor train_x;
  Tensor test_x;
  std::shared_ptr<GrBackdoorAttacker> attacker;
};

// The label-holding party. Applies its defense before any per-sample
// gradient leaves it.
struct ActiveParty {
  int id = 0;
  Mlp model;
  Tensor train_x;
  Tensor test_x;
  std::vector<int> labels;
  DefenseConfig defense;
  std::shared_ptr<const CoAe> coae;
  Rng noise_rng{0};
};

struct EvalMetrics {
  double main_accuracy = 0.0;
  double backdoor_accuracy = 0.0;
  std::size_t clean_count = 0;
  std::size_t triggered_count = 0;
};

struct ObservedRound {
  std::vector<std::size_t> batch;
  // Decrypted batch-averaged parameter gradient per party (passive parties
  // first, active last) -- exactly what each party legitimately observes.
  std::vector<std::vector<double>> party_grads;
};

struct SessionConfig {
  std::size_t hidden = 32;   // 0 = single linear layer
  std::size_t batch = 64;
  double lr = 0.05;
  int epochs = 10;
  std::uint64_t seed = 0;
};

// One training session: K-1 passive parties plus the active party (last
// role, matching the convention that labels live in party K).
class VflSession {
 public:
  VflSession(const Dataset& train, const Dataset& test,
             const PartitionSpec& spec, const SessionConfig& cfg)
      : cfg_(cfg),
        classes_(train.classes),
        test_y_(test.y),
        test_trigger_(test.trigger_mask),
        batch_rng_(cfg.seed ^ 0x9e3779b97f4a7c15ull) {
    spec.validate(train.dim());
    if (spec.parties() < 2)
      throw std::invalid_argument("VflSession: need at least 2 parties");
    Rng init_rng(cfg.seed);
    auto train_views = vertical_split(train, spec);
    auto test_views = vertical_split(test, spec);
    const std::size_t k = spec.parties();
    for (std::size_t p = 0; p + 1 < k; ++p) {
      PassiveParty party;
      party.id = static_cast<int>(p);
      party.model = make_model(train_views[p].cols(), init_rng);
      party.train_x = std::move(train_views[p]);
      party.test_x = std::move(test_views[p]);
      passive_.push_back(std::move(party));
    }
    active_.id = static_cast<int>(k - 1);
    active_.model = make_model(train_views[k - 1].cols(), init_rng);
    active_.train_x = std::move(train_views[k - 1]);
    active_.test_x = std::move(test_views[k - 1]);
    active_.labels = train.y;
    active_.noise_rng = Rng(cfg.seed ^ 0xd1b54a32d192ed03ull);
    party_noise_rng_ = Rng(cfg.seed ^ 0x8cb92ba72f3d8dd7ull);
  }

  std::size_t passive_count() const { return passive_.size(); }
  PassiveParty& passive(std::size_t k) { return passive_.at(k); }
  const PassiveParty& passive(std::size_t k) const { return passive_.at(k); }
  ActiveParty& active() { return active_; }
  const ActiveParty& active() const { return active_; }
  int classes() const { return classes_; }
  const TtpAudit& audit() const { return audit_; }
  const SessionConfig& config() const { return cfg_; }

  void set_defense(DefenseConfig d, std::shared_ptr<const CoAe> coae = nullptr) {
    d.validate();
    if (d.mode == DefenseMode::kCoae && !coae)
      throw std::invalid_argument("set_defense: coae mode needs a trained CoAe");
    active_.defense = d;
    active_.coae = std::move(coae);
  }

  void set_attacker(std::size_t party, std::shared_ptr<GrBackdoorAttacker> a) {
    passive_.at(party).attacker = std::move(a);
  }

  void poison_labels(const std::vector<std::size_t>& ids, int target) {
    active_.labels = active_label_poison(active_.labels, ids, target);
  }

  // One protocol round over the given batch; updates every party.
  void round(const std::vector<std::size_t>& batch) {
    RoundState rs = forward_phase(batch);
    apply_updates(batch, rs);
  }

  // Runs the forward and gradient phases but applies no update; returns the
  // decrypted batch-averaged gradients each party would observe.
  ObservedRound observe_round(const std::vector<std::size_t>& batch) {
    RoundState rs = forward_phase(batch);
    ObservedRound obs;
    obs.batch = batch;
    obs.party_grads = party_gradients(batch, rs);
    return obs;
  }

  void train_epochs(int epochs) {
    const std::size_t n = active_.train_x.rows();
    for (int e = 0; e < epochs; ++e)
      for (const auto& batch : shuffled_batches(n, cfg_.batch, batch_rng_))
        round(batch);
  }

  void train() { train_epochs(cfg_.epochs); }

  // Fused prediction over the stored test slices. With CoAE protection the
  // fused softmax is post-composed with the decoder.
  std::vector<int> predict_test() const {
    Tensor logits = forward(active_.model, active_.test_x).output();
    for (const auto& p : passive_) {
      const Tensor h = forward(p.model, p.test_x).output();
      for (std::size_t i = 0; i < logits.data.size(); ++i)
        logits.data[i] += h.data[i];
    }
    if (active_.defense.mode == DefenseMode::kCoae)
      return coae_decode_predictions(*active_.coae, softmax(logits));
    return argmax_rows(logits);
  }

  // Main accuracy over clean test samples; backdoor accuracy = fraction of
  // triggered test samples predicted as tau.
  EvalMetrics evaluate(int tau = -1) const {
    if (test_y_.empty()) throw std::invalid_argument("evaluate: empty test set");
    const std::vector<int> pred = predict_test();
    EvalMetrics m;
    for (std::size_t i = 0; i < test_y_.size(); ++i) {
      if (test_trigger_[i]) {
        ++m.triggered_count;
        if (pred[i] == tau) m.backdoor_accuracy += 1.0;
      } else {
        ++m.clean_count;
        if (pred[i] == test_y_[i]) m.main_accuracy += 1.0;
      }
    }
    if (m.clean_count) m.main_accuracy /= static_cast<double>(m.clean_count);
    if (m.triggered_count)
      m.backdoor_accuracy /= static_cast<double>(m.triggered_count);
    return m;
  }

  static std::vector<std::vector<std::size_t>> shuffled_batches(
      std::size_t n, std::size_t batch, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = n; i-- > 1;) std::swap(idx[i], idx[rng.below(i + 1)]);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t b = 0; b < n; b += batch) {
      const std::size_t e = std::min(b + batch, n);
      out.emplace_back(idx.begin() + b, idx.begin() + e);
    }
    return out;
  }

 private:
  struct PartyRound {
    ForwardTrace trace;
    std::vector<OpaqueVec> enc_h;
    std::vector<std::pair<std::size_t, std::size_t>> ledger;
    std::vector<std::uint8_t> emit_random;
  };
  struct RoundState {
    std::vector<PartyRound> passive;
    ForwardTrace active_trace;
    std::vector<OpaqueVec> enc_g;  // defended per-sample class gradients
  };

  Mlp make_model(std::size_t in_dim, Rng& rng) const {
    std::vector<std::size_t> dims;
    dims.push_back(in_dim);
    if (cfg_.hidden > 0) dims.push_back(cfg_.hidden);
    dims.push_back(static_cast<std::size_t>(classes_));
    return Mlp::xavier(dims, rng);
  }

  RoundState forward_phase(const std::vector<std::size_t>& batch) {
    if (batch.empty()) throw std::invalid_argument("round: empty batch");
    for (std::size_t id : batch)
      if (id >= active_.train_x.rows())
        throw std::invalid_argument("round: batch index out of range");
    RoundState rs;

    // passive parties: per-sample H, encrypted
    for (auto& party : passive_) {
      PartyRound pr;
      Tensor x = rows(party.train_x, batch);
      std::vector<std::uint8_t> emit_random(batch.size(), 0);
      if (party.attacker) {
        auto plan = party.attacker->on_forward(batch, x, party.train_x);
        x = std::move(plan.x_effective);
        emit_random = std::move(plan.emit_random);
        pr.ledger = std::move(plan.ledger);
      }
      pr.trace = forward(party.model, x);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        std::vector<double> h(pr.trace.output().row(i),
                              pr.trace.output().row(i) + classes_);
        if (emit_random[i])
          for (double& v : h) v = party_noise_rng_.normal();
        pr.enc_h.push_back(OpaqueVec::encrypt(
            std::move(h), party.id, static_cast<std::int64_t>(batch[i])));
      }
      pr.emit_random = std::move(emit_random);
      rs.passive.push_back(std::move(pr));
    }

    // active party: fused per-sample gradients, defended before leaving
    rs.active_trace = forward(active_.model, rows(active_.train_x, batch));
    std::vector<std::vector<OpaqueVec>> enc_h;
    for (const auto& pr : rs.passive) enc_h.push_back(pr.enc_h);
    const Tensor logits = detail::fuse_logits(rs.active_trace.output(), enc_h);

    std::vector<int> y(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
      y[i] = active_.labels[batch[i]];
    Tensor g;
    if (active_.defense.mode == DefenseMode::kCoae)
      g = coae_defended_grads(*active_.coae, y, logits);
    else
      g = softmax_ce_grad(logits, one_hot(y, classes_));

    for (std::size_t i = 0; i < batch.size(); ++i) {
      std::vector<double> row(g.row(i), g.row(i) + classes_);
      switch (active_.defense.mode) {
        case DefenseMode::kDpGaussian:
          row = dp_noise(row, NoiseKind::kGaussian, active_.defense.sigma,
                         active_.defense.clip, active_.noise_rng);
          break;
        case DefenseMode::kDpLaplace:
          row = dp_noise(row, NoiseKind::kLaplace, active_.defense.b,
                         active_.defense.clip, active_.noise_rng);
          break;
        case DefenseMode::kSparsify:
          row = sparsify(row, active_.defense.drop_rate);
          break;
        default:
          break;
      }
      rs.enc_g.push_back(OpaqueVec::encrypt(std::move(row), active_.id,
                                            static_cast<std::int64_t>(batch[i])));
    }
    return rs;
  }

  std::vector<std::vector<double>> party_gradients(
      const std::vector<std::size_t>& batch, RoundState& rs) {
    std::vector<std::vector<double>> grads;
    for (std::size_t k = 0; k < passive_.size(); ++k) {
      auto& party = passive_[k];
      std::vector<OpaqueVec> g = rs.enc_g;
      if (party.attacker)
        party.attacker->on_backward(g, rs.passive[k].ledger,
                                    rs.passive[k].emit_random);
      const OpaqueVec opaque = detail::opaque_param_grad(
          party.model, rs.passive[k].trace, g, party.id);
      grads.push_back(ttp_decrypt(opaque, &audit_));
    }
    const OpaqueVec opaque = detail::opaque_param_grad(
        active_.model, rs.active_trace, rs.enc_g, active_.id);
    grads.push_back(ttp_decrypt(opaque, &audit_));
    return grads;
  }

  void apply_updates(const std::vector<std::size_t>& batch, RoundState& rs) {
    const auto grads = party_gradients(batch, rs);
    for (std::size_t k = 0; k < passive_.size(); ++k)
      passive_[k].model.apply_update(grads[k], cfg_.lr);
    active_.model.apply_update(grads.back(), cfg_.lr);
  }

  static Tensor rows(const Tensor& src, const std::vector<std::size_t>& ids) {
    Tensor out = Tensor::zeros(ids.size(), src.cols());
    for (std::size_t i = 0; i < ids.size(); ++i)
      std::copy(src.row(ids[i]), src.row(ids[i]) + src.cols(), out.row(i));
    return out;
  }

  SessionConfig cfg_;
  int classes_;
  std::vector<PassiveParty> passive_;
  ActiveParty active_;
  std::vector<int> test_y_;
  std::vector<std::uint8_t> test_trigger_;
  Rng batch_rng_;
  Rng party_noise_rng_{0};
  TtpAudit audit_;
};

}  // namespace vflsim
