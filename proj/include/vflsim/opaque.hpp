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
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace vflsim {

// Raised when code tries to read sample-level protected state.
class ThreatModelViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
struct OpaqueAccess;
}

// Ciphertext stand-in. The payload is private; parties may only combine
// OpaqueVecs linearly (the additive-HE interface) and the TTP decrypts
// aggregates. Per-sample payloads are never readable by party code.
class OpaqueVec {
 public:
  enum class Scope { kPerSample, kAggregate };

  // Anyone may encrypt fresh values (public-key model). The result is always
  // sample-scoped; aggregates are minted only by the protocol machinery.
  static OpaqueVec encrypt(std::vector<double> payload, int party,
                           std::int64_t sample) {
    return OpaqueVec(std::move(payload), Scope::kPerSample, party, sample);
  }

  std::size_t size() const { return payload_.size(); }
  Scope scope() const { return scope_; }
  int party() const { return party_; }
  std::int64_t sample() const { return sample_; }

  void add(const OpaqueVec& other) {
    if (other.size() != size())
      throw std::invalid_argument("OpaqueVec::add: length mismatch");
    for (std::size_t i = 0; i < payload_.size(); ++i)
      payload_[i] += other.payload_[i];
  }

  void scale(double a) {
    for (double& v : payload_) v *= a;
  }

  static OpaqueVec linear_combine(std::span<const double> coeffs,
                                  std::span<const OpaqueVec* const> vecs) {
    if (coeffs.size() != vecs.size() || vecs.empty())
      throw std::invalid_argument("OpaqueVec::linear_combine: arity");
    std::vector<double> acc(vecs[0]->size(), 0.0);
    for (std::size_t k = 0; k < vecs.size(); ++k) {
      if (vecs[k]->size() != acc.size())
        throw std::invalid_argument("OpaqueVec::linear_combine: length");
      for (std::size_t i = 0; i < acc.size(); ++i)
        acc[i] += coeffs[k] * vecs[k]->payload_[i];
    }
    return OpaqueVec(std::move(acc), Scope::kPerSample, vecs[0]->party_,
                     vecs[0]->sample_);
  }

 private:
  OpaqueVec(std::vector<double> payload, Scope scope, int party,
            std::int64_t sample)
      : payload_(std::move(payload)),
        scope_(scope),
        party_(party),
        sample_(sample) {}

  std::vector<double> payload_;
  Scope scope_;
  int party_;
  std::int64_t sample_;

  friend struct detail::OpaqueAccess;
};

namespace detail {
// Backdoor into the ciphertext abstraction. Used by the protocol machinery
// (which models computation under encryption) and by test oracles. Party and
// attack code must never touch this.
struct OpaqueAccess {
  static const std::vector<double>& payload(const OpaqueVec& v) {
    return v.payload_;
  }
  static OpaqueVec make(std::vector<double> payload, OpaqueVec::Scope scope,
                        int party, std::int64_t sample) {
    return OpaqueVec(std::move(payload), scope, party, sample);
  }
};
}  // namespace detail

namespace testing {
// Test-only plaintext view, for oracle comparisons in the suites.
inline const std::vector<double>& decrypt_for_test(const OpaqueVec& v) {
  return detail::OpaqueAccess::payload(v);
}
}  // namespace testing

}  // namespace vflsim
