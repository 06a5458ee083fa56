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
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "vflsim/rng.hpp"
#include "vflsim/tensor.hpp"

namespace vflsim {

struct Dataset {
  Tensor x;                          // [n, d], values in [0, 1]
  std::vector<int> y;                // class indices
  int classes = 0;
  std::vector<std::uint8_t> trigger_mask;  // 1 = trigger-marked
  std::size_t image_side = 0;        // 0 for non-image data

  std::size_t size() const { return x.rows(); }
  std::size_t dim() const { return x.cols(); }

  std::size_t marked_count() const {
    return static_cast<std::size_t>(
        std::count(trigger_mask.begin(), trigger_mask.end(), 1));
  }
};

// Disjoint, contiguous [begin, end) feature ranges covering [0, d). Range k
// belongs to party k; ranges need not be listed in feature order, so any
// party role may own any slice.
struct PartitionSpec {
  std::vector<std::pair<std::size_t, std::size_t>> ranges;

  static PartitionSpec even(std::size_t d, std::size_t parties) {
    if (parties == 0 || d % parties != 0)
      throw std::invalid_argument("PartitionSpec::even: d not divisible");
    PartitionSpec s;
    const std::size_t w = d / parties;
    for (std::size_t k = 0; k < parties; ++k)
      s.ranges.emplace_back(k * w, (k + 1) * w);
    return s;
  }

  std::size_t parties() const { return ranges.size(); }

  void validate(std::size_t d) const {
    auto sorted = ranges;
    std::sort(sorted.begin(), sorted.end());
    std::size_t pos = 0;
    for (const auto& [b, e] : sorted) {
      if (b != pos || e <= b)
        throw std::invalid_argument("PartitionSpec: overlap or gap");
      pos = e;
    }
    if (pos != d) throw std::invalid_argument("PartitionSpec: does not cover d");
  }

  // Party owning feature index f.
  std::size_t owner(std::size_t f) const {
    for (std::size_t k = 0; k < ranges.size(); ++k)
      if (f >= ranges[k].first && f < ranges[k].second) return k;
    throw std::invalid_argument("PartitionSpec::owner: index out of range");
  }
};

// A fixed feature/pixel pattern that marks backdoor samples.
struct TriggerSpec {
  enum class Kind { kPixel, kFeature };
  struct Point {
    std::size_t feature;  // flat feature index
    double value;         // already in the scaled [0,1] domain
  };

  Kind kind = Kind::kFeature;
  std::vector<Point> points;
  int owning_party = -1;  // -1: not pinned to a party

  // The four-pixel pattern at the lower right of a 28x28 image, value 255.
  static TriggerSpec mnist_corner() {
    TriggerSpec t;
    t.kind = Kind::kPixel;
    for (auto [r, c] : {std::pair{25, 27}, {27, 25}, {26, 26}, {27, 27}})
      t.points.push_back({static_cast<std::size_t>(r * 28 + c), 1.0});
    return t;
  }

  // One pixel at the lower right of the given party's slice.
  static TriggerSpec party_corner_pixel(const PartitionSpec& spec,
                                        std::size_t party) {
    TriggerSpec t;
    t.kind = Kind::kPixel;
    t.owning_party = static_cast<int>(party);
    t.points.push_back({spec.ranges.at(party).second - 1, 1.0});
    return t;
  }

  void check_ownership(const PartitionSpec& spec) const {
    if (owning_party < 0) return;
    const auto& [b, e] = spec.ranges.at(static_cast<std::size_t>(owning_party));
    for (const auto& p : points)
      if (p.feature < b || p.feature >= e)
        throw std::invalid_argument(
            "TriggerSpec: position outside owning party's slice");
  }
};

// ---------------------------------------------------------------------------
// IDX ingestion (MNIST file format)
// ---------------------------------------------------------------------------

namespace detail {
inline std::uint32_t read_be_u32(std::ifstream& in, const std::string& path,
                                 std::size_t offset) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in)
    throw std::runtime_error("IDX parse error in " + path + ": truncated at offset " +
                             std::to_string(offset));
  return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
         (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}
}  // namespace detail

inline Dataset load_mnist(const std::string& image_path,
                          const std::string& label_path) {
  std::ifstream img(image_path, std::ios::binary);
  if (!img) throw std::runtime_error("cannot open " + image_path);
  const std::uint32_t img_magic = detail::read_be_u32(img, image_path, 0);
  if (img_magic != 0x00000803)
    throw std::runtime_error("bad IDX image magic in " + image_path);
  const std::uint32_t n = detail::read_be_u32(img, image_path, 4);
  const std::uint32_t rows = detail::read_be_u32(img, image_path, 8);
  const std::uint32_t cols = detail::read_be_u32(img, image_path, 12);

  std::ifstream lab(label_path, std::ios::binary);
  if (!lab) throw std::runtime_error("cannot open " + label_path);
  const std::uint32_t lab_magic = detail::read_be_u32(lab, label_path, 0);
  if (lab_magic != 0x00000801)
    throw std::runtime_error("bad IDX label magic in " + label_path);
  const std::uint32_t n_lab = detail::read_be_u32(lab, label_path, 4);
  if (n != n_lab)
    throw std::runtime_error("IDX count mismatch: " + std::to_string(n) +
                             " images vs " + std::to_string(n_lab) + " labels");

  Dataset d;
  d.image_side = rows;
  d.x = Tensor::zeros(n, std::size_t(rows) * cols);
  d.y.resize(n);
  d.trigger_mask.assign(n, 0);
  std::vector<unsigned char> buf(std::size_t(rows) * cols);
  for (std::uint32_t i = 0; i < n; ++i) {
    img.read(reinterpret_cast<char*>(buf.data()),
             static_cast<std::streamsize>(buf.size()));
    if (!img)
      throw std::runtime_error(
          "IDX parse error in " + image_path + ": truncated at offset " +
          std::to_string(16 + std::size_t(i) * buf.size()));
    for (std::size_t j = 0; j < buf.size(); ++j)
      d.x.data[std::size_t(i) * buf.size() + j] = buf[j] / 255.0;
    char lbl;
    lab.read(&lbl, 1);
    if (!lab)
      throw std::runtime_error("IDX parse error in " + label_path +
                               ": truncated at offset " + std::to_string(8 + i));
    d.y[i] = static_cast<unsigned char>(lbl);
  }
  d.classes = d.y.empty() ? 0 : *std::max_element(d.y.begin(), d.y.end()) + 1;
  return d;
}

namespace detail {
inline void write_be_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(buf), 4);
}
}  // namespace detail

// Writes the dataset back out in IDX format (pixels re-quantized to uint8).
inline void write_idx(const Dataset& d, const std::string& image_path,
                      const std::string& label_path) {
  const std::size_t side = d.image_side ? d.image_side : 1;
  std::ofstream img(image_path, std::ios::binary);
  if (!img) throw std::runtime_error("cannot write " + image_path);
  detail::write_be_u32(img, 0x00000803);
  detail::write_be_u32(img, static_cast<std::uint32_t>(d.size()));
  detail::write_be_u32(img, static_cast<std::uint32_t>(side));
  detail::write_be_u32(img, static_cast<std::uint32_t>(d.dim() / side));
  std::vector<unsigned char> buf(d.dim());
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = 0; j < d.dim(); ++j)
      buf[j] = static_cast<unsigned char>(
          std::lround(std::clamp(d.x(i, j), 0.0, 1.0) * 255.0));
    img.write(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
  }
  std::ofstream lab(label_path, std::ios::binary);
  if (!lab) throw std::runtime_error("cannot write " + label_path);
  detail::write_be_u32(lab, 0x00000801);
  detail::write_be_u32(lab, static_cast<std::uint32_t>(d.size()));
  for (int y : d.y) {
    const char c = static_cast<char>(y);
    lab.write(&c, 1);
  }
}

// ---------------------------------------------------------------------------
// Synthetic datasets
// ---------------------------------------------------------------------------

// Gaussian blobs around seeded class centers.
inline Dataset synth_blobs(int classes, std::size_t dim,
                           std::size_t per_class, double spread,
                           std::uint64_t seed) {
  if (classes < 2 || dim < static_cast<std::size_t>(classes))
    throw std::invalid_argument("synth_blobs: need c >= 2 and d >= c");
  Rng rng(seed);
  Tensor centers = Tensor::zeros(classes, dim);
  for (double& v : centers.data) v = rng.uniform();
  Dataset d;
  d.classes = classes;
  d.x = Tensor::zeros(std::size_t(classes) * per_class, dim);
  d.y.resize(d.x.rows());
  d.trigger_mask.assign(d.x.rows(), 0);
  std::size_t i = 0;
  for (int k = 0; k < classes; ++k)
    for (std::size_t s = 0; s < per_class; ++s, ++i) {
      d.y[i] = k;
      for (std::size_t j = 0; j < dim; ++j)
        d.x(i, j) = std::clamp(centers(k, j) + spread * rng.normal(), 0.0, 1.0);
    }
  return d;
}

// Deterministic 28x28 digit-like images: each class is a small set of blob
// prototypes with per-sample shift, intensity jitter and pixel noise. The
// outer border (rows/cols >= 23) stays dark so corner triggers are salient.
inline Dataset synth_digits(std::size_t n, std::uint64_t seed,
                            int classes = 10) {
  constexpr std::size_t kSide = 28;
  constexpr int kModes = 3;
  Rng rng(seed);
  struct Blob {
    double r, c, sigma, amp;
  };
  // class prototypes come from a fixed corpus-level stream so that splits
  // generated with different seeds (train vs test) share the same classes
  Rng proto_rng(0xd1f7c0de5eed0001ull);
  std::vector<std::vector<std::vector<Blob>>> proto(classes);
  for (int k = 0; k < classes; ++k) {
    proto[k].resize(kModes);
    for (int m = 0; m < kModes; ++m)
      for (int b = 0; b < 5; ++b)
        proto[k][m].push_back({proto_rng.uniform(6.0, 19.0),
                               proto_rng.uniform(6.0, 19.0),
                               proto_rng.uniform(1.3, 2.4),
                               proto_rng.uniform(0.55, 1.0)});
  }
  Dataset d;
  d.classes = classes;
  d.image_side = kSide;
  d.x = Tensor::zeros(n, kSide * kSide);
  d.y.resize(n);
  d.trigger_mask.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const int k = static_cast<int>(rng.below(classes));
    const int m = static_cast<int>(rng.below(kModes));
    const double dr = rng.uniform(-2.0, 2.0);
    const double dc = rng.uniform(-2.0, 2.0);
    const double gain = rng.uniform(0.55, 1.25);
    d.y[i] = k;
    for (std::size_t r = 0; r < kSide; ++r)
      for (std::size_t c = 0; c < kSide; ++c) {
        double v = 0.0;
        for (const Blob& bl : proto[k][m]) {
          const double drr = r - (bl.r + dr);
          const double dcc = c - (bl.c + dc);
          v += bl.amp * std::exp(-(drr * drr + dcc * dcc) /
                                 (2.0 * bl.sigma * bl.sigma));
        }
        const double noise = rng.normal();
        if (r >= 23 || c >= 23)
          v = 0.05 * std::fabs(noise);  // border stays dark for triggers
        else
          v = gain * v + 0.18 * noise;
        const double q =
            std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
        d.x(i, r * kSide + c) = q;
      }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Partitioning, triggers, target selection
// ---------------------------------------------------------------------------

inline std::vector<Tensor> vertical_split(const Dataset& d,
                                          const PartitionSpec& spec) {
  spec.validate(d.dim());
  std::vector<Tensor> views;
  for (const auto& [b, e] : spec.ranges) {
    Tensor v = Tensor::zeros(d.size(), e - b);
    for (std::size_t i = 0; i < d.size(); ++i)
      std::copy(d.x.row(i) + b, d.x.row(i) + e, v.row(i));
    views.push_back(std::move(v));
  }
  return views;
}

inline void apply_trigger(Dataset& d, const TriggerSpec& t,
                          const std::vector<std::size_t>& ids) {
  for (const auto& p : t.points)
    if (p.feature >= d.dim())
      throw std::invalid_argument("apply_trigger: position out of range");
  for (std::size_t id : ids) {
    if (id >= d.size())
      throw std::invalid_argument("apply_trigger: sample id out of range");
    for (const auto& p : t.points) d.x(id, p.feature) = p.value;
    d.trigger_mask[id] = 1;
  }
}

// k distinct clean (untriggered) samples of class tau.
inline std::vector<std::size_t> select_targets(const Dataset& d, int tau,
                                               std::size_t k,
                                               std::uint64_t seed) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d.y[i] == tau && !d.trigger_mask[i]) pool.push_back(i);
  if (pool.size() < k)
    throw std::runtime_error("select_targets: not enough clean samples of class " +
                             std::to_string(tau));
  Rng rng(seed);
  for (std::size_t i = pool.size(); i-- > 1;)
    std::swap(pool[i], pool[rng.below(i + 1)]);
  pool.resize(k);
  return pool;
}

// k distinct sample ids drawn without replacement, excluding `exclude`.
inline std::vector<std::size_t> sample_ids(std::size_t n, std::size_t k,
                                           Rng& rng,
                                           const std::vector<std::size_t>& exclude = {}) {
  std::vector<std::uint8_t> blocked(n, 0);
  for (std::size_t e : exclude) blocked[e] = 1;
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < n; ++i)
    if (!blocked[i]) pool.push_back(i);
  if (pool.size() < k) throw std::runtime_error("sample_ids: not enough samples");
  for (std::size_t i = pool.size(); i-- > 1;)
    std::swap(pool[i], pool[rng.below(i + 1)]);
  pool.resize(k);
  return pool;
}

}  // namespace vflsim
