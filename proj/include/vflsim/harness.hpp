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

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "vflsim/attacks.hpp"
#include "vflsim/data.hpp"
#include "vflsim/defenses.hpp"
#include "vflsim/protocol.hpp"

namespace vflsim {

using json = nlohmann::json;

inline constexpr int kMetricsSchemaVersion = 1;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void reject_unknown_keys(const json& obj, const std::string& path,
                                std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok)
      throw ConfigError("unknown key '" + path + it.key() + "'");
  }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  return obj.at(key).get<T>();
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct DatasetSpec {
  std::string type;  // blobs | synth_digits | mnist
  // blobs
  int classes = 10;
  std::size_t dim = 20;
  std::size_t per_class = 100;
  std::size_t per_class_test = 50;
  double spread = 0.15;
  // synth_digits
  std::size_t n_train = 20000;
  std::size_t n_test = 4000;
  // mnist
  std::string train_images, train_labels, test_images, test_labels;
  std::uint64_t seed = 1;
};

struct AttackSpec {
  std::string type = "none";  // none | label_inference | grad_replacement | active_poison
  // label_inference
  int li_iters = 2000;
  double li_lr = 0.01;
  std::size_t li_batch = 8;
  int li_rounds = 5;
  bool li_adam = true;
  // grad_replacement / active_poison
  int target_label = 0;
  double gamma = 10.0;
  std::size_t n_backdoor_train = 600;
  std::size_t n_backdoor_test = 100;
  std::size_t n_targets = 10;
  bool random_h = true;
  bool distributed = false;
  double poison_fraction = 0.01;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  std::size_t parties = 2;
  std::size_t hidden = 32;
  double lr = 0.05;
  int epochs = 10;
  std::size_t batch = 64;
  AttackSpec attack;
  DefenseConfig defense;
  int coae_steps = 3000;
  double coae_lr = 1e-3;
  std::string coae_file;  // optional persisted disguise model
  std::uint64_t seed = 42;
  int repeats = 1;

  json resolved;  // canonical form, used for hashing and the manifest

  std::string hash() const {
    return detail::hex64(detail::fnv1a(resolved.dump()));
  }
};

inline ExperimentConfig parse_config(const json& j) {
  using detail::get_or;
  detail::reject_unknown_keys(
      j, "", {"dataset", "partition", "model", "train", "attack", "defense",
              "seed", "repeats"});
  ExperimentConfig c;

  const json ds = j.value("dataset", json::object());
  detail::reject_unknown_keys(
      ds, "dataset.",
      {"type", "classes", "dim", "per_class", "per_class_test", "spread",
       "train", "test", "train_images", "train_labels", "test_images",
       "test_labels", "seed"});
  c.dataset.type = get_or<std::string>(ds, "type", "blobs");
  c.dataset.classes = get_or<int>(ds, "classes", 10);
  c.dataset.dim = get_or<std::size_t>(ds, "dim", 20);
  c.dataset.per_class = get_or<std::size_t>(ds, "per_class", 100);
  c.dataset.per_class_test = get_or<std::size_t>(ds, "per_class_test", 50);
  c.dataset.spread = get_or<double>(ds, "spread", 0.15);
  c.dataset.n_train = get_or<std::size_t>(ds, "train", 20000);
  c.dataset.n_test = get_or<std::size_t>(ds, "test", 4000);
  c.dataset.train_images = get_or<std::string>(ds, "train_images", "");
  c.dataset.train_labels = get_or<std::string>(ds, "train_labels", "");
  c.dataset.test_images = get_or<std::string>(ds, "test_images", "");
  c.dataset.test_labels = get_or<std::string>(ds, "test_labels", "");
  c.dataset.seed = get_or<std::uint64_t>(ds, "seed", 1);
  if (c.dataset.type != "blobs" && c.dataset.type != "synth_digits" &&
      c.dataset.type != "mnist")
    throw ConfigError("dataset.type must be blobs|synth_digits|mnist");
  if (c.dataset.type == "mnist")
    for (const std::string& p :
         {c.dataset.train_images, c.dataset.train_labels,
          c.dataset.test_images, c.dataset.test_labels})
      if (!std::filesystem::exists(p))
        throw ConfigError("dataset file does not exist: " + p);

  const json part = j.value("partition", json::object());
  detail::reject_unknown_keys(part, "partition.", {"parties"});
  c.parties = get_or<std::size_t>(part, "parties", 2);
  if (c.parties < 2) throw ConfigError("partition.parties must be >= 2");

  const json model = j.value("model", json::object());
  detail::reject_unknown_keys(model, "model.", {"hidden"});
  c.hidden = get_or<std::size_t>(model, "hidden", 32);

  const json train = j.value("train", json::object());
  detail::reject_unknown_keys(train, "train.", {"lr", "epochs", "batch"});
  c.lr = get_or<double>(train, "lr", 0.05);
  c.epochs = get_or<int>(train, "epochs", 10);
  c.batch = get_or<std::size_t>(train, "batch", 64);

  const json atk = j.value("attack", json::object());
  detail::reject_unknown_keys(
      atk, "attack.",
      {"type", "iters", "lr", "batch_size", "rounds", "adam", "target_label",
       "gamma", "n_backdoor_train", "n_backdoor_test", "n_targets", "random_h",
       "distributed", "fraction"});
  c.attack.type = get_or<std::string>(atk, "type", "none");
  c.attack.li_iters = get_or<int>(atk, "iters", 2000);
  c.attack.li_lr = get_or<double>(atk, "lr", 0.01);
  c.attack.li_batch = get_or<std::size_t>(atk, "batch_size", 8);
  c.attack.li_rounds = get_or<int>(atk, "rounds", 5);
  c.attack.li_adam = get_or<bool>(atk, "adam", true);
  c.attack.target_label = get_or<int>(atk, "target_label", 0);
  c.attack.gamma = get_or<double>(atk, "gamma", 10.0);
  c.attack.n_backdoor_train = get_or<std::size_t>(atk, "n_backdoor_train", 600);
  c.attack.n_backdoor_test = get_or<std::size_t>(atk, "n_backdoor_test", 100);
  c.attack.n_targets = get_or<std::size_t>(atk, "n_targets", 10);
  c.attack.random_h = get_or<bool>(atk, "random_h", true);
  c.attack.distributed = get_or<bool>(atk, "distributed", false);
  c.attack.poison_fraction = get_or<double>(atk, "fraction", 0.01);
  if (c.attack.type != "none" && c.attack.type != "label_inference" &&
      c.attack.type != "grad_replacement" && c.attack.type != "active_poison")
    throw ConfigError("attack.type unknown: " + c.attack.type);

  const json def = j.value("defense", json::object());
  detail::reject_unknown_keys(
      def, "defense.",
      {"mode", "sigma", "b", "clip", "drop_rate", "lambda1", "lambda2",
       "coae_steps", "coae_lr", "coae_file"});
  const std::string mode = get_or<std::string>(def, "mode", "none");
  if (mode == "none")
    c.defense.mode = DefenseMode::kNone;
  else if (mode == "coae")
    c.defense.mode = DefenseMode::kCoae;
  else if (mode == "dp_gaussian")
    c.defense.mode = DefenseMode::kDpGaussian;
  else if (mode == "dp_laplace")
    c.defense.mode = DefenseMode::kDpLaplace;
  else if (mode == "sparsify")
    c.defense.mode = DefenseMode::kSparsify;
  else
    throw ConfigError("defense.mode unknown: " + mode);
  c.defense.sigma = get_or<double>(def, "sigma", 0.01);
  c.defense.b = get_or<double>(def, "b", 0.01);
  c.defense.clip = get_or<double>(def, "clip", 0.2);
  c.defense.drop_rate = get_or<double>(def, "drop_rate", 0.99);
  c.defense.lambda1 = get_or<double>(def, "lambda1", 1.0);
  c.defense.lambda2 = get_or<double>(def, "lambda2", 1.0);
  c.defense.validate();
  c.coae_steps = get_or<int>(def, "coae_steps", 3000);
  c.coae_lr = get_or<double>(def, "coae_lr", 1e-3);
  c.coae_file = get_or<std::string>(def, "coae_file", "");

  c.seed = get_or<std::uint64_t>(j, "seed", 42);
  c.repeats = get_or<int>(j, "repeats", 1);

  // canonical resolved form (sorted keys come free with nlohmann objects)
  json r;
  r["dataset"] = {{"type", c.dataset.type}};
  if (c.dataset.type == "blobs") {
    r["dataset"]["classes"] = c.dataset.classes;
    r["dataset"]["dim"] = c.dataset.dim;
    r["dataset"]["per_class"] = c.dataset.per_class;
    r["dataset"]["per_class_test"] = c.dataset.per_class_test;
    r["dataset"]["spread"] = c.dataset.spread;
    r["dataset"]["seed"] = c.dataset.seed;
  } else if (c.dataset.type == "synth_digits") {
    r["dataset"]["train"] = c.dataset.n_train;
    r["dataset"]["test"] = c.dataset.n_test;
    r["dataset"]["seed"] = c.dataset.seed;
  } else {
    r["dataset"]["train_images"] = c.dataset.train_images;
    r["dataset"]["train_labels"] = c.dataset.train_labels;
    r["dataset"]["test_images"] = c.dataset.test_images;
    r["dataset"]["test_labels"] = c.dataset.test_labels;
  }
  r["partition"] = {{"parties", c.parties}};
  r["model"] = {{"hidden", c.hidden}};
  r["train"] = {{"lr", c.lr}, {"epochs", c.epochs}, {"batch", c.batch}};
  r["attack"] = {{"type", c.attack.type}};
  if (c.attack.type == "label_inference") {
    r["attack"]["iters"] = c.attack.li_iters;
    r["attack"]["lr"] = c.attack.li_lr;
    r["attack"]["batch_size"] = c.attack.li_batch;
    r["attack"]["rounds"] = c.attack.li_rounds;
    r["attack"]["adam"] = c.attack.li_adam;
  } else if (c.attack.type == "grad_replacement") {
    r["attack"]["target_label"] = c.attack.target_label;
    r["attack"]["gamma"] = c.attack.gamma;
    r["attack"]["n_backdoor_train"] = c.attack.n_backdoor_train;
    r["attack"]["n_backdoor_test"] = c.attack.n_backdoor_test;
    r["attack"]["n_targets"] = c.attack.n_targets;
    r["attack"]["random_h"] = c.attack.random_h;
    r["attack"]["distributed"] = c.attack.distributed;
  } else if (c.attack.type == "active_poison") {
    r["attack"]["target_label"] = c.attack.target_label;
    r["attack"]["fraction"] = c.attack.poison_fraction;
  }
  r["defense"] = {{"mode", mode}};
  if (c.defense.mode == DefenseMode::kDpGaussian)
    r["defense"]["sigma"] = c.defense.sigma;
  if (c.defense.mode == DefenseMode::kDpLaplace)
    r["defense"]["b"] = c.defense.b;
  if (c.defense.mode == DefenseMode::kDpGaussian ||
      c.defense.mode == DefenseMode::kDpLaplace)
    r["defense"]["clip"] = c.defense.clip;
  if (c.defense.mode == DefenseMode::kSparsify)
    r["defense"]["drop_rate"] = c.defense.drop_rate;
  if (c.defense.mode == DefenseMode::kCoae) {
    r["defense"]["lambda1"] = c.defense.lambda1;
    r["defense"]["lambda2"] = c.defense.lambda2;
    r["defense"]["coae_steps"] = c.coae_steps;
    r["defense"]["coae_lr"] = c.coae_lr;
  }
  r["seed"] = c.seed;
  r["repeats"] = c.repeats;
  c.resolved = std::move(r);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("parse error in " + path + ": " + e.what());
  }
  return parse_config(j);
}

// Dotted-path override: "train.lr=0.1". Values parse as JSON when possible,
// otherwise as strings.
inline void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must look like path=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  json* node = &j;
  std::size_t pos = 0;
  while (true) {
    const auto dot = path.find('.', pos);
    const std::string key = path.substr(pos, dot - pos);
    if (dot == std::string::npos) {
      json parsed = json::parse(value, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? json(value) : parsed;
      break;
    }
    node = &(*node)[key];
    pos = dot + 1;
  }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct MetricsRow {
  std::string config_hash;
  std::uint64_t seed = 0;
  int epoch = 0;
  double main_accuracy = 0.0;
  double backdoor_accuracy = 0.0;
  double label_recovery_rate = 0.0;
  double d_final = 0.0;
  double wall_time_s = 0.0;
};

inline const char* metrics_header() {
  return "schema_version,config_hash,seed,epoch,main_accuracy,"
         "backdoor_accuracy,label_recovery_rate,d_final,wall_time_s";
}

inline std::string to_csv(const MetricsRow& r) {
  std::ostringstream os;
  os << kMetricsSchemaVersion << ',' << r.config_hash << ',' << r.seed << ','
     << r.epoch << ',' << detail::fmt_double(r.main_accuracy) << ','
     << detail::fmt_double(r.backdoor_accuracy) << ','
     << detail::fmt_double(r.label_recovery_rate) << ','
     << detail::fmt_double(r.d_final) << ','
     << detail::fmt_double(r.wall_time_s);
  return os.str();
}

// Rows carry the config hash; re-running a hash-matched config appends.
inline void append_metrics(const std::string& path,
                           const std::vector<MetricsRow>& rows) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot write " + path);
  if (fresh) out << metrics_header() << '\n';
  for (const auto& r : rows) out << to_csv(r) << '\n';
}

// ---------------------------------------------------------------------------
// Experiment assembly
// ---------------------------------------------------------------------------

struct ExperimentSetup {
  Dataset train;
  Dataset test;
  PartitionSpec spec;
  int target_label = -1;
  std::vector<std::size_t> target_ids;
  std::vector<std::size_t> backdoor_train_ids;
};

namespace detail {

inline Dataset build_dataset(const DatasetSpec& ds, bool test_split) {
  if (ds.type == "blobs") {
    // draw train and test from one generator so both splits share the same
    // class centroids, then carve off the per-class tail as the test split
    const std::size_t per = ds.per_class + ds.per_class_test;
    const Dataset all =
        synth_blobs(ds.classes, ds.dim, per, ds.spread, ds.seed);
    const std::size_t keep = test_split ? ds.per_class_test : ds.per_class;
    Dataset out;
    out.classes = all.classes;
    out.x = Tensor::zeros(std::size_t(ds.classes) * keep, ds.dim);
    out.y.resize(out.x.rows());
    out.trigger_mask.assign(out.x.rows(), 0);
    std::size_t i = 0;
    for (int k = 0; k < ds.classes; ++k) {
      const std::size_t begin =
          std::size_t(k) * per + (test_split ? ds.per_class : 0);
      for (std::size_t s = 0; s < keep; ++s, ++i) {
        out.y[i] = all.y[begin + s];
        for (std::size_t j = 0; j < ds.dim; ++j)
          out.x(i, j) = all.x(begin + s, j);
      }
    }
    return out;
  }
  if (ds.type == "synth_digits")
    return synth_digits(test_split ? ds.n_test : ds.n_train,
                        ds.seed + (test_split ? 1 : 0));
  return test_split ? load_mnist(ds.test_images, ds.test_labels)
                    : load_mnist(ds.train_images, ds.train_labels);
}

// Party feature layout: the active party owns the first contiguous slice and
// the passive parties own the following ones; the session wants passive
// ranges first and the active party's last.
inline PartitionSpec party_ranges(std::size_t d, std::size_t parties) {
  if (d % parties != 0)
    throw ConfigError("feature count not divisible by party count");
  const std::size_t w = d / parties;
  PartitionSpec spec;
  for (std::size_t k = 1; k < parties; ++k)
    spec.ranges.emplace_back(k * w, (k + 1) * w);
  spec.ranges.emplace_back(0, w);  // active party
  return spec;
}

inline TriggerSpec default_trigger(const Dataset& d, const PartitionSpec& spec) {
  if (d.image_side == 28) {
    TriggerSpec t = TriggerSpec::mnist_corner();
    t.owning_party = 0;
    const auto& [b, e] = spec.ranges.front();
    bool owned = true;
    for (const auto& p : t.points) owned &= (p.feature >= b && p.feature < e);
    if (owned) return t;
  }
  // fall back to the last feature of the first passive party's slice
  return TriggerSpec::party_corner_pixel(spec, 0);
}

}  // namespace detail

inline ExperimentSetup build_setup(const ExperimentConfig& c,
                                   std::uint64_t seed) {
  ExperimentSetup s;
  s.train = detail::build_dataset(c.dataset, false);
  s.test = detail::build_dataset(c.dataset, true);
  s.spec = detail::party_ranges(s.train.dim(), c.parties);
  s.spec.validate(s.train.dim());

  const AttackSpec& a = c.attack;
  if (a.type == "grad_replacement" || a.type == "active_poison") {
    s.target_label = a.target_label;
    Rng rng(seed ^ 0xa24baed4963ee407ull);
    std::size_t n_bd_train = a.n_backdoor_train;
    std::size_t n_bd_test = a.n_backdoor_test;
    if (a.type == "active_poison") {
      n_bd_train = static_cast<std::size_t>(
          a.poison_fraction * static_cast<double>(s.train.size()));
      n_bd_test = static_cast<std::size_t>(
          a.poison_fraction * static_cast<double>(s.test.size()));
    }
    std::vector<TriggerSpec> triggers;
    if (a.distributed) {
      // every passive party contributes a one-pixel trigger at the lower
      // right of its own slice
      for (std::size_t p = 0; p + 1 < s.spec.parties(); ++p)
        triggers.push_back(TriggerSpec::party_corner_pixel(s.spec, p));
    } else {
      triggers.push_back(detail::default_trigger(s.train, s.spec));
    }
    for (const auto& t : triggers) t.check_ownership(s.spec);

    s.backdoor_train_ids = sample_ids(s.train.size(), n_bd_train, rng);
    const auto bd_test = sample_ids(s.test.size(), n_bd_test, rng);
    for (const auto& t : triggers) {
      apply_trigger(s.train, t, s.backdoor_train_ids);
      apply_trigger(s.test, t, bd_test);
    }
    if (a.type == "grad_replacement")
      s.target_ids = select_targets(s.train, a.target_label, a.n_targets,
                                    seed ^ 0x94d049bb133111ebull);
  }
  return s;
}

// In-process CoAe reuse per (c, lambda1, lambda2, steps, seed) tuple.
inline std::shared_ptr<const CoAe> obtain_coae(const ExperimentConfig& c,
                                               int classes,
                                               std::uint64_t seed) {
  if (!c.coae_file.empty() && std::filesystem::exists(c.coae_file))
    return std::make_shared<const CoAe>(CoAe::load(c.coae_file));
  static std::mutex mu;
  static std::map<std::tuple<int, double, double, int, std::uint64_t>,
                  std::shared_ptr<const CoAe>>
      cache;
  const auto key = std::make_tuple(classes, c.defense.lambda1,
                                   c.defense.lambda2, c.coae_steps, seed);
  {
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
  }
  CoaeTrainOptions opt;
  opt.classes = classes;
  opt.lambda1 = c.defense.lambda1;
  opt.lambda2 = c.defense.lambda2;
  opt.steps = c.coae_steps;
  opt.lr = c.coae_lr;
  opt.seed = seed;
  auto ae = std::make_shared<const CoAe>(train_coae(opt));
  if (!c.coae_file.empty()) ae->save(c.coae_file);
  std::lock_guard<std::mutex> lock(mu);
  cache[key] = ae;
  return ae;
}

struct RunResult {
  std::vector<MetricsRow> rows;
  std::vector<int> li_true_labels;      // per attacked slot
  std::vector<int> li_restored_labels;  // attacker's argmax guesses
};

// One end-to-end experiment at a specific seed. Deterministic given
// (config, seed), except for the wall_time_s column.
inline RunResult run_experiment_seeded(const ExperimentConfig& c,
                                       std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentSetup setup = build_setup(c, seed);

  SessionConfig sc;
  sc.hidden = c.hidden;
  sc.batch = c.batch;
  sc.lr = c.lr;
  sc.epochs = c.epochs;
  sc.seed = seed;
  VflSession session(setup.train, setup.test, setup.spec, sc);

  if (c.defense.mode == DefenseMode::kCoae)
    session.set_defense(c.defense,
                        obtain_coae(c, session.classes(),
                                    c.seed ^ 0x2545f4914f6cdd1dull));
  else
    session.set_defense(c.defense);

  const AttackSpec& a = c.attack;
  if (a.type == "grad_replacement") {
    GrBackdoorConfig gcfg;
    gcfg.target_label = a.target_label;
    gcfg.target_ids = setup.target_ids;
    gcfg.backdoor_ids = setup.backdoor_train_ids;
    gcfg.gamma = a.gamma;
    gcfg.random_h = a.random_h;
    const std::size_t attackers =
        a.distributed ? session.passive_count() : 1;
    for (std::size_t p = 0; p < attackers; ++p)
      session.set_attacker(
          p, std::make_shared<GrBackdoorAttacker>(gcfg, seed + 31 * p + 7));
  } else if (a.type == "active_poison") {
    session.poison_labels(setup.backdoor_train_ids, a.target_label);
  }

  RunResult result;
  MetricsRow base;
  base.config_hash = c.hash();
  base.seed = seed;

  // Label inference attacks a frozen round before training starts.
  if (a.type == "label_inference") {
    Rng batch_rng(seed ^ 0x6c62272e07bb0142ull);
    double recovered = 0.0, total = 0.0, d_sum = 0.0;
    for (int round = 0; round < a.li_rounds; ++round) {
      const auto batch =
          sample_ids(setup.train.size(), a.li_batch, batch_rng);
      ObservedRound obs = session.observe_round(batch);
      const PassiveParty& attacker = session.passive(0);
      Tensor x = Tensor::zeros(batch.size(), attacker.train_x.cols());
      for (std::size_t i = 0; i < batch.size(); ++i)
        std::copy(attacker.train_x.row(batch[i]),
                  attacker.train_x.row(batch[i]) + attacker.train_x.cols(),
                  x.row(i));
      LabelInferenceOptions opt;
      opt.iters = a.li_iters;
      opt.lr = a.li_lr;
      opt.adam = a.li_adam;
      opt.seed = seed + 977 * round + 13;
      const LabelInferenceResult r =
          infer_labels(obs.party_grads[0], attacker.model, x, opt);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        result.li_true_labels.push_back(setup.train.y[batch[i]]);
        result.li_restored_labels.push_back(r.labels[i]);
        if (r.labels[i] == setup.train.y[batch[i]]) recovered += 1.0;
        total += 1.0;
      }
      d_sum += r.final_d;
    }
    base.label_recovery_rate = total > 0.0 ? recovered / total : 0.0;
    base.d_final = a.li_rounds > 0 ? d_sum / a.li_rounds : 0.0;
  }

  const EvalMetrics m0 = session.evaluate(setup.target_label);
  base.epoch = 0;
  base.main_accuracy = m0.main_accuracy;
  base.backdoor_accuracy = m0.backdoor_accuracy;
  result.rows.push_back(base);

  for (int e = 1; e <= c.epochs; ++e) {
    session.train_epochs(1);
    const EvalMetrics m = session.evaluate(setup.target_label);
    MetricsRow row = base;
    row.epoch = e;
    row.main_accuracy = m.main_accuracy;
    row.backdoor_accuracy = m.backdoor_accuracy;
    row.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    result.rows.push_back(row);
  }
  return result;
}

inline std::vector<MetricsRow> run_experiment(
    const ExperimentConfig& c, const std::string& out_dir = "") {
  std::vector<MetricsRow> rows;
  for (int r = 0; r < c.repeats; ++r) {
    const auto res = run_experiment_seeded(c, c.seed + r);
    rows.insert(rows.end(), res.rows.begin(), res.rows.end());
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    append_metrics(out_dir + "/metrics.csv", rows);
    std::ofstream mf(out_dir + "/manifest.json");
    json manifest;
    manifest["config"] = c.resolved;
    manifest["config_hash"] = c.hash();
    manifest["schema_version"] = kMetricsSchemaVersion;
    json seeds = json::array();
    for (int r = 0; r < c.repeats; ++r) seeds.push_back(c.seed + r);
    manifest["seeds"] = seeds;
    mf << manifest.dump(2) << '\n';
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

struct SweepPoint {
  json overrides;          // path -> value
  ExperimentConfig config;
  std::string label;       // "path=value;..."
};

inline std::vector<SweepPoint> expand_grid(const json& base,
                                           const json& grid) {
  if (!grid.is_object() || grid.empty())
    throw ConfigError("sweep grid must be a non-empty object");
  std::vector<SweepPoint> points{{json::object(), {}, ""}};
  for (auto it = grid.begin(); it != grid.end(); ++it) {
    if (!it.value().is_array() || it.value().empty())
      throw ConfigError("grid entry '" + it.key() + "' must be a non-empty array");
    std::vector<SweepPoint> next;
    for (const auto& p : points)
      for (const auto& v : it.value()) {
        SweepPoint q = p;
        q.overrides[it.key()] = v;
        if (!q.label.empty()) q.label += ";";
        q.label += it.key() + "=" + v.dump();
        next.push_back(std::move(q));
      }
    points = std::move(next);
  }
  for (auto& p : points) {
    json j = base;
    for (auto it = p.overrides.begin(); it != p.overrides.end(); ++it)
      apply_override(j, it.key() + "=" + it.value().dump());
    p.config = parse_config(j);
  }
  return points;
}

struct SweepSummaryRow {
  std::string label;
  std::string config_hash;
  int n = 0;
  double main_mean = 0.0, main_std = 0.0;
  double backdoor_mean = 0.0, backdoor_std = 0.0;
  double recovery_mean = 0.0, recovery_std = 0.0;
};

// One row per (grid point, repeat); summary.csv holds per-point mean/std of
// the final-epoch metrics. Points run in a worker pool with derived seeds.
inline std::vector<SweepSummaryRow> run_sweep(const json& base_json,
                                              const json& grid, int repeats,
                                              const std::string& out_dir,
                                              unsigned threads = 0) {
  auto points = expand_grid(base_json, grid);
  if (repeats < 1) throw ConfigError("sweep repeats must be >= 1");
  const std::size_t total = points.size() * static_cast<std::size_t>(repeats);
  std::vector<RunResult> results(total);
  std::atomic<std::size_t> next{0};
  const unsigned n_threads = threads
      ? threads
      : std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(),
                                        static_cast<unsigned>(total)));
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= total) break;
      const std::size_t point = i / repeats;
      const std::size_t rep = i % repeats;
      const ExperimentConfig& cfg = points[point].config;
      const std::uint64_t seed =
          cfg.seed + point * static_cast<std::size_t>(repeats) + rep;
      results[i] = run_experiment_seeded(cfg, seed);
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::vector<MetricsRow> all_rows;
  std::vector<SweepSummaryRow> summary;
  for (std::size_t point = 0; point < points.size(); ++point) {
    SweepSummaryRow s;
    s.label = points[point].label;
    s.config_hash = points[point].config.hash();
    std::vector<double> mains, backs, recs;
    for (int rep = 0; rep < repeats; ++rep) {
      const auto& res = results[point * repeats + rep];
      all_rows.insert(all_rows.end(), res.rows.begin(), res.rows.end());
      const MetricsRow& fin = res.rows.back();
      mains.push_back(fin.main_accuracy);
      backs.push_back(fin.backdoor_accuracy);
      recs.push_back(res.rows.front().label_recovery_rate);
    }
    auto mean_std = [](const std::vector<double>& v, double& m, double& sd) {
      m = 0.0;
      for (double x : v) m += x;
      m /= static_cast<double>(v.size());
      sd = 0.0;
      for (double x : v) sd += (x - m) * (x - m);
      sd = v.size() > 1 ? std::sqrt(sd / static_cast<double>(v.size() - 1)) : 0.0;
    };
    s.n = repeats;
    mean_std(mains, s.main_mean, s.main_std);
    mean_std(backs, s.backdoor_mean, s.backdoor_std);
    mean_std(recs, s.recovery_mean, s.recovery_std);
    summary.push_back(std::move(s));
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    append_metrics(out_dir + "/metrics.csv", all_rows);
    std::ofstream out(out_dir + "/summary.csv");
    out << "schema_version,grid_point,config_hash,n,main_mean,main_std,"
           "backdoor_mean,backdoor_std,recovery_mean,recovery_std\n";
    for (const auto& s : summary)
      out << kMetricsSchemaVersion << ",\"" << s.label << "\","
          << s.config_hash << ',' << s.n << ','
          << detail::fmt_double(s.main_mean) << ','
          << detail::fmt_double(s.main_std) << ','
          << detail::fmt_double(s.backdoor_mean) << ','
          << detail::fmt_double(s.backdoor_std) << ','
          << detail::fmt_double(s.recovery_mean) << ','
          << detail::fmt_double(s.recovery_std) << '\n';
    std::ofstream mf(out_dir + "/manifest.json");
    json manifest;
    manifest["base"] = base_json;
    manifest["grid"] = grid;
    manifest["repeats"] = repeats;
    manifest["schema_version"] = kMetricsSchemaVersion;
    mf << manifest.dump(2) << '\n';
  }
  return summary;
}

// ---------------------------------------------------------------------------
// PD matrix
// ---------------------------------------------------------------------------

// Runs the label-inference attack under CoAE protection and reports the
// restored-label distribution per true class.
inline PdMatrix emit_pd_matrix(const ExperimentConfig& c,
                               const std::string& out_dir = "") {
  if (c.attack.type != "label_inference")
    throw ConfigError("pdmatrix requires attack.type=label_inference");
  if (c.defense.mode != DefenseMode::kCoae)
    throw ConfigError("pdmatrix requires defense.mode=coae");
  std::vector<int> true_labels, restored;
  for (int r = 0; r < c.repeats; ++r) {
    const RunResult res = run_experiment_seeded(c, c.seed + r);
    true_labels.insert(true_labels.end(), res.li_true_labels.begin(),
                       res.li_true_labels.end());
    restored.insert(restored.end(), res.li_restored_labels.begin(),
                    res.li_restored_labels.end());
  }
  const int classes = c.dataset.type == "blobs" ? c.dataset.classes : 10;
  PdMatrix pd = pd_matrix(true_labels, restored, classes);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream out(out_dir + "/pd_matrix.csv");
    out << "true_label";
    for (int j = 0; j < classes; ++j) out << ",restored_" << j;
    out << ",row_entropy\n";
    for (int i = 0; i < classes; ++i) {
      out << i;
      double h = 0.0;
      for (int j = 0; j < classes; ++j) {
        out << ',' << detail::fmt_double(pd.m(i, j));
        if (pd.m(i, j) > 0.0) h -= pd.m(i, j) * std::log(pd.m(i, j));
      }
      out << ',' << detail::fmt_double(h) << '\n';
    }
  }
  return pd;
}

}  // namespace vflsim
