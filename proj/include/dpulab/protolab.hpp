/*
 * Copyright 2026 The dpulab Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Per-class, per-modality prototypes: variance-weighted moving-average
// updates and prototype-fusion outlier synthesis.

#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dpulab/errors.hpp"
#include "dpulab/netcore.hpp"
#include "dpulab/numkit.hpp"
#include "dpulab/rng.hpp"
#include "json.hpp"

namespace dpulab {

enum class PrototypeUpdateMode { kInterpolated, kLiteral };

inline std::string to_string(PrototypeUpdateMode m) {
  return m == PrototypeUpdateMode::kLiteral ? "literal" : "interpolated";
}

inline PrototypeUpdateMode parse_update_mode(const std::string& s) {
  if (s == "literal") return PrototypeUpdateMode::kLiteral;
  if (s == "interpolated") return PrototypeUpdateMode::kInterpolated;
  throw ConfigError("unknown prototype update mode '" + s + "'");
}

class PrototypeStore {
 public:
  double beta = 0.8;
  double gamma = 1e-6;
  double rate_cap = 1.0;
  PrototypeUpdateMode mode = PrototypeUpdateMode::kInterpolated;

  PrototypeStore() = default;
  PrototypeStore(std::size_t num_modalities, std::size_t embed, std::size_t classes)
      : spaces_(num_modalities, Mat64(embed, classes)), updates_(classes, 0) {}

  std::size_t num_modalities() const { return spaces_.size(); }
  std::size_t embed() const { return spaces_.empty() ? 0 : spaces_[0].rows(); }
  std::size_t num_classes() const { return updates_.size(); }

  // L x Q prototype space of modality k.
  const Mat64& space(std::size_t k) const { return spaces_.at(k); }

  Vec64 prototype(std::size_t k, std::size_t y) const {
    const Mat64& s = spaces_.at(k);
    if (y >= s.cols()) throw ArgumentError("prototype: class out of range");
    Vec64 p(s.rows());
    for (std::size_t l = 0; l < s.rows(); ++l) p[l] = s(l, y);
    return p;
  }

  void set_prototype(std::size_t k, std::size_t y, std::span<const double> p) {
    Mat64& s = spaces_.at(k);
    if (y >= s.cols()) throw ArgumentError("set_prototype: class out of range");
    if (p.size() != s.rows()) throw DimensionError("set_prototype: width mismatch");
    for (std::size_t l = 0; l < s.rows(); ++l) s(l, y) = p[l];
  }

  // [P_y^1, ..., P_y^M]
  Vec64 concatenated(std::size_t y) const {
    Vec64 out;
    for (std::size_t k = 0; k < spaces_.size(); ++k) {
      const Vec64 p = prototype(k, y);
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

  std::uint64_t update_count(std::size_t y) const { return updates_.at(y); }
  void mark_updated(std::size_t y) { ++updates_.at(y); }

  bool operator==(const PrototypeStore&) const = default;

  friend void to_json(nlohmann::json& j, const PrototypeStore& s);
  friend void from_json(const nlohmann::json& j, PrototypeStore& s);

 private:
  std::vector<Mat64> spaces_;
  std::vector<std::uint64_t> updates_;
};

inline void to_json(nlohmann::json& j, const PrototypeStore& s) {
  nlohmann::json spaces = nlohmann::json::array();
  for (const Mat64& m : s.spaces_) spaces.push_back(m.data());
  j = {{"beta", s.beta},
       {"gamma", s.gamma},
       {"rate_cap", s.rate_cap},
       {"mode", to_string(s.mode)},
       {"embed", s.embed()},
       {"classes", s.num_classes()},
       {"spaces", std::move(spaces)},
       {"update_counts", s.updates_}};
}

inline void from_json(const nlohmann::json& j, PrototypeStore& s) {
  const auto embed = j.at("embed").get<std::size_t>();
  const auto classes = j.at("classes").get<std::size_t>();
  j.at("beta").get_to(s.beta);
  j.at("gamma").get_to(s.gamma);
  j.at("rate_cap").get_to(s.rate_cap);
  s.mode = parse_update_mode(j.at("mode").get<std::string>());
  s.spaces_.clear();
  for (const auto& sp : j.at("spaces")) {
    s.spaces_.emplace_back(embed, classes, sp.get<Vec64>());
  }
  j.at("update_counts").get_to(s.updates_);
  if (s.updates_.size() != classes) throw InvariantError("prototype update_counts length");
}

// Mean embedding of the class-y samples of modality k, or nullopt when the
// class is absent from the batch.
inline std::optional<Vec64> batch_class_mean(const ForwardCache& cache,
                                             std::span<const int> labels, int y,
                                             std::size_t k) {
  if (labels.size() != cache.batch) throw DimensionError("batch_class_mean: label count");
  const Mat64& emb = cache.embeddings.at(k);
  Vec64 sum(emb.cols(), 0.0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != y) continue;
    const auto r = emb.row(i);
    for (std::size_t l = 0; l < sum.size(); ++l) sum[l] += r[l];
    ++count;
  }
  if (count == 0) return std::nullopt;
  for (double& v : sum) v /= static_cast<double>(count);
  return sum;
}

// 1 / (gamma + var * N), before the cap.
inline double raw_update_rate(double gamma, double var, std::size_t count) {
  if (var < 0.0) throw ArgumentError("update rate: negative variance");
  if (count == 0) throw ArgumentError("update rate: empty class");
  return 1.0 / (gamma + var * static_cast<double>(count));
}

inline double update_rate(const PrototypeStore& s, double var, std::size_t count) {
  return std::min(s.rate_cap, raw_update_rate(s.gamma, var, count));
}

// Moves prototype (k, y) toward the batch class mean.
//   interpolated: a = min(1, (1 - beta) r);  P <- (1 - a) P + a H
//   literal:      P <- beta P + (1 - beta) r (H - P)
inline void dpa_update(PrototypeStore& store, std::size_t y, std::size_t k,
                       std::span<const double> class_mean, double var,
                       std::size_t count) {
  const double r = update_rate(store, var, count);
  Vec64 p = store.prototype(k, y);
  if (class_mean.size() != p.size()) throw DimensionError("dpa_update: width mismatch");
  if (store.mode == PrototypeUpdateMode::kInterpolated) {
    const double a = std::min(1.0, (1.0 - store.beta) * r);
    for (std::size_t l = 0; l < p.size(); ++l) {
      p[l] = (1.0 - a) * p[l] + a * class_mean[l];
    }
  } else {
    for (std::size_t l = 0; l < p.size(); ++l) {
      p[l] = store.beta * p[l] + (1.0 - store.beta) * r * (class_mean[l] - p[l]);
    }
  }
  store.set_prototype(k, y, p);
}

// The K classes closest to y by Euclidean distance between concatenated
// prototypes, nearest first; ties go to the lower class index.
inline std::vector<std::size_t> nearest_classes(const PrototypeStore& store,
                                                std::size_t y, std::size_t k) {
  const std::size_t q = store.num_classes();
  if (q < 2) throw InsufficientClassesError("outlier synthesis needs >= 2 classes");
  const Vec64 anchor = store.concatenated(y);
  std::vector<std::pair<double, std::size_t>> dist;
  for (std::size_t c = 0; c < q; ++c) {
    if (c == y) continue;
    dist.emplace_back(l2_distance(anchor, store.concatenated(c)), c);
  }
  std::sort(dist.begin(), dist.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < std::min(k, dist.size()); ++i) out.push_back(dist[i].second);
  return out;
}

struct SynthesizedOutlier {
  std::size_t class_a = 0;
  std::size_t class_b = 0;
  double eta = 0.5;
  std::vector<Vec64> fused;  // one vector per modality
};

// eta * P_a + (1 - eta) * P_b on concatenated prototypes, split per modality.
// K is clamped to Q - 1.
template <typename EtaSampler>
SynthesizedOutlier synthesize_outlier(const PrototypeStore& store, std::size_t y,
                                      std::size_t k_neighbors, Rng& rng,
                                      EtaSampler&& eta_sampler) {
  if (store.num_classes() < 2) {
    throw InsufficientClassesError("outlier synthesis needs >= 2 classes");
  }
  if (k_neighbors == 0) throw ArgumentError("synthesize_outlier: K must be >= 1");
  const auto neighbors = nearest_classes(store, y, k_neighbors);
  SynthesizedOutlier out;
  out.class_a = y;
  out.class_b = neighbors[rng.index(neighbors.size())];
  out.eta = eta_sampler();
  for (std::size_t k = 0; k < store.num_modalities(); ++k) {
    const Vec64 a = store.prototype(k, out.class_a);
    const Vec64 b = store.prototype(k, out.class_b);
    Vec64 f(a.size());
    for (std::size_t l = 0; l < a.size(); ++l) f[l] = out.eta * a[l] + (1.0 - out.eta) * b[l];
    out.fused.push_back(std::move(f));
  }
  return out;
}

// eta ~ Beta(10, 10) drawn from the same stream.
inline SynthesizedOutlier synthesize_outlier(const PrototypeStore& store, std::size_t y,
                                             std::size_t k_neighbors, Rng& rng) {
  return synthesize_outlier(store, y, k_neighbors, rng,
                            [&rng] { return rng.beta(10.0, 10.0); });
}

}  // namespace dpulab
