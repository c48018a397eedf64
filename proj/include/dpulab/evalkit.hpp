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

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "dpulab/dpuloss.hpp"
#include "dpulab/errors.hpp"
#include "dpulab/netcore.hpp"
#include "dpulab/numkit.hpp"
#include "json.hpp"

namespace dpulab {

// P(id > ood) + 0.5 P(id == ood), computed exactly (Mann-Whitney).
inline double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  if (id_scores.empty() || ood_scores.empty()) throw DimensionError("auroc: empty score set");
  Vec64 ood(ood_scores.begin(), ood_scores.end());
  std::sort(ood.begin(), ood.end());
  double num = 0.0;
  for (double s : id_scores) {
    const auto lo = std::lower_bound(ood.begin(), ood.end(), s);
    const auto hi = std::upper_bound(lo, ood.end(), s);
    num += static_cast<double>(lo - ood.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return num / (static_cast<double>(id_scores.size()) * static_cast<double>(ood.size()));
}

// FPR at the largest observed ID score tau with fraction(id >= tau) >= target.
inline double fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores,
                         double tpr_target = 0.95) {
  if (id_scores.empty() || ood_scores.empty()) {
    throw DimensionError("fpr_at_tpr: empty score set");
  }
  if (!(tpr_target > 0.0 && tpr_target <= 1.0)) {
    throw ArgumentError("fpr_at_tpr: target must lie in (0, 1]");
  }
  Vec64 id(id_scores.begin(), id_scores.end());
  std::sort(id.begin(), id.end(), std::greater<>());
  const double n = static_cast<double>(id.size());
  double tau = id.back();
  for (std::size_t i = 0; i < id.size(); ++i) {
    // Only the last copy of a tied value gives the true count(id >= tau).
    if (i + 1 < id.size() && id[i + 1] == id[i]) continue;
    if (static_cast<double>(i + 1) / n >= tpr_target) {
      tau = id[i];
      break;
    }
  }
  const auto fp = std::count_if(ood_scores.begin(), ood_scores.end(),
                                [tau](double s) { return s >= tau; });
  return static_cast<double>(fp) / static_cast<double>(ood_scores.size());
}

// Fraction of samples whose joint argmax (lowest index on ties) is the label.
inline double id_accuracy(const ForwardCache& cache, std::span<const int> labels) {
  if (labels.size() != cache.batch) throw DimensionError("id_accuracy: label count mismatch");
  if (labels.empty()) throw DimensionError("id_accuracy: empty batch");
  require_id_labels(labels, cache.joint_probs.cols(), "id_accuracy");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (argmax(cache.joint_probs.row(i)) == static_cast<std::size_t>(labels[i])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

struct EvalReport {
  std::string method;
  std::string dataset;  // e.g. "synthetic/near"
  std::string variant;
  std::uint64_t seed = 0;
  double fpr95 = 0.0;
  double auroc = 0.0;
  double id_acc = 0.0;
  std::vector<LossBreakdown> loss_curve;  // one per epoch
  double runtime_seconds = 0.0;
};

inline void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"method", r.method},   {"dataset", r.dataset}, {"variant", r.variant},
       {"seed", r.seed},       {"fpr95", r.fpr95},     {"auroc", r.auroc},
       {"id_acc", r.id_acc},   {"loss_curve", r.loss_curve},
       {"runtime_seconds", r.runtime_seconds}};
}

inline void from_json(const nlohmann::json& j, EvalReport& r) {
  j.at("method").get_to(r.method);
  j.at("dataset").get_to(r.dataset);
  j.at("variant").get_to(r.variant);
  j.at("seed").get_to(r.seed);
  j.at("fpr95").get_to(r.fpr95);
  j.at("auroc").get_to(r.auroc);
  j.at("id_acc").get_to(r.id_acc);
  if (j.contains("loss_curve")) j.at("loss_curve").get_to(r.loss_curve);
  if (j.contains("runtime_seconds")) j.at("runtime_seconds").get_to(r.runtime_seconds);
}

inline constexpr const char* kAggregateCsvHeader = "dataset,method,variant,seed,fpr95,auroc,id_acc";

// Fixed 17-significant-digit rendering so reruns are byte-identical.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string aggregate_csv_row(const EvalReport& r) {
  return r.dataset + "," + r.method + "," + r.variant + "," + std::to_string(r.seed) + "," +
         format_double(r.fpr95) + "," + format_double(r.auroc) + "," + format_double(r.id_acc);
}

}  // namespace dpulab
