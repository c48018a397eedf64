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

// Training objectives. Every term returns its value together with the
// partial derivatives needed by netcore::backward (or, for the outlier term,
// a parameter gradient directly, since synthesized outliers bypass the
// encoders).
//
//   total = base + delta * (rmcl + lambda * irm) + pdi + kappa * aos

#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpulab/errors.hpp"
#include "dpulab/netcore.hpp"
#include "dpulab/numkit.hpp"
#include "dpulab/protolab.hpp"

namespace dpulab {

struct LossWeights {
  double lambda = 2.0;      // variance weight inside CSCT
  double delta = 0.2;       // CSCT weight
  double kappa = 0.5;       // outlier-synthesis weight
  double mu = 1.0;          // intensification strength
  double margin_degrees = 10.0;
  double temperature = 0.05;
  int warmup_epochs = 2;
  std::optional<double> fixed_warmup_rate;  // defaults to mu / 2
  std::optional<double> fixed_rate;         // replaces the adaptive rate
  std::size_t anchor_modality = 0;
  std::size_t outlier_neighbors = 3;
  // Divide the contrastive and variance sums by the batch size so every term
  // of the objective is a per-sample quantity. Off reproduces the plain sums.
  bool contrastive_mean = true;

  double margin_radians() const { return margin_degrees * std::numbers::pi / 180.0; }
  double warmup_rate() const { return fixed_warmup_rate.value_or(0.5 * mu); }

  void validate() const {
    if (lambda < 0 || delta < 0 || kappa < 0 || mu < 0 || margin_degrees < 0) {
      throw ConfigError("LossWeights: weights must be >= 0");
    }
    if (!(temperature > 0)) throw ConfigError("LossWeights: temperature must be > 0");
    if (warmup_epochs < 0) throw ConfigError("LossWeights: warmup_epochs must be >= 0");
    if (fixed_rate && *fixed_rate < 0) throw ConfigError("LossWeights: fixed_rate < 0");
    if (fixed_warmup_rate && *fixed_warmup_rate < 0) {
      throw ConfigError("LossWeights: fixed_warmup_rate < 0");
    }
  }
};

inline void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"lambda", w.lambda},
       {"delta", w.delta},
       {"kappa", w.kappa},
       {"mu", w.mu},
       {"margin_degrees", w.margin_degrees},
       {"temperature", w.temperature},
       {"warmup_epochs", w.warmup_epochs},
       {"anchor_modality", w.anchor_modality},
       {"outlier_neighbors", w.outlier_neighbors},
       {"contrastive_mean", w.contrastive_mean}};
  j["fixed_warmup_rate"] =
      w.fixed_warmup_rate ? nlohmann::json(*w.fixed_warmup_rate) : nlohmann::json();
  j["fixed_rate"] = w.fixed_rate ? nlohmann::json(*w.fixed_rate) : nlohmann::json();
}

inline void from_json(const nlohmann::json& j, LossWeights& w) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("lambda", w.lambda);
  get("delta", w.delta);
  get("kappa", w.kappa);
  get("mu", w.mu);
  get("margin_degrees", w.margin_degrees);
  get("temperature", w.temperature);
  get("warmup_epochs", w.warmup_epochs);
  get("anchor_modality", w.anchor_modality);
  get("outlier_neighbors", w.outlier_neighbors);
  get("contrastive_mean", w.contrastive_mean);
  auto get_opt = [&](const char* key, std::optional<double>& field) {
    if (!j.contains(key)) return;
    if (j.at(key).is_null()) {
      field.reset();
    } else {
      field = j.at(key).get<double>();
    }
  };
  get_opt("fixed_warmup_rate", w.fixed_warmup_rate);
  get_opt("fixed_rate", w.fixed_rate);
}

// ---------------------------------------------------------------------------
// Margin contrastive loss

struct RmclResult {
  double loss = 0.0;
  // Per-anchor loss summed over modalities; 0 for inactive anchors.
  Vec64 per_sample;
  // Anchor has at least one positive and one negative in the batch.
  std::vector<bool> active;
  // dL/dF per modality, for the anchor weights the loss was evaluated with.
  std::vector<Mat64> embedding_grads;
};

namespace detail {

struct UnitRows {
  Mat64 unit;
  Vec64 norms;
};

inline UnitRows normalize_rows(const Mat64& m) {
  UnitRows out{Mat64(m.rows(), m.cols()), Vec64(m.rows())};
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double n = l2_norm(m.row(i));
    out.norms[i] = n;
    for (std::size_t l = 0; l < m.cols(); ++l) out.unit(i, l) = n > 0.0 ? m(i, l) / n : 0.0;
  }
  return out;
}

}  // namespace detail

// For every anchor j and modality k:
//   s_b = cos(theta_bj + m) / t   for b in the positive set (same label, b != j)
//   s_b = cos(theta_bj) / t       for b in the negative set
//   loss_jk = logsumexp(s) - logsumexp(s_pos) = log1p(exp(lse(s_neg) - lse(s_pos)))
// cos(theta + m) is expanded as c cos m - sqrt(1 - c^2) sin m so no angle is
// materialized; at |c| = 1 the sqrt factor's subgradient is taken as 0.
// A sample with a zero embedding in any modality has no direction; it is
// neither an anchor nor a member of another anchor's sets.
// Gradients are those of sum_j anchor_weights[j] * loss_j.
inline RmclResult rmcl_loss(const ForwardCache& cache, std::span<const int> labels,
                            double margin_rad, double temperature,
                            std::span<const double> anchor_weights = {}) {
  const std::size_t n = cache.batch;
  if (labels.size() != n) throw DimensionError("rmcl_loss: label count mismatch");
  if (!anchor_weights.empty() && anchor_weights.size() != n) {
    throw DimensionError("rmcl_loss: anchor weight count mismatch");
  }
  RmclResult r;
  r.per_sample.assign(n, 0.0);
  r.active.assign(n, false);
  for (const Mat64& e : cache.embeddings) r.embedding_grads.emplace_back(e.rows(), e.cols());
  if (n < 2) return r;

  std::vector<bool> valid(n, true);
  for (const Mat64& e : cache.embeddings) {
    for (std::size_t i = 0; i < n; ++i) {
      if (l2_norm(e.row(i)) == 0.0) valid[i] = false;
    }
  }
  const auto skip = [&](std::size_t b, std::size_t j) { return b == j || !valid[b]; };
  for (std::size_t j = 0; j < n; ++j) {
    if (!valid[j]) continue;
    bool has_pos = false, has_neg = false;
    for (std::size_t b = 0; b < n; ++b) {
      if (skip(b, j)) continue;
      (labels[b] == labels[j] ? has_pos : has_neg) = true;
    }
    r.active[j] = has_pos && has_neg;
  }

  const double cm = std::cos(margin_rad);
  const double sm = std::sin(margin_rad);
  const double inv_t = 1.0 / temperature;
  Vec64 s(n), dsdc(n), cosv(n);
  for (std::size_t k = 0; k < cache.num_modalities(); ++k) {
    const auto u = detail::normalize_rows(cache.embeddings[k]);
    Mat64& grad = r.embedding_grads[k];
    for (std::size_t j = 0; j < n; ++j) {
      if (!r.active[j]) continue;
      double max_all = -INFINITY, max_pos = -INFINITY;
      for (std::size_t b = 0; b < n; ++b) {
        if (skip(b, j)) continue;
        const double c = std::clamp(dot(u.unit.row(b), u.unit.row(j)), -1.0, 1.0);
        cosv[b] = c;
        if (labels[b] == labels[j]) {
          const double sn = std::sqrt(std::max(0.0, 1.0 - c * c));
          s[b] = (c * cm - sn * sm) * inv_t;
          dsdc[b] = (sn > 0.0 ? cm + sm * c / sn : cm) * inv_t;
          max_pos = std::max(max_pos, s[b]);
        } else {
          s[b] = c * inv_t;
          dsdc[b] = inv_t;
        }
        max_all = std::max(max_all, s[b]);
      }
      double max_neg = -INFINITY;
      for (std::size_t b = 0; b < n; ++b) {
        if (!skip(b, j) && labels[b] != labels[j]) max_neg = std::max(max_neg, s[b]);
      }
      double sum_all = 0.0, sum_pos = 0.0, sum_neg = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        if (skip(b, j)) continue;
        sum_all += std::exp(s[b] - max_all);
        if (labels[b] == labels[j]) {
          sum_pos += std::exp(s[b] - max_pos);
        } else {
          sum_neg += std::exp(s[b] - max_neg);
        }
      }
      const double lse_all = max_all + std::log(sum_all);
      const double lse_pos = max_pos + std::log(sum_pos);
      const double lse_neg = max_neg + std::log(sum_neg);
      // log(1 + f_neg / f_pos); avoids cancelling two large log-sums
      const double loss = std::log1p(std::exp(lse_neg - lse_pos));
      r.per_sample[j] += loss;

      const double w = anchor_weights.empty() ? 1.0 : anchor_weights[j];
      if (w == 0.0) continue;
      for (std::size_t b = 0; b < n; ++b) {
        if (skip(b, j)) continue;
        double dlds = std::exp(s[b] - lse_all);
        if (labels[b] == labels[j]) dlds -= std::exp(s[b] - lse_pos);
        const double dc = w * dlds * dsdc[b];
        if (dc == 0.0) continue;
        const double c = cosv[b];
        // dc/dF_b = (u_j - c u_b) / |F_b|,  dc/dF_j = (u_b - c u_j) / |F_j|
        for (std::size_t l = 0; l < grad.cols(); ++l) {
          grad(b, l) += dc * (u.unit(j, l) - c * u.unit(b, l)) / u.norms[b];
          grad(j, l) += dc * (u.unit(b, l) - c * u.unit(j, l)) / u.norms[j];
        }
      }
    }
  }
  for (double v : r.per_sample) r.loss += v;
  return r;
}

// ---------------------------------------------------------------------------
// Variance of per-sample losses within each class

struct IrmResult {
  double loss = 0.0;
  // d loss / d per_sample[j]
  Vec64 per_sample_grads;
  // class -> population variance of its active anchors' losses
  std::map<int, double> class_variance;
  std::map<int, std::size_t> class_count;
};

// sum_j Var(L^j) = sum_y N_y * Var_y over the active anchors of each class.
inline IrmResult irm_loss(std::span<const double> per_sample, std::span<const int> labels,
                          const std::vector<bool>& active = {}) {
  if (per_sample.size() != labels.size()) {
    throw DimensionError("irm_loss: loss/label count mismatch");
  }
  IrmResult r;
  r.per_sample_grads.assign(per_sample.size(), 0.0);
  std::map<int, Vec64> groups;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (!active.empty() && !active[j]) continue;
    groups[labels[j]].push_back(per_sample[j]);
  }
  std::map<int, double> means;
  for (const auto& [y, xs] : groups) {
    const double var = population_variance(xs);
    r.class_variance[y] = var;
    r.class_count[y] = xs.size();
    means[y] = mean(xs);
    r.loss += static_cast<double>(xs.size()) * var;
  }
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (!active.empty() && !active[j]) continue;
    r.per_sample_grads[j] = 2.0 * (per_sample[j] - means[labels[j]]);
  }
  return r;
}

struct CsctResult {
  double rmcl = 0.0;
  double irm = 0.0;
  double loss = 0.0;
  RmclResult contrastive;  // embedding_grads hold d(csct)/dF
  IrmResult variance;
};

// rmcl + lambda * irm, with gradients flowing through both terms. With
// contrastive_mean both sums are divided by the batch size.
inline CsctResult csct_loss(const ForwardCache& cache, std::span<const int> labels,
                            const LossWeights& w) {
  CsctResult r;
  const RmclResult plain = rmcl_loss(cache, labels, w.margin_radians(), w.temperature,
                                     Vec64(cache.batch, 0.0));
  r.variance = irm_loss(plain.per_sample, labels, plain.active);
  const double scale =
      w.contrastive_mean && cache.batch > 0 ? 1.0 / static_cast<double>(cache.batch) : 1.0;
  Vec64 anchor_w(cache.batch, 0.0);
  for (std::size_t j = 0; j < cache.batch; ++j) {
    if (plain.active[j]) {
      anchor_w[j] = scale * (1.0 + w.lambda * r.variance.per_sample_grads[j]);
    }
  }
  r.contrastive = rmcl_loss(cache, labels, w.margin_radians(), w.temperature, anchor_w);
  r.rmcl = scale * plain.loss;
  r.irm = scale * r.variance.loss;
  r.loss = r.rmcl + w.lambda * r.irm;
  return r;
}

// ---------------------------------------------------------------------------
// Cross-entropy on joint and per-modality heads

struct TermResult {
  double loss = 0.0;
  Upstream upstream;
};

inline void require_id_labels(std::span<const int> labels, std::size_t classes,
                              const char* who) {
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ArgumentError(std::string(who) + ": label " + std::to_string(y) +
                          " is not an ID class");
    }
  }
}

// mean_i [ sum_k CE(p_i^k, y_i) + CE(p_i, y_i) ]
inline TermResult base_loss(const ForwardCache& cache, std::span<const int> labels) {
  const std::size_t n = cache.batch;
  if (labels.size() != n) throw DimensionError("base_loss: label count mismatch");
  const std::size_t classes = cache.joint_logits.cols();
  require_id_labels(labels, classes, "base_loss");
  TermResult r{0.0, Upstream::zeros_like(cache)};
  if (n == 0) return r;
  const double inv_n = 1.0 / static_cast<double>(n);
  auto ce = [&](const Mat64& logits, const Mat64& probs, Mat64& grad) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto y = static_cast<std::size_t>(labels[i]);
      r.loss += (logsumexp(logits.row(i)) - logits(i, y)) * inv_n;
      for (std::size_t c = 0; c < classes; ++c) {
        grad(i, c) += (probs(i, c) - (c == y ? 1.0 : 0.0)) * inv_n;
      }
    }
  };
  ce(cache.joint_logits, cache.joint_probs, r.upstream.joint_logits);
  for (std::size_t k = 0; k < cache.num_modalities(); ++k) {
    ce(cache.mod_logits[k], cache.mod_probs[k], r.upstream.mod_logits[k]);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Cross-modal discrepancy

// Mean pairwise Hellinger distance between the given distributions.
inline double mean_pairwise_hellinger(const std::vector<std::span<const double>>& ps) {
  double s = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < ps.size(); ++a) {
    for (std::size_t b = a + 1; b < ps.size(); ++b, ++pairs) s += hellinger(ps[a], ps[b]);
  }
  return pairs ? s / static_cast<double>(pairs) : 0.0;
}

// d(mean pairwise Hellinger)/d logits, one vector per distribution.
inline std::vector<Vec64> mean_pairwise_hellinger_grads(
    const std::vector<std::span<const double>>& ps) {
  std::vector<Vec64> g(ps.size(), Vec64(ps.empty() ? 0 : ps[0].size(), 0.0));
  const std::size_t pairs = ps.size() * (ps.size() - 1) / 2;
  if (pairs == 0) return g;
  const double inv = 1.0 / static_cast<double>(pairs);
  for (std::size_t a = 0; a < ps.size(); ++a) {
    for (std::size_t b = a + 1; b < ps.size(); ++b) {
      const Vec64 ga = hellinger_grad_logits(ps[a], ps[b]);
      const Vec64 gb = hellinger_grad_logits(ps[b], ps[a]);
      for (std::size_t c = 0; c < ga.size(); ++c) {
        g[a][c] += ga[c] * inv;
        g[b][c] += gb[c] * inv;
      }
    }
  }
  return g;
}

enum class RateMode { kWarmup, kFixed, kAdaptive };

struct PdiResult {
  double loss = 0.0;
  RateMode mode = RateMode::kAdaptive;
  Vec64 rates;          // intensification rate per sample
  Vec64 discrepancies;  // Discr_i per sample
  std::size_t skipped = 0;
  Upstream upstream;
};

// loss = -(1/n) sum_i rate_i * Discr_i with
//   rate_i = mu * (1 - sigmoid(F_i^a . P_a^{y_i}))   (a = anchor modality)
// replaced by a constant during warm-up or in fixed-rate mode. Prototypes are
// treated as constants.
inline PdiResult pdi_loss(const ForwardCache& cache, std::span<const int> labels,
                          const PrototypeStore& store, const LossWeights& w, int epoch) {
  const std::size_t n = cache.batch;
  if (labels.size() != n) throw DimensionError("pdi_loss: label count mismatch");
  const std::size_t classes = cache.joint_logits.cols();
  require_id_labels(labels, classes, "pdi_loss");
  const std::size_t a = w.anchor_modality;
  if (a >= cache.num_modalities()) throw ConfigError("pdi_loss: anchor modality out of range");

  PdiResult r;
  r.upstream = Upstream::zeros_like(cache);
  r.rates.assign(n, 0.0);
  r.discrepancies.assign(n, 0.0);
  if (w.fixed_rate) {
    r.mode = RateMode::kFixed;
  } else if (epoch < w.warmup_epochs) {
    r.mode = RateMode::kWarmup;
  } else {
    r.mode = RateMode::kAdaptive;
  }
  if (n == 0) return r;
  const double inv_n = 1.0 / static_cast<double>(n);

  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    std::vector<std::span<const double>> ps;
    for (std::size_t k = 0; k < cache.num_modalities(); ++k) ps.push_back(cache.mod_probs[k].row(i));
    const double discr = mean_pairwise_hellinger(ps);
    r.discrepancies[i] = discr;

    double rate = 0.0;
    Vec64 proto;
    double sig = 0.0;
    switch (r.mode) {
      case RateMode::kFixed:
        rate = *w.fixed_rate;
        break;
      case RateMode::kWarmup:
        rate = w.warmup_rate();
        break;
      case RateMode::kAdaptive:
        if (store.update_count(y) == 0) {
          ++r.skipped;
          continue;
        }
        proto = store.prototype(a, y);
        sig = sigmoid(dot(cache.embeddings[a].row(i), proto));
        rate = w.mu * (1.0 - sig);
        break;
    }
    r.rates[i] = rate;
    r.loss -= rate * discr * inv_n;

    const auto g = mean_pairwise_hellinger_grads(ps);
    for (std::size_t k = 0; k < g.size(); ++k) {
      for (std::size_t c = 0; c < classes; ++c) {
        r.upstream.mod_logits[k](i, c) -= rate * inv_n * g[k][c];
      }
    }
    if (r.mode == RateMode::kAdaptive) {
      // d rate / dF = -mu sig (1 - sig) P
      const double coeff = discr * inv_n * w.mu * sig * (1.0 - sig);
      for (std::size_t l = 0; l < proto.size(); ++l) {
        r.upstream.embeddings[a](i, l) += coeff * proto[l];
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Synthesized-outlier uncertainty

struct AosResult {
  double loss = 0.0;
  GradBuffer grads;
};

// For each outlier, q^k = softmax(h_k(fused^k)) and
//   loss_o = -( mean pairwise Hellinger(q) + sum_k entropy(q^k) ),
// averaged over outliers. Fused vectors are constants.
inline AosResult aos_loss(const ModelParams& params,
                          const std::vector<SynthesizedOutlier>& outliers) {
  AosResult r;
  r.grads = GradBuffer(params);
  if (outliers.empty()) return r;
  const double inv = 1.0 / static_cast<double>(outliers.size());
  const std::size_t m = params.dims.num_modalities();
  for (const SynthesizedOutlier& o : outliers) {
    if (o.fused.size() != m) throw DimensionError("aos_loss: fused modality count");
    std::vector<Vec64> probs;
    for (std::size_t k = 0; k < m; ++k) probs.push_back(softmax(head_logits(params, k, o.fused[k])));
    std::vector<std::span<const double>> ps(probs.begin(), probs.end());
    double ent = 0.0;
    for (const Vec64& p : probs) ent += entropy(p);
    r.loss -= (mean_pairwise_hellinger(ps) + ent) * inv;

    const auto gd = mean_pairwise_hellinger_grads(ps);
    for (std::size_t k = 0; k < m; ++k) {
      const Vec64 ge = entropy_grad_logits(probs[k]);
      Vec64 dz(ge.size());
      for (std::size_t c = 0; c < dz.size(); ++c) dz[c] = -(gd[k][c] + ge[c]) * inv;
      head_backward(params, k, o.fused[k], dz, r.grads);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Total objective

struct LossBreakdown {
  double base = 0.0;
  double rmcl = 0.0;
  double irm = 0.0;
  double csct = 0.0;
  double pdi = 0.0;
  double aos = 0.0;
  double total = 0.0;
  std::map<int, double> class_variance;
};

inline void to_json(nlohmann::json& j, const LossBreakdown& b) {
  j = {{"base", b.base}, {"rmcl", b.rmcl}, {"irm", b.irm},     {"csct", b.csct},
       {"pdi", b.pdi},   {"aos", b.aos},   {"total", b.total}};
}

inline void from_json(const nlohmann::json& j, LossBreakdown& b) {
  j.at("base").get_to(b.base);
  j.at("rmcl").get_to(b.rmcl);
  j.at("irm").get_to(b.irm);
  j.at("csct").get_to(b.csct);
  j.at("pdi").get_to(b.pdi);
  j.at("aos").get_to(b.aos);
  j.at("total").get_to(b.total);
}

// Assembles the breakdown; csct is recomputed from rmcl and irm.
inline LossBreakdown total_loss(double base, double rmcl, double irm, double pdi, double aos,
                                const LossWeights& w) {
  LossBreakdown b;
  b.base = base;
  b.rmcl = rmcl;
  b.irm = irm;
  b.csct = rmcl + w.lambda * irm;
  b.pdi = pdi;
  b.aos = aos;
  b.total = base + w.delta * b.csct + pdi + w.kappa * aos;
  for (double v : {b.base, b.rmcl, b.irm, b.csct, b.pdi, b.aos, b.total}) {
    if (!std::isfinite(v)) throw DivergenceError("total_loss: non-finite loss component");
  }
  return b;
}

// Which terms participate in the objective.
struct TermSwitches {
  bool csct = true;
  bool pdi = true;
  bool aos = true;
};

struct ObjectiveResult {
  LossBreakdown breakdown;
  GradBuffer grads;
  PdiResult pdi;  // rates are recorded by the trainer
};

// Every enabled term on one batch, with the full parameter gradient.
inline ObjectiveResult evaluate_objective(const ModelParams& params, const ForwardCache& cache,
                                          std::span<const int> labels,
                                          const PrototypeStore& store,
                                          const std::vector<SynthesizedOutlier>& outliers,
                                          const LossWeights& w, int epoch,
                                          const TermSwitches& on = {}) {
  ObjectiveResult out;
  TermResult base = base_loss(cache, labels);
  Upstream up = std::move(base.upstream);
  double rmcl = 0.0, irm = 0.0, pdi = 0.0, aos = 0.0;
  std::map<int, double> class_variance;

  if (on.csct && w.delta != 0.0) {
    CsctResult c = csct_loss(cache, labels, w);
    rmcl = c.rmcl;
    irm = c.irm;
    class_variance = c.variance.class_variance;
    for (std::size_t k = 0; k < cache.num_modalities(); ++k) {
      Mat64& dst = up.embeddings[k];
      const Mat64& src = c.contrastive.embedding_grads[k];
      for (std::size_t i = 0; i < dst.data().size(); ++i) dst.data()[i] += w.delta * src.data()[i];
    }
  }
  if (on.pdi) {
    out.pdi = pdi_loss(cache, labels, store, w, epoch);
    pdi = out.pdi.loss;
    up += out.pdi.upstream;
  }
  out.grads = backward(params, cache, up);
  if (on.aos && w.kappa != 0.0 && !outliers.empty()) {
    AosResult a = aos_loss(params, outliers);
    aos = a.loss;
    for (std::size_t i = 0; i < out.grads.values.size(); ++i) {
      out.grads.values[i] += w.kappa * a.grads.values[i];
    }
  }
  out.breakdown = total_loss(base.loss, rmcl, irm, pdi, aos, w);
  out.breakdown.class_variance = std::move(class_variance);
  if (!all_finite(out.grads.values)) throw DivergenceError("objective: non-finite gradient");
  return out;
}

}  // namespace dpulab
