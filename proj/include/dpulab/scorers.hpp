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

// Post-hoc OOD scorers. Every score follows the higher-is-ID convention.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dpulab/errors.hpp"
#include "dpulab/netcore.hpp"
#include "dpulab/numkit.hpp"

namespace dpulab {

enum class ScoreMethod { kMsp, kMaxLogit, kEnergy, kMahalanobis, kReAct, kAsh, kGen, kKnn, kVim };

inline constexpr std::array<ScoreMethod, 9> kAllScoreMethods = {
    ScoreMethod::kMsp,   ScoreMethod::kMaxLogit, ScoreMethod::kEnergy,
    ScoreMethod::kMahalanobis, ScoreMethod::kReAct, ScoreMethod::kAsh,
    ScoreMethod::kGen,   ScoreMethod::kKnn,      ScoreMethod::kVim};

inline std::string to_string(ScoreMethod m) {
  switch (m) {
    case ScoreMethod::kMsp: return "MSP";
    case ScoreMethod::kMaxLogit: return "MaxLogit";
    case ScoreMethod::kEnergy: return "Energy";
    case ScoreMethod::kMahalanobis: return "Mahalanobis";
    case ScoreMethod::kReAct: return "ReAct";
    case ScoreMethod::kAsh: return "ASH";
    case ScoreMethod::kGen: return "GEN";
    case ScoreMethod::kKnn: return "KNN";
    case ScoreMethod::kVim: return "VIM";
  }
  return "?";
}

inline ScoreMethod parse_score_method(const std::string& name) {
  auto lower = [](std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  };
  const std::string key = lower(name);
  for (ScoreMethod m : kAllScoreMethods) {
    if (lower(to_string(m)) == key) return m;
  }
  throw ConfigError("unknown scorer '" + name + "'");
}

enum class ScoreSource { kJoint, kPerModalitySum };

struct ScorerSpec {
  ScoreMethod method = ScoreMethod::kMsp;
  double temperature = 1.0;
  double react_percentile = 90.0;
  double ash_keep_percent = 10.0;
  double gen_gamma = 0.1;
  std::size_t gen_top_m = 100;
  std::size_t knn_k = 10;
  std::optional<std::size_t> vim_dim;  // default: min(F - C, F / 2), at least 1
  ScoreSource source = ScoreSource::kJoint;

  ScorerSpec() = default;
  explicit ScorerSpec(ScoreMethod m) : method(m) {}

  void validate() const {
    if (!(temperature > 0)) throw ConfigError("ScorerSpec: temperature must be > 0");
    if (!(react_percentile > 0 && react_percentile <= 100)) {
      throw ConfigError("ScorerSpec: react_percentile must lie in (0, 100]");
    }
    if (!(ash_keep_percent > 0 && ash_keep_percent <= 100)) {
      throw ConfigError("ScorerSpec: ash_keep_percent must lie in (0, 100]");
    }
    if (knn_k == 0 || gen_top_m == 0) throw ConfigError("ScorerSpec: k and top_m must be >= 1");
    if (vim_dim && *vim_dim == 0) throw ConfigError("ScorerSpec: vim_dim must be >= 1");
  }
};

// Read-only copy of one classification head.
struct HeadCopy {
  Vec64 params;
  AffineSlot slot;

  static HeadCopy from(const ModelParams& p, const AffineSlot& s) {
    HeadCopy h;
    h.slot = AffineSlot{0, s.out * s.in, s.out, s.in};
    const std::size_t n = s.out * s.in + s.out;
    h.params.assign(p.values.begin() + static_cast<std::ptrdiff_t>(s.weight_offset),
                    p.values.begin() + static_cast<std::ptrdiff_t>(s.weight_offset + n));
    return h;
  }

  Vec64 logits(std::span<const double> features) const {
    return affine(params, slot, features);
  }
};

// Fitted state for one (features, logits, head) source.
struct ScorerView {
  HeadCopy head;
  std::size_t feature_dim = 0;
  // Mahalanobis
  Mat64 class_means;  // C x F
  Mat64 precision;    // F x F
  // ReAct
  double react_threshold = 0.0;
  // KNN
  Mat64 bank;  // N x F, unit rows
  // VIM
  Vec64 feature_mean;
  Mat64 basis;  // F x D, orthonormal columns
  double vim_alpha = 0.0;
};

struct ScorerModel {
  ScorerSpec spec;
  std::vector<ScorerView> views;  // joint: 1 view; per-modality-sum: M views
};

// Training outputs of one source.
struct ScorerFitData {
  Mat64 features;  // N x F
  Mat64 logits;    // N x C
  std::vector<int> labels;
  HeadCopy head;
};

inline ScorerFitData joint_fit_data(const ModelParams& params, const ForwardCache& cache,
                                    std::span<const int> labels) {
  ScorerFitData d;
  d.features = Mat64(cache.batch, params.dims.joint_width());
  for (std::size_t i = 0; i < cache.batch; ++i) {
    const Vec64 f = cache.joint_features(i);
    std::copy(f.begin(), f.end(), d.features.row(i).begin());
  }
  d.logits = cache.joint_logits;
  d.labels.assign(labels.begin(), labels.end());
  d.head = HeadCopy::from(params, params.layout.joint());
  return d;
}

inline ScorerFitData modality_fit_data(const ModelParams& params, const ForwardCache& cache,
                                       std::span<const int> labels, std::size_t k) {
  return ScorerFitData{cache.embeddings.at(k), cache.mod_logits.at(k),
                       std::vector<int>(labels.begin(), labels.end()),
                       HeadCopy::from(params, params.layout.head(k))};
}

inline std::size_t default_vim_dim(std::size_t features, std::size_t classes) {
  const std::size_t half = features / 2;
  const std::size_t gap = features > classes ? features - classes : 0;
  return std::max<std::size_t>(1, std::min(gap, half));
}

namespace detail {

inline Eigen::MatrixXd to_eigen(const Mat64& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) e(r, c) = m(r, c);
  }
  return e;
}

inline Mat64 from_eigen(const Eigen::MatrixXd& e) {
  Mat64 m(e.rows(), e.cols());
  for (Eigen::Index r = 0; r < e.rows(); ++r) {
    for (Eigen::Index c = 0; c < e.cols(); ++c) m(r, c) = e(r, c);
  }
  return m;
}

inline double energy(std::span<const double> logits, double temperature) {
  Vec64 scaled(logits.begin(), logits.end());
  for (double& v : scaled) v /= temperature;
  return temperature * logsumexp(scaled);
}

inline double residual_norm(const ScorerView& v, std::span<const double> f) {
  const std::size_t fd = v.feature_dim;
  Vec64 centered(fd);
  for (std::size_t i = 0; i < fd; ++i) centered[i] = f[i] - v.feature_mean[i];
  // r = x - B (B^T x)
  Vec64 coeff(v.basis.cols(), 0.0);
  for (std::size_t d = 0; d < v.basis.cols(); ++d) {
    for (std::size_t i = 0; i < fd; ++i) coeff[d] += v.basis(i, d) * centered[i];
  }
  double s = 0.0;
  for (std::size_t i = 0; i < fd; ++i) {
    double r = centered[i];
    for (std::size_t d = 0; d < v.basis.cols(); ++d) r -= v.basis(i, d) * coeff[d];
    s += r * r;
  }
  return std::sqrt(s);
}

inline Vec64 unit(std::span<const double> f) {
  Vec64 u(f.begin(), f.end());
  const double n = l2_norm(u);
  if (n > 0.0) {
    for (double& x : u) x /= n;
  }
  return u;
}

}  // namespace detail

// -min_c (f - mu_c)^T P (f - mu_c)
inline double mahalanobis_score(std::span<const double> f, const Mat64& class_means,
                                const Mat64& precision) {
  if (f.size() != class_means.cols() || precision.rows() != f.size()) {
    throw DimensionError("mahalanobis_score: feature width mismatch");
  }
  double best = std::numeric_limits<double>::infinity();
  Vec64 diff(f.size());
  for (std::size_t c = 0; c < class_means.rows(); ++c) {
    for (std::size_t i = 0; i < f.size(); ++i) diff[i] = f[i] - class_means(c, i);
    double q = 0.0;
    for (std::size_t r = 0; r < f.size(); ++r) q += diff[r] * dot(precision.row(r), diff);
    best = std::min(best, q);
  }
  return -best;
}

inline ScorerView fit_view(const ScorerSpec& spec, const ScorerFitData& data) {
  const std::size_t n = data.features.rows();
  const std::size_t fd = data.features.cols();
  if (n == 0) throw FitError("fit_scorer: no training samples");
  if (data.logits.rows() != n || data.labels.size() != n) {
    throw DimensionError("fit_scorer: features/logits/labels row mismatch");
  }
  if (data.head.slot.in != fd || data.head.slot.out != data.logits.cols()) {
    throw DimensionError("fit_scorer: head does not match feature/logit widths");
  }
  const std::size_t classes = data.logits.cols();
  ScorerView v;
  v.head = data.head;
  v.feature_dim = fd;

  switch (spec.method) {
    case ScoreMethod::kMahalanobis: {
      std::vector<std::size_t> counts(classes, 0);
      v.class_means = Mat64(classes, fd);
      for (std::size_t i = 0; i < n; ++i) {
        const int y = data.labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
          throw FitError("fit_scorer: label outside the ID classes");
        }
        ++counts[y];
        for (std::size_t f = 0; f < fd; ++f) v.class_means(y, f) += data.features(i, f);
      }
      for (std::size_t c = 0; c < classes; ++c) {
        if (counts[c] < 2) {
          throw FitError("fit_scorer: Mahalanobis needs >= 2 samples of class " +
                         std::to_string(c));
        }
        for (std::size_t f = 0; f < fd; ++f) v.class_means(c, f) /= double(counts[c]);
      }
      Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(fd, fd);
      Eigen::VectorXd diff(fd);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t f = 0; f < fd; ++f) {
          diff(f) = data.features(i, f) - v.class_means(data.labels[i], f);
        }
        cov.noalias() += diff * diff.transpose();
      }
      cov /= static_cast<double>(n);
      cov += 1e-6 * Eigen::MatrixXd::Identity(fd, fd);
      Eigen::LLT<Eigen::MatrixXd> llt(cov);
      if (llt.info() != Eigen::Success) throw FitError("fit_scorer: singular covariance");
      const Eigen::MatrixXd prec = llt.solve(Eigen::MatrixXd::Identity(fd, fd));
      if (!prec.allFinite()) throw FitError("fit_scorer: singular covariance");
      v.precision = detail::from_eigen(prec);
      break;
    }
    case ScoreMethod::kReAct:
      // The 100th percentile is the open upper end: nothing is clamped, even
      // activations beyond the training maximum.
      v.react_threshold = spec.react_percentile >= 100.0
                              ? std::numeric_limits<double>::infinity()
                              : percentile(data.features.data(), spec.react_percentile);
      break;
    case ScoreMethod::kKnn:
      v.bank = Mat64(n, fd);
      for (std::size_t i = 0; i < n; ++i) {
        const Vec64 u = detail::unit(data.features.row(i));
        std::copy(u.begin(), u.end(), v.bank.row(i).begin());
      }
      break;
    case ScoreMethod::kVim: {
      const std::size_t dim = std::min(fd, spec.vim_dim.value_or(default_vim_dim(fd, classes)));
      const Eigen::MatrixXd x = detail::to_eigen(data.features);
      const Eigen::RowVectorXd mu = x.colwise().mean();
      const Eigen::MatrixXd centered = x.rowwise() - mu;
      const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
      if (eig.info() != Eigen::Success) throw FitError("fit_scorer: eigen-decomposition failed");
      // Eigenvalues ascend; the principal subspace is the last `dim` columns.
      const Eigen::MatrixXd basis = eig.eigenvectors().rightCols(dim);
      v.basis = detail::from_eigen(basis);
      v.feature_mean.assign(mu.data(), mu.data() + fd);
      double logit_sum = 0.0, resid_sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto z = data.logits.row(i);
        logit_sum += *std::max_element(z.begin(), z.end());
        resid_sum += detail::residual_norm(v, data.features.row(i));
      }
      v.vim_alpha = resid_sum > 1e-12 ? logit_sum / resid_sum : 0.0;
      break;
    }
    case ScoreMethod::kMsp:
    case ScoreMethod::kMaxLogit:
    case ScoreMethod::kEnergy:
    case ScoreMethod::kAsh:
    case ScoreMethod::kGen:
      break;
  }
  return v;
}

inline ScorerModel fit_scorer(const ScorerSpec& spec, const ScorerFitData& joint) {
  spec.validate();
  if (spec.source != ScoreSource::kJoint) {
    throw ConfigError("fit_scorer: per-modality-sum needs per-modality fit data");
  }
  return ScorerModel{spec, {fit_view(spec, joint)}};
}

// Fits from a forward pass over the ID training split.
inline ScorerModel fit_scorer(const ScorerSpec& spec, const ModelParams& params,
                              const ForwardCache& train_cache, std::span<const int> labels) {
  spec.validate();
  ScorerModel model{spec, {}};
  if (spec.source == ScoreSource::kJoint) {
    model.views.push_back(fit_view(spec, joint_fit_data(params, train_cache, labels)));
  } else {
    for (std::size_t k = 0; k < params.dims.num_modalities(); ++k) {
      model.views.push_back(fit_view(spec, modality_fit_data(params, train_cache, labels, k)));
    }
  }
  return model;
}

inline double score_view(const ScorerSpec& spec, const ScorerView& v,
                         std::span<const double> f, std::span<const double> z) {
  if (f.size() != v.feature_dim || z.size() != v.head.slot.out) {
    throw DimensionError("score: feature/logit width does not match the fitted scorer");
  }
  switch (spec.method) {
    case ScoreMethod::kMsp: {
      const Vec64 p = softmax(z);
      return *std::max_element(p.begin(), p.end());
    }
    case ScoreMethod::kMaxLogit:
      return *std::max_element(z.begin(), z.end());
    case ScoreMethod::kEnergy:
      return detail::energy(z, spec.temperature);
    case ScoreMethod::kMahalanobis:
      return mahalanobis_score(f, v.class_means, v.precision);
    case ScoreMethod::kReAct: {
      Vec64 clamped(f.begin(), f.end());
      for (double& x : clamped) x = std::min(x, v.react_threshold);
      return detail::energy(v.head.logits(clamped), spec.temperature);
    }
    case ScoreMethod::kAsh: {
      const double cut = percentile(f, 100.0 - spec.ash_keep_percent);
      Vec64 pruned(f.begin(), f.end());
      double before = 0.0, after = 0.0;
      for (double& x : pruned) {
        before += x;
        if (x < cut) x = 0.0;
        after += x;
      }
      if (after != 0.0 && before != after) {
        const double scale = before / after;
        for (double& x : pruned) x *= scale;
      }
      return detail::energy(v.head.logits(pruned), spec.temperature);
    }
    case ScoreMethod::kGen: {
      Vec64 p = softmax(z);
      std::sort(p.begin(), p.end(), std::greater<>());
      const std::size_t m = std::min(spec.gen_top_m, p.size());
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        s += std::pow(p[i], spec.gen_gamma) * std::pow(1.0 - p[i], spec.gen_gamma);
      }
      return -s;
    }
    case ScoreMethod::kKnn: {
      const Vec64 u = detail::unit(f);
      Vec64 dist(v.bank.rows());
      for (std::size_t i = 0; i < v.bank.rows(); ++i) dist[i] = l2_distance(u, v.bank.row(i));
      const std::size_t k = std::min(spec.knn_k, dist.size()) - 1;
      std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
      return -dist[k];
    }
    case ScoreMethod::kVim:
      return logsumexp(z) - v.vim_alpha * detail::residual_norm(v, f);
  }
  return 0.0;
}

// Single-sample score on the joint source.
inline double score(const ScorerModel& model, std::span<const double> features,
                    std::span<const double> logits) {
  if (model.views.size() != 1) {
    throw ConfigError("score: model has per-modality views; use score_batch");
  }
  return score_view(model.spec, model.views[0], features, logits);
}

inline Vec64 score_batch(const ScorerModel& model, const ForwardCache& cache) {
  Vec64 out(cache.batch);
  if (model.spec.source == ScoreSource::kJoint) {
    for (std::size_t i = 0; i < cache.batch; ++i) {
      out[i] = score(model, cache.joint_features(i), cache.joint_logits.row(i));
    }
    return out;
  }
  if (model.views.size() != cache.num_modalities()) {
    throw DimensionError("score_batch: modality count does not match the fitted scorer");
  }
  for (std::size_t i = 0; i < cache.batch; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < model.views.size(); ++k) {
      s += score_view(model.spec, model.views[k], cache.embeddings[k].row(i),
                      cache.mod_logits[k].row(i));
    }
    out[i] = s / static_cast<double>(model.views.size());
  }
  return out;
}

}  // namespace dpulab
