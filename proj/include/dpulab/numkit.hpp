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

// Dense numeric primitives shared by every other module. All arithmetic is in
// double precision; functions are pure and thread-safe.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dpulab/errors.hpp"

namespace dpulab {

using Vec64 = std::vector<double>;

// Row-major dense matrix.
class Mat64 {
 public:
  Mat64() = default;
  Mat64(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Mat64(std::size_t rows, std::size_t cols, Vec64 data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("Mat64: data length " + std::to_string(data_.size()) +
                           " != rows*cols " + std::to_string(rows_ * cols_));
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  const Vec64& data() const { return data_; }
  Vec64& data() { return data_; }

  bool operator==(const Mat64&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vec64 data_;
};

inline void require_same_length(std::span<const double> a,
                                 std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(what) + ": length mismatch (" +
                         std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  require_same_length(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(std::span<const double> a) {
  return std::sqrt(dot(a, a));
}

inline double l2_distance(std::span<const double> a, std::span<const double> b) {
  require_same_length(a, b, "l2_distance");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logsumexp(std::span<const double> xs) {
  if (xs.empty()) throw DimensionError("logsumexp: empty input");
  const double mx = *std::max_element(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

inline Vec64 softmax(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("softmax: empty input");
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vec64 out(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    s += out[i];
  }
  for (double& v : out) v /= s;
  return out;
}

// (1/sqrt 2) * || sqrt(p) - sqrt(q) ||_2, in [0, 1].
inline double hellinger(std::span<const double> p, std::span<const double> q) {
  require_same_length(p, q, "hellinger");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = std::sqrt(std::clamp(p[i], 0.0, 1.0)) -
                     std::sqrt(std::clamp(q[i], 0.0, 1.0));
    s += d * d;
  }
  return std::min(1.0, std::sqrt(0.5 * s));
}

// Shannon entropy in nats with 0 ln 0 := 0.
inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    const double pv = std::clamp(v, 0.0, 1.0);
    if (pv > 0.0) h -= pv * std::log(pv);
  }
  return std::max(0.0, h);
}

inline double cosine_similarity(std::span<const double> a,
                                std::span<const double> b) {
  require_same_length(a, b, "cosine_similarity");
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) {
    throw DegenerateVectorError("cosine_similarity: zero-norm vector");
  }
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

inline double angle_between(std::span<const double> a,
                            std::span<const double> b) {
  return std::acos(cosine_similarity(a, b));
}

inline double mean(std::span<const double> xs) {
  if (xs.empty()) throw DimensionError("mean: empty input");
  return std::accumulate(xs.begin(), xs.end(), 0.0) /
         static_cast<double>(xs.size());
}

// Divides by n, not n - 1.
inline double population_variance(std::span<const double> xs) {
  if (xs.empty()) throw DimensionError("population_variance: empty input");
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(xs.size());
}

// Linear-interpolation percentile (q in [0, 100]) of an unsorted sample.
inline double percentile(std::span<const double> xs, double q) {
  if (xs.empty()) throw DimensionError("percentile: empty input");
  Vec64 s(xs.begin(), xs.end());
  std::sort(s.begin(), s.end());
  const double pos = std::clamp(q, 0.0, 100.0) / 100.0 *
                     static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, s.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  if (frac == 0.0) return s[lo];
  return s[lo] + frac * (s[hi] - s[lo]);
}

// Lowest index among maxima.
inline std::size_t argmax(std::span<const double> xs) {
  if (xs.empty()) throw DimensionError("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (xs[i] > xs[best]) best = i;
  }
  return best;
}

inline bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(),
                     [](double v) { return std::isfinite(v); });
}

// Gradient of hellinger(softmax(z), q) with respect to z, written in terms of
// p = softmax(z). Working in logit space avoids the 1/sqrt(p) singularity of
// the probability-space derivative. At p == q the distance is not
// differentiable and the zero subgradient is returned.
inline Vec64 hellinger_grad_logits(std::span<const double> p,
                                   std::span<const double> q) {
  require_same_length(p, q, "hellinger_grad_logits");
  const std::size_t n = p.size();
  Vec64 sp(n), sq(n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sp[i] = std::sqrt(std::max(p[i], 0.0));
    sq[i] = std::sqrt(std::max(q[i], 0.0));
    s += (sp[i] - sq[i]) * (sp[i] - sq[i]);
  }
  Vec64 g(n, 0.0);
  const double norm = std::sqrt(s);
  if (norm == 0.0) return g;
  // dH/dp_i * p_i = a_i * sqrt(p_i) / 2 with a_i = (sp_i - sq_i) / (sqrt2 norm)
  Vec64 w(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = (sp[i] - sq[i]) / (std::numbers::sqrt2 * norm) * sp[i] * 0.5;
    total += w[i];
  }
  for (std::size_t j = 0; j < n; ++j) g[j] = w[j] - p[j] * total;
  return g;
}

// Gradient of entropy(softmax(z)) with respect to z.
inline Vec64 entropy_grad_logits(std::span<const double> p) {
  const double h = entropy(p);
  Vec64 g(p.size(), 0.0);
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] > 0.0) g[j] = -p[j] * (std::log(p[j]) + h);
  }
  return g;
}

// Pull a probability-space gradient back through softmax.
inline Vec64 softmax_backward(std::span<const double> p,
                              std::span<const double> grad_p) {
  require_same_length(p, grad_p, "softmax_backward");
  const double pg = dot(p, grad_p);
  Vec64 g(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) g[j] = p[j] * (grad_p[j] - pg);
  return g;
}

}  // namespace dpulab
