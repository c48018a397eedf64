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

// The multimodal network: per-modality encoders g_k (affine -> ReLU -> affine),
// per-modality heads h_k (affine), and a joint head h over the concatenated
// embeddings. Gradients are hand-derived per layer; the finite-difference
// tests in tests/ are the contract.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dpulab/datagen.hpp"
#include "dpulab/errors.hpp"
#include "dpulab/numkit.hpp"
#include "dpulab/rng.hpp"
#include "json.hpp"

namespace dpulab {

struct ModelDims {
  std::vector<std::size_t> input_dims;  // one per modality
  std::size_t hidden = 32;
  std::size_t embed = 16;
  std::size_t classes = 0;

  std::size_t num_modalities() const { return input_dims.size(); }
  std::size_t joint_width() const { return embed * num_modalities(); }

  void validate() const {
    if (input_dims.empty()) throw ConfigError("ModelDims: no modalities");
    for (std::size_t d : input_dims) {
      if (d == 0) throw ConfigError("ModelDims: zero input dimension");
    }
    if (hidden == 0 || embed == 0) throw ConfigError("ModelDims: zero layer width");
    if (classes < 2) throw ConfigError("ModelDims: need at least 2 classes");
  }

  bool operator==(const ModelDims&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelDims& d) {
  j = {{"input_dims", d.input_dims},
       {"hidden", d.hidden},
       {"embed", d.embed},
       {"classes", d.classes}};
}

inline void from_json(const nlohmann::json& j, ModelDims& d) {
  if (j.contains("input_dims")) j.at("input_dims").get_to(d.input_dims);
  if (j.contains("hidden")) j.at("hidden").get_to(d.hidden);
  if (j.contains("embed")) j.at("embed").get_to(d.embed);
  if (j.contains("classes")) j.at("classes").get_to(d.classes);
}

// Location of one affine layer (out x in weights, then out biases) inside a
// flat parameter vector.
struct AffineSlot {
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
  std::size_t out = 0;
  std::size_t in = 0;
};

// Flat layout of every trainable tensor. Order: for each modality k
// (encoder layer 1, encoder layer 2, head k), then the joint head.
class ParamLayout {
 public:
  ParamLayout() = default;
  explicit ParamLayout(const ModelDims& dims) {
    dims.validate();
    std::size_t off = 0;
    auto add = [&](std::size_t out, std::size_t in) {
      AffineSlot s{off, off + out * in, out, in};
      off += out * in + out;
      return s;
    };
    for (std::size_t k = 0; k < dims.num_modalities(); ++k) {
      encoder1_.push_back(add(dims.hidden, dims.input_dims[k]));
      encoder2_.push_back(add(dims.embed, dims.hidden));
      heads_.push_back(add(dims.classes, dims.embed));
    }
    joint_ = add(dims.classes, dims.joint_width());
    size_ = off;
  }

  const AffineSlot& encoder1(std::size_t k) const { return encoder1_.at(k); }
  const AffineSlot& encoder2(std::size_t k) const { return encoder2_.at(k); }
  const AffineSlot& head(std::size_t k) const { return heads_.at(k); }
  const AffineSlot& joint() const { return joint_; }
  std::size_t size() const { return size_; }

  std::vector<AffineSlot> all() const {
    std::vector<AffineSlot> out;
    for (std::size_t k = 0; k < heads_.size(); ++k) {
      out.push_back(encoder1_[k]);
      out.push_back(encoder2_[k]);
      out.push_back(heads_[k]);
    }
    out.push_back(joint_);
    return out;
  }

 private:
  std::vector<AffineSlot> encoder1_, encoder2_, heads_;
  AffineSlot joint_;
  std::size_t size_ = 0;
};

struct ModelParams {
  ModelDims dims;
  ParamLayout layout;
  Vec64 values;

  ModelParams() = default;
  explicit ModelParams(const ModelDims& d)
      : dims(d), layout(d), values(layout.size(), 0.0) {}

  bool operator==(const ModelParams& o) const {
    return dims == o.dims && values == o.values;
  }
};

// dL/dtheta, laid out exactly like ModelParams::values.
struct GradBuffer {
  Vec64 values;

  GradBuffer() = default;
  explicit GradBuffer(const ModelParams& p) : values(p.values.size(), 0.0) {}

  GradBuffer& operator+=(const GradBuffer& o) {
    if (o.values.size() != values.size()) {
      throw DimensionError("GradBuffer: size mismatch");
    }
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += o.values[i];
    return *this;
  }
};

// y = W x + b for a single input vector.
inline Vec64 affine(const Vec64& params, const AffineSlot& s,
                    std::span<const double> x) {
  if (x.size() != s.in) throw DimensionError("affine: input width mismatch");
  Vec64 y(s.out);
  for (std::size_t o = 0; o < s.out; ++o) {
    const double* w = params.data() + s.weight_offset + o * s.in;
    double acc = params[s.bias_offset + o];
    for (std::size_t i = 0; i < s.in; ++i) acc += w[i] * x[i];
    y[o] = acc;
  }
  return y;
}

// Accumulates dL/dW, dL/db into grads and returns dL/dx.
inline Vec64 affine_backward(const Vec64& params, const AffineSlot& s,
                             std::span<const double> x,
                             std::span<const double> dy, Vec64& grads) {
  Vec64 dx(s.in, 0.0);
  for (std::size_t o = 0; o < s.out; ++o) {
    const double g = dy[o];
    if (g == 0.0) continue;
    const double* w = params.data() + s.weight_offset + o * s.in;
    double* gw = grads.data() + s.weight_offset + o * s.in;
    for (std::size_t i = 0; i < s.in; ++i) {
      gw[i] += g * x[i];
      dx[i] += g * w[i];
    }
    grads[s.bias_offset + o] += g;
  }
  return dx;
}

struct ForwardCache {
  std::size_t batch = 0;
  std::vector<Mat64> inputs;        // [k] n x D_k
  std::vector<Mat64> hidden_pre;    // [k] n x H, before ReLU
  std::vector<Mat64> embeddings;    // [k] n x L, F_i^k (not normalized)
  std::vector<Mat64> mod_logits;    // [k] n x C
  std::vector<Mat64> mod_probs;     // [k] n x C
  Mat64 joint_logits;               // n x C
  Mat64 joint_probs;                // n x C

  std::size_t num_modalities() const { return embeddings.size(); }

  // [F_i^1, ..., F_i^M]
  Vec64 joint_features(std::size_t i) const {
    Vec64 f;
    for (const Mat64& e : embeddings) {
      const auto r = e.row(i);
      f.insert(f.end(), r.begin(), r.end());
    }
    return f;
  }
};

inline ForwardCache forward(const ModelParams& params, const MultimodalBatch& batch) {
  const ModelDims& d = params.dims;
  const std::size_t m = d.num_modalities();
  if (batch.num_modalities() != m) {
    throw DimensionError("forward: batch has " + std::to_string(batch.num_modalities()) +
                         " modalities, model expects " + std::to_string(m));
  }
  const std::size_t n = batch.size();
  ForwardCache c;
  c.batch = n;
  for (std::size_t k = 0; k < m; ++k) {
    const Mat64& x = batch.modalities[k];
    if (x.cols() != d.input_dims[k] || x.rows() != n) {
      throw DimensionError("forward: modality " + std::to_string(k) +
                           " feature width/rows mismatch");
    }
    c.inputs.push_back(x);
    Mat64 pre(n, d.hidden), emb(n, d.embed), logits(n, d.classes), probs(n, d.classes);
    for (std::size_t i = 0; i < n; ++i) {
      const Vec64 h = affine(params.values, params.layout.encoder1(k), x.row(i));
      std::copy(h.begin(), h.end(), pre.row(i).begin());
      Vec64 act(h);
      for (double& v : act) v = std::max(v, 0.0);
      const Vec64 f = affine(params.values, params.layout.encoder2(k), act);
      std::copy(f.begin(), f.end(), emb.row(i).begin());
      const Vec64 z = affine(params.values, params.layout.head(k), f);
      std::copy(z.begin(), z.end(), logits.row(i).begin());
      const Vec64 p = softmax(z);
      std::copy(p.begin(), p.end(), probs.row(i).begin());
    }
    c.hidden_pre.push_back(std::move(pre));
    c.embeddings.push_back(std::move(emb));
    c.mod_logits.push_back(std::move(logits));
    c.mod_probs.push_back(std::move(probs));
  }
  c.joint_logits = Mat64(n, d.classes);
  c.joint_probs = Mat64(n, d.classes);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec64 z = affine(params.values, params.layout.joint(), c.joint_features(i));
    std::copy(z.begin(), z.end(), c.joint_logits.row(i).begin());
    const Vec64 p = softmax(z);
    std::copy(p.begin(), p.end(), c.joint_probs.row(i).begin());
  }
  return c;
}

// Partial derivatives of a scalar loss with respect to the cached outputs.
// Logit- and probability-space partials may both be given; they add.
struct Upstream {
  Mat64 joint_logits;
  Mat64 joint_probs;
  std::vector<Mat64> mod_logits;
  std::vector<Mat64> mod_probs;
  std::vector<Mat64> embeddings;

  static Upstream zeros_like(const ForwardCache& c) {
    Upstream u;
    const std::size_t n = c.batch;
    const std::size_t classes = c.joint_logits.cols();
    u.joint_logits = Mat64(n, classes);
    u.joint_probs = Mat64(n, classes);
    for (std::size_t k = 0; k < c.num_modalities(); ++k) {
      u.mod_logits.emplace_back(n, classes);
      u.mod_probs.emplace_back(n, classes);
      u.embeddings.emplace_back(n, c.embeddings[k].cols());
    }
    return u;
  }

  Upstream& operator+=(const Upstream& o) {
    auto add = [](Mat64& a, const Mat64& b) {
      if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError("Upstream: shape mismatch");
      }
      for (std::size_t i = 0; i < a.data().size(); ++i) a.data()[i] += b.data()[i];
    };
    add(joint_logits, o.joint_logits);
    add(joint_probs, o.joint_probs);
    for (std::size_t k = 0; k < mod_logits.size(); ++k) {
      add(mod_logits[k], o.mod_logits[k]);
      add(mod_probs[k], o.mod_probs[k]);
      add(embeddings[k], o.embeddings[k]);
    }
    return *this;
  }

  void scale(double s) {
    auto mul = [s](Mat64& a) {
      for (double& v : a.data()) v *= s;
    };
    mul(joint_logits);
    mul(joint_probs);
    for (std::size_t k = 0; k < mod_logits.size(); ++k) {
      mul(mod_logits[k]);
      mul(mod_probs[k]);
      mul(embeddings[k]);
    }
  }
};

inline GradBuffer backward(const ModelParams& params, const ForwardCache& cache,
                           const Upstream& up) {
  const ModelDims& d = params.dims;
  const std::size_t m = d.num_modalities();
  const std::size_t n = cache.batch;
  auto check = [&](const Mat64& a, std::size_t cols, const char* what) {
    if (a.rows() != n || a.cols() != cols) {
      throw DimensionError(std::string("backward: upstream ") + what + " shape mismatch");
    }
  };
  check(up.joint_logits, d.classes, "joint_logits");
  check(up.joint_probs, d.classes, "joint_probs");
  if (up.mod_logits.size() != m || up.mod_probs.size() != m ||
      up.embeddings.size() != m || cache.num_modalities() != m) {
    throw DimensionError("backward: modality count mismatch");
  }

  GradBuffer g(params);
  for (std::size_t i = 0; i < n; ++i) {
    // Joint head.
    Vec64 dz = softmax_backward(cache.joint_probs.row(i), up.joint_probs.row(i));
    for (std::size_t c = 0; c < d.classes; ++c) dz[c] += up.joint_logits(i, c);
    const Vec64 dconcat = affine_backward(params.values, params.layout.joint(),
                                          cache.joint_features(i), dz, g.values);
    for (std::size_t k = 0; k < m; ++k) {
      check(up.mod_logits[k], d.classes, "mod_logits");
      check(up.mod_probs[k], d.classes, "mod_probs");
      check(up.embeddings[k], d.embed, "embeddings");
      // Modality head.
      Vec64 dzk = softmax_backward(cache.mod_probs[k].row(i), up.mod_probs[k].row(i));
      for (std::size_t c = 0; c < d.classes; ++c) dzk[c] += up.mod_logits[k](i, c);
      Vec64 df = affine_backward(params.values, params.layout.head(k),
                                 cache.embeddings[k].row(i), dzk, g.values);
      for (std::size_t l = 0; l < d.embed; ++l) {
        df[l] += dconcat[k * d.embed + l] + up.embeddings[k](i, l);
      }
      // Encoder.
      Vec64 act(cache.hidden_pre[k].row(i).begin(), cache.hidden_pre[k].row(i).end());
      for (double& v : act) v = std::max(v, 0.0);
      Vec64 dh = affine_backward(params.values, params.layout.encoder2(k), act, df,
                                 g.values);
      for (std::size_t h = 0; h < d.hidden; ++h) {
        if (cache.hidden_pre[k](i, h) <= 0.0) dh[h] = 0.0;
      }
      affine_backward(params.values, params.layout.encoder1(k), cache.inputs[k].row(i),
                      dh, g.values);
    }
  }
  return g;
}

// Modality head applied to an arbitrary embedding-space vector (used for
// synthesized outliers, which bypass the encoders).
inline Vec64 head_logits(const ModelParams& params, std::size_t k,
                         std::span<const double> embedding) {
  return affine(params.values, params.layout.head(k), embedding);
}

inline void head_backward(const ModelParams& params, std::size_t k,
                          std::span<const double> embedding,
                          std::span<const double> dlogits, GradBuffer& grads) {
  affine_backward(params.values, params.layout.head(k), embedding, dlogits,
                  grads.values);
}

// Glorot-uniform weights, zero biases.
inline ModelParams init_params(const ModelDims& dims, std::uint64_t seed) {
  ModelParams p(dims);
  Rng rng(seed);
  for (const AffineSlot& s : p.layout.all()) {
    const double limit = std::sqrt(6.0 / static_cast<double>(s.in + s.out));
    for (std::size_t i = 0; i < s.out * s.in; ++i) {
      p.values[s.weight_offset + i] = rng.uniform(-limit, limit);
    }
  }
  return p;
}

struct AdamWState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
  std::uint64_t step = 0;
  Vec64 m;
  Vec64 v;

  AdamWState() = default;
  explicit AdamWState(const ModelParams& p) : m(p.values.size(), 0.0), v(p.values.size(), 0.0) {}
};

// theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
inline void adamw_step(AdamWState& s, ModelParams& params, const GradBuffer& grads) {
  const std::size_t n = params.values.size();
  if (grads.values.size() != n) throw DimensionError("adamw_step: gradient size mismatch");
  if (s.m.empty() && s.v.empty()) {
    s.m.assign(n, 0.0);
    s.v.assign(n, 0.0);
  }
  if (s.m.size() != n || s.v.size() != n) {
    throw DimensionError("adamw_step: moment buffer size mismatch");
  }
  if (!all_finite(grads.values)) throw DivergenceError("adamw_step: non-finite gradient");
  ++s.step;
  const double t = static_cast<double>(s.step);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads.values[i];
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g;
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g * g;
    const double mhat = s.m[i] / c1;
    const double vhat = s.v[i] / c2;
    params.values[i] -=
        s.lr * (mhat / (std::sqrt(vhat) + s.eps) + s.weight_decay * params.values[i]);
  }
}

inline void to_json(nlohmann::json& j, const AdamWState& s) {
  j = {{"lr", s.lr},       {"beta1", s.beta1}, {"beta2", s.beta2},
       {"eps", s.eps},     {"weight_decay", s.weight_decay},
       {"step", s.step},   {"m", s.m},         {"v", s.v}};
}

inline void from_json(const nlohmann::json& j, AdamWState& s) {
  j.at("lr").get_to(s.lr);
  j.at("beta1").get_to(s.beta1);
  j.at("beta2").get_to(s.beta2);
  j.at("eps").get_to(s.eps);
  j.at("weight_decay").get_to(s.weight_decay);
  j.at("step").get_to(s.step);
  j.at("m").get_to(s.m);
  j.at("v").get_to(s.v);
}

}  // namespace dpulab
