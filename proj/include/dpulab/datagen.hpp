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

// Deterministic synthetic multimodal benchmark with controllable intra-class
// variability, plus the JSON dataset file format.
//
// Generative model (all draws from one Rng per stream, see rng.hpp):
//   * A shared latent of dimension min(feature_dims) is projected into each
//     modality by a fixed Gaussian matrix. A class anchor in modality k is
//     normalize(rho * normalize(P_k s) + (1 - rho) * normalize(u_k)), where s
//     is the class latent and u_k an independent Gaussian direction.
//   * Each class also owns a unit offset direction per modality.
//   * Core samples: anchor + sigma * z.
//   * Peripheral samples: anchor + sigma * scale * z
//                         + sigma * scale * sqrt(dim) * offset.
//     The offset has the same length as the expected noise norm, so
//     sigma = 0 collapses every sample onto its anchor.
//   * Near-OOD classes are fresh classes from the same family.
//   * Far-OOD samples come from num_id_classes fresh anchors scaled by 3,
//     noise standard deviation sigma * sqrt(2), no peripheral offset.

#pragma once

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dpulab/errors.hpp"
#include "dpulab/numkit.hpp"
#include "dpulab/rng.hpp"
#include "json.hpp"

namespace dpulab {

inline constexpr int kOodLabel = -1;
inline constexpr int kDatasetSchemaVersion = 1;

// One mini-batch (or split): one n x d_k matrix per modality plus labels.
struct MultimodalBatch {
  std::vector<Mat64> modalities;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t num_modalities() const { return modalities.size(); }

  MultimodalBatch select(std::span<const std::size_t> rows) const {
    MultimodalBatch out;
    out.labels.reserve(rows.size());
    for (std::size_t r : rows) out.labels.push_back(labels.at(r));
    for (const Mat64& m : modalities) {
      Mat64 sub(rows.size(), m.cols());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = m.row(rows[i]);
        std::copy(src.begin(), src.end(), sub.row(i).begin());
      }
      out.modalities.push_back(std::move(sub));
    }
    return out;
  }

  bool operator==(const MultimodalBatch&) const = default;
};

struct SynthConfig {
  std::size_t num_modalities = 2;
  std::vector<std::size_t> feature_dims = {16, 16};
  std::size_t num_id_classes = 3;
  std::size_t samples_per_class_train = 200;
  std::size_t samples_per_class_test = 100;
  std::size_t num_near_ood_classes = 3;
  std::size_t num_far_ood_samples = 300;
  double intra_class_spread = 0.3;
  double peripheral_fraction = 0.3;
  double peripheral_scale = 3.0;
  double modality_correlation = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("SynthConfig: " + m); };
    if (num_modalities < 2) fail("num_modalities must be >= 2");
    if (feature_dims.size() != num_modalities) {
      fail("feature_dims length must equal num_modalities");
    }
    for (std::size_t d : feature_dims) {
      if (d == 0) fail("feature_dims must be positive");
    }
    if (num_id_classes == 0 || samples_per_class_train == 0 ||
        samples_per_class_test == 0 || num_near_ood_classes == 0 ||
        num_far_ood_samples == 0) {
      fail("all counts must be positive");
    }
    if (!(intra_class_spread >= 0.0) || !std::isfinite(intra_class_spread)) {
      fail("intra_class_spread must be >= 0");
    }
    if (!(peripheral_fraction >= 0.0 && peripheral_fraction <= 1.0)) {
      fail("peripheral_fraction must lie in [0, 1]");
    }
    if (!(peripheral_scale >= 1.0) || !std::isfinite(peripheral_scale)) {
      fail("peripheral_scale must be >= 1");
    }
    if (!(modality_correlation >= 0.0 && modality_correlation <= 1.0)) {
      fail("modality_correlation must lie in [0, 1]");
    }
  }

  bool operator==(const SynthConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json{{"num_modalities", c.num_modalities},
                     {"feature_dims", c.feature_dims},
                     {"num_id_classes", c.num_id_classes},
                     {"samples_per_class_train", c.samples_per_class_train},
                     {"samples_per_class_test", c.samples_per_class_test},
                     {"num_near_ood_classes", c.num_near_ood_classes},
                     {"num_far_ood_samples", c.num_far_ood_samples},
                     {"intra_class_spread", c.intra_class_spread},
                     {"peripheral_fraction", c.peripheral_fraction},
                     {"peripheral_scale", c.peripheral_scale},
                     {"modality_correlation", c.modality_correlation},
                     {"seed", c.seed}};
}

// Missing keys keep their defaults so partial configs are accepted.
inline void from_json(const nlohmann::json& j, SynthConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("num_modalities", c.num_modalities);
  get("feature_dims", c.feature_dims);
  get("num_id_classes", c.num_id_classes);
  get("samples_per_class_train", c.samples_per_class_train);
  get("samples_per_class_test", c.samples_per_class_test);
  get("num_near_ood_classes", c.num_near_ood_classes);
  get("num_far_ood_samples", c.num_far_ood_samples);
  get("intra_class_spread", c.intra_class_spread);
  get("peripheral_fraction", c.peripheral_fraction);
  get("peripheral_scale", c.peripheral_scale);
  get("modality_correlation", c.modality_correlation);
  get("seed", c.seed);
  if (j.contains("feature_dims") && !j.contains("num_modalities")) {
    c.num_modalities = c.feature_dims.size();
  }
}

struct Dataset {
  MultimodalBatch id_train;
  MultimodalBatch id_test;
  MultimodalBatch near_ood;
  MultimodalBatch far_ood;
  SynthConfig config;

  bool operator==(const Dataset&) const = default;
};

namespace detail {

inline Vec64 gaussian_vector(Rng& rng, std::size_t n) {
  Vec64 v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

inline void normalize_in_place(Vec64& v) {
  const double n = l2_norm(v);
  if (n > 0.0) {
    for (double& x : v) x /= n;
  }
}

struct ClassFamily {
  // [modality] -> anchor / offset direction
  std::vector<Vec64> anchors;
  std::vector<Vec64> offsets;
};

inline ClassFamily draw_class(Rng& rng, const SynthConfig& c,
                              const std::vector<Mat64>& projections,
                              std::size_t latent_dim, double anchor_scale) {
  const Vec64 latent = gaussian_vector(rng, latent_dim);
  ClassFamily fam;
  for (std::size_t k = 0; k < c.num_modalities; ++k) {
    const Mat64& proj = projections[k];
    Vec64 shared(c.feature_dims[k], 0.0);
    for (std::size_t r = 0; r < proj.rows(); ++r) shared[r] = dot(proj.row(r), latent);
    normalize_in_place(shared);
    Vec64 indep = gaussian_vector(rng, c.feature_dims[k]);
    normalize_in_place(indep);
    Vec64 anchor(c.feature_dims[k]);
    for (std::size_t i = 0; i < anchor.size(); ++i) {
      anchor[i] = c.modality_correlation * shared[i] +
                  (1.0 - c.modality_correlation) * indep[i];
    }
    normalize_in_place(anchor);
    for (double& x : anchor) x *= anchor_scale;
    Vec64 offset = gaussian_vector(rng, c.feature_dims[k]);
    normalize_in_place(offset);
    fam.anchors.push_back(std::move(anchor));
    fam.offsets.push_back(std::move(offset));
  }
  return fam;
}

inline MultimodalBatch empty_batch(const SynthConfig& c, std::size_t rows) {
  MultimodalBatch b;
  for (std::size_t k = 0; k < c.num_modalities; ++k) {
    b.modalities.emplace_back(rows, c.feature_dims[k]);
  }
  b.labels.assign(rows, kOodLabel);
  return b;
}

inline void fill_sample(Rng& rng, const SynthConfig& c, const ClassFamily& fam,
                        double noise_std, bool peripheral, MultimodalBatch& out,
                        std::size_t row) {
  for (std::size_t k = 0; k < c.num_modalities; ++k) {
    const std::size_t dim = c.feature_dims[k];
    const double std_k = peripheral ? noise_std * c.peripheral_scale : noise_std;
    const double offset_len =
        peripheral ? noise_std * c.peripheral_scale * std::sqrt(double(dim)) : 0.0;
    auto dst = out.modalities[k].row(row);
    for (std::size_t i = 0; i < dim; ++i) {
      dst[i] = fam.anchors[k][i] + offset_len * fam.offsets[k][i] +
               std_k * rng.normal();
    }
  }
}

// Class-major block of samples; the last round(fraction * n) of each class
// are peripheral.
inline void fill_classes(Rng& rng, const SynthConfig& c,
                         const std::vector<ClassFamily>& classes,
                         std::size_t per_class, bool labelled,
                         MultimodalBatch& out) {
  const auto n_periph = static_cast<std::size_t>(
      std::llround(c.peripheral_fraction * static_cast<double>(per_class)));
  std::size_t row = 0;
  for (std::size_t y = 0; y < classes.size(); ++y) {
    for (std::size_t s = 0; s < per_class; ++s, ++row) {
      const bool peripheral = s >= per_class - n_periph;
      fill_sample(rng, c, classes[y], c.intra_class_spread, peripheral, out, row);
      out.labels[row] = labelled ? static_cast<int>(y) : kOodLabel;
    }
  }
}

}  // namespace detail

inline Dataset generate(const SynthConfig& config) {
  config.validate();
  const SynthConfig& c = config;
  Rng family_rng(derive_seed(c.seed, 0));

  std::size_t latent_dim = c.feature_dims[0];
  for (std::size_t d : c.feature_dims) latent_dim = std::min(latent_dim, d);
  std::vector<Mat64> projections;
  for (std::size_t k = 0; k < c.num_modalities; ++k) {
    Mat64 p(c.feature_dims[k], latent_dim);
    for (double& x : p.data()) x = family_rng.normal();
    projections.push_back(std::move(p));
  }

  std::vector<detail::ClassFamily> id_classes, near_classes, far_classes;
  for (std::size_t y = 0; y < c.num_id_classes; ++y) {
    id_classes.push_back(detail::draw_class(family_rng, c, projections, latent_dim, 1.0));
  }
  for (std::size_t y = 0; y < c.num_near_ood_classes; ++y) {
    near_classes.push_back(detail::draw_class(family_rng, c, projections, latent_dim, 1.0));
  }
  for (std::size_t y = 0; y < c.num_id_classes; ++y) {
    far_classes.push_back(detail::draw_class(family_rng, c, projections, latent_dim, 3.0));
  }

  Dataset ds;
  ds.config = c;

  Rng train_rng(derive_seed(c.seed, 1));
  ds.id_train = detail::empty_batch(c, c.num_id_classes * c.samples_per_class_train);
  detail::fill_classes(train_rng, c, id_classes, c.samples_per_class_train, true,
                       ds.id_train);

  Rng test_rng(derive_seed(c.seed, 2));
  ds.id_test = detail::empty_batch(c, c.num_id_classes * c.samples_per_class_test);
  detail::fill_classes(test_rng, c, id_classes, c.samples_per_class_test, true,
                       ds.id_test);

  Rng near_rng(derive_seed(c.seed, 3));
  ds.near_ood =
      detail::empty_batch(c, c.num_near_ood_classes * c.samples_per_class_test);
  detail::fill_classes(near_rng, c, near_classes, c.samples_per_class_test, false,
                       ds.near_ood);

  Rng far_rng(derive_seed(c.seed, 4));
  ds.far_ood = detail::empty_batch(c, c.num_far_ood_samples);
  const double far_std = c.intra_class_spread * std::numbers::sqrt2;
  for (std::size_t i = 0; i < c.num_far_ood_samples; ++i) {
    const auto& fam = far_classes[i % far_classes.size()];
    detail::fill_sample(far_rng, c, fam, far_std, false, ds.far_ood, i);
  }
  return ds;
}

// Throws InvariantError if labels or shapes disagree with the config.
inline void validate_dataset(const Dataset& ds) {
  const SynthConfig& c = ds.config;
  c.validate();
  auto check_split = [&](const MultimodalBatch& b, const char* name,
                         std::size_t rows, bool id_labels) {
    auto fail = [&](const std::string& m) {
      throw InvariantError(std::string("dataset split ") + name + ": " + m);
    };
    if (b.labels.size() != rows) fail("unexpected row count");
    if (b.modalities.size() != c.num_modalities) fail("unexpected modality count");
    for (std::size_t k = 0; k < c.num_modalities; ++k) {
      if (b.modalities[k].rows() != rows || b.modalities[k].cols() != c.feature_dims[k]) {
        fail("feature matrix shape mismatch in modality " + std::to_string(k));
      }
      if (!all_finite(b.modalities[k].data())) fail("non-finite feature");
    }
    for (int y : b.labels) {
      if (id_labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= c.num_id_classes) {
          fail("label " + std::to_string(y) + " outside [0, num_id_classes)");
        }
      } else if (y != kOodLabel) {
        fail("OOD label must be the sentinel -1");
      }
    }
  };
  check_split(ds.id_train, "id_train", c.num_id_classes * c.samples_per_class_train, true);
  check_split(ds.id_test, "id_test", c.num_id_classes * c.samples_per_class_test, true);
  check_split(ds.near_ood, "near_ood",
              c.num_near_ood_classes * c.samples_per_class_test, false);
  check_split(ds.far_ood, "far_ood", c.num_far_ood_samples, false);
}

inline nlohmann::json batch_to_json(const MultimodalBatch& b) {
  nlohmann::json mods = nlohmann::json::array();
  for (const Mat64& m : b.modalities) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) {
      const auto row = m.row(r);
      rows.push_back(Vec64(row.begin(), row.end()));
    }
    mods.push_back(std::move(rows));
  }
  return {{"labels", b.labels}, {"modalities", std::move(mods)}};
}

inline MultimodalBatch batch_from_json(const nlohmann::json& j) {
  MultimodalBatch b;
  j.at("labels").get_to(b.labels);
  for (const auto& mod : j.at("modalities")) {
    const std::size_t rows = mod.size();
    const std::size_t cols = rows ? mod.at(0).size() : 0;
    Mat64 m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto& row = mod.at(r);
      if (row.size() != cols) throw InvariantError("ragged feature matrix");
      for (std::size_t c = 0; c < cols; ++c) m(r, c) = row.at(c).get<double>();
    }
    b.modalities.push_back(std::move(m));
  }
  return b;
}

inline nlohmann::json dataset_to_json(const Dataset& ds) {
  return {{"schema_version", kDatasetSchemaVersion},
          {"rng", std::string(Rng::kAlgorithm)},
          {"config", ds.config},
          {"splits",
           {{"id_train", batch_to_json(ds.id_train)},
            {"id_test", batch_to_json(ds.id_test)},
            {"near_ood", batch_to_json(ds.near_ood)},
            {"far_ood", batch_to_json(ds.far_ood)}}}};
}

inline Dataset dataset_from_json(const nlohmann::json& j) {
  const int version = j.at("schema_version").get<int>();
  if (version != kDatasetSchemaVersion) {
    throw SchemaVersionError("dataset schema_version " + std::to_string(version) +
                             " unsupported (expected " +
                             std::to_string(kDatasetSchemaVersion) + ")");
  }
  Dataset ds;
  j.at("config").get_to(ds.config);
  const auto& splits = j.at("splits");
  ds.id_train = batch_from_json(splits.at("id_train"));
  ds.id_test = batch_from_json(splits.at("id_test"));
  ds.near_ood = batch_from_json(splits.at("near_ood"));
  ds.far_ood = batch_from_json(splits.at("far_ood"));
  validate_dataset(ds);
  return ds;
}

inline bool has_gz_suffix(const std::string& path) {
  return path.size() >= 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
}

// Plain or gzip text file, chosen by the ".gz" suffix.
inline void write_text_file(const std::string& path, const std::string& text) {
  if (has_gz_suffix(path)) {
    gzFile f = gzopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open " + path + " for writing");
    const int written = gzwrite(f, text.data(), static_cast<unsigned>(text.size()));
    const int rc = gzclose(f);
    if (written != static_cast<int>(text.size()) || rc != Z_OK) {
      throw IoError("gzip write failed for " + path);
    }
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

inline std::string read_text_file(const std::string& path) {
  if (has_gz_suffix(path)) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open " + path);
    std::string text;
    char buf[1 << 16];
    int n;
    while ((n = gzread(f, buf, sizeof buf)) > 0) text.append(buf, n);
    gzclose(f);
    if (n < 0) throw IoError("gzip read failed for " + path);
    return text;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  write_text_file(path, dataset_to_json(ds).dump());
}

inline Dataset load_dataset(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("malformed dataset file " + path + ": " + e.what());
  }
  try {
    return dataset_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw InvariantError("malformed dataset file " + path + ": " + e.what());
  }
}

}  // namespace dpulab
