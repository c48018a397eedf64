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

#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "dpulab/datagen.hpp"
#include "dpulab/errors.hpp"
#include "dpulab/rng.hpp"

namespace dpulab {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dpulab_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SynthConfig small_config(std::uint64_t seed = 7) {
  SynthConfig c;
  c.samples_per_class_train = 10;
  c.samples_per_class_test = 8;
  c.num_far_ood_samples = 12;
  c.seed = seed;
  return c;
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c(42), d(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(c.normal(), d.normal());
}

TEST(Rng, DeriveSeedSeparatesTags) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t tag = 0; tag < 64; ++tag) seen.insert(derive_seed(5, tag));
  EXPECT_EQ(seen.size(), 64u);
  EXPECT_EQ(derive_seed(5, 3), derive_seed(5, 3));
  EXPECT_NE(derive_seed(5, 3), derive_seed(6, 3));
}

TEST(Rng, SampleMoments) {
  Rng rng(1);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0, sb = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform01();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
    const double b = rng.beta(10.0, 10.0);
    ASSERT_GT(b, 0.0);
    ASSERT_LT(b, 1.0);
    sb += b;
  }
  EXPECT_NEAR(su / n, 0.5, 0.005);
  EXPECT_NEAR(sn / n, 0.0, 0.01);
  EXPECT_NEAR(sn2 / n, 1.0, 0.02);
  EXPECT_NEAR(sb / n, 0.5, 0.005);
}

TEST(Rng, IndexStaysInRangeAndCoversIt) {
  Rng rng(9);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto k = rng.index(7);
    ASSERT_LT(k, 7u);
    ++hits[k];
  }
  for (int h : hits) EXPECT_GT(h, 800);
}

TEST(Rng, ShuffleIsAPermutation) {
  Rng rng(4);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  rng.shuffle(std::span<int>(v));
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
  std::vector<int> id(50);
  std::iota(id.begin(), id.end(), 0);
  EXPECT_NE(v, id);
}

TEST(Generate, ByteIdenticalAcrossCalls) {
  const SynthConfig c = small_config();
  const Dataset a = generate(c), b = generate(c);
  EXPECT_TRUE(a == b);
  EXPECT_EQ(dataset_to_json(a).dump(), dataset_to_json(b).dump());
}

TEST(Generate, SeedChangesData) {
  EXPECT_FALSE(generate(small_config(1)) == generate(small_config(2)));
}

TEST(Generate, Bookkeeping) {
  const Dataset ds = generate(small_config());
  ASSERT_EQ(ds.id_train.num_modalities(), 2u);
  for (const Mat64& m : ds.id_train.modalities) EXPECT_EQ(m.rows(), 30u);
  std::map<int, int> counts;
  for (int y : ds.id_train.labels) ++counts[y];
  EXPECT_EQ(counts, (std::map<int, int>{{0, 10}, {1, 10}, {2, 10}}));
  EXPECT_EQ(ds.id_test.size(), 24u);
  EXPECT_EQ(ds.near_ood.size(), 24u);
  EXPECT_EQ(ds.far_ood.size(), 12u);
  for (int y : ds.near_ood.labels) EXPECT_EQ(y, kOodLabel);
  for (int y : ds.far_ood.labels) EXPECT_EQ(y, kOodLabel);
  EXPECT_NO_THROW(validate_dataset(ds));
}

TEST(Generate, ZeroNoiseCollapsesToAnchors) {
  SynthConfig c = small_config();
  c.intra_class_spread = 0.0;
  c.peripheral_fraction = 0.0;
  const Dataset ds = generate(c);
  for (std::size_t k = 0; k < 2; ++k) {
    const Mat64& x = ds.id_train.modalities[k];
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const std::size_t first = static_cast<std::size_t>(ds.id_train.labels[i]) * 10;
      for (std::size_t d = 0; d < x.cols(); ++d) EXPECT_EQ(x(i, d), x(first, d));
    }
    // anchors are unit norm
    EXPECT_NEAR(l2_norm(x.row(0)), 1.0, 1e-12);
  }
}

TEST(Generate, NearestAnchorSeparatesLowNoiseClasses) {
  SynthConfig c;
  c.intra_class_spread = 0.01;
  c.seed = 31;
  const Dataset ds = generate(c);
  SynthConfig anchors_cfg = c;
  anchors_cfg.intra_class_spread = 0.0;
  anchors_cfg.peripheral_fraction = 0.0;
  const Dataset anchors = generate(anchors_cfg);
  auto concat = [](const MultimodalBatch& b, std::size_t i) {
    Vec64 v;
    for (const Mat64& m : b.modalities) v.insert(v.end(), m.row(i).begin(), m.row(i).end());
    return v;
  };
  std::vector<Vec64> centers;
  for (std::size_t y = 0; y < c.num_id_classes; ++y) {
    centers.push_back(concat(anchors.id_train, y * c.samples_per_class_train));
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.id_test.size(); ++i) {
    const Vec64 x = concat(ds.id_test, i);
    std::size_t best = 0;
    for (std::size_t y = 1; y < centers.size(); ++y) {
      if (l2_distance(x, centers[y]) < l2_distance(x, centers[best])) best = y;
    }
    correct += static_cast<int>(best) == ds.id_test.labels[i];
  }
  EXPECT_EQ(correct, ds.id_test.size());
}

TEST(Generate, FarSamplesHaveLargerNorm) {
  SynthConfig c;
  c.num_far_ood_samples = 600;
  c.seed = 12;
  const Dataset ds = generate(c);
  auto mean_norm = [](const MultimodalBatch& b) {
    double s = 0.0;
    for (const Mat64& m : b.modalities) {
      for (std::size_t i = 0; i < m.rows(); ++i) s += l2_norm(m.row(i));
    }
    return s / static_cast<double>(b.size() * b.num_modalities());
  };
  EXPECT_GT(mean_norm(ds.far_ood), mean_norm(ds.id_test));
}

TEST(Generate, PeripheralSamplesSitFurtherOut) {
  SynthConfig c = small_config();
  c.samples_per_class_train = 100;
  const Dataset ds = generate(c);
  // rows 0..69 core, 70..99 peripheral for class 0; compare to the core mean
  const Mat64& x = ds.id_train.modalities[0];
  Vec64 center(x.cols(), 0.0);
  for (std::size_t i = 0; i < 70; ++i) {
    for (std::size_t d = 0; d < x.cols(); ++d) center[d] += x(i, d) / 70.0;
  }
  double core = 0.0, far = 0.0;
  for (std::size_t i = 0; i < 70; ++i) core += l2_distance(x.row(i), center) / 70.0;
  for (std::size_t i = 70; i < 100; ++i) far += l2_distance(x.row(i), center) / 30.0;
  EXPECT_GT(far, 3.0 * core);
}

TEST(SynthConfig, RejectsInvalid) {
  SynthConfig c;
  c.num_modalities = 1;
  c.feature_dims = {16};
  EXPECT_THROW(generate(c), ConfigError);
  c = SynthConfig{};
  c.feature_dims = {16};
  EXPECT_THROW(generate(c), ConfigError);
  c = SynthConfig{};
  c.peripheral_fraction = 1.5;
  EXPECT_THROW(generate(c), ConfigError);
  c = SynthConfig{};
  c.peripheral_scale = 0.5;
  EXPECT_THROW(generate(c), ConfigError);
  c = SynthConfig{};
  c.num_id_classes = 0;
  EXPECT_THROW(generate(c), ConfigError);
}

TEST(SynthConfig, PartialJsonKeepsDefaults) {
  const SynthConfig c = nlohmann::json{{"seed", 9}, {"intra_class_spread", 0.2}}.get<SynthConfig>();
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.intra_class_spread, 0.2);
  EXPECT_EQ(c.feature_dims, (std::vector<std::size_t>{16, 16}));
}

TEST(DatasetFile, RoundTripIsBitExact) {
  const fs::path dir = scratch_dir("roundtrip");
  const Dataset ds = generate(small_config());
  for (const char* name : {"ds.json", "ds.json.gz"}) {
    const std::string path = (dir / name).string();
    save_dataset(ds, path);
    const Dataset back = load_dataset(path);
    EXPECT_TRUE(back == ds) << name;
  }
  // gzip output is actually compressed
  EXPECT_LT(fs::file_size(dir / "ds.json.gz"), fs::file_size(dir / "ds.json"));
}

TEST(DatasetFile, RecordsGeneratorAlgorithm) {
  const auto j = dataset_to_json(generate(small_config()));
  EXPECT_EQ(j.at("rng").get<std::string>(), std::string(Rng::kAlgorithm));
  EXPECT_EQ(j.at("schema_version").get<int>(), 1);
}

TEST(DatasetFile, SchemaVersionMismatch) {
  const fs::path dir = scratch_dir("version");
  auto j = dataset_to_json(generate(small_config()));
  j["schema_version"] = 2;
  write_text_file((dir / "v2.json").string(), j.dump());
  EXPECT_THROW(load_dataset((dir / "v2.json").string()), SchemaVersionError);
}

TEST(DatasetFile, LabelOutOfRange) {
  const fs::path dir = scratch_dir("labels");
  auto j = dataset_to_json(generate(small_config()));
  j["splits"]["id_train"]["labels"][0] = 3;
  write_text_file((dir / "bad.json").string(), j.dump());
  EXPECT_THROW(load_dataset((dir / "bad.json").string()), InvariantError);
  j = dataset_to_json(generate(small_config()));
  j["splits"]["near_ood"]["labels"][0] = 0;
  write_text_file((dir / "bad2.json").string(), j.dump());
  EXPECT_THROW(load_dataset((dir / "bad2.json").string()), InvariantError);
}

TEST(DatasetFile, MissingOrMalformed) {
  const fs::path dir = scratch_dir("malformed");
  EXPECT_THROW(load_dataset((dir / "absent.json").string()), IoError);
  write_text_file((dir / "junk.json").string(), "{not json");
  EXPECT_THROW(load_dataset((dir / "junk.json").string()), IoError);
}

TEST(Batch, SelectKeepsRowsInOrder) {
  const Dataset ds = generate(small_config());
  const std::vector<std::size_t> rows = {5, 0, 29};
  const MultimodalBatch b = ds.id_train.select(rows);
  ASSERT_EQ(b.size(), 3u);
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t d = 0; d < b.modalities[k].cols(); ++d) {
        EXPECT_EQ(b.modalities[k](i, d), ds.id_train.modalities[k](rows[i], d));
      }
    }
  }
  EXPECT_EQ(b.labels, (std::vector<int>{0, 0, 2}));
}

}  // namespace
}  // namespace dpulab
