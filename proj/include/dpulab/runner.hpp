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

// Experiment orchestration: run configuration, the training loop that wires
// every module together, evaluation against near/far OOD splits, and
// multi-variant, multi-seed sweeps with their on-disk artifacts.

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <variant>
#include <vector>

#include "dpulab/datagen.hpp"
#include "dpulab/dpuloss.hpp"
#include "dpulab/errors.hpp"
#include "dpulab/evalkit.hpp"
#include "dpulab/netcore.hpp"
#include "dpulab/protolab.hpp"
#include "dpulab/rng.hpp"
#include "dpulab/scorers.hpp"
#include "json.hpp"

namespace dpulab {

inline constexpr int kCheckpointSchemaVersion = 1;

// Ablation switch. Fixed-rate variants carry an absolute intensification rate.
struct Variant {
  enum class Kind { kDpu, kBaseOnly, kFixedRate, kNoCsct, kNoAos };
  Kind kind = Kind::kDpu;
  double rate = 0.0;

  std::string name() const {
    switch (kind) {
      case Kind::kDpu: return "dpu";
      case Kind::kBaseOnly: return "base-only";
      case Kind::kFixedRate: return "fixed-rate(" + format_rate(rate) + ")";
      case Kind::kNoCsct: return "no-csct";
      case Kind::kNoAos: return "no-aos";
    }
    return "?";
  }

  TermSwitches switches() const {
    switch (kind) {
      case Kind::kBaseOnly: return {false, false, false};
      case Kind::kNoCsct: return {false, true, true};
      case Kind::kNoAos: return {true, true, false};
      default: return {true, true, true};
    }
  }

  // Prototypes are maintained whenever a term reads them.
  bool uses_prototypes() const {
    const TermSwitches s = switches();
    return s.pdi || s.aos;
  }

  static Variant parse(const std::string& s) {
    if (s == "dpu") return {Kind::kDpu, 0.0};
    if (s == "base-only") return {Kind::kBaseOnly, 0.0};
    if (s == "no-csct") return {Kind::kNoCsct, 0.0};
    if (s == "no-aos") return {Kind::kNoAos, 0.0};
    const std::string prefix = "fixed-rate";
    if (s.rfind(prefix, 0) == 0) {
      std::string arg = s.substr(prefix.size());
      if (!arg.empty() && (arg.front() == '(' || arg.front() == ':' || arg.front() == '=')) {
        arg.erase(0, 1);
      }
      if (!arg.empty() && arg.back() == ')') arg.pop_back();
      try {
        std::size_t used = 0;
        const double v = std::stod(arg, &used);
        if (used == arg.size() && v >= 0.0) return {Kind::kFixedRate, v};
      } catch (const std::exception&) {
      }
    }
    throw ConfigError("unknown variant '" + s +
                      "' (expected dpu | base-only | fixed-rate(v) | no-csct | no-aos)");
  }

 private:
  static std::string format_rate(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  }
};

struct RunConfig {
  // Inline generator config or a dataset file path.
  std::variant<SynthConfig, std::string> dataset = SynthConfig{};
  // Inline datasets are regenerated per run seed (dataset seed mixed with it).
  bool vary_dataset_with_seed = true;
  std::size_t hidden = 32;
  std::size_t embed = 16;
  LossWeights loss;
  double lr = 1e-2;
  double weight_decay = 1e-2;
  double proto_beta = 0.8;
  double proto_gamma = 1e-6;
  double proto_rate_cap = 1.0;
  PrototypeUpdateMode proto_mode = PrototypeUpdateMode::kInterpolated;
  int epochs = 30;
  std::size_t batch_size = 64;
  std::vector<std::string> scorers = {"MSP"};
  ScoreSource score_source = ScoreSource::kJoint;
  std::vector<std::string> variants = {"dpu"};
  std::vector<std::uint64_t> seeds = {0};
  std::string output_dir = "runs";
  std::size_t jobs = 1;

  void validate() const {
    if (epochs < 1) throw ConfigError("RunConfig: epochs must be >= 1");
    if (batch_size < 2) throw ConfigError("RunConfig: batch_size must be >= 2");
    if (scorers.empty()) throw ConfigError("RunConfig: at least one scorer required");
    if (variants.empty()) throw ConfigError("RunConfig: at least one variant required");
    if (seeds.empty()) throw ConfigError("RunConfig: at least one seed required");
    if (!(lr >= 0.0) || !(weight_decay >= 0.0)) {
      throw ConfigError("RunConfig: optimizer settings must be >= 0");
    }
    if (hidden == 0 || embed == 0) throw ConfigError("RunConfig: zero layer width");
    for (const auto& s : scorers) parse_score_method(s);
    for (const auto& v : variants) Variant::parse(v);
    loss.validate();
    if (const auto* synth = std::get_if<SynthConfig>(&dataset)) synth->validate();
  }

  std::vector<ScorerSpec> scorer_specs() const {
    std::vector<ScorerSpec> out;
    for (const auto& s : scorers) {
      ScorerSpec spec(parse_score_method(s));
      spec.source = score_source;
      out.push_back(spec);
    }
    return out;
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json::object();
  if (const auto* synth = std::get_if<SynthConfig>(&c.dataset)) {
    j["dataset"] = *synth;
  } else {
    j["dataset"] = std::get<std::string>(c.dataset);
  }
  j["vary_dataset_with_seed"] = c.vary_dataset_with_seed;
  j["model"] = {{"hidden", c.hidden}, {"embed", c.embed}};
  j["loss"] = c.loss;
  j["optimizer"] = {{"lr", c.lr}, {"weight_decay", c.weight_decay}};
  j["prototypes"] = {{"beta", c.proto_beta},
                     {"gamma", c.proto_gamma},
                     {"rate_cap", c.proto_rate_cap},
                     {"mode", to_string(c.proto_mode)}};
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["scorers"] = c.scorers;
  j["score_source"] = c.score_source == ScoreSource::kJoint ? "joint" : "per-modality-sum";
  j["variants"] = c.variants;
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir;
  j["jobs"] = c.jobs;
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  auto get = [&](const nlohmann::json& o, const char* key, auto& field) {
    if (o.contains(key)) o.at(key).get_to(field);
  };
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    if (d.is_string()) {
      c.dataset = d.get<std::string>();
    } else {
      SynthConfig s;
      d.get_to(s);
      c.dataset = s;
    }
  }
  get(j, "vary_dataset_with_seed", c.vary_dataset_with_seed);
  if (j.contains("model")) {
    get(j.at("model"), "hidden", c.hidden);
    get(j.at("model"), "embed", c.embed);
  }
  if (j.contains("loss")) j.at("loss").get_to(c.loss);
  if (j.contains("optimizer")) {
    get(j.at("optimizer"), "lr", c.lr);
    get(j.at("optimizer"), "weight_decay", c.weight_decay);
  }
  if (j.contains("prototypes")) {
    const auto& p = j.at("prototypes");
    get(p, "beta", c.proto_beta);
    get(p, "gamma", c.proto_gamma);
    get(p, "rate_cap", c.proto_rate_cap);
    if (p.contains("mode")) c.proto_mode = parse_update_mode(p.at("mode").get<std::string>());
  }
  get(j, "epochs", c.epochs);
  get(j, "batch_size", c.batch_size);
  get(j, "scorers", c.scorers);
  if (j.contains("score_source")) {
    const auto s = j.at("score_source").get<std::string>();
    if (s == "joint") {
      c.score_source = ScoreSource::kJoint;
    } else if (s == "per-modality-sum") {
      c.score_source = ScoreSource::kPerModalitySum;
    } else {
      throw ConfigError("unknown score_source '" + s + "'");
    }
  }
  get(j, "variants", c.variants);
  get(j, "seeds", c.seeds);
  get(j, "output_dir", c.output_dir);
  get(j, "jobs", c.jobs);
}

// Applies "a.b.c=value" to a JSON document. The value is parsed as JSON when
// possible and kept as a string otherwise.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key.path=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }
  std::string pointer;
  std::stringstream ss(path);
  for (std::string part; std::getline(ss, part, '.');) pointer += "/" + part;
  doc[nlohmann::json::json_pointer(pointer)] = value;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    j.get_to(c);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid run config: ") + e.what());
  }
  c.validate();
  return c;
}

// Dataset for one run seed.
inline Dataset resolve_dataset(const RunConfig& c, std::uint64_t seed) {
  if (const auto* path = std::get_if<std::string>(&c.dataset)) return load_dataset(*path);
  SynthConfig synth = std::get<SynthConfig>(c.dataset);
  if (c.vary_dataset_with_seed) synth.seed = derive_seed(synth.seed, 1000 + seed);
  return generate(synth);
}

inline ModelDims model_dims(const RunConfig& c, const SynthConfig& data) {
  ModelDims d;
  d.input_dims = data.feature_dims;
  d.hidden = c.hidden;
  d.embed = c.embed;
  d.classes = data.num_id_classes;
  return d;
}

struct TrainResult {
  ModelParams params;
  PrototypeStore store;
  AdamWState optimizer;
  std::vector<LossBreakdown> loss_curve;  // batch-averaged, one per epoch
  std::vector<Vec64> rates;               // per epoch, every sample's rate
  std::vector<RateMode> rate_modes;       // per epoch
  std::size_t skipped_samples = 0;
};

inline TrainResult train_run(const RunConfig& c, const Variant& variant, const Dataset& data,
                             std::uint64_t seed) {
  c.validate();
  validate_dataset(data);
  LossWeights w = c.loss;
  if (variant.kind == Variant::Kind::kFixedRate) w.fixed_rate = variant.rate;
  const TermSwitches on = variant.switches();

  const ModelDims dims = model_dims(c, data.config);
  TrainResult r;
  r.params = init_params(dims, derive_seed(seed, 10));
  r.optimizer = AdamWState(r.params);
  r.optimizer.lr = c.lr;
  r.optimizer.weight_decay = c.weight_decay;
  r.store = PrototypeStore(dims.num_modalities(), dims.embed, dims.classes);
  r.store.beta = c.proto_beta;
  r.store.gamma = c.proto_gamma;
  r.store.rate_cap = c.proto_rate_cap;
  r.store.mode = c.proto_mode;

  Rng shuffle_rng(derive_seed(seed, 11));
  Rng outlier_rng(derive_seed(seed, 12));
  const std::size_t n = data.id_train.size();
  std::vector<std::size_t> order(n);

  for (int epoch = 0; epoch < c.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    LossBreakdown sum;
    std::size_t batches = 0;
    Vec64 epoch_rates;
    RateMode epoch_mode = RateMode::kWarmup;
    for (std::size_t start = 0; start < n; start += c.batch_size) {
      const std::size_t end = std::min(n, start + c.batch_size);
      if (end - start < 2) continue;
      const std::span<const std::size_t> rows(order.data() + start, end - start);
      const MultimodalBatch batch = data.id_train.select(rows);
      const ForwardCache cache = forward(r.params, batch);

      // Step 2: prototype updates from this batch, before intensification.
      std::vector<SynthesizedOutlier> outliers;
      if (variant.uses_prototypes()) {
        const RmclResult plain =
            rmcl_loss(cache, batch.labels, w.margin_radians(), w.temperature,
                      Vec64(cache.batch, 0.0));
        const IrmResult var = irm_loss(plain.per_sample, batch.labels, plain.active);
        const std::set<int> present(batch.labels.begin(), batch.labels.end());
        for (int y : present) {
          const auto count = static_cast<std::size_t>(
              std::count(batch.labels.begin(), batch.labels.end(), y));
          const auto it = var.class_variance.find(y);
          const double v = it == var.class_variance.end() ? 0.0 : it->second;
          for (std::size_t k = 0; k < dims.num_modalities(); ++k) {
            const auto mean = batch_class_mean(cache, batch.labels, y, k);
            dpa_update(r.store, static_cast<std::size_t>(y), k, *mean, v, count);
          }
          r.store.mark_updated(static_cast<std::size_t>(y));
        }
        if (on.aos) {
          for (int y : present) {
            outliers.push_back(synthesize_outlier(r.store, static_cast<std::size_t>(y),
                                                  w.outlier_neighbors, outlier_rng));
          }
        }
      }

      ObjectiveResult obj;
      try {
        obj = evaluate_objective(r.params, cache, batch.labels, r.store, outliers, w, epoch, on);
      } catch (const DivergenceError& e) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": " +
                              e.what());
      }
      if (on.pdi) {
        epoch_rates.insert(epoch_rates.end(), obj.pdi.rates.begin(), obj.pdi.rates.end());
        epoch_mode = obj.pdi.mode;
        r.skipped_samples += obj.pdi.skipped;
      }
      adamw_step(r.optimizer, r.params, obj.grads);

      const LossBreakdown& b = obj.breakdown;
      sum.base += b.base;
      sum.rmcl += b.rmcl;
      sum.irm += b.irm;
      sum.csct += b.csct;
      sum.pdi += b.pdi;
      sum.aos += b.aos;
      sum.total += b.total;
      ++batches;
    }
    if (batches > 0) {
      const double inv = 1.0 / static_cast<double>(batches);
      for (double* f : {&sum.base, &sum.rmcl, &sum.irm, &sum.csct, &sum.pdi, &sum.aos,
                        &sum.total}) {
        *f *= inv;
      }
    }
    r.loss_curve.push_back(sum);
    r.rates.push_back(std::move(epoch_rates));
    r.rate_modes.push_back(epoch_mode);
  }
  return r;
}

struct SplitScores {
  std::string method;
  Vec64 id_test, near_ood, far_ood;
};

struct EvalResult {
  std::vector<EvalReport> reports;  // per scorer: near, then far
  std::vector<SplitScores> scores;
};

inline EvalResult evaluate_run(const ModelParams& params, const Dataset& data,
                               const std::vector<ScorerSpec>& scorers,
                               const std::string& variant, std::uint64_t seed,
                               const std::vector<LossBreakdown>& loss_curve = {}) {
  if (params.dims.input_dims != data.config.feature_dims ||
      params.dims.classes != data.config.num_id_classes) {
    throw DimensionError("evaluate_run: model dims do not match the dataset");
  }
  const ForwardCache train = forward(params, data.id_train);
  const ForwardCache test = forward(params, data.id_test);
  const ForwardCache near = forward(params, data.near_ood);
  const ForwardCache far = forward(params, data.far_ood);
  const double acc = id_accuracy(test, data.id_test.labels);

  EvalResult out;
  for (const ScorerSpec& spec : scorers) {
    ScorerModel model;
    try {
      model = fit_scorer(spec, params, train, data.id_train.labels);
    } catch (const Error& e) {
      throw FitError("fitting " + to_string(spec.method) + ": " + e.what());
    }
    SplitScores s{to_string(spec.method), score_batch(model, test), score_batch(model, near),
                  score_batch(model, far)};
    for (const auto& [split, ood] : {std::pair{"near", &s.near_ood}, std::pair{"far", &s.far_ood}}) {
      EvalReport rep;
      rep.method = s.method;
      rep.dataset = std::string("synthetic/") + split;
      rep.variant = variant;
      rep.seed = seed;
      rep.fpr95 = fpr_at_tpr(s.id_test, *ood, 0.95);
      rep.auroc = auroc(s.id_test, *ood);
      rep.id_acc = acc;
      rep.loss_curve = loss_curve;
      out.reports.push_back(std::move(rep));
    }
    out.scores.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::json checkpoint_to_json(const TrainResult& r, const std::string& variant,
                                         std::uint64_t seed) {
  return {{"schema_version", kCheckpointSchemaVersion},
          {"variant", variant},
          {"seed", seed},
          {"dims", r.params.dims},
          {"params", r.params.values},
          {"optimizer", r.optimizer},
          {"step", r.optimizer.step},
          {"prototypes", r.store}};
}

struct Checkpoint {
  ModelParams params;
  AdamWState optimizer;
  PrototypeStore store;
  std::string variant;
  std::uint64_t seed = 0;
};

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  const int version = j.at("schema_version").get<int>();
  if (version != kCheckpointSchemaVersion) {
    throw SchemaVersionError("checkpoint schema_version " + std::to_string(version) +
                             " unsupported");
  }
  Checkpoint c;
  c.params = ModelParams(j.at("dims").get<ModelDims>());
  const Vec64 values = j.at("params").get<Vec64>();
  if (values.size() != c.params.values.size()) {
    throw InvariantError("checkpoint parameter count does not match dims");
  }
  c.params.values = values;
  j.at("optimizer").get_to(c.optimizer);
  j.at("prototypes").get_to(c.store);
  j.at("variant").get_to(c.variant);
  j.at("seed").get_to(c.seed);
  return c;
}

inline std::string loss_curve_csv(const std::vector<LossBreakdown>& curve,
                                  const std::string& variant, std::uint64_t seed,
                                  bool header = true) {
  std::string out;
  if (header) out += "variant,seed,epoch,base,rmcl,irm,csct,pdi,aos,total\n";
  for (std::size_t e = 0; e < curve.size(); ++e) {
    const LossBreakdown& b = curve[e];
    out += variant + "," + std::to_string(seed) + "," + std::to_string(e);
    for (double v : {b.base, b.rmcl, b.irm, b.csct, b.pdi, b.aos, b.total}) {
      out += "," + format_double(v);
    }
    out += "\n";
  }
  return out;
}

inline std::string scores_csv(const std::vector<SplitScores>& scores) {
  std::string out = "sample_index,split,method,score\n";
  for (const SplitScores& s : scores) {
    for (const auto& [split, xs] : {std::pair{"id_test", &s.id_test},
                                    std::pair{"near_ood", &s.near_ood},
                                    std::pair{"far_ood", &s.far_ood}}) {
      for (std::size_t i = 0; i < xs->size(); ++i) {
        out += std::to_string(i) + "," + split + "," + s.method + "," +
               format_double((*xs)[i]) + "\n";
      }
    }
  }
  return out;
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  write_text_file(p.string(), text);
}

// ---------------------------------------------------------------------------
// Sweeps

struct RunOutcome {
  std::string variant;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::vector<EvalReport> reports;
  std::vector<LossBreakdown> loss_curve;
};

inline std::string run_dir_name(const std::string& variant, std::uint64_t seed) {
  std::string v;
  for (char ch : variant) v += (ch == '(' || ch == ')') ? '_' : ch;
  while (!v.empty() && v.back() == '_') v.pop_back();
  return v + "_seed" + std::to_string(seed);
}

// One (variant, seed) run; writes its own subdirectory.
inline RunOutcome execute_run(const RunConfig& c, const std::string& variant_name,
                              std::uint64_t seed, const std::filesystem::path& out_dir) {
  RunOutcome o;
  o.variant = variant_name;
  o.seed = seed;
  try {
    const auto t0 = std::chrono::steady_clock::now();
    const Variant variant = Variant::parse(variant_name);
    const Dataset data = resolve_dataset(c, seed);
    TrainResult tr = train_run(c, variant, data, seed);
    EvalResult ev = evaluate_run(tr.params, data, c.scorer_specs(), variant.name(), seed,
                                 tr.loss_curve);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (EvalReport& r : ev.reports) r.runtime_seconds = secs;
    const auto dir = out_dir / run_dir_name(variant.name(), seed);
    write_file(dir / "report.json", nlohmann::json(ev.reports).dump(2));
    write_file(dir / "checkpoint.json", checkpoint_to_json(tr, variant.name(), seed).dump());
    write_file(dir / "loss_curve.csv", loss_curve_csv(tr.loss_curve, variant.name(), seed));
    write_file(dir / "scores.csv", scores_csv(ev.scores));
    o.variant = variant.name();
    o.reports = std::move(ev.reports);
    o.loss_curve = std::move(tr.loss_curve);
    o.ok = true;
  } catch (const std::exception& e) {
    o.error = e.what();
  }
  return o;
}

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // population
  std::size_t count = 0;
};

inline MetricSummary summarize(const Vec64& xs) {
  MetricSummary s;
  s.count = xs.size();
  if (xs.empty()) return s;
  s.mean = mean(xs);
  s.std = std::sqrt(population_variance(xs));
  return s;
}

struct SweepResult {
  std::vector<RunOutcome> runs;
  std::string aggregate_csv;
  nlohmann::json summary;
  bool all_ok() const {
    return std::all_of(runs.begin(), runs.end(), [](const RunOutcome& r) { return r.ok; });
  }
};

// key: (dataset, method, variant)
using SummaryKey = std::tuple<std::string, std::string, std::string>;

inline std::map<SummaryKey, std::map<std::string, MetricSummary>> summarize_reports(
    const std::vector<EvalReport>& reports) {
  std::map<SummaryKey, std::map<std::string, Vec64>> values;
  for (const EvalReport& r : reports) {
    auto& m = values[{r.dataset, r.method, r.variant}];
    m["fpr95"].push_back(r.fpr95);
    m["auroc"].push_back(r.auroc);
    m["id_acc"].push_back(r.id_acc);
  }
  std::map<SummaryKey, std::map<std::string, MetricSummary>> out;
  for (const auto& [key, metrics] : values) {
    for (const auto& [name, xs] : metrics) out[key][name] = summarize(xs);
  }
  return out;
}

inline SweepResult sweep(const RunConfig& c) {
  c.validate();
  const std::filesystem::path out_dir(c.output_dir);
  std::filesystem::create_directories(out_dir);

  std::vector<std::pair<std::string, std::uint64_t>> jobs;
  for (const auto& v : c.variants) {
    for (std::uint64_t s : c.seeds) jobs.emplace_back(v, s);
  }
  SweepResult result;
  result.runs.resize(jobs.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(c.jobs, jobs.size()));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      result.runs[i] = execute_run(c, jobs[i].first, jobs[i].second, out_dir);
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // Aggregation happens after every run finished, in job order.
  std::vector<EvalReport> all;
  std::string csv = std::string(kAggregateCsvHeader) + "\n";
  std::string curves = "variant,seed,epoch,base,rmcl,irm,csct,pdi,aos,total\n";
  nlohmann::json failures = nlohmann::json::array();
  for (const RunOutcome& o : result.runs) {
    if (!o.ok) {
      failures.push_back({{"variant", o.variant}, {"seed", o.seed}, {"error", o.error}});
      continue;
    }
    for (const EvalReport& r : o.reports) {
      csv += aggregate_csv_row(r) + "\n";
      all.push_back(r);
    }
    curves += loss_curve_csv(o.loss_curve, o.variant, o.seed, false);
  }
  result.aggregate_csv = csv;

  nlohmann::json summary = nlohmann::json::array();
  std::string bars = "dataset,method,variant,metric,mean,std,count\n";
  for (const auto& [key, metrics] : summarize_reports(all)) {
    const auto& [dataset, method, variant] = key;
    nlohmann::json entry = {{"dataset", dataset}, {"method", method}, {"variant", variant}};
    for (const auto& [name, s] : metrics) {
      entry[name] = {{"mean", s.mean}, {"std", s.std}, {"count", s.count}};
      bars += dataset + "," + method + "," + variant + "," + name + "," + format_double(s.mean) +
              "," + format_double(s.std) + "," + std::to_string(s.count) + "\n";
    }
    summary.push_back(std::move(entry));
  }
  result.summary = {{"summary", summary}, {"failures", failures}};

  write_file(out_dir / "aggregate.csv", csv);
  write_file(out_dir / "summary.json", result.summary.dump(2));
  write_file(out_dir / "plot_loss_curves.csv", curves);
  write_file(out_dir / "plot_metric_bars.csv", bars);
  return result;
}

}  // namespace dpulab
