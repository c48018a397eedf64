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

// dpulab command-line driver.
//
//   dpulab gen-data --config c.json --out data.json.gz [--seed N]
//   dpulab train    --config c.json --out runs/ [--seed N]
//   dpulab eval     --config c.json --checkpoint runs/dpu_seed0/checkpoint.json
//   dpulab sweep    --config c.json --out runs/ [--set loss.mu=1.2]
//   dpulab report   --out runs/
//
// Exit status: 0 when every run completed, 1 when a run failed, 2 on usage or
// configuration errors.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dpulab/datagen.hpp"
#include "dpulab/errors.hpp"
#include "dpulab/evalkit.hpp"
#include "dpulab/runner.hpp"
#include "json.hpp"

namespace dpulab {
namespace {

namespace fs = std::filesystem;

constexpr int kRunFailed = 1;
constexpr int kUsageError = 2;

struct CommonOptions {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.sets, "override, key.path=value (repeatable)")
      ->expected(1)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  cmd->add_option("--seed", o.seed, "run seed");
  cmd->add_option("--out", o.out, "output path");
}

RunConfig load_config(const CommonOptions& o) {
  nlohmann::json doc = nlohmann::json::object();
  if (!o.config.empty()) {
    try {
      doc = nlohmann::json::parse(read_text_file(o.config));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(o.config + ": " + e.what());
    }
  }
  for (const std::string& s : o.sets) apply_override(doc, s);
  RunConfig c = run_config_from_json(doc);
  if (o.seed) c.seeds = {*o.seed};
  if (!o.out.empty()) c.output_dir = o.out;
  return c;
}

void print_reports(const std::vector<EvalReport>& reports) {
  std::printf("%-16s %-12s %-18s %6s %8s %8s %8s\n", "dataset", "method", "variant", "seed",
              "fpr95", "auroc", "id_acc");
  for (const EvalReport& r : reports) {
    std::printf("%-16s %-12s %-18s %6llu %8.4f %8.4f %8.4f\n", r.dataset.c_str(),
                r.method.c_str(), r.variant.c_str(), static_cast<unsigned long long>(r.seed),
                r.fpr95, r.auroc, r.id_acc);
  }
}

int gen_data(const CommonOptions& o) {
  const RunConfig c = load_config(o);
  const auto* synth = std::get_if<SynthConfig>(&c.dataset);
  if (synth == nullptr) throw ConfigError("gen-data needs an inline dataset config");
  if (o.out.empty()) throw ConfigError("gen-data needs --out <file.json[.gz]>");
  SynthConfig s = *synth;
  if (o.seed) s.seed = *o.seed;
  const Dataset ds = generate(s);
  save_dataset(ds, o.out);
  std::printf("wrote %s: %zu train, %zu test, %zu near-OOD, %zu far-OOD samples\n",
              o.out.c_str(), ds.id_train.size(), ds.id_test.size(), ds.near_ood.size(),
              ds.far_ood.size());
  return 0;
}

int train(const CommonOptions& o) {
  const RunConfig c = load_config(o);
  const fs::path out(c.output_dir);
  int failures = 0;
  for (const std::string& name : c.variants) {
    for (std::uint64_t seed : c.seeds) {
      const Variant v = Variant::parse(name);
      const fs::path dir = out / run_dir_name(v.name(), seed);
      try {
        const Dataset data = resolve_dataset(c, seed);
        const TrainResult r = train_run(c, v, data, seed);
        write_file(dir / "checkpoint.json", checkpoint_to_json(r, v.name(), seed).dump());
        write_file(dir / "loss_curve.csv", loss_curve_csv(r.loss_curve, v.name(), seed));
        const LossBreakdown& last = r.loss_curve.back();
        std::printf("%s seed %llu: final total %.6f (base %.6f) -> %s\n", v.name().c_str(),
                    static_cast<unsigned long long>(seed), last.total, last.base,
                    dir.string().c_str());
      } catch (const std::exception& e) {
        ++failures;
        std::fprintf(stderr, "%s seed %llu failed: %s\n", v.name().c_str(),
                     static_cast<unsigned long long>(seed), e.what());
      }
    }
  }
  return failures == 0 ? 0 : kRunFailed;
}

int eval(const CommonOptions& o, const std::string& checkpoint_path) {
  const RunConfig c = load_config(o);
  const Checkpoint ck =
      checkpoint_from_json(nlohmann::json::parse(read_text_file(checkpoint_path)));
  const std::uint64_t seed = o.seed.value_or(ck.seed);
  const Dataset data = resolve_dataset(c, seed);
  const EvalResult ev = evaluate_run(ck.params, data, c.scorer_specs(), ck.variant, seed);
  const fs::path dir = o.out.empty() ? fs::path(checkpoint_path).parent_path() : fs::path(o.out);
  write_file(dir / "report.json", nlohmann::json(ev.reports).dump(2));
  write_file(dir / "scores.csv", scores_csv(ev.scores));
  print_reports(ev.reports);
  return 0;
}

int run_sweep(const CommonOptions& o) {
  const RunConfig c = load_config(o);
  const SweepResult r = sweep(c);
  std::vector<EvalReport> all;
  for (const RunOutcome& run : r.runs) {
    if (!run.ok) {
      std::fprintf(stderr, "%s seed %llu failed: %s\n", run.variant.c_str(),
                   static_cast<unsigned long long>(run.seed), run.error.c_str());
    }
    all.insert(all.end(), run.reports.begin(), run.reports.end());
  }
  print_reports(all);
  std::printf("wrote %s/aggregate.csv and summary.json\n", c.output_dir.c_str());
  return r.all_ok() ? 0 : kRunFailed;
}

int report(const CommonOptions& o) {
  const fs::path dir = o.out.empty() ? fs::path(load_config(o).output_dir) : fs::path(o.out);
  const nlohmann::json s = nlohmann::json::parse(read_text_file((dir / "summary.json").string()));
  std::string md = "| dataset | method | variant | FPR95 | AUROC | ID ACC | seeds |\n";
  md += "|---|---|---|---|---|---|---|\n";
  for (const auto& e : s.at("summary")) {
    auto cell = [&](const char* metric) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.4f ± %.4f", e.at(metric).at("mean").get<double>(),
                    e.at(metric).at("std").get<double>());
      return std::string(buf);
    };
    md += "| " + e.at("dataset").get<std::string>() + " | " + e.at("method").get<std::string>() +
          " | " + e.at("variant").get<std::string>() + " | " + cell("fpr95") + " | " +
          cell("auroc") + " | " + cell("id_acc") + " | " +
          std::to_string(e.at("auroc").at("count").get<std::size_t>()) + " |\n";
  }
  const auto& failures = s.at("failures");
  for (const auto& f : failures) {
    md += "\nfailed: " + f.at("variant").get<std::string>() + " seed " +
          std::to_string(f.at("seed").get<std::uint64_t>()) + ": " +
          f.at("error").get<std::string>() + "\n";
  }
  write_file(dir / "report.md", md);
  std::fputs(md.c_str(), stdout);
  return failures.empty() ? 0 : kRunFailed;
}

int main_impl(int argc, char** argv) {
  CLI::App app{"dpulab: discrepancy-aware prototype learning for multimodal OOD detection"};
  app.require_subcommand(1);
  CommonOptions gen_o, train_o, eval_o, sweep_o, report_o;
  std::string checkpoint;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic dataset file");
  add_common(gen_cmd, gen_o);
  auto* train_cmd = app.add_subcommand("train", "train every (variant, seed) and save checkpoints");
  add_common(train_cmd, train_o);
  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint with the configured scorers");
  add_common(eval_cmd, eval_o);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint.json from train or sweep")
      ->required()
      ->check(CLI::ExistingFile);
  auto* sweep_cmd = app.add_subcommand("sweep", "train and evaluate every (variant, seed)");
  add_common(sweep_cmd, sweep_o);
  auto* report_cmd = app.add_subcommand("report", "summarize a sweep directory as a table");
  add_common(report_cmd, report_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }
  try {
    if (*gen_cmd) return gen_data(gen_o);
    if (*train_cmd) return train(train_o);
    if (*eval_cmd) return eval(eval_o, checkpoint);
    if (*sweep_cmd) return run_sweep(sweep_o);
    if (*report_cmd) return report(report_o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kUsageError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRunFailed;
  }
  return kUsageError;
}

}  // namespace
}  // namespace dpulab

int main(int argc, char** argv) { return dpulab::main_impl(argc, argv); }
