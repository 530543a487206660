/*
 * Copyright (c) 2026 The hmic Authors. All rights reserved.
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// hmic command line tool.
//
//   hmic [--config FILE] [overrides] generate|train|score|eval|pipeline
//   hmic groups --listing FILE --machine TYPE
//   hmic show-config

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "hmic/error.hpp"
#include "hmic/pipeline.hpp"

namespace {

constexpr int kExitStageFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitClipErrors = 3;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void log(const std::string& msg) { std::cerr << "[hmic] " << msg << std::endl; }

int run_generate(const hmic::RunConfig& c) {
  const auto t0 = Clock::now();
  const auto corpus = hmic::cmd_generate(c);
  log("generate: " + std::to_string(corpus.entries.size()) + " clips -> " + corpus.manifest.string() + " (" +
      std::to_string(seconds_since(t0)) + " s)");
  return 0;
}

int run_train(const hmic::RunConfig& c) {
  const auto t0 = Clock::now();
  for (const auto& s : hmic::cmd_train(c)) {
    log("train: " + s.machine_type + " clips=" + std::to_string(s.n_clips) + " sections=" +
        std::to_string(s.n_sections) + " groups=" + std::to_string(s.n_groups) +
        " final_loss=" + std::to_string(s.final_loss) + " -> " + s.checkpoint.string());
  }
  log("train: done (" + std::to_string(seconds_since(t0)) + " s)");
  return 0;
}

int run_score(const hmic::RunConfig& c) {
  const auto t0 = Clock::now();
  const auto out = hmic::cmd_score(c);
  for (const auto& e : out.errors) log("score error: " + e);
  log("score: " + std::to_string(out.records.size()) + " clips, " + std::to_string(out.n_errors) +
      " errors -> " + c.paths.scores.string() + " (" + std::to_string(seconds_since(t0)) + " s)");
  return out.n_errors == 0 ? 0 : kExitClipErrors;
}

int run_eval(const hmic::RunConfig& c) {
  const auto r = hmic::cmd_eval(c);
  for (const auto& m : r.machines) {
    std::printf("%-12s AUC %.4f  pAUC %.4f\n", m.machine_type.c_str(), m.auc, m.pauc);
  }
  std::printf("%-12s AUC %.4f  pAUC %.4f  score %.4f\n", "Total", r.total_auc, r.total_pauc, r.total_score);
  log("eval: report -> " + (c.paths.report_dir / "report.json").string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  hmic::tune_allocator();
  CLI::App app{"Hierarchical metadata constrained anomalous sound detection"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<std::string> scoring;
  std::optional<std::string> ablation;
  std::optional<double> pauc_p;
  app.add_option("--config", config_file, "Run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Training seed");
  app.add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--scoring", scoring, "Scoring centres")->check(CLI::IsMember({"agc", "dc"}));
  app.add_option("--ablation", ablation, "Training objective")
      ->check(CLI::IsMember({"hmic", "domain_only", "attribute_only"}));
  app.add_option("--pauc-p", pauc_p, "pAUC false-positive range");

  auto* generate = app.add_subcommand("generate", "Render the synthetic corpus");
  auto* train = app.add_subcommand("train", "Train models and fit centres per machine type");
  auto* score = app.add_subcommand("score", "Score the test clips of the manifest");
  auto* eval = app.add_subcommand("eval", "Compute AUC/pAUC report from scores");
  auto* pipeline = app.add_subcommand("pipeline", "generate, train, score and eval");
  auto* show = app.add_subcommand("show-config", "Print the effective configuration");
  auto* groups = app.add_subcommand("groups", "Count attribute groups in a DCASE file listing");
  std::string listing;
  std::string machine;
  groups->add_option("--listing", listing, "File with one clip name per line")->required()->check(CLI::ExistingFile);
  groups->add_option("--machine", machine, "Machine type")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (groups->parsed()) {
      const auto count = hmic::count_attribute_groups(listing, machine);
      for (const auto& [section, n] : count.per_section) std::printf("section %02d: %d\n", section, n);
      std::printf("total: %d\n", count.total);
      return 0;
    }

    hmic::RunConfig config = config_file.empty()
                                 ? hmic::run_config_from_json("{}", std::filesystem::current_path())
                                 : hmic::read_run_config(config_file);
    hmic::Overrides o;
    o.seed = seed;
    o.jobs = jobs;
    if (scoring) o.scoring = hmic::parse_scoring_mode(*scoring);
    if (ablation) o.ablation = hmic::parse_ablation(*ablation);
    o.pauc_p = pauc_p;
    hmic::apply_overrides(config, o);

    if (show->parsed()) {
      std::cout << config.to_json();
      std::cout << "train_digest: " << config.train_digest() << "\nscore_digest: " << config.score_digest()
                << "\nreport_digest: " << config.report_digest() << "\n";
      return 0;
    }
    if (generate->parsed()) return run_generate(config);
    if (train->parsed()) return run_train(config);
    if (score->parsed()) return run_score(config);
    if (eval->parsed()) return run_eval(config);
    if (pipeline->parsed()) {
      const auto t0 = Clock::now();
      for (auto* stage : {run_generate, run_train, run_score, run_eval}) {
        if (const int rc = stage(config); rc != 0) return rc;
      }
      log("pipeline: done (" + std::to_string(seconds_since(t0)) + " s)");
      return 0;
    }
  } catch (const hmic::ConfigError& e) {
    log(std::string("config error: ") + e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return kExitStageFailed;
  }
  return kExitStageFailed;
}
