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

#pragma once

// Stage orchestration behind the command line tool: generate, train, score,
// eval and the all-in-one pipeline.
//
// Stage outputs carry digests of the configuration that produced them:
//   train digest  - DSP, model, training and centre-fitting settings
//   score digest  - train digest plus scoring mode
//   report digest - score digest plus pAUC range
// A later stage recomputes the digest from its own config and refuses
// inputs stamped with a different one.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hmic/checkpoint.hpp"
#include "hmic/datagen.hpp"
#include "hmic/dsp_frontend.hpp"
#include "hmic/evaluation.hpp"
#include "hmic/manifest.hpp"
#include "hmic/model.hpp"
#include "hmic/scoring.hpp"

namespace hmic {

// Raises glibc's mmap and trim thresholds so the per-sample training buffers
// are recycled instead of being mapped and faulted in on every call. No-op on
// other C libraries. Call once at program start.
void tune_allocator();

struct RunPaths {
  std::filesystem::path synth_spec;      // empty: built-in default corpus
  std::filesystem::path corpus;          // generate writes here
  std::filesystem::path manifest;        // empty: <corpus>/manifest.csv
  std::filesystem::path cache;           // feature cache; HMIC_CACHE_DIR overrides; empty disables
  std::filesystem::path checkpoint_dir;  // <machine>.ckpt, <machine>.train.csv
  std::filesystem::path scores;          // scores CSV; sidecar <scores>.meta.json
  std::filesystem::path report_dir;      // report.json, report.csv

  std::filesystem::path manifest_file() const;
};

struct ModelSettings {
  std::vector<int> backbone_channels{8, 32, 64};
  int head_channels = 64;
  double lambda = 0.5;
  std::map<std::string, double> lambda_per_machine;  // overrides `lambda`
  Ablation ablation = Ablation::kHmic;
  Pooling pooling = Pooling::kDepthwise;
  std::string init = "random";  // the only accepted value

  double lambda_for(const std::string& machine_type) const;
};

struct RunConfig {
  RunPaths paths;
  DspConfig dsp;
  ModelSettings model;
  TrainConfig train;
  ScoringMode scoring = ScoringMode::kAgc;
  CovarianceMode covariance = CovarianceMode::kPerGroup;
  Shrinkage shrinkage;
  double pauc_p = 0.1;
  int jobs = 1;

  // Throws ConfigError on any invalid field.
  void validate() const;

  std::string train_digest() const;
  std::string score_digest() const;
  std::string report_digest() const;

  std::string to_json() const;
};

// Relative paths in the file resolve against `base_dir`. Missing keys keep
// their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig read_run_config(const std::filesystem::path& file);

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<ScoringMode> scoring;
  std::optional<Ablation> ablation;
  std::optional<double> pauc_p;
};
void apply_overrides(RunConfig& config, const Overrides& overrides);

// Cache directory in effect: $HMIC_CACHE_DIR if set and non-empty, else
// paths.cache.
std::filesystem::path effective_cache_dir(const RunConfig& config);

// Standardised log-Mel of one WAV file, rounded through float32 so cached and
// fresh features are identical.
RowMatrix load_features(const LogMelExtractor& extractor, const std::filesystem::path& wav,
                        const std::filesystem::path& cache_dir = {});

// Per machine type: trained network, label space and fitted centres.
struct MachineModel {
  std::string machine_type;
  LabelSpace space;
  ModelParams params;
  AgcModel agc;
  DcModel dc;
};

Checkpoint make_checkpoint(const RunConfig& config, const MachineModel& model);
MachineModel machine_model_from_checkpoint(const Checkpoint& ckpt);
std::filesystem::path checkpoint_path(const RunConfig& config, const std::string& machine_type);

GeneratedCorpus cmd_generate(const RunConfig& config);

struct TrainSummary {
  std::string machine_type;
  std::filesystem::path checkpoint;
  int n_clips = 0;
  int n_sections = 0;
  int n_groups = 0;
  double final_loss = 0.0;
};
std::vector<TrainSummary> cmd_train(const RunConfig& config);

struct ScoreOutcome {
  std::vector<ScoreRecord> records;
  int n_errors = 0;  // clips with no usable model (score "nan")
  std::vector<std::string> errors;
};

// Scores the given entries with the checkpoints in paths.checkpoint_dir.
ScoreOutcome score_entries(const RunConfig& config, const std::filesystem::path& manifest_file,
                           const std::vector<ManifestEntry>& entries);

// Scores every test clip of the manifest and writes the scores CSV.
ScoreOutcome cmd_score(const RunConfig& config);

EvalReport cmd_eval(const RunConfig& config);

// Number of attribute groups per section among the training files of a
// DCASE-style listing (one file name or path per line).
struct GroupCount {
  std::string machine_type;
  std::map<int, int> per_section;
  int total = 0;
};
GroupCount count_attribute_groups(const std::filesystem::path& listing,
                                  const std::string& machine_type);

}  // namespace hmic
