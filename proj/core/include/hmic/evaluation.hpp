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

// AUC, partial AUC and harmonic-mean aggregation over
// (machine type, section, domain) cells.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hmic/metadata_tree.hpp"

namespace hmic {

struct ScoredClip {
  std::string clip_id;
  std::string machine_type;
  int section = 0;
  Domain domain = Domain::kUnknown;
  bool anomalous = false;
  double score = 0.0;
};

// Mann-Whitney form: P(anomalous > normal) + 0.5 P(equal), computed from
// integer pair counts. Throws MetricError unless both classes are present.
double auc(std::span<const ScoredClip> clips);

// Area under the ROC staircase for FPR in [0, p], divided by p. Tied scores
// give a diagonal ROC segment. pauc(clips, 1.0) == auc(clips) exactly.
double pauc(std::span<const ScoredClip> clips, double p = 0.1);

// n / sum(1 / x_i), and 0 when any cell is 0. Throws MetricError on an empty
// list or a negative or NaN cell.
double harmonic_total(std::span<const double> cells);

struct EvalCell {
  std::string machine_type;
  int section = 0;
  Domain domain = Domain::kUnknown;
  double auc = 0.0;
  double pauc = 0.0;
  int n_normal = 0;
  int n_anomalous = 0;
};

struct SectionSummary {
  std::string machine_type;
  int section = 0;
  double auc = 0.0;   // all domains pooled
  double pauc = 0.0;
};

struct MachineSummary {
  std::string machine_type;
  double auc = 0.0;   // harmonic mean over the machine's cells
  double pauc = 0.0;
};

struct EvalReport {
  double pauc_p = 0.1;
  std::string config_digest;
  std::vector<EvalCell> cells;
  std::vector<SectionSummary> sections;
  std::vector<MachineSummary> machines;
  double total_auc = 0.0;    // harmonic mean of all AUC cells
  double total_pauc = 0.0;   // harmonic mean of all pAUC cells
  double total_score = 0.0;  // harmonic mean of all AUC and pAUC cells together
};

// Cells are (machine type, section, domain) slices with their own normal and
// anomalous clips; every cell needs both classes.
EvalReport evaluate(std::span<const ScoredClip> clips, double p = 0.1);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
void write_report_json(const std::filesystem::path& file, const EvalReport& report);
// machine_type,section,domain,auc,pauc,n_normal,n_anomalous
void write_report_csv(const std::filesystem::path& file, const EvalReport& report);

}  // namespace hmic
