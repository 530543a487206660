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

// Centre-based anomaly scores.
//
// Attribute-group centres (AGC): every attribute group of a section gets the
// mean c_m of its training features and a covariance S_m. A test feature f is
// scored by
//     A(f) = min_m sqrt((f - c_m)^T (S_m + eps_m I)^{-1} (f - c_m))
// over the groups of the clip's section, whatever its domain. Domain centres
// (DC) use the same machinery with one group per (section, domain).
//
// Covariances are population covariances (divide by N). The shrinkage eps_m
// defaults to max(1e-3 * trace(S_m) / d, 1e-6). Distances are computed with a
// Cholesky solve, never an explicit inverse.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hmic/metadata_tree.hpp"

namespace hmic {

enum class CovarianceMode { kPerGroup, kPerSectionPooled };
enum class ScoringMode { kAgc, kDc };

std::string_view to_string(CovarianceMode m);
std::string_view to_string(ScoringMode m);
CovarianceMode parse_covariance_mode(std::string_view text);
ScoringMode parse_scoring_mode(std::string_view text);

struct Shrinkage {
  double relative = 1e-3;
  double floor = 1e-6;
  std::optional<double> absolute;  // when set, used as-is

  static Shrinkage fixed(double epsilon) { return {0.0, 0.0, epsilon}; }
  double epsilon_for(const Eigen::MatrixXd& covariance) const;
};

struct CentreSample {
  int section = 0;
  int group = 0;  // attribute-group label, or domain index for DC
  Eigen::VectorXd feature;
};

struct CentreGroup {
  int label = 0;
  int n_clips = 0;
  Eigen::VectorXd centre;
  Eigen::MatrixXd covariance;  // before shrinkage
  double epsilon = 0.0;
  Eigen::LLT<Eigen::MatrixXd> factor;  // of covariance + epsilon * I
};

class CentreModel {
 public:
  CentreModel() = default;

  int dim() const { return dim_; }
  bool has_section(int section) const { return sections_.contains(section); }
  // Groups of a section in ascending label order; throws UnknownLabelError.
  const std::vector<CentreGroup>& groups(int section) const;
  const std::map<int, std::vector<CentreGroup>>& sections() const { return sections_; }

  // Adds a group and factorises covariance + epsilon I; throws Error when
  // that is not positive definite.
  void add_group(int section, CentreGroup group);

 private:
  int dim_ = 0;
  std::map<int, std::vector<CentreGroup>> sections_;
};

using AgcModel = CentreModel;
using DcModel = CentreModel;

CentreModel fit_centres(std::span<const CentreSample> samples,
                        CovarianceMode mode = CovarianceMode::kPerGroup,
                        const Shrinkage& shrinkage = {});

struct AgcSample {
  Eigen::VectorXd feature;  // f_h
  int ag_label = 0;
  int section = 0;
};

struct DcSample {
  Eigen::VectorXd feature;
  Domain domain = Domain::kSource;
  int section = 0;
};

// Domain index used as DC group label: 0 = source, 1 = target.
int domain_index(Domain d);

AgcModel fit_agc(std::span<const AgcSample> features, const Shrinkage& shrinkage = {},
                 CovarianceMode mode = CovarianceMode::kPerGroup);
DcModel fit_dc(std::span<const DcSample> features, const Shrinkage& shrinkage = {},
               CovarianceMode mode = CovarianceMode::kPerGroup);

double mahalanobis(const Eigen::VectorXd& f, const Eigen::VectorXd& centre,
                   const Eigen::LLT<Eigen::MatrixXd>& factor);

struct ScoreRecord {
  std::string clip_id;
  int section = 0;
  double score = 0.0;
  int argmin_group = -1;
};

// Minimum distance over the section's groups; ties go to the lowest label.
ScoreRecord score_centres(const Eigen::VectorXd& feature, const CentreModel& model, int section,
                          std::string clip_id = {});
ScoreRecord score_agc(const Eigen::VectorXd& feature, const AgcModel& model, int section,
                      std::string clip_id = {});
ScoreRecord score_dc(const Eigen::VectorXd& feature, const DcModel& model, int section,
                     std::string clip_id = {});

// Scores CSV: clip_id,section,score,argmin_group. Failed clips carry score
// "nan" and argmin_group -1.
inline constexpr std::string_view kScoresHeader = "clip_id,section,score,argmin_group";
void write_scores(std::ostream& out, const std::vector<ScoreRecord>& records);
void write_scores(const std::filesystem::path& file, const std::vector<ScoreRecord>& records);
std::vector<ScoreRecord> read_scores(std::istream& in);
std::vector<ScoreRecord> read_scores(const std::filesystem::path& file);

}  // namespace hmic
