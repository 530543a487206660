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

#include "hmic/scoring.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "hmic/error.hpp"

namespace hmic {
namespace {

void check_finite(const Eigen::VectorXd& f) {
  if (!f.allFinite()) throw Error("feature vector contains non-finite values");
}

struct Accumulated {
  Eigen::VectorXd sum;
  std::vector<const Eigen::VectorXd*> members;
};

}  // namespace

std::string_view to_string(CovarianceMode m) {
  return m == CovarianceMode::kPerGroup ? "per_group" : "per_section_pooled";
}

std::string_view to_string(ScoringMode m) { return m == ScoringMode::kAgc ? "agc" : "dc"; }

CovarianceMode parse_covariance_mode(std::string_view text) {
  if (text == "per_group") return CovarianceMode::kPerGroup;
  if (text == "per_section_pooled") return CovarianceMode::kPerSectionPooled;
  throw ConfigError("unknown covariance mode '" + std::string(text) +
                    "' (expected per_group or per_section_pooled)");
}

ScoringMode parse_scoring_mode(std::string_view text) {
  if (text == "agc") return ScoringMode::kAgc;
  if (text == "dc") return ScoringMode::kDc;
  throw ConfigError("unknown scoring mode '" + std::string(text) + "' (expected agc or dc)");
}

double Shrinkage::epsilon_for(const Eigen::MatrixXd& covariance) const {
  if (absolute) {
    if (!(*absolute >= 0.0)) throw Error("shrinkage epsilon must be non-negative");
    return *absolute;
  }
  const double d = static_cast<double>(covariance.rows());
  return std::max(relative * covariance.trace() / d, floor);
}

const std::vector<CentreGroup>& CentreModel::groups(int section) const {
  const auto it = sections_.find(section);
  if (it == sections_.end()) {
    throw UnknownLabelError("section " + std::to_string(section) + " has no fitted centres");
  }
  return it->second;
}

void CentreModel::add_group(int section, CentreGroup group) {
  const auto d = group.centre.size();
  if (d == 0) throw ShapeError("centre has zero dimension");
  if (dim_ == 0) dim_ = static_cast<int>(d);
  if (d != dim_ || group.covariance.rows() != d || group.covariance.cols() != d) {
    throw ShapeError("centre/covariance dimension mismatch");
  }
  if (group.n_clips < 1) throw Error("attribute group with zero clips");
  if (!(group.epsilon >= 0.0)) throw Error("shrinkage epsilon must be non-negative");
  Eigen::MatrixXd shrunk = group.covariance;
  shrunk.diagonal().array() += group.epsilon;
  group.factor.compute(shrunk);
  if (group.factor.info() != Eigen::Success) {
    throw Error("covariance of section " + std::to_string(section) + " group " +
                std::to_string(group.label) + " is not positive definite after shrinkage");
  }
  auto& list = sections_[section];
  const auto pos = std::lower_bound(list.begin(), list.end(), group.label,
                                    [](const CentreGroup& g, int label) { return g.label < label; });
  if (pos != list.end() && pos->label == group.label) {
    throw Error("duplicate group " + std::to_string(group.label) + " in section " +
                std::to_string(section));
  }
  list.insert(pos, std::move(group));
}

CentreModel fit_centres(std::span<const CentreSample> samples, CovarianceMode mode,
                        const Shrinkage& shrinkage) {
  if (samples.empty()) throw Error("cannot fit centres without samples");
  const auto d = samples.front().feature.size();
  std::map<int, std::map<int, Accumulated>> acc;
  for (const auto& s : samples) {
    if (s.feature.size() != d) throw ShapeError("feature dimensions differ between samples");
    check_finite(s.feature);
    auto& a = acc[s.section][s.group];
    if (a.sum.size() == 0) a.sum = Eigen::VectorXd::Zero(d);
    a.members.push_back(&s.feature);
  }

  CentreModel model;
  for (auto& [section, groups] : acc) {
    // Sum members in a canonical order so the result does not depend on the
    // order samples were supplied in.
    for (auto& [label, a] : groups) {
      std::sort(a.members.begin(), a.members.end(), [](const auto* x, const auto* y) {
        return std::lexicographical_compare(x->data(), x->data() + x->size(), y->data(),
                                            y->data() + y->size());
      });
    }

    std::map<int, CentreGroup> fitted;
    Eigen::MatrixXd pooled = Eigen::MatrixXd::Zero(d, d);
    int section_total = 0;
    for (auto& [label, a] : groups) {
      for (const auto* f : a.members) a.sum += *f;
      CentreGroup g;
      g.label = label;
      g.n_clips = static_cast<int>(a.members.size());
      g.centre = a.sum / static_cast<double>(g.n_clips);
      Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(d, d);
      for (const auto* f : a.members) {
        const Eigen::VectorXd r = *f - g.centre;
        scatter.selfadjointView<Eigen::Lower>().rankUpdate(r);
      }
      scatter = scatter.selfadjointView<Eigen::Lower>();
      pooled += scatter;
      section_total += g.n_clips;
      g.covariance = scatter / static_cast<double>(g.n_clips);
      fitted.emplace(label, std::move(g));
    }
    if (mode == CovarianceMode::kPerSectionPooled) {
      pooled /= static_cast<double>(section_total);
      for (auto& [label, g] : fitted) g.covariance = pooled;
    }
    for (auto& [label, g] : fitted) {
      g.epsilon = shrinkage.epsilon_for(g.covariance);
      model.add_group(section, std::move(g));
    }
  }
  return model;
}

int domain_index(Domain d) {
  switch (d) {
    case Domain::kSource: return 0;
    case Domain::kTarget: return 1;
    case Domain::kUnknown: break;
  }
  throw Error("domain centres need a known domain");
}

AgcModel fit_agc(std::span<const AgcSample> features, const Shrinkage& shrinkage,
                 CovarianceMode mode) {
  std::vector<CentreSample> samples;
  samples.reserve(features.size());
  for (const auto& f : features) samples.push_back({f.section, f.ag_label, f.feature});
  return fit_centres(samples, mode, shrinkage);
}

DcModel fit_dc(std::span<const DcSample> features, const Shrinkage& shrinkage,
               CovarianceMode mode) {
  std::vector<CentreSample> samples;
  samples.reserve(features.size());
  for (const auto& f : features) samples.push_back({f.section, domain_index(f.domain), f.feature});
  return fit_centres(samples, mode, shrinkage);
}

double mahalanobis(const Eigen::VectorXd& f, const Eigen::VectorXd& centre,
                   const Eigen::LLT<Eigen::MatrixXd>& factor) {
  if (f.size() != centre.size() || f.size() != factor.rows()) {
    throw ShapeError("mahalanobis: dimension mismatch (" + std::to_string(f.size()) + ", " +
                     std::to_string(centre.size()) + ", " + std::to_string(factor.rows()) + ")");
  }
  const Eigen::VectorXd y = factor.matrixL().solve(f - centre);
  return std::sqrt(y.squaredNorm());
}

ScoreRecord score_centres(const Eigen::VectorXd& feature, const CentreModel& model, int section,
                          std::string clip_id) {
  check_finite(feature);
  const auto& groups = model.groups(section);
  ScoreRecord rec;
  rec.clip_id = std::move(clip_id);
  rec.section = section;
  rec.score = std::numeric_limits<double>::infinity();
  for (const auto& g : groups) {
    const double dist = mahalanobis(feature, g.centre, g.factor);
    if (dist < rec.score) {
      rec.score = dist;
      rec.argmin_group = g.label;
    }
  }
  return rec;
}

ScoreRecord score_agc(const Eigen::VectorXd& feature, const AgcModel& model, int section,
                      std::string clip_id) {
  return score_centres(feature, model, section, std::move(clip_id));
}

ScoreRecord score_dc(const Eigen::VectorXd& feature, const DcModel& model, int section,
                     std::string clip_id) {
  return score_centres(feature, model, section, std::move(clip_id));
}

void write_scores(std::ostream& out, const std::vector<ScoreRecord>& records) {
  out << kScoresHeader << '\n';
  out << std::setprecision(17);
  for (const auto& r : records) {
    out << r.clip_id << ',' << r.section << ',';
    if (std::isfinite(r.score)) {
      out << r.score;
    } else {
      out << "nan";
    }
    out << ',' << r.argmin_group << '\n';
  }
}

void write_scores(const std::filesystem::path& file, const std::vector<ScoreRecord>& records) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write scores " + file.string());
  write_scores(out, records);
  if (!out) throw IoError("failed writing scores " + file.string());
}

std::vector<ScoreRecord> read_scores(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("scores file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kScoresHeader) throw ParseError("scores header mismatch: got '" + line + "'");
  std::vector<ScoreRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() != 4) {
      throw ParseError("scores line " + std::to_string(line_no) + ": expected 4 fields");
    }
    ScoreRecord r;
    r.clip_id = f[0];
    try {
      std::size_t used = 0;
      r.section = std::stoi(f[1], &used);
      if (used != f[1].size()) throw std::invalid_argument("section");
      r.score = f[2] == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(f[2], &used);
      if (f[2] != "nan" && used != f[2].size()) throw std::invalid_argument("score");
      r.argmin_group = std::stoi(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument("argmin_group");
    } catch (const std::logic_error&) {
      throw ParseError("scores line " + std::to_string(line_no) + ": malformed number");
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ScoreRecord> read_scores(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open scores " + file.string());
  return read_scores(in);
}

}  // namespace hmic
