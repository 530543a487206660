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

#include "hmic/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <nlohmann/json.hpp>
#include <tuple>

#include "hmic/error.hpp"

namespace hmic {
namespace {

struct ClassCounts {
  std::int64_t normal = 0;
  std::int64_t anomalous = 0;
};

ClassCounts count_classes(std::span<const ScoredClip> clips) {
  ClassCounts c;
  for (const auto& clip : clips) {
    if (!std::isfinite(clip.score)) {
      throw MetricError("clip '" + clip.clip_id + "' has a non-finite score");
    }
    (clip.anomalous ? c.anomalous : c.normal) += 1;
  }
  if (c.normal == 0 || c.anomalous == 0) {
    throw MetricError("AUC is undefined without both normal and anomalous clips");
  }
  return c;
}

std::vector<const ScoredClip*> sorted_by_score(std::span<const ScoredClip> clips) {
  std::vector<const ScoredClip*> order;
  order.reserve(clips.size());
  for (const auto& c : clips) order.push_back(&c);
  std::sort(order.begin(), order.end(),
            [](const ScoredClip* a, const ScoredClip* b) { return a->score < b->score; });
  return order;
}

nlohmann::ordered_json cell_json(const EvalCell& c) {
  nlohmann::ordered_json j;
  j["machine_type"] = c.machine_type;
  j["section"] = c.section;
  j["domain"] = std::string(to_string(c.domain));
  j["auc"] = c.auc;
  j["pauc"] = c.pauc;
  j["n_normal"] = c.n_normal;
  j["n_anomalous"] = c.n_anomalous;
  return j;
}

}  // namespace

double auc(std::span<const ScoredClip> clips) {
  const ClassCounts counts = count_classes(clips);
  const auto order = sorted_by_score(clips);
  // twice the number of (anomalous > normal) pairs plus the tied pairs
  std::int64_t twice = 0;
  std::int64_t normals_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::int64_t n_tie = 0;
    std::int64_t a_tie = 0;
    while (j < order.size() && order[j]->score == order[i]->score) {
      (order[j]->anomalous ? a_tie : n_tie) += 1;
      ++j;
    }
    twice += a_tie * (2 * normals_below + n_tie);
    normals_below += n_tie;
    i = j;
  }
  return static_cast<double>(twice) / static_cast<double>(2 * counts.normal * counts.anomalous);
}

double pauc(std::span<const ScoredClip> clips, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw MetricError("pAUC range p must lie in (0, 1]");
  const ClassCounts counts = count_classes(clips);
  auto order = sorted_by_score(clips);
  std::reverse(order.begin(), order.end());

  // Sweep thresholds from high to low in count units (false positives on x,
  // true positives on y); `twice_area` holds twice the area to keep integer
  // segments exact.
  const double cut = p * static_cast<double>(counts.normal);
  double twice_area = 0.0;
  std::int64_t fp = 0;
  std::int64_t tp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::int64_t dn = 0;
    std::int64_t dp = 0;
    while (j < order.size() && order[j]->score == order[i]->score) {
      (order[j]->anomalous ? dp : dn) += 1;
      ++j;
    }
    const double x0 = static_cast<double>(fp);
    const double x1 = static_cast<double>(fp + dn);
    if (x1 <= cut) {
      twice_area += static_cast<double>(dn * (2 * tp + dp));
    } else {
      if (x0 < cut) {
        const double w = cut - x0;
        const double y_cut = static_cast<double>(tp) + static_cast<double>(dp) * w / static_cast<double>(dn);
        twice_area += w * (static_cast<double>(tp) + y_cut);
      }
      break;
    }
    fp += dn;
    tp += dp;
    i = j;
  }
  return twice_area / (2.0 * cut * static_cast<double>(counts.anomalous));
}

double harmonic_total(std::span<const double> cells) {
  if (cells.empty()) throw MetricError("harmonic mean of an empty list");
  double inv_sum = 0.0;
  bool has_zero = false;
  for (double x : cells) {
    if (!(x >= 0.0)) throw MetricError("harmonic mean is undefined for a negative or NaN cell");
    if (x == 0.0) {
      has_zero = true;
      continue;
    }
    inv_sum += 1.0 / x;
  }
  // limit as a cell tends to zero
  if (has_zero) return 0.0;
  return static_cast<double>(cells.size()) / inv_sum;
}

EvalReport evaluate(std::span<const ScoredClip> clips, double p) {
  if (clips.empty()) throw MetricError("no scored clips to evaluate");
  EvalReport report;
  report.pauc_p = p;

  using CellKey = std::tuple<std::string, int, int>;
  std::map<CellKey, std::vector<ScoredClip>> cells;
  std::map<std::pair<std::string, int>, std::vector<ScoredClip>> sections;
  for (const auto& c : clips) {
    cells[{c.machine_type, c.section, static_cast<int>(c.domain)}].push_back(c);
    sections[{c.machine_type, c.section}].push_back(c);
  }

  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> per_machine;
  std::vector<double> all_auc;
  std::vector<double> all_pauc;
  for (const auto& [key, members] : cells) {
    EvalCell cell;
    cell.machine_type = std::get<0>(key);
    cell.section = std::get<1>(key);
    cell.domain = static_cast<Domain>(std::get<2>(key));
    try {
      cell.auc = auc(members);
      cell.pauc = pauc(members, p);
    } catch (const MetricError& e) {
      throw MetricError("cell " + cell.machine_type + "/section " + std::to_string(cell.section) +
                        "/" + std::string(to_string(cell.domain)) + ": " + e.what());
    }
    for (const auto& m : members) (m.anomalous ? cell.n_anomalous : cell.n_normal) += 1;
    per_machine[cell.machine_type].first.push_back(cell.auc);
    per_machine[cell.machine_type].second.push_back(cell.pauc);
    all_auc.push_back(cell.auc);
    all_pauc.push_back(cell.pauc);
    report.cells.push_back(std::move(cell));
  }
  for (const auto& [key, members] : sections) {
    report.sections.push_back({key.first, key.second, auc(members), pauc(members, p)});
  }
  for (const auto& [machine, values] : per_machine) {
    report.machines.push_back({machine, harmonic_total(values.first), harmonic_total(values.second)});
  }
  report.total_auc = harmonic_total(all_auc);
  report.total_pauc = harmonic_total(all_pauc);
  std::vector<double> both = all_auc;
  both.insert(both.end(), all_pauc.begin(), all_pauc.end());
  report.total_score = harmonic_total(both);
  return report;
}

std::string report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["pauc_p"] = r.pauc_p;
  j["config_digest"] = r.config_digest;
  j["machine_types"] = nlohmann::ordered_json::array();
  for (const auto& m : r.machines) {
    j["machine_types"].push_back({{"machine_type", m.machine_type}, {"auc", m.auc}, {"pauc", m.pauc}});
  }
  j["total"] = {{"auc", r.total_auc}, {"pauc", r.total_pauc}, {"score", r.total_score}};
  j["sections"] = nlohmann::ordered_json::array();
  for (const auto& s : r.sections) {
    j["sections"].push_back(
        {{"machine_type", s.machine_type}, {"section", s.section}, {"auc", s.auc}, {"pauc", s.pauc}});
  }
  j["cells"] = nlohmann::ordered_json::array();
  for (const auto& c : r.cells) j["cells"].push_back(cell_json(c));
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  EvalReport r;
  r.pauc_p = j.at("pauc_p").get<double>();
  r.config_digest = j.value("config_digest", "");
  for (const auto& m : j.at("machine_types")) {
    r.machines.push_back({m.at("machine_type").get<std::string>(), m.at("auc").get<double>(),
                          m.at("pauc").get<double>()});
  }
  r.total_auc = j.at("total").at("auc").get<double>();
  r.total_pauc = j.at("total").at("pauc").get<double>();
  r.total_score = j.at("total").at("score").get<double>();
  for (const auto& s : j.at("sections")) {
    r.sections.push_back({s.at("machine_type").get<std::string>(), s.at("section").get<int>(),
                          s.at("auc").get<double>(), s.at("pauc").get<double>()});
  }
  for (const auto& c : j.at("cells")) {
    EvalCell cell;
    cell.machine_type = c.at("machine_type").get<std::string>();
    cell.section = c.at("section").get<int>();
    cell.domain = parse_domain(c.at("domain").get<std::string>());
    cell.auc = c.at("auc").get<double>();
    cell.pauc = c.at("pauc").get<double>();
    cell.n_normal = c.at("n_normal").get<int>();
    cell.n_anomalous = c.at("n_anomalous").get<int>();
    r.cells.push_back(std::move(cell));
  }
  return r;
}

void write_report_json(const std::filesystem::path& file, const EvalReport& report) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write report " + file.string());
  out << report_to_json(report);
  if (!out) throw IoError("failed writing report " + file.string());
}

void write_report_csv(const std::filesystem::path& file, const EvalReport& report) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write report " + file.string());
  out << "machine_type,section,domain,auc,pauc,n_normal,n_anomalous\n" << std::setprecision(17);
  for (const auto& c : report.cells) {
    out << c.machine_type << ',' << c.section << ',' << to_string(c.domain) << ',' << c.auc << ','
        << c.pauc << ',' << c.n_normal << ',' << c.n_anomalous << '\n';
  }
  if (!out) throw IoError("failed writing report " + file.string());
}

}  // namespace hmic
