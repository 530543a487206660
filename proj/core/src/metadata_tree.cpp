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

#include "hmic/metadata_tree.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <set>

#include "hmic/error.hpp"

namespace hmic {
namespace {

std::vector<std::string_view> split_tokens(std::string_view text, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    out.push_back(text.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool all_digits(std::string_view s) {
  return !s.empty() &&
         std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

int parse_section_number(std::string_view token, std::string_view filename) {
  int value = 0;
  if (!all_digits(token) ||
      std::from_chars(token.data(), token.data() + token.size(), value).ec != std::errc{}) {
    throw ParseError("bad section number '" + std::string(token) + "' in '" +
                     std::string(filename) + "'");
  }
  return value;
}

}  // namespace

std::string_view to_string(Domain d) {
  switch (d) {
    case Domain::kSource: return "source";
    case Domain::kTarget: return "target";
    case Domain::kUnknown: return "unknown";
  }
  return "unknown";
}

std::string_view to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

std::string_view to_string(Condition c) {
  switch (c) {
    case Condition::kNormal: return "normal";
    case Condition::kAnomalous: return "anomalous";
    case Condition::kUnknown: return "unknown";
  }
  return "unknown";
}

Domain parse_domain(std::string_view token) {
  if (token == "source") return Domain::kSource;
  if (token == "target") return Domain::kTarget;
  if (token == "unknown") return Domain::kUnknown;
  throw ParseError("unknown domain token '" + std::string(token) + "'");
}

Split parse_split(std::string_view token) {
  if (token == "train") return Split::kTrain;
  if (token == "test") return Split::kTest;
  throw ParseError("unknown split token '" + std::string(token) + "'");
}

Condition parse_condition(std::string_view token) {
  if (token == "normal") return Condition::kNormal;
  if (token == "anomaly" || token == "anomalous") return Condition::kAnomalous;
  if (token == "unknown") return Condition::kUnknown;
  throw ParseError("unknown condition token '" + std::string(token) + "'");
}

AttributeGroupKey AttributeGroupKey::of(const ClipMeta& clip) {
  AttributeGroupKey key;
  key.section_id = clip.section_id;
  key.attribute_pairs.assign(clip.attributes.begin(), clip.attributes.end());
  return key;
}

std::string AttributeGroupKey::describe() const {
  std::string out = "section " + std::to_string(section_id) + " {";
  for (std::size_t i = 0; i < attribute_pairs.size(); ++i) {
    if (i) out += ", ";
    out += attribute_pairs[i].first + "=" + attribute_pairs[i].second;
  }
  return out + "}";
}

ClipMeta parse_dcase_filename(std::string_view filename, std::string_view machine_type) {
  const std::filesystem::path path{std::string(filename)};
  if (path.extension() != ".wav") {
    throw ParseError("expected a .wav file name, got '" + std::string(filename) + "'");
  }
  const std::string stem = path.stem().string();
  const auto tokens = split_tokens(stem, '_');

  if (tokens.empty() || tokens[0] != "section") {
    throw ParseError("file name must start with 'section_', got token '" +
                     std::string(tokens.empty() ? "" : tokens[0]) + "' in '" + stem + "'");
  }
  if (tokens.size() < 3) {
    throw ParseError("truncated file name '" + stem + "'");
  }

  ClipMeta meta;
  meta.clip_id = stem;
  meta.machine_type = std::string(machine_type);
  meta.section_id = parse_section_number(tokens[1], stem);

  // Evaluation-set form: section_<SS>_<idx>
  if (tokens.size() == 3 && all_digits(tokens[2])) {
    meta.split = Split::kTest;
    return meta;
  }
  if (tokens.size() < 6) {
    throw ParseError("truncated file name '" + stem + "': expected domain, split, condition and index");
  }
  meta.domain = parse_domain(tokens[2]);
  meta.split = parse_split(tokens[3]);
  meta.condition = parse_condition(tokens[4]);
  if (!all_digits(tokens[5])) {
    throw ParseError("bad clip index '" + std::string(tokens[5]) + "' in '" + stem + "'");
  }
  if (meta.split == Split::kTrain && meta.condition != Condition::kNormal) {
    throw ParseError("training clip must be normal: '" + stem + "'");
  }

  const std::size_t n_attr_tokens = tokens.size() - 6;
  if (n_attr_tokens % 2 != 0) {
    throw ParseError("attribute token '" + std::string(tokens.back()) +
                     "' has no value in '" + stem + "'");
  }
  for (std::size_t i = 6; i < tokens.size(); i += 2) {
    if (tokens[i].empty()) {
      throw ParseError("empty attribute name in '" + stem + "'");
    }
    const auto [it, inserted] =
        meta.attributes.emplace(std::string(tokens[i]), std::string(tokens[i + 1]));
    if (!inserted) {
      throw ParseError("duplicate attribute '" + it->first + "' in '" + stem + "'");
    }
  }
  return meta;
}

bool LabelSpace::has_section(int section_id) const { return id_labels_.contains(section_id); }

int LabelSpace::id_label(int section_id) const {
  const auto it = id_labels_.find(section_id);
  if (it == id_labels_.end()) {
    throw UnknownLabelError("section " + std::to_string(section_id) +
                            " is not in the label space of '" + machine_type_ + "'");
  }
  return it->second;
}

int LabelSpace::ag_label(const AttributeGroupKey& key) const {
  const auto it = ag_labels_.find(key);
  if (it == ag_labels_.end()) {
    throw UnknownLabelError("attribute group " + key.describe() +
                            " is not in the label space of '" + machine_type_ + "'");
  }
  return it->second;
}

const std::vector<int>& LabelSpace::groups_in_section(int section_id) const {
  const auto it = ag_by_section_.find(section_id);
  if (it == ag_by_section_.end()) {
    throw UnknownLabelError("section " + std::to_string(section_id) +
                            " is not in the label space of '" + machine_type_ + "'");
  }
  return it->second;
}

int LabelSpace::section_of_group(int ag_label) const {
  if (ag_label < 0 || ag_label >= num_groups()) {
    throw UnknownLabelError("group label " + std::to_string(ag_label) + " out of range");
  }
  return groups_[static_cast<std::size_t>(ag_label)].section_id;
}

LabelSpace LabelSpace::from_parts(std::string machine_type,
                                  std::vector<AttributeGroupKey> groups) {
  if (groups.empty()) throw Error("label space needs at least one attribute group");
  std::sort(groups.begin(), groups.end());
  if (std::adjacent_find(groups.begin(), groups.end()) != groups.end()) {
    throw Error("duplicate attribute group in label space");
  }
  LabelSpace space;
  space.machine_type_ = std::move(machine_type);
  space.groups_ = std::move(groups);
  for (std::size_t i = 0; i < space.groups_.size(); ++i) {
    const auto& key = space.groups_[i];
    const int label = static_cast<int>(i);
    space.ag_labels_.emplace(key, label);
    space.ag_by_section_[key.section_id].push_back(label);
  }
  for (const auto& [section, _] : space.ag_by_section_) {
    space.id_labels_.emplace(section, static_cast<int>(space.sections_.size()));
    space.sections_.push_back(section);
  }
  return space;
}

LabelSpace build_label_space(std::span<const ClipMeta> clips, std::string_view machine_type) {
  if (clips.empty()) throw Error("cannot build a label space from an empty clip list");
  std::set<AttributeGroupKey> keys;
  for (const auto& clip : clips) {
    if (clip.machine_type != machine_type) {
      throw Error("clip '" + clip.clip_id + "' has machine type '" + clip.machine_type +
                  "', expected '" + std::string(machine_type) + "'");
    }
    if (clip.split != Split::kTrain) {
      throw Error("clip '" + clip.clip_id + "' is not a training clip");
    }
    keys.insert(AttributeGroupKey::of(clip));
  }
  return LabelSpace::from_parts(std::string(machine_type), {keys.begin(), keys.end()});
}

LabelPair assign_labels(const ClipMeta& clip, const LabelSpace& space) {
  return {space.id_label(clip.section_id), space.ag_label(AttributeGroupKey::of(clip))};
}

}  // namespace hmic
