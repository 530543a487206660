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

// Clip metadata and the machine type -> section -> attribute group tree that
// supplies the two self-supervision labels (section label and group label).

#include <compare>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace hmic {

enum class Domain { kSource, kTarget, kUnknown };
enum class Split { kTrain, kTest };
enum class Condition { kNormal, kAnomalous, kUnknown };

std::string_view to_string(Domain d);
std::string_view to_string(Split s);
std::string_view to_string(Condition c);
Domain parse_domain(std::string_view token);
Split parse_split(std::string_view token);
// Accepts "normal", "anomaly" and "anomalous".
Condition parse_condition(std::string_view token);

// std::map keeps attribute names sorted, which makes group identity
// independent of the order tokens appeared in.
using AttributeMap = std::map<std::string, std::string>;

struct ClipMeta {
  std::string clip_id;
  std::string machine_type;
  int section_id = 0;
  Domain domain = Domain::kUnknown;
  Split split = Split::kTest;
  Condition condition = Condition::kUnknown;
  AttributeMap attributes;

  bool operator==(const ClipMeta&) const = default;
};

struct AttributeGroupKey {
  int section_id = 0;
  std::vector<std::pair<std::string, std::string>> attribute_pairs;

  static AttributeGroupKey of(const ClipMeta& clip);

  // Human readable form, e.g. "section 0 {mic=1, spd=A}".
  std::string describe() const;

  auto operator<=>(const AttributeGroupKey&) const = default;
  bool operator==(const AttributeGroupKey&) const = default;
};

struct LabelPair {
  int id_label = 0;
  int ag_label = 0;

  bool operator==(const LabelPair&) const = default;
};

// Parses the DCASE 2022 Task 2 naming convention
//   section_<SS>_<domain>_<split>_<condition>_<idx>[_<name>_<value>]*.wav
// Leading directories are ignored; clip_id is the file stem. The short
// evaluation-set form section_<SS>_<idx>.wav is also accepted and yields a
// test clip with unknown domain and condition.
ClipMeta parse_dcase_filename(std::string_view filename,
                              std::string_view machine_type = {});

// Section labels and attribute-group labels for one machine type.
//
// Labels are contiguous from zero. Section labels follow ascending section
// id; group labels follow ascending AttributeGroupKey, so all groups of a
// section are numbered consecutively.
class LabelSpace {
 public:
  LabelSpace() = default;

  const std::string& machine_type() const { return machine_type_; }
  int num_sections() const { return static_cast<int>(sections_.size()); }
  int num_groups() const { return static_cast<int>(groups_.size()); }

  // Section ids in label order.
  const std::vector<int>& sections() const { return sections_; }
  // Group keys in label order.
  const std::vector<AttributeGroupKey>& groups() const { return groups_; }

  bool has_section(int section_id) const;
  int id_label(int section_id) const;
  int ag_label(const AttributeGroupKey& key) const;
  // Group labels under a section, ascending.
  const std::vector<int>& groups_in_section(int section_id) const;
  int section_of_group(int ag_label) const;

  // Rebuilds a space from its serialized parts (checkpoint loading).
  static LabelSpace from_parts(std::string machine_type,
                               std::vector<AttributeGroupKey> groups);

  bool operator==(const LabelSpace& other) const {
    return machine_type_ == other.machine_type_ && groups_ == other.groups_;
  }

 private:
  std::string machine_type_;
  std::vector<int> sections_;
  std::vector<AttributeGroupKey> groups_;
  std::map<int, int> id_labels_;
  std::map<AttributeGroupKey, int> ag_labels_;
  std::map<int, std::vector<int>> ag_by_section_;
};

// Throws Error on an empty list, mixed machine types, or non-training clips.
LabelSpace build_label_space(std::span<const ClipMeta> clips,
                             std::string_view machine_type);

// Throws UnknownLabelError when the section or the attribute combination was
// not seen while building the space.
LabelPair assign_labels(const ClipMeta& clip, const LabelSpace& space);

}  // namespace hmic
