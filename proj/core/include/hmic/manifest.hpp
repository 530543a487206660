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

// Manifest CSV: one row per clip.
//   clip_id,path,machine_type,section,domain,split,condition,attributes
// attributes is "name=value;name=value" with names sorted.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "hmic/metadata_tree.hpp"

namespace hmic {

struct ManifestEntry {
  ClipMeta meta;
  std::string path;  // relative paths resolve against the manifest directory

  bool operator==(const ManifestEntry&) const = default;
};

inline constexpr std::string_view kManifestHeader =
    "clip_id,path,machine_type,section,domain,split,condition,attributes";

std::string format_attributes(const AttributeMap& attributes);
AttributeMap parse_attributes(std::string_view field);

void write_manifest(std::ostream& out, const std::vector<ManifestEntry>& entries);
void write_manifest(const std::filesystem::path& file, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(std::istream& in);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& file);

// Path of an entry's audio, resolved against the manifest's directory.
std::filesystem::path resolve_clip_path(const std::filesystem::path& manifest_file,
                                        const ManifestEntry& entry);

}  // namespace hmic
