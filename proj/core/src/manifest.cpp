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

#include "hmic/manifest.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>

#include "hmic/error.hpp"

namespace hmic {
namespace {

void check_field(std::string_view value, std::string_view what) {
  if (value.find_first_of(",\n\r") != std::string_view::npos) {
    throw Error("manifest " + std::string(what) + " '" + std::string(value) +
                "' contains a comma or newline");
  }
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

std::string format_attributes(const AttributeMap& attributes) {
  std::string out;
  for (const auto& [name, value] : attributes) {
    if (name.find_first_of("=;,") != std::string::npos ||
        value.find_first_of("=;,") != std::string::npos) {
      throw Error("attribute '" + name + "=" + value + "' contains a reserved character");
    }
    if (!out.empty()) out += ';';
    out += name + "=" + value;
  }
  return out;
}

AttributeMap parse_attributes(std::string_view field) {
  AttributeMap out;
  if (field.empty()) return out;
  std::size_t start = 0;
  while (start <= field.size()) {
    const auto end = std::min(field.find(';', start), field.size());
    const auto pair = field.substr(start, end - start);
    const auto eq = pair.find('=');
    if (eq == std::string_view::npos || eq == 0) {
      throw ParseError("bad attribute pair '" + std::string(pair) + "'");
    }
    if (!out.emplace(std::string(pair.substr(0, eq)), std::string(pair.substr(eq + 1))).second) {
      throw ParseError("duplicate attribute in '" + std::string(field) + "'");
    }
    start = end + 1;
  }
  return out;
}

void write_manifest(std::ostream& out, const std::vector<ManifestEntry>& entries) {
  out << kManifestHeader << '\n';
  for (const auto& e : entries) {
    const auto& m = e.meta;
    check_field(m.clip_id, "clip_id");
    check_field(e.path, "path");
    check_field(m.machine_type, "machine_type");
    out << m.clip_id << ',' << e.path << ',' << m.machine_type << ',' << m.section_id << ','
        << to_string(m.domain) << ',' << to_string(m.split) << ',' << to_string(m.condition)
        << ',' << format_attributes(m.attributes) << '\n';
  }
}

void write_manifest(const std::filesystem::path& file, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + file.string());
  write_manifest(out, entries);
  if (!out) throw IoError("failed writing manifest " + file.string());
}

std::vector<ManifestEntry> read_manifest(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("manifest is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (!line.empty() && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
  if (line != kManifestHeader) {
    throw ParseError("manifest header mismatch: got '" + line + "'");
  }

  std::vector<ManifestEntry> entries;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 8) {
      throw ParseError("manifest line " + std::to_string(line_no) + ": expected 8 fields, got " +
                       std::to_string(f.size()));
    }
    ManifestEntry e;
    e.meta.clip_id = std::string(f[0]);
    e.path = std::string(f[1]);
    e.meta.machine_type = std::string(f[2]);
    int section = 0;
    if (std::from_chars(f[3].data(), f[3].data() + f[3].size(), section).ec != std::errc{}) {
      throw ParseError("manifest line " + std::to_string(line_no) + ": bad section '" +
                       std::string(f[3]) + "'");
    }
    e.meta.section_id = section;
    try {
      e.meta.domain = parse_domain(f[4]);
      e.meta.split = parse_split(f[5]);
      e.meta.condition = parse_condition(f[6]);
      e.meta.attributes = parse_attributes(f[7]);
    } catch (const ParseError& err) {
      throw ParseError("manifest line " + std::to_string(line_no) + ": " + err.what());
    }
    if (e.meta.split == Split::kTrain && e.meta.condition != Condition::kNormal) {
      throw ParseError("manifest line " + std::to_string(line_no) +
                       ": training clips must be normal");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + file.string());
  return read_manifest(in);
}

std::filesystem::path resolve_clip_path(const std::filesystem::path& manifest_file,
                                        const ManifestEntry& entry) {
  const std::filesystem::path p{entry.path};
  if (p.is_absolute()) return p;
  return manifest_file.parent_path() / p;
}

}  // namespace hmic
