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

// Versioned binary checkpoint container, little-endian:
//
//   char[8]  magic "HMICCKPT"
//   u32      version
//   u32 len, char[len]   config digest (hex)
//   u64 len, char[len]   config JSON text
//   u32      tensor count
//   per tensor:
//     u32 len, char[len] name
//     u32 rank, u64[rank] dims
//     f64[prod(dims)]    row-major data

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace hmic {

inline constexpr char kCheckpointMagic[8] = {'H', 'M', 'I', 'C', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;

  bool operator==(const NamedTensor&) const = default;
};

struct Checkpoint {
  std::string config_digest;
  std::string config_json;
  std::vector<NamedTensor> tensors;

  const NamedTensor& find(std::string_view name) const;
  bool contains(std::string_view name) const;

  bool operator==(const Checkpoint&) const = default;
};

void write_checkpoint(const std::filesystem::path& file, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& file);

// 16-hex-digit FNV-1a digest of a file's bytes.
std::string file_digest(const std::filesystem::path& file);
std::string hex_digest(std::string_view text);

}  // namespace hmic
