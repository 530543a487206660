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

#include "hmic/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "hmic/error.hpp"
#include "hmic/random.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint files assume a little-endian host");

namespace hmic {
namespace {

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

void put_string32(std::ofstream& out, std::string_view s) {
  put(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::ifstream& in, const std::filesystem::path& file) : in_(in), file_(file) {}

  template <typename T>
  T get() {
    T value{};
    in_.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in_) fail("truncated");
    return value;
  }

  std::string bytes(std::uint64_t n) {
    if (n > (1ULL << 32)) fail("implausible field length");
    std::string s(static_cast<std::size_t>(n), '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (!in_) fail("truncated");
    return s;
  }

  [[noreturn]] void fail(const std::string& why) {
    throw IoError("checkpoint " + file_.string() + ": " + why);
  }

 private:
  std::ifstream& in_;
  const std::filesystem::path& file_;
};

}  // namespace

const NamedTensor& Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw Error("checkpoint has no tensor named '" + std::string(name) + "'");
}

bool Checkpoint::contains(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

void write_checkpoint(const std::filesystem::path& file, const Checkpoint& ckpt) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + file.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put(out, kCheckpointVersion);
  put_string32(out, ckpt.config_digest);
  put(out, static_cast<std::uint64_t>(ckpt.config_json.size()));
  out.write(ckpt.config_json.data(), static_cast<std::streamsize>(ckpt.config_json.size()));
  put(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    std::uint64_t n = 1;
    for (auto d : t.shape) n *= d;
    if (n != t.data.size()) {
      throw ShapeError("tensor '" + t.name + "' shape does not match its data size");
    }
    put_string32(out, t.name);
    put(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put(out, d);
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing checkpoint " + file.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + file.string());
  Reader r(in, file);
  const std::string magic = r.bytes(sizeof(kCheckpointMagic));
  if (std::memcmp(magic.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    r.fail("bad magic");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.config_digest = r.bytes(r.get<std::uint32_t>());
  ckpt.config_json = r.bytes(r.get<std::uint64_t>());
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.bytes(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) r.fail("tensor '" + t.name + "' has rank " + std::to_string(rank));
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.shape.push_back(r.get<std::uint64_t>());
      n *= t.shape.back();
    }
    if (n > (1ULL << 31)) r.fail("tensor '" + t.name + "' is implausibly large");
    t.data.resize(static_cast<std::size_t>(n));
    in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) r.fail("truncated tensor '" + t.name + "'");
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

std::string hex_digest(std::string_view text) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::uint64_t h = fnv1a64(text);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kHex[h & 0xF];
    h >>= 4;
  }
  return out;
}

std::string file_digest(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return hex_digest(bytes);
}

}  // namespace hmic
