// Copyright 2026 The skillzip Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "skillzip/archive.hpp"

#include <fmt/format.h>

#include <cmath>
#include <cstring>
#include <unordered_set>

#include "skillzip/bytes.hpp"
#include "skillzip/error.hpp"

namespace skillzip {

namespace {
constexpr char kMagic[4] = {'F', 'T', 'Z', '1'};
}

void TensorArchive::add(std::string name, DenseMatrix matrix) {
  if (name.empty()) throw ValidationError("archive entry name is empty");
  if (name.size() > kMaxEntryName) {
    throw ValidationError(fmt::format("archive entry name longer than {} bytes", kMaxEntryName));
  }
  if (contains(name)) throw ValidationError(fmt::format("duplicate archive entry '{}'", name));
  entries_.push_back({std::move(name), std::move(matrix)});
}

bool TensorArchive::contains(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

const DenseMatrix& TensorArchive::at(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.matrix;
  }
  throw ValidationError(fmt::format("no archive entry named '{}'", name));
}

DenseMatrix& TensorArchive::at(const std::string& name) {
  return const_cast<DenseMatrix&>(std::as_const(*this).at(name));
}

std::vector<std::string> TensorArchive::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

bool TensorArchive::same_layout(const TensorArchive& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (!entries_[i].matrix.same_shape(other.entries_[i].matrix)) return false;
  }
  return true;
}

std::vector<std::uint8_t> TensorArchive::serialize() const {
  ByteWriter w;
  w.bytes({reinterpret_cast<const std::uint8_t*>(kMagic), 4});
  w.u32(static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.text(e.name);
    w.u32(static_cast<std::uint32_t>(e.matrix.rows()));
    w.u32(static_cast<std::uint32_t>(e.matrix.cols()));
    for (float v : e.matrix.values()) w.f32(v);
  }
  w.seal_with_crc();
  return std::move(w).take();
}

TensorArchive TensorArchive::deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("FTZ: bad magic");
  }
  ByteReader r(verify_crc(bytes, "FTZ"), "FTZ");
  r.bytes(4);
  const std::uint32_t count = r.u32();
  TensorArchive archive;
  std::unordered_set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16();
    std::string name = r.text(name_len);
    if (name.empty() || name.size() > kMaxEntryName) {
      throw FormatError(fmt::format("FTZ: entry {} has invalid name length {}", i, name.size()));
    }
    if (!seen.insert(name).second) throw FormatError(fmt::format("FTZ: duplicate entry '{}'", name));
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (rows == 0 || cols == 0) throw FormatError(fmt::format("FTZ: entry '{}' has zero extent", name));
    const std::uint64_t n = static_cast<std::uint64_t>(rows) * cols;
    if (n * 4 > r.remaining()) throw FormatError(fmt::format("FTZ: entry '{}' truncated", name));
    std::vector<float> data(n);
    for (auto& v : data) {
      v = r.f32();
      if (!std::isfinite(v)) throw FormatError(fmt::format("FTZ: entry '{}' holds a non-finite value", name));
    }
    archive.entries_.push_back({std::move(name), DenseMatrix(rows, cols, std::move(data))});
  }
  if (r.remaining() != 0) throw FormatError("FTZ: trailing bytes after last entry");
  return archive;
}

void archive_write(const std::filesystem::path& path, const TensorArchive& archive) {
  write_file_atomic(path, archive.serialize());
}

TensorArchive archive_read(const std::filesystem::path& path) {
  try {
    return TensorArchive::deserialize(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

}  // namespace skillzip
