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

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "skillzip/tensor.hpp"

namespace skillzip {

struct NamedMatrix {
  std::string name;
  DenseMatrix matrix;
};

// Ordered, name-unique collection of matrices. Serialized as "FTZ v1":
//
//   "FTZ1" | u32 count | { u16 name_len | name | u32 rows | u32 cols | f32... }*
//          | u32 crc32(all preceding bytes)
//
// Little-endian, no padding.
class TensorArchive {
 public:
  TensorArchive() = default;

  // Throws ValidationError on an empty, overlong (>256 bytes) or duplicate name.
  void add(std::string name, DenseMatrix matrix);

  bool contains(const std::string& name) const;
  // Throws ValidationError if absent.
  const DenseMatrix& at(const std::string& name) const;
  DenseMatrix& at(const std::string& name);

  const std::vector<NamedMatrix>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::vector<std::string> names() const;

  // Same names in the same order with the same shapes.
  bool same_layout(const TensorArchive& other) const;

  std::vector<std::uint8_t> serialize() const;
  static TensorArchive deserialize(std::span<const std::uint8_t> bytes);

 private:
  std::vector<NamedMatrix> entries_;
};

constexpr std::size_t kMaxEntryName = 256;

void archive_write(const std::filesystem::path& path, const TensorArchive& archive);
// Rejects bad magic, truncation, CRC mismatch, duplicate names and
// non-finite values with FormatError.
TensorArchive archive_read(const std::filesystem::path& path);

}  // namespace skillzip
