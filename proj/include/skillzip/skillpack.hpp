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
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skillzip/kernel.hpp"

namespace skillzip {

struct SkillLayerRecord {
  std::string name;
  CompiledSkillLayer layer;
  std::uint32_t candidate_index = 0;  // chosen rotation, 0 = identity
};

// One task's compressed delta.
struct Skillpack {
  std::string task_id;
  std::vector<SkillLayerRecord> layers;

  const SkillLayerRecord* find(const std::string& layer) const;
};

// Current "SKZ v1" container version.
constexpr std::uint16_t kSkillpackVersion = 1;

// TLV tags inside a layer block. A block ends with kEnd (length 0).
enum class SkzTag : std::uint16_t {
  kEnd = 0,
  kName = 1,
  kShape = 2,           // u32 c_in, u32 rank, u32 c_out
  kBits = 3,            // u8 bits_x, bits_a, bits_b
  kGranularity = 4,     // u8 gran_x, gran_a, gran_b
  kSmoothInverse = 5,   // f32[c_in]
  kScales = 6,          // f32 x_scale, f32 s_A, u32 n, f32[n] s_B
  kCodesA = 7,          // int8 raw, or int4 packed when bits_a == 4
  kCodesB = 8,
  kMidScale = 9,        // f32
  kCandidateIndex = 10, // u32
};

// "SKZ1" | u16 version | u16 task_len | task_id | u32 layer_count
//        | per layer: TLV records (u16 tag, u32 length, payload) ending in kEnd
//        | u32 crc32
std::vector<std::uint8_t> serialize_skillpack(const Skillpack& pack);
Skillpack deserialize_skillpack(std::span<const std::uint8_t> bytes);

// Provenance recorded in the manifest so a run can be repeated.
struct Provenance {
  bool merge = false;
  std::string merge_method = "mean";
  double trim_fraction = 0.0;
  double merge_coefficient = 1.0;
  bool smooth = false;
  double alpha = 0.7;
  double epsilon = 1e-5;
  bool rotate = false;
  std::size_t n_candidates = 10;
  bool gptq = false;
  std::uint64_t seed = 0;
  std::string rank_policy;
  std::string quant;
};

// dense bytes (sum of 4 * C_i * C_o) / serialized bytes.
double compression_ratio(std::size_t pack_bytes, const std::vector<std::pair<std::size_t, std::size_t>>& dense_shapes);
double compression_ratio(const Skillpack& pack);

nlohmann::json make_manifest(const Skillpack& pack, std::size_t pack_bytes, const Provenance& provenance);
// Throws FormatError when the manifest's task, layer list, ranks, bits or
// granularities disagree with the binary pack.
void check_manifest(const Skillpack& pack, const nlohmann::json& manifest);

std::filesystem::path manifest_path(const std::filesystem::path& pack_path);

// Writes `path` and `<path>.manifest.json`, both atomically.
void write_skillpack(const Skillpack& pack, const std::filesystem::path& path, const Provenance& provenance = {});
// Reads and validates a pack; if the manifest sidecar exists it is
// cross-checked too.
Skillpack read_skillpack(const std::filesystem::path& path);

}  // namespace skillzip
