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

#include "skillzip/skillpack.hpp"

#include <fmt/format.h>

#include <cstring>
#include <set>

#include "skillzip/bytes.hpp"
#include "skillzip/error.hpp"

namespace skillzip {

namespace {
constexpr char kMagic[4] = {'S', 'K', 'Z', '1'};

void put_record(ByteWriter& w, SkzTag tag, const ByteWriter& payload) {
  w.u16(static_cast<std::uint16_t>(tag));
  w.u32(static_cast<std::uint32_t>(payload.size()));
  w.bytes(payload.buffer());
}

std::vector<std::uint8_t> encode_codes(const QuantGrid& q) {
  if (q.bits == 4) return pack_int4(q.codes, q.rows, q.cols);
  std::vector<std::uint8_t> out(q.codes.size());
  std::memcpy(out.data(), q.codes.data(), out.size());
  return out;
}

std::vector<std::int8_t> decode_codes(std::span<const std::uint8_t> bytes, int bits, std::size_t rows, std::size_t cols) {
  if (bits == 4) return unpack_int4(bytes, rows, cols);
  if (bytes.size() != rows * cols) {
    throw FormatError(fmt::format("SKZ: int8 payload has {} bytes, expected {}", bytes.size(), rows * cols));
  }
  std::vector<std::int8_t> out(bytes.size());
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

Granularity decode_granularity(std::uint8_t v) {
  if (v > 2) throw FormatError(fmt::format("SKZ: unknown granularity tag {}", v));
  return static_cast<Granularity>(v);
}
}  // namespace

const SkillLayerRecord* Skillpack::find(const std::string& layer) const {
  for (const auto& l : layers) {
    if (l.name == layer) return &l;
  }
  return nullptr;
}

std::vector<std::uint8_t> serialize_skillpack(const Skillpack& pack) {
  if (pack.task_id.empty() || pack.task_id.size() > 0xFFFF) throw ValidationError("skillpack task id length");
  if (pack.layers.empty()) throw ValidationError(fmt::format("skillpack '{}' has no layers", pack.task_id));
  ByteWriter w;
  w.bytes({reinterpret_cast<const std::uint8_t*>(kMagic), 4});
  w.u16(kSkillpackVersion);
  w.u16(static_cast<std::uint16_t>(pack.task_id.size()));
  w.text(pack.task_id);
  w.u32(static_cast<std::uint32_t>(pack.layers.size()));
  for (const auto& rec : pack.layers) {
    const auto& l = rec.layer;
    l.validate();
    ByteWriter p;
    p.text(rec.name);
    put_record(w, SkzTag::kName, p);

    p = {};
    p.u32(static_cast<std::uint32_t>(l.c_in()));
    p.u32(static_cast<std::uint32_t>(l.rank()));
    p.u32(static_cast<std::uint32_t>(l.c_out()));
    put_record(w, SkzTag::kShape, p);

    p = {};
    p.u8(static_cast<std::uint8_t>(l.bits_x));
    p.u8(static_cast<std::uint8_t>(l.a_hat.bits));
    p.u8(static_cast<std::uint8_t>(l.b_hat.bits));
    put_record(w, SkzTag::kBits, p);

    p = {};
    p.u8(static_cast<std::uint8_t>(l.gran_x));
    p.u8(static_cast<std::uint8_t>(l.a_hat.scale.granularity));
    p.u8(static_cast<std::uint8_t>(l.b_hat.scale.granularity));
    put_record(w, SkzTag::kGranularity, p);

    p = {};
    for (float v : l.smooth_inv) p.f32(v);
    put_record(w, SkzTag::kSmoothInverse, p);

    p = {};
    p.f32(l.x_scale);
    p.f32(l.s_a());
    p.u32(static_cast<std::uint32_t>(l.b_hat.scale.scales.size()));
    for (float v : l.b_hat.scale.scales) p.f32(v);
    put_record(w, SkzTag::kScales, p);

    p = {};
    p.bytes(encode_codes(l.a_hat));
    put_record(w, SkzTag::kCodesA, p);

    p = {};
    p.bytes(encode_codes(l.b_hat));
    put_record(w, SkzTag::kCodesB, p);

    p = {};
    p.f32(l.mid_scale);
    put_record(w, SkzTag::kMidScale, p);

    p = {};
    p.u32(rec.candidate_index);
    put_record(w, SkzTag::kCandidateIndex, p);

    put_record(w, SkzTag::kEnd, {});
  }
  w.seal_with_crc();
  return std::move(w).take();
}

Skillpack deserialize_skillpack(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("SKZ: bad magic");
  ByteReader r(verify_crc(bytes, "SKZ"), "SKZ");
  r.bytes(4);
  const std::uint16_t version = r.u16();
  if (version != kSkillpackVersion) throw FormatError(fmt::format("SKZ: unsupported version {}", version));
  Skillpack pack;
  pack.task_id = r.text(r.u16());
  if (pack.task_id.empty()) throw FormatError("SKZ: empty task id");
  const std::uint32_t n_layers = r.u32();
  if (n_layers == 0) throw FormatError("SKZ: no layers");
  std::set<std::string> names;
  for (std::uint32_t li = 0; li < n_layers; ++li) {
    std::set<std::uint16_t> seen;
    SkillLayerRecord rec;
    std::uint32_t c_in = 0, rank = 0, c_out = 0;
    int bits_a = 0, bits_b = 0;
    Granularity gran_a = Granularity::kPerTensor, gran_b = Granularity::kPerTensor;
    std::vector<float> sb;
    float sa = 0.0f;
    std::span<const std::uint8_t> codes_a, codes_b;
    for (;;) {
      const std::uint16_t tag = r.u16();
      const std::uint32_t len = r.u32();
      ByteReader p(r.bytes(len), fmt::format("SKZ layer {} tag {}", li, tag));
      if (tag != 0 && !seen.insert(tag).second) throw FormatError(fmt::format("SKZ: layer {} repeats tag {}", li, tag));
      switch (static_cast<SkzTag>(tag)) {
        case SkzTag::kEnd:
          if (len != 0) throw FormatError("SKZ: end record carries a payload");
          break;
        case SkzTag::kName: rec.name = p.text(len); break;
        case SkzTag::kShape:
          c_in = p.u32();
          rank = p.u32();
          c_out = p.u32();
          break;
        case SkzTag::kBits:
          rec.layer.bits_x = p.u8();
          bits_a = p.u8();
          bits_b = p.u8();
          break;
        case SkzTag::kGranularity:
          rec.layer.gran_x = decode_granularity(p.u8());
          gran_a = decode_granularity(p.u8());
          gran_b = decode_granularity(p.u8());
          break;
        case SkzTag::kSmoothInverse:
          if (len % 4 != 0) throw FormatError("SKZ: smoothing payload not a multiple of 4");
          rec.layer.smooth_inv.resize(len / 4);
          for (auto& v : rec.layer.smooth_inv) v = p.f32();
          break;
        case SkzTag::kScales: {
          rec.layer.x_scale = p.f32();
          sa = p.f32();
          const std::uint32_t n = p.u32();
          if (static_cast<std::uint64_t>(n) * 4 != p.remaining()) throw FormatError("SKZ: scale count disagrees with payload");
          sb.resize(n);
          for (auto& v : sb) v = p.f32();
          break;
        }
        case SkzTag::kCodesA: codes_a = p.bytes(len); break;
        case SkzTag::kCodesB: codes_b = p.bytes(len); break;
        case SkzTag::kMidScale: rec.layer.mid_scale = p.f32(); break;
        case SkzTag::kCandidateIndex: rec.candidate_index = p.u32(); break;
        default: throw FormatError(fmt::format("SKZ: unknown tag {} in layer {}", tag, li));
      }
      if (tag != 0 && p.remaining() != 0) throw FormatError(fmt::format("SKZ: tag {} has trailing bytes", tag));
      if (tag == 0) break;
    }
    for (auto t : {SkzTag::kName, SkzTag::kShape, SkzTag::kBits, SkzTag::kGranularity, SkzTag::kSmoothInverse,
                   SkzTag::kScales, SkzTag::kCodesA, SkzTag::kCodesB, SkzTag::kMidScale, SkzTag::kCandidateIndex}) {
      if (!seen.count(static_cast<std::uint16_t>(t))) {
        throw FormatError(fmt::format("SKZ: layer {} lacks tag {}", li, static_cast<int>(t)));
      }
    }
    if (rec.name.empty() || !names.insert(rec.name).second) {
      throw FormatError(fmt::format("SKZ: layer {} has an empty or duplicate name", li));
    }
    if (c_in == 0 || rank == 0 || c_out == 0) throw FormatError(fmt::format("SKZ: layer '{}' has a zero extent", rec.name));
    try {
      validate_bits(bits_a);
      validate_bits(bits_b);
      auto& l = rec.layer;
      l.a_hat = {c_in, rank, bits_a, decode_codes(codes_a, bits_a, c_in, rank), {gran_a, {sa}}};
      l.b_hat = {rank, c_out, bits_b, decode_codes(codes_b, bits_b, rank, c_out), {gran_b, std::move(sb)}};
      l.validate();
    } catch (const FormatError&) {
      throw;
    } catch (const Error& e) {
      throw FormatError(fmt::format("SKZ: layer '{}' is inconsistent: {}", rec.name, e.what()));
    }
    pack.layers.push_back(std::move(rec));
  }
  if (r.remaining() != 0) throw FormatError("SKZ: trailing bytes after last layer");
  return pack;
}

double compression_ratio(std::size_t pack_bytes, const std::vector<std::pair<std::size_t, std::size_t>>& dense_shapes) {
  if (pack_bytes == 0) throw ValidationError("compression ratio of an empty pack");
  double dense = 0.0;
  for (const auto& [ci, co] : dense_shapes) dense += 4.0 * static_cast<double>(ci) * static_cast<double>(co);
  return dense / static_cast<double>(pack_bytes);
}

double compression_ratio(const Skillpack& pack) {
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  for (const auto& l : pack.layers) shapes.emplace_back(l.layer.c_in(), l.layer.c_out());
  return compression_ratio(serialize_skillpack(pack).size(), shapes);
}

nlohmann::json make_manifest(const Skillpack& pack, std::size_t pack_bytes, const Provenance& prov) {
  nlohmann::json layers = nlohmann::json::array();
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  for (const auto& rec : pack.layers) {
    const auto& l = rec.layer;
    shapes.emplace_back(l.c_in(), l.c_out());
    layers.push_back({{"name", rec.name},
                      {"c_in", l.c_in()},
                      {"c_out", l.c_out()},
                      {"rank", l.rank()},
                      {"bits_x", l.bits_x},
                      {"bits_a", l.a_hat.bits},
                      {"bits_b", l.b_hat.bits},
                      {"gran_x", to_string(l.gran_x)},
                      {"gran_b", to_string(l.b_hat.scale.granularity)},
                      {"mid_scale", l.mid_scale},
                      {"candidate_index", rec.candidate_index}});
  }
  const double dense_bytes = compression_ratio(pack_bytes, shapes) * static_cast<double>(pack_bytes);
  return {{"format", "SKZ1"},
          {"version", kSkillpackVersion},
          {"task_id", pack.task_id},
          {"layers", layers},
          {"pack_bytes", pack_bytes},
          {"dense_bytes", dense_bytes},
          {"compression_ratio", compression_ratio(pack_bytes, shapes)},
          {"provenance",
           {{"merge", prov.merge},
            {"merge_method", prov.merge_method},
            {"trim_fraction", prov.trim_fraction},
            {"merge_coefficient", prov.merge_coefficient},
            {"smooth", prov.smooth},
            {"alpha", prov.alpha},
            {"epsilon", prov.epsilon},
            {"rotate", prov.rotate},
            {"n_candidates", prov.n_candidates},
            {"gptq", prov.gptq},
            {"seed", prov.seed},
            {"rank_policy", prov.rank_policy},
            {"quant", prov.quant}}}};
}

void check_manifest(const Skillpack& pack, const nlohmann::json& manifest) {
  try {
    if (manifest.at("task_id").get<std::string>() != pack.task_id) throw FormatError("manifest task id differs from pack");
    const auto& layers = manifest.at("layers");
    if (layers.size() != pack.layers.size()) throw FormatError("manifest layer count differs from pack");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& m = layers[i];
      const auto& rec = pack.layers[i];
      const auto& l = rec.layer;
      const bool ok = m.at("name").get<std::string>() == rec.name && m.at("rank").get<std::size_t>() == l.rank() &&
                      m.at("c_in").get<std::size_t>() == l.c_in() && m.at("c_out").get<std::size_t>() == l.c_out() &&
                      m.at("bits_x").get<int>() == l.bits_x && m.at("bits_a").get<int>() == l.a_hat.bits &&
                      m.at("bits_b").get<int>() == l.b_hat.bits &&
                      m.at("gran_x").get<std::string>() == to_string(l.gran_x) &&
                      m.at("gran_b").get<std::string>() == to_string(l.b_hat.scale.granularity) &&
                      m.at("candidate_index").get<std::uint32_t>() == rec.candidate_index;
      if (!ok) throw FormatError(fmt::format("manifest disagrees with pack on layer '{}'", rec.name));
    }
    if (!(manifest.at("compression_ratio").get<double>() > 0.0)) throw FormatError("manifest compression ratio not positive");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("manifest malformed: {}", e.what()));
  }
}

std::filesystem::path manifest_path(const std::filesystem::path& pack_path) {
  auto p = pack_path;
  p += ".manifest.json";
  return p;
}

void write_skillpack(const Skillpack& pack, const std::filesystem::path& path, const Provenance& provenance) {
  const auto bytes = serialize_skillpack(pack);
  write_file_atomic(path, bytes);
  write_text_atomic(manifest_path(path), make_manifest(pack, bytes.size(), provenance).dump(2) + "\n");
}

Skillpack read_skillpack(const std::filesystem::path& path) {
  Skillpack pack;
  try {
    pack = deserialize_skillpack(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
  const auto mpath = manifest_path(path);
  if (std::filesystem::exists(mpath)) {
    const auto raw = read_file(mpath);
    nlohmann::json manifest;
    try {
      manifest = nlohmann::json::parse(raw.begin(), raw.end());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(fmt::format("{}: {}", mpath.string(), e.what()));
    }
    check_manifest(pack, manifest);
  }
  return pack;
}

}  // namespace skillzip
