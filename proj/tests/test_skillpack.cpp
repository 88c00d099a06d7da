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

#include <doctest.h>

#include <fstream>

#include "skillzip/bytes.hpp"
#include "skillzip/error.hpp"
#include "skillzip/skillpack.hpp"
#include "test_util.hpp"

using namespace skillzip;

namespace {
SkillLayerRecord random_record(Prng& rng, const std::string& name, std::size_t ci, std::size_t r, std::size_t co,
                               int bits, Granularity gb) {
  const std::vector<float> ones(ci, 1.0f);
  std::vector<float> s(ci);
  for (auto& v : s) v = static_cast<float>(rng.uniform(0.5, 3.0));
  CompileOptions opts;
  opts.quant.bits_x = opts.quant.bits_a = opts.quant.bits_b = bits;
  opts.quant.gran_b = gb;
  const auto layer = compile_skill_layer(random_gaussian(rng, ci, r), random_gaussian(rng, r, co), s,
                                         random_gaussian(rng, 8, ci), opts);
  return {name, layer, static_cast<std::uint32_t>(rng.below(11))};
}

void check_same(const Skillpack& a, const Skillpack& b) {
  CHECK(a.task_id == b.task_id);
  REQUIRE(a.layers.size() == b.layers.size());
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& x = a.layers[i];
    const auto& y = b.layers[i];
    CHECK(x.name == y.name);
    CHECK(x.candidate_index == y.candidate_index);
    CHECK(x.layer.smooth_inv == y.layer.smooth_inv);
    CHECK(x.layer.a_hat.codes == y.layer.a_hat.codes);
    CHECK(x.layer.b_hat.codes == y.layer.b_hat.codes);
    CHECK(x.layer.a_hat.scale.scales == y.layer.a_hat.scale.scales);
    CHECK(x.layer.b_hat.scale.scales == y.layer.b_hat.scale.scales);
    CHECK(x.layer.b_hat.scale.granularity == y.layer.b_hat.scale.granularity);
    CHECK(x.layer.bits_x == y.layer.bits_x);
    CHECK(x.layer.a_hat.bits == y.layer.a_hat.bits);
    CHECK(x.layer.gran_x == y.layer.gran_x);
    CHECK(x.layer.x_scale == y.layer.x_scale);
    CHECK(x.layer.mid_scale == y.layer.mid_scale);
  }
}
}  // namespace

TEST_CASE("minimal pack round trip") {
  Prng rng(1);
  const Skillpack p{"math", {random_record(rng, "l0", 1, 1, 1, 8, Granularity::kPerChannel)}};
  const auto bytes = serialize_skillpack(p);
  check_same(deserialize_skillpack(bytes), p);
  CHECK(serialize_skillpack(deserialize_skillpack(bytes)) == bytes);
}

TEST_CASE("multi-layer and int4 packs round trip byte-exactly") {
  Prng rng(2);
  for (int bits : {4, 8}) {
    for (Granularity gb : {Granularity::kPerChannel, Granularity::kPerTensor}) {
      Skillpack p{"code", {}};
      p.layers.push_back(random_record(rng, "q_proj", 9, 3, 7, bits, gb));
      p.layers.push_back(random_record(rng, "v_proj", 5, 2, 4, bits, gb));
      const auto bytes = serialize_skillpack(p);
      const Skillpack back = deserialize_skillpack(bytes);
      check_same(back, p);
      CHECK(serialize_skillpack(back) == bytes);
    }
  }
}

TEST_CASE("any single corrupted byte is rejected") {
  Prng rng(3);
  const Skillpack p{"t", {random_record(rng, "l", 3, 2, 5, 4, Granularity::kPerChannel)}};
  const auto bytes = serialize_skillpack(p);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    auto bad = bytes;
    bad[i] ^= 0x20;
    CHECK_THROWS_AS(deserialize_skillpack(bad), FormatError);
  }
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    CHECK_THROWS_AS(deserialize_skillpack(std::span(bytes).first(n)), FormatError);
  }
}

namespace {
// Re-seals a mutated payload so only structural checks can catch it.
std::vector<std::uint8_t> reseal(std::vector<std::uint8_t> bytes) {
  bytes.resize(bytes.size() - 4);
  ByteWriter w;
  w.bytes(bytes);
  w.seal_with_crc();
  return std::move(w).take();
}
}  // namespace

TEST_CASE("structural errors behind a valid CRC") {
  Prng rng(4);
  const Skillpack p{"t", {random_record(rng, "l", 3, 2, 5, 8, Granularity::kPerChannel)}};
  auto bytes = serialize_skillpack(p);

  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_AS(deserialize_skillpack(reseal(bad_version)), FormatError);

  // Extra bytes after the last layer.
  auto trailing = bytes;
  trailing.insert(trailing.end() - 4, 0x00);
  CHECK_THROWS_AS(deserialize_skillpack(reseal(trailing)), FormatError);
}

TEST_CASE("pack files and manifest") {
  const auto dir = test::scratch_dir("skillpack");
  Prng rng(5);
  Skillpack p{"math", {random_record(rng, "l0", 6, 2, 5, 8, Granularity::kPerChannel)}};
  Provenance prov;
  prov.seed = 7;
  prov.rank_policy = "fixed:2";
  prov.quant = "X8A8B8";
  write_skillpack(p, dir / "math.skz", prov);
  CHECK(std::filesystem::exists(manifest_path(dir / "math.skz")));
  check_same(read_skillpack(dir / "math.skz"), p);

  const auto bytes1 = read_file(dir / "math.skz");
  write_skillpack(read_skillpack(dir / "math.skz"), dir / "again.skz", prov);
  CHECK(read_file(dir / "again.skz") == bytes1);

  const auto m = make_manifest(p, bytes1.size(), prov);
  CHECK(m.at("layers").at(0).at("candidate_index") == p.layers[0].candidate_index);
  CHECK(m.at("provenance").at("seed") == 7);
  CHECK_NOTHROW(check_manifest(p, m));

  auto wrong = m;
  wrong["layers"][0]["rank"] = 99;
  CHECK_THROWS_AS(check_manifest(p, wrong), FormatError);
  write_text_atomic(manifest_path(dir / "math.skz"), wrong.dump());
  CHECK_THROWS_AS(read_skillpack(dir / "math.skz"), FormatError);

  auto corrupt = bytes1;
  corrupt[corrupt.size() / 2] ^= 1;
  write_file_atomic(dir / "bad.skz", corrupt);
  CHECK_THROWS_AS(read_skillpack(dir / "bad.skz"), FormatError);
  CHECK_THROWS_AS(read_skillpack(dir / "none.skz"), IoError);
}

TEST_CASE("compression ratio") {
  // 4096 x 4096 layer at rank 256 with int8 factors.
  CompiledSkillLayer l;
  l.smooth_inv.assign(4096, 1.0f);
  l.a_hat = {4096, 256, 8, std::vector<std::int8_t>(4096 * 256), {Granularity::kPerTensor, {1.0f}}};
  l.b_hat = {256, 4096, 8, std::vector<std::int8_t>(256 * 4096),
             {Granularity::kPerChannel, std::vector<float>(4096, 1.0f)}};
  const Skillpack big{"big", {{"w", l, 0}}};
  const double ratio = compression_ratio(big);
  CHECK(ratio > 30.0);
  CHECK(ratio < 32.0);
  const double ideal = (4.0 * 4096 * 4096) / (2.0 * 4096 * 256);
  CHECK(ideal == 32.0);

  // Rank = min dim in f32-sized storage: ratio below one, still reported.
  CHECK(compression_ratio(4 * (4 * 4 + 4 * 4) + 64, {{4, 4}}) < 1.0);
  CHECK(compression_ratio(4 * (4 * 4 + 4 * 4) + 64, {{4, 4}}) > 0.0);

  CHECK_THROWS_AS(serialize_skillpack(Skillpack{"empty", {}}), ValidationError);
  CHECK_THROWS_AS(compression_ratio(0, {{4, 4}}), ValidationError);
}
