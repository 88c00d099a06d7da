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

#include <cmath>
#include <cstring>
#include <limits>

#include "skillzip/archive.hpp"
#include "skillzip/bytes.hpp"
#include "skillzip/error.hpp"
#include "skillzip/parallel.hpp"
#include "test_util.hpp"

using namespace skillzip;

TEST_CASE("dense matrix construction") {
  CHECK_THROWS_AS(DenseMatrix(0, 3), ShapeError);
  CHECK_THROWS_AS(DenseMatrix(2, 2, std::vector<float>(3)), ShapeError);
  DenseMatrix m{{1, 2, 3}, {4, 5, 6}};
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m(1, 2) == 6.0f);
  CHECK(m.all_finite());
  m(0, 0) = std::numeric_limits<float>::quiet_NaN();
  CHECK_FALSE(m.all_finite());
}

TEST_CASE("bitwise equality distinguishes signed zero") {
  DenseMatrix a{{0.0f}};
  DenseMatrix b{{-0.0f}};
  CHECK_FALSE(a.bitwise_equal(b));
  CHECK(a.bitwise_equal(DenseMatrix{{0.0f}}));
}

TEST_CASE("matmul examples") {
  Prng rng(3);
  const DenseMatrix m = random_uniform(rng, 2, 2, -1, 1);
  CHECK(matmul(DenseMatrix::identity(2), m).bitwise_equal(m));

  const DenseMatrix y = matmul(DenseMatrix{{1, 2}, {3, 4}}, DenseMatrix{{1}, {1}});
  CHECK(y.bitwise_equal(DenseMatrix{{3}, {7}}));

  const DenseMatrix z = matmul(DenseMatrix(3, 4), random_uniform(rng, 4, 2, -1, 1));
  CHECK(z.bitwise_equal(DenseMatrix(3, 2)));

  CHECK_THROWS_AS(matmul(DenseMatrix(2, 3), DenseMatrix(2, 3)), ShapeError);
}

TEST_CASE("matmul matches naive oracle and is thread-count invariant") {
  Prng rng(11);
  const DenseMatrix a = random_uniform(rng, 37, 29, -1, 1);
  const DenseMatrix b = random_uniform(rng, 29, 41, -1, 1);
  const DenseMatrix ref = test::naive_matmul(a, b);
  set_num_threads(1);
  const DenseMatrix one = matmul(a, b);
  set_num_threads(4);
  const DenseMatrix four = matmul(a, b);
  set_num_threads(1);
  CHECK(one.bitwise_equal(four));
  CHECK(one.bitwise_equal(ref));
}

TEST_CASE("matmul associativity on random 32x32") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Prng rng(seed);
    const DenseMatrix a = random_uniform(rng, 32, 32, -1, 1);
    const DenseMatrix b = random_uniform(rng, 32, 32, -1, 1);
    const DenseMatrix c = random_uniform(rng, 32, 32, -1, 1);
    const DenseMatrix left = matmul(matmul(a, b), c);
    const DenseMatrix right = matmul(a, matmul(b, c));
    CHECK(relative_error(left, right) <= 1e-4);
  }
}

TEST_CASE("fro_norm examples") {
  CHECK(fro_norm(DenseMatrix(3, 3)) == 0.0);
  CHECK(fro_norm(DenseMatrix{{3, 4}}) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(fro_norm(DenseMatrix::identity(3)) == doctest::Approx(std::sqrt(3.0)).epsilon(1e-15));
}

TEST_CASE("elementwise helpers") {
  const DenseMatrix a{{1, 2}, {3, 4}};
  const DenseMatrix b{{0.5f, 0.5f}, {1, 1}};
  CHECK(add(a, b).bitwise_equal(DenseMatrix{{1.5f, 2.5f}, {4, 5}}));
  CHECK(subtract(a, b).bitwise_equal(DenseMatrix{{0.5f, 1.5f}, {2, 3}}));
  CHECK(scaled(a, 2).bitwise_equal(DenseMatrix{{2, 4}, {6, 8}}));
  CHECK(transpose(a).bitwise_equal(DenseMatrix{{1, 3}, {2, 4}}));
  const std::vector<float> v{10, 100};
  CHECK(scale_columns(a, v).bitwise_equal(DenseMatrix{{10, 200}, {30, 400}}));
  CHECK(scale_rows(a, v).bitwise_equal(DenseMatrix{{10, 20}, {300, 400}}));
  CHECK(fro_distance(a, a) == 0.0);
  CHECK(relative_error(DenseMatrix(1, 1), DenseMatrix(1, 1)) == 0.0);
  const std::vector<DenseMatrix> parts{a, b};
  const DenseMatrix s = vstack(parts);
  CHECK(s.rows() == 4);
  CHECK(slice_rows(s, 2, 4).bitwise_equal(b));
  CHECK_THROWS_AS(add(a, DenseMatrix(1, 2)), ShapeError);
}

TEST_CASE("archive examples") {
  const auto dir = test::scratch_dir("archive");
  TensorArchive one;
  one.add("w", DenseMatrix{{0.5f}});
  archive_write(dir / "one.ftz", one);
  const TensorArchive back = archive_read(dir / "one.ftz");
  REQUIRE(back.size() == 1);
  CHECK(back.at("w").bitwise_equal(DenseMatrix{{0.5f}}));

  TensorArchive two;
  two.add("zeta", DenseMatrix{{1}});
  two.add("alpha", DenseMatrix{{2, 3}});
  archive_write(dir / "two.ftz", two);
  const auto names = archive_read(dir / "two.ftz").names();
  CHECK(names == std::vector<std::string>{"zeta", "alpha"});

  auto bytes = read_file(dir / "one.ftz");
  bytes[0] = 'X';
  write_file_atomic(dir / "bad.ftz", bytes);
  CHECK_THROWS_AS(archive_read(dir / "bad.ftz"), FormatError);
  CHECK_THROWS_AS(archive_read(dir / "missing.ftz"), IoError);
}

TEST_CASE("archive name rules") {
  TensorArchive a;
  CHECK_THROWS_AS(a.add("", DenseMatrix(1, 1)), ValidationError);
  CHECK_THROWS_AS(a.add(std::string(257, 'x'), DenseMatrix(1, 1)), ValidationError);
  a.add(std::string(256, 'x'), DenseMatrix(1, 1));
  CHECK_THROWS_AS(a.add(std::string(256, 'x'), DenseMatrix(1, 1)), ValidationError);
  CHECK_THROWS_AS(a.at("nope"), ValidationError);
}

TEST_CASE("archive round trip is bitwise for arbitrary finite floats") {
  Prng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t r = 1 + rng.below(9), c = 1 + rng.below(9);
    std::vector<float> v(r * c);
    for (auto& x : v) {
      // Random bit patterns, retried until finite: covers denormals and -0.
      std::uint32_t bits;
      float f;
      do {
        bits = static_cast<std::uint32_t>(rng.next_u64());
        std::memcpy(&f, &bits, 4);
      } while (!std::isfinite(f));
      x = f;
    }
    TensorArchive a;
    a.add("m", DenseMatrix(r, c, v));
    const auto bytes = a.serialize();
    const TensorArchive b = TensorArchive::deserialize(bytes);
    CHECK(b.at("m").bitwise_equal(a.at("m")));
    CHECK(b.serialize() == bytes);
  }
}

namespace {
std::vector<std::uint8_t> raw_archive(float value, const std::string& name2 = "") {
  ByteWriter w;
  w.text("FTZ1");
  w.u32(name2.empty() ? 1 : 2);
  for (const std::string& n : {std::string("a"), name2}) {
    if (n.empty()) continue;
    w.u16(static_cast<std::uint16_t>(n.size()));
    w.text(n);
    w.u32(1);
    w.u32(1);
    w.f32(value);
  }
  w.seal_with_crc();
  return std::move(w).take();
}
}  // namespace

TEST_CASE("archive read rejects malformed payloads") {
  CHECK_NOTHROW(TensorArchive::deserialize(raw_archive(1.0f)));
  CHECK_THROWS_AS(TensorArchive::deserialize(raw_archive(std::numeric_limits<float>::infinity())), FormatError);
  CHECK_THROWS_AS(TensorArchive::deserialize(raw_archive(std::nanf(""))), FormatError);
  CHECK_THROWS_AS(TensorArchive::deserialize(raw_archive(1.0f, "a")), FormatError);

  auto good = raw_archive(1.0f);
  for (std::size_t i = 0; i < good.size(); ++i) {
    auto bad = good;
    bad[i] ^= 0x01;
    CHECK_THROWS_AS(TensorArchive::deserialize(bad), FormatError);
  }
  for (std::size_t n = 0; n < good.size(); ++n) {
    CHECK_THROWS_AS(TensorArchive::deserialize(std::span(good).first(n)), FormatError);
  }
}

TEST_CASE("byte reader bounds") {
  const std::vector<std::uint8_t> b{1, 2, 3};
  ByteReader r(b, "test");
  CHECK(r.u16() == 0x0201);
  CHECK_THROWS_AS(r.u16(), FormatError);
}
