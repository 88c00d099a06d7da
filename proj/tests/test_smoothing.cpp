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

#include "skillzip/calibration.hpp"
#include "skillzip/error.hpp"
#include "skillzip/kernel.hpp"
#include "skillzip/smoothing.hpp"
#include "test_util.hpp"

using namespace skillzip;

TEST_CASE("compute_smooth examples") {
  // Balanced: mean_abs equals each row's max |W|.
  const DenseMatrix w{{3, -1}, {0.5f, -5}};
  const std::vector<double> mean{3, 5};
  for (float s : compute_smooth(mean, w, 0.5).s) CHECK(s == doctest::Approx(1.0f));

  Prng rng(1);
  const std::vector<double> m41{4, 1};
  const auto s41 = compute_smooth(m41, random_gaussian(rng, 2, 5), 1.0, 1e-5).s;
  CHECK(s41[0] == doctest::Approx(4.0f));
  CHECK(s41[1] == doctest::Approx(1.0f));

  const std::vector<double> zeros(3, 0.0);
  for (float s : compute_smooth(zeros, random_gaussian(rng, 3, 4), 0.7, 1e-5).s) {
    CHECK(std::isfinite(s));
    CHECK(s >= 1e-5f);
  }
  const std::vector<double> short_mean{1};
  CHECK_THROWS_AS(compute_smooth(short_mean, DenseMatrix(2, 2)), ShapeError);
  CHECK_THROWS_AS(compute_smooth(m41, DenseMatrix(2, 2), 1.5), ValidationError);
}

TEST_CASE("compute_smooth is monotone in mean_abs") {
  Prng rng(2);
  const DenseMatrix w = random_gaussian(rng, 6, 4);
  std::vector<double> mean(6);
  for (auto& m : mean) m = rng.uniform(0.0, 3.0);
  const auto base = compute_smooth(mean, w).s;
  for (std::size_t i = 0; i < 6; ++i) {
    auto bumped = mean;
    bumped[i] *= 1.7;
    CHECK(compute_smooth(bumped, w).s[i] >= base[i]);
  }
}

TEST_CASE("apply_smooth examples") {
  Prng rng(3);
  const DenseMatrix x = random_gaussian(rng, 5, 4);
  const DenseMatrix w = random_gaussian(rng, 4, 3);
  const std::vector<float> ones(4, 1.0f);
  const SmoothedPair id = apply_smooth(x, w, ones);
  CHECK(id.x.bitwise_equal(x));
  CHECK(id.w.bitwise_equal(w));

  const std::vector<float> s{2, 1};
  const SmoothedPair p = apply_smooth(DenseMatrix{{2, 0}}, DenseMatrix{{1}, {1}}, s);
  CHECK(p.x.bitwise_equal(DenseMatrix{{1, 0}}));
  CHECK(p.w.bitwise_equal(DenseMatrix{{2}, {1}}));
  CHECK(matmul(p.x, p.w)(0, 0) == 2.0f);

  const std::vector<float> bad{1, 0};
  CHECK_THROWS_AS(apply_smooth(DenseMatrix{{2, 0}}, DenseMatrix{{1}, {1}}, bad), ValidationError);
}

TEST_CASE("smoothing preserves the product") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Prng rng(seed);
    const std::size_t t = 1 + rng.below(16), ci = 1 + rng.below(16), co = 1 + rng.below(16);
    const DenseMatrix x = random_gaussian(rng, t, ci);
    const DenseMatrix w = random_gaussian(rng, ci, co);
    std::vector<float> s(ci);
    for (auto& v : s) v = static_cast<float>(rng.uniform(0.05, 20.0));
    const SmoothedPair p = apply_smooth(x, w, s);
    const DenseMatrix ref = matmul(x, w);
    CHECK(fro_distance(matmul(p.x, p.w), ref) <= 1e-5 * fro_norm(ref));
    CHECK(smooth_activations(x, s).bitwise_equal(p.x));
  }
}

TEST_CASE("sample_rotation") {
  Prng a(4);
  CHECK(sample_rotation(a, 1).bitwise_equal(DenseMatrix{{1}}));
  for (std::size_t r : {2u, 3u, 8u, 32u, 64u}) {
    Prng rng(r);
    const DenseMatrix q = sample_rotation(rng, r);
    CHECK(fro_distance(matmul(transpose(q), q), DenseMatrix::identity(r)) <= 1e-6 * std::sqrt(double(r)));
    Prng again(r);
    CHECK(sample_rotation(again, r).bitwise_equal(q));
  }
  CHECK_THROWS_AS(sample_rotation(a, 0), ValidationError);
}

TEST_CASE("fold_rotation examples") {
  Prng rng(5);
  const DenseMatrix a = random_gaussian(rng, 16, 8);
  const DenseMatrix b = random_gaussian(rng, 8, 16);
  const RotatedFactors id = fold_rotation(a, b, DenseMatrix::identity(8));
  CHECK(id.A.bitwise_equal(a));
  CHECK(id.B.bitwise_equal(b));

  // Permutation: column j of A Q is column perm[j] of A.
  const std::vector<std::size_t> perm{2, 0, 1, 7, 3, 6, 4, 5};
  DenseMatrix q(8, 8);
  for (std::size_t j = 0; j < 8; ++j) q(perm[j], j) = 1.0f;
  const RotatedFactors p = fold_rotation(a, b, q);
  for (std::size_t j = 0; j < 8; ++j) {
    for (std::size_t r = 0; r < 16; ++r) CHECK(p.A(r, j) == a(r, perm[j]));
    for (std::size_t c = 0; c < 16; ++c) CHECK(p.B(j, c) == b(perm[j], c));
  }

  const DenseMatrix ab = matmul(a, b);
  for (int i = 0; i < 10; ++i) {
    const RotatedFactors r = fold_rotation(a, b, sample_rotation(rng, 8));
    CHECK(fro_distance(matmul(r.A, r.B), ab) <= 1e-5 * fro_norm(ab));
  }

  const DenseMatrix a2{{1, 0}};
  const DenseMatrix b2{{1}, {0}};
  const RotatedFactors r90 = fold_rotation(a2, b2, DenseMatrix{{0, 1}, {-1, 0}});
  CHECK(r90.A.bitwise_equal(DenseMatrix{{0, 1}}));
  CHECK(r90.B.bitwise_equal(DenseMatrix{{0}, {1}}));
  CHECK(matmul(r90.A, r90.B)(0, 0) == 1.0f);
}

TEST_CASE("select_rotation keeps identity when it is the only choice") {
  Prng rng(6);
  const DenseMatrix a = random_gaussian(rng, 8, 1);
  const DenseMatrix b = random_gaussian(rng, 1, 8);
  const DenseMatrix x = random_gaussian(rng, 16, 8);
  const QuantConfig cfg;
  const RotationChoice c = select_rotation(a, b, x, cfg, rng, 1);
  CHECK(c.candidate_index <= 1);
  CHECK(std::abs(c.Q(0, 0)) == 1.0f);
  const double id_loss = fake_quant_loss(x, matmul(matmul(x, a), b), a, b, cfg);
  CHECK(c.loss == doctest::Approx(id_loss));

  const RotationChoice zero = select_rotation(a, b, x, cfg, rng, 0);
  CHECK(zero.candidate_index == 0);
  CHECK(zero.Q.bitwise_equal(DenseMatrix::identity(1)));
  CHECK(zero.loss == id_loss);
}

TEST_CASE("select_rotation never loses to identity and helps outlier factors") {
  const QuantConfig cfg;
  int strict = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Prng rng(seed);
    // Energy concentrated in column 0 of A, rank 8.
    DenseMatrix a = random_gaussian(rng, 32, 8, 0.02f);
    for (std::size_t r = 0; r < 32; ++r) a(r, 0) = static_cast<float>(rng.gaussian());
    const DenseMatrix b = random_gaussian(rng, 8, 32);
    const DenseMatrix x = random_gaussian(rng, 64, 32);
    const RotationChoice c = select_rotation(a, b, x, cfg, rng, 10);
    const double id_loss = fake_quant_loss(x, matmul(matmul(x, a), b), a, b, cfg);
    CHECK(c.loss <= id_loss);
    strict += c.loss < id_loss;
  }
  CHECK(strict >= 45);
}

TEST_CASE("smoothing lowers int8 error on outlier fixtures") {
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const OutlierSpec spec{2, 60.0, 10.0};
    const DenseMatrix x = synth_activations(seed, 96, 64, spec);
    Prng rng(seed + 1000);
    const DenseMatrix a = random_gaussian(rng, 64, 8, 0.1f);
    const DenseMatrix b = random_gaussian(rng, 8, 48, 0.1f);
    const DenseMatrix w = matmul(a, b);
    const DenseMatrix ref = matmul(x, w);
    const std::vector<DenseMatrix> xs{x};
    const std::vector<float> s = compute_smooth(profile(xs).mean_abs(), w).s;
    const std::vector<float> ones(64, 1.0f);
    const CompileOptions opts;
    const double plain = fro_distance(forward_quantized(compile_skill_layer(a, b, ones, x, opts), x), ref);
    const DenseMatrix as = scale_rows(a, s);
    const double smooth = fro_distance(forward_quantized(compile_skill_layer(as, b, s, x, opts), x), ref);
    wins += smooth <= plain;
  }
  CHECK(wins >= 45);
}
