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

#include <algorithm>

#include "skillzip/calibration.hpp"
#include "skillzip/error.hpp"
#include "test_util.hpp"

using namespace skillzip;

namespace {
ChannelStats profile_of(const DenseMatrix& x) {
  const std::vector<DenseMatrix> v{x};
  return profile(v);
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}
}  // namespace

TEST_CASE("profile examples") {
  const ChannelStats a = profile_of(DenseMatrix{{1, -1}, {1, -1}});
  CHECK(a.mean_abs() == std::vector<double>{1, 1});
  CHECK(a.max_abs() == std::vector<double>{1, 1});
  CHECK(a.token_count() == 2);

  const ChannelStats b = profile_of(DenseMatrix{{0, 2}, {0, -4}});
  CHECK(b.mean_abs() == std::vector<double>{0, 3});
  CHECK(b.max_abs() == std::vector<double>{0, 4});
}

TEST_CASE("streaming profile equals batch profile") {
  Prng rng(5);
  const DenseMatrix x1 = random_uniform(rng, 17, 9, -3, 3);
  const DenseMatrix x2 = random_uniform(rng, 23, 9, -3, 3);
  const std::vector<DenseMatrix> parts{x1, x2};
  const ChannelStats whole = profile_of(vstack(parts));
  const ChannelStats split = profile(parts);
  ChannelStats merged = profile_of(x1);
  merged.merge(profile_of(x2));
  for (std::size_t c = 0; c < 9; ++c) {
    CHECK(std::abs(whole.mean_abs()[c] - split.mean_abs()[c]) <= 1e-9);
    CHECK(std::abs(whole.mean_abs()[c] - merged.mean_abs()[c]) <= 1e-9);
    CHECK(whole.max_abs()[c] == split.max_abs()[c]);
  }
  CHECK(merged.token_count() == 40);
  for (std::size_t c = 0; c < 9; ++c) CHECK(whole.mean_abs()[c] <= whole.max_abs()[c]);
}

TEST_CASE("profile is permutation equivariant over columns") {
  Prng rng(6);
  const DenseMatrix x = random_uniform(rng, 20, 6, -2, 2);
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  DenseMatrix px(20, 6);
  for (std::size_t t = 0; t < 20; ++t) {
    for (std::size_t c = 0; c < 6; ++c) px(t, c) = x(t, perm[c]);
  }
  const ChannelStats a = profile_of(x), b = profile_of(px);
  for (std::size_t c = 0; c < 6; ++c) {
    CHECK(b.mean_abs()[c] == a.mean_abs()[perm[c]]);
    CHECK(b.max_abs()[c] == a.max_abs()[perm[c]]);
  }
}

TEST_CASE("profile input checks") {
  const std::vector<DenseMatrix> none;
  CHECK_THROWS_AS(profile(none), ValidationError);
  const std::vector<DenseMatrix> ragged{DenseMatrix(2, 3), DenseMatrix(2, 4)};
  CHECK_THROWS_AS(profile(ragged), ShapeError);
}

TEST_CASE("profile files round trip") {
  const auto dir = test::scratch_dir("profile");
  Prng rng(7);
  CalibProfile p;
  p.emplace("layer0", profile_of(random_uniform(rng, 8, 5, -1, 1)));
  p.emplace("layer1", profile_of(random_uniform(rng, 3, 2, -1, 1)));
  write_profile(dir / "calib", p);
  const CalibProfile back = read_profile(dir / "calib");
  REQUIRE(back.size() == 2);
  for (const auto& [name, stats] : p) {
    const auto& b = back.at(name);
    CHECK(b.token_count() == stats.token_count());
    for (std::size_t c = 0; c < stats.channels(); ++c) {
      CHECK(b.mean_abs()[c] == doctest::Approx(stats.mean_abs()[c]).epsilon(1e-6));
      CHECK(b.max_abs()[c] == doctest::Approx(stats.max_abs()[c]).epsilon(1e-6));
    }
  }
}

TEST_CASE("synth_activations examples") {
  const DenseMatrix flat = synth_activations(1, 256, 64, OutlierSpec{1, 1.0, 15.0});
  const auto mx = profile_of(flat).max_abs();
  const double med = median_of(mx);
  for (double m : mx) CHECK(m / med <= 1.5);

  const OutlierSpec spec{1, 100.0, 15.0};
  const DenseMatrix x = synth_activations(2, 256, 64, spec);
  const auto m2 = profile_of(x).max_abs();
  const auto out = synth_outlier_channels(2, 64, spec);
  REQUIRE(out.size() == 1);
  std::vector<double> others;
  for (std::size_t c = 0; c < 64; ++c) {
    if (c != out[0]) others.push_back(m2[c]);
  }
  const double med2 = median_of(others);
  int big = 0;
  for (double m : m2) big += m >= 50.0 * med2;
  CHECK(big == 1);
  CHECK(m2[out[0]] >= 50.0 * med2);

  CHECK(synth_activations(3, 10, 8, spec).bitwise_equal(synth_activations(3, 10, 8, spec)));
}

TEST_CASE("outlier columns exceed half the ratio times the median") {
  for (double r : {10.0, 30.0, 100.0, 1000.0}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const OutlierSpec spec{3, r, 15.0};
      const auto mx = profile_of(synth_activations(seed, 128, 48, spec)).max_abs();
      const auto out = synth_outlier_channels(seed, 48, spec);
      std::vector<double> others;
      for (std::size_t c = 0; c < 48; ++c) {
        if (std::find(out.begin(), out.end(), c) == out.end()) others.push_back(mx[c]);
      }
      const double med = median_of(others);
      for (std::size_t c : out) CHECK(mx[c] >= 0.5 * r * med);
    }
  }
}

TEST_CASE("outlier settings validation") {
  CHECK_THROWS_AS((OutlierSpec{8, 10.0, 1.0}.validate(8)), ValidationError);
  CHECK_THROWS_AS((OutlierSpec{1, 0.5, 1.0}.validate(8)), ValidationError);
  CHECK_THROWS_AS((OutlierSpec{1, 10.0, 0.0}.validate(8)), ValidationError);
}
