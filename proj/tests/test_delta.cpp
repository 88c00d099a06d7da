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

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "skillzip/delta.hpp"
#include "skillzip/error.hpp"
#include "test_util.hpp"

using namespace skillzip;

namespace {
TensorArchive single(float v) {
  TensorArchive a;
  a.add("l", DenseMatrix{{v}});
  return a;
}

TaskDelta scalar_delta(const std::string& id, float v) { return {id, single(v)}; }

TensorArchive random_archive(Prng& rng) {
  TensorArchive a;
  a.add("q", random_uniform(rng, 4, 6, -1, 1));
  a.add("k", random_uniform(rng, 3, 5, -1, 1));
  return a;
}
}  // namespace

TEST_CASE("extract_delta examples") {
  Prng rng(1);
  const TensorArchive base = random_archive(rng);
  const TaskDelta zero = extract_delta(base, base, "t");
  for (const auto& e : zero.layers.entries()) CHECK(fro_norm(e.matrix) == 0.0);

  CHECK(extract_delta(single(1), single(3), "t").layers.at("l").bitwise_equal(DenseMatrix{{2}}));

  const TensorArchive tuned = random_archive(rng);
  const TaskDelta d = extract_delta(base, tuned, "t");
  for (const auto& e : base.entries()) {
    const auto& b = e.matrix;
    const auto& t = tuned.at(e.name);
    const auto& dl = d.layers.at(e.name);
    for (std::size_t i = 0; i < b.size(); ++i) {
      // Sterbenz-style exactness does not hold in general; compare with the
      // f32 rounding of the exact difference.
      CHECK(dl.values()[i] == static_cast<float>(static_cast<double>(t.values()[i]) - b.values()[i]));
      CHECK(std::abs((b.values()[i] + dl.values()[i]) - t.values()[i]) <= 1e-6f);
    }
  }
}

TEST_CASE("extract_delta rejects layout mismatches") {
  TensorArchive a, b, c;
  a.add("l", DenseMatrix(2, 2));
  b.add("l", DenseMatrix(2, 3));
  c.add("m", DenseMatrix(2, 2));
  CHECK_THROWS_AS(extract_delta(a, b, "t"), ShapeError);
  CHECK_THROWS_AS(extract_delta(a, c, "t"), ShapeError);
}

TEST_CASE("merge_shared examples") {
  MergePlan mean;
  const std::vector<TaskDelta> two{scalar_delta("a", 2), scalar_delta("b", 0)};
  CHECK(merge_shared(two, mean).layers.at("l")(0, 0) == 1.0f);

  Prng rng(2);
  const TaskDelta d{"x", random_archive(rng)};
  const std::vector<TaskDelta> same{d, d, d};
  const TaskDelta m = merge_shared(same, mean);
  for (const auto& e : d.layers.entries()) CHECK(test::all_close(m.layers.at(e.name), e.matrix, 1e-7));

  MergePlan trimmed{MergeMethod::kTrimmedMean, 1.0 / 3.0, 1.0};
  const std::vector<TaskDelta> three{scalar_delta("a", 1), scalar_delta("b", 2), scalar_delta("c", 9)};
  CHECK(merge_shared(three, trimmed).layers.at("l")(0, 0) == 2.0f);

  MergePlan half{MergeMethod::kMean, 0.0, 0.5};
  CHECK(merge_shared(two, half).layers.at("l")(0, 0) == 0.5f);
}

TEST_CASE("merge plan validation") {
  CHECK_THROWS_AS((MergePlan{MergeMethod::kTrimmedMean, 0.5, 1.0}.validate()), ValidationError);
  CHECK_THROWS_AS((MergePlan{MergeMethod::kMean, 0.0, 2.5}.validate()), ValidationError);
  CHECK_THROWS_AS((MergePlan{MergeMethod::kMean, 0.0, std::nan("")}.validate()), ValidationError);
  const std::vector<TaskDelta> one{scalar_delta("a", 1)};
  CHECK_THROWS_AS(merge_shared(one, MergePlan{}), ValidationError);
}

TEST_CASE("merge_shared is permutation invariant") {
  Prng rng(3);
  std::vector<TaskDelta> ds;
  for (int k = 0; k < 5; ++k) ds.push_back({fmt::format("t{}", k), random_archive(rng)});
  for (MergePlan plan : {MergePlan{}, MergePlan{MergeMethod::kTrimmedMean, 0.2, 0.8}}) {
    const TaskDelta ref = merge_shared(ds, plan);
    auto perm = ds;
    for (int trial = 0; trial < 5; ++trial) {
      std::rotate(perm.begin(), perm.begin() + 2, perm.end());
      std::swap(perm[0], perm[3]);
      const TaskDelta got = merge_shared(perm, plan);
      for (const auto& e : ref.layers.entries()) CHECK(got.layers.at(e.name).bitwise_equal(e.matrix));
    }
  }
}

TEST_CASE("recenter examples") {
  Prng rng(4);
  const TaskDelta d{"x", random_archive(rng)};
  const std::vector<TaskDelta> same{d, d};
  const Recentered z = recenter(same, d);
  for (const auto& r : z.residuals) {
    for (const auto& e : r.layers.entries()) CHECK(fro_norm(e.matrix) == 0.0);
  }

  const std::vector<TaskDelta> two{scalar_delta("a", 2), scalar_delta("b", 0)};
  const Recentered rc = recenter(two, scalar_delta("shared", 1));
  CHECK(rc.residuals[0].layers.at("l")(0, 0) == 1.0f);
  CHECK(rc.residuals[1].layers.at("l")(0, 0) == -1.0f);
  CHECK(rc.residuals[0].task_id == "a");
  CHECK(rc.backbone_update.layers.at("l")(0, 0) == 1.0f);
}

TEST_CASE("reconstruction identity and mean centering for K=4") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Prng rng(seed);
    const TensorArchive base = random_archive(rng);
    std::vector<TensorArchive> tuned;
    std::vector<TaskDelta> ds;
    for (int k = 0; k < 4; ++k) {
      tuned.push_back(random_archive(rng));
      ds.push_back(extract_delta(base, tuned.back(), fmt::format("t{}", k)));
    }
    const Recentered rc = recenter(ds, merge_shared(ds, MergePlan{}));
    const TensorArchive backbone = apply_update(base, rc.backbone_update);
    for (int k = 0; k < 4; ++k) {
      const TensorArchive rebuilt = apply_update(backbone, rc.residuals[k]);
      for (const auto& e : base.entries()) CHECK(test::all_close(rebuilt.at(e.name), tuned[k].at(e.name), 1e-6));
    }
    for (const auto& e : base.entries()) {
      for (std::size_t i = 0; i < e.matrix.size(); ++i) {
        double s = 0.0;
        for (const auto& r : rc.residuals) s += r.layers.at(e.name).values()[i];
        CHECK(std::abs(s / 4.0) <= 1e-6);
      }
    }
  }
}
