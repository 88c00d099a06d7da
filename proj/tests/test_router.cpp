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
#include <numeric>

#include "fixtures.hpp"
#include "skillzip/archive.hpp"
#include "skillzip/error.hpp"
#include "test_util.hpp"

using namespace skillzip;

namespace {
ForwardRequest req(const std::string& task, Prng& rng, std::size_t rows, std::size_t cols = 32,
                   const std::string& layer = "") {
  return {task, layer, random_gaussian(rng, rows, cols, 3.0f)};
}
}  // namespace

TEST_CASE("label routing") {
  const auto f = test::make_served(1);
  const SkillRegistry reg = test::make_registry(f.compressed);
  const LabelRouter router(reg);
  Prng rng(1);
  CHECK(router.route(req("math", rng, 1)) == "math");
  try {
    (void)router.route(req("unknown", rng, 1));
    FAIL("expected RoutingError");
  } catch (const RoutingError& e) {
    CHECK(e.label() == "unknown");
  }
  CHECK(reg.find("math").get() == reg.find("math").get());
  CHECK(reg.find("nope") == nullptr);
  CHECK(reg.tasks() == std::vector<std::string>{"code", "law", "math"});
}

TEST_CASE("registry rejects incompatible packs") {
  const auto f = test::make_served(2);
  SkillRegistry reg = test::make_registry(f.compressed);
  CHECK_THROWS_AS(reg.add(f.compressed.packs[0]), ValidationError);

  TensorArchive other;
  other.add("l0", DenseMatrix(32, 25));
  SkillRegistry mismatched(other);
  CHECK_THROWS_AS(mismatched.add(f.compressed.packs[0]), ValidationError);
  TensorArchive renamed;
  renamed.add("zz", DenseMatrix(32, 24));
  SkillRegistry missing(renamed);
  CHECK_THROWS_AS(missing.add(f.compressed.packs[0]), ValidationError);
  CHECK_THROWS_AS(SkillRegistry(TensorArchive{}), ValidationError);
}

TEST_CASE("dispatch examples") {
  const auto f = test::make_served(3);
  const SkillRegistry reg = test::make_registry(f.compressed);
  Prng rng(3);
  const DenseMatrix& w = reg.backbone().at("l0");

  const std::vector<ForwardRequest> one{req("code", rng, 3)};
  const auto y1 = dispatch_batch(one, reg);
  CHECK(y1[0].bitwise_equal(forward_full(w, &reg.find("code")->layers[0].layer, one[0].x)));

  const std::vector<ForwardRequest> mixed{req("math", rng, 2), req("code", rng, 4), req("math", rng, 1)};
  const auto groups = group_requests(mixed, LabelRouter(reg), reg);
  REQUIRE(groups.size() == 2);
  CHECK(groups[0].task_id == "math");
  CHECK(groups[0].indices == std::vector<std::size_t>{0, 2});
  CHECK(groups[1].indices == std::vector<std::size_t>{1});
  const auto ym = dispatch_batch(mixed, reg);
  const auto ys = dispatch_sequential(mixed, reg);
  REQUIRE(ym.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(ym[i].rows() == mixed[i].x.rows());
    CHECK(ym[i].bitwise_equal(ys[i]));
  }

  const ForwardRequest r = req("law", rng, 2);
  const std::vector<ForwardRequest> same(5, r);
  const auto yk = dispatch_batch(same, reg);
  for (const auto& y : yk) CHECK(y.bitwise_equal(yk[0]));
}

TEST_CASE("unknown label aborts the whole batch") {
  const auto f = test::make_served(4);
  const SkillRegistry reg = test::make_registry(f.compressed);
  Prng rng(4);
  const std::vector<ForwardRequest> batch{req("math", rng, 1), req("bogus", rng, 1)};
  CHECK_THROWS_AS(dispatch_batch(batch, reg), RoutingError);
  const std::vector<ForwardRequest> wide{req("math", rng, 1, 31)};
  CHECK_THROWS_AS(dispatch_batch(wide, reg), ShapeError);
}

TEST_CASE("dispatch is permutation equivariant and matches sequential") {
  const auto f = test::make_served(5, true);
  const SkillRegistry reg = test::make_registry(f.compressed);
  const char* tasks[] = {"math", "code", "law"};
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    Prng rng(trial);
    std::vector<ForwardRequest> batch;
    const std::size_t n = 1 + rng.below(12);
    for (std::size_t i = 0; i < n; ++i) {
      const bool second = rng.below(2) == 1;
      batch.push_back(req(tasks[rng.below(3)], rng, 1 + rng.below(4), second ? 16 : 32, second ? "l1" : "l0"));
    }
    const auto y = dispatch_batch(batch, reg);
    const auto s = dispatch_sequential(batch, reg);
    for (std::size_t i = 0; i < n; ++i) CHECK(y[i].bitwise_equal(s[i]));

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    std::vector<ForwardRequest> shuffled;
    for (std::size_t i : perm) shuffled.push_back(batch[i]);
    const auto yp = dispatch_batch(shuffled, reg);
    for (std::size_t i = 0; i < n; ++i) CHECK(yp[i].bitwise_equal(y[perm[i]]));

    std::vector<std::size_t> seen;
    for (const auto& g : group_requests(batch, LabelRouter(reg), reg)) {
      seen.insert(seen.end(), g.indices.begin(), g.indices.end());
    }
    std::sort(seen.begin(), seen.end());
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    CHECK(seen == all);
  }
}

TEST_CASE("a custom router slots in") {
  const auto f = test::make_served(6);
  const SkillRegistry reg = test::make_registry(f.compressed);
  struct Everything : Router {
    std::string route(const ForwardRequest&) const override { return "law"; }
  };
  Prng rng(6);
  const std::vector<ForwardRequest> batch{req("anything", rng, 2)};
  const auto y = dispatch_batch(batch, reg, Everything{});
  const std::vector<ForwardRequest> as_law{{"law", "", batch[0].x}};
  CHECK(y[0].bitwise_equal(dispatch_sequential(as_law, reg)[0]));
}

TEST_CASE("request stream parsing") {
  const auto dir = test::scratch_dir("stream");
  TensorArchive inputs;
  inputs.add("x0", DenseMatrix{{1, 2}, {3, 4}});
  archive_write(dir / "in.ftz", inputs);
  const std::string text =
      "{\"task\": \"math\", \"x\": [[1, 2], [3, 4.5]]}\n"
      "\n"
      "{\"task\": \"code\", \"layer\": \"l0\", \"x\": [5, 6]}\n"
      "{\"task\": \"law\", \"x\": \"in.ftz#x0\"}\n";
  const auto reqs = parse_request_stream(text, dir);
  REQUIRE(reqs.size() == 3);
  CHECK(reqs[0].x.bitwise_equal(DenseMatrix{{1, 2}, {3, 4.5f}}));
  CHECK(reqs[1].layer == "l0");
  CHECK(reqs[1].x.bitwise_equal(DenseMatrix{{5, 6}}));
  CHECK(reqs[2].x.bitwise_equal(inputs.at("x0")));
  CHECK(parse_request_stream("", dir).empty());

  try {
    (void)parse_request_stream("{\"task\": \"a\", \"x\": [1]}\n{\"task\": 3}\n", dir);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_request_stream("{\"task\": \"a\", \"x\": [[1], [2, 3]]}", dir), ValidationError);
  CHECK_THROWS_AS(parse_request_stream("not json", dir), ValidationError);
  CHECK_THROWS_AS(parse_request_stream("{\"task\": \"a\", \"x\": \"gone.ftz#x\"}", dir), IoError);
}

TEST_CASE("outputs archive keys by index") {
  const std::vector<DenseMatrix> outs{DenseMatrix{{1}}, DenseMatrix{{2, 3}}};
  const TensorArchive a = outputs_to_archive(outs);
  CHECK(a.names() == std::vector<std::string>{"0", "1"});
  CHECK(a.at("1").bitwise_equal(outs[1]));
}
