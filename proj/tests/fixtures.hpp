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

#include "skillzip/pipeline.hpp"
#include "skillzip/router.hpp"

namespace skillzip::test {

// Small three-task fixture compressed into a registry with tasks math, code
// and law over one or two layers.
struct ServedFixture {
  SynthFixture synth;
  CompressOutput compressed;
};

inline ServedFixture make_served(std::uint64_t seed, bool two_layers = false) {
  SynthSpec spec;
  spec.layers = {{"l0", 32, 24}};
  if (two_layers) spec.layers.push_back({"l1", 16, 16});
  spec.task_rank = 4;
  spec.calib_tokens = 32;
  spec.eval_tokens = 16;
  spec.outliers = {1, 20.0, 4.0};
  spec.seed = seed;
  ServedFixture f{make_synth_fixture(spec), {}};
  const char* names[] = {"math", "code", "law"};
  for (std::size_t k = 0; k < f.synth.tuned.size(); ++k) f.synth.tuned[k].task_id = names[k];
  PipelineConfig cfg;
  cfg.rank = FixedRank{6};
  cfg.n_candidates = 3;
  cfg.seed = seed;
  f.compressed = compress(f.synth.base, f.synth.tuned, f.synth.calib, cfg);
  return f;
}

inline SkillRegistry make_registry(const CompressOutput& out) {
  SkillRegistry reg(out.backbone);
  for (const auto& p : out.packs) reg.add(p);
  return reg;
}

}  // namespace skillzip::test
