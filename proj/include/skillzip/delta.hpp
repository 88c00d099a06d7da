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

#include <span>
#include <string>
#include <vector>

#include "skillzip/archive.hpp"

namespace skillzip {

// Per-layer weight difference of one fine-tuned model against the base.
struct TaskDelta {
  std::string task_id;
  TensorArchive layers;
};

enum class MergeMethod { kMean, kTrimmedMean };

struct MergePlan {
  MergeMethod method = MergeMethod::kMean;
  double trim_fraction = 0.0;  // tau in [0, 0.5), trimmed-mean only
  double coefficient = 1.0;    // lambda in [0, 2]

  void validate() const;
};

// tuned - base, layer by layer. Entry names and shapes must match.
TaskDelta extract_delta(const TensorArchive& base, const TensorArchive& tuned, std::string task_id);

// Elementwise merge of K >= 2 deltas over identical layer sets. Mean:
// lambda * (1/K) * sum. Trimmed mean drops floor(tau*K) values from each
// tail of every element's sorted sample, averages the rest, then scales by
// lambda. Sums are taken in f64 over sorted values, so the result does not
// depend on the order of `deltas`.
TaskDelta merge_shared(std::span<const TaskDelta> deltas, const MergePlan& plan);

struct Recentered {
  TaskDelta backbone_update;       // equals the shared delta
  std::vector<TaskDelta> residuals;  // delta_i - shared, one per input
};

Recentered recenter(std::span<const TaskDelta> deltas, const TaskDelta& shared);

// Adds `update` into `base` layer by layer (same layout required).
TensorArchive apply_update(const TensorArchive& base, const TaskDelta& update);

}  // namespace skillzip
