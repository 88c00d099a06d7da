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

#include "skillzip/delta.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "skillzip/error.hpp"

namespace skillzip {

void MergePlan::validate() const {
  if (!std::isfinite(coefficient) || coefficient < 0.0 || coefficient > 2.0) {
    throw ValidationError(fmt::format("merge coefficient {} outside [0, 2]", coefficient));
  }
  if (method == MergeMethod::kTrimmedMean && !(trim_fraction >= 0.0 && trim_fraction < 0.5)) {
    throw ValidationError(fmt::format("trim fraction {} outside [0, 0.5)", trim_fraction));
  }
}

TaskDelta extract_delta(const TensorArchive& base, const TensorArchive& tuned, std::string task_id) {
  TaskDelta delta{std::move(task_id), {}};
  if (base.size() != tuned.size()) {
    throw ShapeError(fmt::format("task '{}': base has {} layers, tuned has {}", delta.task_id,
                                 base.size(), tuned.size()));
  }
  for (const auto& [name, b] : base.entries()) {
    if (!tuned.contains(name)) {
      throw ShapeError(fmt::format("task '{}': layer '{}' missing from tuned weights", delta.task_id, name));
    }
    const DenseMatrix& t = tuned.at(name);
    if (!t.same_shape(b)) {
      throw ShapeError(fmt::format("task '{}': layer '{}' is {}x{} in base but {}x{} in tuned",
                                   delta.task_id, name, b.rows(), b.cols(), t.rows(), t.cols()));
    }
    delta.layers.add(name, subtract(t, b));
  }
  return delta;
}

namespace {
void check_same_layers(const TaskDelta& ref, const TaskDelta& other) {
  if (ref.layers.size() != other.layers.size()) {
    throw ShapeError(fmt::format("task '{}' has {} layers, task '{}' has {}", ref.task_id,
                                 ref.layers.size(), other.task_id, other.layers.size()));
  }
  for (const auto& [name, m] : ref.layers.entries()) {
    if (!other.layers.contains(name)) {
      throw ShapeError(fmt::format("layer '{}' missing from task '{}'", name, other.task_id));
    }
    if (!other.layers.at(name).same_shape(m)) {
      throw ShapeError(fmt::format("layer '{}' shape differs in task '{}'", name, other.task_id));
    }
  }
}
}  // namespace

TaskDelta merge_shared(std::span<const TaskDelta> deltas, const MergePlan& plan) {
  plan.validate();
  if (deltas.size() < 2) throw ValidationError("merge needs at least two deltas");
  for (std::size_t i = 1; i < deltas.size(); ++i) check_same_layers(deltas[0], deltas[i]);

  const std::size_t k = deltas.size();
  const std::size_t trim =
      plan.method == MergeMethod::kTrimmedMean ? static_cast<std::size_t>(std::floor(plan.trim_fraction * k)) : 0;
  const std::size_t kept = k - 2 * trim;

  TaskDelta shared{"shared", {}};
  std::vector<float> sample(k);
  for (const auto& [name, first] : deltas[0].layers.entries()) {
    std::vector<const DenseMatrix*> srcs;
    for (const auto& d : deltas) srcs.push_back(&d.layers.at(name));
    DenseMatrix out(first.rows(), first.cols());
    auto o = out.values();
    for (std::size_t e = 0; e < o.size(); ++e) {
      for (std::size_t i = 0; i < k; ++i) sample[i] = srcs[i]->values()[e];
      std::sort(sample.begin(), sample.end());
      double sum = 0.0;
      for (std::size_t i = trim; i < trim + kept; ++i) sum += sample[i];
      o[e] = static_cast<float>(plan.coefficient * (sum / static_cast<double>(kept)));
    }
    shared.layers.add(name, std::move(out));
  }
  return shared;
}

Recentered recenter(std::span<const TaskDelta> deltas, const TaskDelta& shared) {
  Recentered out{shared, {}};
  out.backbone_update.task_id = "shared";
  for (const auto& d : deltas) {
    check_same_layers(shared, d);
    TaskDelta residual{d.task_id, {}};
    for (const auto& [name, m] : d.layers.entries()) {
      residual.layers.add(name, subtract(m, shared.layers.at(name)));
    }
    out.residuals.push_back(std::move(residual));
  }
  return out;
}

TensorArchive apply_update(const TensorArchive& base, const TaskDelta& update) {
  TensorArchive out;
  for (const auto& [name, m] : base.entries()) {
    if (!update.layers.contains(name)) {
      throw ShapeError(fmt::format("update lacks layer '{}'", name));
    }
    out.add(name, add(m, update.layers.at(name)));
  }
  return out;
}

}  // namespace skillzip
