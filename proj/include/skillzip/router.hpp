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

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "skillzip/archive.hpp"
#include "skillzip/kernel.hpp"
#include "skillzip/skillpack.hpp"

namespace skillzip {

struct ForwardRequest {
  std::string task_id;
  std::string layer;  // empty: the backbone's only layer
  DenseMatrix x;      // T x C_i
};

// Backbone weights plus the loaded skillpacks, keyed by task. Immutable once
// built; lookups hand out shared instances.
class SkillRegistry {
 public:
  explicit SkillRegistry(TensorArchive backbone);

  // Throws ValidationError on a duplicate task or a pack layer that the
  // backbone lacks or whose shape differs.
  void add(Skillpack pack);

  bool contains(const std::string& task_id) const { return packs_.count(task_id) != 0; }
  std::shared_ptr<const Skillpack> find(const std::string& task_id) const;
  const TensorArchive& backbone() const { return backbone_; }
  std::vector<std::string> tasks() const;

  // Resolves an empty layer name to the single backbone layer.
  const std::string& resolve_layer(const std::string& layer) const;

 private:
  TensorArchive backbone_;
  std::map<std::string, std::shared_ptr<const Skillpack>> packs_;
};

// Maps a request to a task id. The default passes the request's own label
// through; a learned classifier can implement this interface instead.
class Router {
 public:
  virtual ~Router() = default;
  virtual std::string route(const ForwardRequest& request) const = 0;
};

class LabelRouter final : public Router {
 public:
  explicit LabelRouter(const SkillRegistry& registry) : registry_(registry) {}
  // Returns the label when registered, otherwise throws RoutingError.
  std::string route(const ForwardRequest& request) const override;

 private:
  const SkillRegistry& registry_;
};

// Requests sharing (task, layer), in order of first appearance; indices
// ascend within each group.
struct RequestGroup {
  std::string task_id;
  std::string layer;
  std::vector<std::size_t> indices;
};
std::vector<RequestGroup> group_requests(const std::vector<ForwardRequest>& batch, const Router& router,
                                         const SkillRegistry& registry);

// Routes every request first (any RoutingError aborts before compute), runs
// forward_full once per group on the vertically stacked inputs, then
// scatters rows back so outputs follow the original request order.
std::vector<DenseMatrix> dispatch_batch(const std::vector<ForwardRequest>& batch, const SkillRegistry& registry,
                                        ForwardStats* stats = nullptr);
std::vector<DenseMatrix> dispatch_batch(const std::vector<ForwardRequest>& batch, const SkillRegistry& registry,
                                        const Router& router, ForwardStats* stats = nullptr);

// One forward_full per request, in order.
std::vector<DenseMatrix> dispatch_sequential(const std::vector<ForwardRequest>& batch, const SkillRegistry& registry);

// Offline request stream: one JSON object per line,
//   {"task": "math", "layer": "l0", "x": [[...], ...]}
// or with "x": "inputs.ftz#entry" naming an FTZ entry (relative paths
// resolve against base_dir). Blank lines are skipped. Errors carry the
// 1-based line number.
std::vector<ForwardRequest> parse_request_stream(const std::string& text, const std::filesystem::path& base_dir);

// Outputs keyed "0", "1", ... by request index.
TensorArchive outputs_to_archive(const std::vector<DenseMatrix>& outputs);

}  // namespace skillzip
