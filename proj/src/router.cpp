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

#include "skillzip/router.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <optional>
#include <sstream>

#include "skillzip/error.hpp"

namespace skillzip {

SkillRegistry::SkillRegistry(TensorArchive backbone) : backbone_(std::move(backbone)) {
  if (backbone_.empty()) throw ValidationError("registry backbone has no layers");
}

void SkillRegistry::add(Skillpack pack) {
  if (contains(pack.task_id)) throw ValidationError(fmt::format("task '{}' registered twice", pack.task_id));
  for (const auto& rec : pack.layers) {
    if (!backbone_.contains(rec.name)) {
      throw ValidationError(fmt::format("pack '{}' layer '{}' not in backbone", pack.task_id, rec.name));
    }
    const auto& w = backbone_.at(rec.name);
    if (w.rows() != rec.layer.c_in() || w.cols() != rec.layer.c_out()) {
      throw ValidationError(fmt::format("pack '{}' layer '{}' is {}x{}, backbone is {}x{}", pack.task_id, rec.name,
                                        rec.layer.c_in(), rec.layer.c_out(), w.rows(), w.cols()));
    }
  }
  auto id = pack.task_id;
  packs_.emplace(std::move(id), std::make_shared<const Skillpack>(std::move(pack)));
}

std::shared_ptr<const Skillpack> SkillRegistry::find(const std::string& task_id) const {
  auto it = packs_.find(task_id);
  return it == packs_.end() ? nullptr : it->second;
}

std::vector<std::string> SkillRegistry::tasks() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : packs_) out.push_back(k);
  return out;
}

const std::string& SkillRegistry::resolve_layer(const std::string& layer) const {
  if (!layer.empty()) {
    if (!backbone_.contains(layer)) throw ValidationError(fmt::format("unknown layer '{}'", layer));
    for (const auto& e : backbone_.entries()) {
      if (e.name == layer) return e.name;
    }
  }
  if (backbone_.size() != 1) throw ValidationError("request must name a layer when the backbone has several");
  return backbone_.entries().front().name;
}

std::string LabelRouter::route(const ForwardRequest& request) const {
  if (!registry_.contains(request.task_id)) throw RoutingError(request.task_id);
  return request.task_id;
}

std::vector<RequestGroup> group_requests(const std::vector<ForwardRequest>& batch, const Router& router,
                                         const SkillRegistry& registry) {
  std::vector<RequestGroup> groups;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::string task = router.route(batch[i]);
    const std::string& layer = registry.resolve_layer(batch[i].layer);
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const RequestGroup& g) { return g.task_id == task && g.layer == layer; });
    if (it == groups.end()) {
      groups.push_back({task, layer, {i}});
    } else {
      it->indices.push_back(i);
    }
  }
  return groups;
}

namespace {
const CompiledSkillLayer* layer_for(const SkillRegistry& registry, const std::string& task, const std::string& layer,
                                    std::shared_ptr<const Skillpack>& hold) {
  hold = registry.find(task);
  if (!hold) throw RoutingError(task);
  const SkillLayerRecord* rec = hold->find(layer);
  return rec ? &rec->layer : nullptr;
}
}  // namespace

std::vector<DenseMatrix> dispatch_batch(const std::vector<ForwardRequest>& batch, const SkillRegistry& registry,
                                        const Router& router, ForwardStats* stats) {
  const auto groups = group_requests(batch, router, registry);
  std::vector<std::optional<DenseMatrix>> slots(batch.size());
  for (const auto& g : groups) {
    std::shared_ptr<const Skillpack> hold;
    const CompiledSkillLayer* layer = layer_for(registry, g.task_id, g.layer, hold);
    const DenseMatrix& w = registry.backbone().at(g.layer);
    std::vector<DenseMatrix> parts;
    parts.reserve(g.indices.size());
    for (std::size_t i : g.indices) {
      if (batch[i].x.cols() != w.rows()) {
        throw ShapeError(fmt::format("request {} has {} columns, layer '{}' expects {}", i, batch[i].x.cols(), g.layer,
                                     w.rows()));
      }
      parts.push_back(batch[i].x);
    }
    const DenseMatrix y = forward_full(w, layer, vstack(parts), stats);
    std::size_t row = 0;
    for (std::size_t i : g.indices) {
      const std::size_t t = batch[i].x.rows();
      slots[i] = slice_rows(y, row, row + t);
      row += t;
    }
  }
  std::vector<DenseMatrix> out;
  out.reserve(batch.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

std::vector<DenseMatrix> dispatch_batch(const std::vector<ForwardRequest>& batch, const SkillRegistry& registry,
                                        ForwardStats* stats) {
  return dispatch_batch(batch, registry, LabelRouter(registry), stats);
}

std::vector<DenseMatrix> dispatch_sequential(const std::vector<ForwardRequest>& batch, const SkillRegistry& registry) {
  LabelRouter router(registry);
  std::vector<DenseMatrix> out;
  out.reserve(batch.size());
  for (const auto& req : batch) {
    const std::string task = router.route(req);
    const std::string& layer_name = registry.resolve_layer(req.layer);
    std::shared_ptr<const Skillpack> hold;
    const CompiledSkillLayer* layer = layer_for(registry, task, layer_name, hold);
    out.push_back(forward_full(registry.backbone().at(layer_name), layer, req.x));
  }
  return out;
}

namespace {
DenseMatrix rows_from_json(const nlohmann::json& x) {
  if (!x.is_array() || x.empty()) throw ValidationError("'x' must be a nonempty array");
  if (x.front().is_number()) {
    std::vector<float> v;
    for (const auto& e : x) v.push_back(e.get<float>());
    return {1, v.size(), std::move(v)};
  }
  const std::size_t cols = x.front().size();
  std::vector<float> v;
  for (const auto& row : x) {
    if (!row.is_array() || row.size() != cols) throw ValidationError("'x' rows must be arrays of equal length");
    for (const auto& e : row) v.push_back(e.get<float>());
  }
  return {x.size(), cols, std::move(v)};
}
}  // namespace

std::vector<ForwardRequest> parse_request_stream(const std::string& text, const std::filesystem::path& base_dir) {
  std::vector<ForwardRequest> out;
  std::map<std::filesystem::path, TensorArchive> archives;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ForwardRequest req{j.at("task").get<std::string>(), j.value("layer", std::string{}), DenseMatrix(1, 1)};
      const auto& x = j.at("x");
      if (x.is_string()) {
        const std::string ref = x.get<std::string>();
        const auto hash = ref.rfind('#');
        if (hash == std::string::npos) throw ValidationError("'x' reference must look like file.ftz#entry");
        std::filesystem::path file = ref.substr(0, hash);
        if (file.is_relative()) file = base_dir / file;
        auto it = archives.find(file);
        if (it == archives.end()) it = archives.emplace(file, archive_read(file)).first;
        req.x = it->second.at(ref.substr(hash + 1));
      } else {
        req.x = rows_from_json(x);
      }
      out.push_back(std::move(req));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(fmt::format("request stream line {}: {}", line_no, e.what()));
    } catch (const IoError&) {
      throw;
    } catch (const Error& e) {
      throw ValidationError(fmt::format("request stream line {}: {}", line_no, e.what()));
    }
  }
  return out;
}

TensorArchive outputs_to_archive(const std::vector<DenseMatrix>& outputs) {
  TensorArchive a;
  for (std::size_t i = 0; i < outputs.size(); ++i) a.add(std::to_string(i), outputs[i]);
  return a;
}

}  // namespace skillzip
