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

// skillzip command-line driver.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "skillzip/archive.hpp"
#include "skillzip/bytes.hpp"
#include "skillzip/error.hpp"
#include "skillzip/parallel.hpp"
#include "skillzip/pipeline.hpp"
#include "skillzip/router.hpp"
#include "skillzip/skillpack.hpp"

namespace fs = std::filesystem;
using namespace skillzip;

namespace {

struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
  int threads = 1;
};

PipelineConfig load_config(const Common& c) {
  PipelineConfig cfg;
  if (!c.config_path.empty()) {
    const auto bytes = read_file(c.config_path);
    cfg = PipelineConfig::from_text(std::string(bytes.begin(), bytes.end()));
  }
  if (c.seed_set) cfg.seed = c.seed;
  cfg.validate();
  return cfg;
}

fs::path out_dir(const Common& c) {
  fs::path dir = c.out.empty() ? fs::path(".") : fs::path(c.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
  return dir;
}

// "task=path" or a bare path whose stem is the task id.
TunedModel load_tuned(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) return {fs::path(spec).stem().string(), archive_read(spec)};
  return {spec.substr(0, eq), archive_read(spec.substr(eq + 1))};
}

void emit_json(const Common& c, const std::string& file, const nlohmann::json& j) {
  if (c.out.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    write_text_atomic(out_dir(c) / file, j.dump(2) + "\n");
  }
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "PipelineConfig text file");
  app->add_option_function<std::uint64_t>(
      "--seed", [&c](std::uint64_t s) { c.seed = s, c.seed_set = true; }, "Override the config seed");
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"skillzip: multi-task delta compression with integer low-rank skillpacks"};
  app.require_subcommand(1);
  Common common;

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "Write a synthetic multi-task fixture");
  add_common(gen, common);
  std::size_t g_tasks = 3, g_dim = 256, g_layers = 1, g_rank = 8, g_tokens = 128, g_outliers = 2;
  double g_ratio = 100.0;
  gen->add_option("--tasks", g_tasks)->check(CLI::PositiveNumber);
  gen->add_option("--dim", g_dim)->check(CLI::PositiveNumber);
  gen->add_option("--layers", g_layers)->check(CLI::PositiveNumber);
  gen->add_option("--task-rank", g_rank)->check(CLI::PositiveNumber);
  gen->add_option("--tokens", g_tokens)->check(CLI::PositiveNumber);
  gen->add_option("--outlier-channels", g_outliers);
  gen->add_option("--outlier-ratio", g_ratio);

  // compress
  auto* comp = app.add_subcommand("compress", "Compress tuned models into skillpacks");
  add_common(comp, common);
  std::string c_base, c_calib;
  std::vector<std::string> c_tuned;
  comp->add_option("--base", c_base)->required();
  comp->add_option("--tuned", c_tuned, "task=path.ftz (repeatable)")->required();
  comp->add_option("--calib", c_calib)->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Fidelity of a skillpack against the tuned weights");
  add_common(ev, common);
  std::string e_base, e_backbone, e_tuned, e_pack, e_acts;
  ev->add_option("--base", e_base)->required();
  ev->add_option("--backbone", e_backbone, "Defaults to --base");
  ev->add_option("--tuned", e_tuned)->required();
  ev->add_option("--pack", e_pack)->required();
  ev->add_option("--activations", e_acts)->required();

  // bench
  auto* bn = app.add_subcommand("bench", "Serve a request stream and time the paths");
  add_common(bn, common);
  std::string b_backbone, b_requests;
  std::vector<std::string> b_packs;
  int b_repeats = 3;
  bn->add_option("--backbone", b_backbone)->required();
  bn->add_option("--pack", b_packs, "Skillpack file (repeatable)");
  bn->add_option("--requests", b_requests, "JSON-lines request stream")->required();
  bn->add_option("--repeats", b_repeats)->check(CLI::PositiveNumber);

  // baseline
  auto* bl = app.add_subcommand("baseline", "Run a comparison method on one tuned model");
  add_common(bl, common);
  std::string l_method, l_base, l_tuned, l_calib, l_eval;
  bl->add_option("--method", l_method, "svd-fp | bitdelta | skillzip")->required();
  bl->add_option("--base", l_base)->required();
  bl->add_option("--tuned", l_tuned)->required();
  bl->add_option("--calib", l_calib)->required();
  bl->add_option("--eval", l_eval)->required();

  // diag
  auto* dg = app.add_subcommand("diag", "Cosine and sign consistency between two deltas");
  add_common(dg, common);
  std::string d_a, d_b, d_base;
  dg->add_option("--a", d_a, "Tuned archive (or delta archive without --base)")->required();
  dg->add_option("--b", d_b)->required();
  dg->add_option("--base", d_base, "Subtract this base from both");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    set_num_threads(static_cast<unsigned>(common.threads));

    if (gen->parsed()) {
      SynthSpec spec;
      spec.layers.clear();
      for (std::size_t i = 0; i < g_layers; ++i) spec.layers.push_back({fmt::format("layer{}", i), g_dim, g_dim});
      spec.tasks = g_tasks;
      spec.task_rank = g_rank;
      spec.calib_tokens = spec.eval_tokens = g_tokens;
      spec.outliers.n_channels = g_outliers;
      spec.outliers.magnitude_ratio = g_ratio;
      spec.seed = common.seed_set ? common.seed : 1;
      const SynthFixture fx = make_synth_fixture(spec);
      const fs::path dir = out_dir(common);
      archive_write(dir / "base.ftz", fx.base);
      archive_write(dir / "calib.ftz", fx.calib);
      archive_write(dir / "eval.ftz", fx.eval);
      for (const auto& t : fx.tuned) archive_write(dir / (t.task_id + ".ftz"), t.weights);
      fmt::print("wrote {} tasks, {} layers to {}\n", fx.tuned.size(), spec.layers.size(), dir.string());
    } else if (comp->parsed()) {
      const PipelineConfig cfg = load_config(common);
      const TensorArchive base = archive_read(c_base);
      const TensorArchive calib = archive_read(c_calib);
      std::vector<TunedModel> tuned;
      for (const auto& s : c_tuned) tuned.push_back(load_tuned(s));
      const CompressOutput out = compress(base, tuned, calib, cfg);
      const fs::path dir = out_dir(common);
      archive_write(dir / "backbone.ftz", out.backbone);
      write_text_atomic(dir / "config.txt", cfg.to_text());
      fmt::print("{:<16} {:>8} {:>12} {:>10}\n", "task", "layers", "bytes", "ratio");
      for (const auto& p : out.packs) {
        const fs::path path = dir / (p.task_id + ".skz");
        write_skillpack(p, path, out.provenance);
        const auto n = serialize_skillpack(p).size();
        fmt::print("{:<16} {:>8} {:>12} {:>10.2f}\n", p.task_id, p.layers.size(), n, compression_ratio(p));
      }
    } else if (ev->parsed()) {
      const TensorArchive base = archive_read(e_base);
      const TensorArchive backbone = e_backbone.empty() ? base : archive_read(e_backbone);
      const FidelityReport rep = evaluate_pack(base, backbone, archive_read(e_tuned), read_skillpack(e_pack),
                                               archive_read(e_acts));
      emit_json(common, "eval.json", rep.to_json());
      std::cout << rep.to_table();
    } else if (bn->parsed()) {
      SkillRegistry registry(archive_read(b_backbone));
      for (const auto& p : b_packs) registry.add(read_skillpack(p));
      const auto bytes = read_file(b_requests);
      const auto requests =
          parse_request_stream(std::string(bytes.begin(), bytes.end()), fs::path(b_requests).parent_path());
      std::vector<DenseMatrix> outputs;
      const BenchReport rep = run_bench(registry, requests, b_repeats, &outputs);
      if (!common.out.empty() && !outputs.empty()) archive_write(out_dir(common) / "outputs.ftz", outputs_to_archive(outputs));
      emit_json(common, "bench.json", rep.to_json());
      std::cout << rep.to_table();
    } else if (bl->parsed()) {
      const PipelineConfig cfg = load_config(common);
      const FidelityReport rep = run_baseline(l_method, archive_read(l_base), archive_read(l_tuned),
                                              archive_read(l_calib), archive_read(l_eval), cfg);
      emit_json(common, fmt::format("baseline_{}.json", l_method), rep.to_json());
      std::cout << rep.to_table();
    } else if (dg->parsed()) {
      TaskDelta a{"a", archive_read(d_a)};
      TaskDelta b{"b", archive_read(d_b)};
      if (!d_base.empty()) {
        const TensorArchive base = archive_read(d_base);
        a = extract_delta(base, a.layers, "a");
        b = extract_delta(base, b.layers, "b");
      }
      const Similarity s = diag_similarity(a, b);
      emit_json(common, "diag.json", {{"cosine", s.cosine}, {"sign_consistency", s.sign_consistency}});
      fmt::print("cosine {:.6f}  sign_consistency {:.6f}\n", s.cosine, s.sign_consistency);
    }
  } catch (const IoError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  }
  return 0;
}
