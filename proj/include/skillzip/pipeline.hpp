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

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skillzip/archive.hpp"
#include "skillzip/calibration.hpp"
#include "skillzip/delta.hpp"
#include "skillzip/lowrank.hpp"
#include "skillzip/quantizer.hpp"
#include "skillzip/router.hpp"
#include "skillzip/skillpack.hpp"

namespace skillzip {

enum class SvdChoice { kAuto, kJacobi, kRandomized };

// Everything that determines a compression run. Serializes to a canonical
// "key = value" text form (fixed key order, shortest round-trip numbers).
struct PipelineConfig {
  bool merge = true;
  MergePlan merge_plan;
  bool smooth = true;
  double alpha = 0.7;
  double epsilon = 1e-5;
  bool rotate = true;
  std::size_t n_candidates = 10;
  // Rotation loss runs on the trailing fraction of calibration rows.
  double rotation_calib_fraction = 0.5;
  bool gptq = false;
  // nullopt: fixed rank min(C_i, C_o) / 8 per layer.
  std::optional<RankPolicy> rank;
  SvdChoice svd = SvdChoice::kAuto;
  QuantConfig quant;
  std::uint64_t seed = 42;

  void validate() const;
  std::string to_text() const;
  static PipelineConfig from_text(const std::string& text);
  std::string rank_label() const;
};

RankPolicy rank_policy_for(const PipelineConfig& config, std::size_t c_in, std::size_t c_out);
SvdOptions svd_options_for(const PipelineConfig& config, const RankPolicy& policy, std::size_t c_in, std::size_t c_out,
                           std::uint64_t seed);

// Seed for one (task, layer) stream: splitmix64 over the run seed mixed with
// an FNV-1a hash of "task/layer".
std::uint64_t stream_seed(std::uint64_t seed, const std::string& task, const std::string& layer);

struct TunedModel {
  std::string task_id;
  TensorArchive weights;
};

struct CompressOutput {
  TensorArchive backbone;  // base + shared delta (base itself when merge is off)
  std::optional<TaskDelta> shared;
  std::vector<Skillpack> packs;
  Provenance provenance;
};

// One layer's residual delta -> compiled integer layer. Calibration
// activations are raw (unsmoothed) T x C_i rows.
SkillLayerRecord compress_layer(const std::string& task, const std::string& layer, const DenseMatrix& delta,
                                const DenseMatrix& calib, const PipelineConfig& config);

// extract -> (merge -> recenter) -> per task and layer: smooth -> SVD ->
// rotate -> quantize (-> GPTQ). `calib` maps each layer name to activations.
CompressOutput compress(const TensorArchive& base, const std::vector<TunedModel>& tuned, const TensorArchive& calib,
                        const PipelineConfig& config);

struct LayerFidelity {
  std::string name;
  double rel_error = 0.0;
  double signal_norm = 0.0;  // ||X Delta||_F
  std::size_t rank = 0;
  std::uint64_t dense_flops = 0;
  std::uint64_t low_rank_flops = 0;
  std::size_t mid_saturated = 0;
  std::size_t x_saturated = 0;
  double eval_ms = 0.0;
};

struct FidelityReport {
  std::string method;
  std::string task_id;
  std::vector<LayerFidelity> layers;
  double aggregate_error = 0.0;  // weighted by ||X Delta||^2
  double compression_ratio = 0.0;
  std::size_t stored_bytes = 0;
  std::size_t dense_bytes = 0;
  double compress_ms = 0.0;
  double eval_ms = 0.0;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

// ||X D - approx||_F / max(||X D||_F, floor) per layer, aggregated by signal
// energy. `approx` produces the method's estimate of X D for a layer.
using DeltaApprox = std::function<DenseMatrix(const std::string& layer, const DenseMatrix& x, LayerFidelity& info)>;
FidelityReport evaluate_delta(const std::string& method, const TaskDelta& target, const TensorArchive& eval_acts,
                              const DeltaApprox& approx);

constexpr double kErrorFloor = 1e-12;

// Fidelity of a skillpack running on `backbone` against tuned weights, all
// relative to base. Delta = tuned - base; estimate = X (backbone - base) +
// forward_quantized(pack layer, X).
FidelityReport evaluate_pack(const TensorArchive& base, const TensorArchive& backbone, const TensorArchive& tuned,
                             const Skillpack& pack, const TensorArchive& eval_acts);

// Comparison compressors for one tuned model. Known methods: "svd-fp",
// "bitdelta", "skillzip". Others can be registered by name.
using BaselineMethod = std::function<FidelityReport(const TensorArchive& base, const TensorArchive& tuned,
                                                    const TensorArchive& calib, const TensorArchive& eval_acts,
                                                    const PipelineConfig& config)>;
void register_baseline(const std::string& name, BaselineMethod method);
std::vector<std::string> baseline_names();
FidelityReport run_baseline(const std::string& method, const TensorArchive& base, const TensorArchive& tuned,
                            const TensorArchive& calib, const TensorArchive& eval_acts, const PipelineConfig& config);

struct Similarity {
  double cosine = 0.0;
  double sign_consistency = 0.0;
};
// Cosine over the flattened concatenation of all layers (in `a`'s order);
// sign consistency is the mean of sign(a) * sign(b) over positions nonzero in
// both (0 when there are none).
Similarity diag_similarity(const TaskDelta& a, const TaskDelta& b);

struct OpTiming {
  std::string name;
  double median_ms = 0.0;
  std::uint64_t flops = 0;
};

struct BenchReport {
  std::size_t requests = 0;
  std::size_t tokens = 0;
  int repeats = 0;
  bool outputs_identical = true;
  std::uint64_t dense_flops = 0;
  std::uint64_t low_rank_flops = 0;
  std::vector<OpTiming> ops;
  double tokens_per_second = 0.0;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

// Times batched dispatch over the stream plus, per request, the dense f32
// delta path (X times the dequantized A_hat B_hat) against the integer
// low-rank path. Median over repeats.
BenchReport run_bench(const SkillRegistry& registry, const std::vector<ForwardRequest>& requests, int repeats,
                      std::vector<DenseMatrix>* outputs = nullptr);

struct PathTiming {
  FlopCount flops;
  double dense_ms = 0.0;
  double low_rank_ms = 0.0;
};
// Synthetic microbench: T x C_i input through a dense C_i x C_o f32 delta vs
// a rank-R int8 layer.
PathTiming bench_paths(std::size_t tokens, std::size_t c_in, std::size_t c_out, std::size_t rank, int repeats,
                       std::uint64_t seed);

// Synthetic multi-task fixture: deltas = D^-1 (S + T_k) per layer, where S is
// a dense shared component, T_k a task-specific low-rank term with
// geometrically decaying spectrum, and D scales outlier input channels by the
// outlier ratio (those weight rows are small where activations are large).
struct SynthLayer {
  std::string name;
  std::size_t c_in = 0;
  std::size_t c_out = 0;
};

struct SynthSpec {
  std::vector<SynthLayer> layers{{"layer0", 256, 256}};
  std::size_t tasks = 3;
  std::size_t task_rank = 8;
  double spectrum_decay = 0.75;
  double shared_to_task = 1.0;  // ||S||_F / ||T_k||_F
  OutlierSpec outliers{2, 100.0, 15.0};
  bool damp_outlier_rows = true;
  std::size_t calib_tokens = 128;
  std::size_t eval_tokens = 128;
  std::uint64_t seed = 1;
};

struct SynthFixture {
  TensorArchive base;
  std::vector<TunedModel> tuned;
  TensorArchive calib;
  TensorArchive eval;
};

SynthFixture make_synth_fixture(const SynthSpec& spec);

// Compresses the fixture under `config` and returns the mean over tasks of
// each task's aggregate relative error on the eval activations.
double fixture_error(const SynthFixture& fixture, const PipelineConfig& config);

}  // namespace skillzip
