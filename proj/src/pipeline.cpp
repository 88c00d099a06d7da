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

#include "skillzip/pipeline.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <mutex>
#include <set>
#include <sstream>

#include "skillzip/error.hpp"
#include "skillzip/kernel.hpp"
#include "skillzip/prng.hpp"
#include "skillzip/smoothing.hpp"

namespace skillzip {

namespace {

std::string on_off(bool v) { return v ? "on" : "off"; }

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ValidationError(fmt::format("config '{}': expected on/off, got '{}'", key, v));
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ValidationError(fmt::format("config '{}': expected a number, got '{}'", key, v));
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    if (v.empty() || v.front() == '-') throw std::invalid_argument(v);
    const auto n = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ValidationError(fmt::format("config '{}': expected a nonnegative integer, got '{}'", key, v));
  }
}

int parse_bits(const std::string& key, const std::string& v) {
  const auto b = parse_u64(key, v);
  if (b != 4 && b != 8) throw ValidationError(fmt::format("config '{}': bits must be 4 or 8, got {}", key, b));
  return static_cast<int>(b);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string_view svd_name(SvdChoice c) {
  switch (c) {
    case SvdChoice::kJacobi: return "jacobi";
    case SvdChoice::kRandomized: return "randomized";
    default: return "auto";
  }
}

std::string_view merge_name(MergeMethod m) { return m == MergeMethod::kMean ? "mean" : "trimmed-mean"; }

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void PipelineConfig::validate() const {
  merge_plan.validate();
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError(fmt::format("alpha must be in [0, 1], got {}", alpha));
  if (!(epsilon > 0.0)) throw ValidationError(fmt::format("epsilon must be positive, got {}", epsilon));
  if (!(rotation_calib_fraction > 0.0 && rotation_calib_fraction <= 1.0)) {
    throw ValidationError(fmt::format("rotation_calib_fraction must be in (0, 1], got {}", rotation_calib_fraction));
  }
  if (rank) {
    if (const auto* f = std::get_if<FixedRank>(&*rank); f && f->rank == 0) {
      throw ValidationError("rank must be at least 1");
    }
    if (const auto* e = std::get_if<EnergyRank>(&*rank); e && !(e->fraction > 0.0 && e->fraction <= 1.0)) {
      throw ValidationError(fmt::format("energy fraction must be in (0, 1], got {}", e->fraction));
    }
  }
  quant.validate();
}

std::string PipelineConfig::rank_label() const {
  if (!rank) return "auto";
  if (const auto* f = std::get_if<FixedRank>(&*rank)) return fmt::format("fixed:{}", f->rank);
  return fmt::format("energy:{}", std::get<EnergyRank>(*rank).fraction);
}

std::string PipelineConfig::to_text() const {
  std::string out;
  auto put = [&](std::string_view k, const std::string& v) { out += fmt::format("{} = {}\n", k, v); };
  put("merge", on_off(merge));
  put("merge_method", std::string(merge_name(merge_plan.method)));
  put("trim_fraction", fmt::format("{}", merge_plan.trim_fraction));
  put("merge_coefficient", fmt::format("{}", merge_plan.coefficient));
  put("smooth", on_off(smooth));
  put("alpha", fmt::format("{}", alpha));
  put("epsilon", fmt::format("{}", epsilon));
  put("rotate", on_off(rotate));
  put("n_candidates", fmt::format("{}", n_candidates));
  put("rotation_calib_fraction", fmt::format("{}", rotation_calib_fraction));
  put("gptq", on_off(gptq));
  put("rank", rank_label());
  put("svd", std::string(svd_name(svd)));
  put("bits_x", fmt::format("{}", quant.bits_x));
  put("bits_a", fmt::format("{}", quant.bits_a));
  put("bits_b", fmt::format("{}", quant.bits_b));
  put("gran_x", std::string(to_string(quant.gran_x)));
  put("gran_b", std::string(to_string(quant.gran_b)));
  put("seed", fmt::format("{}", seed));
  return out;
}

PipelineConfig PipelineConfig::from_text(const std::string& text) {
  PipelineConfig c;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError(fmt::format("config line {}: expected 'key = value'", line_no));
    const std::string k = trim(line.substr(0, eq));
    const std::string v = trim(line.substr(eq + 1));
    if (!seen.insert(k).second) throw ValidationError(fmt::format("config line {}: duplicate key '{}'", line_no, k));
    if (k == "merge") {
      c.merge = parse_bool(k, v);
    } else if (k == "merge_method") {
      if (v == "mean") {
        c.merge_plan.method = MergeMethod::kMean;
      } else if (v == "trimmed-mean") {
        c.merge_plan.method = MergeMethod::kTrimmedMean;
      } else {
        throw ValidationError(fmt::format("config '{}': unknown merge method '{}'", k, v));
      }
    } else if (k == "trim_fraction") {
      c.merge_plan.trim_fraction = parse_double(k, v);
    } else if (k == "merge_coefficient") {
      c.merge_plan.coefficient = parse_double(k, v);
    } else if (k == "smooth") {
      c.smooth = parse_bool(k, v);
    } else if (k == "alpha") {
      c.alpha = parse_double(k, v);
    } else if (k == "epsilon") {
      c.epsilon = parse_double(k, v);
    } else if (k == "rotate") {
      c.rotate = parse_bool(k, v);
    } else if (k == "n_candidates") {
      c.n_candidates = parse_u64(k, v);
    } else if (k == "rotation_calib_fraction") {
      c.rotation_calib_fraction = parse_double(k, v);
    } else if (k == "gptq") {
      c.gptq = parse_bool(k, v);
    } else if (k == "rank") {
      if (v == "auto") {
        c.rank.reset();
      } else if (v.rfind("fixed:", 0) == 0) {
        c.rank = FixedRank{parse_u64(k, v.substr(6))};
      } else if (v.rfind("energy:", 0) == 0) {
        c.rank = EnergyRank{parse_double(k, v.substr(7))};
      } else {
        throw ValidationError(fmt::format("config 'rank': expected auto, fixed:N or energy:F, got '{}'", v));
      }
    } else if (k == "svd") {
      if (v == "auto") {
        c.svd = SvdChoice::kAuto;
      } else if (v == "jacobi") {
        c.svd = SvdChoice::kJacobi;
      } else if (v == "randomized") {
        c.svd = SvdChoice::kRandomized;
      } else {
        throw ValidationError(fmt::format("config 'svd': unknown method '{}'", v));
      }
    } else if (k == "bits_x") {
      c.quant.bits_x = parse_bits(k, v);
    } else if (k == "bits_a") {
      c.quant.bits_a = parse_bits(k, v);
    } else if (k == "bits_b") {
      c.quant.bits_b = parse_bits(k, v);
    } else if (k == "gran_x") {
      c.quant.gran_x = granularity_from_string(v);
    } else if (k == "gran_b") {
      c.quant.gran_b = granularity_from_string(v);
    } else if (k == "seed") {
      c.seed = parse_u64(k, v);
    } else {
      throw ValidationError(fmt::format("config line {}: unknown key '{}'", line_no, k));
    }
  }
  c.validate();
  return c;
}

RankPolicy rank_policy_for(const PipelineConfig& config, std::size_t c_in, std::size_t c_out) {
  if (config.rank) return *config.rank;
  return FixedRank{std::max<std::size_t>(1, std::min(c_in, c_out) / 8)};
}

SvdOptions svd_options_for(const PipelineConfig& config, const RankPolicy& policy, std::size_t c_in, std::size_t c_out,
                           std::uint64_t seed) {
  SvdOptions opt;
  opt.seed = seed;
  switch (config.svd) {
    case SvdChoice::kJacobi: opt.method = SvdMethod::kJacobi; break;
    case SvdChoice::kRandomized: opt.method = SvdMethod::kRandomized; break;
    case SvdChoice::kAuto: {
      // Randomized only for a fixed rank well below the smaller dimension.
      const auto* f = std::get_if<FixedRank>(&policy);
      const std::size_t dim = std::min(c_in, c_out);
      opt.method = (f && 2 * (f->rank + opt.oversample) <= dim) ? SvdMethod::kRandomized : SvdMethod::kJacobi;
      break;
    }
  }
  return opt;
}

std::uint64_t stream_seed(std::uint64_t seed, const std::string& task, const std::string& layer) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](std::string_view s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 1099511628211ull;
    }
  };
  mix(task);
  mix("/");
  mix(layer);
  std::uint64_t state = seed ^ h;
  return splitmix64(state);
}

SkillLayerRecord compress_layer(const std::string& task, const std::string& layer, const DenseMatrix& delta,
                                const DenseMatrix& calib, const PipelineConfig& config) {
  if (calib.cols() != delta.rows()) {
    throw ShapeError(fmt::format("layer '{}': calibration has {} channels, delta has {} input rows", layer,
                                 calib.cols(), delta.rows()));
  }
  const std::size_t c_in = delta.rows();
  const std::size_t c_out = delta.cols();
  const std::uint64_t seed = stream_seed(config.seed, task, layer);

  std::vector<float> s(c_in, 1.0f);
  if (config.smooth) {
    ChannelStats stats(c_in);
    stats.accumulate(calib);
    s = compute_smooth(stats.mean_abs(), delta, config.alpha, config.epsilon).s;
  }
  const DenseMatrix w = scale_rows(delta, s);

  const RankPolicy policy = rank_policy_for(config, c_in, c_out);
  const SvdResult svd = truncated_svd(w, policy, svd_options_for(config, policy, c_in, c_out, seed));
  LowRankFactors f = split_factors(svd);

  CompileOptions opts;
  opts.quant = config.quant;
  opts.gptq = config.gptq;

  std::uint32_t candidate = 0;
  if (config.rotate) {
    const std::size_t t = calib.rows();
    const std::size_t held = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                          std::floor(config.rotation_calib_fraction * t)));
    const DenseMatrix slice = slice_rows(calib, t - held, t);
    std::vector<float> inv(c_in);
    for (std::size_t i = 0; i < c_in; ++i) inv[i] = 1.0f / s[i];
    const DenseMatrix xs = scale_columns(slice, inv);
    const DenseMatrix reference = matmul(matmul(xs, f.A), f.B);
    RotationLoss loss = [&](const DenseMatrix& a_rot, const DenseMatrix& b_rot) {
      const CompiledSkillLayer trial = compile_skill_layer(a_rot, b_rot, s, calib, opts);
      return fro_distance(forward_quantized(trial, slice), reference);
    };
    Prng rng(seed ^ 0x9e3779b97f4a7c15ull);
    const RotationChoice choice = select_rotation(f.A, f.B, loss, rng, config.n_candidates);
    candidate = static_cast<std::uint32_t>(choice.candidate_index);
    if (candidate != 0) {
      auto rotated = fold_rotation(f.A, f.B, choice.Q);
      f.A = std::move(rotated.A);
      f.B = std::move(rotated.B);
    }
  }
  return {layer, compile_skill_layer(f.A, f.B, s, calib, opts), candidate};
}

CompressOutput compress(const TensorArchive& base, const std::vector<TunedModel>& tuned, const TensorArchive& calib,
                        const PipelineConfig& config) {
  config.validate();
  if (tuned.empty()) throw ValidationError("compress needs at least one tuned model");
  std::set<std::string> ids;
  for (const auto& t : tuned) {
    if (t.task_id.empty()) throw ValidationError("task id must not be empty");
    if (!ids.insert(t.task_id).second) throw ValidationError(fmt::format("task '{}' given twice", t.task_id));
  }
  for (const auto& e : base.entries()) {
    if (!calib.contains(e.name)) throw ValidationError(fmt::format("no calibration activations for layer '{}'", e.name));
  }

  std::vector<TaskDelta> deltas;
  deltas.reserve(tuned.size());
  for (const auto& t : tuned) deltas.push_back(extract_delta(base, t.weights, t.task_id));

  CompressOutput out;
  std::vector<TaskDelta> residuals;
  if (config.merge) {
    if (deltas.size() < 2) throw ValidationError("merge needs at least two tasks; disable merge for a single task");
    TaskDelta shared = merge_shared(deltas, config.merge_plan);
    Recentered rc = recenter(deltas, shared);
    out.backbone = apply_update(base, rc.backbone_update);
    out.shared = std::move(rc.backbone_update);
    residuals = std::move(rc.residuals);
  } else {
    out.backbone = base;
    residuals = std::move(deltas);
  }

  for (const auto& r : residuals) {
    Skillpack pack{r.task_id, {}};
    for (const auto& e : r.layers.entries()) {
      const std::string ctx = fmt::format("task '{}' layer '{}': ", r.task_id, e.name);
      try {
        pack.layers.push_back(compress_layer(r.task_id, e.name, e.matrix, calib.at(e.name), config));
      } catch (const ShapeError& err) {
        throw ShapeError(ctx + err.what());
      } catch (const NumericError& err) {
        throw NumericError(ctx + err.what());
      } catch (const ValidationError& err) {
        throw ValidationError(ctx + err.what());
      }
    }
    out.packs.push_back(std::move(pack));
  }

  Provenance& p = out.provenance;
  p.merge = config.merge;
  p.merge_method = std::string(merge_name(config.merge_plan.method));
  p.trim_fraction = config.merge_plan.trim_fraction;
  p.merge_coefficient = config.merge_plan.coefficient;
  p.smooth = config.smooth;
  p.alpha = config.alpha;
  p.epsilon = config.epsilon;
  p.rotate = config.rotate;
  p.n_candidates = config.n_candidates;
  p.gptq = config.gptq;
  p.seed = config.seed;
  p.rank_policy = config.rank_label();
  p.quant = config.quant.label();
  return out;
}

nlohmann::json FidelityReport::to_json() const {
  nlohmann::json layers_j = nlohmann::json::array();
  for (const auto& l : layers) {
    layers_j.push_back({{"name", l.name},
                        {"rel_error", l.rel_error},
                        {"signal_norm", l.signal_norm},
                        {"rank", l.rank},
                        {"dense_flops", l.dense_flops},
                        {"low_rank_flops", l.low_rank_flops},
                        {"mid_saturated", l.mid_saturated},
                        {"x_saturated", l.x_saturated},
                        {"eval_ms", l.eval_ms}});
  }
  return {{"method", method},
          {"task", task_id},
          {"layers", layers_j},
          {"aggregate_error", aggregate_error},
          {"compression_ratio", compression_ratio},
          {"stored_bytes", stored_bytes},
          {"dense_bytes", dense_bytes},
          {"compress_ms", compress_ms},
          {"eval_ms", eval_ms}};
}

std::string FidelityReport::to_table() const {
  std::string out = fmt::format("method {}  task {}\n", method, task_id);
  out += fmt::format("{:<24} {:>6} {:>12} {:>12} {:>10}\n", "layer", "rank", "rel_error", "signal", "mid_sat");
  for (const auto& l : layers) {
    out += fmt::format("{:<24} {:>6} {:>12.4e} {:>12.4e} {:>10}\n", l.name, l.rank, l.rel_error, l.signal_norm,
                       l.mid_saturated);
  }
  out += fmt::format("aggregate error {:.4e}  compression {:.2f}x  ({} / {} bytes)\n", aggregate_error,
                     compression_ratio, stored_bytes, dense_bytes);
  return out;
}

FidelityReport evaluate_delta(const std::string& method, const TaskDelta& target, const TensorArchive& eval_acts,
                              const DeltaApprox& approx) {
  FidelityReport rep;
  rep.method = method;
  rep.task_id = target.task_id;
  double num = 0.0;
  double den = 0.0;
  const auto t_all = std::chrono::steady_clock::now();
  for (const auto& e : target.layers.entries()) {
    if (!eval_acts.contains(e.name)) throw ValidationError(fmt::format("no eval activations for layer '{}'", e.name));
    const DenseMatrix& x = eval_acts.at(e.name);
    if (x.cols() != e.matrix.rows()) {
      throw ShapeError(fmt::format("layer '{}': eval activations have {} channels, expected {}", e.name, x.cols(),
                                   e.matrix.rows()));
    }
    LayerFidelity info;
    info.name = e.name;
    const auto t0 = std::chrono::steady_clock::now();
    const DenseMatrix est = approx(e.name, x, info);
    info.eval_ms = ms_since(t0);
    const DenseMatrix ref = matmul(x, e.matrix);
    info.signal_norm = fro_norm(ref);
    info.rel_error = fro_distance(est, ref) / std::max(info.signal_norm, kErrorFloor);
    rep.dense_bytes += 4 * e.matrix.size();
    const double w = info.signal_norm * info.signal_norm;
    num += w * info.rel_error;
    den += w;
    rep.layers.push_back(std::move(info));
  }
  rep.eval_ms = ms_since(t_all);
  if (den > 0.0) {
    rep.aggregate_error = num / den;
  } else if (!rep.layers.empty()) {
    double s = 0.0;
    for (const auto& l : rep.layers) s += l.rel_error;
    rep.aggregate_error = s / static_cast<double>(rep.layers.size());
  }
  return rep;
}

FidelityReport evaluate_pack(const TensorArchive& base, const TensorArchive& backbone, const TensorArchive& tuned,
                             const Skillpack& pack, const TensorArchive& eval_acts) {
  if (!backbone.same_layout(base)) throw ValidationError("backbone and base layouts differ");
  const TaskDelta target = extract_delta(base, tuned, pack.task_id);
  auto approx = [&](const std::string& name, const DenseMatrix& x, LayerFidelity& info) {
    DenseMatrix est = matmul(x, subtract(backbone.at(name), base.at(name)));
    if (const SkillLayerRecord* rec = pack.find(name)) {
      ForwardStats st;
      est = add(est, forward_quantized(rec->layer, x, &st));
      info.rank = rec->layer.rank();
      info.mid_saturated = st.mid_saturated;
      info.x_saturated = st.x_saturated;
      const FlopCount f = count_flops(x.rows(), rec->layer.c_in(), rec->layer.c_out(), rec->layer.rank());
      info.dense_flops = f.dense;
      info.low_rank_flops = f.low_rank;
    }
    return est;
  };
  FidelityReport rep = evaluate_delta("skillzip", target, eval_acts, approx);
  rep.stored_bytes = serialize_skillpack(pack).size();
  rep.compression_ratio = static_cast<double>(rep.dense_bytes) / static_cast<double>(rep.stored_bytes);
  return rep;
}

namespace {

FidelityReport baseline_svd_fp(const TensorArchive& base, const TensorArchive& tuned, const TensorArchive&,
                               const TensorArchive& eval_acts, const PipelineConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  const TaskDelta target = extract_delta(base, tuned, "task");
  std::map<std::string, LowRankFactors> factors;
  std::size_t stored = 0;
  for (const auto& e : target.layers.entries()) {
    const RankPolicy policy = rank_policy_for(config, e.matrix.rows(), e.matrix.cols());
    const auto opt = svd_options_for(config, policy, e.matrix.rows(), e.matrix.cols(),
                                     stream_seed(config.seed, "svd-fp", e.name));
    auto f = split_factors(truncated_svd(e.matrix, policy, opt));
    stored += 4 * (f.A.size() + f.B.size());
    factors.emplace(e.name, std::move(f));
  }
  const double compress_ms = ms_since(t0);
  auto approx = [&](const std::string& name, const DenseMatrix& x, LayerFidelity& info) {
    const auto& f = factors.at(name);
    info.rank = f.A.cols();
    const FlopCount fc = count_flops(x.rows(), f.A.rows(), f.B.cols(), f.A.cols());
    info.dense_flops = fc.dense;
    info.low_rank_flops = fc.low_rank;
    return matmul(matmul(x, f.A), f.B);
  };
  FidelityReport rep = evaluate_delta("svd-fp", target, eval_acts, approx);
  rep.compress_ms = compress_ms;
  rep.stored_bytes = stored;
  rep.compression_ratio = static_cast<double>(rep.dense_bytes) / static_cast<double>(stored);
  return rep;
}

FidelityReport baseline_bitdelta(const TensorArchive& base, const TensorArchive& tuned, const TensorArchive&,
                                 const TensorArchive& eval_acts, const PipelineConfig&) {
  const auto t0 = std::chrono::steady_clock::now();
  const TaskDelta target = extract_delta(base, tuned, "task");
  std::map<std::string, DenseMatrix> recon;
  std::size_t stored = 0;
  for (const auto& e : target.layers.entries()) {
    const BitDeltaResult b = bitdelta_compress(e.matrix);
    stored += b.storage_bytes();
    recon.emplace(e.name, b.reconstruct());
  }
  const double compress_ms = ms_since(t0);
  auto approx = [&](const std::string& name, const DenseMatrix& x, LayerFidelity& info) {
    const auto& d = recon.at(name);
    info.dense_flops = static_cast<std::uint64_t>(x.rows()) * d.rows() * d.cols();
    return matmul(x, d);
  };
  FidelityReport rep = evaluate_delta("bitdelta", target, eval_acts, approx);
  rep.compress_ms = compress_ms;
  rep.stored_bytes = stored;
  rep.compression_ratio = static_cast<double>(rep.dense_bytes) / static_cast<double>(stored);
  return rep;
}

FidelityReport baseline_skillzip(const TensorArchive& base, const TensorArchive& tuned, const TensorArchive& calib,
                                 const TensorArchive& eval_acts, const PipelineConfig& config) {
  PipelineConfig cfg = config;
  cfg.merge = false;
  const auto t0 = std::chrono::steady_clock::now();
  const CompressOutput out = compress(base, {TunedModel{"task", tuned}}, calib, cfg);
  const double compress_ms = ms_since(t0);
  FidelityReport rep = evaluate_pack(base, out.backbone, tuned, out.packs.front(), eval_acts);
  rep.compress_ms = compress_ms;
  return rep;
}

struct BaselineRegistry {
  std::mutex mu;
  std::map<std::string, BaselineMethod> methods{
      {"svd-fp", baseline_svd_fp}, {"bitdelta", baseline_bitdelta}, {"skillzip", baseline_skillzip}};
};

BaselineRegistry& baselines() {
  static BaselineRegistry r;
  return r;
}

}  // namespace

void register_baseline(const std::string& name, BaselineMethod method) {
  if (name.empty() || !method) throw ValidationError("baseline needs a name and a callable");
  auto& r = baselines();
  std::lock_guard lock(r.mu);
  if (!r.methods.emplace(name, std::move(method)).second) {
    throw ValidationError(fmt::format("baseline '{}' already registered", name));
  }
}

std::vector<std::string> baseline_names() {
  auto& r = baselines();
  std::lock_guard lock(r.mu);
  std::vector<std::string> out;
  for (const auto& [k, _] : r.methods) out.push_back(k);
  return out;
}

FidelityReport run_baseline(const std::string& method, const TensorArchive& base, const TensorArchive& tuned,
                            const TensorArchive& calib, const TensorArchive& eval_acts, const PipelineConfig& config) {
  BaselineMethod fn;
  {
    auto& r = baselines();
    std::lock_guard lock(r.mu);
    auto it = r.methods.find(method);
    if (it == r.methods.end()) throw ValidationError(fmt::format("unknown baseline method '{}'", method));
    fn = it->second;
  }
  config.validate();
  FidelityReport rep = fn(base, tuned, calib, eval_acts, config);
  rep.method = method;
  return rep;
}

Similarity diag_similarity(const TaskDelta& a, const TaskDelta& b) {
  if (!a.layers.same_layout(b.layers)) {
    throw ValidationError(fmt::format("deltas '{}' and '{}' have different layouts", a.task_id, b.task_id));
  }
  double dot = 0.0, na = 0.0, nb = 0.0, sign_sum = 0.0;
  std::size_t both = 0;
  for (const auto& e : a.layers.entries()) {
    const auto va = e.matrix.values();
    const auto vb = b.layers.at(e.name).values();
    for (std::size_t i = 0; i < va.size(); ++i) {
      const double x = va[i], y = vb[i];
      dot += x * y;
      na += x * x;
      nb += y * y;
      if (x != 0.0 && y != 0.0) {
        sign_sum += ((x > 0.0) == (y > 0.0)) ? 1.0 : -1.0;
        ++both;
      }
    }
  }
  Similarity s;
  if (na > 0.0 && nb > 0.0) s.cosine = dot / (std::sqrt(na) * std::sqrt(nb));
  if (both > 0) s.sign_consistency = sign_sum / static_cast<double>(both);
  return s;
}

nlohmann::json BenchReport::to_json() const {
  nlohmann::json ops_j = nlohmann::json::array();
  for (const auto& o : ops) ops_j.push_back({{"name", o.name}, {"median_ms", o.median_ms}, {"flops", o.flops}});
  return {{"requests", requests},
          {"tokens", tokens},
          {"repeats", repeats},
          {"outputs_identical", outputs_identical},
          {"dense_flops", dense_flops},
          {"low_rank_flops", low_rank_flops},
          {"flop_ratio", low_rank_flops ? static_cast<double>(dense_flops) / static_cast<double>(low_rank_flops) : 0.0},
          {"ops", ops_j},
          {"tokens_per_second", tokens_per_second}};
}

std::string BenchReport::to_table() const {
  std::string out = fmt::format("{} requests, {} tokens, {} repeats, outputs identical: {}\n", requests, tokens,
                                repeats, outputs_identical ? "yes" : "no");
  out += fmt::format("{:<20} {:>12} {:>16}\n", "op", "median_ms", "flops");
  for (const auto& o : ops) out += fmt::format("{:<20} {:>12.3f} {:>16}\n", o.name, o.median_ms, o.flops);
  out += fmt::format("throughput {:.1f} tokens/s\n", tokens_per_second);
  return out;
}

BenchReport run_bench(const SkillRegistry& registry, const std::vector<ForwardRequest>& requests, int repeats,
                      std::vector<DenseMatrix>* outputs) {
  if (repeats < 1) throw ValidationError(fmt::format("repeats must be at least 1, got {}", repeats));
  BenchReport rep;
  rep.requests = requests.size();
  rep.repeats = repeats;
  if (requests.empty()) {
    if (outputs) outputs->clear();
    return rep;
  }

  // Resolve per-request layers and dense equivalents once.
  LabelRouter router(registry);
  struct Work {
    const CompiledSkillLayer* layer;
    DenseMatrix dense;
  };
  std::vector<std::shared_ptr<const Skillpack>> holds;
  std::vector<std::optional<Work>> work;
  for (const auto& req : requests) {
    rep.tokens += req.x.rows();
    auto pack = registry.find(router.route(req));
    const SkillLayerRecord* rec = pack->find(registry.resolve_layer(req.layer));
    holds.push_back(pack);
    if (!rec) {
      work.emplace_back();
      continue;
    }
    const auto& l = rec->layer;
    std::vector<float> inv = l.smooth_inv;
    work.push_back(Work{&l, scale_rows(matmul(dequantize(l.a_hat), dequantize(l.b_hat)), inv)});
    const FlopCount f = count_flops(req.x.rows(), l.c_in(), l.c_out(), l.rank());
    rep.dense_flops += f.dense;
    rep.low_rank_flops += f.low_rank;
  }

  std::vector<double> t_batch, t_dense, t_low;
  std::vector<DenseMatrix> first;
  for (int r = 0; r < repeats; ++r) {
    auto t0 = std::chrono::steady_clock::now();
    auto y = dispatch_batch(requests, registry, router);
    t_batch.push_back(ms_since(t0));
    if (r == 0) {
      first = std::move(y);
    } else {
      for (std::size_t i = 0; i < y.size(); ++i) {
        if (!y[i].bitwise_equal(first[i])) rep.outputs_identical = false;
      }
    }
    t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < requests.size(); ++i) {
      if (work[i]) (void)matmul(requests[i].x, work[i]->dense);
    }
    t_dense.push_back(ms_since(t0));
    t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < requests.size(); ++i) {
      if (work[i]) (void)forward_quantized(*work[i]->layer, requests[i].x);
    }
    t_low.push_back(ms_since(t0));
  }
  const double batch_ms = median(t_batch);
  rep.ops.push_back({"dispatch_batch", batch_ms, 0});
  rep.ops.push_back({"dense_delta_f32", median(t_dense), rep.dense_flops});
  rep.ops.push_back({"low_rank_int8", median(t_low), rep.low_rank_flops});
  rep.tokens_per_second = batch_ms > 0.0 ? 1000.0 * static_cast<double>(rep.tokens) / batch_ms : 0.0;
  if (outputs) *outputs = std::move(first);
  return rep;
}

PathTiming bench_paths(std::size_t tokens, std::size_t c_in, std::size_t c_out, std::size_t rank, int repeats,
                       std::uint64_t seed) {
  if (repeats < 1) throw ValidationError(fmt::format("repeats must be at least 1, got {}", repeats));
  Prng rng(seed);
  const DenseMatrix x = random_gaussian(rng, tokens, c_in);
  const DenseMatrix a = random_gaussian(rng, c_in, rank, 0.05f);
  const DenseMatrix b = random_gaussian(rng, rank, c_out, 0.05f);
  const DenseMatrix dense = matmul(a, b);
  const std::vector<float> ones(c_in, 1.0f);
  const CompiledSkillLayer layer = compile_skill_layer(a, b, ones, x, CompileOptions{});
  PathTiming out;
  out.flops = count_flops(tokens, c_in, c_out, rank);
  std::vector<double> td, tl;
  for (int r = 0; r < repeats; ++r) {
    auto t0 = std::chrono::steady_clock::now();
    (void)matmul(x, dense);
    td.push_back(ms_since(t0));
    t0 = std::chrono::steady_clock::now();
    (void)forward_quantized(layer, x);
    tl.push_back(ms_since(t0));
  }
  out.dense_ms = median(td);
  out.low_rank_ms = median(tl);
  return out;
}

namespace {

// Sum of task_rank rank-one terms with singular values decay^k, scaled to
// Frobenius norm `norm`.
DenseMatrix low_rank_term(Prng& rng, std::size_t rows, std::size_t cols, std::size_t rank, double decay, double norm) {
  DenseMatrix u = random_gaussian(rng, rows, rank);
  DenseMatrix v = random_gaussian(rng, rank, cols);
  std::vector<float> sig(rank);
  for (std::size_t k = 0; k < rank; ++k) sig[k] = static_cast<float>(std::pow(decay, static_cast<double>(k)));
  DenseMatrix m = matmul(scale_columns(u, sig), v);
  const double n = fro_norm(m);
  return n > 0.0 ? scaled(m, static_cast<float>(norm / n)) : m;
}

DenseMatrix with_norm(DenseMatrix m, double norm) {
  const double n = fro_norm(m);
  return n > 0.0 ? scaled(m, static_cast<float>(norm / n)) : m;
}

}  // namespace

SynthFixture make_synth_fixture(const SynthSpec& spec) {
  if (spec.layers.empty()) throw ValidationError("synthetic fixture needs at least one layer");
  if (spec.tasks == 0) throw ValidationError("synthetic fixture needs at least one task");
  if (spec.calib_tokens == 0 || spec.eval_tokens == 0) throw ValidationError("token counts must be positive");
  SynthFixture fx;
  std::vector<TensorArchive> tuned(spec.tasks);
  for (const auto& l : spec.layers) {
    spec.outliers.validate(l.c_in);
    const std::size_t rank = std::min({spec.task_rank, l.c_in, l.c_out});
    if (rank == 0) throw ValidationError("task rank must be positive");
    Prng rng(stream_seed(spec.seed, "weights", l.name));
    const DenseMatrix w0 = random_gaussian(rng, l.c_in, l.c_out, 0.02f);
    const double task_norm = 0.01 * std::sqrt(static_cast<double>(l.c_in * l.c_out));
    const DenseMatrix shared = with_norm(random_gaussian(rng, l.c_in, l.c_out), spec.shared_to_task * task_norm);

    const std::uint64_t act_seed = stream_seed(spec.seed, "activations", l.name);
    std::vector<float> damp(l.c_in, 1.0f);
    if (spec.damp_outlier_rows) {
      for (std::size_t c : synth_outlier_channels(act_seed, l.c_in, spec.outliers)) {
        damp[c] = static_cast<float>(1.0 / spec.outliers.magnitude_ratio);
      }
    }
    for (std::size_t k = 0; k < spec.tasks; ++k) {
      const DenseMatrix t = low_rank_term(rng, l.c_in, l.c_out, rank, spec.spectrum_decay, task_norm);
      tuned[k].add(l.name, add(w0, scale_rows(add(shared, t), damp)));
    }
    fx.base.add(l.name, w0);

    // One draw so calibration and eval share the outlier channels.
    const DenseMatrix x = synth_activations(act_seed, spec.calib_tokens + spec.eval_tokens, l.c_in, spec.outliers);
    fx.calib.add(l.name, slice_rows(x, 0, spec.calib_tokens));
    fx.eval.add(l.name, slice_rows(x, spec.calib_tokens, x.rows()));
  }
  for (std::size_t k = 0; k < spec.tasks; ++k) {
    fx.tuned.push_back({fmt::format("task{}", k), std::move(tuned[k])});
  }
  return fx;
}

double fixture_error(const SynthFixture& fixture, const PipelineConfig& config) {
  const CompressOutput out = compress(fixture.base, fixture.tuned, fixture.calib, config);
  double sum = 0.0;
  for (std::size_t k = 0; k < fixture.tuned.size(); ++k) {
    sum += evaluate_pack(fixture.base, out.backbone, fixture.tuned[k].weights, out.packs[k], fixture.eval)
               .aggregate_error;
  }
  return sum / static_cast<double>(fixture.tuned.size());
}

}  // namespace skillzip
