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
#include <optional>
#include <span>
#include <vector>

#include "skillzip/quantizer.hpp"
#include "skillzip/tensor.hpp"

namespace skillzip {

struct Int32Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int32_t> values;  // row-major

  std::int32_t operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

// Exact int8 x int8 -> int32 product. Codes are at most 127 in magnitude, so
// inner dimensions up to 2^16 cannot overflow. Row-parallel.
Int32Grid gemm_i8_i32(const QuantGrid& a, const QuantGrid& b);

struct RequantStats {
  std::size_t saturated = 0;  // codes clamped to +-127
};

// code = clamp(round_half_away(acc / mid_scale), -127, 127); the result
// carries mid_scale as its per-tensor scale.
QuantGrid requant_mid(const Int32Grid& acc, float mid_scale, RequantStats* stats = nullptr);

// A compressed linear delta ready for the integer pipeline. Shapes chain
// C_i -> R -> C_o.
struct CompiledSkillLayer {
  std::vector<float> smooth_inv;  // 1/s, length C_i
  QuantGrid a_hat;                // C_i x R, per-tensor scale s_A
  QuantGrid b_hat;                // R x C_o, per-tensor or per-channel scales s_B
  int bits_x = 8;
  Granularity gran_x = Granularity::kPerToken;
  float x_scale = 1.0f;   // static activation scale, used when gran_x is per-tensor
  float mid_scale = 1.0f; // int32 -> int8 divisor between the two GEMMs

  std::size_t c_in() const { return a_hat.rows; }
  std::size_t rank() const { return a_hat.cols; }
  std::size_t c_out() const { return b_hat.cols; }
  float s_a() const { return a_hat.scale.scales.at(0); }

  // Throws ShapeError/ValidationError on broken chaining, granularities or
  // nonpositive scales.
  void validate() const;
};

struct ForwardStats {
  std::size_t mid_saturated = 0;
  std::size_t x_saturated = 0;  // static per-tensor X codes clamped
};

// Quantizes X diag(smooth_inv) at bits_x / gran_x, runs the two integer
// GEMMs with one per-tensor requant between them, and rescales the int32
// result as diag(s_A * s_X * mid_scale) * acc * diag(s_B). Scales touch only
// the outer (token, output-channel) dimensions.
DenseMatrix forward_quantized(const CompiledSkillLayer& layer, const DenseMatrix& x, ForwardStats* stats = nullptr);

// FP view of the same layer: X diag(smooth_inv) dq(A_hat) dq(B_hat).
DenseMatrix reference_forward(const CompiledSkillLayer& layer, const DenseMatrix& x);

// X W, plus forward_quantized(layer, X) when a layer is attached.
DenseMatrix forward_full(const DenseMatrix& backbone_w, const CompiledSkillLayer* layer, const DenseMatrix& x,
                         ForwardStats* stats = nullptr);

struct CompileOptions {
  QuantConfig quant;
  bool gptq = false;
  double gptq_damp = 0.01;
};

// Builds the integer layer from FP factors (A: C_i x R, B: R x C_o, already
// smoothed and rotated), the smoothing vector s, and raw calibration
// activations. Calibration fixes the static X scale (per-tensor mode) and
// mid_scale = max|X_hat A_hat| / 127 over the calibration rows. With gptq,
// B is quantized by gptq_refine against the Hessian of the dequantized
// mid-pipeline activations.
CompiledSkillLayer compile_skill_layer(const DenseMatrix& a, const DenseMatrix& b, std::span<const float> smooth,
                                       const DenseMatrix& x_calib, const CompileOptions& options);

// Multiply-add counts for T tokens.
struct FlopCount {
  std::uint64_t dense = 0;    // T * C_i * C_o
  std::uint64_t low_rank = 0; // T * R * (C_i + C_o)

  double ratio() const { return static_cast<double>(dense) / static_cast<double>(low_rank); }
};
FlopCount count_flops(std::uint64_t tokens, std::uint64_t c_in, std::uint64_t c_out, std::uint64_t rank);

}  // namespace skillzip
