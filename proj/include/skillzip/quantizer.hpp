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

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "skillzip/tensor.hpp"

namespace skillzip {

// Which elements share one scale: the whole tensor, one column (output
// channel) or one row (token).
enum class Granularity : std::uint8_t { kPerTensor = 0, kPerChannel = 1, kPerToken = 2 };

std::string_view to_string(Granularity g);
Granularity granularity_from_string(std::string_view s);

struct ScaleDescriptor {
  Granularity granularity = Granularity::kPerTensor;
  std::vector<float> scales;  // 1, cols, or rows entries

  float for_element(std::size_t r, std::size_t c) const {
    switch (granularity) {
      case Granularity::kPerChannel: return scales[c];
      case Granularity::kPerToken: return scales[r];
      default: return scales[0];
    }
  }
  // Throws ValidationError unless the scale count fits rows x cols and every
  // scale is finite and positive.
  void validate(std::size_t rows, std::size_t cols) const;
};

// Largest code magnitude for symmetric k-bit quantization: 2^(k-1) - 1.
constexpr int qmax_for_bits(int bits) { return (1 << (bits - 1)) - 1; }
void validate_bits(int bits);

// Bit-widths and granularities for the X, A and B operands. A is always
// per-tensor: only outer-dimension scales survive the two chained integer
// GEMMs, and A's scale sits on the inner dimension of both.
struct QuantConfig {
  int bits_x = 8;
  int bits_a = 8;
  int bits_b = 8;
  Granularity gran_x = Granularity::kPerToken;  // per-token | per-tensor
  Granularity gran_b = Granularity::kPerChannel;  // per-channel | per-tensor

  static constexpr Granularity gran_a = Granularity::kPerTensor;

  void validate() const;
  // "X8A8B8" style label.
  std::string label() const;
};

// Signed k-bit codes (k in {4, 8}) held one per int8 in memory; packed two
// per byte only on disk.
struct QuantGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  int bits = 8;
  std::vector<std::int8_t> codes;  // row-major
  ScaleDescriptor scale;

  std::int8_t code(std::size_t r, std::size_t c) const { return codes[r * cols + c]; }
  // Checks shape, scale count, and that every code lies in [-qmax, qmax].
  void validate() const;
};

// Round half away from zero.
inline double round_half_away(double v) { return v < 0.0 ? -std::floor(-v + 0.5) : std::floor(v + 0.5); }

// Scales from group max: max|group| / qmax; all-zero groups get scale 1.
ScaleDescriptor compute_scales(const DenseMatrix& m, int bits, Granularity granularity);

DenseMatrix quantize_dequantize(const DenseMatrix& m, int bits, Granularity granularity);
QuantGrid quantize(const DenseMatrix& m, int bits, Granularity granularity);
// Quantizes against precomputed scales, clamping to [-qmax, qmax].
QuantGrid quantize_with_scales(const DenseMatrix& m, int bits, ScaleDescriptor scales);
DenseMatrix dequantize(const QuantGrid& q);

// Hessian for GPTQ from the matrix feeding the quantized weight:
// inputs^T inputs / T + damp_ratio * mean(diag) * I, computed in f64.
DenseMatrix gptq_hessian(const DenseMatrix& inputs, double damp_ratio = 0.01);

// GPTQ over the rows of `weight` (rows are the input dimension, matching
// H's order). Scales are fixed up front from `weight` at `granularity`
// (per-tensor or per-channel); each row is rounded in turn and its error,
// weighted through the upper Cholesky factor of H^-1, is pushed onto the
// rows not yet quantized. H is used as given (no extra damping). Throws
// NumericError when H is not positive definite.
QuantGrid gptq_refine(const DenseMatrix& weight, const DenseMatrix& hessian, int bits, Granularity granularity);

// 1-bit sign + single scale baseline. scale = mean|delta|; sign(0) = +1.
struct BitDeltaResult {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<bool> negative;  // true where the sign is -1
  float scale = 0.0f;

  DenseMatrix reconstruct() const;
  // Sign bits packed eight per byte plus the f32 scale.
  std::size_t storage_bytes() const { return (negative.size() + 7) / 8 + 4; }
};
BitDeltaResult bitdelta_compress(const DenseMatrix& delta);

// Two codes per byte, row by row: low nibble holds the even column, high
// nibble the odd one, each as 4-bit two's complement. An odd column count
// leaves the last high nibble of every row zero.
std::vector<std::uint8_t> pack_int4(std::span<const std::int8_t> codes, std::size_t rows, std::size_t cols);
// Inverse of pack_int4 with sign extension. Throws FormatError on a length
// mismatch or a nonzero padding nibble.
std::vector<std::int8_t> unpack_int4(std::span<const std::uint8_t> bytes, std::size_t rows, std::size_t cols);
inline std::size_t packed_int4_size(std::size_t rows, std::size_t cols) { return rows * ((cols + 1) / 2); }

}  // namespace skillzip
