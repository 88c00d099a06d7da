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

#include "skillzip/kernel.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "skillzip/error.hpp"
#include "skillzip/parallel.hpp"

namespace skillzip {

Int32Grid gemm_i8_i32(const QuantGrid& a, const QuantGrid& b) {
  if (a.cols != b.rows) {
    throw ShapeError(fmt::format("int GEMM: {}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols));
  }
  if (a.cols > (1u << 16)) throw ShapeError("int GEMM: inner dimension exceeds 65536");
  const std::size_t n = b.cols;
  const std::size_t k_dim = a.cols;
  Int32Grid out{a.rows, n, std::vector<std::int32_t>(a.rows * n, 0)};
  parallel_for(a.rows, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      std::int32_t* acc = out.values.data() + i * n;
      const std::int8_t* a_row = a.codes.data() + i * k_dim;
      for (std::size_t k = 0; k < k_dim; ++k) {
        const std::int32_t aik = a_row[k];
        if (aik == 0) continue;
        const std::int8_t* b_row = b.codes.data() + k * n;
        for (std::size_t j = 0; j < n; ++j) acc[j] += aik * static_cast<std::int32_t>(b_row[j]);
      }
    }
  });
  return out;
}

QuantGrid requant_mid(const Int32Grid& acc, float mid_scale, RequantStats* stats) {
  if (!(mid_scale > 0.0f) || !std::isfinite(mid_scale)) {
    throw ValidationError(fmt::format("mid scale {} must be positive", mid_scale));
  }
  QuantGrid q{acc.rows, acc.cols, 8, std::vector<std::int8_t>(acc.values.size()),
              {Granularity::kPerTensor, {mid_scale}}};
  std::size_t saturated = 0;
  const double inv = static_cast<double>(mid_scale);
  for (std::size_t i = 0; i < acc.values.size(); ++i) {
    const double v = round_half_away(static_cast<double>(acc.values[i]) / inv);
    if (v > 127.0 || v < -127.0) ++saturated;
    q.codes[i] = static_cast<std::int8_t>(std::clamp(v, -127.0, 127.0));
  }
  if (stats) stats->saturated += saturated;
  return q;
}

void CompiledSkillLayer::validate() const {
  a_hat.validate();
  b_hat.validate();
  validate_bits(bits_x);
  if (a_hat.cols != b_hat.rows) {
    throw ShapeError(fmt::format("layer rank mismatch: A is {}x{}, B is {}x{}", a_hat.rows, a_hat.cols, b_hat.rows, b_hat.cols));
  }
  if (smooth_inv.size() != a_hat.rows) throw ShapeError("layer smoothing vector length != C_i");
  if (a_hat.scale.granularity != Granularity::kPerTensor) throw ValidationError("A must carry a per-tensor scale");
  if (b_hat.scale.granularity == Granularity::kPerToken) throw ValidationError("B cannot be per-token");
  if (gran_x == Granularity::kPerChannel) throw ValidationError("X cannot be per-channel");
  for (float v : smooth_inv) {
    if (!(v > 0.0f) || !std::isfinite(v)) throw ValidationError("smoothing inverse must be positive");
  }
  if (!(x_scale > 0.0f) || !std::isfinite(x_scale)) throw ValidationError("static X scale must be positive");
  if (!(mid_scale > 0.0f) || !std::isfinite(mid_scale)) throw ValidationError("mid scale must be positive");
}

namespace {
QuantGrid quantize_activations(const CompiledSkillLayer& layer, const DenseMatrix& x, ForwardStats* stats) {
  DenseMatrix xs = scale_columns(x, layer.smooth_inv);
  if (layer.gran_x == Granularity::kPerToken) return quantize(xs, layer.bits_x, Granularity::kPerToken);
  if (stats) {
    const double limit = qmax_for_bits(layer.bits_x) + 0.5;
    for (float v : xs.values()) {
      if (std::fabs(static_cast<double>(v) / layer.x_scale) >= limit) ++stats->x_saturated;
    }
  }
  return quantize_with_scales(xs, layer.bits_x, {Granularity::kPerTensor, {layer.x_scale}});
}

// Final rescale of the second accumulator. Row factor s_A * s_X[t] * mid is
// the only per-row scale; s_B the only per-column one.
DenseMatrix outer_rescale(const Int32Grid& acc, const QuantGrid& x_hat, const CompiledSkillLayer& layer) {
  DenseMatrix out(acc.rows, acc.cols);
  const double sa_mid = static_cast<double>(layer.s_a()) * static_cast<double>(layer.mid_scale);
  const auto& sb = layer.b_hat.scale;
  for (std::size_t t = 0; t < acc.rows; ++t) {
    const double row_scale = sa_mid * static_cast<double>(x_hat.scale.for_element(t, 0));
    auto o = out.row(t);
    for (std::size_t j = 0; j < acc.cols; ++j) {
      o[j] = static_cast<float>(static_cast<double>(acc(t, j)) * row_scale *
                                static_cast<double>(sb.for_element(0, j)));
    }
  }
  return out;
}
}  // namespace

DenseMatrix forward_quantized(const CompiledSkillLayer& layer, const DenseMatrix& x, ForwardStats* stats) {
  if (x.cols() != layer.c_in()) {
    throw ShapeError(fmt::format("forward: input has {} columns, layer expects {}", x.cols(), layer.c_in()));
  }
  const QuantGrid x_hat = quantize_activations(layer, x, stats);
  const Int32Grid acc1 = gemm_i8_i32(x_hat, layer.a_hat);
  RequantStats rq;
  const QuantGrid mid = requant_mid(acc1, layer.mid_scale, &rq);
  if (stats) stats->mid_saturated += rq.saturated;
  const Int32Grid acc2 = gemm_i8_i32(mid, layer.b_hat);
  return outer_rescale(acc2, x_hat, layer);
}

DenseMatrix reference_forward(const CompiledSkillLayer& layer, const DenseMatrix& x) {
  return matmul(matmul(scale_columns(x, layer.smooth_inv), dequantize(layer.a_hat)), dequantize(layer.b_hat));
}

DenseMatrix forward_full(const DenseMatrix& backbone_w, const CompiledSkillLayer* layer, const DenseMatrix& x,
                         ForwardStats* stats) {
  if (x.cols() != backbone_w.rows()) {
    throw ShapeError(fmt::format("forward: input has {} columns, backbone expects {}", x.cols(), backbone_w.rows()));
  }
  DenseMatrix y = matmul(x, backbone_w);
  if (!layer) return y;
  if (layer->c_in() != backbone_w.rows() || layer->c_out() != backbone_w.cols()) {
    throw ShapeError(fmt::format("skill layer {}x{} does not match backbone {}x{}", layer->c_in(), layer->c_out(),
                                 backbone_w.rows(), backbone_w.cols()));
  }
  const DenseMatrix delta = forward_quantized(*layer, x, stats);
  auto yv = y.values();
  auto dv = delta.values();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] += dv[i];
  return y;
}

CompiledSkillLayer compile_skill_layer(const DenseMatrix& a, const DenseMatrix& b, std::span<const float> smooth,
                                       const DenseMatrix& x_calib, const CompileOptions& options) {
  options.quant.validate();
  if (a.cols() != b.rows()) throw ShapeError("compile: A cols != B rows");
  if (smooth.size() != a.rows()) throw ShapeError("compile: smoothing vector length != C_i");
  if (x_calib.cols() != a.rows()) throw ShapeError("compile: calibration columns != C_i");

  CompiledSkillLayer layer;
  layer.smooth_inv.resize(smooth.size());
  for (std::size_t i = 0; i < smooth.size(); ++i) {
    if (!(smooth[i] > 0.0f)) throw ValidationError("compile: smoothing factors must be positive");
    layer.smooth_inv[i] = 1.0f / smooth[i];
  }
  layer.bits_x = options.quant.bits_x;
  layer.gran_x = options.quant.gran_x;
  layer.a_hat = quantize(a, options.quant.bits_a, QuantConfig::gran_a);

  const DenseMatrix xs = scale_columns(x_calib, layer.smooth_inv);
  if (layer.gran_x == Granularity::kPerTensor) {
    layer.x_scale = compute_scales(xs, layer.bits_x, Granularity::kPerTensor).scales[0];
  }
  // mid_scale comes from the calibration accumulators.
  layer.b_hat = quantize(b, options.quant.bits_b, options.quant.gran_b);
  const QuantGrid x_hat = quantize_activations(layer, x_calib, nullptr);
  const Int32Grid acc1 = gemm_i8_i32(x_hat, layer.a_hat);
  std::int64_t peak = 0;
  for (auto v : acc1.values) peak = std::max<std::int64_t>(peak, std::llabs(v));
  layer.mid_scale = peak == 0 ? 1.0f : static_cast<float>(static_cast<double>(peak) / 127.0);

  if (options.gptq) {
    // Inputs B sees at run time, in real units.
    const QuantGrid mid = requant_mid(acc1, layer.mid_scale);
    DenseMatrix inputs(mid.rows, mid.cols);
    const double sa_mid = static_cast<double>(layer.s_a()) * layer.mid_scale;
    for (std::size_t t = 0; t < mid.rows; ++t) {
      const double rs = sa_mid * x_hat.scale.for_element(t, 0);
      for (std::size_t r = 0; r < mid.cols; ++r) inputs(t, r) = static_cast<float>(mid.code(t, r) * rs);
    }
    layer.b_hat = gptq_refine(b, gptq_hessian(inputs, options.gptq_damp), options.quant.bits_b, options.quant.gran_b);
  }
  layer.validate();
  return layer;
}

FlopCount count_flops(std::uint64_t tokens, std::uint64_t c_in, std::uint64_t c_out, std::uint64_t rank) {
  return {tokens * c_in * c_out, tokens * rank * (c_in + c_out)};
}

}  // namespace skillzip
