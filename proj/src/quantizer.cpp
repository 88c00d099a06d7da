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

#include "skillzip/quantizer.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "skillzip/error.hpp"

namespace skillzip {

std::string_view to_string(Granularity g) {
  switch (g) {
    case Granularity::kPerTensor: return "per-tensor";
    case Granularity::kPerChannel: return "per-channel";
    case Granularity::kPerToken: return "per-token";
  }
  return "?";
}

Granularity granularity_from_string(std::string_view s) {
  if (s == "per-tensor") return Granularity::kPerTensor;
  if (s == "per-channel") return Granularity::kPerChannel;
  if (s == "per-token") return Granularity::kPerToken;
  throw ValidationError(fmt::format("unknown granularity '{}'", s));
}

void validate_bits(int bits) {
  if (bits != 4 && bits != 8) throw ValidationError(fmt::format("unsupported bit-width {}", bits));
}

void QuantConfig::validate() const {
  validate_bits(bits_x);
  validate_bits(bits_a);
  validate_bits(bits_b);
  if (gran_x == Granularity::kPerChannel) throw ValidationError("X must be quantized per-token or per-tensor");
  if (gran_b == Granularity::kPerToken) throw ValidationError("B must be quantized per-channel or per-tensor");
}

std::string QuantConfig::label() const { return fmt::format("X{}A{}B{}", bits_x, bits_a, bits_b); }

void ScaleDescriptor::validate(std::size_t rows, std::size_t cols) const {
  const std::size_t want = granularity == Granularity::kPerTensor    ? 1
                           : granularity == Granularity::kPerChannel ? cols
                                                                      : rows;
  if (scales.size() != want) {
    throw ValidationError(fmt::format("{} scale needs {} values, got {}", to_string(granularity), want, scales.size()));
  }
  for (float s : scales) {
    if (!(s > 0.0f) || !std::isfinite(s)) throw ValidationError(fmt::format("invalid scale {}", s));
  }
}

void QuantGrid::validate() const {
  validate_bits(bits);
  if (codes.size() != rows * cols) throw ShapeError("quant grid: code count != rows*cols");
  scale.validate(rows, cols);
  const int q = qmax_for_bits(bits);
  for (auto c : codes) {
    if (c < -q || c > q) throw ValidationError(fmt::format("code {} outside [-{}, {}]", int{c}, q, q));
  }
}

namespace {
float scale_from_max(double max_abs, int qmax) {
  if (max_abs == 0.0) return 1.0f;
  return static_cast<float>(max_abs / qmax);
}

std::int8_t encode(float x, float scale, int qmax) {
  const double v = round_half_away(static_cast<double>(x) / static_cast<double>(scale));
  return static_cast<std::int8_t>(std::clamp(v, static_cast<double>(-qmax), static_cast<double>(qmax)));
}
}  // namespace

ScaleDescriptor compute_scales(const DenseMatrix& m, int bits, Granularity granularity) {
  validate_bits(bits);
  const int qmax = qmax_for_bits(bits);
  ScaleDescriptor sd{granularity, {}};
  switch (granularity) {
    case Granularity::kPerTensor: {
      double mx = 0.0;
      for (float v : m.values()) mx = std::max(mx, static_cast<double>(std::fabs(v)));
      sd.scales = {scale_from_max(mx, qmax)};
      break;
    }
    case Granularity::kPerChannel: {
      std::vector<double> mx(m.cols(), 0.0);
      for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) mx[c] = std::max(mx[c], static_cast<double>(std::fabs(row[c])));
      }
      for (double v : mx) sd.scales.push_back(scale_from_max(v, qmax));
      break;
    }
    case Granularity::kPerToken: {
      for (std::size_t r = 0; r < m.rows(); ++r) {
        double mx = 0.0;
        for (float v : m.row(r)) mx = std::max(mx, static_cast<double>(std::fabs(v)));
        sd.scales.push_back(scale_from_max(mx, qmax));
      }
      break;
    }
  }
  return sd;
}

QuantGrid quantize_with_scales(const DenseMatrix& m, int bits, ScaleDescriptor scales) {
  validate_bits(bits);
  scales.validate(m.rows(), m.cols());
  const int qmax = qmax_for_bits(bits);
  QuantGrid q{m.rows(), m.cols(), bits, std::vector<std::int8_t>(m.size()), std::move(scales)};
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) {
      q.codes[r * m.cols() + c] = encode(row[c], q.scale.for_element(r, c), qmax);
    }
  }
  return q;
}

QuantGrid quantize(const DenseMatrix& m, int bits, Granularity granularity) {
  return quantize_with_scales(m, bits, compute_scales(m, bits, granularity));
}

DenseMatrix dequantize(const QuantGrid& q) {
  DenseMatrix out(q.rows, q.cols);
  for (std::size_t r = 0; r < q.rows; ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < q.cols; ++c) row[c] = static_cast<float>(q.code(r, c)) * q.scale.for_element(r, c);
  }
  return out;
}

DenseMatrix quantize_dequantize(const DenseMatrix& m, int bits, Granularity granularity) {
  return dequantize(quantize(m, bits, granularity));
}

DenseMatrix gptq_hessian(const DenseMatrix& inputs, double damp_ratio) {
  const std::size_t n = inputs.cols();
  std::vector<double> h(n * n, 0.0);
  for (std::size_t t = 0; t < inputs.rows(); ++t) {
    const auto row = inputs.row(t);
    for (std::size_t i = 0; i < n; ++i) {
      const double xi = row[i];
      if (xi == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) h[i * n + j] += xi * row[j];
    }
  }
  double mean_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean_diag += h[i * n + i] / static_cast<double>(inputs.rows());
  mean_diag /= static_cast<double>(n);
  const double damp = damp_ratio * (mean_diag > 0.0 ? mean_diag : 1.0);
  DenseMatrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out(i, j) = static_cast<float>(h[i * n + j] / static_cast<double>(inputs.rows()) + (i == j ? damp : 0.0));
    }
  }
  return out;
}

namespace {
// In-place lower Cholesky of an n x n row-major SPD matrix; upper triangle
// is zeroed.
void cholesky_lower(std::vector<double>& a, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
    if (!(d > 0.0) || !std::isfinite(d)) {
      throw NumericError(fmt::format("Hessian is not positive definite (pivot {} = {})", j, d));
    }
    const double ljj = std::sqrt(d);
    a[j * n + j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = s / ljj;
    }
    for (std::size_t k = j + 1; k < n; ++k) a[j * n + k] = 0.0;
  }
}

// Upper factor U with U^T U = H^-1.
std::vector<double> inverse_upper_cholesky(const DenseMatrix& h) {
  const std::size_t n = h.rows();
  std::vector<double> l(h.values().begin(), h.values().end());
  cholesky_lower(l, n);
  // H^-1 = L^-T L^-1. Invert L column by column.
  std::vector<double> linv(n * n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    linv[c * n + c] = 1.0 / l[c * n + c];
    for (std::size_t i = c + 1; i < n; ++i) {
      double s = 0.0;
      for (std::size_t k = c; k < i; ++k) s += l[i * n + k] * linv[k * n + c];
      linv[i * n + c] = -s / l[i * n + i];
    }
  }
  std::vector<double> hinv(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = std::max(i, j); k < n; ++k) s += linv[k * n + i] * linv[k * n + j];
      hinv[i * n + j] = s;
    }
  }
  // Upper Cholesky of H^-1 is the transpose of its lower factor.
  cholesky_lower(hinv, n);
  std::vector<double> u(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) u[j * n + i] = hinv[i * n + j];
  }
  return u;
}
}  // namespace

QuantGrid gptq_refine(const DenseMatrix& weight, const DenseMatrix& hessian, int bits, Granularity granularity) {
  validate_bits(bits);
  if (granularity == Granularity::kPerToken) throw ValidationError("GPTQ weight scales must be per-tensor or per-channel");
  if (hessian.rows() != hessian.cols() || hessian.rows() != weight.rows()) {
    throw ShapeError(fmt::format("GPTQ: Hessian {}x{} does not match weight with {} rows", hessian.rows(),
                                 hessian.cols(), weight.rows()));
  }
  const std::size_t n = weight.rows();
  const std::size_t cols = weight.cols();
  const int qmax = qmax_for_bits(bits);
  ScaleDescriptor scales = compute_scales(weight, bits, granularity);
  const auto u = inverse_upper_cholesky(hessian);

  std::vector<double> w(weight.values().begin(), weight.values().end());
  QuantGrid q{n, cols, bits, std::vector<std::int8_t>(n * cols), scales};
  std::vector<double> err(cols);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = u[i * n + i];
    for (std::size_t c = 0; c < cols; ++c) {
      const float s = scales.for_element(i, c);
      const std::int8_t code = encode(static_cast<float>(w[i * cols + c]), s, qmax);
      q.codes[i * cols + c] = code;
      err[c] = (w[i * cols + c] - static_cast<double>(code) * s) / d;
    }
    for (std::size_t j = i + 1; j < n; ++j) {
      const double uij = u[i * n + j];
      if (uij == 0.0) continue;
      for (std::size_t c = 0; c < cols; ++c) w[j * cols + c] -= uij * err[c];
    }
  }
  return q;
}

DenseMatrix BitDeltaResult::reconstruct() const {
  DenseMatrix out(rows, cols);
  auto v = out.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = negative[i] ? -scale : scale;
  return out;
}

BitDeltaResult bitdelta_compress(const DenseMatrix& delta) {
  BitDeltaResult r{delta.rows(), delta.cols(), std::vector<bool>(delta.size()), 0.0f};
  double sum = 0.0;
  auto v = delta.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    sum += std::fabs(static_cast<double>(v[i]));
    r.negative[i] = v[i] < 0.0f;
  }
  r.scale = static_cast<float>(sum / static_cast<double>(v.size()));
  return r;
}

std::vector<std::uint8_t> pack_int4(std::span<const std::int8_t> codes, std::size_t rows, std::size_t cols) {
  if (codes.size() != rows * cols) throw ShapeError("pack_int4: code count != rows*cols");
  const std::size_t stride = (cols + 1) / 2;
  std::vector<std::uint8_t> out(rows * stride, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const int v = codes[r * cols + c];
      if (v < -8 || v > 7) throw ValidationError(fmt::format("pack_int4: code {} does not fit 4 bits", v));
      const auto nib = static_cast<std::uint8_t>(v & 0x0F);
      out[r * stride + c / 2] |= (c % 2 == 0) ? nib : static_cast<std::uint8_t>(nib << 4);
    }
  }
  return out;
}

std::vector<std::int8_t> unpack_int4(std::span<const std::uint8_t> bytes, std::size_t rows, std::size_t cols) {
  const std::size_t stride = (cols + 1) / 2;
  if (bytes.size() != rows * stride) {
    throw FormatError(fmt::format("unpack_int4: {} bytes for {}x{} codes, expected {}", bytes.size(), rows, cols,
                                  rows * stride));
  }
  auto sign_extend = [](std::uint8_t nib) { return static_cast<std::int8_t>(nib >= 8 ? int{nib} - 16 : int{nib}); };
  std::vector<std::int8_t> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::uint8_t b = bytes[r * stride + c / 2];
      out[r * cols + c] = sign_extend(c % 2 == 0 ? (b & 0x0F) : (b >> 4));
    }
    if (cols % 2 == 1 && (bytes[r * stride + stride - 1] >> 4) != 0) {
      throw FormatError(fmt::format("unpack_int4: nonzero padding nibble in row {}", r));
    }
  }
  return out;
}

}  // namespace skillzip
