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

#include "skillzip/smoothing.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "linalg_detail.hpp"
#include "skillzip/error.hpp"

namespace skillzip {

SmoothVector compute_smooth(std::span<const double> mean_abs, const DenseMatrix& w, double alpha, double epsilon) {
  if (mean_abs.size() != w.rows()) {
    throw ShapeError(fmt::format("smoothing: profile has {} channels, weight has {} rows", mean_abs.size(), w.rows()));
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError(fmt::format("alpha {} outside [0, 1]", alpha));
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ValidationError("epsilon must be positive");
  SmoothVector sv{std::vector<float>(w.rows()), alpha, epsilon};
  for (std::size_t i = 0; i < w.rows(); ++i) {
    double wmax = 0.0;
    for (float v : w.row(i)) wmax = std::max(wmax, static_cast<double>(std::fabs(v)));
    const double act = std::pow(std::max(mean_abs[i], 0.0), alpha);
    const double wt = std::pow(std::max(epsilon, wmax), 1.0 - alpha);
    sv.s[i] = static_cast<float>(std::max(epsilon, act / wt));
  }
  return sv;
}

DenseMatrix smooth_activations(const DenseMatrix& x, std::span<const float> s) {
  if (s.size() != x.cols()) throw ShapeError("smoothing: vector length != activation columns");
  for (float v : s) {
    if (!(v > 0.0f) || !std::isfinite(v)) throw ValidationError(fmt::format("smoothing factor {} is not positive", v));
  }
  DenseMatrix out = x;
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto row = out.row(t);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] /= s[c];
  }
  return out;
}

SmoothedPair apply_smooth(const DenseMatrix& x, const DenseMatrix& w, std::span<const float> s) {
  if (s.size() != w.rows()) throw ShapeError("smoothing: vector length != weight rows");
  DenseMatrix xs = smooth_activations(x, s);
  return {std::move(xs), scale_rows(w, s)};
}

DenseMatrix sample_rotation(Prng& rng, std::size_t r) {
  if (r == 0) throw ValidationError("rotation size must be >= 1");
  constexpr int kAttempts = 8;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    std::vector<double> g(r * r);
    for (auto& v : g) v = rng.gaussian();
    if (!detail::orthonormalize_columns(g, r, r)) continue;
    DenseMatrix q(r, r);
    for (std::size_t j = 0; j < r; ++j) {
      const double* col = g.data() + j * r;
      std::size_t lead = 0;
      while (lead < r && col[lead] == 0.0) ++lead;
      const double sign = (lead < r && col[lead] < 0.0) ? -1.0 : 1.0;
      for (std::size_t i = 0; i < r; ++i) q(i, j) = static_cast<float>(sign * col[i]);
    }
    return q;
  }
  throw NumericError(fmt::format("could not draw a full-rank {}x{} Gaussian in {} attempts", r, r, kAttempts));
}

RotatedFactors fold_rotation(const DenseMatrix& a, const DenseMatrix& b, const DenseMatrix& q) {
  if (a.cols() != b.rows() || q.rows() != a.cols() || q.cols() != a.cols()) {
    throw ShapeError(fmt::format("fold_rotation: A {}x{}, B {}x{}, Q {}x{}", a.rows(), a.cols(), b.rows(), b.cols(),
                                 q.rows(), q.cols()));
  }
  return {matmul(a, q), matmul(transpose(q), b)};
}

double fake_quant_loss(const DenseMatrix& x_calib, const DenseMatrix& reference, const DenseMatrix& a_rot,
                       const DenseMatrix& b_rot, const QuantConfig& config) {
  const DenseMatrix xq = quantize_dequantize(x_calib, config.bits_x, config.gran_x);
  const DenseMatrix aq = quantize_dequantize(a_rot, config.bits_a, QuantConfig::gran_a);
  const DenseMatrix bq = quantize_dequantize(b_rot, config.bits_b, config.gran_b);
  return fro_distance(matmul(matmul(xq, aq), bq), reference);
}

RotationChoice select_rotation(const DenseMatrix& a, const DenseMatrix& b, const RotationLoss& loss, Prng& rng,
                               std::size_t n_candidates) {
  if (a.cols() != b.rows()) throw ShapeError("select_rotation: A cols != B rows");
  const std::size_t r = a.cols();
  RotationChoice best{DenseMatrix::identity(r), 0, loss(a, b)};
  for (std::size_t i = 1; i <= n_candidates; ++i) {
    DenseMatrix q = sample_rotation(rng, r);
    auto rot = fold_rotation(a, b, q);
    const double l = loss(rot.A, rot.B);
    if (l < best.loss) best = {std::move(q), i, l};
  }
  return best;
}

RotationChoice select_rotation(const DenseMatrix& a, const DenseMatrix& b, const DenseMatrix& x_calib,
                               const QuantConfig& config, Prng& rng, std::size_t n_candidates) {
  if (x_calib.cols() != a.rows()) throw ShapeError("select_rotation: calibration columns != A rows");
  config.validate();
  const DenseMatrix reference = matmul(matmul(x_calib, a), b);
  return select_rotation(
      a, b, [&](const DenseMatrix& ar, const DenseMatrix& br) { return fake_quant_loss(x_calib, reference, ar, br, config); },
      rng, n_candidates);
}

}  // namespace skillzip
