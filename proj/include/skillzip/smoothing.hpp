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

#include <functional>
#include <span>
#include <vector>

#include "skillzip/prng.hpp"
#include "skillzip/quantizer.hpp"
#include "skillzip/tensor.hpp"

namespace skillzip {

// Per-input-channel migration factors: X <- X diag(s)^-1, W <- diag(s) W.
struct SmoothVector {
  std::vector<float> s;
  double alpha = 0.7;
  double epsilon = 1e-5;
};

// s_i = max(eps, mean_abs_i^alpha / max(eps, max_j |W_ij|)^(1 - alpha)).
// Nondecreasing in mean_abs_i for fixed W.
SmoothVector compute_smooth(std::span<const double> mean_abs, const DenseMatrix& w, double alpha = 0.7,
                            double epsilon = 1e-5);

struct SmoothedPair {
  DenseMatrix x;
  DenseMatrix w;
};

// (X diag(s)^-1, diag(s) W). Throws ValidationError on a nonpositive s entry.
SmoothedPair apply_smooth(const DenseMatrix& x, const DenseMatrix& w, std::span<const float> s);
// Only the activation side: X diag(s)^-1.
DenseMatrix smooth_activations(const DenseMatrix& x, std::span<const float> s);

// Orthogonal R x R matrix from modified Gram-Schmidt (with one
// reorthogonalization pass) over the columns of a standard-normal draw. Each
// column's first nonzero entry is made positive. Rank-deficient draws are
// discarded and redrawn, up to 8 attempts.
DenseMatrix sample_rotation(Prng& rng, std::size_t r);

struct RotatedFactors {
  DenseMatrix A;  // A Q
  DenseMatrix B;  // Q^T B
};
RotatedFactors fold_rotation(const DenseMatrix& a, const DenseMatrix& b, const DenseMatrix& q);

struct RotationChoice {
  DenseMatrix Q;
  std::size_t candidate_index = 0;  // 0 is the identity
  double loss = 0.0;
};

// Loss of one rotated factor pair; smaller is better.
using RotationLoss = std::function<double(const DenseMatrix& a_rot, const DenseMatrix& b_rot)>;

// ||X A B - dq(Q(X)) dq(Q(A_rot)) dq(Q(B_rot))||_F with each operand
// fake-quantized at its configured bit-width and granularity.
double fake_quant_loss(const DenseMatrix& x_calib, const DenseMatrix& reference, const DenseMatrix& a_rot,
                       const DenseMatrix& b_rot, const QuantConfig& config);

// Scores the identity (candidate 0) and n_candidates sampled rotations (zero
// leaves only the identity); returns the lowest loss, lowest index on ties.
RotationChoice select_rotation(const DenseMatrix& a, const DenseMatrix& b, const RotationLoss& loss, Prng& rng,
                               std::size_t n_candidates = 10);
RotationChoice select_rotation(const DenseMatrix& a, const DenseMatrix& b, const DenseMatrix& x_calib,
                               const QuantConfig& config, Prng& rng, std::size_t n_candidates = 10);

}  // namespace skillzip
