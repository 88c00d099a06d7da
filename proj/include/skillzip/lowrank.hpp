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
#include <variant>
#include <vector>

#include "skillzip/tensor.hpp"

namespace skillzip {

// Top-R singular triplets: W ~= U diag(sigma) Vt.
struct SvdResult {
  DenseMatrix U;              // m x R, orthonormal columns
  std::vector<double> sigma;  // R values, nonincreasing, >= 0
  DenseMatrix Vt;             // R x n, orthonormal rows

  std::size_t rank() const { return sigma.size(); }
};

struct FixedRank {
  std::size_t rank;
};
struct EnergyRank {
  double fraction;  // eta in (0, 1]
};
using RankPolicy = std::variant<FixedRank, EnergyRank>;

enum class SvdMethod { kJacobi, kRandomized };

struct SvdOptions {
  SvdMethod method = SvdMethod::kJacobi;
  double sweep_tol = 1e-10;
  int max_sweeps = 60;
  // Randomized range finder (fixed-rank policies only).
  std::size_t oversample = 10;
  int power_iters = 4;
  std::uint64_t seed = 0x5eed;
};

// Truncated SVD. Jacobi decomposes the whole matrix with one-sided
// (Hestenes) rotations in f64 and keeps the leading triplets; Randomized
// first projects onto an orthonormal basis of W * Omega (R + oversample
// Gaussian columns, refined by power iterations) and runs Jacobi on the
// small projected matrix. Energy policies pick the smallest R whose leading
// sigma^2 sum reaches fraction * total. Each U column is sign-fixed so that
// its largest-magnitude entry is nonnegative.
SvdResult truncated_svd(const DenseMatrix& w, const RankPolicy& policy, const SvdOptions& options = {});

// Independent reference: power iteration on the Gram matrix with Hotelling
// deflation, one triplet at a time. Slow; used to cross-check Jacobi.
SvdResult svd_power_deflation(const DenseMatrix& w, std::size_t rank, int max_iters = 20000, double tol = 1e-13);

// Full singular spectrum (all min(m, n) values) via Jacobi.
std::vector<double> singular_values(const DenseMatrix& w, const SvdOptions& options = {});

// Smallest R with sum_{i<R} sigma_i^2 >= fraction * sum sigma_i^2 (R >= 1).
std::size_t rank_for_energy(const std::vector<double>& sigma, double fraction);

DenseMatrix reconstruct(const SvdResult& svd);

struct LowRankFactors {
  DenseMatrix A;  // m x R
  DenseMatrix B;  // R x n
};

// A = U diag(sqrt(sigma)), B = diag(sqrt(sigma)) Vt. Throws ValidationError on
// negative sigma.
LowRankFactors split_factors(const SvdResult& svd);

}  // namespace skillzip
