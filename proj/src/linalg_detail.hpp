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

// f64 helpers shared by the SVD and rotation code. Matrices here are
// column-major: column j occupies [j*rows, (j+1)*rows).

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace skillzip::detail {

inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const double* a, std::size_t n) { return std::sqrt(dot(a, a, n)); }

// Modified Gram-Schmidt with one reorthogonalization pass on the columns of
// a (rows x cols, column-major, rows >= cols). Returns false when some column
// keeps less than rank_tol of its original norm after projection, i.e. the
// input is numerically rank deficient.
inline bool orthonormalize_columns(std::vector<double>& a, std::size_t rows, std::size_t cols,
                                   double rank_tol = 1e-10) {
  for (std::size_t j = 0; j < cols; ++j) {
    double* cj = a.data() + j * rows;
    const double original = norm2(cj, rows);
    if (original == 0.0) return false;
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < j; ++k) {
        const double* ck = a.data() + k * rows;
        const double p = dot(ck, cj, rows);
        for (std::size_t i = 0; i < rows; ++i) cj[i] -= p * ck[i];
      }
    }
    const double nrm = norm2(cj, rows);
    if (!(nrm > rank_tol * original)) return false;
    for (std::size_t i = 0; i < rows; ++i) cj[i] /= nrm;
  }
  return true;
}

}  // namespace skillzip::detail
