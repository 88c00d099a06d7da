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

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace skillzip {

// Row-major grid of 32-bit floats. Holds weights, activations and deltas.
// Always at least 1x1.
class DenseMatrix {
 public:
  DenseMatrix(std::size_t rows, std::size_t cols);  // zero-filled
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<float> data);
  DenseMatrix(std::initializer_list<std::initializer_list<float>> rows);

  static DenseMatrix zeros(std::size_t rows, std::size_t cols) { return {rows, cols}; }
  static DenseMatrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

  std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> values() const { return data_; }
  std::span<float> values() { return data_; }

  bool same_shape(const DenseMatrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const;

  // Bitwise equality of shape and every float (distinguishes -0 from +0).
  bool bitwise_equal(const DenseMatrix& other) const;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<float> data_;
};

// Product with per-element f64 accumulation in ascending k order, rounded
// once to f32. Row-parallel; the result is bit-identical at any thread count.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);

// sqrt(sum of squares) accumulated in f64.
double fro_norm(const DenseMatrix& m);

DenseMatrix transpose(const DenseMatrix& m);
DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix scaled(const DenseMatrix& m, float factor);

// ||a - b||_F computed in f64 without materializing the difference.
double fro_distance(const DenseMatrix& a, const DenseMatrix& b);

// ||a - b||_F / max(||b||_F, floor).
double relative_error(const DenseMatrix& approx, const DenseMatrix& reference,
                      double floor = 1e-30);

// X * diag(v): scales column j by v[j].
DenseMatrix scale_columns(const DenseMatrix& m, std::span<const float> v);
// diag(v) * X: scales row i by v[i].
DenseMatrix scale_rows(const DenseMatrix& m, std::span<const float> v);

// Stacks matrices with equal column counts vertically.
DenseMatrix vstack(std::span<const DenseMatrix> parts);
// Rows [begin, end) as a new matrix.
DenseMatrix slice_rows(const DenseMatrix& m, std::size_t begin, std::size_t end);

}  // namespace skillzip
