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

#include "skillzip/tensor.hpp"

#include <fmt/format.h>

#include <atomic>
#include <cmath>
#include <cstring>

#include "skillzip/error.hpp"
#include "skillzip/parallel.hpp"

namespace skillzip {

namespace {
std::atomic<unsigned> g_threads{1};
}

void set_num_threads(unsigned n) {
  g_threads = n == 0 ? std::max(1u, std::thread::hardware_concurrency()) : n;
}
unsigned num_threads() { return g_threads; }

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols)
    : DenseMatrix(rows, cols, std::vector<float>(rows * cols, 0.0f)) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (rows == 0 || cols == 0) {
    throw ShapeError(fmt::format("matrix must be at least 1x1, got {}x{}", rows, cols));
  }
  if (data_.size() != rows * cols) {
    throw ShapeError(
        fmt::format("matrix {}x{} needs {} values, got {}", rows, cols, rows * cols, data_.size()));
  }
}

DenseMatrix::DenseMatrix(std::initializer_list<std::initializer_list<float>> rows)
    : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0) {
  if (rows_ == 0 || cols_ == 0) throw ShapeError("matrix literal must be at least 1x1");
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
  return m;
}

bool DenseMatrix::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool DenseMatrix::bitwise_equal(const DenseMatrix& other) const {
  return same_shape(other) &&
         std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError(fmt::format("matmul: {}x{} times {}x{}", a.rows(), a.cols(), b.rows(), b.cols()));
  }
  const std::size_t n = b.cols();
  const std::size_t k_dim = a.cols();
  DenseMatrix out(a.rows(), n);
  parallel_for(a.rows(), [&](std::size_t begin, std::size_t end) {
    std::vector<double> acc(n);
    for (std::size_t i = begin; i < end; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const auto a_row = a.row(i);
      for (std::size_t k = 0; k < k_dim; ++k) {
        const double aik = a_row[k];
        if (aik == 0.0) continue;
        const float* b_row = b.row(k).data();
        for (std::size_t j = 0; j < n; ++j) acc[j] += aik * static_cast<double>(b_row[j]);
      }
      auto o = out.row(i);
      for (std::size_t j = 0; j < n; ++j) o[j] = static_cast<float>(acc[j]);
    }
  });
  return out;
}

double fro_norm(const DenseMatrix& m) {
  double sum = 0.0;
  for (float v : m.values()) sum += static_cast<double>(v) * v;
  return std::sqrt(sum);
}

DenseMatrix transpose(const DenseMatrix& m) {
  DenseMatrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  }
  return t;
}

namespace {
template <typename Op>
DenseMatrix elementwise(const DenseMatrix& a, const DenseMatrix& b, const char* name, Op op) {
  if (!a.same_shape(b)) {
    throw ShapeError(fmt::format("{}: {}x{} vs {}x{}", name, a.rows(), a.cols(), b.rows(), b.cols()));
  }
  DenseMatrix out(a.rows(), a.cols());
  auto o = out.values();
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = op(av[i], bv[i]);
  return out;
}
}  // namespace

DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
  return elementwise(a, b, "add", [](float x, float y) { return x + y; });
}

DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b) {
  return elementwise(a, b, "subtract", [](float x, float y) { return x - y; });
}

DenseMatrix scaled(const DenseMatrix& m, float factor) {
  DenseMatrix out = m;
  for (float& v : out.values()) v *= factor;
  return out;
}

double fro_distance(const DenseMatrix& a, const DenseMatrix& b) {
  if (!a.same_shape(b)) throw ShapeError("fro_distance: shape mismatch");
  double sum = 0.0;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - bv[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

double relative_error(const DenseMatrix& approx, const DenseMatrix& reference, double floor) {
  return fro_distance(approx, reference) / std::max(fro_norm(reference), floor);
}

DenseMatrix scale_columns(const DenseMatrix& m, std::span<const float> v) {
  if (v.size() != m.cols()) throw ShapeError("scale_columns: vector length != cols");
  DenseMatrix out = m;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] *= v[j];
  }
  return out;
}

DenseMatrix scale_rows(const DenseMatrix& m, std::span<const float> v) {
  if (v.size() != m.rows()) throw ShapeError("scale_rows: vector length != rows");
  DenseMatrix out = m;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (float& x : out.row(i)) x *= v[i];
  }
  return out;
}

DenseMatrix vstack(std::span<const DenseMatrix> parts) {
  if (parts.empty()) throw ShapeError("vstack: no parts");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("vstack: column count mismatch");
    rows += p.rows();
  }
  std::vector<float> data;
  data.reserve(rows * cols);
  for (const auto& p : parts) data.insert(data.end(), p.values().begin(), p.values().end());
  return {rows, cols, std::move(data)};
}

DenseMatrix slice_rows(const DenseMatrix& m, std::size_t begin, std::size_t end) {
  if (begin >= end || end > m.rows()) throw ShapeError("slice_rows: bad range");
  std::vector<float> data(m.values().begin() + begin * m.cols(), m.values().begin() + end * m.cols());
  return {end - begin, m.cols(), std::move(data)};
}

}  // namespace skillzip
