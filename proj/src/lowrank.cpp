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

#include "skillzip/lowrank.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "linalg_detail.hpp"
#include "skillzip/error.hpp"
#include "skillzip/prng.hpp"

namespace skillzip {

namespace {

// Column-major f64 copy, optionally transposed.
std::vector<double> to_colmajor(const DenseMatrix& w, bool transposed) {
  const std::size_t m = w.rows();
  const std::size_t n = w.cols();
  std::vector<double> out(m * n);
  if (!transposed) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[j * m + i] = w(i, j);
  } else {
    // W^T is n x m; its column i is row i of W.
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] = w(i, j);
  }
  return out;
}

struct Triplets {
  std::size_t m = 0, n = 0;  // original shape
  std::vector<double> sigma;  // k values, descending
  std::vector<double> u;      // m x k column-major
  std::vector<double> v;      // n x k column-major
};

// Hestenes one-sided Jacobi on a tall column-major matrix g (rows x cols,
// rows >= cols). On return g holds U*Sigma and v holds V (cols x cols).
void hestenes(std::vector<double>& g, std::size_t rows, std::size_t cols, std::vector<double>& v,
              const SvdOptions& opt) {
  v.assign(cols * cols, 0.0);
  for (std::size_t j = 0; j < cols; ++j) v[j * cols + j] = 1.0;
  for (int sweep = 0; sweep < opt.max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < cols; ++p) {
      double* gp = g.data() + p * rows;
      double* vp = v.data() + p * cols;
      for (std::size_t q = p + 1; q < cols; ++q) {
        double* gq = g.data() + q * rows;
        double* vq = v.data() + q * cols;
        const double alpha = detail::dot(gp, gp, rows);
        const double beta = detail::dot(gq, gq, rows);
        const double gamma = detail::dot(gp, gq, rows);
        if (gamma == 0.0 || std::fabs(gamma) <= opt.sweep_tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < rows; ++i) {
          const double a = gp[i];
          const double b = gq[i];
          gp[i] = c * a - s * b;
          gq[i] = s * a + c * b;
        }
        for (std::size_t i = 0; i < cols; ++i) {
          const double a = vp[i];
          const double b = vq[i];
          vp[i] = c * a - s * b;
          vq[i] = s * a + c * b;
        }
      }
    }
    if (!rotated) break;
  }
}

// Replaces columns of q (rows x k) whose norm is zero with unit vectors
// orthogonal to all others, trying standard basis vectors in order.
void complete_basis(std::vector<double>& q, std::size_t rows, std::size_t k) {
  std::size_t next_basis = 0;
  for (std::size_t j = 0; j < k; ++j) {
    double* cj = q.data() + j * rows;
    if (detail::norm2(cj, rows) > 0.5) continue;
    while (next_basis < rows) {
      std::fill(cj, cj + rows, 0.0);
      cj[next_basis++] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t o = 0; o < k; ++o) {
          if (o == j) continue;
          const double* co = q.data() + o * rows;
          if (detail::norm2(co, rows) < 0.5) continue;
          const double p = detail::dot(co, cj, rows);
          for (std::size_t i = 0; i < rows; ++i) cj[i] -= p * co[i];
        }
      }
      const double nrm = detail::norm2(cj, rows);
      if (nrm > 1e-6) {
        for (std::size_t i = 0; i < rows; ++i) cj[i] /= nrm;
        break;
      }
    }
  }
}

// Largest-magnitude entry of each U column made nonnegative (first such
// entry on ties); the matching V column flips with it.
void fix_signs(Triplets& t) {
  const std::size_t k = t.sigma.size();
  for (std::size_t j = 0; j < k; ++j) {
    double* uj = t.u.data() + j * t.m;
    std::size_t best = 0;
    for (std::size_t i = 1; i < t.m; ++i) {
      if (std::fabs(uj[i]) > std::fabs(uj[best])) best = i;
    }
    if (uj[best] < 0.0) {
      for (std::size_t i = 0; i < t.m; ++i) uj[i] = -uj[i];
      double* vj = t.v.data() + j * t.n;
      for (std::size_t i = 0; i < t.n; ++i) vj[i] = -vj[i];
    }
  }
}

Triplets jacobi_full(const DenseMatrix& w, const SvdOptions& opt) {
  const std::size_t m = w.rows();
  const std::size_t n = w.cols();
  const bool wide = m < n;
  const std::size_t rows = wide ? n : m;
  const std::size_t cols = wide ? m : n;
  std::vector<double> g = to_colmajor(w, wide);
  std::vector<double> vmat;
  hestenes(g, rows, cols, vmat, opt);

  std::vector<double> norms(cols);
  for (std::size_t j = 0; j < cols; ++j) norms[j] = detail::norm2(g.data() + j * rows, rows);
  std::vector<std::size_t> order(cols);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });

  // Left vectors of the tall problem, right vectors = vmat.
  std::vector<double> left(rows * cols, 0.0);
  std::vector<double> right(cols * cols, 0.0);
  Triplets t;
  t.m = m;
  t.n = n;
  t.sigma.resize(cols);
  for (std::size_t j = 0; j < cols; ++j) {
    const std::size_t src = order[j];
    const double s = norms[src];
    t.sigma[j] = s;
    if (s > 0.0) {
      for (std::size_t i = 0; i < rows; ++i) left[j * rows + i] = g[src * rows + i] / s;
    }
    std::copy_n(vmat.data() + src * cols, cols, right.data() + j * cols);
  }
  complete_basis(left, rows, cols);
  if (wide) {
    t.u = std::move(right);  // m x m
    t.v = std::move(left);   // n x m
  } else {
    t.u = std::move(left);
    t.v = std::move(right);
  }
  return t;
}

SvdResult to_result(const Triplets& t, std::size_t rank) {
  SvdResult r{DenseMatrix(t.m, rank), {}, DenseMatrix(rank, t.n)};
  r.sigma.assign(t.sigma.begin(), t.sigma.begin() + static_cast<std::ptrdiff_t>(rank));
  for (std::size_t j = 0; j < rank; ++j) {
    for (std::size_t i = 0; i < t.m; ++i) r.U(i, j) = static_cast<float>(t.u[j * t.m + i]);
    for (std::size_t i = 0; i < t.n; ++i) r.Vt(j, i) = static_cast<float>(t.v[j * t.n + i]);
  }
  return r;
}

std::size_t resolve_rank(const RankPolicy& policy, const std::vector<double>& sigma, std::size_t min_dim) {
  if (const auto* fixed = std::get_if<FixedRank>(&policy)) {
    if (fixed->rank < 1 || fixed->rank > min_dim) {
      throw ValidationError(fmt::format("rank {} outside [1, {}]", fixed->rank, min_dim));
    }
    return fixed->rank;
  }
  return rank_for_energy(sigma, std::get<EnergyRank>(policy).fraction);
}

Triplets randomized(const DenseMatrix& w, std::size_t rank, const SvdOptions& opt) {
  const std::size_t m = w.rows();
  const std::size_t n = w.cols();
  const std::size_t l = std::min(std::min(m, n), rank + opt.oversample);
  Prng rng(opt.seed);
  // Y = W * Omega, then (W W^T)^q refinement with re-orthonormalization.
  std::vector<double> wd(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) wd[i * n + j] = w(i, j);
  std::vector<double> omega(n * l);
  for (auto& x : omega) x = rng.gaussian();
  auto apply_w = [&](const std::vector<double>& in) {  // n x l colmajor -> m x l
    std::vector<double> out(m * l, 0.0);
    for (std::size_t c = 0; c < l; ++c)
      for (std::size_t i = 0; i < m; ++i) out[c * m + i] = detail::dot(wd.data() + i * n, in.data() + c * n, n);
    return out;
  };
  auto apply_wt = [&](const std::vector<double>& in) {  // m x l -> n x l
    std::vector<double> out(n * l, 0.0);
    for (std::size_t c = 0; c < l; ++c)
      for (std::size_t i = 0; i < m; ++i) {
        const double x = in[c * m + i];
        for (std::size_t j = 0; j < n; ++j) out[c * n + j] += wd[i * n + j] * x;
      }
    return out;
  };
  std::vector<double> y = apply_w(omega);
  detail::orthonormalize_columns(y, m, l, 0.0);
  for (int it = 0; it < opt.power_iters; ++it) {
    auto z = apply_wt(y);
    detail::orthonormalize_columns(z, n, l, 0.0);
    y = apply_w(z);
    detail::orthonormalize_columns(y, m, l, 0.0);
  }
  complete_basis(y, m, l);
  // Small problem: Bsm = Q^T W (l x n).
  auto qtw = apply_wt(y);  // n x l colmajor == (Q^T W)^T
  // Jacobi on the projected matrix, still in f64.
  const bool wide = l < n;
  const std::size_t rows = wide ? n : l;
  const std::size_t cols = wide ? l : n;
  std::vector<double> g(rows * cols);
  if (wide) {
    g = qtw;  // (Q^T W)^T column-major: column c is row c of Q^T W
  } else {
    for (std::size_t c = 0; c < l; ++c)
      for (std::size_t j = 0; j < n; ++j) g[j * l + c] = qtw[c * n + j];
  }
  std::vector<double> vmat;
  hestenes(g, rows, cols, vmat, opt);
  std::vector<double> norms(cols);
  for (std::size_t j = 0; j < cols; ++j) norms[j] = detail::norm2(g.data() + j * rows, rows);
  std::vector<std::size_t> order(cols);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });

  Triplets t;
  t.m = m;
  t.n = n;
  const std::size_t k = std::min(rank, cols);
  t.sigma.resize(k);
  t.u.assign(m * k, 0.0);
  t.v.assign(n * k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t src = order[j];
    const double s = norms[src];
    t.sigma[j] = s;
    // Small-problem left vector (length l) and right vector (length n).
    std::vector<double> us(l, 0.0);
    std::vector<double> vs(n, 0.0);
    if (wide) {
      for (std::size_t i = 0; i < l; ++i) us[i] = vmat[src * cols + i];
      if (s > 0.0)
        for (std::size_t i = 0; i < n; ++i) vs[i] = g[src * rows + i] / s;
    } else {
      if (s > 0.0)
        for (std::size_t i = 0; i < l; ++i) us[i] = g[src * rows + i] / s;
      for (std::size_t i = 0; i < n; ++i) vs[i] = vmat[src * cols + i];
    }
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      for (std::size_t c = 0; c < l; ++c) acc += y[c * m + i] * us[c];
      t.u[j * m + i] = acc;
    }
    std::copy(vs.begin(), vs.end(), t.v.begin() + static_cast<std::ptrdiff_t>(j * n));
  }
  complete_basis(t.u, m, k);
  complete_basis(t.v, n, k);
  return t;
}

}  // namespace

std::size_t rank_for_energy(const std::vector<double>& sigma, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ValidationError(fmt::format("energy fraction {} outside (0, 1]", fraction));
  }
  double total = 0.0;
  for (double s : sigma) total += s * s;
  if (total == 0.0) return 1;
  double acc = 0.0;
  for (std::size_t r = 0; r < sigma.size(); ++r) {
    acc += sigma[r] * sigma[r];
    if (acc >= fraction * total) return r + 1;
  }
  return sigma.size();
}

std::vector<double> singular_values(const DenseMatrix& w, const SvdOptions& options) {
  return jacobi_full(w, options).sigma;
}

SvdResult truncated_svd(const DenseMatrix& w, const RankPolicy& policy, const SvdOptions& options) {
  if (!w.all_finite()) throw ValidationError("truncated_svd: matrix has non-finite entries");
  const std::size_t min_dim = std::min(w.rows(), w.cols());
  if (options.method == SvdMethod::kRandomized && std::holds_alternative<FixedRank>(policy)) {
    const std::size_t rank = resolve_rank(policy, {}, min_dim);
    Triplets t = randomized(w, rank, options);
    fix_signs(t);
    return to_result(t, rank);
  }
  Triplets t = jacobi_full(w, options);
  const std::size_t rank = resolve_rank(policy, t.sigma, min_dim);
  fix_signs(t);
  return to_result(t, rank);
}

SvdResult svd_power_deflation(const DenseMatrix& w, std::size_t rank, int max_iters, double tol) {
  const std::size_t m = w.rows();
  const std::size_t n = w.cols();
  if (rank < 1 || rank > std::min(m, n)) {
    throw ValidationError(fmt::format("rank {} outside [1, {}]", rank, std::min(m, n)));
  }
  // Iterate on the smaller Gram matrix: W^T W (n x n) when n <= m, else W W^T.
  const bool right_side = n <= m;
  const std::size_t d = right_side ? n : m;
  std::vector<double> gram(d * d, 0.0);
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      double s = 0.0;
      if (right_side) {
        for (std::size_t i = 0; i < m; ++i) s += static_cast<double>(w(i, a)) * w(i, b);
      } else {
        for (std::size_t j = 0; j < n; ++j) s += static_cast<double>(w(a, j)) * w(b, j);
      }
      gram[a * d + b] = gram[b * d + a] = s;
    }
  }
  const std::vector<double> original = gram;

  Prng rng(0xD3F1A7E);
  std::vector<std::vector<double>> found;
  std::vector<double> lambdas;
  std::vector<double> v(d), y(d);
  for (std::size_t k = 0; k < rank; ++k) {
    for (auto& x : v) x = rng.gaussian();
    for (int it = 0; it < max_iters; ++it) {
      for (const auto& f : found) {
        const double p = detail::dot(f.data(), v.data(), d);
        for (std::size_t i = 0; i < d; ++i) v[i] -= p * f[i];
      }
      const double vn = detail::norm2(v.data(), d);
      if (vn == 0.0) break;
      for (auto& x : v) x /= vn;
      for (std::size_t i = 0; i < d; ++i) y[i] = detail::dot(gram.data() + i * d, v.data(), d);
      const double yn = detail::norm2(y.data(), d);
      if (yn == 0.0) break;
      double diff = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        const double e = y[i] / yn - v[i];
        diff += e * e;
      }
      for (std::size_t i = 0; i < d; ++i) v[i] = y[i] / yn;
      if (std::sqrt(diff) < tol) break;
    }
    {
      const double vn = detail::norm2(v.data(), d);
      if (vn > 0.0)
        for (auto& x : v) x /= vn;
    }
    for (std::size_t i = 0; i < d; ++i) y[i] = detail::dot(original.data() + i * d, v.data(), d);
    const double lambda = std::max(0.0, detail::dot(v.data(), y.data(), d));
    // Hotelling deflation.
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) gram[a * d + b] -= lambda * v[a] * v[b];
    found.push_back(v);
    lambdas.push_back(lambda);
  }

  Triplets t;
  t.m = m;
  t.n = n;
  t.sigma.resize(rank);
  const std::size_t other = right_side ? m : n;
  std::vector<double> own(d * rank), far(other * rank, 0.0);
  for (std::size_t k = 0; k < rank; ++k) {
    const double s = std::sqrt(lambdas[k]);
    t.sigma[k] = s;
    std::copy(found[k].begin(), found[k].end(), own.begin() + static_cast<std::ptrdiff_t>(k * d));
    if (s == 0.0) continue;
    for (std::size_t i = 0; i < other; ++i) {
      double acc = 0.0;
      if (right_side) {
        for (std::size_t j = 0; j < n; ++j) acc += static_cast<double>(w(i, j)) * found[k][j];
      } else {
        for (std::size_t j = 0; j < m; ++j) acc += static_cast<double>(w(j, i)) * found[k][j];
      }
      far[k * other + i] = acc / s;
    }
  }
  complete_basis(far, other, rank);
  if (right_side) {
    t.v = std::move(own);
    t.u = std::move(far);
  } else {
    t.u = std::move(own);
    t.v = std::move(far);
  }
  fix_signs(t);
  return to_result(t, rank);
}

DenseMatrix reconstruct(const SvdResult& svd) {
  DenseMatrix us = svd.U;
  for (std::size_t i = 0; i < us.rows(); ++i)
    for (std::size_t j = 0; j < svd.rank(); ++j) us(i, j) = static_cast<float>(us(i, j) * svd.sigma[j]);
  return matmul(us, svd.Vt);
}

LowRankFactors split_factors(const SvdResult& svd) {
  const std::size_t r = svd.rank();
  std::vector<float> root(r);
  for (std::size_t j = 0; j < r; ++j) {
    if (!(svd.sigma[j] >= 0.0)) throw ValidationError(fmt::format("negative singular value {}", svd.sigma[j]));
    root[j] = static_cast<float>(std::sqrt(svd.sigma[j]));
  }
  return {scale_columns(svd.U, root), scale_rows(svd.Vt, root)};
}

}  // namespace skillzip
