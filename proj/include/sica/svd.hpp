#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "sica/errors.hpp"
#include "sica/matrix.hpp"

namespace sica {

// W = u * diag(s) * v^T with d = min(rows, cols) columns in u and v.
// Columns of u and v are orthonormal; s is sorted non-increasing.
struct SvdFactors {
  Matrix u;               // m x d
  std::vector<double> s;  // length d, non-negative, non-increasing
  Matrix v;               // n x d
};

// First k columns of the singular bases.
struct SubspaceBasis {
  Matrix uk;  // m x k
  Matrix vk;  // n x k
  std::size_t k = 0;
};

namespace detail {

// Replace exactly-zero columns of u (they arise for rank-deficient input)
// with an orthonormal completion. Picks, per missing column, the coordinate
// vector with the largest residual against the columns already in place,
// then re-orthogonalizes twice.
inline void complete_zero_columns(Matrix& u, const std::vector<bool>& is_zero) {
  const std::size_t m = u.rows;
  const std::size_t d = u.cols;
  for (std::size_t j = 0; j < d; ++j) {
    if (!is_zero[j]) continue;
    std::vector<double> best;
    double best_norm = -1.0;
    for (std::size_t cand = 0; cand < m; ++cand) {
      std::vector<double> w(m, 0.0);
      w[cand] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t c = 0; c < d; ++c) {
          if (c == j || (is_zero[c] && c > j)) continue;  // only settled columns
          double dot = 0.0;
          for (std::size_t i = 0; i < m; ++i) dot += w[i] * u(i, c);
          for (std::size_t i = 0; i < m; ++i) w[i] -= dot * u(i, c);
        }
      }
      double nrm = 0.0;
      for (double x : w) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm > best_norm) {
        best_norm = nrm;
        best = std::move(w);
      }
      if (best_norm > 0.9) break;  // good enough, stop scanning
    }
    if (best_norm <= 0.0) throw numeric_error("svd: failed to complete orthonormal basis");
    for (std::size_t i = 0; i < m; ++i) u(i, j) = best[i] / best_norm;
  }
}

// Core one-sided Jacobi on a matrix with rows >= cols.
inline SvdFactors jacobi_svd_tall(const Matrix& a, double tol, std::size_t max_sweeps) {
  const std::size_t m = a.rows;
  const std::size_t n = a.cols;
  // Work on columns: b starts as a copy of a, v accumulates the rotations.
  Matrix b = a;
  Matrix v = Matrix::identity(n);

  bool converged = (n == 1);
  for (std::size_t sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double bp = b(i, p), bq = b(i, q);
          app += bp * bp;
          aqq += bq * bq;
          apq += bp * bq;
        }
        if (app == 0.0 || aqq == 0.0) continue;
        if (std::abs(apq) <= tol * std::sqrt(app * aqq)) continue;
        converged = false;
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double cs = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = cs * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double bp = b(i, p), bq = b(i, q);
          b(i, p) = cs * bp - sn * bq;
          b(i, q) = sn * bp + cs * bq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = cs * vp - sn * vq;
          v(i, q) = sn * vp + cs * vq;
        }
      }
    }
  }
  if (!converged)
    throw numeric_error("svd: one-sided Jacobi did not converge within sweep cap");

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += b(i, j) * b(i, j);
    norms[j] = std::sqrt(acc);
  }

  // Stable sort on descending value keeps the original column order for ties.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return norms[i] > norms[j]; });

  SvdFactors f;
  f.u = Matrix(m, n);
  f.v = Matrix(n, n);
  f.s.resize(n);
  std::vector<bool> zero_col(n, false);
  for (std::size_t jj = 0; jj < n; ++jj) {
    const std::size_t src = order[jj];
    const double sv = norms[src];
    f.s[jj] = sv;
    if (sv > 0.0) {
      for (std::size_t i = 0; i < m; ++i) f.u(i, jj) = b(i, src) / sv;
    } else {
      zero_col[jj] = true;
    }
    for (std::size_t i = 0; i < n; ++i) f.v(i, jj) = v(i, src);
  }
  complete_zero_columns(f.u, zero_col);

  // Sign convention: largest-magnitude entry of each u column non-negative,
  // flipping the paired v column. Makes factors deterministic for fixtures.
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double mag = std::abs(f.u(i, j));
      if (mag > best) {
        best = mag;
        arg = i;
      }
    }
    if (f.u(arg, j) < 0.0) {
      for (std::size_t i = 0; i < m; ++i) f.u(i, j) = -f.u(i, j);
      for (std::size_t i = 0; i < n; ++i) f.v(i, j) = -f.v(i, j);
    }
  }
  return f;
}

}  // namespace detail

struct SvdOptions {
  double tol = 1e-12;           // relative off-diagonal Gram threshold
  std::size_t max_sweeps = 60;  // hard cap; exceeding it is a numeric_error
};

inline SvdFactors svd(const Matrix& w, const SvdOptions& opts = {}) {
  if (w.rows == 0 || w.cols == 0) throw std::invalid_argument("svd: empty matrix");
  for (double x : w.entries)
    if (!std::isfinite(x)) throw std::invalid_argument("svd: non-finite entry");
  if (w.rows >= w.cols) return detail::jacobi_svd_tall(w, opts.tol, opts.max_sweeps);
  SvdFactors f = detail::jacobi_svd_tall(transpose(w), opts.tol, opts.max_sweeps);
  std::swap(f.u, f.v);
  return f;
}

inline SubspaceBasis top_k(const SvdFactors& f, std::size_t k) {
  const std::size_t d = f.s.size();
  if (k < 1 || k > d) throw std::invalid_argument("top_k: k out of range [1, d]");
  SubspaceBasis basis;
  basis.k = k;
  basis.uk = Matrix(f.u.rows, k);
  basis.vk = Matrix(f.v.rows, k);
  for (std::size_t i = 0; i < f.u.rows; ++i)
    for (std::size_t j = 0; j < k; ++j) basis.uk(i, j) = f.u(i, j);
  for (std::size_t i = 0; i < f.v.rows; ++i)
    for (std::size_t j = 0; j < k; ++j) basis.vk(i, j) = f.v(i, j);
  return basis;
}

}  // namespace sica
