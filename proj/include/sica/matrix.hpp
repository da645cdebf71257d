#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sica/rng.hpp"

namespace sica {

// Dense row-major matrix of doubles. The universal carrier for weights,
// features and bases. Entries are always finite; the validating
// constructor and the file readers enforce this.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> entries;  // row-major, rows*cols

  Matrix() = default;

  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), entries(r * c, 0.0) {
    if (r == 0 || c == 0) throw std::invalid_argument("Matrix: dimensions must be positive");
  }

  Matrix(std::size_t r, std::size_t c, std::vector<double> data)
      : rows(r), cols(c), entries(std::move(data)) {
    if (r == 0 || c == 0) throw std::invalid_argument("Matrix: dimensions must be positive");
    if (entries.size() != r * c)
      throw std::invalid_argument("Matrix: entry count does not match rows*cols");
    for (double x : entries)
      if (!std::isfinite(x)) throw std::invalid_argument("Matrix: non-finite entry");
  }

  double& operator()(std::size_t i, std::size_t j) { return entries[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return entries[i * cols + j]; }

  double* row_ptr(std::size_t i) { return entries.data() + i * cols; }
  const double* row_ptr(std::size_t i) const { return entries.data() + i * cols; }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix random_uniform(std::size_t r, std::size_t c, double lo, double hi, Rng& rng) {
    Matrix m(r, c);
    for (double& x : m.entries) x = rng.uniform(lo, hi);
    return m;
  }

  static Matrix random_normal(std::size_t r, std::size_t c, Rng& rng) {
    Matrix m(r, c);
    for (double& x : m.entries) x = rng.normal();
    return m;
  }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

// c = a * b. Row-major ikj loop keeps the inner access contiguous.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw std::invalid_argument("matmul: inner dimensions differ (" + std::to_string(a.cols) +
                                " vs " + std::to_string(b.rows) + ")");
  Matrix c(a.rows, b.cols);
  const std::size_t n = b.cols;
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* ci = c.row_ptr(i);
    const double* ai = a.row_ptr(i);
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = ai[k];
      if (aik == 0.0) continue;
      const double* bk = b.row_ptr(k);
      for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

// c = a^T * b without forming the transpose.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) throw std::invalid_argument("matmul_tn: row counts differ");
  Matrix c(a.cols, b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* ak = a.row_ptr(k);
    const double* bk = b.row_ptr(k);
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aki = ak[i];
      if (aki == 0.0) continue;
      double* ci = c.row_ptr(i);
      for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

// c = a * b^T.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: column counts differ");
  Matrix c(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ai = a.row_ptr(i);
    double* ci = c.row_ptr(i);
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* bj = b.row_ptr(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += ai[k] * bj[k];
      ci[j] = acc;
    }
  }
  return c;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
  Matrix c = a;
  for (std::size_t i = 0; i < c.entries.size(); ++i) c.entries[i] += b.entries[i];
  return c;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("sub: shape mismatch");
  Matrix c = a;
  for (std::size_t i = 0; i < c.entries.size(); ++i) c.entries[i] -= b.entries[i];
  return c;
}

inline Matrix scale(const Matrix& a, double s) {
  Matrix c = a;
  for (double& x : c.entries) x *= s;
  return c;
}

inline double frobenius_norm_sq(const Matrix& a) {
  double acc = 0.0;
  for (double x : a.entries) acc += x * x;
  return acc;
}

inline double frobenius_norm(const Matrix& a) { return std::sqrt(frobenius_norm_sq(a)); }

inline double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double x : a.entries) m = std::max(m, std::abs(x));
  return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.entries.size(); ++i)
    m = std::max(m, std::abs(a.entries[i] - b.entries[i]));
  return m;
}

// True iff ||b^T b - I||_max <= tol.
inline bool orthonormal_check(const Matrix& b, double tol) {
  const Matrix g = matmul_tn(b, b);
  double worst = 0.0;
  for (std::size_t i = 0; i < g.rows; ++i)
    for (std::size_t j = 0; j < g.cols; ++j) {
      const double target = (i == j) ? 1.0 : 0.0;
      worst = std::max(worst, std::abs(g(i, j) - target));
    }
  return worst <= tol;
}

}  // namespace sica
