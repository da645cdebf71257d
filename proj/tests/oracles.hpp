#pragma once

// Independent reference implementations used only by tests. These stay
// deliberately naive and share no code path with the library routines they
// check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "sica/matrix.hpp"

namespace oracle {

// Plain jik triple loop.
inline sica::Matrix naive_matmul(const sica::Matrix& a, const sica::Matrix& b) {
  sica::Matrix c(a.rows, b.cols);
  for (std::size_t j = 0; j < b.cols; ++j)
    for (std::size_t i = 0; i < a.rows; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += a(i, k) * b(k, j);
      c(i, j) = acc;
    }
  return c;
}

// Eigenvalues of a symmetric matrix by classical two-sided Jacobi.
// Returned sorted descending.
inline std::vector<double> sym_eigenvalues(sica::Matrix s, std::size_t max_sweeps = 100) {
  const std::size_t n = s.rows;
  if (s.cols != n) throw std::invalid_argument("sym_eigenvalues: not square");
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += s(p, q) * s(p, q);
    if (off <= 1e-24 * (1.0 + sica::frobenius_norm_sq(s))) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (s(p, q) == 0.0) continue;
        const double theta = (s(q, q) - s(p, p)) / (2.0 * s(p, q));
        const double t =
            (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = t * c;
        for (std::size_t i = 0; i < n; ++i) {
          const double sip = s(i, p), siq = s(i, q);
          s(i, p) = c * sip - sn * siq;
          s(i, q) = sn * sip + c * siq;
        }
        for (std::size_t j = 0; j < n; ++j) {
          const double spj = s(p, j), sqj = s(q, j);
          s(p, j) = c * spj - sn * sqj;
          s(q, j) = sn * spj + c * sqj;
        }
      }
    }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = s(i, i);
  std::sort(eig.begin(), eig.end(), std::greater<double>());
  return eig;
}

// Residual of delta against span(basis columns) by explicit Gram-Schmidt
// projection of every delta column; returns squared Frobenius norm of the
// residual.
inline double gram_schmidt_residual_sq(const sica::Matrix& delta, const sica::Matrix& basis) {
  double total = 0.0;
  for (std::size_t j = 0; j < delta.cols; ++j) {
    std::vector<double> w(delta.rows);
    for (std::size_t i = 0; i < delta.rows; ++i) w[i] = delta(i, j);
    for (std::size_t c = 0; c < basis.cols; ++c) {
      double dot = 0.0;
      for (std::size_t i = 0; i < delta.rows; ++i) dot += w[i] * basis(i, c);
      for (std::size_t i = 0; i < delta.rows; ++i) w[i] -= dot * basis(i, c);
    }
    for (double x : w) total += x * x;
  }
  return total;
}

// Mann-Whitney AUC by direct pairwise counting, ties worth 1/2.
inline double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  long long ties = 0, np = 0, nn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 1) {
      ++np;
      for (std::size_t j = 0; j < scores.size(); ++j) {
        if (labels[j] != 0) continue;
        if (scores[i] > scores[j])
          wins += 1.0;
        else if (scores[i] == scores[j])
          ++ties;
      }
    } else {
      ++nn;
    }
  }
  if (np == 0 || nn == 0) throw std::invalid_argument("pairwise_auc: single-class input");
  const double numerator = wins + 0.5 * static_cast<double>(ties);
  return numerator / (static_cast<double>(np) * static_cast<double>(nn));
}

// Average precision by scanning unique thresholds in descending order and
// counting tp/fp from scratch at each.
inline double threshold_scan_ap(const std::vector<double>& scores, const std::vector<int>& labels) {
  long long np = 0;
  for (int y : labels) np += (y == 1);
  if (np == 0) throw std::invalid_argument("threshold_scan_ap: no positives");
  std::vector<double> thresholds = scores;
  std::sort(thresholds.begin(), thresholds.end(), std::greater<double>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  double ap = 0.0;
  long long tp_prev = 0;
  for (double tau : thresholds) {
    long long tp = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= tau) {
        if (labels[i] == 1)
          ++tp;
        else
          ++fp;
      }
    }
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (static_cast<double>(tp - tp_prev) / static_cast<double>(np)) * precision;
    tp_prev = tp;
  }
  return ap;
}

inline double confusion_f1(const std::vector<double>& scores, const std::vector<int>& labels,
                           double threshold) {
  long long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (pred && labels[i] == 1) ++tp;
    if (pred && labels[i] == 0) ++fp;
    if (!pred && labels[i] == 1) ++fn;
  }
  if (tp == 0 && (fp > 0 || fn > 0)) return 0.0;
  if (tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

inline double count_accuracy(const std::vector<double>& scores, const std::vector<int>& labels,
                             double threshold) {
  long long correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const int pred = scores[i] >= threshold ? 1 : 0;
    if (pred == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

}  // namespace oracle
