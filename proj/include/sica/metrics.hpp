#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "sica/errors.hpp"

namespace sica {

inline void require_binary_labels(const std::vector<int>& labels, const char* who) {
  for (int y : labels)
    if (y != 0 && y != 1) throw std::invalid_argument(std::string(who) + ": labels must be 0/1");
}

// Fraction of samples with (score >= threshold) == label. >= is inclusive,
// so an all-0.5 score vector at threshold 0.5 predicts every sample positive.
inline double accuracy(const std::vector<double>& scores, const std::vector<int>& labels,
                       double threshold = 0.5) {
  if (scores.empty() || scores.size() != labels.size())
    throw std::invalid_argument("accuracy: empty or mismatched inputs");
  require_binary_labels(labels, "accuracy");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const int pred = scores[i] >= threshold ? 1 : 0;
    if (pred == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

// Mann-Whitney AUC: probability a random positive outscores a random
// negative, ties counting half. Computed from tie-averaged ranks.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.empty() || scores.size() != labels.size())
    throw std::invalid_argument("auc: empty or mismatched inputs");
  require_binary_labels(labels, "auc");
  const std::size_t n = scores.size();
  std::size_t np = 0;
  for (int y : labels) np += static_cast<std::size_t>(y);
  const std::size_t nn = n - np;
  if (np == 0 || nn == 0) throw numeric_error("auc: undefined for single-class input");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Average 1-based ranks within tie groups; rank sums of half-integers are
  // exact in doubles for any practical n.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t t = i; t <= j; ++t)
      if (labels[order[t]] == 1) rank_sum_pos += avg_rank;
    i = j + 1;
  }
  const double numerator =
      rank_sum_pos - 0.5 * static_cast<double>(np) * static_cast<double>(np + 1);
  return numerator / (static_cast<double>(np) * static_cast<double>(nn));
}

// Non-interpolated step-sum AP. Equal scores are grouped and processed as a
// single step.
inline double average_precision(const std::vector<double>& scores,
                                const std::vector<int>& labels) {
  if (scores.empty() || scores.size() != labels.size())
    throw std::invalid_argument("average_precision: empty or mismatched inputs");
  require_binary_labels(labels, "average_precision");
  std::size_t np = 0;
  for (int y : labels) np += static_cast<std::size_t>(y);
  if (np == 0) throw numeric_error("average_precision: undefined without positives");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double ap = 0.0;
  std::size_t tp = 0, seen = 0, i = 0;
  const std::size_t n = scores.size();
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    std::size_t group_tp = 0;
    for (std::size_t t = i; t <= j; ++t) group_tp += static_cast<std::size_t>(labels[order[t]]);
    const std::size_t tp_prev = tp;
    tp += group_tp;
    seen += j - i + 1;
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (static_cast<double>(tp - tp_prev) / static_cast<double>(np)) * precision;
    i = j + 1;
  }
  return ap;
}

// Harmonic mean of precision and recall at the threshold; 0 by convention
// when precision + recall is 0.
inline double f1(const std::vector<double>& scores, const std::vector<int>& labels,
                 double threshold = 0.5) {
  if (scores.empty() || scores.size() != labels.size())
    throw std::invalid_argument("f1: empty or mismatched inputs");
  require_binary_labels(labels, "f1");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (pred && labels[i] == 1) ++tp;
    if (pred && labels[i] == 0) ++fp;
    if (!pred && labels[i] == 1) ++fn;
  }
  if (tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

struct MetricBundle {
  double acc = 0.0;
  double auc = 0.0;
  double ap = 0.0;
  double f1 = 0.0;
  std::size_t n = 0;
};

inline MetricBundle evaluate_bundle(const std::vector<double>& scores,
                                    const std::vector<int>& labels, double threshold = 0.5) {
  MetricBundle b;
  b.acc = accuracy(scores, labels, threshold);
  b.auc = auc(scores, labels);
  b.ap = average_precision(scores, labels);
  b.f1 = f1(scores, labels, threshold);
  b.n = scores.size();
  return b;
}

// Rounding for report tables: nearest, with exact halves resolved toward
// zero. Half-up cannot reproduce the reference aggregation for tie cases,
// so ties go down; everything else is ordinary nearest rounding.
inline double round_report(double x, int decimals) {
  double p = 1.0;
  for (int i = 0; i < decimals; ++i) p *= 10.0;
  const double scaled = std::abs(x) * p;
  const double base = std::floor(scaled);
  const double frac = scaled - base;
  double r = (frac > 0.5) ? base + 1.0 : base;
  return std::copysign(r / p, x);
}

// Formats a fraction in [0,1] as a percent with one decimal, e.g. 0.854 -> "85.4".
inline std::string format_percent(double fraction) {
  const double rounded = round_report(fraction * 100.0, 1);
  const long long tenths = std::llround(rounded * 10.0);
  std::string sign = tenths < 0 ? "-" : "";
  const long long mag = std::llabs(tenths);
  return sign + std::to_string(mag / 10) + "." + std::to_string(mag % 10);
}

// Formats a fraction with four decimals, the convention for AUC grids.
inline std::string format_fraction4(double value) {
  const double rounded = round_report(value, 4);
  const long long units = std::llround(rounded * 10000.0);
  std::string sign = units < 0 ? "-" : "";
  long long mag = std::llabs(units);
  std::string frac = std::to_string(mag % 10000);
  frac.insert(frac.begin(), 4 - frac.size(), '0');
  return sign + std::to_string(mag / 10000) + "." + frac;
}

struct MacroRow {
  std::string name;
  MetricBundle mean;
};

// Per-domain unweighted means over subtype bundles, then an "Overall" row
// that is the unweighted mean of the domain means (macro-average of the
// domain averages).
inline std::vector<MacroRow> macro_table(const std::map<std::string, MetricBundle>& per_group,
                                         const std::map<std::string, std::vector<std::string>>& grouping) {
  if (grouping.empty()) throw std::invalid_argument("macro_table: empty grouping");
  std::vector<MacroRow> rows;
  MetricBundle overall;
  for (const auto& [domain, subtypes] : grouping) {
    if (subtypes.empty())
      throw std::invalid_argument("macro_table: empty group " + domain);
    MetricBundle mean;
    for (const std::string& sub : subtypes) {
      auto it = per_group.find(sub);
      if (it == per_group.end())
        throw std::invalid_argument("macro_table: missing group " + sub);
      mean.acc += it->second.acc;
      mean.auc += it->second.auc;
      mean.ap += it->second.ap;
      mean.f1 += it->second.f1;
      mean.n += it->second.n;
    }
    const double c = static_cast<double>(subtypes.size());
    mean.acc /= c;
    mean.auc /= c;
    mean.ap /= c;
    mean.f1 /= c;
    rows.push_back({domain, mean});
    overall.acc += mean.acc;
    overall.auc += mean.auc;
    overall.ap += mean.ap;
    overall.f1 += mean.f1;
    overall.n += mean.n;
  }
  const double k = static_cast<double>(grouping.size());
  overall.acc /= k;
  overall.auc /= k;
  overall.ap /= k;
  overall.f1 /= k;
  rows.push_back({"Overall", overall});
  return rows;
}

}  // namespace sica
