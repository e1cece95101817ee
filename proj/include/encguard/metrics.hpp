// Copyright 2026 The encguard Authors
// SPDX-License-Identifier: Apache-2.0

// Confusion counts, defender utility, macro-F1 and rank-statistic ROC AUC.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "encguard/error.hpp"

namespace encguard {

/// Positive class is "encrypted".
struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;
  std::int64_t fn = 0;

  std::int64_t total() const { return tp + fp + tn + fn; }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) { return a += b; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// U = 10 TP - 50 FN - FP.
inline std::int64_t utility(const ConfusionCounts& c) { return 10 * c.tp - 50 * c.fn - c.fp; }

/// Blocks (predicted positive) when score >= tau.
inline ConfusionCounts confusion(std::span<const double> scores, std::span<const int> labels, double tau) {
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= tau;
    if (labels[i] == 1) {
      pred ? ++c.tp : ++c.fn;
    } else {
      pred ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

inline double safe_ratio(double a, double b) { return b > 0 ? a / b : 0.0; }

inline double precision(const ConfusionCounts& c) { return safe_ratio(double(c.tp), double(c.tp + c.fp)); }
inline double recall(const ConfusionCounts& c) { return safe_ratio(double(c.tp), double(c.tp + c.fn)); }

inline double f1_positive(const ConfusionCounts& c) {
  return safe_ratio(2.0 * double(c.tp), double(2 * c.tp + c.fp + c.fn));
}

inline double f1_negative(const ConfusionCounts& c) {
  return safe_ratio(2.0 * double(c.tn), double(2 * c.tn + c.fn + c.fp));
}

inline double macro_f1(const ConfusionCounts& c) { return 0.5 * (f1_positive(c) + f1_negative(c)); }

/// Mann-Whitney rank statistic with average ranks for ties. 0.5 when one
/// class is absent.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == 1) {
      ++pos;
      rank_sum += rank[i];
    }
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0 || neg == 0) return 0.5;
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

struct ClassificationMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double macro_f1 = 0.0;
  double roc_auc = 0.5;
  double accuracy = 0.0;
  ConfusionCounts counts;
};

inline ClassificationMetrics classification_metrics(std::span<const double> scores, std::span<const int> labels,
                                                    double tau = 0.5) {
  if (scores.size() != labels.size()) throw Error(ErrorCode::SchemaMismatch, "scores and labels differ in length");
  for (double s : scores) {
    if (!(s >= 0.0 && s <= 1.0)) throw Error(ErrorCode::InvalidProbability, "score outside [0,1]");
  }
  ClassificationMetrics m;
  m.counts = confusion(scores, labels, tau);
  m.precision = precision(m.counts);
  m.recall = recall(m.counts);
  m.macro_f1 = macro_f1(m.counts);
  m.roc_auc = roc_auc(scores, labels);
  m.accuracy = safe_ratio(double(m.counts.tp + m.counts.tn), double(m.counts.total()));
  return m;
}

/// Nearest-rank percentile (no interpolation) of an unsorted series.
inline double percentile_nearest_rank(std::vector<double> v, double pct) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * static_cast<double>(v.size()) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, v.size());
  return v[rank - 1];
}

}  // namespace encguard
