// Copyright 2026 The encguard Authors
// SPDX-License-Identifier: Apache-2.0

// Track A: out-of-bag permutation importance, incremental F1 curve, elbow.
// Track B: correlation pruning, chi-square ranking with a bypass list, and a
// utility-maximising wrapper over prefix lengths.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "encguard/error.hpp"
#include "encguard/features.hpp"
#include "encguard/metrics.hpp"
#include "encguard/models.hpp"
#include "encguard/random.hpp"

namespace encguard {

struct ImportanceRanking {
  std::vector<std::pair<std::string, double>> entries;  // descending score

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [n, _] : entries) out.push_back(n);
    return out;
  }
};

/// Mean drop in ensemble OOB accuracy over `n_rep` permutations of each
/// column. Rows that no tree left out of bag are skipped. Only trees that
/// split on the permuted column are re-evaluated.
inline ImportanceRanking permutation_importance(const ForestModel& f, const Matrix& X, std::span<const int> y,
                                                std::size_t n_rep = 20, std::uint64_t seed = 42) {
  if (f.trees.empty()) throw Error(ErrorCode::ModelUnfit, "forest has no trees");
  if (f.inbag.size() != f.trees.size() || f.inbag.front().size() != X.size()) {
    throw Error(ErrorCode::NoOOBSamples, "forest carries no bootstrap bookkeeping for this matrix");
  }
  const std::size_t n = X.size(), d = X.front().size(), T = f.trees.size();
  std::vector<std::vector<std::size_t>> oob_trees(n);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      if (f.inbag[t][i] == 0) oob_trees[i].push_back(t);
    }
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < n; ++i) {
    if (!oob_trees[i].empty()) rows.push_back(i);
  }
  if (rows.empty()) throw Error(ErrorCode::NoOOBSamples, "no row is out of bag for any tree");

  // cached per (row, oob tree) predictions and their sums
  std::vector<std::vector<double>> base(n);
  std::vector<double> base_sum(n, 0.0);
  for (auto i : rows) {
    for (auto t : oob_trees[i]) {
      base[i].push_back(f.trees[t].predict(X[i]));
      base_sum[i] += base[i].back();
    }
  }
  auto accuracy_from = [&](const std::vector<double>& sums) {
    std::size_t ok = 0;
    for (auto i : rows) {
      const double p = sums[i] / static_cast<double>(oob_trees[i].size());
      ok += (p >= 0.5 ? 1 : 0) == y[i];
    }
    return static_cast<double>(ok) / static_cast<double>(rows.size());
  };
  const double baseline = accuracy_from(base_sum);

  ImportanceRanking out;
  std::vector<double> scores(d, 0.0);
  std::vector<double> x;
  for (std::size_t c = 0; c < d; ++c) {
    std::vector<bool> uses(T);
    bool any = false;
    for (std::size_t t = 0; t < T; ++t) any |= (uses[t] = f.trees[t].uses_column(static_cast<int>(c)));
    if (!any) continue;  // permuting an unused column cannot change any vote
    Rng rng(derive_seed(seed, c));
    std::vector<std::size_t> perm(n);
    double drop = 0.0;
    for (std::size_t rep = 0; rep < n_rep; ++rep) {
      std::iota(perm.begin(), perm.end(), 0);
      shuffle(perm, rng);
      std::vector<double> sums = base_sum;
      for (auto i : rows) {
        x = X[i];
        x[c] = X[perm[i]][c];
        for (std::size_t k = 0; k < oob_trees[i].size(); ++k) {
          const auto t = oob_trees[i][k];
          if (!uses[t]) continue;
          sums[i] += f.trees[t].predict(x) - base[i][k];
        }
      }
      drop += baseline - accuracy_from(sums);
    }
    scores[c] = drop / static_cast<double>(std::max<std::size_t>(n_rep, 1));
  }
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  for (auto c : order) out.entries.emplace_back(f.columns[c], scores[c]);
  return out;
}

struct ScoreCurve {
  std::vector<double> s;  // s[k-1] is the score of the top-k prefix
  std::vector<double> g;  // g[0] = s[0], g[k-1] = s[k-1] - s[k-2]

  static ScoreCurve from_scores(std::vector<double> s) {
    ScoreCurve c;
    c.s = std::move(s);
    for (std::size_t i = 0; i < c.s.size(); ++i) c.g.push_back(i == 0 ? c.s[0] : c.s[i] - c.s[i - 1]);
    return c;
  }
};

/// Smallest k with g_{k+1} < rel * s_{k+1}; len(s) when none.
inline std::size_t elbow(const ScoreCurve& curve, double rel = 0.01) {
  if (curve.s.size() < 2) throw Error(ErrorCode::CurveTooShort, "elbow needs at least two curve points");
  for (std::size_t k = 1; k < curve.s.size(); ++k) {
    const double g_next = curve.s[k] - curve.s[k - 1];
    if (g_next < rel * curve.s[k]) return k;
  }
  return curve.s.size();
}

/// Fold index per row: groups (sessions) are kept whole, stratified by the
/// group label (a group is positive if any of its rows is).
inline std::vector<int> cv_folds(std::span<const int> y, const std::vector<std::string>& groups, int folds,
                                 std::uint64_t seed) {
  std::map<std::string, int> group_label;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const auto& g = groups.empty() ? std::to_string(i) : groups[i];
    auto [it, fresh] = group_label.try_emplace(g, y[i]);
    if (fresh) order.push_back(g);
    it->second = std::max(it->second, y[i]);
  }
  Rng rng(seed);
  std::map<std::string, int> fold_of;
  for (int cls : {1, 0}) {
    std::vector<std::string> members;
    for (const auto& g : order) {
      if (group_label[g] == cls) members.push_back(g);
    }
    shuffle(members, rng);
    for (std::size_t k = 0; k < members.size(); ++k) fold_of[members[k]] = static_cast<int>(k % folds);
  }
  std::vector<int> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = fold_of[groups.empty() ? std::to_string(i) : groups[i]];
  return out;
}

namespace detail {

inline Matrix take_columns(const Matrix& X, std::span<const std::size_t> cols) {
  Matrix out;
  out.reserve(X.size());
  for (const auto& r : X) {
    std::vector<double> v;
    v.reserve(cols.size());
    for (auto c : cols) v.push_back(r[c]);
    out.push_back(std::move(v));
  }
  return out;
}

/// Out-of-fold scores for a forest on the given columns. MinMax is fitted on
/// each training fold when `scale` is set.
inline std::vector<double> cv_scores(const Matrix& X, std::span<const int> y, std::span<const int> fold, int folds,
                                     std::span<const std::size_t> cols, std::size_t n_trees, std::uint64_t seed,
                                     bool scale) {
  Matrix Xk = take_columns(X, cols);
  std::vector<double> out(X.size(), 0.0);
  for (int f = 0; f < folds; ++f) {
    Matrix tr, te;
    std::vector<int> ytr;
    std::vector<std::size_t> te_idx;
    for (std::size_t i = 0; i < X.size(); ++i) {
      if (fold[i] == f) {
        te.push_back(Xk[i]);
        te_idx.push_back(i);
      } else {
        tr.push_back(Xk[i]);
        ytr.push_back(y[i]);
      }
    }
    if (te.empty() || tr.empty()) continue;
    if (scale) {
      auto st = fit_minmax(tr);
      tr = apply_minmax(st, tr);
      te = apply_minmax(st, te);
    }
    auto model = train_forest(tr, ytr, {.n_trees = n_trees, .seed = derive_seed(seed, 1000 + f)});
    for (std::size_t k = 0; k < te.size(); ++k) out[te_idx[k]] = predict_proba(model, te[k]);
  }
  return out;
}

}  // namespace detail

struct CurveOptions {
  int folds = 5;
  std::size_t n_trees = 400;
  std::size_t max_k = 0;  // 0: every prefix length up to the ranking size
  std::uint64_t seed = 42;
};

/// s_k = macro-F1 of pooled out-of-fold predictions, averaged over folds,
/// for a forest on the top-k ranked columns.
inline ScoreCurve incremental_f1_curve(const ImportanceRanking& ranking, const Matrix& X, std::span<const int> y,
                                       const std::vector<std::string>& columns,
                                       const std::vector<std::string>& groups = {}, const CurveOptions& opt = {}) {
  auto fold = cv_folds(y, groups, opt.folds, opt.seed);
  std::vector<std::size_t> order;
  for (const auto& name : ranking.names()) {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw Error(ErrorCode::SchemaMismatch, "ranking column '" + name + "' not in matrix");
    order.push_back(static_cast<std::size_t>(it - columns.begin()));
  }
  const std::size_t kmax = opt.max_k == 0 ? order.size() : std::min(opt.max_k, order.size());
  std::vector<double> s;
  for (std::size_t k = 1; k <= kmax; ++k) {
    std::span<const std::size_t> cols(order.data(), k);
    auto scores = detail::cv_scores(X, y, fold, opt.folds, cols, opt.n_trees, opt.seed, false);
    double acc = 0;
    int used = 0;
    for (int f = 0; f < opt.folds; ++f) {
      std::vector<double> sc;
      std::vector<int> yy;
      for (std::size_t i = 0; i < y.size(); ++i) {
        if (fold[i] == f) {
          sc.push_back(scores[i]);
          yy.push_back(y[i]);
        }
      }
      if (sc.empty()) continue;
      acc += macro_f1(confusion(sc, yy, 0.5));
      ++used;
    }
    s.push_back(used ? acc / used : 0.0);
  }
  return ScoreCurve::from_scores(std::move(s));
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0 || sbb <= 0) return 0.0;  // constant column: correlation undefined
  return sab / std::sqrt(saa * sbb);
}

struct PruneResult {
  std::vector<std::size_t> kept;  // column indices, schema order
  std::vector<std::string> dropped;
  std::vector<std::string> audit;  // "dropped <- kept (|r|=...)"
};

/// Pairs in schema order; when |r| > cutoff the later column is dropped.
/// Pairs involving an already dropped column are skipped.
inline PruneResult prune_correlated(const Matrix& X, const std::vector<std::string>& columns, double cutoff = 0.90) {
  const std::size_t d = columns.size();
  std::vector<std::vector<double>> colv(d, std::vector<double>(X.size()));
  for (std::size_t i = 0; i < X.size(); ++i) {
    for (std::size_t c = 0; c < d; ++c) colv[c][i] = X[i][c];
  }
  std::vector<bool> dropped(d, false);
  PruneResult out;
  for (std::size_t i = 0; i < d; ++i) {
    if (dropped[i]) continue;
    for (std::size_t j = i + 1; j < d; ++j) {
      if (dropped[j]) continue;
      const double r = pearson(colv[i], colv[j]);
      if (std::fabs(r) > cutoff) {
        dropped[j] = true;
        char buf[64];
        std::snprintf(buf, sizeof buf, " (|r|=%.4f)", std::fabs(r));
        out.audit.push_back(columns[j] + " <- " + columns[i] + buf);
      }
    }
  }
  for (std::size_t c = 0; c < d; ++c) {
    if (dropped[c]) out.dropped.push_back(columns[c]);
    else out.kept.push_back(c);
  }
  return out;
}

struct Chi2Ranking {
  std::vector<std::pair<std::string, double>> scored;  // descending statistic
  std::vector<std::string> bypass;                      // negative-valued columns, secondary order

  std::vector<std::string> ranked() const {
    std::vector<std::string> out;
    for (const auto& [n, _] : scored) out.push_back(n);
    out.insert(out.end(), bypass.begin(), bypass.end());
    return out;
  }
};

/// chi2_c = sum over classes (O - E)^2 / E with O the per-class sum of the
/// MinMax-scaled column and E its total times the class prior.
inline double chi2_statistic(std::span<const double> x, std::span<const int> y) {
  double total = 0, o1 = 0, n1 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    total += x[i];
    if (y[i] == 1) {
      o1 += x[i];
      ++n1;
    }
  }
  const double n = static_cast<double>(x.size());
  const double e1 = total * n1 / n, e0 = total * (n - n1) / n, o0 = total - o1;
  double s = 0;
  if (e1 > 0) s += (o1 - e1) * (o1 - e1) / e1;
  if (e0 > 0) s += (o0 - e0) * (o0 - e0) / e0;
  return s;
}

/// Columns holding any negative raw value skip scoring and are appended in
/// `secondary` order (then schema order for names it lacks).
inline Chi2Ranking chi2_rank(const Matrix& X, std::span<const int> y, const std::vector<std::string>& columns,
                             const std::vector<std::string>& secondary = {}) {
  const std::size_t d = columns.size();
  auto st = fit_minmax(X);
  auto S = apply_minmax(st, X);
  Chi2Ranking out;
  std::vector<std::pair<double, std::size_t>> scored;
  std::vector<std::size_t> bypass;
  std::vector<double> col(X.size());
  for (std::size_t c = 0; c < d; ++c) {
    bool negative = false;
    for (std::size_t i = 0; i < X.size(); ++i) {
      negative |= X[i][c] < 0;
      col[i] = S[i][c];
    }
    if (negative) bypass.push_back(c);
    else scored.emplace_back(chi2_statistic(col, y), c);
  }
  std::stable_sort(scored.begin(), scored.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (auto& [s, c] : scored) out.scored.emplace_back(columns[c], s);
  auto rank_of = [&](std::size_t c) {
    auto it = std::find(secondary.begin(), secondary.end(), columns[c]);
    return it == secondary.end() ? secondary.size() + c : static_cast<std::size_t>(it - secondary.begin());
  };
  std::stable_sort(bypass.begin(), bypass.end(), [&](auto a, auto b) { return rank_of(a) < rank_of(b); });
  for (auto c : bypass) out.bypass.push_back(columns[c]);
  return out;
}

enum class Track { A, B };

struct SelectionResult {
  Track track = Track::A;
  std::size_t chosen_k = 0;
  std::vector<std::string> columns;
  ScoreCurve curve;  // Track A
  std::vector<std::size_t> k;  // Track B curve
  std::vector<double> f1;
  std::vector<std::int64_t> utility;
  std::vector<std::string> dropped;
};

struct WrapperOptions {
  std::size_t k_min = 1;
  std::size_t k_max = 0;  // 0: all ranked columns
  int folds = 5;
  std::size_t n_trees = 400;
  std::uint64_t seed = 42;
};

/// For each k, MinMax (fitted per training fold) -> top-k -> forest, scored by
/// pooled out-of-fold utility. Ties in utility keep the smaller k.
inline SelectionResult utility_wrapper_search(const std::vector<std::string>& ranked, const Matrix& X,
                                              std::span<const int> y, const std::vector<std::string>& columns,
                                              const std::vector<std::string>& groups = {},
                                              const WrapperOptions& opt = {}) {
  const std::size_t kmax = opt.k_max == 0 ? ranked.size() : opt.k_max;
  if (opt.k_min == 0 || kmax < opt.k_min || kmax > ranked.size()) {
    throw Error(ErrorCode::InvalidRange, "k range must satisfy 1 <= k_min <= k_max <= ranked columns");
  }
  std::vector<std::size_t> order;
  for (const auto& name : ranked) {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw Error(ErrorCode::SchemaMismatch, "ranked column '" + name + "' not in matrix");
    order.push_back(static_cast<std::size_t>(it - columns.begin()));
  }
  auto fold = cv_folds(y, groups, opt.folds, opt.seed);
  SelectionResult r;
  r.track = Track::B;
  std::int64_t best = 0;
  for (std::size_t k = opt.k_min; k <= kmax; ++k) {
    std::span<const std::size_t> cols(order.data(), k);
    auto scores = detail::cv_scores(X, y, fold, opt.folds, cols, opt.n_trees, opt.seed, true);
    auto c = confusion(scores, y, 0.5);
    r.k.push_back(k);
    r.f1.push_back(macro_f1(c));
    r.utility.push_back(utility(c));
    if (r.chosen_k == 0 || utility(c) > best) {
      best = utility(c);
      r.chosen_k = k;
    }
  }
  r.columns.assign(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(r.chosen_k));
  return r;
}

inline nlohmann::json selection_to_json(const SelectionResult& r) {
  nlohmann::json j;
  j["track"] = r.track == Track::A ? "A" : "B";
  j["chosen_k"] = r.chosen_k;
  j["columns"] = r.columns;
  if (r.track == Track::A) {
    j["curve"] = {{"s", r.curve.s}, {"g", r.curve.g}};
  } else {
    j["curve"] = {{"k", r.k}, {"f1", r.f1}, {"utility", r.utility}};
  }
  j["dropped"] = r.dropped;
  return j;
}

inline SelectionResult selection_from_json(const nlohmann::json& j) {
  SelectionResult r;
  r.track = j.at("track").get<std::string>() == "A" ? Track::A : Track::B;
  r.chosen_k = j.at("chosen_k").get<std::size_t>();
  r.columns = j.at("columns").get<std::vector<std::string>>();
  r.dropped = j.value("dropped", std::vector<std::string>{});
  const auto& c = j.at("curve");
  if (r.track == Track::A) {
    r.curve.s = c.at("s").get<std::vector<double>>();
    r.curve.g = c.at("g").get<std::vector<double>>();
  } else {
    r.k = c.at("k").get<std::vector<std::size_t>>();
    r.f1 = c.at("f1").get<std::vector<double>>();
    r.utility = c.at("utility").get<std::vector<std::int64_t>>();
  }
  return r;
}

struct TrackAOptions {
  std::size_t n_trees = 400;
  std::size_t n_rep = 20;
  double rel = 0.01;
  CurveOptions curve;
  std::uint64_t seed = 42;
};

/// Forest -> permutation ranking -> incremental curve -> elbow.
inline std::pair<SelectionResult, ImportanceRanking> run_track_a(const Matrix& X, std::span<const int> y,
                                                                 const std::vector<std::string>& columns,
                                                                 const std::vector<std::string>& groups,
                                                                 const TrackAOptions& opt = {}) {
  auto forest = train_forest(X, y, {.n_trees = opt.n_trees, .seed = opt.seed}, columns);
  auto ranking = permutation_importance(forest, X, y, opt.n_rep, opt.seed);
  auto curve_opt = opt.curve;
  curve_opt.seed = opt.seed;
  auto curve = incremental_f1_curve(ranking, X, y, columns, groups, curve_opt);
  SelectionResult r;
  r.track = Track::A;
  r.curve = curve;
  r.chosen_k = curve.s.size() >= 2 ? elbow(curve, opt.rel) : curve.s.size();
  auto names = ranking.names();
  r.columns.assign(names.begin(), names.begin() + static_cast<std::ptrdiff_t>(r.chosen_k));
  return {r, ranking};
}

struct TrackBOptions {
  double cutoff = 0.90;
  WrapperOptions wrapper;
};

/// Prune -> chi-square rank (bypass ordered by `secondary`) -> utility wrapper.
inline SelectionResult run_track_b(const Matrix& X, std::span<const int> y, const std::vector<std::string>& columns,
                                   const std::vector<std::string>& groups, const std::vector<std::string>& secondary,
                                   const TrackBOptions& opt = {}) {
  auto pr = prune_correlated(X, columns, opt.cutoff);
  std::vector<std::string> kept_names;
  for (auto c : pr.kept) kept_names.push_back(columns[c]);
  auto Xk = detail::take_columns(X, pr.kept);
  auto ranking = chi2_rank(Xk, y, kept_names, secondary);
  auto r = utility_wrapper_search(ranking.ranked(), Xk, y, kept_names, groups, opt.wrapper);
  r.dropped = pr.dropped;
  return r;
}

}  // namespace encguard
