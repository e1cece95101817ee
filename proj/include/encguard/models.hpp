// Copyright 2026 The encguard Authors
// SPDX-License-Identifier: Apache-2.0

// Tree learners over dense row-major data: a weighted CART (classification
// and regression), a bagged forest with out-of-bag bookkeeping, logistic
// gradient boosting, and rule extraction from shallow trees.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "encguard/error.hpp"
#include "encguard/features.hpp"
#include "encguard/random.hpp"

namespace encguard {

using Matrix = std::vector<std::vector<double>>;

/// Flat node. `column < 0` marks a leaf; `value` is P(encrypted) for a
/// classification leaf and the fitted output for a regression leaf.
struct TreeNode {
  int column = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
  double n_samples = 0.0;  // weighted count reaching the node

  bool is_leaf() const { return column < 0; }
  bool operator==(const TreeNode&) const = default;
};

struct Tree {
  std::vector<std::string> columns;  // names for the column indices below
  std::vector<TreeNode> nodes;       // nodes[0] is the root

  bool operator==(const Tree&) const = default;

  int leaf_index(std::span<const double> x) const {
    int i = 0;
    while (!nodes[i].is_leaf()) {
      const auto& n = nodes[i];
      i = x[n.column] <= n.threshold ? n.left : n.right;
    }
    return i;
  }

  double predict(std::span<const double> x) const { return nodes[leaf_index(x)].value; }

  int depth(int i = 0) const {
    if (nodes[i].is_leaf()) return 0;
    return 1 + std::max(depth(nodes[i].left), depth(nodes[i].right));
  }

  std::size_t leaves() const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](auto& n) { return n.is_leaf(); }));
  }

  bool uses_column(int c) const {
    return std::any_of(nodes.begin(), nodes.end(), [c](auto& n) { return n.column == c; });
  }
};

struct ClassWeights {
  double benign = 1.0;
  double encrypted = 1.0;

  double of(int y) const { return y == 1 ? encrypted : benign; }
};

/// n / (2 * n_class) per class.
inline ClassWeights balanced_weights(std::span<const int> y) {
  double n1 = 0;
  for (int v : y) n1 += v == 1;
  const double n = static_cast<double>(y.size()), n0 = n - n1;
  ClassWeights w;
  if (n0 > 0) w.benign = n / (2.0 * n0);
  if (n1 > 0) w.encrypted = n / (2.0 * n1);
  return w;
}

struct CartOptions {
  int depth_cap = -1;  // negative: unlimited
  std::size_t min_samples_split = 2;
  std::size_t max_features = 0;  // 0: every column is a candidate at every split
  ClassWeights class_weights;
  bool regression = false;
};

namespace detail {

struct CartBuilder {
  const Matrix& X;
  std::span<const double> target;  // 0/1 labels or regression targets
  std::span<const double> weight;  // per-row weight (class weight x multiplicity)
  const CartOptions& opt;
  Rng* rng;
  std::size_t d;
  Tree tree;

  // Node score to maximise: sum over children of this is the split quality.
  double score(double w, double a) const {
    if (w <= 0) return 0.0;
    return opt.regression ? a * a / w : (a * a + (w - a) * (w - a)) / w;
  }

  int build(std::vector<std::size_t>& idx, int depth) {
    double w = 0, a = 0;
    for (auto i : idx) {
      w += weight[i];
      a += weight[i] * target[i];
    }
    const int me = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    tree.nodes[me].n_samples = w;
    tree.nodes[me].value = w > 0 ? a / w : 0.0;

    bool pure;
    if (opt.regression) {
      pure = std::all_of(idx.begin(), idx.end(), [&](auto i) { return target[i] == target[idx.front()]; });
    } else {
      pure = a <= 0.0 || a >= w;
    }
    if (pure || idx.size() < std::max<std::size_t>(opt.min_samples_split, 2) ||
        (opt.depth_cap >= 0 && depth >= opt.depth_cap)) {
      return me;
    }

    std::vector<std::size_t> cols(d);
    std::iota(cols.begin(), cols.end(), 0);
    if (opt.max_features > 0 && opt.max_features < d) {
      // partial Fisher-Yates draw, then ascending so ties favour low indices
      for (std::size_t k = 0; k < opt.max_features; ++k) {
        std::size_t j = k + uniform_below(*rng, d - k);
        std::swap(cols[k], cols[j]);
      }
      cols.resize(opt.max_features);
      std::sort(cols.begin(), cols.end());
    }

    const double parent = score(w, a);
    double best_gain = -1.0, best_thr = 0.0;
    int best_col = -1;
    std::vector<std::pair<double, std::size_t>> vals(idx.size());
    for (auto c : cols) {
      for (std::size_t k = 0; k < idx.size(); ++k) vals[k] = {X[idx[k]][c], idx[k]};
      std::sort(vals.begin(), vals.end());
      double wl = 0, al = 0;
      for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
        wl += weight[vals[k].second];
        al += weight[vals[k].second] * target[vals[k].second];
        if (vals[k].first == vals[k + 1].first) continue;
        const double gain = score(wl, al) + score(w - wl, a - al) - parent;
        if (gain > best_gain + 1e-12) {
          best_gain = gain;
          best_col = static_cast<int>(c);
          double mid = 0.5 * (vals[k].first + vals[k + 1].first);
          if (!(mid < vals[k + 1].first)) mid = vals[k].first;
          best_thr = mid;
        }
      }
    }
    if (best_col < 0) return me;

    std::vector<std::size_t> li, ri;
    for (auto i : idx) (X[i][best_col] <= best_thr ? li : ri).push_back(i);
    idx.clear();
    idx.shrink_to_fit();
    tree.nodes[me].column = best_col;
    tree.nodes[me].threshold = best_thr;
    int l = build(li, depth + 1);
    tree.nodes[me].left = l;
    int r = build(ri, depth + 1);
    tree.nodes[me].right = r;
    return me;
  }
};

inline void check_xy(const Matrix& X, std::size_t n_targets) {
  if (X.empty()) throw Error(ErrorCode::EmptyMatrix, "training matrix has no rows");
  if (X.size() != n_targets) throw Error(ErrorCode::SchemaMismatch, "row and label counts differ");
  const auto d = X.front().size();
  for (const auto& r : X) {
    if (r.size() != d) throw Error(ErrorCode::SchemaMismatch, "ragged training matrix");
  }
}

inline std::vector<std::string> default_names(std::size_t d) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < d; ++i) out.push_back("x" + std::to_string(i));
  return out;
}

}  // namespace detail

/// Weighted CART. `sample_weight` (optional) multiplies the class weights;
/// rows with zero weight are ignored. Single-class input yields one leaf.
inline Tree train_cart(const Matrix& X, std::span<const int> y, const CartOptions& opt, Rng& rng,
                       std::span<const double> sample_weight = {}, std::vector<std::string> names = {}) {
  detail::check_xy(X, y.size());
  std::vector<double> target(y.begin(), y.end()), weight(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    weight[i] = opt.class_weights.of(y[i]) * (sample_weight.empty() ? 1.0 : sample_weight[i]);
  }
  detail::CartBuilder b{X, target, weight, opt, &rng, X.front().size(), {}};
  b.tree.columns = names.empty() ? detail::default_names(b.d) : std::move(names);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (weight[i] > 0) idx.push_back(i);
  }
  b.build(idx, 0);
  return std::move(b.tree);
}

inline Tree train_cart(const Matrix& X, std::span<const int> y, const CartOptions& opt = {},
                       std::vector<std::string> names = {}) {
  Rng rng(42);
  return train_cart(X, y, opt, rng, {}, std::move(names));
}

/// Least-squares regression tree (unit weights).
inline Tree train_regression_tree(const Matrix& X, std::span<const double> target, int depth_cap,
                                  std::vector<std::string> names = {}) {
  detail::check_xy(X, target.size());
  CartOptions opt;
  opt.regression = true;
  opt.depth_cap = depth_cap;
  std::vector<double> weight(target.size(), 1.0);
  Rng rng(0);
  detail::CartBuilder b{X, target, weight, opt, &rng, X.front().size(), {}};
  b.tree.columns = names.empty() ? detail::default_names(b.d) : std::move(names);
  std::vector<std::size_t> idx(target.size());
  std::iota(idx.begin(), idx.end(), 0);
  b.build(idx, 0);
  return std::move(b.tree);
}

// ---------------------------------------------------------------------------
// forest

struct ForestOptions {
  std::size_t n_trees = 400;
  int depth_cap = -1;
  std::optional<ClassWeights> class_weights;  // default: balanced
  std::uint64_t seed = 42;
};

struct ForestModel {
  std::vector<Tree> trees;
  std::vector<std::vector<std::uint32_t>> inbag;  // per tree, multiplicity of each training row
  ClassWeights class_weights;
  std::uint64_t seed = 42;
  int depth_cap = -1;
  std::vector<std::string> columns;

  std::size_t n_trees() const { return trees.size(); }
};

/// Bootstrap multiplicities for n rows drawn from `rng`.
inline std::vector<std::uint32_t> bootstrap_draw(std::size_t n, Rng& rng) {
  std::vector<std::uint32_t> m(n, 0);
  for (std::size_t k = 0; k < n; ++k) ++m[uniform_below(rng, n)];
  return m;
}

inline std::size_t sqrt_features(std::size_t d) {
  return static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(d))));
}

/// Tree t draws its bootstrap and split columns from Rng(derive_seed(seed, t)).
inline ForestModel train_forest(const Matrix& X, std::span<const int> y, const ForestOptions& opt = {},
                                std::vector<std::string> names = {}) {
  detail::check_xy(X, y.size());
  if (opt.n_trees == 0) throw Error(ErrorCode::ConfigError, "forest needs at least one tree");
  ForestModel f;
  f.seed = opt.seed;
  f.depth_cap = opt.depth_cap;
  f.class_weights = opt.class_weights.value_or(balanced_weights(y));
  f.columns = names.empty() ? detail::default_names(X.front().size()) : names;
  CartOptions co;
  co.depth_cap = opt.depth_cap;
  co.max_features = sqrt_features(X.front().size());
  co.class_weights = f.class_weights;
  for (std::size_t t = 0; t < opt.n_trees; ++t) {
    Rng rng(derive_seed(opt.seed, t));
    auto m = bootstrap_draw(X.size(), rng);
    std::vector<double> w(m.begin(), m.end());
    f.trees.push_back(train_cart(X, y, co, rng, w, f.columns));
    f.inbag.push_back(std::move(m));
  }
  return f;
}

inline double predict_proba(const ForestModel& f, std::span<const double> x) {
  if (f.trees.empty()) throw Error(ErrorCode::ModelUnfit, "forest has no trees");
  double s = 0.0;
  for (const auto& t : f.trees) s += t.predict(x);
  return s / static_cast<double>(f.trees.size());
}

/// Mean leaf probability over the trees for which each row was out of bag;
/// nullopt for rows that every tree saw.
inline std::vector<std::optional<double>> oob_proba(const ForestModel& f, const Matrix& X) {
  std::vector<std::optional<double>> out(X.size());
  if (f.inbag.empty() || f.inbag.front().size() != X.size()) {
    throw Error(ErrorCode::NoOOBSamples, "forest carries no bootstrap bookkeeping for this matrix");
  }
  for (std::size_t i = 0; i < X.size(); ++i) {
    double s = 0;
    std::size_t k = 0;
    for (std::size_t t = 0; t < f.trees.size(); ++t) {
      if (f.inbag[t][i] == 0) {
        s += f.trees[t].predict(X[i]);
        ++k;
      }
    }
    if (k > 0) out[i] = s / static_cast<double>(k);
  }
  return out;
}

// ---------------------------------------------------------------------------
// gradient boosting

struct GbdtOptions {
  std::size_t n_stages = 100;
  double learning_rate = 0.1;
  int max_depth = 3;
  std::uint64_t seed = 42;
};

struct GBDTModel {
  std::vector<Tree> stages;
  double learning_rate = 0.1;
  double initial_log_odds = 0.0;
  int max_depth = 3;
  std::uint64_t seed = 42;
  std::vector<std::string> columns;

  std::size_t n_stages() const { return stages.size(); }
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline double raw_score(const GBDTModel& m, std::span<const double> x) {
  double f = m.initial_log_odds;
  for (const auto& t : m.stages) f += m.learning_rate * t.predict(x);
  return f;
}

inline double predict_proba(const GBDTModel& m, std::span<const double> x) { return sigmoid(raw_score(m, x)); }

/// Residual targets y - sigmoid(F) for the next stage.
inline std::vector<double> logistic_residuals(std::span<const int> y, std::span<const double> F) {
  std::vector<double> r(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) r[i] = static_cast<double>(y[i]) - sigmoid(F[i]);
  return r;
}

inline double log_loss(std::span<const int> y, std::span<const double> F) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    // log(1 + e^-z) for y=1, log(1 + e^z) for y=0, computed stably
    const double z = y[i] == 1 ? F[i] : -F[i];
    s += z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
  }
  return s / static_cast<double>(y.size());
}

/// Plain logistic gradient boosting: each stage is a least-squares tree on
/// the residuals y - sigmoid(F), added with the learning rate.
inline GBDTModel train_gbdt(const Matrix& X, std::span<const int> y, const GbdtOptions& opt = {},
                            std::vector<std::string> names = {}) {
  detail::check_xy(X, y.size());
  GBDTModel m;
  m.learning_rate = opt.learning_rate;
  m.max_depth = opt.max_depth;
  m.seed = opt.seed;
  m.columns = names.empty() ? detail::default_names(X.front().size()) : names;
  double pos = 0;
  for (int v : y) pos += v == 1;
  double p = pos / static_cast<double>(y.size());
  p = std::clamp(p, 1e-6, 1.0 - 1e-6);
  m.initial_log_odds = std::log(p / (1.0 - p));
  std::vector<double> F(y.size(), m.initial_log_odds);
  for (std::size_t s = 0; s < opt.n_stages; ++s) {
    auto r = logistic_residuals(y, F);
    if (std::all_of(r.begin(), r.end(), [](double v) { return std::fabs(v) < 1e-12; })) break;
    auto tree = train_regression_tree(X, r, opt.max_depth, m.columns);
    for (std::size_t i = 0; i < y.size(); ++i) F[i] += m.learning_rate * tree.predict(X[i]);
    m.stages.push_back(std::move(tree));
  }
  return m;
}

// ---------------------------------------------------------------------------
// serialization

inline std::string schema_hash(const std::vector<std::string>& columns) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (const auto& c : columns) {
    for (unsigned char ch : c) {
      h ^= ch;
      h *= 1099511628211ull;
    }
    h ^= 0x1f;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace detail {

inline nlohmann::json node_to_json(const Tree& t, int i, bool regression) {
  const auto& n = t.nodes[i];
  nlohmann::json j;
  if (n.is_leaf()) {
    if (regression) {
      j["leaf"] = {{"value", n.value}, {"n", n.n_samples}};
    } else {
      j["leaf"] = {{"p_encrypted", n.value}, {"p_benign", 1.0 - n.value}, {"n", n.n_samples}};
    }
    return j;
  }
  j["column"] = t.columns[n.column];
  j["threshold"] = n.threshold;
  j["n"] = n.n_samples;
  j["left"] = node_to_json(t, n.left, regression);
  j["right"] = node_to_json(t, n.right, regression);
  return j;
}

inline int node_from_json(const nlohmann::json& j, Tree& t, const std::vector<std::string>& columns) {
  const int me = static_cast<int>(t.nodes.size());
  t.nodes.push_back({});
  if (j.contains("leaf")) {
    const auto& l = j["leaf"];
    t.nodes[me].value = l.contains("value") ? l["value"].get<double>() : l.at("p_encrypted").get<double>();
    t.nodes[me].n_samples = l.value("n", 0.0);
    return me;
  }
  auto name = j.at("column").get<std::string>();
  auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw Error(ErrorCode::SchemaMismatch, "model references unknown column '" + name + "'");
  t.nodes[me].column = static_cast<int>(it - columns.begin());
  t.nodes[me].threshold = j.at("threshold").get<double>();
  t.nodes[me].n_samples = j.value("n", 0.0);
  int l = node_from_json(j.at("left"), t, columns);
  t.nodes[me].left = l;
  int r = node_from_json(j.at("right"), t, columns);
  t.nodes[me].right = r;
  return me;
}

}  // namespace detail

inline nlohmann::json tree_to_json(const Tree& t, bool regression = false) {
  return detail::node_to_json(t, 0, regression);
}

inline Tree tree_from_json(const nlohmann::json& j, const std::vector<std::string>& columns) {
  Tree t;
  t.columns = columns;
  detail::node_from_json(j, t, columns);
  return t;
}

inline nlohmann::json model_to_json(const ForestModel& f) {
  nlohmann::json j;
  j["type"] = "forest";
  j["schema_hash"] = schema_hash(f.columns);
  j["columns"] = f.columns;
  j["seed"] = f.seed;
  j["hyperparameters"] = {{"n_trees", f.trees.size()},
                          {"depth_cap", f.depth_cap},
                          {"max_features", sqrt_features(f.columns.size())},
                          {"class_weights", {{"benign", f.class_weights.benign}, {"encrypted", f.class_weights.encrypted}}}};
  j["trees"] = nlohmann::json::array();
  for (const auto& t : f.trees) j["trees"].push_back(tree_to_json(t));
  return j;
}

inline nlohmann::json model_to_json(const GBDTModel& m) {
  nlohmann::json j;
  j["type"] = "gbdt";
  j["schema_hash"] = schema_hash(m.columns);
  j["columns"] = m.columns;
  j["seed"] = m.seed;
  j["hyperparameters"] = {{"n_stages", m.stages.size()},
                          {"learning_rate", m.learning_rate},
                          {"max_depth", m.max_depth},
                          {"initial_log_odds", m.initial_log_odds}};
  j["trees"] = nlohmann::json::array();
  for (const auto& t : m.stages) j["trees"].push_back(tree_to_json(t, true));
  return j;
}

namespace detail {
inline void check_model_header(const nlohmann::json& j, std::string_view type) {
  if (j.value("type", "") != type) throw Error(ErrorCode::SchemaMismatch, "expected a " + std::string(type) + " model");
  auto cols = j.at("columns").get<std::vector<std::string>>();
  if (j.value("schema_hash", "") != schema_hash(cols)) {
    throw Error(ErrorCode::SchemaMismatch, "model schema hash does not match its column list");
  }
}
}  // namespace detail

inline GBDTModel gbdt_from_json(const nlohmann::json& j) {
  detail::check_model_header(j, "gbdt");
  GBDTModel m;
  m.columns = j["columns"].get<std::vector<std::string>>();
  m.seed = j.at("seed").get<std::uint64_t>();
  const auto& h = j.at("hyperparameters");
  m.learning_rate = h.at("learning_rate").get<double>();
  m.max_depth = h.at("max_depth").get<int>();
  m.initial_log_odds = h.at("initial_log_odds").get<double>();
  for (const auto& t : j.at("trees")) m.stages.push_back(tree_from_json(t, m.columns));
  return m;
}

/// Trees and hyperparameters only; bootstrap bookkeeping is not persisted.
inline ForestModel forest_from_json(const nlohmann::json& j) {
  detail::check_model_header(j, "forest");
  ForestModel f;
  f.columns = j["columns"].get<std::vector<std::string>>();
  f.seed = j.at("seed").get<std::uint64_t>();
  const auto& h = j.at("hyperparameters");
  f.depth_cap = h.at("depth_cap").get<int>();
  f.class_weights.benign = h.at("class_weights").at("benign").get<double>();
  f.class_weights.encrypted = h.at("class_weights").at("encrypted").get<double>();
  for (const auto& t : j.at("trees")) f.trees.push_back(tree_from_json(t, f.columns));
  return f;
}

// ---------------------------------------------------------------------------
// rules

enum class RuleScope { ERule2, ERule36 };

inline std::string_view to_string(RuleScope s) { return s == RuleScope::ERule2 ? "E_RULE_2" : "E_RULE_36"; }

inline RuleScope parse_rule_scope(std::string_view s) {
  if (s == "E_RULE_2") return RuleScope::ERule2;
  if (s == "E_RULE_36") return RuleScope::ERule36;
  throw Error(ErrorCode::ConfigError, "unknown rule scope '" + std::string(s) + "'");
}

struct Predicate {
  std::string column;
  bool le = true;  // true: column <= threshold, false: column > threshold
  double threshold = 0.0;
  int index = -1;  // position in the bound schema

  bool holds(std::span<const double> x) const { return le ? x[index] <= threshold : x[index] > threshold; }
  bool operator==(const Predicate&) const = default;
};

struct Rule {
  std::vector<Predicate> predicates;
  Label predicted = Label::Benign;
  double p_enc = 0.0;
  double confidence = 0.0;  // leaf probability of the predicted class

  bool operator==(const Rule&) const = default;
};

struct RuleSet {
  RuleScope scope = RuleScope::ERule36;
  int depth_cap = 2;
  std::vector<Rule> rules;

  bool operator==(const RuleSet&) const = default;

  std::vector<std::string> columns_used() const {
    std::vector<std::string> out;
    for (const auto& r : rules) {
      for (const auto& p : r.predicates) {
        if (std::find(out.begin(), out.end(), p.column) == out.end()) out.push_back(p.column);
      }
    }
    return out;
  }

  std::size_t predicate_count() const {
    std::size_t n = 0;
    for (const auto& r : rules) n += r.predicates.size();
    return n;
  }

  /// Resolves predicate columns against the schema evaluation vectors use.
  void bind(const std::vector<std::string>& columns) {
    for (auto& r : rules) {
      for (auto& p : r.predicates) {
        auto it = std::find(columns.begin(), columns.end(), p.column);
        if (it == columns.end()) throw Error(ErrorCode::SchemaMismatch, "rule column '" + p.column + "' not in schema");
        p.index = static_cast<int>(it - columns.begin());
      }
    }
  }
};

inline Label label_of(double p_enc) { return p_enc >= 0.5 ? Label::Encrypted : Label::Benign; }

/// One rule per leaf, in left-to-right leaf order. Predicates are bound to
/// the tree's own column list.
inline RuleSet extract_rules(const Tree& tree, RuleScope scope, int depth_cap = 2) {
  RuleSet rs;
  rs.scope = scope;
  rs.depth_cap = depth_cap;
  std::vector<Predicate> path;
  auto walk = [&](auto&& self, int i) -> void {
    const auto& n = tree.nodes[i];
    if (n.is_leaf()) {
      Rule r;
      r.predicates = path;
      r.p_enc = n.value;
      r.predicted = label_of(n.value);
      r.confidence = r.predicted == Label::Encrypted ? n.value : 1.0 - n.value;
      rs.rules.push_back(std::move(r));
      return;
    }
    path.push_back({tree.columns[n.column], true, n.threshold, n.column});
    self(self, n.left);
    path.back().le = false;
    self(self, n.right);
    path.pop_back();
  };
  walk(walk, 0);
  return rs;
}

struct RuleEval {
  Label verdict = Label::Benign;
  double p_enc = 0.0;
  double confidence = 0.0;
  int rule_id = -1;
  double eval_ns = 0.0;  // wall time of predicate scoring only
};

inline RuleEval evaluate_rules(const RuleSet& rs, std::span<const double> x) {
  RuleEval out;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < rs.rules.size(); ++i) {
    const auto& r = rs.rules[i];
    bool all = true;
    for (const auto& p : r.predicates) {
      if (!p.holds(x)) {
        all = false;
        break;
      }
    }
    if (all) {
      out.rule_id = static_cast<int>(i);
      break;
    }
  }
  const auto t1 = std::chrono::steady_clock::now();
  out.eval_ns = static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
  if (out.rule_id < 0) throw Error(ErrorCode::ModelUnfit, "no rule fired; rule set does not partition the input");
  const auto& r = rs.rules[static_cast<std::size_t>(out.rule_id)];
  out.verdict = r.predicted;
  out.p_enc = r.p_enc;
  out.confidence = r.confidence;
  return out;
}

inline nlohmann::json rules_to_json(const RuleSet& rs) {
  nlohmann::json j;
  j["scope"] = to_string(rs.scope);
  j["depth_cap"] = rs.depth_cap;
  j["rules"] = nlohmann::json::array();
  for (const auto& r : rs.rules) {
    nlohmann::json jr;
    jr["when"] = nlohmann::json::array();
    for (const auto& p : r.predicates) {
      jr["when"].push_back({{"column", p.column}, {"op", p.le ? "<=" : ">"}, {"threshold", p.threshold}});
    }
    jr["class"] = to_string(r.predicted);
    jr["p_encrypted"] = r.p_enc;
    jr["confidence"] = r.confidence;
    j["rules"].push_back(std::move(jr));
  }
  return j;
}

inline RuleSet rules_from_json(const nlohmann::json& j) {
  RuleSet rs;
  rs.scope = parse_rule_scope(j.at("scope").get<std::string>());
  rs.depth_cap = j.at("depth_cap").get<int>();
  for (const auto& jr : j.at("rules")) {
    Rule r;
    for (const auto& p : jr.at("when")) {
      auto op = p.at("op").get<std::string>();
      if (op != "<=" && op != ">") throw Error(ErrorCode::ConfigError, "rule operator must be <= or >");
      r.predicates.push_back({p.at("column").get<std::string>(), op == "<=", p.at("threshold").get<double>(), -1});
    }
    r.predicted = parse_label(jr.at("class").get<std::string>());
    r.p_enc = jr.at("p_encrypted").get<double>();
    r.confidence = jr.at("confidence").get<double>();
    rs.rules.push_back(std::move(r));
  }
  return rs;
}

}  // namespace encguard
