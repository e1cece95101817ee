// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Pipeline criteria run the default corpus under several
// seeds; everything else uses seeded fixtures and brute-force oracles.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "encguard/pipeline.hpp"
#include "encguard/selection.hpp"
#include "oracles.hpp"

using namespace encguard;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string f4(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.4f", v);
  return b;
}

// ---------------------------------------------------------------------------
// 1. graph metrics vs exhaustive oracles

Outcome graph_oracle() {
  Rng rng(2024);
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(uniform_below(rng, 12));
    const double p = uniform(rng, 0.05, 0.6);
    oracle::Oracle o{n, std::vector<std::vector<int>>(n, std::vector<int>(n, 0))};
    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (uniform01(rng) < p) {
          edges.emplace_back(i, j);
          if (i != j) o.adj[i][j] = 1;
        }
    const auto g = oracle::from_edges(n, edges);
    const auto b = betweenness(g);
    const auto c = clustering(g);
    const auto ob = o.betweenness();
    const auto oc = o.clustering();
    for (int i = 0; i < n; ++i) {
      const auto name = "n" + std::to_string(100 + i);
      worst = std::max({worst, std::fabs(b.at(name) - ob[i]), std::fabs(c.at(name) - oc[i])});
    }
    worst = std::max(worst, std::fabs(avg_shortest_path(g) - o.aspl()));
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "100 graphs (<= 12 nodes), max abs error " << worst << ", " << f4(secs) << " s";
  return {worst <= 1e-9 && secs < 10.0, d.str()};
}

// ---------------------------------------------------------------------------
// 2. elbow

Outcome elbow_rule() {
  const auto k = elbow(ScoreCurve::from_scores({0.90, 0.95, 0.9503, 0.9506}), 0.01);
  Rng rng(77);
  int agree = 0;
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> s;
    double v = uniform(rng, 0.3, 0.6);
    const std::size_t len = 2 + uniform_below(rng, 15);
    for (std::size_t i = 0; i < len; ++i) {
      s.push_back(v);
      v += uniform(rng, -0.005, 0.06);
    }
    const double rel = uniform(rng, 0.005, 0.02);
    agree += elbow(ScoreCurve::from_scores(s), rel) == oracle::elbow_oracle(s, rel);
  }
  return {k == 2 && agree == 20,
          "elbow([0.90,0.95,0.9503,0.9506], 0.01) = " + std::to_string(k) + "; random curves agreeing with scan " +
              std::to_string(agree) + "/20"};
}

// ---------------------------------------------------------------------------
// 3. utility

Outcome utility_formula() {
  Rng rng(3);
  int ok = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto tp = static_cast<std::int64_t>(uniform_below(rng, 100000));
    const auto fn = static_cast<std::int64_t>(uniform_below(rng, 100000));
    const auto fp = static_cast<std::int64_t>(uniform_below(rng, 100000));
    const auto tn = static_cast<std::int64_t>(uniform_below(rng, 100000));
    ConfusionCounts c{tp, fp, tn, fn};
    ok += utility(c) == 10 * tp - 50 * fn - fp;
  }
  return {ok == 1000, std::to_string(ok) + "/1000 random (tp, fn, fp) triples match 10tp - 50fn - fp"};
}

// ---------------------------------------------------------------------------
// 5. rule extraction reproduces the tree on a dense grid

Outcome rule_tree_equivalence() {
  Rng rng(55);
  std::size_t points = 0, mismatches = 0;
  for (int depth = 1; depth <= 4; ++depth) {
    for (int fixture = 0; fixture < 3; ++fixture) {
      Matrix X;
      std::vector<int> y;
      for (int i = 0; i < 200; ++i) {
        const double a = uniform01(rng), b = uniform(rng, -2, 2), c = uniform01(rng);
        X.push_back({a, b, c});
        y.push_back(std::sin(6 * a) + 0.5 * b - c + 0.3 * normal(rng) > 0.2);
      }
      const auto t = train_cart(X, y, {.depth_cap = depth}, {"a", "b", "c"});
      auto rs = extract_rules(t, RuleScope::ERule36, depth);
      rs.bind({"a", "b", "c"});
      // per column: a uniform grid over the range plus every split threshold
      // and its right neighbour
      const double lo[3] = {-0.1, -2.1, -0.1}, hi[3] = {1.1, 2.1, 1.1};
      std::vector<std::vector<double>> axis(3);
      for (int j = 0; j < 3; ++j) {
        for (int s = 0; s <= 30; ++s) axis[j].push_back(lo[j] + (hi[j] - lo[j]) * s / 30.0);
      }
      for (const auto& n : t.nodes) {
        if (n.is_leaf()) continue;
        axis[n.column].push_back(n.threshold);
        axis[n.column].push_back(std::nextafter(n.threshold, INFINITY));
      }
      for (double a : axis[0])
        for (double b : axis[1])
          for (double c : axis[2]) {
            const std::vector<double> x = {a, b, c};
            ++points;
            int fired = 0;
            for (const auto& r : rs.rules) {
              bool all = true;
              for (const auto& p : r.predicates) all = all && p.holds(x);
              fired += all;
            }
            const auto e = evaluate_rules(rs, x);
            if (fired != 1 || e.verdict != label_of(t.predict(x)) || e.p_enc != t.predict(x)) ++mismatches;
          }
    }
  }
  return {mismatches == 0, "12 fixture trees (depths 1-4), " + std::to_string(points) + " grid points, " +
                               std::to_string(mismatches) + " mismatches"};
}

// ---------------------------------------------------------------------------
// 7. enforcement truth table

Outcome enforcement_soundness() {
  std::size_t cases = 0, violations = 0, table_errors = 0;
  const Context ctx{"u2", "ransom", "/home/u2/docs/a.txt", "user_home_t"};
  for (bool scoped_allow : {false, true}) {
    CilConfig cfg;
    cfg.app_scoped_allow = scoped_allow;
    cfg.scoped_types = {"public_content_t"};
    const CilEvaluator cil(emit_cil(cfg));
    for (int bits = 0; bits < 4; ++bits) {
      BooleanState s;
      s.rule_block = bits & 1;
      s.ml_block = bits & 2;
      for (const std::string type : {"user_home_t", "public_content_t"}) {
        for (Op op : kAllOps) {
          for (bool wl : {false, true}) {
            ++cases;
            const bool write = op == Op::Write || op == Op::Append;
            const auto r = simulate_access(s, cil, "encryption_t", type, op, ctx, wl);
            const bool allowed = r.decision == Decision::Allow;
            if (write && bits != 0 && !wl && allowed) ++violations;
            // the app-scoped allow covers home files only, matching the $HOME/** whitelist scope
            const bool expect = op == Op::Execute ? false
                                                  : !write || bits == 0 || (wl && scoped_allow && type == "user_home_t");
            if (allowed != expect) ++table_errors;
          }
        }
      }
    }
  }
  return {violations == 0 && table_errors == 0,
          std::to_string(cases) + " (state, op, type, whitelist, variant) cases; " + std::to_string(violations) +
              " non-whitelisted writes allowed under a set boolean; " + std::to_string(table_errors) +
              " deviations from the expected table"};
}

// ---------------------------------------------------------------------------
// 8. CIL golden

Outcome cil_golden() {
  const auto golden = read_text_file(fs::path(ENCGUARD_DATA_DIR) / "encryption_rbac_base.cil");
  const auto text = emit_cil().text;
  const bool has = text.find("(booleanif (and (not rule_block) (not ml_block))") != std::string::npos;
  return {text == golden && has, std::string(text == golden ? "byte-identical" : "differs") +
                                     " to data/encryption_rbac_base.cil; booleanif guard " +
                                     (has ? "present" : "missing")};
}

// ---------------------------------------------------------------------------
// 14. selection sanity

Outcome selection_sanity() {
  // label = 1[x0 + x1 + x2 > 1.5]; columns 3.. are noise
  const std::size_t k = 3, noise = 12, n = 400;
  Rng rng(1414);
  Matrix X;
  std::vector<int> y;
  std::vector<std::string> columns, groups;
  for (std::size_t j = 0; j < k; ++j) columns.push_back("inf" + std::to_string(j));
  for (std::size_t j = 0; j < noise; ++j) columns.push_back("noise" + std::to_string(j));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> r;
    for (std::size_t j = 0; j < k + noise; ++j) r.push_back(uniform01(rng));
    y.push_back(r[0] + r[1] + r[2] > 1.5 ? 1 : 0);
    X.push_back(std::move(r));
    groups.push_back("s" + std::to_string(i / 4));
  }
  TrackAOptions a;
  a.n_trees = 150;
  a.n_rep = 10;
  a.curve.n_trees = 100;
  a.seed = 1414;
  auto [ra, ranking] = run_track_a(X, y, columns, groups, a);
  TrackBOptions b;
  b.wrapper.n_trees = 100;
  b.wrapper.seed = 1414;
  const auto rb = run_track_b(X, y, columns, groups, ranking.names(), b);
  const auto names = ranking.names();
  std::size_t in_top = 0, in_b = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const auto c = columns[j];
    in_top += std::find(names.begin(), names.begin() + std::min(2 * k, names.size()), c) != names.begin() + std::min(2 * k, names.size());
    in_b += std::find(rb.columns.begin(), rb.columns.end(), c) != rb.columns.end();
  }
  std::ostringstream d;
  d << "Track A top-" << 2 * k << " holds " << in_top << "/" << k << " informative columns; Track B chose k="
    << rb.chosen_k << " holding " << in_b << "/" << k;
  return {in_top == k && in_b == k, d.str()};
}

// ---------------------------------------------------------------------------
// pipeline runs

struct SeedRun {
  std::uint64_t seed;
  fs::path dir;
  double heldout_f1 = 0;
  std::vector<DecisionRecord> decisions;
  std::vector<EdgeRecord> edges;
  CsvTable edge_table, crypto_table;
  double secs = 0;
};

const SymbolKeyList& keys() {
  static const SymbolKeyList k = load_symbol_keys(read_text_file(fs::path(ENCGUARD_DATA_DIR) / "ftrace_keys.json"));
  return k;
}

const Manifest& manifest() {
  static const Manifest m = load_manifest(std::string(ENCGUARD_DATA_DIR) + "/manifest.yaml");
  return m;
}

fs::path scratch_root() {
  static const fs::path p = fs::temp_directory_path() / ("encguard_acceptance_" + std::to_string(::getpid()));
  return p;
}

SeedRun run_seed(std::uint64_t seed, const std::string& tag) {
  SeedRun r;
  r.seed = seed;
  r.dir = scratch_root() / tag;
  fs::remove_all(r.dir);
  PipelineConfig cfg;
  cfg.seed = seed;
  const auto t0 = Clock::now();
  auto res = run_pipeline(manifest(), keys(), cfg, r.dir);
  r.secs = seconds_since(t0);
  r.heldout_f1 = res.training.heldout.macro_f1;
  r.decisions = read_decisions_csv(read_text_file(r.dir / "decisions.csv"));
  r.edges = res.detection.edges;
  r.edge_table = parse_csv(read_text_file(r.dir / "tables" / "edge_cases.csv"));
  r.crypto_table = parse_csv(read_text_file(r.dir / "tables" / "crypto_whitelist.csv"));
  return r;
}

// 4. FN non-decreasing, FP non-increasing, recall(0.30) >= recall(0.70)
Outcome tau_monotonicity(const std::vector<SeedRun>& runs) {
  bool ok = true;
  std::ostringstream d;
  for (const auto& r : runs) {
    for (const char* layer : {"model", "rule"}) {
      std::vector<double> scores;
      std::vector<int> labels;
      for (const auto& rec : r.decisions) {
        if (rec.whitelisted) continue;
        scores.push_back(std::string(layer) == "model" ? rec.p_model : rec.p_rule);
        labels.push_back(rec.label == "encrypted");
      }
      const auto sw = tau_sweep(scores, labels);
      const auto& rows = sw.rows;
      for (std::size_t i = 1; i < rows.size(); ++i) {
        ok = ok && rows[i].counts.fn >= rows[i - 1].counts.fn && rows[i].counts.fp <= rows[i - 1].counts.fp;
      }
      ok = ok && rows.size() == 3 && rows.front().recall >= rows.back().recall;
      if (std::string(layer) == "model") {
        d << "seed " << r.seed << " recall " << f4(rows.front().recall) << "->" << f4(rows.back().recall) << "; ";
      }
    }
  }
  d << "model and rule scores, " << runs.size() << " corpora";
  return {ok, d.str()};
}

// 6. crypto-tool scenarios under the default whitelist
Outcome whitelist_table(const SeedRun& r) {
  const std::vector<std::string> want_profile = {"openssl-u1-docs", "gpg-u1-docs", "openssl-u1-srv",
                                                 "openssl-u2-home"};
  const std::vector<std::string> want = {"Allow", "Block", "Block", "Block"};
  const auto& t = r.crypto_table;
  std::vector<std::string> got;
  bool ok = t.rows.size() == 4;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    got.push_back(t.rows[i][t.col("decision")]);
    ok = ok && i < 4 && t.rows[i][t.col("profile")] == want_profile[i];
  }
  ok = ok && got == want;
  // the same four contexts decided directly under the default policy at p = 1
  const std::vector<Context> ctx = {{"u1", "openssl", "/home/u1/docs", "user_home_t"},
                                    {"u1", "gpg", "/home/u1/docs", "user_home_t"},
                                    {"u1", "openssl", "/srv/shared", "public_content_t"},
                                    {"u2", "openssl", "/home/u2", "user_home_t"}};
  std::string direct;
  for (std::size_t i = 0; i < ctx.size(); ++i) {
    const auto v = decide(1.0, ctx[i], default_policy());
    const std::string s = v.blocks() ? "Block" : "Allow";
    direct += (i ? "/" : "") + s;
    ok = ok && s == want[i];
  }
  std::string table;
  for (std::size_t i = 0; i < got.size(); ++i) table += (i ? "/" : "") + got[i];
  return {ok, "report table " + table + ", direct policy " + direct + " (expected Allow/Block/Block/Block)"};
}

// 9. OR recall dominance and latency ordering
Outcome two_layer_dominance(const std::vector<SeedRun>& runs) {
  bool ok = true;
  std::ostringstream d;
  for (const auto& r : runs) {
    const auto rule = summarize_layer(r.decisions, "rule");
    const auto model = summarize_layer(r.decisions, "model");
    const auto both = summarize_layer(r.decisions, "or");
    const bool rec = both.metrics.recall >= std::max(rule.metrics.recall, model.metrics.recall);
    const bool lat = both.latency.p50() <= model.latency.p50();
    ok = ok && rec && lat;
    d << "seed " << r.seed << " recall or/rule/model " << f4(both.metrics.recall) << "/" << f4(rule.metrics.recall)
      << "/" << f4(model.metrics.recall) << " p50 or/model " << f4(both.latency.p50() / 1000) << "/"
      << f4(model.latency.p50() / 1000) << " ms; ";
  }
  return {ok, d.str()};
}

// 10. edge-case contrast between the two rule configurations
Outcome edge_contrast(const std::vector<SeedRun>& runs) {
  bool ok = true;
  std::ostringstream d;
  for (const auto& r : runs) {
    const auto& t = r.edge_table;
    int e2_fail = 0, contrast = 0, enc = 0, benign_e36 = 0;
    for (const auto& row : t.rows) {
      if (row[t.col("kind")] == "benign") {
        benign_e36 += row[t.col("block_e36")] == "Yes";
        continue;
      }
      ++enc;
      if (row[t.col("block_e2")] == "No") {
        ++e2_fail;
        contrast += row[t.col("block_e36")] == "Yes";
      }
    }
    // per-session view: no benign burst session is ever blocked by E36
    int benign_sessions_blocked = 0;
    for (const auto& e : r.edges) {
      if (e.kind == "benign" && e.e36_block_us) ++benign_sessions_blocked;
    }
    const bool seed_ok = enc == 4 && contrast >= 3 && benign_e36 == 0 && benign_sessions_blocked == 0;
    ok = ok && seed_ok;
    d << "seed " << r.seed << ": E36 blocks " << contrast << " of " << e2_fail << " E2 misses, benign E36 blocks "
      << benign_e36 + benign_sessions_blocked << "; ";
  }
  return {ok, d.str()};
}

// 12. rule evaluation vs model prediction on held-out vectors
Outcome rule_cost(const TrainingResult& t) {
  const auto d36 = t.prepared.test.select(schema36());
  std::vector<double> rule_ns, model_ns;
  volatile double sink = 0;
  constexpr int kReps = 2000;
  for (const auto& x : d36.rows) {
    auto t0 = Clock::now();
    for (int i = 0; i < kReps; ++i) sink = sink + evaluate_rules(t.bundle.rules36, x).p_enc;
    auto t1 = Clock::now();
    for (int i = 0; i < kReps; ++i) sink = sink + predict_proba(t.bundle.model, x);
    auto t2 = Clock::now();
    rule_ns.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count() / kReps);
    model_ns.push_back(std::chrono::duration<double, std::nano>(t2 - t1).count() / kReps);
  }
  const double rp50 = percentile_nearest_rank(rule_ns, 50), mp50 = percentile_nearest_rank(model_ns, 50);
  const double rmax = *std::max_element(rule_ns.begin(), rule_ns.end());
  std::ostringstream d;
  d << rule_ns.size() << " vectors: rule p50 " << f4(rp50 / 1000) << " us (max " << f4(rmax / 1000)
    << " us), model p50 " << f4(mp50 / 1000) << " us";
  return {rp50 < mp50 && rmax < 100000.0, d.str()};
}

// 13. two identical-seed runs give byte-identical outputs
Outcome determinism(const fs::path& a, const fs::path& b) {
  std::size_t files = 0, differ = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file() || e.path().filename() == "timing.csv") continue;
    ++files;
    const auto rel = fs::relative(e.path(), a);
    if (!fs::exists(b / rel) || read_text_file(e.path()) != read_text_file(b / rel)) ++differ;
  }
  return {files > 0 && differ == 0,
          std::to_string(files) + " run files compared (timing.csv excluded), " + std::to_string(differ) + " differ"};
}

}  // namespace

int main() {
  const auto start = Clock::now();
  std::map<int, Outcome> out;
  auto guard = [&](int id, const std::function<Outcome()>& fn) {
    try {
      out[id] = fn();
    } catch (const std::exception& e) {
      out[id] = {false, std::string("exception: ") + e.what()};
    }
  };

  guard(1, graph_oracle);
  guard(2, elbow_rule);
  guard(3, utility_formula);
  guard(5, rule_tree_equivalence);
  guard(7, enforcement_soundness);
  guard(8, cil_golden);
  guard(14, selection_sanity);

  std::vector<SeedRun> runs;
  SeedRun repeat;
  TrainingResult seed42;
  guard(0, [&] {
    for (std::uint64_t s : {42u, 1u, 7u, 99u, 2026u}) runs.push_back(run_seed(s, "seed" + std::to_string(s)));
    repeat = run_seed(42, "seed42_repeat");
    PipelineConfig cfg;
    seed42 = train_on_corpus(manifest(), keys(), cfg);
    return Outcome{true, ""};
  });
  const bool have_runs = out[0].pass;
  auto needs_runs = [&](int id, const std::function<Outcome()>& fn) {
    if (have_runs) guard(id, fn);
    else out[id] = {false, "pipeline runs failed: " + out[0].detail};
  };
  needs_runs(4, [&] { return tau_monotonicity(runs); });
  needs_runs(6, [&] { return whitelist_table(runs.front()); });
  needs_runs(9, [&] { return two_layer_dominance(runs); });
  needs_runs(10, [&] { return edge_contrast(runs); });
  needs_runs(12, [&] { return rule_cost(seed42); });
  needs_runs(13, [&] { return determinism(runs.front().dir, repeat.dir); });
  needs_runs(11, [&] {
    const double total = seconds_since(start);
    const double f1 = runs.front().heldout_f1;
    std::ostringstream d;
    d << "seed 42 held-out macro-F1 " << f4(f1) << " at tau 0.50; acceptance run (7 pipeline trainings) "
      << f4(total) << " s";
    return Outcome{f1 >= 0.95 && total < 300.0, d.str()};
  });
  out.erase(0);

  static const std::map<int, std::string> names = {
      {1, "graph-metric oracle equivalence"}, {2, "elbow rule exactness"},
      {3, "utility formula"},                 {4, "tau monotonicity"},
      {5, "rule/tree equivalence"},           {6, "whitelist decision table"},
      {7, "enforcement soundness"},           {8, "CIL golden file"},
      {9, "two-layer dominance"},             {10, "edge-case contrast"},
      {11, "detector quality floor"},         {12, "rule-evaluation cost ordering"},
      {13, "pipeline determinism"},           {14, "selection sanity"}};
  int failed = 0;
  for (const auto& [id, o] : out) {
    failed += !o.pass;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, names.at(id).c_str(), o.detail.c_str());
  }
  std::fflush(stdout);
  fs::remove_all(scratch_root());
  return failed ? 1 : 0;
}
