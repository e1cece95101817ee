#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <set>

#include "encguard/features.hpp"

using namespace encguard;

namespace {

TraceEvent leaf_at(double t, std::string sym) {
  TraceEvent e;
  e.timestamp_us = t;
  e.pid = 10;
  e.comm = "x";
  e.symbol = std::move(sym);
  e.kind = EventKind::Leaf;
  e.duration_us = 0.5;
  return e;
}

ResourceSample sample(double t, double wb, double wc = 0, double cpu = 0, double rss = 0) {
  ResourceSample s;
  s.timestamp_us = t;
  s.write_bytes = wb;
  s.write_count = wc;
  s.cpu_percent = cpu;
  s.rss = rss;
  return s;
}

SymbolKeyList small_keys() {
  SymbolKeyList k;
  k.symbols = detector_symbols();
  k.symbols.push_back("vfs_write");
  k.excluded = {"schedule"};
  return k;
}

}  // namespace

TEST(Schema, ThirtySixColumns) {
  auto s = schema36();
  EXPECT_EQ(s.size(), 36u);
  std::set<std::string> names(s.columns.begin(), s.columns.end());
  EXPECT_EQ(names.size(), 36u);
  EXPECT_TRUE(names.count("betweenness"));
  EXPECT_FALSE(names.count("avg_shortest_path"));
  EXPECT_FALSE(names.count("total_duration"));
}

TEST(WindowSession, SpanArithmetic) {
  TraceSession s;
  s.session_id = "s";
  s.events = {leaf_at(0, "kfree"), leaf_at(2.5e6, "kfree")};
  auto w = window_session(s);
  ASSERT_EQ(w.size(), 3u);
  EXPECT_FALSE(w[0].partial);
  EXPECT_FALSE(w[1].partial);
  EXPECT_TRUE(w[2].partial);
  EXPECT_DOUBLE_EQ(w[1].end_us - w[1].start_us, 1e6);

  TraceSession shorter;
  shorter.events = {leaf_at(0, "kfree"), leaf_at(3e5, "kfree")};
  auto v = window_session(shorter);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_TRUE(v[0].partial);
}

TEST(WindowSession, MissingSamplesFlagged) {
  TraceSession s;
  s.events = {leaf_at(0, "kfree"), leaf_at(1.5e6, "kfree")};
  for (auto& w : window_session(s)) {
    EXPECT_TRUE(w.missing_samples);
    EXPECT_EQ(w.write_bytes, 0.0);
    EXPECT_EQ(w.cpu_percent, 0.0);
  }
}

TEST(WindowSession, EmptySession) {
  try {
    window_session(TraceSession{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySession);
  }
}

TEST(WindowSession, ResourceDeltasAndLevels) {
  TraceSession s;
  s.events = {leaf_at(0, "kfree"), leaf_at(1.9e6, "kfree")};
  s.samples = {sample(0, 0, 0, 10, 100), sample(5e5, 1000, 2, 30, 200), sample(1e6, 4000, 5, 50, 300),
               sample(1.5e6, 4096, 6, 20, 250)};
  auto w = window_session(s);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_DOUBLE_EQ(w[0].write_bytes, 4000);
  EXPECT_DOUBLE_EQ(w[0].write_count, 5);
  EXPECT_DOUBLE_EQ(w[0].rss, 300);
  EXPECT_DOUBLE_EQ(w[0].cpu_percent, 40);
  EXPECT_DOUBLE_EQ(w[1].write_bytes, 96);
  EXPECT_DOUBLE_EQ(w[1].rss, 250);
}

TEST(WindowSession, CallTreeAssignedByRoot) {
  TraceSession s;
  TraceEvent a;
  a.kind = EventKind::Entry;
  a.symbol = "vfs_write";
  a.timestamp_us = 9.9e5;
  TraceEvent b = leaf_at(1.2e6, "kfree");
  b.depth = 1;
  b.pid = 0;
  b.comm = "";
  TraceEvent c = a;
  c.kind = EventKind::Exit;
  c.timestamp_us = 1.3e6;
  c.duration_us = 3e5;
  s.events = {leaf_at(0, "kfree"), a, b, c, leaf_at(1.5e6, "fsnotify")};
  for (auto& e : s.events) e.pid = 0;
  auto w = window_session(s);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[0].events.size(), 4u);
  EXPECT_EQ(w[1].events.size(), 1u);
}

TEST(WindowSession, LabelsFollowOnset) {
  TraceSession s;
  s.events = {leaf_at(0, "kfree"), leaf_at(3.5e6, "kfree")};
  s.meta.label = Label::Encrypted;
  s.meta.onset_us = 1.2e6;
  auto w = window_session(s);
  ASSERT_EQ(w.size(), 4u);
  EXPECT_EQ(*w[0].label, Label::Benign);
  EXPECT_EQ(*w[1].label, Label::Encrypted);
  EXPECT_EQ(*w[3].label, Label::Encrypted);
}

TEST(FilterHousekeeping, Cases) {
  SymbolKeyList k;
  k.excluded = {"schedule"};
  auto out = filter_housekeeping({leaf_at(0, "schedule"), leaf_at(1, "kfree")}, k);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].symbol, "kfree");
  SymbolKeyList none;
  EXPECT_EQ(filter_housekeeping({leaf_at(0, "schedule")}, none).size(), 1u);
  EXPECT_TRUE(filter_housekeeping({leaf_at(0, "schedule"), leaf_at(1, "schedule")}, k).empty());
}

TEST(PidAnchoredFilter, Cases) {
  TraceSession s;
  s.events = {leaf_at(0, "fsnotify"), leaf_at(1, "kfree")};
  Window io;
  io.write_count = 5;
  Window zero;
  zero.events = {1};
  Window fs;
  fs.events = {0};
  auto out = pid_anchored_filter(s, {io, zero, fs});
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].write_count, 5);
  EXPECT_EQ(out[1].events, std::vector<std::size_t>{0});
}

TEST(ExtractRaw, CountsAndGraph) {
  auto keys = small_keys();
  auto schema = raw_schema(keys);
  TraceSession s;
  s.events = {leaf_at(0, "kfree"), leaf_at(1, "kfree"), leaf_at(2, "kfree")};
  Window w;
  w.events = {0, 1, 2};
  auto v = extract_raw(s, w, schema);
  EXPECT_EQ(v.at("kfree"), 3.0);
  auto p = project36(v);
  EXPECT_EQ(p[schema36().require("kfree")], 3.0);

  Window empty;
  auto z = extract_raw(s, empty, schema);
  for (double x : z.values) EXPECT_EQ(x, 0.0);
  for (double x : project36(z)) EXPECT_EQ(x, 0.0);
}

TEST(ExtractRaw, HandComputedFixture) {
  // vfs_write { fsnotify { kfree(); } mutex_unlock(); }
  auto keys = small_keys();
  auto schema = raw_schema(keys);
  auto mk = [](EventKind k, std::string sym, int d, double t, double dur) {
    TraceEvent e;
    e.kind = k;
    e.symbol = std::move(sym);
    e.depth = d;
    e.timestamp_us = t;
    if (k != EventKind::Entry) e.duration_us = dur;
    return e;
  };
  TraceSession s;
  s.events = {mk(EventKind::Entry, "vfs_write", 0, 0, 0), mk(EventKind::Entry, "fsnotify", 1, 1, 0),
              mk(EventKind::Leaf, "kfree", 2, 2, 0.5),     mk(EventKind::Exit, "fsnotify", 1, 3, 2.0),
              mk(EventKind::Leaf, "mutex_unlock", 1, 4, 0.25), mk(EventKind::Exit, "vfs_write", 0, 5, 5.0)};
  Window w;
  w.events = {0, 1, 2, 3, 4, 5};
  w.write_bytes = 4096;
  auto v = extract_raw(s, w, schema);
  // edges: vfs_write->fsnotify, fsnotify->kfree, vfs_write->mutex_unlock (n=4)
  // betweenness: fsnotify lies on (vfs_write,kfree): 1/((3)(2)) = 1/6; mean = 1/24
  EXPECT_NEAR(v.at("betweenness"), 1.0 / 24.0, 1e-12);
  EXPECT_EQ(v.at("clustering"), 0.0);
  // reachable pairs: vw->fs 1, vw->kf 2, vw->mu 1, fs->kf 1 -> 5/4
  EXPECT_NEAR(v.at("avg_shortest_path"), 1.25, 1e-12);
  EXPECT_NEAR(v.at("total_duration"), 7.75, 1e-12);
  EXPECT_EQ(v.at("fsnotify"), 1.0);
  EXPECT_EQ(v.at("kfree"), 1.0);
  EXPECT_EQ(v.at("mutex_unlock"), 1.0);
  EXPECT_EQ(v.at("vfs_write"), 1.0);
  EXPECT_EQ(v.at("write_bytes"), 4096.0);
}

TEST(Project36, MissingColumnThrows) {
  Schema bad = raw_schema(small_keys());
  bad.columns.erase(std::find(bad.columns.begin(), bad.columns.end(), "fsnotify"));
  RawVector v;
  v.schema = &bad;
  v.values.assign(bad.size(), 0.0);
  try {
    project36(v);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SchemaMismatch);
  }
}

TEST(DropMissing, ThresholdIsStrict) {
  const double nan = std::nan("");
  DesignMatrix m;
  m.schema.columns = {"a", "b", "c"};
  // a: 25% missing (dropped), b: 20% missing (kept) over 20 rows
  for (int i = 0; i < 20; ++i) {
    m.push({i < 5 ? nan : 1.0, i < 4 ? nan : 2.0, 3.0}, Label::Benign, {});
  }
  MissingReport rep;
  auto out = drop_missing(m, 0.20, &rep);
  EXPECT_EQ(out.schema.columns, (std::vector<std::string>{"b", "c"}));
  EXPECT_EQ(rep.dropped_columns, std::vector<std::string>{"a"});
  // rows with 1/2 missing cells are above 20%
  EXPECT_EQ(out.size(), 16u);
  EXPECT_EQ(rep.dropped_rows, 4u);

  DesignMatrix clean;
  clean.schema.columns = {"a"};
  clean.push({1.0}, Label::Benign, {});
  EXPECT_EQ(drop_missing(clean).rows, clean.rows);
}

TEST(MinMax, Formula) {
  auto s = fit_minmax({{0.0, 7.0}, {5.0, 7.0}, {10.0, 7.0}});
  auto r = apply_minmax(s, std::vector<std::vector<double>>{{0.0, 7.0}, {5.0, 7.0}, {10.0, 7.0}, {20.0, 9.0}});
  EXPECT_DOUBLE_EQ(r[0][0], 0.0);
  EXPECT_DOUBLE_EQ(r[1][0], 0.5);
  EXPECT_DOUBLE_EQ(r[2][0], 1.0);
  EXPECT_DOUBLE_EQ(r[0][1], 0.0);
  EXPECT_DOUBLE_EQ(r[3][0], 2.0);
}

TEST(MinMax, TrainOnlyFitDiffersFromLeakyFit) {
  Rng rng(42);
  std::vector<std::vector<double>> train, test;
  for (int i = 0; i < 50; ++i) train.push_back({uniform(rng, 0, 1), uniform(rng, 0, 1)});
  for (int i = 0; i < 10; ++i) test.push_back({uniform(rng, 0, 2), uniform(rng, 0, 1)});
  auto st = fit_minmax(train);
  auto all = train;
  all.insert(all.end(), test.begin(), test.end());
  auto leaky = fit_minmax(all);
  EXPECT_NE(st.max[0], leaky.max[0]);
  for (auto& r : apply_minmax(st, train))
    for (double v : r) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
}

namespace {

std::vector<std::size_t> eigen_oracle_keep(const std::vector<std::vector<double>>& rows, double pct) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(rows[0].size());
  Eigen::MatrixXd X(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = rows[i][j];
  Eigen::MatrixXd C = X.rowwise() - X.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(C, Eigen::ComputeThinV);
  Eigen::MatrixXd P = C * svd.matrixV().leftCols(std::min<Eigen::Index>(2, d));
  std::vector<double> dist(rows.size());
  for (Eigen::Index i = 0; i < n; ++i) dist[i] = P.row(i).norm();
  auto sorted = dist;
  std::sort(sorted.begin(), sorted.end());
  auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * sorted.size()));
  double cut = sorted[rank - 1];
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < dist.size(); ++i)
    if (dist[i] <= cut * (1 + 1e-9) + 1e-12) keep.push_back(i);
  return keep;
}

}  // namespace

TEST(PcaOutlier, DropsExactlyFiveOfHundred) {
  Rng rng(42);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 100; ++i) rows.push_back({normal(rng), normal(rng), normal(rng), normal(rng)});
  auto keep = pca_outlier_keep(rows);
  EXPECT_EQ(keep.size(), 95u);
}

TEST(PcaOutlier, IdenticalRowsKeepAll) {
  std::vector<std::vector<double>> rows(10, {0.5, 0.2, 0.1});
  EXPECT_EQ(pca_outlier_keep(rows).size(), 10u);
}

TEST(PcaOutlier, TooFewRows) {
  try {
    pca_outlier_keep({{1.0}, {2.0}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooFewRows);
  }
}

TEST(PcaOutlier, MatchesSvdOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 20; ++i) {
      std::vector<double> r;
      for (int j = 0; j < 5; ++j) r.push_back(uniform01(rng) * (j + 1));
      rows.push_back(r);
    }
    EXPECT_EQ(pca_outlier_keep(rows), eigen_oracle_keep(rows, 95.0)) << "trial " << trial;
  }
}

namespace {

RowMeta meta(std::string sid, std::string stratum_binary, std::optional<Label> sl = std::nullopt) {
  RowMeta m;
  m.session_id = std::move(sid);
  m.stratum.binary = std::move(stratum_binary);
  m.session_label = sl;
  return m;
}

}  // namespace

TEST(Balance, RatioRule) {
  DesignMatrix m;
  m.schema.columns = {"x"};
  for (int i = 0; i < 10; ++i) m.push({1.0}, Label::Encrypted, meta("e" + std::to_string(i % 3), "r"));
  for (int i = 0; i < 30; ++i) m.push({0.0}, Label::Benign, meta("b" + std::to_string(i % 5), "b"));
  auto out = balance_downsample(m);
  EXPECT_EQ(out.count(Label::Encrypted), 10u);
  EXPECT_EQ(out.count(Label::Benign), 10u);
  EXPECT_EQ(balance_downsample(m).rows, out.rows);
}

TEST(Balance, AlreadyBalancedIsIdentity) {
  DesignMatrix m;
  m.schema.columns = {"x"};
  for (int i = 0; i < 4; ++i) m.push({double(i)}, i % 2 ? Label::Encrypted : Label::Benign, meta("s", "a"));
  EXPECT_EQ(balance_downsample(m).rows, m.rows);
}

TEST(Balance, ThreeStratumHandAllocation) {
  // benign mass 90/6/4, 20 encrypted rows, cap = 0.5 * 20 = 10.
  // proportional 18/1.2/0.8 -> stratum A pinned at 10, remaining 10 split 6:4.
  DesignMatrix m;
  m.schema.columns = {"x"};
  for (int i = 0; i < 20; ++i) m.push({1.0}, Label::Encrypted, meta("e" + std::to_string(i % 4), "E"));
  for (int i = 0; i < 90; ++i) m.push({0.0}, Label::Benign, meta(i < 81 ? "big" : "a" + std::to_string(i % 3), "A"));
  for (int i = 0; i < 6; ++i) m.push({0.0}, Label::Benign, meta("b" + std::to_string(i % 2), "B"));
  for (int i = 0; i < 4; ++i) m.push({0.0}, Label::Benign, meta("c", "C"));
  auto out = balance_downsample(m);
  std::map<std::string, int> per_stratum, per_session;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (*out.labels[i] != Label::Benign) continue;
    per_stratum[out.meta[i].stratum.binary]++;
    per_session[out.meta[i].session_id]++;
  }
  EXPECT_EQ(per_stratum["A"], 10);
  EXPECT_EQ(per_stratum["B"], 6);
  EXPECT_EQ(per_stratum["C"], 4);
  // the dominant session "big" (90% of stratum A) is drawn round-robin with
  // three 3-row sessions, so it gets at most ceil(10/4) rows instead of 9
  EXPECT_LE(per_session["big"], 3);
  EXPECT_GE(per_session["a0"] + per_session["a1"] + per_session["a2"], 7);
}

TEST(Split, SessionPartitionAndRatio) {
  DesignMatrix m;
  m.schema.columns = {"x"};
  for (int s = 0; s < 100; ++s) {
    Label l = s < 50 ? Label::Encrypted : Label::Benign;
    for (int r = 0; r < 3; ++r) m.push({double(s)}, l, meta("s" + std::to_string(s), s % 2 ? "x" : "y", l));
  }
  auto sp = split(m);
  auto sessions = [&](const std::vector<std::size_t>& idx) {
    std::set<std::string> out;
    for (auto i : idx) out.insert(m.meta[i].session_id);
    return out;
  };
  auto tr = sessions(sp.train), va = sessions(sp.val), te = sessions(sp.test);
  EXPECT_NEAR(double(tr.size()), 80.0, 2.0);
  EXPECT_NEAR(double(va.size()), 10.0, 1.0);
  EXPECT_NEAR(double(te.size()), 10.0, 1.0);
  EXPECT_EQ(sp.train.size() + sp.val.size() + sp.test.size(), m.size());
  for (auto& s : va) EXPECT_FALSE(tr.count(s) || te.count(s));
  for (auto& s : te) EXPECT_FALSE(tr.count(s));
  auto again = split(m);
  EXPECT_EQ(again.train, sp.train);
  EXPECT_EQ(again.test, sp.test);
}

TEST(Split, InsufficientSessions) {
  DesignMatrix m;
  m.schema.columns = {"x"};
  for (int s = 0; s < 5; ++s) m.push({0}, Label::Benign, meta("b" + std::to_string(s), "x", Label::Benign));
  for (int s = 0; s < 2; ++s) m.push({1}, Label::Encrypted, meta("e" + std::to_string(s), "x", Label::Encrypted));
  try {
    split(m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientSessions);
  }
}

TEST(DesignCsv, RoundTripWithMissing) {
  DesignMatrix m;
  m.schema.columns = {"a", "b"};
  m.push({1.5, std::nan("")}, Label::Encrypted, meta("s1", "bin"));
  m.push({0.0, 2.0}, std::nullopt, meta("s2", "bin"));
  auto text = write_design_csv(m);
  EXPECT_EQ(text.substr(0, text.find('\n')), "a,b,label,session_id,stratum");
  auto back = read_design_csv(text);
  EXPECT_EQ(back.schema, m.schema);
  EXPECT_TRUE(std::isnan(back.rows[0][1]));
  EXPECT_EQ(back.rows[1], m.rows[1]);
  EXPECT_EQ(back.labels, m.labels);
  EXPECT_EQ(write_design_csv(back), text);
}

TEST(TraceLenBins, Quartiles) {
  auto b = trace_len_bins({1, 2, 3, 4, 5, 6, 7, 8});
  EXPECT_EQ(b, (std::vector<int>{0, 0, 1, 1, 2, 2, 3, 3}));
}
