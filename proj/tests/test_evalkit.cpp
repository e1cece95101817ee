#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>

#include "encguard/evalkit.hpp"
#include "encguard/random.hpp"

using namespace encguard;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("encguard_evalkit_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

DecisionEvent event(std::string sid, double start, double write, double verdict, bool blocks, double bytes = 0) {
  return {std::move(sid), start, write, verdict, blocks, bytes};
}

/// Random decision log with OR = rule || model and plausible timings.
std::vector<DecisionRecord> random_log(std::uint64_t seed, std::size_t sessions = 6, std::size_t windows = 5) {
  Rng rng(seed);
  std::vector<DecisionRecord> out;
  const char* kinds[] = {"benign", "ransomware", "crypto_tool"};
  for (std::size_t s = 0; s < sessions; ++s) {
    const std::string kind = kinds[s % 3];
    for (std::size_t w = 0; w < windows; ++w) {
      DecisionRecord r;
      r.session_id = "p" + std::to_string(s) + ".r0";
      r.profile = "p" + std::to_string(s);
      r.kind = kind;
      r.window = w;
      r.start_us = 1e6 + 1e6 * double(w);
      r.end_us = r.start_us + 1e6;
      r.label = kind == "benign" ? "benign" : (w == 0 && kind == "ransomware" ? "benign" : "encrypted");
      r.user = "u1";
      r.app = r.profile;
      r.path = "/home/u1/docs";
      r.file_type = "user_home_t";
      r.p_rule = uniform01(rng) < 0.5 ? 1.0 : 0.0;
      r.p_model = uniform01(rng);
      r.p_rule2 = uniform01(rng);
      const bool rb = r.p_rule >= 0.5, mb = r.p_model >= 0.5;
      r.rule_decision = rb ? "block" : "allow";
      r.model_decision = mb ? "block" : "allow";
      r.or_decision = rb || mb ? "block" : "allow";
      r.or_source = "or_composition";
      r.session_start_us = 1e6;
      r.first_write_us = r.start_us + uniform(rng, 0, 5000);
      r.rule_verdict_us = rb ? r.first_write_us + uniform(rng, 0, 40000) : r.end_us;
      r.model_verdict_us = mb ? r.first_write_us + uniform(rng, 0, 40000) : r.end_us;
      r.or_verdict_us = rb && mb ? std::min(r.rule_verdict_us, r.model_verdict_us)
                        : rb     ? r.rule_verdict_us
                        : mb     ? r.model_verdict_us
                                 : r.end_us;
      r.rule_bytes = 4096 * double(w + 1);
      r.model_bytes = 4096 * double(w + 1);
      r.or_bytes = 4096 * double(w + 1);
      out.push_back(r);
    }
  }
  return out;
}

void write_run_dir(const fs::path& d, const std::vector<DecisionRecord>& recs) {
  std::ofstream(d / "decisions.csv") << write_decisions_csv(recs);
  std::ofstream(d / "meta.json") << R"({"seed": 42, "tau": 0.5, "edge_threshold": 0.8})";
}

}  // namespace

TEST(Utility, PaperShapedExamples) {
  EXPECT_EQ(utility({200, 50, 0, 1}), 1900);
  EXPECT_EQ(utility({}), 0);
  EXPECT_EQ(utility({0, 0, 0, 10}), -500);
}

TEST(Latency, SingleDecision) {
  auto s = latency_account({event("a", 0, 100, 1100, true, 4096)});
  ASSERT_EQ(s.latencies_us.size(), 1u);
  EXPECT_DOUBLE_EQ(s.latencies_us[0], 1000.0);
  EXPECT_DOUBLE_EQ(s.bytes_to_block[0], 4096.0);
  ASSERT_TRUE(s.ttb_us.at("a"));
  EXPECT_DOUBLE_EQ(*s.ttb_us.at("a"), 1100.0);
}

TEST(Latency, NeverBlockedIsSentinel) {
  auto s = latency_account({event("a", 0, 100, 1100, false), event("b", 0, 10, 20, true)});
  EXPECT_FALSE(s.ttb_us.at("a").has_value());
  EXPECT_TRUE(s.ttb_us.at("b").has_value());
  EXPECT_EQ(s.sessions, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(s.latencies_us.size(), 1u);
  EXPECT_STREQ(kNoBlock, "no block");
}

TEST(Latency, TimeToBlockIsEarliestBlockingVerdict) {
  auto s = latency_account({event("a", 1000, 5000, 9000, true), event("a", 1000, 2000, 3000, true),
                            event("a", 1000, 9000, 9500, false)});
  EXPECT_DOUBLE_EQ(*s.ttb_us.at("a"), 2000.0);
}

TEST(Latency, VerdictBeforeWriteCountsAsZero) {
  auto s = latency_account({event("a", 0, 500, 200, true)});
  EXPECT_DOUBLE_EQ(s.latencies_us[0], 0.0);
}

TEST(Latency, NearestRankPercentiles) {
  std::vector<DecisionEvent> evs;
  for (int i = 1; i <= 100; ++i) evs.push_back(event("s", 0, 0, i, true));
  auto s = latency_account(evs);
  EXPECT_DOUBLE_EQ(s.p50(), 50.0);
  EXPECT_DOUBLE_EQ(s.p95(), 95.0);
}

TEST(Overhead, Formula) {
  EXPECT_DOUBLE_EQ(overhead_relative({120}, {100}, Stat::P50), 20.0);
  std::vector<double> v = {3, 1, 2, 8};
  EXPECT_DOUBLE_EQ(overhead_relative(v, v, Stat::P95), 0.0);
  try {
    overhead_relative({1}, {0}, Stat::P50);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DivisionByZero);
  }
}

TEST(TauSweep, RowsAscendAndSingleTauMatchesMetrics) {
  std::vector<double> sc = {0.1, 0.4, 0.6, 0.9, 0.35, 0.75};
  std::vector<int> y = {0, 1, 1, 1, 0, 0};
  auto r = tau_sweep(sc, y, {0.7, 0.3, 0.5});
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_DOUBLE_EQ(r.rows[0].tau, 0.3);
  EXPECT_DOUBLE_EQ(r.rows[2].tau, 0.7);
  auto one = tau_sweep(sc, y, {0.5});
  auto m = classification_metrics(sc, y, 0.5);
  EXPECT_EQ(one.rows[0].counts, m.counts);
  EXPECT_DOUBLE_EQ(one.rows[0].f1, m.macro_f1);
  EXPECT_DOUBLE_EQ(one.rows[0].recall, m.recall);
  EXPECT_EQ(one.rows[0].utility, utility(m.counts));
}

TEST(TauSweep, MonotoneOnRandomScores) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    std::vector<double> sc;
    std::vector<int> y;
    for (int i = 0; i < 200; ++i) {
      y.push_back(uniform01(rng) < 0.4);
      sc.push_back(std::clamp(0.3 * y.back() + uniform(rng, 0.0, 0.7), 0.0, 1.0));
    }
    auto r = tau_sweep(sc, y);
    for (std::size_t i = 1; i < r.rows.size(); ++i) {
      EXPECT_GE(r.rows[i].counts.fn, r.rows[i - 1].counts.fn);
      EXPECT_LE(r.rows[i].counts.fp, r.rows[i - 1].counts.fp);
      EXPECT_LE(r.rows[i].counts.tp + r.rows[i].counts.fp, r.rows[i - 1].counts.tp + r.rows[i - 1].counts.fp);
    }
    EXPECT_GE(r.rows.front().recall, r.rows.back().recall);
  }
}

TEST(Csv, QuotedFieldsRoundTrip) {
  auto t = parse_csv("a,b,c\n\"x,1\",\"say \"\"hi\"\"\",3\n");
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.rows[0][0], "x,1");
  EXPECT_EQ(t.rows[0][1], "say \"hi\"");
  EXPECT_EQ(parse_csv(t.str()).rows, t.rows);
  EXPECT_THROW(parse_csv("a,b\n1\n"), Error);
  EXPECT_THROW(t.col("missing"), Error);
}

TEST(DecisionLog, RoundTrip) {
  auto recs = random_log(3);
  recs[0].path = "/home/u1/a,b";
  auto back = read_decisions_csv(write_decisions_csv(recs));
  ASSERT_EQ(back.size(), recs.size());
  EXPECT_EQ(back[0].path, "/home/u1/a,b");
  EXPECT_EQ(back[3].or_decision, recs[3].or_decision);
  EXPECT_EQ(write_decisions_csv(back), write_decisions_csv(recs));
}

TEST(EdgeLog, RoundTripKeepsMissingBlocks) {
  std::vector<EdgeRecord> e(2);
  e[0] = {"s.r0", "s", "ransomware", 0, "encrypted", 0.25, 1.0, 1e6, std::nullopt, 1.02e6};
  e[1] = {"s.r0", "s", "ransomware", 1, "encrypted", 0.9, 1.0, 1e6, 2.5e6, 2.02e6};
  auto back = read_edge_csv(write_edge_csv(e));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_FALSE(back[0].e2_block_us);
  EXPECT_DOUBLE_EQ(*back[0].e36_block_us, 1.02e6);
  EXPECT_DOUBLE_EQ(*back[1].e2_block_us, 2.5e6);
}

TEST(Report, EmptyDirectoryIsNoRunData) {
  auto d = fresh_dir("empty");
  try {
    report(d);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoRunData);
  }
  std::ofstream(d / "decisions.csv") << write_decisions_csv({});
  EXPECT_THROW(report(d), Error);
}

TEST(Report, DeterministicTablesAndMonotoneCdf) {
  auto d = fresh_dir("fixture");
  write_run_dir(d, random_log(11));
  auto a = report(d);
  std::map<std::string, std::string> first;
  for (const auto& p : a.tables) first[p.filename().string()] = read_text_file(p);
  const auto summary = read_text_file(a.summary), cdf = read_text_file(a.latency_cdf);
  auto b = report(d);
  for (const auto& p : b.tables) EXPECT_EQ(read_text_file(p), first.at(p.filename().string())) << p;
  EXPECT_EQ(read_text_file(b.summary), summary);
  EXPECT_EQ(read_text_file(b.latency_cdf), cdf);
  for (const char* t : {"benign_footprint.csv", "crypto_whitelist.csv", "ransomware_ttb.csv", "rule_cost.csv",
                        "tau_sweep.csv", "two_layer.csv", "edge_cases.csv"}) {
    EXPECT_TRUE(first.count(t)) << t;
  }

  auto c = parse_csv(cdf);
  std::map<std::string, double> last_frac, last_ms;
  for (const auto& r : c.rows) {
    const double ms = std::stod(r[1]), frac = std::stod(r[2]);
    EXPECT_GE(frac, last_frac[r[0]]);
    EXPECT_GE(ms, last_ms[r[0]]);
    EXPECT_LE(frac, 1.0);
    last_frac[r[0]] = frac;
    last_ms[r[0]] = ms;
  }
  for (const auto& [layer, f] : last_frac) EXPECT_DOUBLE_EQ(f, 1.0) << layer;
}

TEST(Report, TwoLayerRecallDominatesOnRandomLogs) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto recs = random_log(seed, 9, 6);
    auto rule = summarize_layer(recs, "rule"), model = summarize_layer(recs, "model"), orl = summarize_layer(recs, "or");
    EXPECT_GE(orl.metrics.recall, rule.metrics.recall);
    EXPECT_GE(orl.metrics.recall, model.metrics.recall);
  }
}

TEST(Report, WhitelistedWindowsLeaveDetectorMetrics) {
  auto recs = random_log(5);
  auto base = summarize_layer(recs, "or");
  for (auto& r : recs) {
    if (r.kind == "crypto_tool") r.whitelisted = true;
  }
  auto wl = summarize_layer(recs, "or");
  EXPECT_LT(wl.metrics.counts.total(), base.metrics.counts.total());
}

TEST(Report, RansomwareTableUsesSentinel) {
  auto recs = random_log(1, 3, 3);
  for (auto& r : recs) {
    if (r.kind != "ransomware") continue;
    r.rule_decision = r.model_decision = r.or_decision = "allow";
  }
  auto d = fresh_dir("sentinel");
  write_run_dir(d, recs);
  report(d);
  auto t = parse_csv(read_text_file(d / "tables" / "ransomware_ttb.csv"));
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.rows[0][t.col("ttb_or_s")], "no block");
}

TEST(MedianOfRuns, CellwiseMedian) {
  CsvTable a{{"name", "v"}, {{"x", "1.00"}, {"y", "10"}}};
  CsvTable b{{"name", "v"}, {{"x", "3.00"}, {"y", "30"}}};
  CsvTable c{{"name", "v"}, {{"x", "2.00"}, {"y", "20"}}};
  auto m = median_table({a, b, c});
  EXPECT_EQ(m.rows[0][1], "2.00");
  EXPECT_EQ(m.rows[1][1], "20");
  EXPECT_EQ(m.rows[0][0], "x");
  CsvTable bad{{"name"}, {}};
  EXPECT_THROW(median_table({a, bad}), Error);
  EXPECT_THROW(median_table({}), Error);
}

TEST(MedianOfRuns, OverRunDirectories) {
  std::vector<fs::path> runs;
  for (int i = 0; i < 3; ++i) {
    auto d = fresh_dir("run" + std::to_string(i));
    write_run_dir(d, random_log(100));
    report(d);
    runs.push_back(d);
  }
  auto out = fresh_dir("median");
  auto written = median_of_runs(runs, out);
  EXPECT_FALSE(written.empty());
  // identical runs reduce to themselves
  for (const auto& p : written) EXPECT_EQ(read_text_file(p), read_text_file(runs[0] / "tables" / p.filename()));
  EXPECT_THROW(median_of_runs({}, out), Error);
}
