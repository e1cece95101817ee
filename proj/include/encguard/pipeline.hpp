// Copyright 2026 The encguard Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end wiring: sessions to design matrix, training of the boosted
// model and both rule scopes, windowed detection with prefix checkpoints,
// boolean-gated enforcement and the run directory consumed by `report`.

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "encguard/enforce.hpp"
#include "encguard/evalkit.hpp"
#include "encguard/features.hpp"
#include "encguard/metrics.hpp"
#include "encguard/models.hpp"
#include "encguard/policy.hpp"
#include "encguard/simgen.hpp"
#include "encguard/trace_ingest.hpp"

namespace encguard {

struct PipelineConfig {
  std::uint64_t seed = 42;
  double interval_us = kDefaultIntervalUs;
  double checkpoint_us = 20000.0;  // prefix re-evaluation cadence inside a window
  double edge_threshold = 0.80;
  int eval_first_rep = 1000;
  int eval_reps = 3;
  int rule_depth = 2;
  GbdtOptions gbdt;
  RiskPolicy policy = default_policy();
  unsigned threads = 0;  // 0: hardware concurrency
};

// ---------------------------------------------------------------------------
// featurization

struct FeaturizedSession {
  TraceSession session;  // housekeeping symbols removed
  std::vector<Window> windows;
  std::vector<std::vector<double>> raw;  // full raw schema; NaN resource cells when samples are missing
};

namespace detail {

inline void mark_missing(const Window& w, std::vector<double>& v) {
  if (!w.missing_samples) return;
  for (std::size_t i = 0; i < resource_columns().size(); ++i) v[i] = std::numeric_limits<double>::quiet_NaN();
}

inline unsigned worker_count(unsigned requested, std::size_t jobs) {
  unsigned n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  return static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(jobs, 1)));
}

/// Runs fn(i) for i in [0, n) on a small pool; results land by index.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn fn) {
  const unsigned k = worker_count(threads, n);
  if (k <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::future<void>> workers;
  for (unsigned t = 0; t < k; ++t) {
    workers.push_back(std::async(std::launch::async, [&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    }));
  }
  for (auto& w : workers) w.get();
}

}  // namespace detail

inline FeaturizedSession featurize_session(const TraceSession& s, const SymbolKeyList& keys, const Schema& schema,
                                           double interval_us = kDefaultIntervalUs) {
  FeaturizedSession f;
  f.session = s;
  f.session.events = filter_housekeeping(s.events, keys);
  f.windows = pid_anchored_filter(f.session, window_session(f.session, interval_us));
  for (const auto& w : f.windows) {
    auto v = extract_raw(f.session, w, schema).values;
    detail::mark_missing(w, v);
    f.raw.push_back(std::move(v));
  }
  return f;
}

inline std::vector<FeaturizedSession> featurize_all(const std::vector<TraceSession>& sessions,
                                                    const SymbolKeyList& keys, const Schema& schema,
                                                    double interval_us, unsigned threads = 0) {
  std::vector<FeaturizedSession> out(sessions.size());
  detail::parallel_for(sessions.size(), threads,
                       [&](std::size_t i) { out[i] = featurize_session(sessions[i], keys, schema, interval_us); });
  return out;
}

/// One row per featurized window; strata use quartile bins of the event count.
inline DesignMatrix design_matrix(const std::vector<FeaturizedSession>& sessions, const Schema& schema) {
  std::vector<std::size_t> counts;
  for (const auto& f : sessions) counts.push_back(f.session.events.size());
  const auto bins = trace_len_bins(counts);
  DesignMatrix m;
  m.schema = schema;
  for (std::size_t si = 0; si < sessions.size(); ++si) {
    const auto& f = sessions[si];
    const auto& meta = f.session.meta;
    for (std::size_t k = 0; k < f.windows.size(); ++k) {
      const auto& w = f.windows[k];
      RowMeta rm;
      rm.session_id = f.session.session_id;
      rm.stratum = {meta.kernel_version, meta.binary, meta.path_scope, bins[si]};
      rm.session_label = meta.label;
      rm.window_index = w.index;
      rm.start_us = w.start_us;
      rm.end_us = w.end_us;
      rm.session_start_us = f.windows.empty() ? 0.0 : f.windows.front().start_us;
      rm.cumulative_write_bytes = w.cumulative_write_bytes;
      rm.partial = w.partial;
      rm.missing_samples = w.missing_samples;
      m.push(f.raw[k], w.label, std::move(rm));
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// cleaning and splitting

struct Prepared {
  Schema schema;  // raw columns kept after the missing-value rule
  ScalerState scaler;
  DesignMatrix train;  // scaled, outliers removed, balanced
  DesignMatrix val;    // scaled
  DesignMatrix test;   // scaled
  MissingReport missing;
  std::size_t train_before_cleaning = 0;
  std::size_t outliers_removed = 0;
};

namespace detail {

inline DesignMatrix scaled(const DesignMatrix& m, const ScalerState& s) {
  DesignMatrix out = m;
  out.rows = apply_minmax(s, m.rows);
  return out;
}

}  // namespace detail

inline Prepared prepare(const DesignMatrix& m, std::uint64_t seed) {
  Prepared p;
  auto kept = zero_fill(drop_missing(m, 0.20, &p.missing));
  p.schema = kept.schema;
  const auto parts = split(kept, {seed, 0.8, 0.1});
  auto train = kept.subset(parts.train);
  p.train_before_cleaning = train.size();
  p.scaler = fit_minmax(train.rows);
  train = detail::scaled(train, p.scaler);
  auto inliers = pca_outlier_removal(train, 95.0);
  p.outliers_removed = train.size() - inliers.size();
  p.train = balance_downsample(inliers, {seed, 0.5});
  p.val = detail::scaled(kept.subset(parts.val), p.scaler);
  p.test = detail::scaled(kept.subset(parts.test), p.scaler);
  return p;
}

// ---------------------------------------------------------------------------
// detectors

inline std::vector<std::string> rule2_columns() { return {"rss", "locks_remove_file"}; }

struct DetectorBundle {
  Schema schema;  // raw columns the scaler was fit on
  ScalerState scaler;
  GBDTModel model;  // over the 36 detector columns
  Tree tree2, tree36;
  RuleSet rules2, rules36;  // bound to {rss, locks_remove_file} and the 36 columns
};

inline DetectorBundle train_detectors(const Prepared& p, const PipelineConfig& cfg) {
  DetectorBundle b;
  b.schema = p.schema;
  b.scaler = p.scaler;
  const Schema s36 = schema36();
  Schema s2{rule2_columns()};
  const auto d36 = p.train.select(s36);
  const auto d2 = p.train.select(s2);
  const auto y = p.train.y();
  GbdtOptions g = cfg.gbdt;
  g.seed = derive_seed(cfg.seed, 7);
  b.model = train_gbdt(d36.rows, y, g, s36.columns);
  CartOptions c;
  c.depth_cap = cfg.rule_depth;
  c.class_weights = balanced_weights(y);
  b.tree2 = train_cart(d2.rows, y, c, s2.columns);
  b.tree36 = train_cart(d36.rows, y, c, s36.columns);
  b.rules2 = extract_rules(b.tree2, RuleScope::ERule2, cfg.rule_depth);
  b.rules36 = extract_rules(b.tree36, RuleScope::ERule36, cfg.rule_depth);
  b.rules2.bind(s2.columns);
  b.rules36.bind(s36.columns);
  return b;
}

inline void save_bundle(const DetectorBundle& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto put = [&](const char* name, const nlohmann::json& j) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + (dir / name).string());
    out << j.dump(2) << '\n';
  };
  put("schema.json", nlohmann::json{{"raw", b.schema.columns}, {"f36", schema36().columns}});
  put("scaler.json", scaler_to_json(b.scaler));
  put("model.json", model_to_json(b.model));
  put("tree_e2.json", nlohmann::json{{"columns", b.tree2.columns}, {"root", tree_to_json(b.tree2)}});
  put("tree_e36.json", nlohmann::json{{"columns", b.tree36.columns}, {"root", tree_to_json(b.tree36)}});
  put("rules_e2.json", rules_to_json(b.rules2));
  put("rules_e36.json", rules_to_json(b.rules36));
}

inline DetectorBundle load_bundle(const std::filesystem::path& dir) {
  auto get = [&](const char* name) { return nlohmann::json::parse(read_text_file(dir / name)); };
  DetectorBundle b;
  try {
    b.schema.columns = get("schema.json").at("raw").get<std::vector<std::string>>();
    b.scaler = scaler_from_json(get("scaler.json"));
    b.model = gbdt_from_json(get("model.json"));
    auto t2 = get("tree_e2.json"), t36 = get("tree_e36.json");
    b.tree2 = tree_from_json(t2.at("root"), t2.at("columns").get<std::vector<std::string>>());
    b.tree36 = tree_from_json(t36.at("root"), t36.at("columns").get<std::vector<std::string>>());
    b.rules2 = rules_from_json(get("rules_e2.json"));
    b.rules36 = rules_from_json(get("rules_e36.json"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("bad detector bundle: ") + e.what());
  }
  b.rules2.bind(rule2_columns());
  b.rules36.bind(schema36().columns);
  return b;
}

struct Scores {
  double p_model = 0.0;
  double p_rule = 0.0;   // E_RULE_36
  double p_rule2 = 0.0;  // E_RULE_2
};

/// Maps full raw vectors onto the bundle's schema, scales them and scores
/// all three detectors.
class Scorer {
 public:
  Scorer(const DetectorBundle& b, const Schema& full) : b_(b) {
    for (const auto& c : b.schema.columns) from_full_.push_back(full.require(c));
    for (const auto& c : schema36().columns) idx36_.push_back(b.schema.require(c));
    for (const auto& c : rule2_columns()) idx2_.push_back(b.schema.require(c));
  }

  std::vector<double> scale(std::span<const double> full) const {
    std::vector<double> v(from_full_.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double x = full[from_full_[i]];
      v[i] = std::isnan(x) ? 0.0 : x;
    }
    return apply_minmax(b_.scaler, v);
  }

  std::vector<double> x36(const std::vector<double>& scaled) const { return pick(scaled, idx36_); }
  std::vector<double> x2(const std::vector<double>& scaled) const { return pick(scaled, idx2_); }

  Scores score(std::span<const double> full) const {
    const auto s = scale(full);
    const auto a = x36(s), c = x2(s);
    return {predict_proba(b_.model, a), evaluate_rules(b_.rules36, a).p_enc, evaluate_rules(b_.rules2, c).p_enc};
  }

  const DetectorBundle& bundle() const { return b_; }

 private:
  static std::vector<double> pick(const std::vector<double>& v, const std::vector<std::size_t>& idx) {
    std::vector<double> o(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) o[i] = v[idx[i]];
    return o;
  }

  const DetectorBundle& b_;
  std::vector<std::size_t> from_full_, idx36_, idx2_;
};

/// Held-out quality of the boosted model on the scaled test split.
inline ClassificationMetrics heldout_metrics(const DetectorBundle& b, const Prepared& p, double tau = 0.5) {
  const auto t = p.test.select(schema36());
  std::vector<double> s;
  for (const auto& r : t.rows) s.push_back(predict_proba(b.model, r));
  const auto y = t.y();
  return classification_metrics(s, y, tau);
}

// ---------------------------------------------------------------------------
// detection

inline bool is_gated_write(const TraceEvent& e) {
  return e.kind != EventKind::Exit &&
         (e.symbol == "ksys_write" || e.symbol == "vfs_write" || e.symbol == "filemap_page_mkwrite");
}

/// Cumulative write bytes at time t, linear between the enclosing samples.
inline double write_bytes_at(const std::vector<ResourceSample>& S, double t) {
  if (S.empty()) return 0.0;
  if (t <= S.front().timestamp_us) return S.front().write_bytes;
  if (t >= S.back().timestamp_us) return S.back().write_bytes;
  auto hi = std::upper_bound(S.begin(), S.end(), t, [](double v, const ResourceSample& s) { return v < s.timestamp_us; });
  auto lo = std::prev(hi);
  const double span = hi->timestamp_us - lo->timestamp_us;
  const double f = span > 0 ? (t - lo->timestamp_us) / span : 1.0;
  return lo->write_bytes + f * (hi->write_bytes - lo->write_bytes);
}

/// The window truncated at time c, with its resource view recomputed.
inline Window prefix_window(const TraceSession& s, const Window& w, double c) {
  Window p = w;
  p.end_us = c;
  p.events.clear();
  for (auto i : w.events) {
    if (s.events[i].timestamp_us <= c) p.events.push_back(i);
  }
  p.missing_samples = false;
  fill_resource_view(s.samples, p);
  return p;
}

inline Context context_of(const SessionMeta& m) { return {m.user, m.binary, m.target_path, m.file_type}; }

struct WindowOutcome {
  DecisionRecord record;
  std::optional<EdgeRecord> edge;
  double rule_eval_ns = 0.0;
  double model_predict_ns = 0.0;
};

struct SessionOutcome {
  std::vector<WindowOutcome> windows;
  std::vector<AuditRecord> audit;
};

namespace detail {

/// First checkpoint in (start, end] whose prefix satisfies `blocks`, else end.
template <class Pred>
double first_block_time(const FeaturizedSession& f, const Window& w, const Schema& full, double step, Pred blocks,
                        std::map<double, Scores>& cache, const Scorer& sc) {
  for (double c = w.start_us + step; c < w.end_us + step; c += step) {
    const double t = std::min(c, w.end_us);
    auto it = cache.find(t);
    if (it == cache.end()) {
      const auto p = prefix_window(f.session, w, t);
      auto v = extract_raw(f.session, p, full).values;
      mark_missing(p, v);
      it = cache.emplace(t, sc.score(v)).first;
    }
    if (blocks(it->second)) return t;
    if (t >= w.end_us) break;
  }
  return w.end_us;
}

inline std::int64_t us(double t) { return static_cast<std::int64_t>(std::llround(t)); }

}  // namespace detail

/// Scores every window of one session, simulates the gated writes against
/// the CIL module and records the boolean transitions.
inline SessionOutcome detect_session(const FeaturizedSession& f, const Scorer& sc, const Schema& full,
                                     const PipelineConfig& cfg, const CilEvaluator& cil) {
  SessionOutcome out;
  const auto& meta = f.session.meta;
  const Context ctx = context_of(meta);
  const bool wl = whitelisted(cfg.policy, ctx);
  const double session_start = f.windows.empty() ? 0.0 : f.windows.front().start_us;
  BooleanState state;

  struct Ev {
    double t;
    int order;  // 0 verdict transition, 1 access attempt
    std::function<void()> run;
  };
  std::vector<Ev> evs;

  for (std::size_t k = 0; k < f.windows.size(); ++k) {
    const auto& w = f.windows[k];
    const auto& raw = f.raw[k];
    WindowOutcome wo;
    auto& r = wo.record;

    const auto scaled = sc.scale(raw);
    const auto a = sc.x36(scaled);
    const auto t0 = std::chrono::steady_clock::now();
    const double pm = predict_proba(sc.bundle().model, a);
    const auto t1 = std::chrono::steady_clock::now();
    const auto re = evaluate_rules(sc.bundle().rules36, a);
    wo.model_predict_ns = static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
    wo.rule_eval_ns = re.eval_ns;
    const Scores full_s{pm, re.p_enc, evaluate_rules(sc.bundle().rules2, sc.x2(scaled)).p_enc};

    double first_write = w.start_us;
    for (auto i : w.events) {
      if (is_gated_write(f.session.events[i])) {
        first_write = f.session.events[i].timestamp_us;
        break;
      }
    }

    Verdict rv = decide(full_s.p_rule, ctx, cfg.policy, Source::Rule);
    Verdict mv = decide(full_s.p_model, ctx, cfg.policy, Source::Model);
    std::map<double, Scores> cache;
    auto when = [&](const Verdict& v, auto pick) {
      if (!v.blocks()) return w.end_us;
      return detail::first_block_time(
          f, w, full, cfg.checkpoint_us,
          [&](const Scores& s) { return decide(pick(s), ctx, cfg.policy).blocks(); }, cache, sc);
    };
    const double rt = when(rv, [](const Scores& s) { return s.p_rule; });
    const double mt = when(mv, [](const Scores& s) { return s.p_model; });
    rv.latency_us = std::max(0.0, rt - first_write);
    mv.latency_us = std::max(0.0, mt - first_write);
    rv.bytes_seen = static_cast<std::uint64_t>(write_bytes_at(f.session.samples, rt));
    mv.bytes_seen = static_cast<std::uint64_t>(write_bytes_at(f.session.samples, mt));
    const Verdict ov = two_layer(rv, mv);
    double ot = std::max(rt, mt);
    if (ov.blocks()) {
      ot = std::numeric_limits<double>::infinity();
      if (rv.blocks()) ot = std::min(ot, rt);
      if (mv.blocks()) ot = std::min(ot, mt);
    }

    r.session_id = f.session.session_id;
    r.profile = meta.profile;
    r.kind = meta.workload_kind;
    r.window = w.index;
    r.start_us = w.start_us;
    r.end_us = w.end_us;
    r.label = w.label ? std::string(to_string(*w.label)) : "unlabeled";
    r.user = ctx.user;
    r.app = ctx.app;
    r.path = ctx.path;
    r.file_type = ctx.file_type;
    r.whitelisted = wl;
    r.p_rule2 = full_s.p_rule2;
    r.p_rule = full_s.p_rule;
    r.p_model = full_s.p_model;
    r.rule_decision = std::string(to_string(rv.decision));
    r.model_decision = std::string(to_string(mv.decision));
    r.or_decision = std::string(to_string(ov.decision));
    r.or_source = std::string(to_string(ov.decision == Decision::Block ? ov.source
                                        : wl                          ? Source::Whitelist
                                                                      : ov.source));
    r.session_start_us = session_start;
    r.first_write_us = first_write;
    r.rule_verdict_us = rt;
    r.model_verdict_us = mt;
    r.or_verdict_us = ot;
    r.rule_bytes = static_cast<double>(rv.bytes_seen);
    r.model_bytes = static_cast<double>(mv.bytes_seen);
    r.or_bytes = write_bytes_at(f.session.samples, ot);

    if (meta.edge_case) {
      EdgeRecord e;
      e.session_id = r.session_id;
      e.profile = r.profile;
      e.kind = r.kind;
      e.window = r.window;
      e.label = r.label;
      e.p_e2 = full_s.p_rule2;
      e.p_e36 = full_s.p_rule;
      e.session_start_us = session_start;
      const double tau = cfg.edge_threshold;
      if (e.p_e2 >= tau) {
        e.e2_block_us = detail::first_block_time(
            f, w, full, cfg.checkpoint_us, [&](const Scores& s) { return s.p_rule2 >= tau; }, cache, sc);
      }
      if (e.p_e36 >= tau) {
        e.e36_block_us = detail::first_block_time(
            f, w, full, cfg.checkpoint_us, [&](const Scores& s) { return s.p_rule >= tau; }, cache, sc);
      }
      wo.edge = e;
    }

    // enforcement events for this window
    const std::string vid = r.session_id + "#" + std::to_string(w.index);
    const std::string type = ctx.file_type;
    auto attempt = [&out, &state, &cil, &ctx, wl, type](double t, const std::string& id) {
      return [&out, &state, &cil, ctx, wl, type, t, id] {
        out.audit.push_back(simulate_access(state, cil, "encryption_t", type, Op::Write, ctx, wl, detail::us(t), id));
      };
    };
    evs.push_back({first_write, 1, attempt(first_write, vid)});
    evs.push_back({rt, 0, [&state, rv, rt, vid] { apply_verdict(state, rv, detail::us(rt), vid + ":rule"); }});
    evs.push_back({mt, 0, [&state, mv, mt, vid] { apply_verdict(state, mv, detail::us(mt), vid + ":model"); }});
    if (ov.blocks()) evs.push_back({ot + 1.0, 1, attempt(ot + 1.0, vid + ":retry")});

    out.windows.push_back(std::move(wo));
  }
  std::stable_sort(evs.begin(), evs.end(), [](const Ev& a, const Ev& b) {
    return a.t != b.t ? a.t < b.t : a.order < b.order;
  });
  for (auto& e : evs) e.run();
  return out;
}

inline CilConfig pipeline_cil_config() {
  CilConfig c;
  c.scoped_types = {"public_content_t"};
  c.app_scoped_allow = true;
  return c;
}

struct DetectionResult {
  std::vector<DecisionRecord> decisions;
  std::vector<EdgeRecord> edges;
  std::vector<AuditRecord> audit;  // stable-sorted by timestamp
  std::vector<double> rule_eval_ns, model_predict_ns;
};

inline DetectionResult detect(const std::vector<FeaturizedSession>& sessions, const DetectorBundle& b,
                              const Schema& full, const PipelineConfig& cfg) {
  const Scorer sc(b, full);
  const CilEvaluator cil(emit_cil(pipeline_cil_config()));
  std::vector<SessionOutcome> per(sessions.size());
  detail::parallel_for(sessions.size(), cfg.threads,
                       [&](std::size_t i) { per[i] = detect_session(sessions[i], sc, full, cfg, cil); });
  DetectionResult r;
  for (auto& so : per) {
    for (auto& wo : so.windows) {
      r.decisions.push_back(wo.record);
      if (wo.edge) r.edges.push_back(*wo.edge);
      r.rule_eval_ns.push_back(wo.rule_eval_ns);
      r.model_predict_ns.push_back(wo.model_predict_ns);
    }
    r.audit.insert(r.audit.end(), so.audit.begin(), so.audit.end());
  }
  std::stable_sort(r.audit.begin(), r.audit.end(),
                   [](const AuditRecord& a, const AuditRecord& c) { return a.ts_us < c.ts_us; });
  return r;
}

// ---------------------------------------------------------------------------
// end-to-end run

struct TrainingResult {
  DesignMatrix matrix;
  Prepared prepared;
  DetectorBundle bundle;
  ClassificationMetrics heldout;
};

inline TrainingResult train_on_corpus(const Manifest& manifest, const SymbolKeyList& keys, const PipelineConfig& cfg) {
  const Schema full = raw_schema(keys);
  auto sessions = corpus(manifest.profiles, manifest.repetitions, cfg.seed, 0);
  for (auto& s : sessions) s = apply_capture_cap(std::move(s), manifest.capture_cap_bytes);
  TrainingResult t;
  t.matrix = design_matrix(featurize_all(sessions, keys, full, cfg.interval_us, cfg.threads), full);
  t.prepared = prepare(t.matrix, cfg.seed);
  t.bundle = train_detectors(t.prepared, cfg);
  t.heldout = heldout_metrics(t.bundle, t.prepared);
  return t;
}

/// Fresh draws of every manifest profile for detection.
inline std::vector<FeaturizedSession> evaluation_sessions(const Manifest& manifest, const SymbolKeyList& keys,
                                                          const PipelineConfig& cfg) {
  auto sessions = corpus(manifest.profiles, cfg.eval_reps, cfg.seed, cfg.eval_first_rep);
  return featurize_all(sessions, keys, raw_schema(keys), cfg.interval_us, cfg.threads);
}

inline std::string resources_csv(const std::vector<FeaturizedSession>& sessions) {
  std::ostringstream o;
  o << "session_id,timestamp_us,cpu_percent,rss,vms,read_count,write_count,read_bytes,write_bytes\n";
  for (const auto& f : sessions) {
    for (const auto& s : f.session.samples) {
      o << f.session.session_id << ',' << format_double(s.timestamp_us) << ',' << format_double(s.cpu_percent) << ','
        << format_double(s.rss) << ',' << format_double(s.vms) << ',' << format_double(s.read_count) << ','
        << format_double(s.write_count) << ',' << format_double(s.read_bytes) << ','
        << format_double(s.write_bytes) << '\n';
    }
  }
  return o.str();
}

inline nlohmann::json rule_stats(const RuleSet& rs, std::size_t features) {
  return {{"features", features},
          {"depth_cap", rs.depth_cap},
          {"rules", rs.rules.size()},
          {"predicates", rs.predicate_count()},
          {"columns_used", rs.columns_used()}};
}

/// Run metadata a detection pass can state without knowing how the bundle was trained.
inline nlohmann::json detection_meta(const PipelineConfig& cfg, const DetectorBundle& b, std::size_t eval_windows) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["tau"] = cfg.policy.tau;
  j["interval_us"] = cfg.interval_us;
  j["checkpoint_us"] = cfg.checkpoint_us;
  j["edge_threshold"] = cfg.edge_threshold;
  j["eval_first_rep"] = cfg.eval_first_rep;
  j["eval_reps"] = cfg.eval_reps;
  j["eval_windows"] = eval_windows;
  j["rules"] = {{"E_RULE_2", rule_stats(b.rules2, 2)}, {"E_RULE_36", rule_stats(b.rules36, 36)}};
  return j;
}

inline nlohmann::json run_meta(const PipelineConfig& cfg, const TrainingResult& t, std::size_t eval_windows) {
  nlohmann::json j = detection_meta(cfg, t.bundle, eval_windows);
  j["design"] = {{"rows", t.matrix.size()},
                 {"raw_columns", t.matrix.schema.size()},
                 {"kept_columns", t.prepared.schema.size()},
                 {"dropped_columns", t.prepared.missing.dropped_columns},
                 {"dropped_rows", t.prepared.missing.dropped_rows},
                 {"train_before_cleaning", t.prepared.train_before_cleaning},
                 {"outliers_removed", t.prepared.outliers_removed},
                 {"train_balanced", t.prepared.train.size()},
                 {"val", t.prepared.val.size()},
                 {"test", t.prepared.test.size()}};
  j["heldout"] = {{"macro_f1", t.heldout.macro_f1},
                  {"roc_auc", t.heldout.roc_auc},
                  {"precision", t.heldout.precision},
                  {"recall", t.heldout.recall},
                  {"windows", t.heldout.counts.total()}};
  return j;
}

struct RunResult {
  TrainingResult training;
  DetectionResult detection;
  ReportFiles report;
};

namespace detail {

inline void put_file(const std::filesystem::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + p.string());
  out << body;
}

}  // namespace detail

/// Writes decisions, audit, resources, edge cases and `meta` into `out`.
/// `timing.csv` holds measured evaluator costs and is not read by `report`.
inline void write_detection(const std::filesystem::path& out, const DetectionResult& d,
                            const std::vector<FeaturizedSession>& eval, const nlohmann::json& meta) {
  std::filesystem::create_directories(out);
  detail::put_file(out / "decisions.csv", write_decisions_csv(d.decisions));
  detail::put_file(out / "edge_cases.csv", write_edge_csv(d.edges));
  detail::put_file(out / "resources.csv", resources_csv(eval));
  detail::put_file(out / "meta.json", meta.dump(2) + "\n");
  {
    std::ostringstream a;
    write_audit(d.audit, a);
    detail::put_file(out / "audit.csv", a.str());
  }
  {
    std::ostringstream tm;
    tm << "evaluator,samples,p50_ns,p95_ns\n";
    tm << "rule_e36," << d.rule_eval_ns.size() << ',' << percentile_nearest_rank(d.rule_eval_ns, 50) << ','
       << percentile_nearest_rank(d.rule_eval_ns, 95) << '\n';
    tm << "model," << d.model_predict_ns.size() << ',' << percentile_nearest_rank(d.model_predict_ns, 50) << ','
       << percentile_nearest_rank(d.model_predict_ns, 95) << '\n';
    detail::put_file(out / "timing.csv", tm.str());
  }
}

/// Detection outputs plus the trained bundle under `model/`.
inline void write_run(const std::filesystem::path& out, const PipelineConfig& cfg, const TrainingResult& t,
                      const DetectionResult& d, const std::vector<FeaturizedSession>& eval) {
  write_detection(out, d, eval, run_meta(cfg, t, d.decisions.size()));
  save_bundle(t.bundle, out / "model");
}

inline RunResult run_pipeline(const Manifest& manifest, const SymbolKeyList& keys, const PipelineConfig& cfg,
                              const std::filesystem::path& out) {
  RunResult r;
  r.training = train_on_corpus(manifest, keys, cfg);
  const auto eval = evaluation_sessions(manifest, keys, cfg);
  r.detection = detect(eval, r.training.bundle, raw_schema(keys), cfg);
  write_run(out, cfg, r.training, r.detection, eval);
  r.report = report(out);
  return r;
}

}  // namespace encguard
