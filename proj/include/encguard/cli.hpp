// Copyright 2026 The encguard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Subcommand front end. Each command reads files, writes files, and returns
// an exit code; `run_subcommand` never lets an exception escape.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "encguard/pipeline.hpp"
#include "encguard/selection.hpp"

namespace encguard {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitInternal = 4;

/// Relative `--out` paths resolve under this directory when it is set.
inline constexpr const char* kOutputRootEnv = "ENCGUARD_OUTPUT_ROOT";

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> v = {"ingest", "featurize", "select",   "train",    "extract-rules",
                                             "detect", "emit-cil",  "simulate", "evaluate", "sweep"};
  return v;
}

inline int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::UnknownCommand:
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidPolicy:
    case ErrorCode::InvalidProfile:
    case ErrorCode::InvalidProbability:
    case ErrorCode::InvalidRange:
    case ErrorCode::UnknownType:
    case ErrorCode::UnparsableKeyFile:
    case ErrorCode::EmptySymbolList:
      return kExitConfig;
    case ErrorCode::ModelUnfit:
      return kExitInternal;
    default:
      return kExitData;
  }
}

/// Fields of every subcommand; unused ones keep their defaults.
struct RunConfig {
  std::string keys = std::string(ENCGUARD_DATA_DIR) + "/ftrace_keys.json";
  std::string manifest = std::string(ENCGUARD_DATA_DIR) + "/manifest.yaml";
  std::string policy;
  std::string model;
  std::vector<std::string> in;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<double> tau;
  double window_ms = kDefaultIntervalUs / 1000.0;
  bool strict = false;
  // simulate
  std::optional<int> reps;
  int first_rep = 0;
  // ingest
  double cap_mib = 0;
  // select
  std::size_t trees = 100;
  std::size_t perm_reps = 5;
  // train / extract-rules
  int rule_depth = 2;
  // sweep
  std::vector<double> taus = {0.30, 0.50, 0.70};
  // emit-cil
  std::vector<std::string> scoped_types, temporary_types;
  bool app_scoped_allow = false;
  unsigned threads = 0;
};

namespace cli {

namespace fs = std::filesystem;

inline fs::path out_path(const std::string& out) {
  if (out.empty()) throw Error(ErrorCode::ConfigError, "--out is required");
  fs::path p(out);
  if (const char* root = std::getenv(kOutputRootEnv); root && *root && p.is_relative()) p = fs::path(root) / p;
  return p;
}

inline void require_file(const std::string& path, const char* flag) {
  if (path.empty()) throw Error(ErrorCode::ConfigError, std::string(flag) + " is required");
  if (!fs::exists(path)) throw Error(ErrorCode::ConfigError, std::string(flag) + " path does not exist: " + path);
}

inline std::string single_in(const RunConfig& c) {
  if (c.in.size() != 1) throw Error(ErrorCode::ConfigError, "expected exactly one --in");
  require_file(c.in.front(), "--in");
  return c.in.front();
}

inline std::uint64_t require_seed(const RunConfig& c) {
  if (!c.seed) throw Error(ErrorCode::ConfigError, "--seed is required for this command");
  return *c.seed;
}

/// A directory holding session bundles, directly or under `sessions/`.
inline fs::path sessions_dir(const fs::path& p) {
  return fs::is_directory(p / "sessions") ? p / "sessions" : p;
}

/// A design matrix file, or a directory holding `design.csv`.
inline fs::path design_file(const fs::path& p) { return fs::is_directory(p) ? p / "design.csv" : p; }

inline PipelineConfig pipeline_config(const RunConfig& c) {
  PipelineConfig cfg;
  if (c.seed) cfg.seed = *c.seed;
  if (!(c.window_ms > 0)) throw Error(ErrorCode::ConfigError, "--window-ms must be positive");
  cfg.interval_us = c.window_ms * 1000.0;
  cfg.rule_depth = c.rule_depth;
  cfg.threads = c.threads;
  if (!c.policy.empty()) {
    require_file(c.policy, "--policy");
    cfg.policy = load_policy(c.policy);
  }
  if (c.tau) {
    if (!(*c.tau > 0.0 && *c.tau < 1.0)) throw Error(ErrorCode::ConfigError, "--tau must lie in (0, 1)");
    cfg.policy.tau = *c.tau;
  }
  return cfg;
}

inline SymbolKeyList keys_of(const RunConfig& c) {
  require_file(c.keys, "--keys");
  return load_symbol_keys(read_text_file(c.keys));
}

inline std::vector<TraceSession> read_sessions(const fs::path& dir, bool strict) {
  ParseOptions o;
  o.strict = strict;
  std::vector<TraceSession> out;
  for (const auto& id : list_session_bundles(dir)) out.push_back(read_session_bundle(dir, id, o));
  if (out.empty()) throw Error(ErrorCode::EmptySession, "no session bundles in " + dir.string());
  return out;
}

inline std::string session_index(const std::vector<TraceSession>& sessions) {
  std::ostringstream o;
  o << "session_id,profile,kind,label,binary,user,events,samples\n";
  for (const auto& s : sessions) {
    o << s.session_id << ',' << s.meta.profile << ',' << s.meta.workload_kind << ','
      << (s.meta.label ? to_string(*s.meta.label) : std::string_view{}) << ',' << s.meta.binary << ',' << s.meta.user
      << ',' << s.events.size() << ',' << s.samples.size() << '\n';
  }
  return o.str();
}

inline void write_sessions(const fs::path& out, const std::vector<TraceSession>& sessions) {
  fs::create_directories(out / "sessions");
  for (const auto& s : sessions) write_session_bundle(out / "sessions", s);
  detail::put_file(out / "sessions.csv", session_index(sessions));
}

inline std::string rule_text(const RuleSet& rs) {
  std::ostringstream o;
  o << to_string(rs.scope) << " (depth cap " << rs.depth_cap << ")\n";
  for (const auto& r : rs.rules) {
    o << "  IF ";
    for (std::size_t i = 0; i < r.predicates.size(); ++i) {
      const auto& p = r.predicates[i];
      o << (i ? " AND " : "") << p.column << (p.le ? " <= " : " > ") << detail::fmt(p.threshold);
    }
    if (r.predicates.empty()) o << "true";
    o << " THEN " << to_string(r.predicted) << " (p_enc " << detail::fmt_fixed(r.p_enc, 4) << ")\n";
  }
  return o.str();
}

inline std::string json_line(const nlohmann::json& j) { return j.dump(); }

// ---------------------------------------------------------------------------
// commands; each returns the one-line JSON summary printed on success

inline nlohmann::json cmd_simulate(const RunConfig& c) {
  const auto seed = require_seed(c);
  require_file(c.manifest, "--manifest");
  const auto m = load_manifest(c.manifest);
  const int reps = c.reps.value_or(m.repetitions);
  if (reps < 1) throw Error(ErrorCode::ConfigError, "--reps must be at least 1");
  const auto out = out_path(c.out);
  const auto sessions = corpus(m.profiles, reps, seed, c.first_rep);
  write_sessions(out, sessions);
  return {{"sessions", sessions.size()}, {"out", out.string()}};
}

inline nlohmann::json cmd_ingest(const RunConfig& c) {
  const auto in = sessions_dir(single_in(c));
  const auto out = out_path(c.out);
  auto sessions = read_sessions(in, c.strict);
  if (c.cap_mib < 0) throw Error(ErrorCode::ConfigError, "--cap-mib must be non-negative");
  if (c.cap_mib > 0) {
    const auto cap = static_cast<std::uint64_t>(c.cap_mib * 1024.0 * 1024.0);
    for (auto& s : sessions) s = apply_capture_cap(std::move(s), cap);
  }
  write_sessions(out, sessions);
  return {{"sessions", sessions.size()}, {"out", out.string()}};
}

inline nlohmann::json cmd_featurize(const RunConfig& c) {
  const auto in = sessions_dir(single_in(c));
  const auto keys = keys_of(c);
  const auto cfg = pipeline_config(c);
  const auto out = out_path(c.out);
  const Schema full = raw_schema(keys);
  const auto m = design_matrix(featurize_all(read_sessions(in, c.strict), keys, full, cfg.interval_us, cfg.threads), full);
  fs::create_directories(out);
  detail::put_file(out / "design.csv", write_design_csv(m));
  detail::put_file(out / "schema.json", dump_schema_json(full, schema36()));
  return {{"rows", m.size()}, {"columns", m.schema.size()}, {"out", out.string()}};
}

inline nlohmann::json cmd_select(const RunConfig& c) {
  const auto seed = require_seed(c);
  const auto in = design_file(single_in(c));
  const auto out = out_path(c.out);
  const auto p = prepare(read_design_csv(read_text_file(in)), seed);
  const auto y = p.train.y();
  std::vector<std::string> groups;
  for (const auto& r : p.train.meta) groups.push_back(r.session_id);

  TrackAOptions a;
  a.n_trees = c.trees;
  a.n_rep = c.perm_reps;
  a.curve.n_trees = c.trees;
  a.curve.max_k = std::min<std::size_t>(36, p.schema.size());
  a.seed = seed;
  auto [track_a, ranking] = run_track_a(p.train.rows, y, p.schema.columns, groups, a);
  TrackBOptions b;
  b.wrapper.n_trees = c.trees;
  b.wrapper.seed = seed;
  b.wrapper.k_max = std::min<std::size_t>(36, p.schema.size());
  auto track_b = run_track_b(p.train.rows, y, p.schema.columns, groups, ranking.names(), b);

  fs::create_directories(out);
  detail::put_file(out / "selection_a.json", selection_to_json(track_a).dump(2) + "\n");
  detail::put_file(out / "selection_b.json", selection_to_json(track_b).dump(2) + "\n");
  std::ostringstream imp;
  imp << "rank,column,importance\n";
  for (std::size_t i = 0; i < ranking.entries.size(); ++i) {
    imp << i + 1 << ',' << ranking.entries[i].first << ',' << detail::fmt(ranking.entries[i].second) << '\n';
  }
  detail::put_file(out / "importance.csv", imp.str());
  return {{"track_a_k", track_a.chosen_k}, {"track_b_k", track_b.chosen_k}, {"out", out.string()}};
}

inline nlohmann::json cmd_train(const RunConfig& c) {
  auto cfg = pipeline_config(c);
  cfg.seed = require_seed(c);
  const auto in = design_file(single_in(c));
  const auto out = out_path(c.out);
  TrainingResult t;
  t.matrix = read_design_csv(read_text_file(in));
  t.prepared = prepare(t.matrix, cfg.seed);
  t.bundle = train_detectors(t.prepared, cfg);
  t.heldout = heldout_metrics(t.bundle, t.prepared, cfg.policy.tau);
  save_bundle(t.bundle, out / "model");
  auto meta = run_meta(cfg, t, 0);
  meta.erase("eval_windows");
  meta.erase("eval_first_rep");
  meta.erase("eval_reps");
  detail::put_file(out / "train.json", meta.dump(2) + "\n");
  return {{"heldout_macro_f1", t.heldout.macro_f1}, {"out", out.string()}};
}

inline nlohmann::json cmd_extract_rules(const RunConfig& c) {
  require_file(c.model, "--model");
  const auto out = out_path(c.out);
  const auto b = load_bundle(c.model);
  const auto r2 = extract_rules(b.tree2, RuleScope::ERule2, c.rule_depth);
  const auto r36 = extract_rules(b.tree36, RuleScope::ERule36, c.rule_depth);
  fs::create_directories(out);
  detail::put_file(out / "rules_e2.json", rules_to_json(r2).dump(2) + "\n");
  detail::put_file(out / "rules_e36.json", rules_to_json(r36).dump(2) + "\n");
  detail::put_file(out / "rules.txt", rule_text(r2) + rule_text(r36));
  return {{"rules_e2", r2.rules.size()}, {"rules_e36", r36.rules.size()}, {"out", out.string()}};
}

inline nlohmann::json cmd_detect(const RunConfig& c) {
  const auto cfg = pipeline_config(c);
  const auto in = sessions_dir(single_in(c));
  require_file(c.model, "--model");
  const auto keys = keys_of(c);
  const auto out = out_path(c.out);
  const auto bundle = load_bundle(c.model);
  const Schema full = raw_schema(keys);
  if (bundle.schema != full) throw Error(ErrorCode::SchemaMismatch, "model schema differs from --keys schema");
  const auto eval = featurize_all(read_sessions(in, c.strict), keys, full, cfg.interval_us, cfg.threads);
  const auto d = detect(eval, bundle, full, cfg);
  auto meta = detection_meta(cfg, bundle, d.decisions.size());
  meta.erase("eval_first_rep");
  meta.erase("eval_reps");
  write_detection(out, d, eval, meta);
  return {{"windows", d.decisions.size()}, {"out", out.string()}};
}

inline nlohmann::json cmd_emit_cil(const RunConfig& c) {
  // the policy decides whitelisting in user space; it is validated here so a
  // broken file fails before a module is installed next to it
  if (!c.policy.empty()) {
    require_file(c.policy, "--policy");
    load_policy(c.policy);
  }
  const auto out = out_path(c.out);
  CilConfig cfg;
  cfg.scoped_types = c.scoped_types;
  cfg.temporary_types = c.temporary_types;
  cfg.app_scoped_allow = c.app_scoped_allow;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  detail::put_file(out, emit_cil(cfg).text);
  return {{"out", out.string()}};
}

inline nlohmann::json cmd_evaluate(const RunConfig& c) {
  if (c.in.empty()) throw Error(ErrorCode::ConfigError, "--in is required");
  for (const auto& d : c.in) require_file(d, "--in");
  if (c.in.size() == 1) {
    auto files = report(c.in.front());
    return {{"tables", files.tables.size()}, {"out", c.in.front()}};
  }
  const auto out = out_path(c.out);
  std::vector<fs::path> dirs;
  for (const auto& d : c.in) {
    report(d);
    dirs.emplace_back(d);
  }
  auto written = median_of_runs(dirs, out);
  return {{"runs", dirs.size()}, {"tables", written.size()}, {"out", out.string()}};
}

inline nlohmann::json cmd_sweep(const RunConfig& c) {
  const fs::path run = single_in(c);
  for (double t : c.taus) {
    if (!(t > 0.0 && t < 1.0)) throw Error(ErrorCode::ConfigError, "--taus values must lie in (0, 1)");
  }
  if (c.taus.empty()) throw Error(ErrorCode::ConfigError, "--taus is empty");
  const fs::path dpath = run / "decisions.csv";
  if (!fs::exists(dpath)) throw Error(ErrorCode::NoRunData, "no decisions.csv in " + run.string());
  const auto sweep = model_sweep(read_decisions_csv(read_text_file(dpath)), c.taus);
  const auto out = c.out.empty() ? run / "tables" / "tau_sweep.csv" : out_path(c.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  detail::put_file(out, sweep_table(sweep).str());
  return {{"rows", sweep.rows.size()}, {"out", out.string()}};
}

}  // namespace cli

/// Parses `argv`, runs one subcommand, prints a JSON summary line on stdout
/// or a JSON error line on stderr, and returns the exit code.
inline int run_subcommand(int argc, const char* const* argv, std::ostream& out = std::cout,
                          std::ostream& err = std::cerr) {
  auto fail = [&](ErrorCode code, const std::string& msg) {
    const int rc = exit_code_for(code);
    err << cli::json_line({{"error", std::string(to_string(code))}, {"exit", rc}, {"message", msg}}) << '\n';
    return rc;
  };
  if (argc < 2) return fail(ErrorCode::UnknownCommand, "missing subcommand; expected one of ingest, featurize, "
                                                       "select, train, extract-rules, detect, emit-cil, simulate, "
                                                       "evaluate, sweep");
  const std::string name = argv[1];
  const auto& known = subcommands();
  if (name != "--help" && name != "-h" && std::find(known.begin(), known.end(), name) == known.end()) {
    return fail(ErrorCode::UnknownCommand, "unknown subcommand '" + name + "'");
  }

  RunConfig c;
  CLI::App app{"encguard: encryption-behavior detection and enforcement toolkit", "encguard"};
  app.require_subcommand(1);
  auto common = [&](CLI::App* s) {
    s->add_option("--out", c.out, "output path");
    s->add_option("--threads", c.threads, "worker threads (0: hardware concurrency)");
  };
  auto with_seed = [&](CLI::App* s) { s->add_option("--seed", c.seed, "corpus / split seed"); };
  auto with_in = [&](CLI::App* s, const char* what) { s->add_option("--in", c.in, what); };

  auto* sim = app.add_subcommand("simulate", "generate a labeled synthetic corpus as session bundles");
  with_seed(sim);
  sim->add_option("--manifest", c.manifest, "workload manifest (YAML)");
  sim->add_option("--reps", c.reps, "repetitions per profile (default: manifest)");
  sim->add_option("--first-rep", c.first_rep, "first repetition index");
  common(sim);

  auto* ing = app.add_subcommand("ingest", "parse and normalize session bundles");
  with_in(ing, "directory of session bundles");
  ing->add_flag("--strict", c.strict, "reject malformed lines instead of skipping them");
  ing->add_option("--cap-mib", c.cap_mib, "truncate sessions after this many written MiB (0: off)");
  common(ing);

  auto* fea = app.add_subcommand("featurize", "window sessions and build the design matrix");
  with_in(fea, "directory of session bundles");
  fea->add_option("--keys", c.keys, "symbol key list (JSON)");
  fea->add_option("--window-ms", c.window_ms, "window length in milliseconds");
  fea->add_flag("--strict", c.strict, "strict trace parsing");
  common(fea);

  auto* sel = app.add_subcommand("select", "run both feature-selection tracks");
  with_in(sel, "design.csv or its directory");
  with_seed(sel);
  sel->add_option("--trees", c.trees, "forest size for ranking and curves");
  sel->add_option("--perm-reps", c.perm_reps, "permutation repeats per column");
  common(sel);

  auto* trn = app.add_subcommand("train", "fit the model and both rule trees");
  with_in(trn, "design.csv or its directory");
  with_seed(trn);
  trn->add_option("--tau", c.tau, "decision threshold for held-out metrics");
  trn->add_option("--rule-depth", c.rule_depth, "rule tree depth cap");
  trn->add_option("--policy", c.policy, "risk policy (JSON)");
  common(trn);

  auto* ext = app.add_subcommand("extract-rules", "re-extract rule sets from trained trees");
  ext->add_option("--model", c.model, "model bundle directory");
  ext->add_option("--rule-depth", c.rule_depth, "rule depth cap");
  common(ext);

  auto* det = app.add_subcommand("detect", "score sessions and replay verdicts through enforcement");
  with_in(det, "directory of session bundles");
  det->add_option("--model", c.model, "model bundle directory");
  det->add_option("--keys", c.keys, "symbol key list (JSON)");
  det->add_option("--policy", c.policy, "risk policy (JSON)");
  det->add_option("--tau", c.tau, "decision threshold override");
  det->add_option("--window-ms", c.window_ms, "window length in milliseconds");
  det->add_flag("--strict", c.strict, "strict trace parsing");
  with_seed(det);
  common(det);

  auto* cil = app.add_subcommand("emit-cil", "write the CIL enforcement module");
  cil->add_option("--policy", c.policy, "risk policy (JSON), validated only");
  cil->add_option("--scoped-type", c.scoped_types, "extra gated user file type");
  cil->add_option("--temporary-type", c.temporary_types, "ungated temporary file type");
  cil->add_flag("--app-scoped-allow", c.app_scoped_allow, "allow writes for whitelisted-app subjects");
  common(cil);

  auto* eva = app.add_subcommand("evaluate", "regenerate report tables; several --in give their median");
  with_in(eva, "run directory (repeatable)");
  common(eva);

  auto* swp = app.add_subcommand("sweep", "threshold sweep over a run's model scores");
  with_in(swp, "run directory");
  swp->add_option("--taus", c.taus, "thresholds")->delimiter(',');
  common(swp);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    return fail(ErrorCode::ConfigError, e.what());
  }

  try {
    nlohmann::json summary;
    if (*sim) summary = cli::cmd_simulate(c);
    else if (*ing) summary = cli::cmd_ingest(c);
    else if (*fea) summary = cli::cmd_featurize(c);
    else if (*sel) summary = cli::cmd_select(c);
    else if (*trn) summary = cli::cmd_train(c);
    else if (*ext) summary = cli::cmd_extract_rules(c);
    else if (*det) summary = cli::cmd_detect(c);
    else if (*cil) summary = cli::cmd_emit_cil(c);
    else if (*eva) summary = cli::cmd_evaluate(c);
    else summary = cli::cmd_sweep(c);
    summary["command"] = name;
    out << cli::json_line(summary) << '\n';
    return kExitOk;
  } catch (const Error& e) {
    return fail(e.code(), e.what());
  } catch (const YAML::Exception& e) {
    return fail(ErrorCode::ConfigError, e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(ErrorCode::MalformedLine, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(ErrorCode::Io, e.what());
  } catch (const std::exception& e) {
    err << cli::json_line({{"error", "Internal"}, {"exit", kExitInternal}, {"message", e.what()}}) << '\n';
    return kExitInternal;
  }
}

}  // namespace encguard
