// Copyright 2026 The encguard Authors
// SPDX-License-Identifier: Apache-2.0

// Windowing, raw feature extraction, and the matrix-level cleaning pipeline:
// missing-data rule, MinMax scaling, PCA outlier removal, session-level
// down-sampling and the stratified 80/10/10 split.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "encguard/callgraph.hpp"
#include "encguard/error.hpp"
#include "encguard/metrics.hpp"
#include "encguard/random.hpp"
#include "encguard/trace_ingest.hpp"

namespace encguard {

inline const std::vector<std::string>& resource_columns() {
  static const std::vector<std::string> cols = {"cpu_percent", "rss",         "vms",        "read_count",
                                                "write_count", "read_bytes", "write_bytes"};
  return cols;
}

inline const std::vector<std::string>& graph_columns() {
  static const std::vector<std::string> cols = {"betweenness", "clustering", "avg_shortest_path", "total_duration"};
  return cols;
}

/// The 27 function-level frequency columns shared by both detectors.
inline const std::vector<std::string>& detector_symbols() {
  static const std::vector<std::string> syms = {
      "fsnotify_parent",        "mod_node_page_state",       "wake_up_common",
      "raw_spin_lock_irq",      "raw_spin_trylock",          "attach_entity_load_avg",
      "available_idle_cpu",     "cpus_share_cache",          "dnotify_flush",
      "enter_lazy_tlb",         "fsnotify",                  "kfree",
      "kick_process",           "kmalloc_slab",              "lock_page_memcg",
      "locks_remove_posix",     "lru_add_drain_cpu",         "memcg_check_events",
      "mutex_unlock",           "propagate_protected_usage", "put_cpu_partial",
      "rcu_all_qs",             "rcu_segcblist_accelerate",  "refill_stock",
      "switch_mm_irqs_off",     "vma_interval_tree_augment_rotate", "x2apic_send_IPI"};
  return syms;
}

/// Ordered column names; column order of every vector built against it.
struct Schema {
  std::vector<std::string> columns;

  std::size_t size() const { return columns.size(); }

  std::optional<std::size_t> index_of(std::string_view name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) return std::nullopt;
    return static_cast<std::size_t>(it - columns.begin());
  }

  std::size_t require(std::string_view name) const {
    auto i = index_of(name);
    if (!i) throw Error(ErrorCode::SchemaMismatch, "schema lacks column '" + std::string(name) + "'");
    return *i;
  }

  bool operator==(const Schema&) const = default;
};

inline Schema raw_schema(const SymbolKeyList& keys) {
  Schema s;
  s.columns = resource_columns();
  s.columns.insert(s.columns.end(), graph_columns().begin(), graph_columns().end());
  s.columns.insert(s.columns.end(), keys.symbols.begin(), keys.symbols.end());
  return s;
}

inline Schema schema36() {
  Schema s;
  s.columns = resource_columns();
  s.columns.push_back("betweenness");
  s.columns.push_back("clustering");
  s.columns.insert(s.columns.end(), detector_symbols().begin(), detector_symbols().end());
  return s;
}

inline std::string dump_schema_json(const Schema& raw, const Schema& f36) {
  nlohmann::json j;
  j["raw"] = raw.columns;
  j["f36"] = f36.columns;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// windows

struct Window {
  std::string session_id;
  std::size_t index = 0;
  double start_us = 0.0;
  double end_us = 0.0;
  bool partial = false;
  std::vector<std::size_t> events;  // indices into the session's event list

  // resource view of the interval
  double cpu_percent = 0.0;  // mean over in-window samples
  double rss = 0.0;          // end-of-window level
  double vms = 0.0;
  double rss_delta = 0.0;
  double read_count = 0.0;  // in-window deltas
  double write_count = 0.0;
  double read_bytes = 0.0;
  double write_bytes = 0.0;
  double cumulative_write_bytes = 0.0;  // counter level at window end
  bool missing_samples = false;         // resource view zero-filled

  std::optional<Label> label;
};

inline constexpr double kDefaultIntervalUs = 1e6;

/// Resource view of [w.start_us, w.end_us] from the nearest enclosing
/// samples: end-of-interval levels, counter deltas and mean in-interval CPU.
inline void fill_resource_view(const std::vector<ResourceSample>& S, Window& w) {
  auto level_at = [&](double t) -> const ResourceSample* {
    auto it = std::upper_bound(S.begin(), S.end(), t + 1e-9,
                               [](double v, const ResourceSample& s) { return v < s.timestamp_us; });
    return it == S.begin() ? nullptr : &*std::prev(it);
  };
  const ResourceSample* end = S.empty() ? nullptr : level_at(w.end_us);
  if (!end) {
    w.missing_samples = true;
    return;
  }
  const ResourceSample* start = level_at(w.start_us);
  ResourceSample zero;
  const ResourceSample& a = start ? *start : zero;
  w.missing_samples = false;
  w.rss = end->rss;
  w.vms = end->vms;
  w.rss_delta = end->rss - a.rss;
  w.read_count = end->read_count - a.read_count;
  w.write_count = end->write_count - a.write_count;
  w.read_bytes = end->read_bytes - a.read_bytes;
  w.write_bytes = end->write_bytes - a.write_bytes;
  w.cumulative_write_bytes = end->write_bytes;
  double sum = 0.0;
  int cnt = 0;
  for (const ResourceSample* s = start ? start + 1 : S.data(); s <= end; ++s) {
    if (s->timestamp_us > w.start_us) {
      sum += s->cpu_percent;
      ++cnt;
    }
  }
  w.cpu_percent = cnt > 0 ? sum / cnt : end->cpu_percent;
}

/// Slices a session into consecutive fixed-length windows. A top-level call
/// tree is assigned whole to the window in which its root starts.
inline std::vector<Window> window_session(const TraceSession& session, double interval_us = kDefaultIntervalUs) {
  if (session.events.empty() && session.samples.empty()) {
    throw Error(ErrorCode::EmptySession, "session '" + session.session_id + "' has no events or samples");
  }
  if (!(interval_us > 0.0)) throw Error(ErrorCode::ConfigError, "window interval must be positive");

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& e : session.events) {
    lo = std::min(lo, e.timestamp_us);
    hi = std::max(hi, e.timestamp_us);
  }
  for (const auto& s : session.samples) {
    lo = std::min(lo, s.timestamp_us);
    hi = std::max(hi, s.timestamp_us);
  }
  const double span = hi - lo;
  std::size_t n = static_cast<std::size_t>(std::ceil(span / interval_us - 1e-9));
  if (n == 0) n = 1;

  std::vector<Window> windows(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& w = windows[i];
    w.session_id = session.session_id;
    w.index = i;
    w.start_us = lo + static_cast<double>(i) * interval_us;
    w.end_us = std::min(lo + static_cast<double>(i + 1) * interval_us, hi);
    w.partial = (w.end_us - w.start_us) < interval_us - 1e-9;
  }
  if (n == 1) windows[0].end_us = std::max(hi, lo);

  auto window_of = [&](double t) {
    auto i = static_cast<std::size_t>(std::floor((t - lo) / interval_us));
    return std::min(i, n - 1);
  };

  std::map<std::pair<int, int>, double> root_start;
  for (std::size_t i = 0; i < session.events.size(); ++i) {
    const auto& e = session.events[i];
    auto key = std::make_pair(e.cpu, e.pid);
    if (e.depth == 0 && e.kind != EventKind::Exit) root_start[key] = e.timestamp_us;
    double t = root_start.count(key) ? root_start[key] : e.timestamp_us;
    windows[window_of(t)].events.push_back(i);
  }

  for (auto& w : windows) fill_resource_view(session.samples, w);

  // Ground truth: encrypted windows are those reaching past the onset.
  if (session.meta.label) {
    for (auto& w : windows) {
      if (*session.meta.label == Label::Benign) {
        w.label = Label::Benign;
      } else if (session.meta.onset_us) {
        w.label = (w.end_us > *session.meta.onset_us) ? Label::Encrypted : Label::Benign;
      } else {
        w.label = Label::Encrypted;
      }
    }
  }
  return windows;
}

/// Removes events whose symbol is on the housekeeping list; order is kept.
inline std::vector<TraceEvent> filter_housekeeping(const std::vector<TraceEvent>& events, const SymbolKeyList& keys) {
  if (keys.excluded.empty()) return events;
  std::vector<TraceEvent> out;
  out.reserve(events.size());
  for (const auto& e : events) {
    if (!keys.is_excluded(e.symbol)) out.push_back(e);
  }
  return out;
}

/// Suffixes listed symbols with their caller ("sym@parent") so that one
/// function reached from different execution branches maps to separate
/// columns. Empty shortlist leaves events untouched.
inline std::vector<TraceEvent> contextual_encode(std::vector<TraceEvent> events, const std::set<std::string>& shortlist) {
  if (shortlist.empty()) return events;
  std::map<std::pair<int, int>, std::vector<std::string>> stacks;
  for (auto& e : events) {
    auto& stack = stacks[{e.cpu, e.pid}];
    if (e.kind == EventKind::Exit) {
      if (!stack.empty()) {
        e.symbol = stack.back();
        stack.pop_back();
      }
      continue;
    }
    if (shortlist.count(e.symbol)) {
      e.symbol += "@" + (stack.empty() ? std::string("root") : stack.back().substr(0, stack.back().find('@')));
    }
    if (e.kind == EventKind::Entry) stack.push_back(e.symbol);
  }
  return events;
}

namespace detail {

inline bool is_io_evidence_symbol(std::string_view s) {
  return s.rfind("fsnotify", 0) == 0 || s.rfind("locks_", 0) == 0;
}

}  // namespace detail

/// Keeps windows with evidence of file touches or I/O: fsnotify*/locks_*
/// activity, non-zero read/write deltas, or measurable CPU/RSS growth.
inline std::vector<Window> pid_anchored_filter(const TraceSession& session, std::vector<Window> windows) {
  std::vector<Window> out;
  for (auto& w : windows) {
    bool evidence = w.read_count > 0 || w.write_count > 0 || w.read_bytes > 0 || w.write_bytes > 0 ||
                    w.cpu_percent > 0 || w.rss_delta > 0;
    for (std::size_t i = 0; !evidence && i < w.events.size(); ++i) {
      const auto& e = session.events[w.events[i]];
      evidence = e.kind != EventKind::Exit && detail::is_io_evidence_symbol(e.symbol);
    }
    if (evidence) out.push_back(std::move(w));
  }
  return out;
}

struct RawVector {
  std::vector<double> values;
  const Schema* schema = nullptr;

  double at(std::string_view column) const { return values.at(schema->require(column)); }
};

/// 7 resource columns, 4 graph scalars, then per-symbol invocation counts
/// (entry and leaf events) in key-list order.
inline RawVector extract_raw(const TraceSession& session, const Window& w, const Schema& schema) {
  static const std::size_t kFixed = resource_columns().size() + graph_columns().size();
  if (schema.size() < kFixed) throw Error(ErrorCode::SchemaMismatch, "raw schema too short");
  for (std::size_t i = 0; i < resource_columns().size(); ++i) {
    if (schema.columns[i] != resource_columns()[i]) throw Error(ErrorCode::SchemaMismatch, "raw schema column order");
  }
  for (std::size_t i = 0; i < graph_columns().size(); ++i) {
    if (schema.columns[resource_columns().size() + i] != graph_columns()[i]) {
      throw Error(ErrorCode::SchemaMismatch, "raw schema column order");
    }
  }

  RawVector v;
  v.schema = &schema;
  v.values.assign(schema.size(), 0.0);
  v.values[0] = w.cpu_percent;
  v.values[1] = w.rss;
  v.values[2] = w.vms;
  v.values[3] = w.read_count;
  v.values[4] = w.write_count;
  v.values[5] = w.read_bytes;
  v.values[6] = w.write_bytes;

  std::vector<TraceEvent> evs;
  evs.reserve(w.events.size());
  for (auto i : w.events) evs.push_back(session.events[i]);
  auto metrics = aggregate_metrics(build_graph(std::span<const TraceEvent>(evs)));
  v.values[7] = metrics.betweenness;
  v.values[8] = metrics.clustering;
  v.values[9] = metrics.avg_shortest_path;
  v.values[10] = metrics.total_duration_us;

  std::unordered_map<std::string_view, std::size_t> col;
  for (std::size_t i = kFixed; i < schema.size(); ++i) col[schema.columns[i]] = i;
  for (const auto& e : evs) {
    if (e.kind == EventKind::Exit) continue;
    if (auto it = col.find(e.symbol); it != col.end()) v.values[it->second] += 1.0;
  }
  return v;
}

inline std::vector<double> project(std::span<const double> values, const Schema& from, const Schema& to) {
  std::vector<double> out(to.size());
  for (std::size_t i = 0; i < to.size(); ++i) out[i] = values[from.require(to.columns[i])];
  return out;
}

/// Selects the 36 detector columns from a raw vector.
inline std::vector<double> project36(const RawVector& raw) {
  static const Schema s36 = schema36();
  return project(raw.values, *raw.schema, s36);
}

// ---------------------------------------------------------------------------
// design matrix

struct Stratum {
  std::string kernel_version;
  std::string binary;
  std::string path_scope;
  int trace_len_bin = 0;

  std::string key() const {
    return kernel_version + "|" + binary + "|" + path_scope + "|" + std::to_string(trace_len_bin);
  }
  bool operator==(const Stratum&) const = default;
  auto operator<=>(const Stratum&) const = default;
};

inline Stratum parse_stratum(std::string_view key) {
  Stratum s;
  std::vector<std::string> parts;
  std::string cur;
  for (char c : key) {
    if (c == '|') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  if (parts.size() != 4) throw Error(ErrorCode::SchemaMismatch, "bad stratum '" + std::string(key) + "'");
  s.kernel_version = parts[0];
  s.binary = parts[1];
  s.path_scope = parts[2];
  s.trace_len_bin = std::stoi(parts[3]);
  return s;
}

/// Per-row context carried alongside the feature values.
struct RowMeta {
  std::string session_id;
  Stratum stratum;
  std::optional<Label> session_label;
  std::size_t window_index = 0;
  double start_us = 0.0;
  double end_us = 0.0;
  double session_start_us = 0.0;
  double cumulative_write_bytes = 0.0;
  bool partial = false;
  bool missing_samples = false;
};

struct DesignMatrix {
  Schema schema;
  std::vector<std::vector<double>> rows;  // NaN marks a missing value
  std::vector<std::optional<Label>> labels;
  std::vector<RowMeta> meta;

  std::size_t size() const { return rows.size(); }

  void push(std::vector<double> values, std::optional<Label> label, RowMeta m) {
    if (values.size() != schema.size()) throw Error(ErrorCode::SchemaMismatch, "row width differs from schema");
    rows.push_back(std::move(values));
    labels.push_back(label);
    meta.push_back(std::move(m));
  }

  DesignMatrix subset(std::span<const std::size_t> idx) const {
    DesignMatrix out;
    out.schema = schema;
    for (auto i : idx) out.push(rows[i], labels[i], meta[i]);
    return out;
  }

  /// Column projection onto `to` (must be a subset of this schema by name).
  DesignMatrix select(const Schema& to) const {
    DesignMatrix out;
    out.schema = to;
    for (std::size_t r = 0; r < rows.size(); ++r) out.push(project(rows[r], schema, to), labels[r], meta[r]);
    return out;
  }

  std::size_t count(Label l) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::optional<Label>(l)));
  }

  std::vector<int> y() const {
    std::vector<int> out;
    out.reserve(labels.size());
    for (const auto& l : labels) out.push_back(l && *l == Label::Encrypted ? 1 : 0);
    return out;
  }
};

/// Quartile bin (0..3) of a session's event count against corpus quartiles.
inline std::vector<int> trace_len_bins(const std::vector<std::size_t>& event_counts) {
  std::vector<std::size_t> sorted = event_counts;
  std::sort(sorted.begin(), sorted.end());
  auto q = [&](double p) {
    if (sorted.empty()) return std::size_t{0};
    auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(sorted.size())));
    return sorted[std::max<std::size_t>(rank, 1) - 1];
  };
  const std::size_t q1 = q(0.25), q2 = q(0.5), q3 = q(0.75);
  std::vector<int> out;
  for (auto c : event_counts) out.push_back(c <= q1 ? 0 : c <= q2 ? 1 : c <= q3 ? 2 : 3);
  return out;
}

inline std::string format_double(double v) {
  if (std::isnan(v)) return "";
  if (v == std::floor(v) && std::fabs(v) < 1e15) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.0f", v);
    return buf;
  }
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// CSV: schema columns, then label,session_id,stratum. Missing values are
/// empty fields.
inline std::string write_design_csv(const DesignMatrix& m) {
  std::string out;
  for (const auto& c : m.schema.columns) out += c + ",";
  out += "label,session_id,stratum\n";
  for (std::size_t r = 0; r < m.size(); ++r) {
    for (double v : m.rows[r]) out += format_double(v) + ",";
    out += (m.labels[r] ? std::string(to_string(*m.labels[r])) : std::string()) + ",";
    out += m.meta[r].session_id + "," + m.meta[r].stratum.key() + "\n";
  }
  return out;
}

inline DesignMatrix read_design_csv(std::string_view text) {
  DesignMatrix m;
  std::istringstream in{std::string(text)};
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : l) {
      if (c == ',') {
        cells.push_back(cur);
        cur.clear();
      } else if (c != '\r') {
        cur += c;
      }
    }
    cells.push_back(cur);
    return cells;
  };
  if (!std::getline(in, line)) throw Error(ErrorCode::MissingColumn, "design matrix has no header");
  auto header = split(line);
  if (header.size() < 3 || header[header.size() - 3] != "label" || header[header.size() - 2] != "session_id" ||
      header.back() != "stratum") {
    throw Error(ErrorCode::MissingColumn, "design matrix header must end with label,session_id,stratum");
  }
  m.schema.columns.assign(header.begin(), header.end() - 3);
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != header.size()) throw Error(ErrorCode::MalformedLine, "design row " + std::to_string(row) + " width");
    std::vector<double> vals(m.schema.size());
    for (std::size_t i = 0; i < vals.size(); ++i) {
      if (cells[i].empty()) {
        vals[i] = std::numeric_limits<double>::quiet_NaN();
      } else if (!detail::parse_double(cells[i], vals[i])) {
        throw Error(ErrorCode::MalformedLine, "design row " + std::to_string(row) + " value '" + cells[i] + "'");
      }
    }
    const auto& lab = cells[cells.size() - 3];
    RowMeta meta;
    meta.session_id = cells[cells.size() - 2];
    meta.stratum = parse_stratum(cells.back());
    std::optional<Label> label;
    if (!lab.empty()) label = parse_label(lab);
    m.push(std::move(vals), label, std::move(meta));
  }
  return m;
}

// ---------------------------------------------------------------------------
// cleaning

struct MissingReport {
  std::vector<std::string> dropped_columns;
  std::size_t dropped_rows = 0;
};

/// Drops columns, then rows, whose missing fraction is strictly above
/// `threshold`.
inline DesignMatrix drop_missing(const DesignMatrix& m, double threshold = 0.20, MissingReport* report = nullptr) {
  const std::size_t n = m.size(), d = m.schema.size();
  std::vector<std::size_t> keep_cols;
  MissingReport rep;
  for (std::size_t c = 0; c < d; ++c) {
    std::size_t miss = 0;
    for (const auto& r : m.rows) miss += std::isnan(r[c]) ? 1 : 0;
    double frac = n == 0 ? 0.0 : static_cast<double>(miss) / static_cast<double>(n);
    if (frac > threshold + 1e-12) rep.dropped_columns.push_back(m.schema.columns[c]);
    else keep_cols.push_back(c);
  }
  DesignMatrix out;
  for (auto c : keep_cols) out.schema.columns.push_back(m.schema.columns[c]);
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t miss = 0;
    std::vector<double> vals;
    vals.reserve(keep_cols.size());
    for (auto c : keep_cols) {
      vals.push_back(m.rows[r][c]);
      miss += std::isnan(m.rows[r][c]) ? 1 : 0;
    }
    double frac = keep_cols.empty() ? 0.0 : static_cast<double>(miss) / static_cast<double>(keep_cols.size());
    if (frac > threshold + 1e-12) {
      ++rep.dropped_rows;
      continue;
    }
    out.push(std::move(vals), m.labels[r], m.meta[r]);
  }
  if (report) *report = std::move(rep);
  return out;
}

/// Replaces remaining missing cells with 0 so that learners see finite input.
inline DesignMatrix zero_fill(DesignMatrix m) {
  for (auto& r : m.rows) {
    for (auto& v : r) {
      if (std::isnan(v)) v = 0.0;
    }
  }
  return m;
}

struct ScalerState {
  std::vector<double> min;
  std::vector<double> max;
};

inline ScalerState fit_minmax(const std::vector<std::vector<double>>& rows) {
  ScalerState s;
  if (rows.empty()) return s;
  const std::size_t d = rows.front().size();
  s.min.assign(d, std::numeric_limits<double>::infinity());
  s.max.assign(d, -std::numeric_limits<double>::infinity());
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < d; ++c) {
      if (std::isnan(r[c])) continue;
      s.min[c] = std::min(s.min[c], r[c]);
      s.max[c] = std::max(s.max[c], r[c]);
    }
  }
  for (std::size_t c = 0; c < d; ++c) {
    if (!std::isfinite(s.min[c])) s.min[c] = s.max[c] = 0.0;
  }
  return s;
}

/// x' = (x - min) / (max - min); constant columns map to 0. No clipping, so
/// values outside the fitted range land outside [0, 1].
inline std::vector<double> apply_minmax(const ScalerState& s, std::span<const double> row) {
  std::vector<double> out(row.size());
  for (std::size_t c = 0; c < row.size(); ++c) {
    const double range = s.max[c] - s.min[c];
    out[c] = range > 0.0 ? (row[c] - s.min[c]) / range : 0.0;
    if (std::isnan(row[c])) out[c] = row[c];
  }
  return out;
}

inline std::vector<std::vector<double>> apply_minmax(const ScalerState& s, const std::vector<std::vector<double>>& rows) {
  std::vector<std::vector<double>> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(apply_minmax(s, r));
  return out;
}

inline nlohmann::json scaler_to_json(const ScalerState& s) { return {{"min", s.min}, {"max", s.max}}; }

inline ScalerState scaler_from_json(const nlohmann::json& j) {
  ScalerState s;
  s.min = j.at("min").get<std::vector<double>>();
  s.max = j.at("max").get<std::vector<double>>();
  return s;
}

namespace detail {

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix (row-major n*n).
/// Returns eigenvalues and column eigenvectors (vecs[r*n + k] is component r
/// of eigenvector k).
inline void jacobi_eigen(std::vector<double> a, std::size_t n, std::vector<double>& vals, std::vector<double>& vecs) {
  vecs.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) vecs[i * n + i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0, diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      diag += a[i * n + i] * a[i * n + i];
      for (std::size_t j = i + 1; j < n; ++j) off += a[i * n + j] * a[i * n + j];
    }
    if (off <= 1e-30 * std::max(diag, 1e-300)) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::fabs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = vecs[k * n + p], vkq = vecs[k * n + q];
          vecs[k * n + p] = c * vkp - s * vkq;
          vecs[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  vals.resize(n);
  for (std::size_t i = 0; i < n; ++i) vals[i] = a[i * n + i];
}

}  // namespace detail

/// Distance of each row from the origin of the (column-centred) PC1/PC2
/// plane.
inline std::vector<double> pc2_distances(const std::vector<std::vector<double>>& rows) {
  const std::size_t n = rows.size();
  if (n == 0) return {};
  const std::size_t d = rows.front().size();
  std::vector<double> mean(d, 0.0);
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < d; ++c) mean[c] += r[c];
  }
  for (auto& m : mean) m /= static_cast<double>(n);
  std::vector<double> centred(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) centred[i * d + c] = rows[i][c] - mean[c];
  }
  std::vector<double> cov(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < d; ++a) {
      const double xa = centred[i * d + a];
      if (xa == 0.0) continue;
      for (std::size_t b = a; b < d; ++b) cov[a * d + b] += xa * centred[i * d + b];
    }
  }
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      cov[a * d + b] /= static_cast<double>(std::max<std::size_t>(n - 1, 1));
      cov[b * d + a] = cov[a * d + b];
    }
  }
  std::vector<double> vals, vecs;
  detail::jacobi_eigen(cov, d, vals, vecs);
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return vals[x] > vals[y]; });
  const std::size_t k = std::min<std::size_t>(2, d);
  std::vector<double> dist(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s2 = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      double proj = 0.0;
      for (std::size_t c = 0; c < d; ++c) proj += centred[i * d + c] * vecs[c * d + order[j]];
      s2 += proj * proj;
    }
    dist[i] = std::sqrt(s2);
  }
  return dist;
}

/// Drops rows whose PC1/PC2 distance lies strictly above the given
/// nearest-rank percentile. Returns the kept row indices in order.
inline std::vector<std::size_t> pca_outlier_keep(const std::vector<std::vector<double>>& rows, double percentile = 95.0) {
  if (rows.size() < 3) throw Error(ErrorCode::TooFewRows, "PCA outlier removal needs at least 3 rows");
  auto dist = pc2_distances(rows);
  const double cut = percentile_nearest_rank(dist, percentile);
  const double tol = 1e-9 * (1.0 + cut);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (dist[i] <= cut + tol) keep.push_back(i);
  }
  return keep;
}

inline DesignMatrix pca_outlier_removal(const DesignMatrix& m, double percentile = 95.0) {
  auto keep = pca_outlier_keep(m.rows, percentile);
  return m.subset(keep);
}

// ---------------------------------------------------------------------------
// balancing and splitting

/// Integer allocation of `total` units across bins with capacities, in
/// proportion to `mass`, no bin above `cap` or its capacity. Remainders go
/// by largest fractional part, ties to the lower bin index.
inline std::vector<std::size_t> proportional_allocation(const std::vector<double>& mass,
                                                        const std::vector<std::size_t>& capacity, std::size_t total,
                                                        std::size_t cap) {
  const std::size_t k = mass.size();
  std::vector<std::size_t> alloc(k, 0);
  std::vector<bool> fixed(k, false);
  std::vector<std::size_t> limit(k);
  for (std::size_t i = 0; i < k; ++i) limit[i] = std::min(capacity[i], cap);
  std::size_t remaining = total;
  // Water-filling: bins whose proportional share exceeds their limit are
  // pinned at the limit and the rest is re-shared.
  while (true) {
    double free_mass = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      if (!fixed[i]) free_mass += mass[i];
    }
    bool changed = false;
    for (std::size_t i = 0; i < k && free_mass > 0; ++i) {
      if (fixed[i]) continue;
      double share = static_cast<double>(remaining) * mass[i] / free_mass;
      if (share >= static_cast<double>(limit[i])) {
        alloc[i] = limit[i];
        fixed[i] = true;
        remaining -= limit[i];
        changed = true;
      }
    }
    if (!changed) break;
  }
  double free_mass = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (!fixed[i]) free_mass += mass[i];
  }
  if (free_mass <= 0.0) return alloc;
  std::vector<std::pair<double, std::size_t>> frac;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    if (fixed[i]) continue;
    double share = static_cast<double>(remaining) * mass[i] / free_mass;
    alloc[i] = static_cast<std::size_t>(std::floor(share + 1e-9));
    assigned += alloc[i];
    frac.emplace_back(share - static_cast<double>(alloc[i]), i);
  }
  std::stable_sort(frac.begin(), frac.end(), [](auto& a, auto& b) { return a.first > b.first; });
  std::size_t left = remaining - std::min(remaining, assigned);
  for (std::size_t pass = 0; left > 0 && pass < 2 * k + 1; ++pass) {
    for (auto& [f, i] : frac) {
      if (left == 0) break;
      if (alloc[i] < limit[i]) {
        ++alloc[i];
        --left;
      }
    }
  }
  return alloc;
}

struct BalanceOptions {
  std::uint64_t seed = 42;
  // No stratum receives more than this fraction of the majority quota
  // (unless the remaining strata cannot absorb it).
  double max_stratum_share = 0.5;
};

/// Retains every minority-class row and down-samples the majority to the
/// same count. Majority quota is spread over strata by mass (capped), and
/// within a stratum rows are drawn round-robin across shuffled sessions.
inline std::vector<std::size_t> balance_indices(const DesignMatrix& m, const BalanceOptions& opts = {}) {
  const std::size_t n_enc = m.count(Label::Encrypted), n_ben = m.count(Label::Benign);
  std::vector<std::size_t> all(m.size());
  std::iota(all.begin(), all.end(), 0);
  if (n_enc == n_ben || n_enc == 0 || n_ben == 0) return all;
  const Label minority = n_enc < n_ben ? Label::Encrypted : Label::Benign;
  const std::size_t target = std::min(n_enc, n_ben);

  std::map<std::string, std::map<std::string, std::vector<std::size_t>>> by_stratum;  // stratum -> session -> rows
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m.labels[i]) continue;
    if (*m.labels[i] == minority) {
      keep.push_back(i);
    } else {
      by_stratum[m.meta[i].stratum.key()][m.meta[i].session_id].push_back(i);
    }
  }
  std::vector<double> mass;
  std::vector<std::size_t> cap;
  for (const auto& [_, sessions] : by_stratum) {
    std::size_t rows = 0;
    for (const auto& [__, r] : sessions) rows += r.size();
    mass.push_back(static_cast<double>(rows));
    cap.push_back(rows);
  }
  const auto share_cap = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(opts.max_stratum_share * static_cast<double>(target))));
  auto alloc = proportional_allocation(mass, cap, target, share_cap);
  std::size_t got = std::accumulate(alloc.begin(), alloc.end(), std::size_t{0});
  if (got < target) alloc = proportional_allocation(mass, cap, target, target);  // cap infeasible

  Rng rng(opts.seed);
  std::size_t si = 0;
  for (auto& [_, sessions] : by_stratum) {
    std::vector<std::vector<std::size_t>> pools;
    for (auto& [__, rows] : sessions) {
      auto r = rows;
      shuffle(r, rng);
      pools.push_back(std::move(r));
    }
    shuffle(pools, rng);
    std::size_t need = alloc[si++];
    std::vector<std::size_t> cursor(pools.size(), 0);
    while (need > 0) {
      bool progressed = false;
      for (std::size_t p = 0; p < pools.size() && need > 0; ++p) {
        if (cursor[p] < pools[p].size()) {
          keep.push_back(pools[p][cursor[p]++]);
          --need;
          progressed = true;
        }
      }
      if (!progressed) break;
    }
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

inline DesignMatrix balance_downsample(const DesignMatrix& m, const BalanceOptions& opts = {}) {
  auto idx = balance_indices(m, opts);
  return m.subset(idx);
}

struct Split {
  std::vector<std::size_t> train, val, test;
};

struct SplitOptions {
  std::uint64_t seed = 42;
  double train = 0.8;
  double val = 0.1;
};

/// Session-level stratified 80/10/10 split. Sessions are grouped by
/// (session label, stratum); each group is shuffled and the validation/test
/// quotas are carried across groups so the global ratio holds within
/// rounding.
inline Split split(const DesignMatrix& m, const SplitOptions& opts = {}) {
  std::map<std::string, std::pair<std::string, std::size_t>> first_seen;  // session -> (group key, first row)
  std::vector<std::string> session_order;
  std::map<std::string, std::vector<std::size_t>> rows_of;
  std::map<Label, std::set<std::string>> per_label;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto& meta = m.meta[i];
    std::optional<Label> sl = meta.session_label ? meta.session_label : m.labels[i];
    if (!first_seen.count(meta.session_id)) {
      std::string lab = sl ? std::string(to_string(*sl)) : "unlabeled";
      first_seen[meta.session_id] = {lab + "#" + meta.stratum.key(), i};
      session_order.push_back(meta.session_id);
      if (sl) per_label[*sl].insert(meta.session_id);
    }
    rows_of[meta.session_id].push_back(i);
  }
  for (Label l : {Label::Encrypted, Label::Benign}) {
    if (per_label[l].size() < 3) {
      throw Error(ErrorCode::InsufficientSessions,
                  "need at least 3 sessions labelled " + std::string(to_string(l)) + ", have " +
                      std::to_string(per_label[l].size()));
    }
  }
  std::map<std::string, std::vector<std::string>> groups;
  for (const auto& s : session_order) groups[first_seen[s].first].push_back(s);

  Rng rng(opts.seed);
  std::size_t cum = 0, cum_val = 0, cum_test = 0;
  const double test_frac = 1.0 - opts.train - opts.val;
  Split out;
  for (auto& [_, sessions] : groups) {
    auto g = sessions;
    std::sort(g.begin(), g.end());
    shuffle(g, rng);
    cum += g.size();
    auto target_val = static_cast<std::size_t>(std::llround(opts.val * static_cast<double>(cum)));
    auto target_test = static_cast<std::size_t>(std::llround(test_frac * static_cast<double>(cum)));
    std::size_t n_val = std::min(g.size(), target_val > cum_val ? target_val - cum_val : 0);
    std::size_t n_test = std::min(g.size() - n_val, target_test > cum_test ? target_test - cum_test : 0);
    cum_val += n_val;
    cum_test += n_test;
    for (std::size_t i = 0; i < g.size(); ++i) {
      auto& bucket = i < n_val ? out.val : i < n_val + n_test ? out.test : out.train;
      for (auto r : rows_of[g[i]]) bucket.push_back(r);
    }
  }
  for (auto* b : {&out.train, &out.val, &out.test}) std::sort(b->begin(), b->end());
  return out;
}

}  // namespace encguard
