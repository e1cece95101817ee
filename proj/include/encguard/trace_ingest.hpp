// Copyright 2026 The encguard Authors
// SPDX-License-Identifier: Apache-2.0

// Parsing of function_graph tracer text, resource-counter logs and symbol key
// lists into typed event streams attributed to user-space processes.

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "json.hpp"

#include "encguard/error.hpp"

namespace encguard {

enum class EventKind { Entry, Exit, Leaf };

inline std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::Entry: return "entry";
    case EventKind::Exit: return "exit";
    case EventKind::Leaf: return "leaf";
  }
  return "?";
}

struct TraceEvent {
  double timestamp_us = 0.0;
  int cpu = 0;
  int pid = 0;
  std::string comm;
  std::string symbol;
  int depth = 0;
  std::optional<double> duration_us;  // set iff kind is Exit or Leaf
  EventKind kind = EventKind::Leaf;
  bool replay_closed = false;  // synthetic exit appended for an entry left open at end of trace

  bool operator==(const TraceEvent&) const = default;
};

/// One row of the resource collector. Counts and byte totals are cumulative
/// per process; rss/vms are levels.
struct ResourceSample {
  double timestamp_us = 0.0;
  double cpu_percent = 0.0;
  double rss = 0.0;
  double vms = 0.0;
  double read_count = 0.0;
  double write_count = 0.0;
  double read_bytes = 0.0;
  double write_bytes = 0.0;
  std::optional<int> pid;

  bool operator==(const ResourceSample&) const = default;
};

enum class Label { Encrypted, Benign };

inline std::string_view to_string(Label l) { return l == Label::Encrypted ? "encrypted" : "benign"; }

inline Label parse_label(std::string_view s) {
  if (s == "encrypted" || s == "1") return Label::Encrypted;
  if (s == "benign" || s == "non-encrypted" || s == "0") return Label::Benign;
  throw Error(ErrorCode::ConfigError, "unknown label '" + std::string(s) + "'");
}

struct SessionMeta {
  std::string kernel_version;
  std::string binary;
  std::string user;
  std::string path_scope;   // glob, e.g. "$HOME/docs/**"
  std::string target_path;  // concrete absolute path the process writes to
  std::string file_type = "user_home_t";
  std::optional<Label> label;
  std::optional<double> onset_us;  // ground-truth start of encryption behaviour
  int pid = 0;
  std::string comm;
  bool truncated = false;
  std::optional<double> truncated_at_us;
  std::uint64_t capture_cap_bytes = 0;
  // generator bookkeeping; empty for real captures
  std::string profile;
  std::string workload_kind;
  bool edge_case = false;
};

struct TraceSession {
  std::string session_id;
  std::vector<TraceEvent> events;
  std::vector<ResourceSample> samples;
  SessionMeta meta;
};

struct SymbolKeyList {
  std::vector<std::string> symbols;  // column order
  std::vector<std::string> excluded;

  bool is_excluded(std::string_view s) const {
    return std::find(excluded.begin(), excluded.end(), s) != excluded.end();
  }
};

inline constexpr std::uint64_t kDefaultCaptureCapBytes = 1u << 20;

// ---------------------------------------------------------------------------
// function_graph text

struct ParseOptions {
  bool strict = false;
  // Used when lines carry no `<comm>-<pid>` tag.
  int default_pid = 0;
  std::string default_comm;
};

struct FunctionGraphTrace {
  std::vector<TraceEvent> events;
  std::size_t malformed_lines = 0;   // skipped in lenient mode
  std::size_t decorations = 0;       // context-switch / migration markers
  std::size_t unmatched_exits = 0;   // skipped in lenient mode
  std::size_t replay_closed = 0;     // entries closed at end of trace
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  // std::from_chars for double is available in libstdc++ 11.
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(out);
}

inline bool parse_int(std::string_view s, int& out) {
  s = trim(s);
  if (s.empty()) return false;
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

inline bool is_symbol_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '$';
}

inline bool valid_symbol(std::string_view s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), is_symbol_char);
}

struct LineFields {
  std::optional<double> abstime_s;
  std::optional<std::pair<std::string, int>> tag;
  int cpu = 0;
  std::optional<double> duration_us;
  std::string_view body;
};

// Splits `[abstime |] [comm-pid] cpu) [dur us] | body`. Returns nullopt when
// the line does not fit the column layout.
inline std::optional<LineFields> split_columns(std::string_view line) {
  LineFields f;
  std::string_view rest = line;

  // Optional absolute timestamp column: "<float> |" before the cpu column.
  {
    auto bar = rest.find('|');
    auto paren = rest.find(')');
    if (bar != std::string_view::npos && (paren == std::string_view::npos || bar < paren)) {
      double t = 0;
      if (!parse_double(rest.substr(0, bar), t)) return std::nullopt;
      f.abstime_s = t;
      rest = rest.substr(bar + 1);
    }
  }

  auto paren = rest.find(')');
  if (paren == std::string_view::npos) return std::nullopt;
  std::string_view head = trim(rest.substr(0, paren));
  // head is either "<cpu>" or "<comm>-<pid> <cpu>"
  auto sp = head.find_last_of(" \t");
  std::string_view cpu_str = head;
  if (sp != std::string_view::npos) {
    cpu_str = head.substr(sp + 1);
    std::string_view tag = trim(head.substr(0, sp));
    auto dash = tag.rfind('-');
    if (dash == std::string_view::npos || dash == 0) return std::nullopt;
    int pid = 0;
    if (!parse_int(tag.substr(dash + 1), pid) || pid < 0) return std::nullopt;
    f.tag = std::make_pair(std::string(tag.substr(0, dash)), pid);
  }
  if (!parse_int(cpu_str, f.cpu) || f.cpu < 0) return std::nullopt;

  rest = rest.substr(paren + 1);
  auto bar = rest.find('|');
  if (bar == std::string_view::npos) return std::nullopt;
  std::string_view dur = trim(rest.substr(0, bar));
  // Overhead markers ('+', '!', '#', '*', '@', '$') may prefix the duration.
  while (!dur.empty() && std::string_view("+!#*@$").find(dur.front()) != std::string_view::npos) {
    dur.remove_prefix(1);
    dur = trim(dur);
  }
  if (!dur.empty()) {
    if (dur.size() < 2 || dur.substr(dur.size() - 2) != "us") return std::nullopt;
    double d = 0;
    if (!parse_double(dur.substr(0, dur.size() - 2), d) || d < 0) return std::nullopt;
    f.duration_us = d;
  }
  f.body = rest.substr(bar + 1);
  return f;
}

inline bool is_decoration(std::string_view line) {
  std::string_view t = trim(line);
  return t.find("=>") != std::string_view::npos || t.rfind("---", 0) == 0 ||
         t.rfind("===", 0) == 0 || t.find("<idle>") != std::string_view::npos;
}

}  // namespace detail

/// Parses function_graph text. Nesting depth comes from replaying a call
/// stack per (cpu, pid) stream; indentation is informational only.
inline FunctionGraphTrace parse_function_graph(std::string_view text, const ParseOptions& opts = {}) {
  FunctionGraphTrace out;
  struct Open {
    std::size_t event_index;
  };
  std::map<std::pair<int, int>, std::vector<Open>> stacks;
  std::map<std::pair<int, int>, double> clocks;  // reconstructed time when no abstime column
  double last_time = 0.0;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
    ++line_no;

    std::string_view t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;

    auto malformed = [&](const char* why) {
      if (opts.strict) {
        throw Error(ErrorCode::MalformedLine,
                    "line " + std::to_string(line_no) + ": " + why + ": '" + std::string(t) + "'");
      }
      ++out.malformed_lines;
    };

    auto fields = detail::split_columns(line);
    if (!fields) {
      if (detail::is_decoration(line)) {
        ++out.decorations;
      } else {
        malformed("unrecognised columns");
      }
      continue;
    }
    std::string_view body = detail::trim(fields->body);

    TraceEvent ev;
    ev.cpu = fields->cpu;
    if (fields->tag) {
      ev.comm = fields->tag->first;
      ev.pid = fields->tag->second;
    } else {
      ev.comm = opts.default_comm;
      ev.pid = opts.default_pid;
    }
    auto key = std::make_pair(ev.cpu, ev.pid);
    auto& stack = stacks[key];
    double& clock = clocks[key];
    if (fields->abstime_s) {
      ev.timestamp_us = std::round(*fields->abstime_s * 1e6 * 1000.0) / 1000.0;
    }

    if (body.size() >= 4 && body.substr(body.size() - 4) == "() {") {
      std::string_view sym = detail::trim(body.substr(0, body.size() - 4));
      if (!detail::valid_symbol(sym) || fields->duration_us) {
        malformed("bad entry");
        continue;
      }
      ev.kind = EventKind::Entry;
      ev.symbol = std::string(sym);
      ev.depth = static_cast<int>(stack.size());
      if (!fields->abstime_s) ev.timestamp_us = clock;
      stack.push_back({out.events.size()});
    } else if (body.size() >= 3 && body.substr(body.size() - 3) == "();") {
      std::string_view sym = detail::trim(body.substr(0, body.size() - 3));
      if (!detail::valid_symbol(sym)) {
        malformed("bad leaf");
        continue;
      }
      ev.kind = EventKind::Leaf;
      ev.symbol = std::string(sym);
      ev.depth = static_cast<int>(stack.size());
      ev.duration_us = fields->duration_us.value_or(0.0);
      if (!fields->abstime_s) {
        ev.timestamp_us = clock;
        clock += *ev.duration_us;
      }
    } else if (!body.empty() && body.front() == '}') {
      std::string_view trailer = detail::trim(body.substr(1));
      if (!trailer.empty() && !(trailer.rfind("/*", 0) == 0)) {
        malformed("bad exit");
        continue;
      }
      if (stack.empty()) {
        if (opts.strict) {
          throw Error(ErrorCode::DepthUnderflow, "line " + std::to_string(line_no) + ": exit with no open entry");
        }
        ++out.unmatched_exits;
        continue;
      }
      const TraceEvent& entry = out.events[stack.back().event_index];
      stack.pop_back();
      ev.kind = EventKind::Exit;
      ev.symbol = entry.symbol;
      ev.depth = entry.depth;
      if (fields->duration_us) {
        ev.duration_us = fields->duration_us;
      } else if (fields->abstime_s) {
        ev.duration_us = std::round(std::max(0.0, ev.timestamp_us - entry.timestamp_us) * 1000.0) / 1000.0;
      } else {
        ev.duration_us = std::max(0.0, clock - entry.timestamp_us);
      }
      if (!fields->abstime_s) {
        clock = std::max(clock, entry.timestamp_us + *ev.duration_us);
        ev.timestamp_us = clock;
      }
    } else {
      malformed("unrecognised body");
      continue;
    }
    last_time = std::max(last_time, ev.timestamp_us);
    out.events.push_back(std::move(ev));
  }

  // Close entries still open at end of trace so that every entry has an exit.
  for (auto& [key, stack] : stacks) {
    while (!stack.empty()) {
      const TraceEvent entry = out.events[stack.back().event_index];
      stack.pop_back();
      TraceEvent ev = entry;
      ev.kind = EventKind::Exit;
      ev.timestamp_us = last_time;
      ev.duration_us = std::round(std::max(0.0, last_time - entry.timestamp_us) * 1000.0) / 1000.0;
      ev.replay_closed = true;
      out.events.push_back(std::move(ev));
      ++out.replay_closed;
    }
  }
  return out;
}

/// Canonical text form: abstime column, comm-pid tag, cpu, duration, body.
/// parse_function_graph(format_function_graph(e)) reproduces e.
inline std::string format_function_graph(const std::vector<TraceEvent>& events) {
  std::string out;
  out.reserve(events.size() * 64);
  char buf[96];
  for (const auto& e : events) {
    std::snprintf(buf, sizeof buf, "%.9f | %s-%d %3d) ", e.timestamp_us / 1e6, e.comm.c_str(), e.pid, e.cpu);
    out += buf;
    if (e.duration_us) {
      std::snprintf(buf, sizeof buf, "%10.3f us |", *e.duration_us);
    } else {
      std::snprintf(buf, sizeof buf, "%13s |", "");
    }
    out += buf;
    out.append(2 + 2 * static_cast<std::size_t>(e.depth), ' ');
    switch (e.kind) {
      case EventKind::Entry: out += e.symbol + "() {"; break;
      case EventKind::Leaf: out += e.symbol + "();"; break;
      case EventKind::Exit: out += "} /* " + e.symbol + " */"; break;
    }
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// resource log

inline constexpr const char* kResourceHeader =
    "timestamp_us,cpu_percent,rss,vms,read_count,write_count,read_bytes,write_bytes";

/// CSV with the fixed counter header; an optional `pid` column attributes
/// rows to processes. Lenient mode drops bad or regressing rows.
inline std::vector<ResourceSample> parse_resource_log(std::string_view text, bool strict = false) {
  static const char* kCols[] = {"timestamp_us", "cpu_percent", "rss",         "vms",
                                "read_count",   "write_count", "read_bytes", "write_bytes"};
  std::vector<ResourceSample> out;
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = (nl == std::string_view::npos) ? text.size() : nl + 1;
    if (!detail::trim(line).empty()) lines.push_back(detail::trim(line));
  }
  if (lines.empty()) throw Error(ErrorCode::MissingColumn, "resource log has no header");

  auto split = [](std::string_view l) {
    std::vector<std::string_view> cells;
    std::size_t p = 0;
    while (true) {
      auto c = l.find(',', p);
      cells.push_back(detail::trim(l.substr(p, c == std::string_view::npos ? std::string_view::npos : c - p)));
      if (c == std::string_view::npos) break;
      p = c + 1;
    }
    return cells;
  };

  auto header = split(lines[0]);
  int idx[8];
  for (int i = 0; i < 8; ++i) {
    auto it = std::find(header.begin(), header.end(), kCols[i]);
    if (it == header.end()) throw Error(ErrorCode::MissingColumn, std::string("resource log lacks column '") + kCols[i] + "'");
    idx[i] = static_cast<int>(it - header.begin());
  }
  int pid_idx = -1;
  if (auto it = std::find(header.begin(), header.end(), "pid"); it != header.end()) {
    pid_idx = static_cast<int>(it - header.begin());
  }

  std::map<int, ResourceSample> last_by_pid;  // key -1 for untagged rows
  for (std::size_t r = 1; r < lines.size(); ++r) {
    auto cells = split(lines[r]);
    ResourceSample s;
    double* dst[8] = {&s.timestamp_us, &s.cpu_percent, &s.rss,        &s.vms,
                      &s.read_count,   &s.write_count, &s.read_bytes, &s.write_bytes};
    bool ok = cells.size() == header.size();
    for (int i = 0; ok && i < 8; ++i) {
      ok = detail::parse_double(cells[idx[i]], *dst[i]) && *dst[i] >= 0.0;
    }
    if (ok && pid_idx >= 0) {
      int pid = 0;
      ok = detail::parse_int(cells[pid_idx], pid);
      s.pid = pid;
    }
    if (!ok) {
      if (strict) throw Error(ErrorCode::MalformedLine, "resource log row " + std::to_string(r) + " is unparsable");
      continue;
    }
    int key = s.pid.value_or(-1);
    if (auto it = last_by_pid.find(key); it != last_by_pid.end()) {
      const auto& p = it->second;
      if (s.read_count < p.read_count || s.write_count < p.write_count || s.read_bytes < p.read_bytes ||
          s.write_bytes < p.write_bytes) {
        if (strict) throw Error(ErrorCode::NonMonotonicCounter, "cumulative counter decreases at row " + std::to_string(r));
        continue;
      }
    }
    last_by_pid[key] = s;
    out.push_back(s);
  }
  return out;
}

inline std::string format_resource_log(const std::vector<ResourceSample>& samples) {
  std::string out = kResourceHeader;
  out += '\n';
  char buf[256];
  for (const auto& s : samples) {
    std::snprintf(buf, sizeof buf, "%.3f,%.3f,%.0f,%.0f,%.0f,%.0f,%.0f,%.0f\n", s.timestamp_us, s.cpu_percent, s.rss,
                  s.vms, s.read_count, s.write_count, s.read_bytes, s.write_bytes);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// symbol keys

/// JSON (`{"symbols": [...], "excluded": [...]}` or a bare list) or the same
/// shapes written as YAML. Duplicates keep their first position; a symbol
/// that is also excluded is dropped from the column list.
inline SymbolKeyList load_symbol_keys(std::string_view body) {
  std::vector<std::string> symbols, excluded;
  bool parsed = false;

  try {
    auto j = nlohmann::json::parse(body);
    auto strings = [](const nlohmann::json& arr) {
      std::vector<std::string> v;
      if (!arr.is_array()) throw Error(ErrorCode::UnparsableKeyFile, "expected a list of symbol names");
      for (const auto& x : arr) {
        if (!x.is_string()) throw Error(ErrorCode::UnparsableKeyFile, "symbol names must be strings");
        v.push_back(x.get<std::string>());
      }
      return v;
    };
    if (j.is_array()) {
      symbols = strings(j);
    } else if (j.is_object()) {
      if (j.contains("symbols")) symbols = strings(j["symbols"]);
      if (j.contains("excluded")) excluded = strings(j["excluded"]);
    } else {
      throw Error(ErrorCode::UnparsableKeyFile, "top level must be a list or a map");
    }
    parsed = true;
  } catch (const nlohmann::json::exception&) {
  }

  if (!parsed) {
    try {
      YAML::Node root = YAML::Load(std::string(body));
      auto strings = [](const YAML::Node& n) {
        std::vector<std::string> v;
        if (!n.IsSequence()) throw Error(ErrorCode::UnparsableKeyFile, "expected a list of symbol names");
        for (const auto& x : n) {
          if (!x.IsScalar()) throw Error(ErrorCode::UnparsableKeyFile, "symbol names must be scalars");
          v.push_back(x.as<std::string>());
        }
        return v;
      };
      if (root.IsSequence()) {
        symbols = strings(root);
      } else if (root.IsMap()) {
        if (root["symbols"]) symbols = strings(root["symbols"]);
        if (root["excluded"]) excluded = strings(root["excluded"]);
      } else {
        throw Error(ErrorCode::UnparsableKeyFile, "key file is neither JSON nor a YAML list/map");
      }
    } catch (const YAML::Exception& e) {
      throw Error(ErrorCode::UnparsableKeyFile, e.what());
    }
  }

  auto dedup = [](std::vector<std::string> v) {
    std::unordered_set<std::string> seen;
    std::vector<std::string> out;
    for (auto& s : v) {
      if (seen.insert(s).second) out.push_back(std::move(s));
    }
    return out;
  };
  SymbolKeyList keys;
  keys.excluded = dedup(std::move(excluded));
  for (auto& s : dedup(std::move(symbols))) {
    if (!keys.is_excluded(s)) keys.symbols.push_back(std::move(s));
  }
  if (keys.symbols.empty()) throw Error(ErrorCode::EmptySymbolList, "symbol key list is empty");
  return keys;
}

inline std::string dump_symbol_keys(const SymbolKeyList& keys) {
  nlohmann::json j;
  j["symbols"] = keys.symbols;
  j["excluded"] = keys.excluded;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// session attribution

/// Idle task, kthreadd and kernel worker threads carry no user-space action.
inline bool is_kernel_background(int pid, std::string_view comm) {
  if (pid <= 0 || pid == 2) return true;
  static constexpr std::string_view kPrefixes[] = {"swapper", "kworker", "ksoftirqd", "migration", "rcu_",
                                                  "kthreadd", "idle",   "irq/",      "watchdog",  "cpuhp",
                                                  "kcompactd", "kswapd", "jbd2/"};
  for (auto p : kPrefixes) {
    if (comm.rfind(p, 0) == 0) return true;
  }
  return false;
}

/// Groups events by the (pid, comm) tag. A comm change for the same pid (exec)
/// starts a new session. Samples tagged with a pid go to that pid's sessions;
/// untagged samples are shared by every session (single-process sidecar logs).
inline std::vector<TraceSession> attribute_sessions(const std::vector<TraceEvent>& events,
                                                    const std::vector<ResourceSample>& samples,
                                                    const SessionMeta& meta, std::string_view id_prefix = "") {
  std::vector<std::pair<int, std::string>> order;
  std::map<std::pair<int, std::string>, std::vector<TraceEvent>> groups;
  for (const auto& e : events) {
    if (is_kernel_background(e.pid, e.comm)) continue;
    auto key = std::make_pair(e.pid, e.comm);
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(e);
  }
  if (order.empty()) throw Error(ErrorCode::NoUserspaceActivity, "trace holds only kernel/background activity");

  std::vector<TraceSession> out;
  for (const auto& key : order) {
    TraceSession s;
    s.meta = meta;
    s.meta.pid = key.first;
    s.meta.comm = key.second;
    if (s.meta.binary.empty()) s.meta.binary = key.second;
    s.session_id = std::string(id_prefix) + key.second + "-" + std::to_string(key.first);
    s.events = std::move(groups[key]);
    for (const auto& smp : samples) {
      if (!smp.pid || *smp.pid == key.first) s.samples.push_back(smp);
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Truncates a session at the first sample whose read+write byte total
/// exceeds `cap_bytes`; events at or after that instant are dropped.
inline TraceSession apply_capture_cap(TraceSession s, std::uint64_t cap_bytes = kDefaultCaptureCapBytes) {
  s.meta.capture_cap_bytes = cap_bytes;
  auto it = std::find_if(s.samples.begin(), s.samples.end(), [&](const ResourceSample& r) {
    return r.read_bytes + r.write_bytes > static_cast<double>(cap_bytes);
  });
  if (it == s.samples.end()) return s;
  double cut = it->timestamp_us;
  s.samples.erase(it, s.samples.end());
  // Drop whole call trees that begin at/after the cut so nesting stays balanced.
  std::vector<TraceEvent> kept;
  kept.reserve(s.events.size());
  int open_after_cut = 0;
  for (auto& e : s.events) {
    if (open_after_cut > 0 || (e.timestamp_us >= cut && e.depth == 0 && e.kind != EventKind::Exit)) {
      if (e.kind == EventKind::Entry) ++open_after_cut;
      if (e.kind == EventKind::Exit) --open_after_cut;
      continue;
    }
    kept.push_back(std::move(e));
  }
  s.events = std::move(kept);
  s.meta.truncated = true;
  s.meta.truncated_at_us = cut;
  return s;
}

// ---------------------------------------------------------------------------
// session bundles on disk

inline nlohmann::json meta_to_json(const std::string& session_id, const SessionMeta& m) {
  nlohmann::json j = {{"session_id", session_id}, {"kernel_version", m.kernel_version}, {"binary", m.binary},
                      {"user", m.user},           {"path_scope", m.path_scope},         {"target_path", m.target_path},
                      {"file_type", m.file_type}, {"pid", m.pid},                       {"comm", m.comm}};
  if (m.label) j["label"] = std::string(to_string(*m.label));
  if (m.onset_us) j["onset_us"] = *m.onset_us;
  if (m.capture_cap_bytes) j["capture_cap_bytes"] = m.capture_cap_bytes;
  if (m.truncated_at_us) j["truncated_at_us"] = *m.truncated_at_us;
  if (!m.profile.empty()) j["profile"] = m.profile;
  if (!m.workload_kind.empty()) j["workload_kind"] = m.workload_kind;
  if (m.edge_case) j["edge_case"] = true;
  return j;
}

inline SessionMeta meta_from_json(const nlohmann::json& j) {
  SessionMeta m;
  try {
    m.kernel_version = j.value("kernel_version", "");
    m.binary = j.value("binary", "");
    m.user = j.value("user", "");
    m.path_scope = j.value("path_scope", "");
    m.target_path = j.value("target_path", "");
    m.file_type = j.value("file_type", "user_home_t");
    m.pid = j.value("pid", 0);
    m.comm = j.value("comm", "");
    if (j.contains("label")) m.label = parse_label(j.at("label").get<std::string>());
    if (j.contains("onset_us")) m.onset_us = j.at("onset_us").get<double>();
    m.capture_cap_bytes = j.value("capture_cap_bytes", std::uint64_t{0});
    m.profile = j.value("profile", "");
    m.workload_kind = j.value("workload_kind", "");
    m.edge_case = j.value("edge_case", false);
    if (j.contains("truncated_at_us")) {
      m.truncated = true;
      m.truncated_at_us = j.at("truncated_at_us").get<double>();
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::MissingColumn, std::string("session meta: ") + ex.what());
  }
  return m;
}

/// Writes `<id>.trace`, `<id>.resources.csv` and `<id>.meta.json` into `dir`.
inline void write_session_bundle(const std::filesystem::path& dir, const TraceSession& s) {
  std::filesystem::create_directories(dir);
  auto put = [&](const std::string& suffix, const std::string& body) {
    std::ofstream out(dir / (s.session_id + suffix), std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + (dir / (s.session_id + suffix)).string());
    out << body;
  };
  put(".trace", format_function_graph(s.events));
  put(".resources.csv", format_resource_log(s.samples));
  put(".meta.json", meta_to_json(s.session_id, s.meta).dump(2) + "\n");
}

inline std::string read_text_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline TraceSession read_session_bundle(const std::filesystem::path& dir, const std::string& id,
                                        const ParseOptions& opts = {}) {
  TraceSession s;
  s.session_id = id;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(dir / (id + ".meta.json")));
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::MalformedLine, std::string("session meta: ") + ex.what());
  }
  s.meta = meta_from_json(j);
  ParseOptions o = opts;
  if (o.default_comm.empty()) o.default_comm = s.meta.comm;
  if (o.default_pid == 0) o.default_pid = s.meta.pid;
  s.events = parse_function_graph(read_text_file(dir / (id + ".trace")), o).events;
  s.samples = parse_resource_log(read_text_file(dir / (id + ".resources.csv")), opts.strict);
  return s;
}

/// Session ids of every `*.meta.json` in `dir`, sorted.
inline std::vector<std::string> list_session_bundles(const std::filesystem::path& dir) {
  std::vector<std::string> ids;
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::Io, "not a directory: " + dir.string());
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    const std::string suffix = ".meta.json";
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace encguard
