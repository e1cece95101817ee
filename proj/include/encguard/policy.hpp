// Copyright 2026 The encguard Authors
// SPDX-License-Identifier: Apache-2.0

// Risk scoring R = p_enc * I(ctx), whitelist matching, threshold decisions
// and the OR composition of the rule and model layers.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "encguard/error.hpp"
#include "encguard/glob.hpp"

namespace encguard {

struct Context {
  std::string user;
  std::string app;
  std::string path;
  std::string file_type = "user_home_t";
};

struct WhitelistEntry {
  std::string user;
  std::string app;
  std::string path_scope;  // glob; may start with $HOME
  std::optional<std::string> file_type;
};

/// Unset fields match anything.
struct ImpactEntry {
  std::optional<std::string> user;
  std::optional<std::string> app;
  std::optional<std::string> path_scope;
  std::optional<std::string> file_type;
  double weight = 1.0;
};

struct RiskPolicy {
  double tau = 0.50;
  std::vector<ImpactEntry> impact_map;
  std::vector<WhitelistEntry> whitelist;
  std::string home_root = "/home";

  std::string home_of(const std::string& user) const { return home_root + "/" + user; }

  /// Replaces a leading `$HOME` with the user's home directory.
  std::string expand(const std::string& pattern, const std::string& user) const {
    if (pattern.rfind("$HOME", 0) == 0) return home_of(user) + pattern.substr(5);
    return pattern;
  }
};

inline void validate(const RiskPolicy& p) {
  if (!(p.tau >= 0.0 && p.tau <= 1.0)) throw Error(ErrorCode::InvalidPolicy, "tau must lie in [0,1]");
  for (const auto& e : p.impact_map) {
    if (!(e.weight >= 0.0) || !std::isfinite(e.weight)) throw Error(ErrorCode::InvalidPolicy, "impact weight must be >= 0");
  }
  for (const auto& w : p.whitelist) {
    if (w.user.empty() || w.app.empty() || w.path_scope.empty()) {
      throw Error(ErrorCode::InvalidPolicy, "whitelist entries need user, app and path scope");
    }
  }
}

inline void validate(const Context& c) {
  if (c.user.empty() || c.app.empty() || c.path.empty() || c.file_type.empty()) {
    throw Error(ErrorCode::InvalidPolicy, "context fields must be non-empty");
  }
  if (c.path.front() != '/') throw Error(ErrorCode::InvalidPolicy, "context path must be absolute: " + c.path);
}

/// Weight of the first matching impact entry; 1.0 when none matches.
inline double impact(const RiskPolicy& p, const Context& c) {
  for (const auto& e : p.impact_map) {
    if (e.user && *e.user != c.user) continue;
    if (e.app && *e.app != c.app) continue;
    if (e.file_type && *e.file_type != c.file_type) continue;
    if (e.path_scope && !glob_match(p.expand(*e.path_scope, c.user), c.path)) continue;
    return e.weight;
  }
  return 1.0;
}

inline double risk(double p_enc, const Context& c, const RiskPolicy& p) { return p_enc * impact(p, c); }

inline bool whitelisted(const RiskPolicy& p, const Context& c) {
  return std::any_of(p.whitelist.begin(), p.whitelist.end(), [&](const WhitelistEntry& w) {
    return w.user == c.user && w.app == c.app && (!w.file_type || *w.file_type == c.file_type) &&
           glob_match(p.expand(w.path_scope, c.user), c.path);
  });
}

enum class Decision { Allow, Block };
enum class Source { Whitelist, Rule, Model, OrComposition };

inline std::string_view to_string(Decision d) { return d == Decision::Allow ? "allow" : "block"; }

inline std::string_view to_string(Source s) {
  switch (s) {
    case Source::Whitelist: return "whitelist";
    case Source::Rule: return "rule";
    case Source::Model: return "model";
    case Source::OrComposition: return "or_composition";
  }
  return "unknown";
}

struct Verdict {
  Decision decision = Decision::Allow;
  Source source = Source::Model;
  double p_enc = 0.0;
  double risk = 0.0;
  double latency_us = 0.0;
  std::uint64_t bytes_seen = 0;

  bool blocks() const { return decision == Decision::Block; }
};

/// Whitelist first, then R < tau allows, otherwise block. `layer` records
/// which detector produced p_enc.
inline Verdict decide(double p_enc, const Context& c, const RiskPolicy& p, Source layer = Source::Model) {
  if (!(p_enc >= 0.0 && p_enc <= 1.0)) throw Error(ErrorCode::InvalidProbability, "p_enc outside [0,1]");
  Verdict v;
  v.p_enc = p_enc;
  v.risk = risk(p_enc, c, p);
  if (whitelisted(p, c)) {
    v.decision = Decision::Allow;
    v.source = Source::Whitelist;
    return v;
  }
  v.source = layer;
  v.decision = v.risk < p.tau ? Decision::Allow : Decision::Block;
  return v;
}

/// Blocks when either layer blocks. A blocking result carries the earliest
/// blocking layer's latency and bytes; an allow carries the slower layer's.
inline Verdict two_layer(const Verdict& rule, const Verdict& model) {
  Verdict v;
  v.source = Source::OrComposition;
  v.p_enc = std::max(rule.p_enc, model.p_enc);
  v.risk = std::max(rule.risk, model.risk);
  if (rule.blocks() || model.blocks()) {
    v.decision = Decision::Block;
    const Verdict* first = nullptr;
    for (const Verdict* l : {&rule, &model}) {
      if (l->blocks() && (!first || l->latency_us < first->latency_us)) first = l;
    }
    v.latency_us = first->latency_us;
    v.bytes_seen = first->bytes_seen;
  } else {
    v.decision = Decision::Allow;
    const Verdict& slow = rule.latency_us >= model.latency_us ? rule : model;
    v.latency_us = slow.latency_us;
    v.bytes_seen = slow.bytes_seen;
  }
  return v;
}

// JSON: {tau, home_root?, impact: [{user?, app?, path?, type?, weight}],
//        whitelist: [{user, app, path, type?}]}

inline RiskPolicy policy_from_json(const nlohmann::json& j) {
  RiskPolicy p;
  try {
    p.tau = j.value("tau", 0.50);
    p.home_root = j.value("home_root", std::string("/home"));
    auto opt = [](const nlohmann::json& e, const char* k) -> std::optional<std::string> {
      if (e.contains(k)) return e.at(k).get<std::string>();
      return std::nullopt;
    };
    for (const auto& e : j.value("impact", nlohmann::json::array())) {
      p.impact_map.push_back({opt(e, "user"), opt(e, "app"), opt(e, "path"), opt(e, "type"), e.value("weight", 1.0)});
    }
    for (const auto& e : j.value("whitelist", nlohmann::json::array())) {
      p.whitelist.push_back(
          {e.at("user").get<std::string>(), e.at("app").get<std::string>(), e.at("path").get<std::string>(), opt(e, "type")});
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::InvalidPolicy, ex.what());
  }
  validate(p);
  return p;
}

inline nlohmann::json policy_to_json(const RiskPolicy& p) {
  nlohmann::json j;
  j["tau"] = p.tau;
  j["home_root"] = p.home_root;
  j["impact"] = nlohmann::json::array();
  for (const auto& e : p.impact_map) {
    nlohmann::json o;
    if (e.user) o["user"] = *e.user;
    if (e.app) o["app"] = *e.app;
    if (e.path_scope) o["path"] = *e.path_scope;
    if (e.file_type) o["type"] = *e.file_type;
    o["weight"] = e.weight;
    j["impact"].push_back(o);
  }
  j["whitelist"] = nlohmann::json::array();
  for (const auto& w : p.whitelist) {
    nlohmann::json o = {{"user", w.user}, {"app", w.app}, {"path", w.path_scope}};
    if (w.file_type) o["type"] = *w.file_type;
    j["whitelist"].push_back(o);
  }
  return j;
}

inline RiskPolicy load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open policy file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::InvalidPolicy, ex.what());
  }
  return policy_from_json(j);
}

/// u1 may run openssl under $HOME/**; nothing else is whitelisted.
inline RiskPolicy default_policy() {
  RiskPolicy p;
  p.whitelist.push_back({"u1", "openssl", "$HOME/**", std::nullopt});
  return p;
}

}  // namespace encguard
