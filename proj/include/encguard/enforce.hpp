// Copyright 2026 The encguard Authors
// SPDX-License-Identifier: Apache-2.0

// CIL module emission, an evaluator for the subset of CIL the emitter
// produces, the rule_block/ml_block state machine and the audit log.

#pragma once

#include <cctype>
#include <cstdint>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "encguard/error.hpp"
#include "encguard/policy.hpp"

namespace encguard {

struct CilConfig {
  std::string block_name = "encryption_rbac_base";
  /// Extra non-temporary user file types gated like user_home_t.
  std::vector<std::string> scoped_types;
  /// Temporary file types; writes to them are never gated.
  std::vector<std::string> temporary_types;
  /// Emit an unconditional write/append allow for subjects carrying the
  /// whitelisted-app attribute.
  bool app_scoped_allow = false;
};

struct CilModule {
  std::string text;
};

/// The default config reproduces the reference sketch line for line.
inline CilModule emit_cil(const CilConfig& cfg = {}) {
  std::ostringstream o;
  o << "(block " << cfg.block_name << "\n";
  o << "  (type encryption_t) (type crypto_exec_t) (type user_home_t)\n";
  for (const auto& t : cfg.scoped_types) o << "  (type " << t << ")\n";
  for (const auto& t : cfg.temporary_types) o << "  (type " << t << ")\n";
  o << "  (typeattribute enc_whitelisted_app)\n";
  o << "  (typeattribute enc_whitelisted_user)\n";
  o << "  (boolean rule_block false) (boolean ml_block false)\n";
  o << "  (allow encryption_t user_home_t (file (read getattr open)))\n";
  for (const auto& t : cfg.scoped_types) o << "  (allow encryption_t " << t << " (file (read getattr open)))\n";
  for (const auto& t : cfg.temporary_types) {
    o << "  (allow encryption_t " << t << " (file (read getattr open write append)))\n";
  }
  o << "  (allow encryption_t crypto_exec_t (file (read execute entrypoint)))\n";
  if (cfg.app_scoped_allow) o << "  (allow enc_whitelisted_app user_home_t (file (write append)))\n";
  o << "  (booleanif (and (not rule_block) (not ml_block))\n";
  o << "    (true (allow encryption_t user_home_t (file (write append)))";
  for (const auto& t : cfg.scoped_types) o << "\n          (allow encryption_t " << t << " (file (write append)))";
  o << "))\n";
  o << ")\n";
  return {o.str()};
}

// s-expressions

struct SExpr {
  std::string atom;
  std::vector<SExpr> list;
  bool is_atom = false;
};

namespace detail {

inline SExpr parse_sexpr(std::string_view s, std::size_t& i) {
  auto skip = [&] {
    while (i < s.size()) {
      if (std::isspace(static_cast<unsigned char>(s[i]))) {
        ++i;
      } else if (s[i] == ';') {
        while (i < s.size() && s[i] != '\n') ++i;
      } else {
        break;
      }
    }
  };
  skip();
  if (i >= s.size()) throw Error(ErrorCode::InvalidPolicy, "unexpected end of CIL text");
  SExpr e;
  if (s[i] == '(') {
    ++i;
    for (;;) {
      skip();
      if (i >= s.size()) throw Error(ErrorCode::InvalidPolicy, "unbalanced '(' in CIL text");
      if (s[i] == ')') {
        ++i;
        return e;
      }
      e.list.push_back(parse_sexpr(s, i));
    }
  }
  if (s[i] == ')') throw Error(ErrorCode::InvalidPolicy, "unbalanced ')' in CIL text");
  e.is_atom = true;
  while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i])) && s[i] != '(' && s[i] != ')' && s[i] != ';') {
    e.atom += s[i++];
  }
  return e;
}

}  // namespace detail

inline std::vector<SExpr> parse_cil(std::string_view text) {
  std::vector<SExpr> out;
  std::size_t i = 0;
  for (;;) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= text.size()) break;
    out.push_back(detail::parse_sexpr(text, i));
  }
  return out;
}

/// Evaluates access checks against a parsed module. Supports type,
/// typeattribute, typeattributeset, boolean, allow and booleanif with
/// and/or/not conditions.
class CilEvaluator {
 public:
  struct Allow {
    std::string source, target, cls;
    std::set<std::string> perms;
    std::shared_ptr<const SExpr> condition;  // null: unconditional
    bool when = true;                  // branch the allow sits in
  };

  explicit CilEvaluator(const CilModule& m) {
    for (const auto& f : parse_cil(m.text)) walk(f);
    check_references();
  }

  const std::set<std::string>& types() const { return types_; }
  const std::map<std::string, bool>& boolean_defaults() const { return bool_defaults_; }
  const std::vector<Allow>& allows() const { return allows_; }

  std::size_t booleanif_count() const { return booleanif_count_; }

  bool is_type(const std::string& t) const { return types_.count(t) > 0; }

  /// `attributes` are extra attributes the subject carries for this check.
  bool allowed(const std::string& subject, const std::set<std::string>& attributes, const std::string& target,
               const std::string& cls, const std::string& perm, const std::map<std::string, bool>& booleans) const {
    if (!is_type(subject)) throw Error(ErrorCode::UnknownType, "undeclared subject type " + subject);
    if (!is_type(target)) throw Error(ErrorCode::UnknownType, "undeclared target type " + target);
    for (const auto& a : allows_) {
      if (a.cls != cls || !a.perms.count(perm)) continue;
      if (!matches(a.source, subject, attributes) || !matches(a.target, target, {})) continue;
      if (a.condition && eval(*a.condition, booleans) != a.when) continue;
      return true;
    }
    return false;
  }

 private:
  bool matches(const std::string& name, const std::string& type, const std::set<std::string>& extra) const {
    if (name == type) return true;
    if (extra.count(name)) return true;
    auto it = members_.find(name);
    return it != members_.end() && it->second.count(type);
  }

  bool eval(const SExpr& e, const std::map<std::string, bool>& b) const {
    if (e.is_atom) {
      auto it = b.find(e.atom);
      if (it != b.end()) return it->second;
      auto d = bool_defaults_.find(e.atom);
      if (d == bool_defaults_.end()) throw Error(ErrorCode::InvalidPolicy, "unknown boolean " + e.atom);
      return d->second;
    }
    const auto& op = e.list.at(0).atom;
    if (op == "not") return !eval(e.list.at(1), b);
    if (op == "and") return eval(e.list.at(1), b) && eval(e.list.at(2), b);
    if (op == "or") return eval(e.list.at(1), b) || eval(e.list.at(2), b);
    throw Error(ErrorCode::InvalidPolicy, "unsupported boolean operator " + op);
  }

  static std::string atom_of(const SExpr& e) {
    if (!e.is_atom) throw Error(ErrorCode::InvalidPolicy, "expected identifier in CIL form");
    return e.atom;
  }

  void add_allow(const SExpr& f, std::shared_ptr<const SExpr> cond, bool when) {
    if (f.list.size() != 4 || f.list[3].is_atom || f.list[3].list.size() != 2) {
      throw Error(ErrorCode::InvalidPolicy, "malformed allow statement");
    }
    Allow a{atom_of(f.list[1]), atom_of(f.list[2]), atom_of(f.list[3].list[0]), {}, cond, when};
    for (const auto& p : f.list[3].list[1].list) a.perms.insert(atom_of(p));
    allows_.push_back(std::move(a));
  }

  void walk(const SExpr& f) {
    if (f.is_atom || f.list.empty()) throw Error(ErrorCode::InvalidPolicy, "unexpected bare atom in CIL text");
    const auto& head = atom_of(f.list[0]);
    if (head == "block") {
      for (std::size_t i = 2; i < f.list.size(); ++i) walk(f.list[i]);
    } else if (head == "type") {
      types_.insert(atom_of(f.list.at(1)));
    } else if (head == "typeattribute") {
      attributes_.insert(atom_of(f.list.at(1)));
    } else if (head == "typeattributeset") {
      auto& m = members_[atom_of(f.list.at(1))];
      for (const auto& t : f.list.at(2).list) m.insert(atom_of(t));
    } else if (head == "boolean") {
      const auto v = atom_of(f.list.at(2));
      if (v != "true" && v != "false") throw Error(ErrorCode::InvalidPolicy, "boolean default must be true or false");
      bool_defaults_[atom_of(f.list.at(1))] = v == "true";
    } else if (head == "allow") {
      add_allow(f, nullptr, true);
    } else if (head == "booleanif") {
      ++booleanif_count_;
      auto cond = std::make_shared<const SExpr>(f.list.at(1));
      for (std::size_t i = 2; i < f.list.size(); ++i) {
        const auto& branch = f.list[i];
        const auto tag = atom_of(branch.list.at(0));
        if (tag != "true" && tag != "false") throw Error(ErrorCode::InvalidPolicy, "booleanif branch must be true/false");
        for (std::size_t k = 1; k < branch.list.size(); ++k) add_allow(branch.list[k], cond, tag == "true");
      }
    } else {
      throw Error(ErrorCode::InvalidPolicy, "unsupported CIL statement " + head);
    }
  }

  void check_references() const {
    for (const auto& a : allows_) {
      for (const auto& n : {a.source, a.target}) {
        if (!types_.count(n) && !attributes_.count(n)) throw Error(ErrorCode::InvalidPolicy, "undeclared name " + n);
      }
    }
  }

  std::set<std::string> types_;
  std::set<std::string> attributes_;
  std::map<std::string, std::set<std::string>> members_;
  std::map<std::string, bool> bool_defaults_;
  std::vector<Allow> allows_;
  std::size_t booleanif_count_ = 0;
};

// boolean state machine

struct Transition {
  std::int64_t ts_us = 0;
  std::string name;
  bool old_value = false;
  bool new_value = false;
  std::string verdict_id;
};

struct BooleanState {
  bool rule_block = false;
  bool ml_block = false;
  std::vector<Transition> log;

  std::map<std::string, bool> values() const { return {{"rule_block", rule_block}, {"ml_block", ml_block}}; }
  bool any() const { return rule_block || ml_block; }
};

/// A rule-layer verdict drives rule_block and a model-layer verdict drives
/// ml_block. Whitelist and composed verdicts are ignored. Unchanged values
/// add no log entry.
inline BooleanState& apply_verdict(BooleanState& s, Source layer, Decision d, std::int64_t ts_us,
                                   const std::string& verdict_id) {
  bool* flag = nullptr;
  std::string name;
  if (layer == Source::Rule) {
    flag = &s.rule_block;
    name = "rule_block";
  } else if (layer == Source::Model) {
    flag = &s.ml_block;
    name = "ml_block";
  } else {
    return s;
  }
  const bool want = d == Decision::Block;
  if (*flag != want) {
    s.log.push_back({ts_us, name, *flag, want, verdict_id});
    *flag = want;
  }
  return s;
}

inline BooleanState& apply_verdict(BooleanState& s, const Verdict& v, std::int64_t ts_us, const std::string& id) {
  return apply_verdict(s, v.source, v.decision, ts_us, id);
}

// audit

enum class Op { Read, Getattr, Open, Write, Append, Execute };

inline std::string_view to_string(Op op) {
  switch (op) {
    case Op::Read: return "read";
    case Op::Getattr: return "getattr";
    case Op::Open: return "open";
    case Op::Write: return "write";
    case Op::Append: return "append";
    case Op::Execute: return "execute";
  }
  return "unknown";
}

inline constexpr Op kAllOps[] = {Op::Read, Op::Getattr, Op::Open, Op::Write, Op::Append, Op::Execute};

struct AuditRecord {
  std::int64_t ts_us = 0;
  std::string subject;
  std::string path;
  std::string type;
  Op op = Op::Read;
  Decision decision = Decision::Allow;
  bool rule_block = false;
  bool ml_block = false;
  std::string verdict_id;
};

inline constexpr std::string_view kAuditHeader = "ts_us,subject,path,type,op,decision,rule_block,ml_block,verdict_id";

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string o = "\"";
  for (char c : s) {
    if (c == '"') o += '"';
    o += c;
  }
  return o + "\"";
}

}  // namespace detail

/// Append-only CSV sink; writes the header on construction and flushes
/// after every record.
class AuditSink {
 public:
  explicit AuditSink(std::ostream& out) : out_(out) { out_ << kAuditHeader << '\n' << std::flush; }

  void append(const AuditRecord& r) {
    if (count_ > 0 && r.ts_us < last_ts_) {
      throw Error(ErrorCode::InvalidRange, "audit timestamps must be non-decreasing");
    }
    out_ << r.ts_us << ',' << detail::csv_field(r.subject) << ',' << detail::csv_field(r.path) << ','
         << detail::csv_field(r.type) << ',' << to_string(r.op) << ',' << (r.decision == Decision::Allow ? "allow" : "deny") << ','
         << (r.rule_block ? 1 : 0) << ',' << (r.ml_block ? 1 : 0) << ',' << detail::csv_field(r.verdict_id) << '\n'
         << std::flush;
    last_ts_ = r.ts_us;
    ++count_;
  }

  std::size_t count() const { return count_; }

 private:
  std::ostream& out_;
  std::int64_t last_ts_ = 0;
  std::size_t count_ = 0;
};

inline void write_audit(const std::vector<AuditRecord>& records, std::ostream& out) {
  AuditSink sink(out);
  for (const auto& r : records) sink.append(r);
}

/// Checks one access against the module under the current booleans. A
/// whitelisted context gives the subject the enc_whitelisted_app attribute.
inline AuditRecord simulate_access(const BooleanState& state, const CilEvaluator& cil, const std::string& subject,
                                   const std::string& target_type, Op op, const Context& ctx, bool whitelisted_app,
                                   std::int64_t ts_us = 0, const std::string& verdict_id = "") {
  std::set<std::string> attrs;
  if (whitelisted_app) attrs.insert("enc_whitelisted_app");
  AuditRecord r;
  r.ts_us = ts_us;
  r.subject = subject;
  r.path = ctx.path;
  r.type = target_type;
  r.op = op;
  r.rule_block = state.rule_block;
  r.ml_block = state.ml_block;
  r.verdict_id = verdict_id;
  r.decision = cil.allowed(subject, attrs, target_type, "file", std::string(to_string(op)), state.values())
                   ? Decision::Allow
                   : Decision::Block;
  return r;
}

}  // namespace encguard
