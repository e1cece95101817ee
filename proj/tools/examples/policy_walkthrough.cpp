// Decide the four crypto-tool contexts under the default whitelist, then
// replay each verdict through the emitted CIL module and show the audit line
// a write attempt would produce.

#include <iostream>

#include "encguard/enforce.hpp"

using namespace encguard;

int main() {
  const RiskPolicy policy = default_policy();
  CilConfig cfg;
  cfg.scoped_types = {"public_content_t"};
  cfg.app_scoped_allow = true;
  const CilEvaluator cil(emit_cil(cfg));

  const Context contexts[] = {{"u1", "openssl", "/home/u1/docs/report.odt", "user_home_t"},
                              {"u1", "gpg", "/home/u1/docs/report.odt", "user_home_t"},
                              {"u1", "openssl", "/srv/shared/report.odt", "public_content_t"},
                              {"u2", "openssl", "/home/u2/report.odt", "user_home_t"}};
  std::int64_t ts = 1000;
  for (const auto& c : contexts) {
    const Verdict v = decide(0.97, c, policy);
    BooleanState state;
    apply_verdict(state, Source::Model, v.decision, ts, "demo");
    const auto audit =
        simulate_access(state, cil, "encryption_t", c.file_type, Op::Write, c, v.source == Source::Whitelist, ts + 1);
    std::cout << c.user << ' ' << c.app << ' ' << c.path << ": " << to_string(v.decision) << " via "
              << to_string(v.source) << ", write " << (audit.decision == Decision::Allow ? "allowed" : "denied")
              << '\n';
    ts += 1000;
  }
  std::cout << '\n' << emit_cil().text;
}
