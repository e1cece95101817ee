#include <gtest/gtest.h>

#include "encguard/metrics.hpp"
#include "encguard/policy.hpp"
#include "encguard/random.hpp"

using namespace encguard;

namespace {

Context ctx(std::string user, std::string app, std::string path) { return {user, app, path, "user_home_t"}; }

}  // namespace

TEST(Impact, DefaultsToOne) {
  RiskPolicy p;
  EXPECT_DOUBLE_EQ(impact(p, ctx("u1", "gpg", "/srv/x")), 1.0);
}

TEST(Impact, FirstMatchWins) {
  RiskPolicy p;
  p.impact_map.push_back({std::nullopt, std::nullopt, "/srv/shared/**", std::nullopt, 2.0});
  p.impact_map.push_back({std::nullopt, std::nullopt, "/srv/**", std::nullopt, 5.0});
  EXPECT_DOUBLE_EQ(impact(p, ctx("u1", "gpg", "/srv/shared/a/b")), 2.0);
  EXPECT_DOUBLE_EQ(impact(p, ctx("u1", "gpg", "/srv/other")), 5.0);
  EXPECT_DOUBLE_EQ(impact(p, ctx("u1", "gpg", "/home/u1/x")), 1.0);
}

TEST(Impact, HomeExpansionPerUser) {
  RiskPolicy p;
  p.impact_map.push_back({std::nullopt, std::nullopt, "$HOME/secret/**", std::nullopt, 3.0});
  EXPECT_DOUBLE_EQ(impact(p, ctx("u1", "a", "/home/u1/secret/k")), 3.0);
  EXPECT_DOUBLE_EQ(impact(p, ctx("u2", "a", "/home/u1/secret/k")), 1.0);
}

TEST(Risk, Formula) {
  RiskPolicy p;
  p.impact_map.push_back({std::nullopt, std::nullopt, "/srv/**", std::nullopt, 2.0});
  EXPECT_DOUBLE_EQ(risk(0.5, ctx("u", "a", "/srv/f"), p), 1.0);
  EXPECT_DOUBLE_EQ(risk(0.0, ctx("u", "a", "/srv/f"), p), 0.0);
  EXPECT_DOUBLE_EQ(risk(0.94, ctx("u1", "openssl", "/home/u1/docs/f.txt"), default_policy()), 0.94);
}

TEST(Risk, Bilinear) {
  Rng rng(1);
  RiskPolicy p;
  p.impact_map.push_back({std::nullopt, std::nullopt, "/srv/**", std::nullopt, 1.7});
  for (int i = 0; i < 500; ++i) {
    const double pe = uniform01(rng), a = uniform01(rng);
    auto c = ctx("u", "a", i % 2 ? "/srv/x" : "/tmp/x");
    ASSERT_NEAR(risk(a * pe, c, p), a * risk(pe, c, p), 1e-12);
  }
}

TEST(Whitelist, CryptoToolTable) {
  auto p = default_policy();
  EXPECT_TRUE(whitelisted(p, ctx("u1", "openssl", "/home/u1/docs/f.txt")));
  EXPECT_FALSE(whitelisted(p, ctx("u2", "openssl", "/home/u2/x")));
  EXPECT_FALSE(whitelisted(p, ctx("u1", "gpg", "/home/u1/docs/f.txt")));
  EXPECT_FALSE(whitelisted(p, ctx("u1", "openssl", "/srv/shared/f")));
}

TEST(Whitelist, FileTypeWhenSpecified) {
  RiskPolicy p;
  p.whitelist.push_back({"u1", "openssl", "$HOME/**", std::string("user_home_t")});
  Context c = ctx("u1", "openssl", "/home/u1/f");
  EXPECT_TRUE(whitelisted(p, c));
  c.file_type = "ssh_home_t";
  EXPECT_FALSE(whitelisted(p, c));
}

TEST(Whitelist, CaseSensitive) {
  auto p = default_policy();
  EXPECT_FALSE(whitelisted(p, ctx("U1", "openssl", "/home/U1/f")));
  EXPECT_FALSE(whitelisted(p, ctx("u1", "OpenSSL", "/home/u1/f")));
}

TEST(Decide, Examples) {
  auto p = default_policy();
  auto v = decide(0.94, ctx("u1", "openssl", "/home/u1/docs/f.txt"), p);
  EXPECT_EQ(v.decision, Decision::Allow);
  EXPECT_EQ(v.source, Source::Whitelist);
  v = decide(0.95, ctx("u1", "openssl", "/srv/shared/f"), p);
  EXPECT_EQ(v.decision, Decision::Block);
  v = decide(0.3, ctx("u1", "gpg", "/home/u1/f"), p);
  EXPECT_EQ(v.decision, Decision::Allow);
  EXPECT_EQ(v.source, Source::Model);
}

TEST(Decide, AtThresholdBlocks) {
  auto p = default_policy();
  EXPECT_EQ(decide(0.5, ctx("u1", "gpg", "/home/u1/f"), p).decision, Decision::Block);
}

TEST(Decide, InvalidProbability) {
  auto p = default_policy();
  for (double bad : {-0.1, 1.01, std::nan("")}) {
    try {
      decide(bad, ctx("u1", "gpg", "/x"), p);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::InvalidProbability);
    }
  }
}

TEST(Decide, WhitelistPrecedence) {
  auto p = default_policy();
  p.impact_map.push_back({std::nullopt, std::nullopt, "/home/**", std::nullopt, 100.0});
  for (double pe : {0.0, 0.5, 0.99, 1.0}) {
    EXPECT_EQ(decide(pe, ctx("u1", "openssl", "/home/u1/a/b"), p).decision, Decision::Allow);
  }
}

TEST(Decide, RiskEqualsPTimesImpact) {
  Rng rng(2);
  RiskPolicy p;
  p.impact_map.push_back({std::nullopt, "gpg", std::nullopt, std::nullopt, 1.3});
  for (int i = 0; i < 200; ++i) {
    const double pe = uniform01(rng);
    auto v = decide(pe, ctx("u", i % 2 ? "gpg" : "tar", "/x"), p);
    ASSERT_NEAR(v.risk, pe * (i % 2 ? 1.3 : 1.0), 1e-12);
  }
}

TEST(TwoLayer, TruthTableAndLatency) {
  Verdict block11{Decision::Block, Source::Rule, 1, 1, 11000, 100};
  Verdict block24{Decision::Block, Source::Model, 1, 1, 24000, 900};
  Verdict allow5{Decision::Allow, Source::Rule, 0, 0, 5000, 10};
  Verdict allow7{Decision::Allow, Source::Model, 0, 0, 7000, 20};
  EXPECT_EQ(two_layer(block11, allow7).decision, Decision::Block);
  EXPECT_EQ(two_layer(allow5, allow7).decision, Decision::Allow);
  EXPECT_DOUBLE_EQ(two_layer(allow5, allow7).latency_us, 7000);
  auto v = two_layer(block11, block24);
  EXPECT_EQ(v.decision, Decision::Block);
  EXPECT_DOUBLE_EQ(v.latency_us, 11000);
  EXPECT_EQ(v.bytes_seen, 100u);
  EXPECT_EQ(v.source, Source::OrComposition);
  EXPECT_DOUBLE_EQ(two_layer(allow5, block24).latency_us, 24000);
}

TEST(TwoLayer, RecallDominatesEachLayer) {
  Rng rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> r, m, o;
    std::vector<int> y;
    for (int i = 0; i < 100; ++i) {
      y.push_back(static_cast<int>(uniform_below(rng, 2)));
      const bool rb = uniform01(rng) < (y.back() ? 0.7 : 0.1);
      const bool mb = uniform01(rng) < (y.back() ? 0.8 : 0.1);
      Verdict rv{rb ? Decision::Block : Decision::Allow, Source::Rule};
      Verdict mv{mb ? Decision::Block : Decision::Allow, Source::Model};
      r.push_back(rb);
      m.push_back(mb);
      o.push_back(two_layer(rv, mv).blocks());
    }
    const double ro = recall(confusion(o, y, 0.5));
    ASSERT_GE(ro, recall(confusion(r, y, 0.5)));
    ASSERT_GE(ro, recall(confusion(m, y, 0.5)));
  }
}

TEST(Threshold, MonotoneBlocks) {
  Rng rng(4);
  auto p = default_policy();
  std::vector<double> s;
  for (int i = 0; i < 300; ++i) s.push_back(uniform01(rng));
  int prev = 1 << 30;
  for (double tau = 0.0; tau <= 1.0; tau += 0.05) {
    p.tau = tau;
    int blocks = 0;
    for (double pe : s) blocks += decide(pe, ctx("u9", "x", "/srv/a"), p).blocks();
    ASSERT_LE(blocks, prev);
    prev = blocks;
  }
}

TEST(PolicyJson, RoundTripAndValidation) {
  auto j = nlohmann::json::parse(R"({
    "tau": 0.7,
    "impact": [{"path": "/srv/shared/**", "weight": 2.0}, {"app": "gpg", "weight": 1.5}],
    "whitelist": [{"user": "u1", "app": "openssl", "path": "$HOME/**"}]
  })");
  auto p = policy_from_json(j);
  EXPECT_DOUBLE_EQ(p.tau, 0.7);
  ASSERT_EQ(p.impact_map.size(), 2u);
  EXPECT_EQ(policy_to_json(policy_from_json(policy_to_json(p))), policy_to_json(p));

  EXPECT_THROW(policy_from_json(nlohmann::json::parse(R"({"tau": 1.5})")), Error);
  EXPECT_THROW(policy_from_json(nlohmann::json::parse(R"({"impact": [{"weight": -1}]})")), Error);
  EXPECT_THROW(policy_from_json(nlohmann::json::parse(R"({"whitelist": [{"user": "u1"}]})")), Error);
}

TEST(ContextValidation, RejectsRelativeAndEmpty) {
  EXPECT_THROW(validate(ctx("u", "a", "rel/path")), Error);
  EXPECT_THROW(validate(ctx("", "a", "/p")), Error);
  EXPECT_NO_THROW(validate(ctx("u", "a", "/p")));
}
