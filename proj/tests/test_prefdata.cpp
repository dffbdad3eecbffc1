#include <doctest.h>

#include <cmath>
#include <algorithm>
#include <random>
#include <set>

#include <fmt/format.h>

#include "lemmaforge/evaluate.hpp"
#include "lemmaforge/prefdata.hpp"
#include "support.hpp"

using namespace lemmaforge;
using namespace lemmaforge::prefdata;
using verify::Status;

namespace {

SampleSet make_set(const std::string& id, std::size_t passes, std::size_t n,
                   Status other = Status::fail) {
  SampleSet s{id, {}};
  for (std::size_t i = 0; i < n; ++i)
    s.samples.push_back({static_cast<std::int64_t>(i), fmt::format("proof {}", i),
                         i < passes ? Status::pass : other});
  return s;
}

}  // namespace

TEST_SUITE("prefdata") {
  TEST_CASE("pass ratio") {
    CHECK(pass_ratio(make_set("a", 4, 16)) == Ratio(1, 4));
    CHECK(pass_ratio(make_set("a", 0, 16)) == Ratio(0, 1));
    CHECK(pass_ratio(make_set("a", 5, 16)) == Ratio(5, 16));
    CHECK_THROWS_AS(pass_ratio(SampleSet{"e", {}}), ContractViolation);
  }

  TEST_CASE("buckets") {
    const PassRatioBucket quarter(Ratio(0, 1), Ratio(1, 4));
    CHECK(quarter.contains(Ratio(1, 4)));
    CHECK_FALSE(quarter.contains(Ratio(0, 1)));
    CHECK_THROWS_AS(PassRatioBucket(Ratio(1, 2), Ratio(1, 2)), ContractViolation);
    CHECK_THROWS_AS(PassRatioBucket(Ratio(0, 1), Ratio(5, 4)), ContractViolation);
    const auto parsed = PassRatioBucket::parse("0, 0.25");
    CHECK(parsed.upper == Ratio(1, 4));
    CHECK(PassRatioBucket::parse("0,3/4").upper == Ratio(3, 4));
    CHECK_THROWS_AS(PassRatioBucket::parse("0.25"), ConfigError);
    CHECK_THROWS_AS(PassRatioBucket::parse("0.5,0.25"), ConfigError);

    std::vector<SampleSet> sets;
    for (std::size_t c = 0; c <= 16; ++c) sets.push_back(make_set(fmt::format("c{:02}", c), c, 16));
    auto kept = bucket_statements(sets, quarter);
    REQUIRE(kept.size() == 4);
    for (std::size_t i = 0; i < kept.size(); ++i) CHECK(kept[i].c() == i + 1);

    // nested buckets give nested selections
    std::vector<std::set<std::string>> nested;
    for (int q = 1; q <= 4; ++q) {
      std::set<std::string> ids;
      for (const auto& s : bucket_statements(sets, PassRatioBucket(Ratio(0, 1), Ratio(q, 4))))
        ids.insert(s.statement_id);
      nested.push_back(ids);
    }
    for (std::size_t i = 1; i < nested.size(); ++i)
      CHECK(std::includes(nested[i].begin(), nested[i].end(), nested[i - 1].begin(), nested[i - 1].end()));
    CHECK(nested.back().size() == 16);
  }

  TEST_CASE("dpo pairs") {
    auto one = make_set("one", 1, 16);
    std::set<std::int64_t> rejected_seen;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      auto r = build_dpo_pairs(std::span<const SampleSet>(&one, 1), false, seed);
      REQUIRE(r.pairs.size() == 1);
      CHECK(r.pairs[0].chosen.sample_index == 0);
      rejected_seen.insert(r.pairs[0].rejected.sample_index);
    }
    CHECK(rejected_seen.size() == 15);

    SampleSet lp{"lp", {}};
    lp.samples = {{0, std::string(120, 'a'), Status::pass},
                  {1, std::string(85, 'b'), Status::pass},
                  {2, std::string(300, 'c'), Status::pass},
                  {3, std::string(10, 'd'), Status::fail},
                  {4, std::string(85, 'e'), Status::pass}};
    auto r = build_dpo_pairs(std::span<const SampleSet>(&lp, 1), true, 3);
    REQUIRE(r.pairs.size() == 1);
    CHECK(r.pairs[0].chosen.proof_text.size() == 85);
    CHECK(r.pairs[0].chosen.sample_index == 1);
    CHECK(r.pairs[0].rejected.sample_index == 3);

    std::vector<SampleSet> sets{make_set("b", 3, 8), make_set("all", 8, 8), make_set("none", 0, 8),
                                make_set("a", 2, 8, Status::timeout)};
    auto d1 = build_dpo_pairs(sets, false, 11);
    auto d2 = build_dpo_pairs(sets, false, 11);
    REQUIRE(d1.pairs.size() == 2);
    CHECK(d1.skip_log.size() == 2);
    CHECK(d1.pairs[0].statement_id == "a");
    CHECK(d1.pairs[0].rejected_status == Status::timeout);
    for (std::size_t i = 0; i < d1.pairs.size(); ++i) CHECK(to_json(d1.pairs[i]) == to_json(d2.pairs[i]));
    std::reverse(sets.begin(), sets.end());
    auto d3 = build_dpo_pairs(sets, false, 11);
    for (std::size_t i = 0; i < d1.pairs.size(); ++i) CHECK(to_json(d1.pairs[i]) == to_json(d3.pairs[i]));
  }

  TEST_CASE("length-penalized choice is minimal among passes") {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 100; ++t) {
      SampleSet s{fmt::format("s{}", t), {}};
      for (int i = 0; i < 16; ++i)
        s.samples.push_back({i, std::string(1 + rng() % 40, 'x'), rng() % 3 ? Status::pass : Status::fail});
      auto r = build_dpo_pairs(std::span<const SampleSet>(&s, 1), true, t);
      if (r.pairs.empty()) continue;
      for (const auto& x : s.samples)
        if (x.status == Status::pass) CHECK(r.pairs[0].chosen.proof_text.size() <= x.proof_text.size());
    }
  }

  TEST_CASE("pairs re-verify under the toy checker") {
    verify::ToyChecker toy;
    std::vector<corpus::FormalStatement> stmts;
    std::vector<json> records;
    const std::vector<std::string> menu{"by eval", "by simp", "by\n  try simp\n  eval", "by sorry",
                                        "by\n  have h : 1 = 1 := by eval\n  eval", "by\n  sleep 5000"};
    std::mt19937_64 rng(4);
    for (int i = 0; i < 40; ++i) {
      stmts.push_back(corpus::make_statement(fmt::format("p{:02}", i),
                                             fmt::format("theorem t : {} * 2 = {} :=", i, 2 * i)));
      for (int j = 0; j < 16; ++j) {
        const auto proof = menu[rng() % menu.size()];
        auto v = toy.check({stmts.back(), proof, verify::Millis(20), "x", false});
        records.push_back(json{{"statement_id", stmts.back().id},
                               {"sample_index", j},
                               {"proof_text", proof},
                               {"status", verify::to_string(v.status)}});
      }
    }
    auto sets = sample_sets_from_records(records);
    auto d = build_dpo_pairs(bucket_statements(sets, PassRatioBucket(Ratio(0, 1), Ratio(1, 1))), false, 1);
    CHECK_FALSE(d.pairs.empty());
    for (const auto& p : d.pairs) {
      const auto& st = *std::find_if(stmts.begin(), stmts.end(), [&](auto& s) { return s.id == p.statement_id; });
      CHECK(toy.check({st, p.chosen.proof_text, verify::Millis(20), "c", false}).status == Status::pass);
      CHECK(toy.check({st, p.rejected.proof_text, verify::Millis(20), "r", false}).status != Status::pass);
    }
  }

  TEST_CASE("rewards") {
    SampleSet mix{"m", {{0, "a", Status::pass}, {1, "b", Status::fail}, {2, "c", Status::timeout}}};
    auto r = assign_rewards(mix);
    REQUIRE(r.size() == 3);
    CHECK(r[0].reward == 8);
    CHECK(r[1].reward == -8);
    CHECK(r[2].reward == -8);
    for (double t : {0.0, -8.0, -16.0}) {
      RewardConfig cfg;
      cfg.timeout_reward = t;
      CHECK(assign_rewards(mix, cfg)[2].reward == t);
      CHECK(assign_rewards(mix, cfg)[0].reward == 8);
      CHECK(assign_rewards(mix, cfg)[1].reward == -8);
    }
    RewardConfig bad;
    bad.timeout_reward = -4;
    CHECK_THROWS_AS(assign_rewards(mix, bad), ConfigError);
    RewardConfig inverted;
    inverted.pass_reward = -9;
    CHECK_THROWS_AS(inverted.validate(), ConfigError);

    for (const auto& x : assign_rewards(make_set("p", 16, 16))) CHECK(x.reward == 8);

    auto half = group_reward_summary(make_set("h", 8, 16));
    CHECK(half.mean == 0);
    CHECK(half.std == 8);
    auto fails = group_reward_summary(make_set("f", 0, 16));
    CHECK(fails.mean == -8);
    CHECK(fails.std == 0);

    // 3 pass, 2 fail, 1 timeout at -16: rewards 8,8,8,-8,-8,-16
    SampleSet hand{"hand", {}};
    for (int i = 0; i < 6; ++i)
      hand.samples.push_back({i, "x", i < 3 ? Status::pass : i < 5 ? Status::fail : Status::timeout});
    RewardConfig c16;
    c16.timeout_reward = -16;
    auto s = group_reward_summary(hand, c16);
    const double mean = (8.0 * 3 - 16 - 16) / 6;
    const double var = (3 * (8 - mean) * (8 - mean) + 2 * (-8 - mean) * (-8 - mean) +
                        (-16 - mean) * (-16 - mean)) / 6;
    CHECK(std::abs(s.mean - mean) < 1e-12);
    CHECK(std::abs(s.std - std::sqrt(var)) < 1e-12);
    CHECK_THROWS_AS(group_reward_summary(make_set("one", 1, 1)), ContractViolation);

    std::vector<SampleSet> sets{mix};
    auto recs = reward_records(sets);
    CHECK(recs[2] == json{{"statement_id", "m"}, {"sample_index", 2}, {"status", "timeout"}, {"reward", -8.0}});
  }

  TEST_CASE("sample set loading") {
    testing::TempDir dir;
    std::vector<json> recs{
        {{"statement_id", "b"}, {"sample_index", 1}, {"proof_text", "y"}, {"status", "fail"}},
        {{"statement_id", "b"}, {"sample_index", 0}, {"proof_text", "x"}, {"status", "pass"}},
        {{"statement_id", "a"}, {"sample_index", 0}, {"proof_text", "z"}, {"status", "infrastructure_error"}},
        {{"statement_id", "a"}, {"sample_index", 1}, {"proof_text", "w"}, {"status", "timeout"}},
    };
    write_jsonl(dir / "att.jsonl", recs);
    auto sets = load_sample_sets(dir / "att.jsonl");
    REQUIRE(sets.size() == 2);
    CHECK(sets[0].statement_id == "a");
    CHECK(sets[0].n() == 1);
    CHECK(sets[1].samples[0].proof_text == "x");
    recs.push_back(recs[0]);
    write_jsonl(dir / "dup.jsonl", recs);
    CHECK_THROWS_AS(load_sample_sets(dir / "dup.jsonl"), IntegrityError);
  }
}
