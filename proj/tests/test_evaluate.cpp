#include <doctest.h>

#include <bit>
#include <cmath>
#include <random>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "lemmaforge/evaluate.hpp"
#include "support.hpp"

using namespace lemmaforge;
using namespace lemmaforge::evaluate;
using verify::Status;

namespace {

AttemptSet attempts(const std::string& id, std::initializer_list<int> passes) {
  AttemptSet s{id, {}};
  for (int p : passes) {
    verify::Verdict v;
    v.status = p ? Status::pass : Status::fail;
    if (!p) v.diagnostics.push_back({"no", 1, 1});
    s.verdicts.push_back(v);
  }
  return s;
}

BenchmarkRun random_run(std::mt19937_64& rng, std::size_t statements, std::size_t samples,
                        double p) {
  BenchmarkRun run;
  std::bernoulli_distribution pass(p);
  for (std::size_t i = 0; i < statements; ++i) {
    AttemptSet s{fmt::format("s{}", i), {}};
    for (std::size_t j = 0; j < samples; ++j) {
      verify::Verdict v;
      v.status = pass(rng) ? Status::pass : Status::timeout;
      s.verdicts.push_back(v);
    }
    run.sets.push_back(std::move(s));
  }
  return run;
}

// Fraction of k-subsets of n samples that contain at least one of the first c.
BigRational subset_oracle(int n, int c, int k) {
  std::int64_t hit = 0, total = 0;
  const unsigned passes = (1u << c) - 1;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (std::popcount(mask) != k) continue;
    ++total;
    hit += (mask & passes) != 0;
  }
  return BigRational(hit, total);
}

double long_form_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

}  // namespace

TEST_SUITE("evaluate") {
  TEST_CASE("pass_at_n_empirical") {
    BenchmarkRun fail_all{"custom", "m", {attempts("a", {0, 0}), attempts("b", {0, 0})}};
    CHECK(pass_at_n_empirical(fail_all, 2) == Ratio(0, 1));
    BenchmarkRun pass_all{"custom", "m", {attempts("a", {1, 0}), attempts("b", {0, 1})}};
    CHECK(pass_at_n_empirical(pass_all, 2) == Ratio(1, 1));
    BenchmarkRun mixed{"custom", "m",
                       {attempts("a", {1}), attempts("b", {0}), attempts("c", {1}), attempts("d", {1})}};
    CHECK(pass_at_n_empirical(mixed, 1) == Ratio(3, 4));
    CHECK_THROWS_AS(pass_at_n_empirical(mixed, 2), ContractViolation);
    CHECK_THROWS_AS(pass_at_n_empirical(mixed, 0), ContractViolation);
  }

  TEST_CASE("pass_at_k_unbiased boundaries and errors") {
    for (int k = 1; k <= 16; ++k) {
      CHECK(pass_at_k_unbiased(16, 0, k) == 0);
      CHECK(pass_at_k_unbiased(16, 16, k) == 1);
    }
    CHECK(pass_at_k_unbiased(16, 4, 8) == subset_oracle(16, 4, 8));
    CHECK_THROWS_AS(pass_at_k_unbiased(4, 5, 1), ContractViolation);
    CHECK_THROWS_AS(pass_at_k_unbiased(4, 1, 5), ContractViolation);
    CHECK_THROWS_AS(pass_at_k_unbiased(4, 1, 0), ContractViolation);
    CHECK_THROWS_AS(pass_at_k_unbiased(4, -1, 1), ContractViolation);
    const double big = pass_at_k_unbiased_double(10'000, 37, 3200);
    CHECK(big > 0.999);
    CHECK(big <= 1.0);
  }

  TEST_CASE("pass_at_k_unbiased matches subset enumeration and is monotone") {
    for (int n = 1; n <= 12; ++n)
      for (int c = 0; c <= n; ++c)
        for (int k = 1; k <= n; ++k) {
          const auto v = pass_at_k_unbiased(n, c, k);
          CHECK(v == subset_oracle(n, c, k));
          if (k > 1) CHECK(v >= pass_at_k_unbiased(n, c, k - 1));
          if (c > 0) CHECK(v >= pass_at_k_unbiased(n, c - 1, k));
        }
  }

  TEST_CASE("bootstrap") {
    BenchmarkRun all{"custom", "m", {attempts("a", {1, 1, 1}), attempts("b", {1, 1})}};
    auto r = bootstrap_ci(all, 2, 50, 1);
    CHECK(r.mean == 1.0);
    CHECK(r.std == 0.0);
    CHECK_THROWS_AS(bootstrap_ci(all, 2, 1, 1), ContractViolation);

    std::mt19937_64 rng(9);
    auto run = random_run(rng, 244, 32, 0.5);
    const auto a = bootstrap_ci(run, 1, 1000, 77);
    const auto b = bootstrap_ci(run, 1, 1000, 77);
    CHECK(fmt::format("{:.17g} {:.17g}", a.mean, a.std) == fmt::format("{:.17g} {:.17g}", b.mean, b.std));
    CHECK(a.std >= 0.0);
    CHECK(a.std <= 0.05);
    CHECK(std::abs(a.mean - 0.5) < 0.1);
  }

  TEST_CASE("scaling curve") {
    BenchmarkRun run{"custom", "m",
                     {attempts("a", {1, 0, 0, 0}), attempts("b", {0, 0, 0, 1}),
                      attempts("c", {0, 0, 0, 0}), attempts("d", {0, 0, 0, 0})}};
    const std::vector<std::size_t> one{1};
    CHECK(scaling_curve(run, one).size() == 1);
    const std::vector<std::size_t> budgets{1, 2, 4};
    auto curve = scaling_curve(run, budgets);
    CHECK(curve[0].second == Ratio(1, 4));
    CHECK(curve[1].second == Ratio(1, 4));
    CHECK(curve[2].second == Ratio(1, 2));
    CHECK(scaling_csv(curve) == "budget,rate\n1,0.250000\n2,0.250000\n4,0.500000\n");
    const std::vector<std::size_t> bad{2, 1};
    CHECK_THROWS_AS(scaling_curve(run, bad), ContractViolation);

    std::mt19937_64 rng(2);
    const std::vector<std::size_t> b8{1, 2, 4, 8};
    for (int t = 0; t < 100; ++t) {
      auto r = random_run(rng, 20, 8, 0.15);
      auto c = scaling_curve(r, b8);
      for (std::size_t i = 1; i < c.size(); ++i) CHECK(c[i].second >= c[i - 1].second);
    }
  }

  TEST_CASE("correlation") {
    std::vector<RunRates> runs{{"r1", {{"x", 0.1}, {"y", 0.1}, {"z", -0.1}}},
                               {"r2", {{"x", 0.5}, {"y", 0.5}, {"z", -0.5}}},
                               {"r3", {{"x", 0.3}, {"y", 0.3}, {"z", -0.3}}}};
    auto m = cross_dataset_correlation(runs);
    REQUIRE(m.benchmarks == std::vector<std::string>{"x", "y", "z"});
    CHECK(m.values[0][1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m.values[0][2] == doctest::Approx(-1.0).epsilon(1e-12));

    std::vector<RunRates> two(runs.begin(), runs.begin() + 2);
    CHECK_THROWS_AS(cross_dataset_correlation(two), ContractViolation);
    auto flat = runs;
    for (auto& r : flat) r.rates["y"] = 0.4;
    try {
      cross_dataset_correlation(flat);
      FAIL("constant column accepted");
    } catch (const ContractViolation& e) {
      CHECK(std::string(e.what()).find("'y'") != std::string::npos);
    }

    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<RunRates> rr;
      const std::vector<std::string> names{"minif2f_test", "proofnet", "putnambench", "numinatest"};
      for (int r = 0; r < 5; ++r) {
        RunRates row{fmt::format("run{}", r), {}};
        for (const auto& n : names) row.rates[n] = u(rng);
        rr.push_back(row);
      }
      auto cm = cross_dataset_correlation(rr);
      Eigen::MatrixXd M(cm.benchmarks.size(), cm.benchmarks.size());
      for (std::size_t a = 0; a < cm.benchmarks.size(); ++a) {
        CHECK(cm.values[a][a] == 1.0);
        for (std::size_t b = 0; b < cm.benchmarks.size(); ++b) {
          M(a, b) = cm.values[a][b];
          CHECK(cm.values[a][b] == cm.values[b][a]);
          std::vector<double> x, y;
          for (const auto& row : rr) {
            x.push_back(row.rates.at(cm.benchmarks[a]));
            y.push_back(row.rates.at(cm.benchmarks[b]));
          }
          CHECK(std::abs(cm.values[a][b] - long_form_pearson(x, y)) < 1e-9);
        }
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
      CHECK(es.eigenvalues().minCoeff() >= -1e-9);
    }
  }

  TEST_CASE("rate matrix groups by model") {
    std::vector<BenchmarkRun> runs{
        {"minif2f_test", "m1", {attempts("a", {1}), attempts("b", {0})}},
        {"proofnet", "m1", {attempts("a", {1})}},
        {"minif2f_test", "m2", {attempts("a", {0}), attempts("b", {0})}},
    };
    auto rows = rate_matrix(runs, 1);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].rates.at("minif2f_test") == 0.5);
    CHECK(rows[0].rates.at("proofnet") == 1.0);
    runs.push_back(runs[0]);
    CHECK_THROWS_AS(rate_matrix(runs, 1), IntegrityError);
  }

  TEST_CASE("proof style") {
    CHECK(proof_stats("by\n  try norm_num\n  try ring").try_count == 2);
    CHECK(proof_stats("by\n  -- try ring\n  simp").try_count == 0);
    CHECK(proof_stats("by\n  /- try -/ simp").try_count == 0);
    CHECK(proof_stats("by\n  exact \"try\"").try_count == 0);
    CHECK(proof_stats("by\n  trying; try_this; tryhard").try_count == 0);
    CHECK(proof_stats("by\n  <;> try simp").try_count == 1);
    CHECK(proof_stats("a\r\nb").length == 3);
    CHECK(proof_stats("ℝ≤").length == 2);

    auto empty = proof_style_report({});
    CHECK(empty.empty);
    CHECK(empty.proofs == 0);
    CHECK(empty.avg_length == Ratio(0, 1));
  }

  TEST_CASE("style fixture reproduces hand counts") {
    const auto path = testing::fixture("style_corpus.jsonl");
    std::vector<std::string> proofs;
    for_each_jsonl(path, [&](const json& j, std::size_t) {
      const auto st = proof_stats(j.at("proof_text").get<std::string>());
      CHECK(st.length == j.at("expected_length").get<std::size_t>());
      CHECK(st.try_count == j.at("expected_try").get<std::size_t>());
      proofs.push_back(j.at("proof_text").get<std::string>());
    });
    CHECK(load_proof_texts(path) == proofs);
    auto r = proof_style_report(proofs);
    CHECK(r.avg_length == Ratio(298, 1));
    CHECK(r.avg_try == Ratio(3, 2));
  }

  TEST_CASE("run loading") {
    testing::TempDir dir;
    std::vector<json> recs{
        {{"statement_id", "a"}, {"sample_index", 1}, {"status", "pass"}, {"benchmark", "minif2f_test"}, {"model", "m"}},
        {{"statement_id", "a"}, {"sample_index", 0}, {"status", "fail"}, {"diagnostics", json::array()}},
        {{"statement_id", "b"}, {"sample_index", 0}, {"status", "timeout"}},
        {{"statement_id", "b"}, {"sample_index", 1}, {"status", "infrastructure_error"}},
    };
    write_jsonl(dir / "run.jsonl", recs);
    auto run = load_run(dir / "run.jsonl");
    CHECK(run.benchmark == "minif2f_test");
    CHECK(run.model == "m");
    REQUIRE(run.sets.size() == 2);
    CHECK(run.sets[0].verdicts[0].status == Status::fail);
    CHECK(run.sets[0].verdicts[1].status == Status::pass);
    CHECK(run.sets[0].c() == 1);
    CHECK(pass_at_n_empirical(run, 1) == Ratio(0, 1));
    CHECK(pass_at_n_empirical(run, 2) == Ratio(1, 2));

    auto gap = recs;
    gap.pop_back();
    gap.push_back({{"statement_id", "b"}, {"sample_index", 2}, {"status", "pass"}});
    write_jsonl(dir / "gap.jsonl", gap);
    CHECK_THROWS_AS(load_run(dir / "gap.jsonl"), IntegrityError);

    auto dup = recs;
    dup.push_back(recs[2]);
    write_jsonl(dir / "dup.jsonl", dup);
    CHECK_THROWS_AS(load_run(dir / "dup.jsonl"), IntegrityError);

    auto reg = default_registry();
    CHECK(reg.at("minif2f_test").size + reg.at("minif2f_valid").size == 488);
    CHECK(reg.at("proofnet").size == 371);
    CHECK(reg.at("putnambench").size == 644);
    CHECK(reg.at("numinatest").size == 250);
    CHECK_THROWS_AS(check_coverage(run, reg), IntegrityError);
    reg["minif2f_test"].size = 2;
    CHECK_NOTHROW(check_coverage(run, reg));
  }
}
