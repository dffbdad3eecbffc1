#include <doctest.h>

#include <atomic>
#include <mutex>
#include <random>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

#include "lemmaforge/iterate.hpp"
#include "support.hpp"

using namespace lemmaforge;
using namespace lemmaforge::iterate;
using corpus::FormalStatement;
using corpus::make_statement;

namespace {

std::vector<FormalStatement> toy_statements(std::size_t n, const std::string& prefix = "s") {
  std::vector<FormalStatement> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(make_statement(fmt::format("{}{}", prefix, i),
                                 fmt::format("theorem t{} : {} + {} = {} :=", i, i, i, 2 * i)));
  return out;
}

std::string slurp(const std::filesystem::path& p) { return read_text_file(p); }

}  // namespace

TEST_SUITE("iterate") {
  TEST_CASE("null prover solves nothing") {
    SourceMap sources{{"toy", toy_statements(20)}};
    ScriptedProver prover({});
    verify::ToyChecker toy;
    IterationConfig cfg{0, {"toy"}, 4, false, 1, true};
    auto r = run_iteration(cfg, sources, {}, prover, toy, {});
    CHECK(r.report.newly_solved_count == 0);
    CHECK(r.solved.empty());
    CHECK(r.sft.empty());
    CHECK(r.report.prover_calls == 80);
    CHECK(r.attempts.size() == 80);
  }

  TEST_CASE("even-digit prover solves exactly half") {
    SourceMap sources{{"toy", toy_statements(100)}};
    CallbackProver prover([](const ProverRequest& req) {
      const char last = req.statement_id.back();
      const bool even = (last - '0') % 2 == 0;
      return std::vector<std::string>(static_cast<std::size_t>(req.num_samples),
                                      even ? "by eval" : "by simp");
    });
    verify::ToyChecker toy;
    IterationConfig cfg{0, {"toy"}, 2, false, 1, true};
    auto r = run_iteration(cfg, sources, {}, prover, toy, {});
    CHECK(r.report.statements_attempted == 100);
    CHECK(r.report.newly_solved_count == 50);
    CHECK(r.report.cumulative_solved_count == 50);
    CHECK(r.report.solved_per_source.at("toy") == 50);
    CHECK(r.sft.size() == 50);
    for (const auto& rec : r.sft) {
      CHECK(rec.text.ends_with(":= by eval"));
      CHECK(rec.source == "toy");
    }
  }

  TEST_CASE("prover failures are skipped and logged") {
    SourceMap sources{{"toy", toy_statements(10)}};
    CallbackProver prover([](const ProverRequest& req) -> std::vector<std::string> {
      if (req.statement_id == "s3") throw InfrastructureError("server down");
      if (req.statement_id == "s4") return {"by eval"};  // wrong count
      return std::vector<std::string>(static_cast<std::size_t>(req.num_samples), "by eval");
    });
    verify::ToyChecker toy;
    IterationConfig cfg{0, {"toy"}, 3, false, 1, true};
    auto r = run_iteration(cfg, sources, {}, prover, toy, {});
    CHECK(r.report.skipped == 2);
    CHECK(r.skip_log.size() == 2);
    CHECK(r.report.newly_solved_count == 8);
    CHECK_FALSE(r.solved.contains("s3"));
  }

  TEST_CASE("requests carry seeded per-statement data") {
    SourceMap sources{{"toy", toy_statements(5)}};
    std::mutex m;
    std::map<std::string, ProverRequest> seen;
    CallbackProver prover([&](const ProverRequest& req) {
      std::lock_guard lock(m);
      seen[req.statement_id] = req;
      return std::vector<std::string>(static_cast<std::size_t>(req.num_samples), "by simp");
    });
    verify::ToyChecker toy;
    IterationConfig cfg{0, {"toy"}, 16, false, 42, true};
    run_iteration(cfg, sources, {}, prover, toy, {});
    REQUIRE(seen.size() == 5);
    for (const auto& [id, req] : seen) {
      CHECK(req.num_samples == 16);
      CHECK(req.seed == derive_seed(42, id));
      CHECK(req.body.ends_with(":="));
    }
  }

  TEST_CASE("resample_solved=false skips solved statements") {
    SourceMap sources{{"toy", toy_statements(10)}};
    ScriptedProver prover({{"s1", {{"by eval"}, 0}}, {"s2", {{"by eval"}, 0}}});
    verify::ToyChecker toy;
    IterationConfig cfg{0, {"toy"}, 2, false, 1, true};
    auto first = run_iteration(cfg, sources, {}, prover, toy, {});
    CHECK(first.solved.size() == 2);
    cfg.k = 1;
    cfg.resample_solved = false;
    auto second = run_iteration(cfg, sources, {}, prover, toy, first.solved);
    CHECK(second.report.statements_attempted == 8);
    CHECK(second.report.prover_calls == 16);
    cfg.resample_solved = true;
    auto third = run_iteration(cfg, sources, {}, prover, toy, first.solved);
    CHECK(third.report.statements_attempted == 10);
    CHECK(third.solved.find("s1")->iteration_found == 0);
  }

  TEST_CASE("unknown source is a config error") {
    ScriptedProver prover({});
    verify::ToyChecker toy;
    IterationConfig cfg{0, {"missing"}, 2, false, 1, true};
    CHECK_THROWS_AS(run_iteration(cfg, {}, {}, prover, toy, {}), ConfigError);
  }

  TEST_CASE("build_sft_dataset") {
    SourceMap sources{{"toy", toy_statements(10)}};
    CallbackProver prover([](const ProverRequest& req) {
      return std::vector<std::string>(static_cast<std::size_t>(req.num_samples), "by eval");
    });
    verify::ToyChecker toy;
    auto r = run_iteration({0, {"toy"}, 1, false, 1, true}, sources, {}, prover, toy, {});
    REQUIRE(r.solved.size() == 10);
    CHECK(build_sft_dataset(r.solved).size() == 10);

    std::vector<SFTRecord> library;
    for (int i = 0; i < 104; ++i)
      library.push_back({fmt::format("lib{}", i), "theorem x : 1 = 1 := by eval", "by eval", "mathlib"});
    auto with_lib = build_sft_dataset(r.solved, library);
    CHECK(with_lib.size() == 114);
    CHECK(with_lib.back().source == kLibrarySource);
    library.push_back({"s0", "dup", "", ""});
    CHECK(build_sft_dataset(r.solved, library).size() == 114);

    testing::TempDir dir;
    write_sft(dir / "a.jsonl", build_sft_dataset(r.solved, library));
    write_sft(dir / "b.jsonl", build_sft_dataset(r.solved, library));
    CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));
    CHECK(load_sft(dir / "a.jsonl").size() == 114);

    auto lib_iter = run_iteration({1, {"toy"}, 1, true, 1, true}, sources, library, prover, toy, r.solved);
    CHECK(lib_iter.sft.size() == 114);
  }

  TEST_CASE("plan_schedule") {
    CHECK(plan_schedule(json::object()).iterations.empty());
    CHECK(plan_schedule(json{{"iterations", json::array()}}).iterations.empty());

    json j = {{"sources", {{"a", "a.jsonl"}, {"b", "/abs/b.jsonl"}}},
              {"iterations",
               {{{"k", 2}, {"sources", {"a", "b"}}},
                {{"k", 0}, {"sources", {"a"}}, {"samples_per_statement", 4}},
                {{"k", 1}, {"sources", {"b"}}, {"resample_solved", false}}}}};
    auto s = plan_schedule(j, "/base");
    REQUIRE(s.iterations.size() == 3);
    CHECK(s.iterations[0].k == 0);
    CHECK(s.iterations[0].samples_per_statement == 4);
    CHECK(s.iterations[1].samples_per_statement == 16);
    CHECK_FALSE(s.iterations[1].resample_solved);
    CHECK(s.iterations[2].k == 2);
    CHECK(s.sources.at("a") == std::filesystem::path("/base/a.jsonl"));
    CHECK(s.sources.at("b") == std::filesystem::path("/abs/b.jsonl"));
    CHECK(s.warnings.size() == 1);  // iteration 1 drops "a"

    json dup = {{"sources", {{"a", "a"}}}, {"iterations", {{{"k", 0}}, {{"k", 0}}}}};
    CHECK_THROWS_AS(plan_schedule(dup), ConfigError);
    json bad_src = {{"iterations", {{{"k", 0}, {"sources", {"zzz"}}}}}};
    CHECK_THROWS_AS(plan_schedule(bad_src), ConfigError);
    json zero = {{"sources", {{"a", "a"}}}, {"iterations", {{{"k", 0}, {"samples_per_statement", 0}}}}};
    CHECK_THROWS_AS(plan_schedule(zero), ConfigError);
  }

  TEST_CASE("three-iteration run grows, stays one-proof, and replays byte-equal") {
    testing::TempDir dir;
    auto all = toy_statements(60);
    std::vector<FormalStatement> early(all.begin(), all.begin() + 30);
    std::vector<FormalStatement> late(all.begin() + 30, all.end());
    corpus::write_statements(dir / "early.jsonl", early);
    corpus::write_statements(dir / "late.jsonl", late);

    std::vector<json> script;
    for (std::size_t i = 0; i < all.size(); ++i) {
      // a third unlock immediately, a third after 15 SFT records, a third never
      const std::size_t gate = i % 3 == 0 ? 0 : i % 3 == 1 ? 15 : 1000;
      script.push_back(json{{"statement_id", all[i].id},
                            {"proofs", {"by simp", "by eval", "by sorry"}},
                            {"min_training", gate}});
    }
    write_jsonl(dir / "prover.jsonl", script);
    json sched = {{"sources", {{"early", "early.jsonl"}, {"late", "late.jsonl"}}},
                  {"iterations",
                   {{{"k", 0}, {"sources", {"early"}}, {"samples_per_statement", 4}, {"seed", 7}},
                    {{"k", 1}, {"sources", {"early", "late"}}, {"samples_per_statement", 4}, {"seed", 8}},
                    {{"k", 2}, {"sources", {"early", "late"}}, {"samples_per_statement", 4}, {"seed", 9}}}}};
    write_text_file(dir / "schedule.json", sched.dump());

    auto run = [&](const std::string& state) {
      auto prover = ScriptedProver::from_file(dir / "prover.jsonl");
      verify::ToyChecker toy;
      return run_schedule(plan_schedule(dir / "schedule.json"), prover, toy, dir / state, {4, 4});
    };
    auto a = run("state-a");
    auto b = run("state-b");
    REQUIRE(a.size() == 3);
    for (std::size_t i = 1; i < a.size(); ++i)
      CHECK(a[i].cumulative_solved_count >= a[i - 1].cumulative_solved_count);
    CHECK(a[0].cumulative_solved_count == 10);
    CHECK(a[1].cumulative_solved_count == 20);
    CHECK(a[2].cumulative_solved_count == 40);

    for (const std::string f : {"solved.jsonl", "sft-0.jsonl", "sft-1.jsonl", "sft-2.jsonl",
                                "attempts-0.jsonl", "attempts-2.jsonl", "reports/iter-0.json",
                                "reports/iter-2.json"})
      CHECK_MESSAGE(slurp(dir / "state-a" / f) == slurp(dir / "state-b" / f), f);

    for (int k = 0; k < 3; ++k) {
      auto sft = load_sft(dir / "state-a" / fmt::format("sft-{}.jsonl", k));
      std::set<std::string> ids;
      for (const auto& r : sft) CHECK(ids.insert(r.statement_id).second);
    }

    // resume: a rerun over a finished state replays without changes
    auto before = slurp(dir / "state-a" / "solved.jsonl");
    auto c = run("state-a");
    CHECK(c[2].cumulative_solved_count == 40);
    CHECK(slurp(dir / "state-a" / "solved.jsonl") == before);
  }

  TEST_CASE("solved sets form a chain") {
    SourceMap sources{{"toy", toy_statements(40)}};
    std::mt19937_64 rng(5);
    std::vector<std::string> menu{"by eval", "by simp", "by sorry", "by\n  eval"};
    CallbackProver prover([&](const ProverRequest& req) {
      std::mt19937_64 local(req.seed);
      std::vector<std::string> out;
      for (int i = 0; i < req.num_samples; ++i) out.push_back(menu[local() % menu.size()]);
      return out;
    });
    verify::ToyChecker toy;
    corpus::SolvedSet solved;
    for (int k = 0; k < 5; ++k) {
      auto r = run_iteration({k, {"toy"}, 1, false, rng(), true}, sources, {}, prover, toy, solved);
      for (const auto& [id, e] : solved.entries()) {
        REQUIRE(r.solved.contains(id));
        CHECK(r.solved.find(id)->proof.proof_text == e.proof.proof_text);
      }
      CHECK(r.report.prover_calls == r.report.statements_attempted * 1);
      solved = r.solved;
    }
  }

  TEST_CASE("http prover") {
    httplib::Server server;
    server.Post("/prove", [](const httplib::Request& req, httplib::Response& res) {
      auto body = json::parse(req.body);
      std::vector<std::string> proofs(body["num_samples"].get<std::size_t>(), "by eval");
      res.set_content(json{{"proofs", proofs}}.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    HttpProver prover(http::parse_url(fmt::format("http://127.0.0.1:{}/prove", port)));
    SourceMap sources{{"toy", toy_statements(5)}};
    verify::ToyChecker toy;
    auto r = run_iteration({0, {"toy"}, 3, false, 0, true}, sources, {}, prover, toy, {});
    CHECK(r.report.newly_solved_count == 5);
    server.stop();
    t.join();
  }
}
