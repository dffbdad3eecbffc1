#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <map>
#include <sys/wait.h>

#include <fmt/format.h>

#include "lemmaforge/pipeline.hpp"
#include "support.hpp"
#include "toy_world.hpp"

using namespace lemmaforge;
using namespace lemmaforge::pipeline;
namespace fs = std::filesystem;

namespace {

// Relative path -> contents, logs excluded.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root).generic_string();
    if (rel.find("logs/") != std::string::npos) continue;
    out[rel] = read_text_file(e.path());
  }
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = fmt::format("{} {} > /dev/null 2>&1", LEMMAFORGE_CLI, args);
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("backend arguments") {
    CHECK(parse_backend_arg("mock").kind == "mock");
    CHECK(parse_backend_arg("mock:/tmp/s.jsonl").script == fs::path("/tmp/s.jsonl"));
    CHECK(parse_backend_arg("http://localhost:9/x").endpoint == "http://localhost:9/x");
    CHECK(parse_backend_arg("http:http://h:1/p").endpoint == "http://h:1/p");
    CHECK(parse_backend_arg("toy").kind == "toy");
    CHECK_THROWS_AS(parse_backend_arg("grpc:x"), ConfigError);
    CHECK_THROWS_AS(parse_backend_arg("http:"), ConfigError);
  }

  TEST_CASE("config validation") {
    testing::TempDir dir;
    write_text_file(dir / "b.jsonl", "");

    auto minimal = validate_config(json{{"run_dir", "out"}, {"seed", 3}}, dir.path());
    REQUIRE(minimal.ok());
    CHECK(minimal.errors.empty());
    CHECK(minimal.config->run_dir == dir / "out");
    CHECK(minimal.config->checker.kind == "toy");
    CHECK(minimal.config->configured_stages().empty());

    auto no_endpoint = validate_config(json{{"run_dir", "out"}, {"seed", 3}, {"prover", {{"kind", "http"}}}}, dir.path());
    CHECK_FALSE(no_endpoint.ok());
    REQUIRE(no_endpoint.errors.size() == 1);
    CHECK(no_endpoint.errors[0].find("prover.endpoint") != std::string::npos);

    auto from_env = validate_config(json{{"run_dir", "out"}, {"seed", 3}, {"prover", {{"kind", "http"}}}}, dir.path(),
                                    {{std::string(kProverUrlEnv), "http://127.0.0.1:8/prove"}});
    REQUIRE(from_env.ok());
    CHECK(from_env.config->prover->endpoint == "http://127.0.0.1:8/prove");

    auto three = validate_config(json{{"run_dir", "out"},
                                      {"checker", {{"kind", "lean4"}}},
                                      {"stages", {{"quality", {{"bundles", "missing.jsonl"}}}}},
                                      {"judge", {{"kind", "mock"}, {"script", "b.jsonl"}}}},
                                 dir.path());
    CHECK_FALSE(three.ok());
    CHECK(three.errors.size() == 3);

    auto warned = validate_config(json{{"run_dir", "out"}, {"seed", 1}, {"colour", "blue"},
                                       {"checker", {{"kind", "toy"}, {"speed", 3}}}},
                                  dir.path());
    CHECK(warned.ok());
    CHECK(warned.warnings.size() == 2);

    auto needs = validate_config(json{{"run_dir", "out"}, {"seed", 1}, {"stages", {{"evaluate", json::object()}}}},
                                 dir.path());
    REQUIRE(needs.errors.size() == 1);
    CHECK(needs.errors[0].find("stages.evaluate.attempts") != std::string::npos);

    write_text_file(dir / "broken.json", "{ not json");
    CHECK(validate_config(dir / "broken.json").errors.size() == 1);
  }

  TEST_CASE("full toy run is complete, fast and reproducible") {
    testing::TempDir dir;
    const auto cfg_path = testing::write_toy_world(dir.path());
    auto v = validate_config(cfg_path);
    for (const auto& e : v.errors) MESSAGE(e);
    REQUIRE(v.ok());

    const auto t0 = std::chrono::steady_clock::now();
    const auto r = run_pipeline(*v.config);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const auto& s : r.stages) CHECK_MESSAGE(s.status == "ok", s.stage, ": ", s.detail);
    CHECK(r.exit_code == 0);
    CHECK(secs < 60);

    const fs::path run = dir / "run";
    for (const char* f : {"manifest.json", "logs/pipeline.log", "quality/selected.jsonl", "quality/report.json",
                          "iterate/solved.jsonl", "iterate/sft-2.jsonl", "iterate/reports/iter-2.json",
                          "evaluate/summary.json", "evaluate/scaling.csv", "prefdata/dpo_pairs.jsonl",
                          "prefdata/rewards.jsonl", "sketch/outcomes.jsonl", "sketch/simplify.jsonl"})
      CHECK_MESSAGE(fs::exists(run / f), f);

    const json manifest = json::parse(read_text_file(run / "manifest.json"));
    CHECK(manifest["stages"].size() == 5);
    CHECK(manifest["seed"] == 7);
    CHECK(manifest["config"] == v.config->to_json());

    std::vector<std::size_t> cumulative;
    for (int k = 0; k < 3; ++k)
      cumulative.push_back(json::parse(read_text_file(run / fmt::format("iterate/reports/iter-{}.json", k)))
                               ["cumulative_solved_count"]);
    CHECK(cumulative == std::vector<std::size_t>{50, 100, 150});

    std::map<std::string, std::string> statuses;
    for_each_jsonl(run / "sketch/outcomes.jsonl",
                   [&](const json& j, std::size_t) { statuses[j["statement_id"]] = j["status"]; });
    CHECK(statuses.size() == 6);
    CHECK(statuses["k0"] == "pass");
    CHECK(statuses["k5"] == "subgoal_failed");

    // same config, same directory: iterate replays, everything else recomputes
    const auto before = snapshot(run);
    const auto log_size = fs::file_size(run / "logs/pipeline.log");
    CHECK(run_pipeline(*v.config).exit_code == 0);
    CHECK(snapshot(run) == before);
    CHECK(fs::file_size(run / "logs/pipeline.log") > log_size);

    // fresh directory: stage outputs match byte for byte
    auto other = *v.config;
    other.run_dir = dir / "run-b";
    CHECK(run_pipeline(other).exit_code == 0);
    auto a = before, b = snapshot(other.run_dir);
    a.erase("manifest.json");
    b.erase("manifest.json");
    CHECK(a == b);
  }

  TEST_CASE("stage subsets and failures") {
    testing::TempDir dir;
    const auto cfg_path = testing::write_toy_world(dir.path(), {40, 4, 3, 100, 4});
    auto v = validate_config(cfg_path);
    REQUIRE(v.ok());

    // evaluate alone with no iterate output is skipped
    auto r = run_pipeline(*v.config, {"evaluate"});
    REQUIRE(r.stages.size() == 1);
    CHECK(r.stages[0].status == "skipped");
    CHECK(r.exit_code == 1);

    CHECK(run_pipeline(*v.config, {"iterate"}).exit_code == 0);
    fs::remove_all(dir / "run" / "evaluate");
    r = run_pipeline(*v.config, {"evaluate"});
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(dir / "run/evaluate/summary.json"));
    CHECK_FALSE(fs::exists(dir / "run/prefdata"));
    CHECK_FALSE(fs::exists(dir / "run/quality"));

    CHECK_THROWS_AS(run_pipeline(*v.config, {"train"}), ConfigError);

    // a prover that disappears fails iterate; its consumers are skipped,
    // independent stages still run
    auto broken = *v.config;
    broken.run_dir = dir / "run-broken";
    broken.prover->script = dir / "gone.jsonl";
    r = run_pipeline(broken);
    CHECK(r.exit_code == 1);
    std::map<std::string, std::string> st;
    for (const auto& s : r.stages) st[s.stage] = s.status;
    CHECK(st["quality"] == "ok");
    CHECK(st["iterate"] == "failed");
    CHECK(st["evaluate"] == "skipped");
    CHECK(st["prefdata"] == "skipped");
    CHECK(st["sketch"] == "failed");
  }

  TEST_CASE("command line exit codes") {
    testing::TempDir dir;
    const auto cfg = testing::write_toy_world(dir.path(), {40, 4, 3, 100, 4});
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("") == 2);
    CHECK(run_cli("eval pass") == 2);
    CHECK(run_cli(fmt::format("--config {} pipeline --validate-only", cfg.string())) == 0);

    json bad = json::parse(read_text_file(cfg));
    bad.erase("seed");
    bad["checker"]["kind"] = "coq";
    write_text_file(dir / "bad.json", bad.dump());
    CHECK(run_cli(fmt::format("--config {} pipeline", (dir / "bad.json").string())) == 2);

    CHECK(run_cli(fmt::format("--config {} --log-level warn pipeline --stages iterate,evaluate,prefdata", cfg.string())) == 0);
    const fs::path attempts = dir / "run/iterate/attempts-2.jsonl";
    CHECK(run_cli(fmt::format("eval pass --run {} --n 16 --bootstrap 50", attempts.string())) == 0);
    CHECK(run_cli(fmt::format("eval pass --run {} --n 17", attempts.string())) == 1);
    CHECK(run_cli(fmt::format("eval stats --proofs {} --passing-only", attempts.string())) == 0);
    CHECK(run_cli(fmt::format("--seed 4 prefdata dpo --attempts {} --bucket 0,0.25 --out {}", attempts.string(),
                              (dir / "pairs.jsonl").string())) == 0);
    CHECK(fs::exists(dir / "pairs.jsonl"));
    CHECK(run_cli(fmt::format("prefdata rewards --attempts {} --timeout-reward -4", attempts.string())) == 2);
    CHECK(run_cli(fmt::format("prefdata dpo --attempts {} --bucket 0.5,0.25", attempts.string())) == 2);
    CHECK(run_cli(fmt::format("sketch simplify --statements {} --simplifier toy --out {}",
                              (dir / "statements.jsonl").string(), (dir / "simp.jsonl").string())) == 0);
    CHECK(run_cli(fmt::format("sketch run --statement {} --proof {} --prover mock:{} --attempts 32",
                              (dir / "sketch_statements.jsonl").string(), (dir / "sketch_proofs.jsonl").string(),
                              (dir / "prover_script.jsonl").string())) == 0);
    CHECK(run_cli(fmt::format("iterate run --schedule {} --state-dir {} --prover mock --prover-script {} --timeout-ms 100",
                              (dir / "schedule.json").string(), (dir / "state").string(),
                              (dir / "prover_script.jsonl").string())) == 0);
    CHECK(read_text_file(dir / "state/sft-2.jsonl") == read_text_file(dir / "run/iterate/sft-2.jsonl"));
    CHECK(run_cli(fmt::format("iterate run --schedule {} --state-dir {}", (dir / "schedule.json").string(),
                              (dir / "state2").string())) == 2);
    CHECK(run_cli(fmt::format("quality gate --bundles {} --judge mock:{} --report {}", (dir / "bundles.jsonl").string(),
                              (dir / "judge_script.jsonl").string(), (dir / "gate.json").string())) == 0);
    CHECK(fs::exists(dir / "gate.txt"));
  }
}
