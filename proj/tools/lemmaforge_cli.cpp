// lemmaforge command-line entry point.
//
// Exit codes: 0 success, 1 stage or runtime failure, 2 configuration error.

#include <CLI11.hpp>

#include <fnmatch.h>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "lemmaforge/corpus.hpp"
#include "lemmaforge/evaluate.hpp"
#include "lemmaforge/iterate.hpp"
#include "lemmaforge/pipeline.hpp"
#include "lemmaforge/prefdata.hpp"
#include "lemmaforge/quality.hpp"
#include "lemmaforge/sketch.hpp"
#include "lemmaforge/verify.hpp"

namespace fs = std::filesystem;
using namespace lemmaforge;

namespace {

struct Globals {
  std::optional<fs::path> config_path;
  std::optional<std::uint64_t> seed;
  std::string log_level = "info";
  std::optional<pipeline::PipelineConfig> config;  // loaded lazily

  std::uint64_t effective_seed() const { return seed ? *seed : config ? config->seed : 0; }
};

void load_config(Globals& g) {
  if (!g.config_path) return;
  auto v = pipeline::validate_config(*g.config_path, pipeline::endpoint_environment());
  for (const auto& w : v.warnings) spdlog::warn("{}", w);
  if (!v.ok()) {
    std::string msg = fmt::format("{} has {} error(s):", g.config_path->string(), v.errors.size());
    for (const auto& e : v.errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  g.config = std::move(v.config);
  if (g.seed) g.config->seed = *g.seed;
}

void emit(const std::optional<fs::path>& out, std::span<const json> records) {
  if (out) {
    if (out->has_parent_path()) fs::create_directories(out->parent_path());
    write_jsonl(*out, records);
    return;
  }
  for (const auto& r : records) std::cout << r.dump() << '\n';
}

void emit_json(const std::optional<fs::path>& out, const json& j) {
  if (out) {
    if (out->has_parent_path()) fs::create_directories(out->parent_path());
    write_text_file(*out, j.dump(2) + "\n");
  } else {
    std::cout << j.dump(2) << '\n';
  }
}

// Command-line checker flags, falling back to the config file's checker.
struct CheckerFlags {
  std::optional<std::string> backend;
  std::optional<fs::path> exe;
  std::vector<std::string> args;
  std::optional<std::int64_t> timeout_ms;
  std::optional<std::size_t> pool;

  void add(CLI::App* app, bool with_pool) {
    app->add_option("--backend", backend, "Checker backend")->check(CLI::IsMember({"toy", "external"}));
    app->add_option("--checker-exe", exe, "External checker executable");
    app->add_option("--checker-arg", args, "External checker argument ({file} = scratch source)");
    app->add_option("--timeout-ms", timeout_ms, "Per-job timeout in milliseconds")->check(CLI::PositiveNumber);
    if (with_pool) app->add_option("--pool", pool, "Concurrent checker jobs")->check(CLI::PositiveNumber);
  }

  pipeline::CheckerConfig resolve(const Globals& g) const {
    pipeline::CheckerConfig c = g.config ? g.config->checker : pipeline::CheckerConfig{};
    if (backend) c.kind = *backend;
    if (exe) c.external.executable = *exe;
    if (!args.empty()) c.external.args = args;
    if (timeout_ms) c.timeout = verify::Millis(*timeout_ms);
    if (pool) c.pool = *pool;
    if (c.kind == "external" && c.external.executable.empty())
      throw ConfigError("external checker needs --checker-exe (or checker.executable in the config)");
    return c;
  }
};

pipeline::BackendSpec backend_or_config(const std::optional<std::string>& flag,
                                        const std::optional<fs::path>& script,
                                        const std::optional<pipeline::BackendSpec>& configured,
                                        std::string_view what) {
  if (flag) {
    auto spec = pipeline::parse_backend_arg(*flag);
    if (script) spec.script = *script;
    return spec;
  }
  if (configured) return *configured;
  throw ConfigError(fmt::format("no {} backend: pass --{} or configure one", what, what));
}

// Accepts literal paths and shell-style patterns in the file name part.
std::vector<fs::path> expand_globs(const std::vector<std::string>& patterns) {
  std::vector<fs::path> out;
  for (const auto& p : patterns) {
    const fs::path path(p);
    const std::string name = path.filename().string();
    if (name.find_first_of("*?[") == std::string::npos) {
      out.push_back(path);
      continue;
    }
    const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    std::vector<fs::path> matched;
    if (fs::is_directory(dir))
      for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && fnmatch(name.c_str(), e.path().filename().c_str(), 0) == 0)
          matched.push_back(e.path());
    std::sort(matched.begin(), matched.end());
    if (matched.empty()) throw ConfigError(fmt::format("'{}' matches no files", p));
    out.insert(out.end(), matched.begin(), matched.end());
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Statement autoformalization, expert iteration and evaluation toolkit", "lemmaforge"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "Pipeline config file (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Base random seed");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
  app.set_version_flag("--version", std::string(pipeline::kToolVersion));

  std::function<int()> action;

  // verify -------------------------------------------------------------------
  auto* verify_cmd = app.add_subcommand("verify", "Check proof attempts against their statements");
  fs::path v_statements, v_proofs;
  std::optional<fs::path> v_out;
  CheckerFlags v_checker;
  verify_cmd->add_option("--statements", v_statements, "Formal statements (JSONL)")->required()->check(CLI::ExistingFile);
  verify_cmd->add_option("--proofs", v_proofs, "Proof attempts (JSONL)")->required()->check(CLI::ExistingFile);
  verify_cmd->add_option("--out", v_out, "Verdict records (JSONL); stdout when omitted");
  v_checker.add(verify_cmd, true);
  verify_cmd->callback([&] {
    action = [&] {
      const auto cc = v_checker.resolve(g);
      auto checker = pipeline::make_checker(cc);
      std::map<std::string, corpus::FormalStatement> by_id;
      for (auto& s : corpus::load_formal_statements(v_statements)) by_id.emplace(s.id, std::move(s));
      std::vector<verify::CheckJob> jobs;
      for (const auto& a : corpus::load_proof_attempts(v_proofs)) {
        const auto it = by_id.find(a.statement_id);
        if (it == by_id.end()) throw IntegrityError(fmt::format("attempt for unknown statement '{}'", a.statement_id), 0);
        jobs.push_back({it->second, a.proof_text, cc.timeout,
                        verify::sanitize_job_id(fmt::format("{}#{}", a.statement_id, a.sample_index)), false});
      }
      const auto outcomes = verify::verify_batch(jobs, *checker, cc.pool);
      std::vector<json> records;
      for (const auto& j : jobs) records.push_back(verify::verdict_record(j.job_id, j.statement.id, outcomes.at(j.job_id)));
      emit(v_out, records);
      return 0;
    };
  });

  // quality gate ---------------------------------------------------------------
  auto* quality_cmd = app.add_subcommand("quality", "Statement quality gate");
  quality_cmd->require_subcommand(1);
  auto* gate_cmd = quality_cmd->add_subcommand("gate", "Score candidate bundles with CC and FC and select statements");
  fs::path q_bundles;
  int q_judgments = quality::kDefaultJudgments;
  std::string q_threshold = "0.5";
  std::optional<fs::path> q_out, q_report, q_judge_script;
  std::optional<std::string> q_judge;
  std::vector<int> q_ks{1, 8};
  std::size_t q_concurrency = 4;
  CheckerFlags q_checker;
  gate_cmd->add_option("--bundles", q_bundles, "Candidate bundles (JSONL)")->required()->check(CLI::ExistingFile);
  gate_cmd->add_option("--judgments", q_judgments, "Judge calls per statement")->check(CLI::PositiveNumber);
  gate_cmd->add_option("--threshold", q_threshold, "FC threshold");
  gate_cmd->add_option("--out", q_out, "Selected statements (JSONL); stdout when omitted");
  gate_cmd->add_option("--report", q_report, "Gate report (JSON); a text table goes next to it");
  gate_cmd->add_option("--judge", q_judge, "mock, mock:<path> or http:<url>");
  gate_cmd->add_option("--judge-script", q_judge_script, "Script file for the mock judge")->check(CLI::ExistingFile);
  gate_cmd->add_option("--k", q_ks, "Report cut-offs")->delimiter(',');
  gate_cmd->add_option("--judge-concurrency", q_concurrency, "Concurrent judge calls")->check(CLI::PositiveNumber);
  q_checker.add(gate_cmd, true);
  gate_cmd->callback([&] {
    action = [&] {
      auto judge = pipeline::make_judge(backend_or_config(q_judge, q_judge_script, g.config ? g.config->judge : std::nullopt, "judge"));
      const auto cc = q_checker.resolve(g);
      auto checker = pipeline::make_checker(cc);
      quality::GateOptions opt;
      opt.n_judgments = q_judgments;
      try {
        opt.threshold = Ratio::parse(q_threshold);
      } catch (const std::exception& e) {
        throw ConfigError(fmt::format("--threshold: {}", e.what()));
      }
      opt.seed = g.effective_seed();
      opt.checker_pool = cc.pool;
      opt.judge_concurrency = q_concurrency;
      opt.cc_timeout = cc.timeout;
      auto result = quality::run_gate(quality::load_bundles(q_bundles), *checker, *judge, opt);
      result.report = quality::gate_report(result.bundles, q_ks, opt.threshold);
      for (const auto& e : result.judge_error_log) spdlog::warn("judge: {}", e);
      std::vector<json> records;
      for (const auto& s : result.selected) records.push_back(corpus::to_json(s));
      emit(q_out, records);
      if (q_report) {
        emit_json(q_report, result.report.to_json());
        fs::path table = *q_report;
        write_text_file(table.replace_extension(".txt"), result.report.to_table());
      } else {
        std::cerr << result.report.to_table();
      }
      return 0;
    };
  });

  // iterate run -----------------------------------------------------------------
  auto* iterate_cmd = app.add_subcommand("iterate", "Expert iteration");
  iterate_cmd->require_subcommand(1);
  auto* run_cmd = iterate_cmd->add_subcommand("run", "Run (or resume) an iteration schedule");
  fs::path i_schedule, i_state;
  std::optional<std::string> i_prover;
  std::optional<fs::path> i_script;
  std::size_t i_concurrency = 4;
  CheckerFlags i_checker;
  run_cmd->add_option("--schedule", i_schedule, "Schedule file (JSON)")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--state-dir", i_state, "State directory")->required();
  run_cmd->add_option("--prover", i_prover, "mock, mock:<path> or http:<url>");
  run_cmd->add_option("--prover-script", i_script, "Script file for the mock prover")->check(CLI::ExistingFile);
  run_cmd->add_option("--prover-concurrency", i_concurrency, "Concurrent prover calls")->check(CLI::PositiveNumber);
  i_checker.add(run_cmd, true);
  run_cmd->callback([&] {
    action = [&] {
      auto prover = pipeline::make_prover(backend_or_config(i_prover, i_script, g.config ? g.config->prover : std::nullopt, "prover"));
      const auto cc = i_checker.resolve(g);
      auto checker = pipeline::make_checker(cc);
      const auto schedule = iterate::plan_schedule(i_schedule);
      for (const auto& w : schedule.warnings) spdlog::warn("{}", w);
      iterate::RunOptions opt;
      opt.prover_concurrency = i_concurrency;
      opt.checker_pool = cc.pool;
      opt.timeout = cc.timeout;
      for (const auto& r : iterate::run_schedule(schedule, *prover, *checker, i_state, opt))
        std::cout << r.to_json().dump() << '\n';
      return 0;
    };
  });

  // eval ----------------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "Evaluation metrics");
  eval_cmd->require_subcommand(1);
  auto* pass_cmd = eval_cmd->add_subcommand("pass", "pass@n with bootstrap spread and a scaling curve");
  fs::path e_run;
  std::size_t e_n = 32;
  int e_bootstrap = evaluate::kDefaultReplicates;
  std::vector<std::size_t> e_budgets;
  std::optional<fs::path> e_csv, e_registry;
  pass_cmd->add_option("--run", e_run, "Verdict records of one run (JSONL)")->required()->check(CLI::ExistingFile);
  pass_cmd->add_option("--n", e_n, "Sample budget")->check(CLI::PositiveNumber);
  pass_cmd->add_option("--bootstrap", e_bootstrap, "Bootstrap replicates")->check(CLI::Range(2, 1'000'000));
  pass_cmd->add_option("--budgets", e_budgets, "Scaling-curve budgets")->delimiter(',');
  pass_cmd->add_option("--csv", e_csv, "Write the (budget, rate) curve here");
  pass_cmd->add_option("--registry", e_registry, "Benchmark registry (JSON)")->check(CLI::ExistingFile);
  pass_cmd->callback([&] {
    action = [&] {
      const auto run = evaluate::load_run(e_run);
      const auto registry = e_registry ? evaluate::load_registry(*e_registry) : evaluate::default_registry();
      if (registry.count(run.benchmark)) evaluate::check_coverage(run, registry);
      const Ratio rate = evaluate::pass_at_n_empirical(run, e_n);
      const auto boot = evaluate::bootstrap_ci(run, e_n, e_bootstrap, g.effective_seed());
      json out{{"benchmark", run.benchmark},
               {"model", run.model},
               {"statements", run.sets.size()},
               {"n", e_n},
               {"pass_at_n", rate.to_string()},
               {"pass_at_n_value", rate.to_double()},
               {"bootstrap", {{"mean", boot.mean}, {"std", boot.std}, {"replicates", boot.replicates}}}};
      std::vector<std::size_t> budgets = e_budgets;
      if (budgets.empty()) {
        for (std::size_t b = 1; b < e_n; b *= 2) budgets.push_back(b);
        budgets.push_back(e_n);
      }
      const auto curve = evaluate::scaling_curve(run, budgets);
      json points = json::array();
      for (const auto& [b, r] : curve) points.push_back({{"budget", b}, {"rate", r.to_double()}});
      out["scaling"] = points;
      if (e_csv) write_text_file(*e_csv, evaluate::scaling_csv(curve));
      std::cout << out.dump(2) << '\n';
      return 0;
    };
  });

  auto* stats_cmd = eval_cmd->add_subcommand("stats", "Average proof length and try-count");
  fs::path s_proofs;
  bool s_passing = false;
  stats_cmd->add_option("--proofs", s_proofs, "Records with proof_text (JSONL)")->required()->check(CLI::ExistingFile);
  stats_cmd->add_flag("--passing-only", s_passing, "Only records with status pass");
  stats_cmd->callback([&] {
    action = [&] {
      const auto report = evaluate::proof_style_report(evaluate::load_proof_texts(s_proofs, s_passing));
      std::cout << report.to_json().dump(2) << '\n';
      return 0;
    };
  });

  auto* corr_cmd = eval_cmd->add_subcommand("corr", "Correlation of pass rates across benchmarks");
  std::vector<std::string> c_runs;
  std::size_t c_n = 32;
  corr_cmd->add_option("--runs", c_runs, "Run files or glob patterns")->required();
  corr_cmd->add_option("--n", c_n, "Sample budget")->check(CLI::PositiveNumber);
  corr_cmd->callback([&] {
    action = [&] {
      std::vector<evaluate::BenchmarkRun> runs;
      for (const auto& p : expand_globs(c_runs)) runs.push_back(evaluate::load_run(p));
      const auto matrix = evaluate::cross_dataset_correlation(evaluate::rate_matrix(runs, c_n));
      std::cout << matrix.to_json().dump(2) << '\n';
      return 0;
    };
  });

  // prefdata --------------------------------------------------------------------
  auto* pref_cmd = app.add_subcommand("prefdata", "Preference and reward data");
  pref_cmd->require_subcommand(1);
  auto* dpo_cmd = pref_cmd->add_subcommand("dpo", "Build chosen/rejected pairs from a pass-ratio bucket");
  fs::path p_attempts;
  std::string p_bucket = "0,0.25";
  bool p_length = false;
  std::optional<fs::path> p_out;
  dpo_cmd->add_option("--attempts", p_attempts, "Verified attempts (JSONL)")->required()->check(CLI::ExistingFile);
  dpo_cmd->add_option("--bucket", p_bucket, "Pass-ratio interval lower,upper (lower exclusive)");
  dpo_cmd->add_flag("--length-penalized", p_length, "Choose the shortest passing proof");
  dpo_cmd->add_option("--out", p_out, "Pair records (JSONL); stdout when omitted");
  dpo_cmd->callback([&] {
    action = [&] {
      const auto bucket = prefdata::PassRatioBucket::parse(p_bucket);
      const auto sets = prefdata::load_sample_sets(p_attempts);
      const auto r = prefdata::build_dpo_pairs(prefdata::bucket_statements(sets, bucket), p_length, g.effective_seed());
      std::vector<json> records;
      for (const auto& p : r.pairs) records.push_back(prefdata::to_json(p));
      emit(p_out, records);
      return 0;
    };
  });

  auto* rewards_cmd = pref_cmd->add_subcommand("rewards", "Per-sample rewards for policy optimisation");
  fs::path r_attempts;
  prefdata::RewardConfig r_cfg;
  std::optional<fs::path> r_out;
  rewards_cmd->add_option("--attempts", r_attempts, "Verified attempts (JSONL)")->required()->check(CLI::ExistingFile);
  rewards_cmd->add_option("--timeout-reward", r_cfg.timeout_reward, "Reward for timeouts: 0, -8 or -16");
  rewards_cmd->add_option("--pass-reward", r_cfg.pass_reward, "Reward for passing samples");
  rewards_cmd->add_option("--fail-reward", r_cfg.fail_reward, "Reward for failing samples");
  rewards_cmd->add_option("--out", r_out, "Reward records (JSONL); stdout when omitted");
  rewards_cmd->callback([&] {
    action = [&] {
      r_cfg.validate();
      const auto sets = prefdata::load_sample_sets(r_attempts);
      emit(r_out, prefdata::reward_records(sets, r_cfg));
      return 0;
    };
  });

  // sketch ----------------------------------------------------------------------
  auto* sketch_cmd = app.add_subcommand("sketch", "Have-block decomposition");
  sketch_cmd->require_subcommand(1);
  auto* srun_cmd = sketch_cmd->add_subcommand("run", "Solve the subgoals of proof sketches and reassemble");
  fs::path k_statement, k_proof;
  std::optional<std::string> k_prover;
  std::optional<fs::path> k_script, k_out;
  int k_attempts = sketch::kDefaultAttempts;
  CheckerFlags k_checker;
  srun_cmd->add_option("--statement", k_statement, "Formal statements (JSONL)")->required()->check(CLI::ExistingFile);
  srun_cmd->add_option("--proof", k_proof, "Structured proofs, one per statement (JSONL)")->required()->check(CLI::ExistingFile);
  srun_cmd->add_option("--prover", k_prover, "mock, mock:<path> or http:<url>");
  srun_cmd->add_option("--prover-script", k_script, "Script file for the mock prover")->check(CLI::ExistingFile);
  srun_cmd->add_option("--attempts", k_attempts, "Samples per subgoal")->check(CLI::PositiveNumber);
  srun_cmd->add_option("--out", k_out, "Outcome records (JSONL); stdout when omitted");
  k_checker.add(srun_cmd, true);
  srun_cmd->callback([&] {
    action = [&] {
      auto prover = pipeline::make_prover(backend_or_config(k_prover, k_script, g.config ? g.config->prover : std::nullopt, "prover"));
      const auto cc = k_checker.resolve(g);
      auto checker = pipeline::make_checker(cc);
      std::map<std::string, std::string> proofs;
      for (const auto& a : corpus::load_proof_attempts(k_proof)) proofs.emplace(a.statement_id, a.proof_text);
      sketch::SolveOptions opt;
      opt.attempts = k_attempts;
      opt.seed = g.effective_seed();
      opt.concurrency = cc.pool;
      opt.timeout = cc.timeout;
      std::vector<json> records;
      for (const auto& st : corpus::load_formal_statements(k_statement)) {
        const auto it = proofs.find(st.id);
        if (it == proofs.end()) {
          spdlog::warn("{}: no proof sketch", st.id);
          continue;
        }
        records.push_back(sketch::run_sketch(st, it->second, *prover, *checker, opt).to_json());
      }
      emit(k_out, records);
      return 0;
    };
  });

  auto* simp_cmd = sketch_cmd->add_subcommand("simplify", "Mark goals whose equation difference simplifies to zero");
  fs::path m_statements;
  std::optional<std::string> m_simplifier;
  std::optional<fs::path> m_script, m_out;
  simp_cmd->add_option("--statements", m_statements, "Formal statements (JSONL)")->required()->check(CLI::ExistingFile);
  simp_cmd->add_option("--simplifier", m_simplifier, "mock, mock:<path>, toy or http:<url>");
  simp_cmd->add_option("--simplifier-script", m_script, "Script file for the mock simplifier")->check(CLI::ExistingFile);
  simp_cmd->add_option("--out", m_out, "Records (JSONL); stdout when omitted");
  simp_cmd->callback([&] {
    action = [&] {
      auto simp = pipeline::make_simplifier(
          backend_or_config(m_simplifier, m_script, g.config ? g.config->simplifier : std::nullopt, "simplifier"));
      std::vector<json> records;
      for (const auto& r : sketch::simplify_statements(corpus::load_formal_statements(m_statements), *simp))
        records.push_back(r.to_json());
      emit(m_out, records);
      return 0;
    };
  });

  // pipeline ----------------------------------------------------------------------
  auto* pipe_cmd = app.add_subcommand("pipeline", "Run configured stages into a run directory");
  std::vector<std::string> pl_stages;
  bool pl_validate = false;
  pipe_cmd->add_option("--stages", pl_stages, "Subset of quality,iterate,evaluate,prefdata,sketch")->delimiter(',');
  pipe_cmd->add_flag("--validate-only", pl_validate, "Check the config and exit");
  pipe_cmd->callback([&] {
    action = [&] {
      if (!g.config) throw ConfigError("pipeline needs --config");
      if (pl_validate) {
        std::cout << g.config->to_json().dump(2) << '\n';
        return 0;
      }
      const auto result = pipeline::run_pipeline(*g.config, {pl_stages.begin(), pl_stages.end()});
      for (const auto& s : result.stages)
        std::cout << fmt::format("{:<9} {}{}\n", s.stage, s.status, s.detail.empty() ? "" : ": " + s.detail);
      std::cout << "run directory: " << result.run_dir.string() << '\n';
      return result.exit_code;
    };
  });

  for (auto* sub : {verify_cmd, quality_cmd, gate_cmd, iterate_cmd, run_cmd, eval_cmd, pass_cmd, stats_cmd, corr_cmd,
                    pref_cmd, dpo_cmd, rewards_cmd, sketch_cmd, srun_cmd, simp_cmd, pipe_cmd})
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  auto logger = spdlog::stderr_color_mt("lemmaforge");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(g.log_level));

  try {
    load_config(g);
    return action ? action() : 0;
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
