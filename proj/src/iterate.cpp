#include "lemmaforge/iterate.hpp"

#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace lemmaforge::iterate {

namespace fs = std::filesystem;
using corpus::FormalStatement;
using corpus::SolvedSet;
using Clock = std::chrono::steady_clock;

namespace {

std::chrono::milliseconds since(Clock::time_point t0) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - t0);
}

std::string source_of(const FormalStatement& s) {
  auto it = s.extra.find("source");
  return it != s.extra.end() && it->is_string() ? it->get<std::string>() : std::string("unknown");
}

void tag_source(FormalStatement& s, const std::string& name) {
  if (!s.extra.contains("source")) s.extra["source"] = name;
}

}  // namespace

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

json to_json(const SFTRecord& r) {
  return json{{"statement_id", r.statement_id},
              {"text", r.text},
              {"proof_text", r.proof_text},
              {"source", r.source}};
}

SFTRecord sft_from_json(const json& j) {
  SFTRecord r;
  r.statement_id = j.at("statement_id").get<std::string>();
  r.text = j.at("text").get<std::string>();
  r.proof_text = j.value("proof_text", std::string{});
  r.source = j.value("source", std::string(kLibrarySource));
  return r;
}

std::vector<SFTRecord> load_sft(const fs::path& path) {
  std::vector<SFTRecord> out;
  for_each_jsonl(path, [&](const json& j, std::size_t line) {
    try {
      out.push_back(sft_from_json(j));
    } catch (const json::exception& e) {
      throw ParseError(fmt::format("{}: {}", path.string(), e.what()), line);
    }
  });
  return out;
}

void write_sft(const fs::path& path, std::span<const SFTRecord> records) {
  std::vector<json> js;
  js.reserve(records.size());
  for (const auto& r : records) js.push_back(to_json(r));
  write_jsonl(path, js);
}

json to_json(const ProverRequest& r) {
  return json{{"statement_id", r.statement_id},
              {"header", r.header},
              {"body", r.body},
              {"num_samples", r.num_samples},
              {"seed", r.seed}};
}

json to_json(const AttemptRecord& a, bool with_timing) {
  json diags = json::array();
  for (const auto& d : a.diagnostics) diags.push_back(verify::to_json(d));
  json j{{"statement_id", a.statement_id},
         {"sample_index", a.sample_index},
         {"proof_text", a.proof_text},
         {"status", a.status},
         {"diagnostics", std::move(diags)}};
  if (with_timing) j["wall_time_ms"] = a.wall_time.count();
  return j;
}

json IterationReport::to_json(bool with_timings) const {
  json j{{"k", k},
         {"statements_attempted", statements_attempted},
         {"prover_calls", prover_calls},
         {"skipped", skipped},
         {"newly_solved_count", newly_solved_count},
         {"cumulative_solved_count", cumulative_solved_count},
         {"solved_per_source", solved_per_source}};
  if (with_timings)
    j["timings_ms"] = json{{"prove", prove_time.count()},
                           {"verify", verify_time.count()},
                           {"wall", wall_time.count()}};
  return j;
}

namespace {

IterationReport report_from_json(const json& j) {
  IterationReport r;
  r.k = j.at("k").get<int>();
  r.statements_attempted = j.at("statements_attempted").get<std::size_t>();
  r.prover_calls = j.at("prover_calls").get<std::size_t>();
  r.skipped = j.at("skipped").get<std::size_t>();
  r.newly_solved_count = j.at("newly_solved_count").get<std::size_t>();
  r.cumulative_solved_count = j.at("cumulative_solved_count").get<std::size_t>();
  r.solved_per_source = j.at("solved_per_source").get<std::map<std::string, std::size_t>>();
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Provers
// ---------------------------------------------------------------------------

ScriptedProver::ScriptedProver(std::map<std::string, Entry> script, std::string locked_proof)
    : script_(std::move(script)), locked_proof_(std::move(locked_proof)) {}

ScriptedProver ScriptedProver::from_file(const fs::path& path) {
  std::map<std::string, Entry> script;
  std::string locked = "by simp";
  for_each_jsonl(path, [&](const json& j, std::size_t line) {
    try {
      if (j.contains("locked_proof")) {
        locked = j.at("locked_proof").get<std::string>();
        return;
      }
      Entry e;
      e.proofs = j.at("proofs").get<std::vector<std::string>>();
      e.min_training = j.value("min_training", std::size_t{0});
      if (e.proofs.empty()) throw ParseError("empty proof list", line);
      script[j.at("statement_id").get<std::string>()] = std::move(e);
    } catch (const json::exception& ex) {
      throw ParseError(fmt::format("{}: {}", path.string(), ex.what()), line);
    }
  });
  return ScriptedProver(std::move(script), std::move(locked));
}

std::vector<std::string> ScriptedProver::prove(const ProverRequest& request) {
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(request.num_samples));
  auto it = script_.find(request.statement_id);
  const bool unlocked = it != script_.end() && training_size_ >= it->second.min_training;
  for (int i = 0; i < request.num_samples; ++i)
    out.push_back(unlocked ? it->second.proofs[static_cast<std::size_t>(i) % it->second.proofs.size()]
                           : locked_proof_);
  return out;
}

void ScriptedProver::on_iteration_complete(int /*k*/, std::span<const SFTRecord> sft) {
  training_size_ = sft.size();
}

std::vector<std::string> HttpProver::prove(const ProverRequest& request) {
  const json reply = http::post_json(endpoint_, to_json(request));
  auto it = reply.find("proofs");
  if (it == reply.end() || !it->is_array())
    throw InfrastructureError("prover reply lacks a 'proofs' array");
  try {
    return it->get<std::vector<std::string>>();
  } catch (const json::exception&) {
    throw InfrastructureError("prover reply 'proofs' must hold strings");
  }
}

// ---------------------------------------------------------------------------
// Iteration
// ---------------------------------------------------------------------------

std::vector<SFTRecord> build_sft_dataset(const SolvedSet& solved, std::span<const SFTRecord> library) {
  std::vector<SFTRecord> out;
  out.reserve(solved.size() + library.size());
  std::set<std::string, std::less<>> seen;
  for (const auto& [id, e] : solved.entries()) {
    out.push_back({id, corpus::candidate_source(e.statement, e.proof.proof_text), e.proof.proof_text,
                   source_of(e.statement)});
    seen.insert(id);
  }
  for (const auto& r : library) {
    if (!seen.insert(r.statement_id).second) continue;
    SFTRecord copy = r;
    copy.source = std::string(kLibrarySource);
    out.push_back(std::move(copy));
  }
  return out;
}

IterationResult run_iteration(const IterationConfig& config, const SourceMap& sources,
                              std::span<const SFTRecord> library, ProverBackend& prover,
                              verify::CheckerBackend& checker, const SolvedSet& solved,
                              const RunOptions& options) {
  if (config.samples_per_statement < 1)
    throw ConfigError(fmt::format("iteration {}: samples_per_statement must be >= 1", config.k));
  const auto t_start = Clock::now();

  std::vector<FormalStatement> scheduled;
  std::set<std::string, std::less<>> ids;
  for (const auto& name : config.statement_sources) {
    auto it = sources.find(name);
    if (it == sources.end())
      throw ConfigError(fmt::format("iteration {}: unknown statement source '{}'", config.k, name));
    for (const auto& s : it->second) {
      if (!ids.insert(s.id).second) continue;
      if (!config.resample_solved && solved.contains(s.id)) continue;
      scheduled.push_back(s);
      tag_source(scheduled.back(), name);
    }
  }

  IterationResult result;
  result.report.k = config.k;
  result.report.statements_attempted = scheduled.size();

  // Prover fan-out.
  struct Sampled {
    std::vector<std::string> proofs;
    std::string error;
  };
  const auto t_prove = Clock::now();
  const auto sampled = parallel_map(
      std::span<const FormalStatement>(scheduled), options.prover_concurrency,
      [&](const FormalStatement& s) -> Sampled {
        ProverRequest req{s.id, s.header, s.body, config.samples_per_statement,
                          derive_seed(config.seed, s.id)};
        try {
          auto proofs = prover.prove(req);
          if (proofs.size() != static_cast<std::size_t>(config.samples_per_statement))
            return {{}, fmt::format("prover returned {} proofs, expected {}", proofs.size(),
                                    config.samples_per_statement)};
          return {std::move(proofs), {}};
        } catch (const std::exception& e) {
          return {{}, e.what()};
        }
      });
  result.report.prove_time = since(t_prove);
  result.report.prover_calls =
      scheduled.size() * static_cast<std::size_t>(config.samples_per_statement);

  // Verification of every sample.
  std::vector<verify::CheckJob> jobs;
  std::vector<std::size_t> owner;
  std::vector<std::int64_t> sample_of;
  for (std::size_t i = 0; i < scheduled.size(); ++i) {
    if (!sampled[i].error.empty()) {
      ++result.report.skipped;
      result.skip_log.push_back(fmt::format("iteration {}: statement '{}' skipped: {}", config.k,
                                            scheduled[i].id, sampled[i].error));
      spdlog::warn("{}", result.skip_log.back());
      continue;
    }
    for (std::size_t j = 0; j < sampled[i].proofs.size(); ++j) {
      jobs.push_back({scheduled[i], sampled[i].proofs[j], options.timeout,
                      fmt::format("{}#{}", scheduled[i].id, j), false});
      owner.push_back(i);
      sample_of.push_back(static_cast<std::int64_t>(j));
    }
  }
  const auto t_verify = Clock::now();
  const auto outcomes = verify::verify_batch(jobs, checker, options.checker_pool);
  result.report.verify_time = since(t_verify);

  std::vector<corpus::VerifiedStatement> verified;
  std::map<std::size_t, std::size_t> slot_of;
  for (std::size_t n = 0; n < jobs.size(); ++n) {
    const auto& job = jobs[n];
    const auto& out = outcomes.at(job.job_id);
    AttemptRecord rec;
    rec.statement_id = job.statement.id;
    rec.proof_text = job.proof_text;
    rec.status = std::string(out.status_name());
    if (out.verdict) {
      rec.diagnostics = out.verdict->diagnostics;
      rec.wall_time = out.verdict->wall_time;
    } else {
      rec.diagnostics.push_back({out.infrastructure_error, 0, 0});
    }
    rec.sample_index = sample_of[n];
    result.attempts.push_back(rec);

    if (!out.passed()) continue;
    auto [it, fresh] = slot_of.try_emplace(owner[n], verified.size());
    if (fresh) verified.push_back({job.statement, {}});
    verified[it->second].proofs.push_back(
        {{job.statement.id, job.proof_text, rec.sample_index, "iter-" + std::to_string(config.k),
          json::object()},
         true});
  }

  result.solved = corpus::merge_solved(solved, verified, config.k, config.seed);
  result.report.newly_solved_count = result.solved.size() - solved.size();
  result.report.cumulative_solved_count = result.solved.size();
  for (const auto& [id, e] : result.solved.entries()) ++result.report.solved_per_source[source_of(e.statement)];

  result.sft = build_sft_dataset(result.solved, config.include_library_corpus
                                                    ? library
                                                    : std::span<const SFTRecord>{});
  result.report.wall_time = since(t_start);
  return result;
}

// ---------------------------------------------------------------------------
// Schedule
// ---------------------------------------------------------------------------

Schedule plan_schedule(const json& j, const fs::path& base_dir) {
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  Schedule s;
  try {
    if (!j.is_object()) throw ConfigError("schedule must be an object");
    if (auto it = j.find("sources"); it != j.end())
      for (const auto& [name, p] : it->items()) s.sources[name] = resolve(p.get<std::string>());
    if (auto it = j.find("library_corpus"); it != j.end() && !it->is_null())
      s.library_corpus = resolve(it->get<std::string>());

    std::set<int> ks;
    for (const auto& it : j.value("iterations", json::array())) {
      IterationConfig c;
      c.k = it.at("k").get<int>();
      if (c.k < 0) throw ConfigError(fmt::format("iteration k must be >= 0, got {}", c.k));
      if (!ks.insert(c.k).second) throw ConfigError(fmt::format("iteration {} declared twice", c.k));
      c.statement_sources = it.value("sources", std::vector<std::string>{});
      c.samples_per_statement = it.value("samples_per_statement", 16);
      c.include_library_corpus = it.value("include_library_corpus", false);
      c.seed = it.value("seed", std::uint64_t{0});
      c.resample_solved = it.value("resample_solved", true);
      if (c.samples_per_statement < 1)
        throw ConfigError(fmt::format("iteration {}: samples_per_statement must be >= 1", c.k));
      for (const auto& name : c.statement_sources)
        if (!s.sources.count(name))
          throw ConfigError(fmt::format("iteration {}: unknown source '{}'", c.k, name));
      if (c.include_library_corpus && !s.library_corpus)
        throw ConfigError(fmt::format("iteration {}: library corpus requested but not declared", c.k));
      s.iterations.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("schedule: {}", e.what()));
  }
  std::sort(s.iterations.begin(), s.iterations.end(),
            [](const auto& a, const auto& b) { return a.k < b.k; });
  for (std::size_t i = 1; i < s.iterations.size(); ++i) {
    const auto& prev = s.iterations[i - 1].statement_sources;
    for (const auto& name : prev) {
      const auto& cur = s.iterations[i].statement_sources;
      if (std::find(cur.begin(), cur.end(), name) == cur.end()) {
        s.warnings.push_back(fmt::format("iteration {} drops source '{}' used by iteration {}",
                                         s.iterations[i].k, name, s.iterations[i - 1].k));
        spdlog::warn("{}", s.warnings.back());
      }
    }
  }
  return s;
}

Schedule plan_schedule(const fs::path& schedule_file) {
  json j;
  try {
    j = json::parse(read_text_file(schedule_file));
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", schedule_file.string(), e.what()));
  }
  return plan_schedule(j, schedule_file.parent_path());
}

SourceMap load_sources(const Schedule& schedule) {
  SourceMap out;
  for (const auto& [name, path] : schedule.sources) {
    auto stmts = corpus::load_formal_statements(path);
    for (auto& s : stmts) tag_source(s, name);
    out.emplace(name, std::move(stmts));
  }
  return out;
}

std::vector<IterationReport> run_schedule(const Schedule& schedule, ProverBackend& prover,
                                          verify::CheckerBackend& checker, const fs::path& state_dir,
                                          const RunOptions& options) {
  const SourceMap sources = load_sources(schedule);
  std::vector<SFTRecord> library;
  if (schedule.library_corpus) library = load_sft(*schedule.library_corpus);

  fs::create_directories(state_dir / "reports");
  fs::create_directories(state_dir / "logs");
  const fs::path solved_path = state_dir / "solved.jsonl";

  SolvedSet solved;
  if (fs::exists(solved_path)) {
    std::vector<FormalStatement> all;
    for (const auto& [name, list] : sources) all.insert(all.end(), list.begin(), list.end());
    solved = corpus::load_solved(solved_path, all);
  }

  std::vector<IterationReport> reports;
  for (const auto& config : schedule.iterations) {
    const fs::path report_path = state_dir / "reports" / fmt::format("iter-{}.json", config.k);
    const fs::path sft_path = state_dir / fmt::format("sft-{}.jsonl", config.k);
    if (fs::exists(report_path) && fs::exists(sft_path)) {
      spdlog::info("iteration {} already complete, replaying from {}", config.k, state_dir.string());
      reports.push_back(report_from_json(json::parse(read_text_file(report_path))));
      const auto sft = load_sft(sft_path);
      prover.on_iteration_complete(config.k, sft);
      continue;
    }

    spdlog::info("iteration {}: sources [{}], {} samples per statement", config.k,
                 fmt::join(config.statement_sources, ", "), config.samples_per_statement);
    auto result = run_iteration(config, sources, library, prover, checker, solved, options);

    std::vector<json> attempts;
    std::vector<json> timings;
    for (const auto& a : result.attempts) {
      attempts.push_back(to_json(a));
      timings.push_back(json{{"statement_id", a.statement_id},
                             {"sample_index", a.sample_index},
                             {"wall_time_ms", a.wall_time.count()}});
    }
    write_jsonl(state_dir / fmt::format("attempts-{}.jsonl", config.k), attempts);
    write_sft(sft_path, result.sft);
    corpus::write_solved(solved_path, result.solved);
    write_text_file(state_dir / "logs" / fmt::format("timings-{}.json", config.k),
                    json{{"report", result.report.to_json(true)}, {"attempts", timings},
                         {"skipped", result.skip_log}}
                        .dump(2) + "\n");
    // Report last: its presence marks the iteration complete.
    write_text_file(report_path, result.report.to_json().dump(2) + "\n");

    spdlog::info("iteration {}: {} attempted, {} newly solved, {} cumulative", config.k,
                 result.report.statements_attempted, result.report.newly_solved_count,
                 result.report.cumulative_solved_count);
    prover.on_iteration_complete(config.k, result.sft);
    solved = std::move(result.solved);
    reports.push_back(result.report);
  }
  return reports;
}

}  // namespace lemmaforge::iterate
