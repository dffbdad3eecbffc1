#include "lemmaforge/verify.hpp"

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <regex>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "lemmaforge/toy_lang.hpp"

extern char** environ;

namespace lemmaforge::verify {

using Clock = std::chrono::steady_clock;

std::string_view to_string(Status s) noexcept {
  switch (s) {
    case Status::pass: return "pass";
    case Status::fail: return "fail";
    case Status::timeout: return "timeout";
  }
  return "fail";
}

Status parse_status(std::string_view s) {
  if (s == "pass") return Status::pass;
  if (s == "fail") return Status::fail;
  if (s == "timeout") return Status::timeout;
  throw ParseError(fmt::format("unknown verdict status '{}'", s));
}

namespace {

Millis elapsed_since(Clock::time_point start) {
  return std::chrono::duration_cast<Millis>(Clock::now() - start);
}

Verdict timeout_verdict(Millis elapsed, Millis limit) {
  return Verdict{Status::timeout, {}, std::max(elapsed, limit)};
}

Verdict fail_verdict(Diagnostic d, Millis elapsed) {
  return Verdict{Status::fail, {std::move(d)}, elapsed};
}

int count_newlines(std::string_view s) {
  return static_cast<int>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

// ---------------------------------------------------------------------------
// Toy backend
// ---------------------------------------------------------------------------

Verdict ToyChecker::check(const CheckJob& job) {
  const auto start = Clock::now();
  const auto deadline = start + job.timeout;

  // Diagnostics are positioned in the candidate source unit:
  // header, then body, then " " + proof on the body's last line.
  const auto& st = job.statement;
  const int header_lines =
      st.header.empty() ? 0 : count_newlines(st.header) + (st.header.back() == '\n' ? 0 : 1);
  const int body_last_line = header_lines + 1 + count_newlines(st.body);
  const std::size_t last_nl = st.body.rfind('\n');
  const int body_last_width = static_cast<int>(
      last_nl == std::string::npos ? st.body.size() : st.body.size() - last_nl - 1);

  const auto parsed = toy::parse_statement(st.body);
  if (!parsed.statement) {
    const auto& e = *parsed.error;
    return fail_verdict({e.message, header_lines + e.line, e.column}, elapsed_since(start));
  }

  const auto outcome = toy::run_proof(parsed.statement->goal, job.proof_text, deadline);
  const Millis took = elapsed_since(start);
  switch (outcome.kind) {
    case toy::ProofOutcome::Kind::timed_out:
      return timeout_verdict(took, job.timeout);
    case toy::ProofOutcome::Kind::failed: {
      const auto& e = *outcome.error;
      const int column = e.line == 1 ? body_last_width + 1 + e.column : e.column;
      return fail_verdict({e.message, body_last_line + e.line - 1, column}, took);
    }
    case toy::ProofOutcome::Kind::closed:
      break;
  }
  if (took > job.timeout) return timeout_verdict(took, job.timeout);
  if (outcome.used_placeholder && !job.allow_placeholder)
    return fail_verdict({"declaration uses 'sorry'", body_last_line, body_last_width + 2}, took);
  return Verdict{Status::pass, {}, took};
}

// ---------------------------------------------------------------------------
// External backend
// ---------------------------------------------------------------------------

std::vector<Diagnostic> parse_diagnostics(std::string_view output) {
  static const std::regex kLine(R"(^(.*?):(\d+):(\d+): error: (.*)$)");
  std::vector<Diagnostic> out;
  for (const auto& raw : split_lines(normalize_newlines(output))) {
    std::smatch m;
    if (std::regex_match(raw, m, kLine))
      out.push_back(Diagnostic{trim(m[4].str()), std::stoi(m[2].str()), std::stoi(m[3].str())});
  }
  return out;
}

std::string sanitize_job_id(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  for (unsigned char c : raw)
    out.push_back(std::isalnum(c) || c == '-' || c == '_' || c == '.' ? static_cast<char>(c) : '_');
  if (out.empty() || out == "." || out == "..") out = "job_" + out;
  return out;
}

ExternalChecker::ExternalChecker(ExternalCheckerConfig config) : config_(std::move(config)) {
  std::error_code ec;
  if (config_.executable.empty() || !std::filesystem::is_regular_file(config_.executable, ec))
    throw ConfigError(
        fmt::format("checker executable '{}' does not exist", config_.executable.string()));
  if (::access(config_.executable.c_str(), X_OK) != 0)
    throw ConfigError(
        fmt::format("checker executable '{}' is not executable", config_.executable.string()));
}

namespace {

class SpawnActions {
 public:
  SpawnActions() { posix_spawn_file_actions_init(&actions_); }
  ~SpawnActions() { posix_spawn_file_actions_destroy(&actions_); }
  SpawnActions(const SpawnActions&) = delete;
  SpawnActions& operator=(const SpawnActions&) = delete;
  posix_spawn_file_actions_t* get() { return &actions_; }

 private:
  posix_spawn_file_actions_t actions_;
};

class SpawnAttr {
 public:
  SpawnAttr() { posix_spawnattr_init(&attr_); }
  ~SpawnAttr() { posix_spawnattr_destroy(&attr_); }
  SpawnAttr(const SpawnAttr&) = delete;
  SpawnAttr& operator=(const SpawnAttr&) = delete;
  posix_spawnattr_t* get() { return &attr_; }

 private:
  posix_spawnattr_t attr_;
};

// Polls until the child exits or `until` passes. Returns the wait status.
std::optional<int> wait_until(pid_t pid, Clock::time_point until) {
  for (;;) {
    int status = 0;
    const pid_t r = ::waitpid(pid, &status, WNOHANG);
    if (r == pid) return status;
    if (r < 0 && errno != EINTR) return 0;
    if (Clock::now() >= until) return std::nullopt;
    std::this_thread::sleep_for(Millis(2));
  }
}

}  // namespace

Verdict ExternalChecker::check(const CheckJob& job) {
  namespace fs = std::filesystem;
  const fs::path dir = config_.scratch_dir / sanitize_job_id(job.job_id);
  const fs::path source = dir / ("main." + config_.extension);
  const fs::path out_path = dir / "stdout.txt";
  const fs::path err_path = dir / "stderr.txt";
  try {
    fs::create_directories(dir);
    write_text_file(source, corpus::candidate_source(job.statement, job.proof_text) + "\n");
  } catch (const std::exception& e) {
    throw InfrastructureError(fmt::format("cannot prepare scratch for job '{}': {}", job.job_id, e.what()));
  }

  std::vector<std::string> argv_store{config_.executable.string()};
  bool substituted = false;
  for (const auto& a : config_.args) {
    std::string arg = a;
    if (auto pos = arg.find("{file}"); pos != std::string::npos) {
      arg.replace(pos, 6, fs::absolute(source).string());
      substituted = true;
    }
    argv_store.push_back(std::move(arg));
  }
  if (!substituted) argv_store.push_back(fs::absolute(source).string());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  argv.push_back(nullptr);

  SpawnActions actions;
  const std::string out_s = fs::absolute(out_path).string();
  const std::string err_s = fs::absolute(err_path).string();
  posix_spawn_file_actions_addopen(actions.get(), STDIN_FILENO, "/dev/null", O_RDONLY, 0);
  posix_spawn_file_actions_addopen(actions.get(), STDOUT_FILENO, out_s.c_str(),
                                   O_WRONLY | O_CREAT | O_TRUNC, 0644);
  posix_spawn_file_actions_addopen(actions.get(), STDERR_FILENO, err_s.c_str(),
                                   O_WRONLY | O_CREAT | O_TRUNC, 0644);
  std::string cwd;
  if (config_.working_directory) {
    cwd = config_.working_directory->string();
    posix_spawn_file_actions_addchdir_np(actions.get(), cwd.c_str());
  }
  SpawnAttr attr;
  posix_spawnattr_setflags(attr.get(), POSIX_SPAWN_SETPGROUP);
  posix_spawnattr_setpgroup(attr.get(), 0);

  const auto start = Clock::now();
  pid_t pid = 0;
  const int rc = ::posix_spawn(&pid, argv_store.front().c_str(), actions.get(), attr.get(),
                               argv.data(), environ);
  if (rc != 0)
    throw InfrastructureError(fmt::format("cannot launch '{}': {}", argv_store.front(),
                                          std::strerror(rc)));

  auto status = wait_until(pid, start + job.timeout);
  bool timed_out = false;
  if (!status) {
    timed_out = true;
    ::kill(-pid, SIGTERM);
    status = wait_until(pid, Clock::now() + config_.kill_grace);
    if (!status) {
      ::kill(-pid, SIGKILL);
      int st = 0;
      while (::waitpid(pid, &st, 0) < 0 && errno == EINTR) {
      }
      status = st;
    }
  }
  const Millis took = elapsed_since(start);

  std::string output;
  try {
    output = read_text_file(err_path) + read_text_file(out_path);
  } catch (const std::exception&) {
  }
  auto cleanup = [&] {
    if (!config_.keep_scratch) {
      std::error_code ec;
      fs::remove_all(dir, ec);
    }
  };

  if (timed_out || took > job.timeout) {
    cleanup();
    return timeout_verdict(took, job.timeout);
  }
  if (WIFEXITED(*status) && WEXITSTATUS(*status) == 127 && output.empty()) {
    cleanup();
    throw InfrastructureError(fmt::format("'{}' could not be executed", argv_store.front()));
  }

  const bool exited_ok = WIFEXITED(*status) && WEXITSTATUS(*status) == 0;
  auto diagnostics = parse_diagnostics(output);
  cleanup();
  if (exited_ok && diagnostics.empty()) {
    if (!job.allow_placeholder && output.find("declaration uses 'sorry'") != std::string::npos)
      return fail_verdict({"declaration uses 'sorry'", 0, 0}, took);
    return Verdict{Status::pass, {}, took};
  }
  if (diagnostics.empty()) {
    std::string raw = trim(output);
    if (raw.empty())
      raw = WIFEXITED(*status) ? fmt::format("checker exited with status {}", WEXITSTATUS(*status))
                               : fmt::format("checker killed by signal {}", WTERMSIG(*status));
    diagnostics.push_back(Diagnostic{std::move(raw), 0, 0});
  }
  return Verdict{Status::fail, std::move(diagnostics), took};
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

Verdict check_proof(const CheckJob& job, CheckerBackend& backend) {
  if (job.timeout <= Millis::zero())
    throw ContractViolation(fmt::format("job '{}': timeout must be positive", job.job_id));
  return backend.check(job);
}

bool cc_test(const corpus::FormalStatement& statement, CheckerBackend& backend, Millis timeout) {
  if (trim(statement.body).empty() || !corpus::proof_delimiter_offset(statement.body))
    return false;
  CheckJob job{statement, std::string(kPlaceholderProof), timeout,
               sanitize_job_id("cc-" + statement.id), true};
  return check_proof(job, backend).status == Status::pass;
}

std::string_view JobOutcome::status_name() const noexcept {
  return verdict ? to_string(verdict->status) : std::string_view("infrastructure_error");
}

std::map<std::string, JobOutcome> verify_batch(std::span<const CheckJob> jobs,
                                               CheckerBackend& backend, std::size_t pool_size) {
  if (pool_size == 0) throw ContractViolation("verify_batch: pool_size must be >= 1");
  std::set<std::string_view> ids;
  for (const auto& j : jobs)
    if (!ids.insert(j.job_id).second)
      throw ContractViolation(fmt::format("verify_batch: duplicate job id '{}'", j.job_id));

  auto outcomes = parallel_map(jobs, pool_size, [&](const CheckJob& job) {
    JobOutcome o;
    try {
      o.verdict = check_proof(job, backend);
    } catch (const std::exception& e) {
      spdlog::warn("job {}: {}", job.job_id, e.what());
      o.infrastructure_error = e.what();
      if (o.infrastructure_error.empty()) o.infrastructure_error = "unknown infrastructure error";
    }
    return o;
  });

  std::map<std::string, JobOutcome> out;
  for (std::size_t i = 0; i < jobs.size(); ++i) out.emplace(jobs[i].job_id, std::move(outcomes[i]));
  return out;
}

json to_json(const Diagnostic& d) {
  return json{{"message", d.message}, {"line", d.line}, {"column", d.column}};
}

json verdict_record(const std::string& job_id, const std::string& statement_id,
                    const JobOutcome& outcome) {
  json diags = json::array();
  json j{{"job_id", job_id}, {"statement_id", statement_id}, {"status", outcome.status_name()}};
  if (outcome.verdict) {
    for (const auto& d : outcome.verdict->diagnostics) diags.push_back(to_json(d));
    j["wall_time_ms"] = outcome.verdict->wall_time.count();
  } else {
    diags.push_back(json{{"message", outcome.infrastructure_error}, {"line", 0}, {"column", 0}});
    j["wall_time_ms"] = 0;
  }
  j["diagnostics"] = std::move(diags);
  return j;
}

Verdict verdict_from_record(const json& j) {
  Verdict v;
  v.status = parse_status(j.at("status").get<std::string>());
  v.wall_time = Millis(j.value("wall_time_ms", std::int64_t{0}));
  if (auto it = j.find("diagnostics"); it != j.end()) {
    for (const auto& d : *it)
      v.diagnostics.push_back(Diagnostic{d.value("message", std::string{}), d.value("line", 0),
                                         d.value("column", 0)});
  }
  if (v.status == Status::fail && v.diagnostics.empty())
    v.diagnostics.push_back(Diagnostic{"failed (no diagnostics recorded)", 0, 0});
  if (v.status != Status::fail) v.diagnostics.clear();
  return v;
}

std::unique_ptr<CheckerBackend> make_checker(const CheckerSpec& spec) {
  if (spec.kind == "toy") return std::make_unique<ToyChecker>();
  if (spec.kind == "external") return std::make_unique<ExternalChecker>(spec.external);
  throw ConfigError(fmt::format("unknown checker backend '{}'", spec.kind));
}

}  // namespace lemmaforge::verify
