#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lemmaforge/common.hpp"
#include "lemmaforge/corpus.hpp"

namespace lemmaforge::verify {

using Millis = std::chrono::milliseconds;

inline constexpr Millis kDefaultTimeout{300'000};
inline constexpr Millis kKillGrace{2'000};

/// Closes any goal without proof; used by the compile-correctness test.
inline constexpr std::string_view kPlaceholderProof = "by sorry";

enum class Status { pass, fail, timeout };

std::string_view to_string(Status s) noexcept;
Status parse_status(std::string_view s);

struct Diagnostic {
  std::string message;
  int line = 0;
  int column = 0;

  friend bool operator==(const Diagnostic&, const Diagnostic&) = default;
};

/// Diagnostics are non-empty iff status == fail. A timeout verdict has
/// wall_time >= the job timeout.
struct Verdict {
  Status status = Status::fail;
  std::vector<Diagnostic> diagnostics;
  Millis wall_time{0};
};

struct CheckJob {
  corpus::FormalStatement statement;
  std::string proof_text;
  Millis timeout = kDefaultTimeout;
  std::string job_id;
  /// When false, a proof that closes goals with the placeholder fails.
  bool allow_placeholder = false;
};

/// Implementations must tolerate concurrent check() calls.
class CheckerBackend {
 public:
  virtual ~CheckerBackend() = default;
  /// Throws InfrastructureError when the checker itself cannot run.
  virtual Verdict check(const CheckJob& job) = 0;
  virtual std::string name() const = 0;
};

/// Deterministic in-process checker for the toy proof language.
class ToyChecker final : public CheckerBackend {
 public:
  Verdict check(const CheckJob& job) override;
  std::string name() const override { return "toy"; }
};

struct ExternalCheckerConfig {
  std::filesystem::path executable;
  /// "{file}" is replaced by the scratch source path; appended if absent.
  std::vector<std::string> args;
  std::filesystem::path scratch_dir = "scratch";
  std::optional<std::filesystem::path> working_directory;
  std::string extension = "lean";
  Millis kill_grace = kKillGrace;
  bool keep_scratch = false;
};

/// Runs an external compiler once per job as a child process.
/// Exit 0 is pass; "<file>:<line>:<col>: error: <msg>" lines are parsed from
/// the child's stderr and stdout.
class ExternalChecker final : public CheckerBackend {
 public:
  /// Throws ConfigError if the executable does not exist.
  explicit ExternalChecker(ExternalCheckerConfig config);
  Verdict check(const CheckJob& job) override;
  std::string name() const override { return "external"; }
  const ExternalCheckerConfig& config() const noexcept { return config_; }

 private:
  ExternalCheckerConfig config_;
};

/// Parses compiler output into error diagnostics (warnings are ignored).
std::vector<Diagnostic> parse_diagnostics(std::string_view output);

/// Filesystem-safe job id fragment.
std::string sanitize_job_id(std::string_view raw);

// --- operations -------------------------------------------------------------

Verdict check_proof(const CheckJob& job, CheckerBackend& backend);

/// True iff the statement elaborates with its proof replaced by the placeholder.
bool cc_test(const corpus::FormalStatement& statement, CheckerBackend& backend,
             Millis timeout = kDefaultTimeout);

/// Exactly one of verdict / infrastructure_error is set.
struct JobOutcome {
  std::optional<Verdict> verdict;
  std::string infrastructure_error;

  bool passed() const noexcept { return verdict && verdict->status == Status::pass; }
  /// "pass", "fail", "timeout" or "infrastructure_error".
  std::string_view status_name() const noexcept;
};

/// One outcome per job, independent of pool size and completion order.
/// Throws ContractViolation on duplicate job ids.
std::map<std::string, JobOutcome> verify_batch(std::span<const CheckJob> jobs,
                                               CheckerBackend& backend, std::size_t pool_size);

/// Export record: job_id, statement_id, status, wall_time_ms, diagnostics.
json verdict_record(const std::string& job_id, const std::string& statement_id,
                    const JobOutcome& outcome);
Verdict verdict_from_record(const json& j);
json to_json(const Diagnostic& d);

struct CheckerSpec {
  std::string kind = "toy";  // toy | external
  ExternalCheckerConfig external;
};

std::unique_ptr<CheckerBackend> make_checker(const CheckerSpec& spec);

}  // namespace lemmaforge::verify
