#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lemmaforge/common.hpp"
#include "lemmaforge/corpus.hpp"
#include "lemmaforge/http.hpp"
#include "lemmaforge/verify.hpp"

namespace lemmaforge::iterate {

inline constexpr std::string_view kLibrarySource = "library_corpus";

struct IterationConfig {
  int k = 0;
  std::vector<std::string> statement_sources;
  int samples_per_statement = 16;
  bool include_library_corpus = false;
  std::uint64_t seed = 0;
  bool resample_solved = true;
};

/// One training example: the statement with its proof appended at the delimiter.
struct SFTRecord {
  std::string statement_id;
  std::string text;
  std::string proof_text;
  std::string source;
};

json to_json(const SFTRecord& r);
SFTRecord sft_from_json(const json& j);
std::vector<SFTRecord> load_sft(const std::filesystem::path& path);
void write_sft(const std::filesystem::path& path, std::span<const SFTRecord> records);

struct ProverRequest {
  std::string statement_id;
  std::string header;
  std::string body;
  int num_samples = 1;
  std::uint64_t seed = 0;
};

json to_json(const ProverRequest& r);

/// Implementations must tolerate concurrent prove() calls.
class ProverBackend {
 public:
  virtual ~ProverBackend() = default;
  /// Returns exactly request.num_samples proofs; throws on failure.
  virtual std::vector<std::string> prove(const ProverRequest& request) = 0;
  /// Called once per finished iteration with the SFT data it produced.
  virtual void on_iteration_complete(int /*k*/, std::span<const SFTRecord> /*sft*/) {}
};

/// Test double. Each scripted statement has a proof list (sample i gets
/// proofs[i % size]) and an unlock threshold: until the prover has seen at
/// least `min_training` SFT records in one dataset it answers `locked_proof`.
/// Unscripted statements also get `locked_proof`.
class ScriptedProver final : public ProverBackend {
 public:
  struct Entry {
    std::vector<std::string> proofs;
    std::size_t min_training = 0;
  };

  explicit ScriptedProver(std::map<std::string, Entry> script,
                          std::string locked_proof = "by simp");
  /// Lines of {"statement_id", "proofs": [...], "min_training"?: n}.
  static ScriptedProver from_file(const std::filesystem::path& path);

  std::vector<std::string> prove(const ProverRequest& request) override;
  void on_iteration_complete(int k, std::span<const SFTRecord> sft) override;
  std::size_t training_size() const noexcept { return training_size_; }

 private:
  std::map<std::string, Entry> script_;
  std::string locked_proof_;
  std::size_t training_size_ = 0;
};

class CallbackProver final : public ProverBackend {
 public:
  using Fn = std::function<std::vector<std::string>(const ProverRequest&)>;
  explicit CallbackProver(Fn fn) : fn_(std::move(fn)) {}
  std::vector<std::string> prove(const ProverRequest& request) override { return fn_(request); }

 private:
  Fn fn_;
};

/// POSTs the request record, expects {"proofs": [...]}.
class HttpProver final : public ProverBackend {
 public:
  explicit HttpProver(http::Endpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::vector<std::string> prove(const ProverRequest& request) override;

 private:
  http::Endpoint endpoint_;
};

struct IterationReport {
  int k = 0;
  std::size_t statements_attempted = 0;
  std::size_t prover_calls = 0;  // samples requested
  std::size_t skipped = 0;       // statements dropped after a prover failure
  std::size_t newly_solved_count = 0;
  std::size_t cumulative_solved_count = 0;
  std::map<std::string, std::size_t> solved_per_source;  // cumulative
  std::chrono::milliseconds prove_time{0};
  std::chrono::milliseconds verify_time{0};
  std::chrono::milliseconds wall_time{0};

  /// Wall times are left out unless asked for, so reports compare byte-equal.
  json to_json(bool with_timings = false) const;
};

/// One verified sample, as written to the per-iteration attempt log.
struct AttemptRecord {
  std::string statement_id;
  std::int64_t sample_index = 0;
  std::string proof_text;
  std::string status;  // pass | fail | timeout | infrastructure_error
  std::vector<verify::Diagnostic> diagnostics;
  std::chrono::milliseconds wall_time{0};
};

json to_json(const AttemptRecord& a, bool with_timing = false);

struct RunOptions {
  std::size_t prover_concurrency = 4;
  std::size_t checker_pool = 4;
  verify::Millis timeout = verify::kDefaultTimeout;
};

struct IterationResult {
  corpus::SolvedSet solved;
  IterationReport report;
  std::vector<SFTRecord> sft;
  std::vector<AttemptRecord> attempts;
  std::vector<std::string> skip_log;
};

/// Statement sources keyed by manifest name.
using SourceMap = std::map<std::string, std::vector<corpus::FormalStatement>>;

/// One expert-iteration round. Statements from the active sources are merged
/// in listed order (first occurrence of an id wins) and tagged with their
/// source in extra["source"]. Throws ConfigError for an unknown source.
IterationResult run_iteration(const IterationConfig& config, const SourceMap& sources,
                              std::span<const SFTRecord> library, ProverBackend& prover,
                              verify::CheckerBackend& checker, const corpus::SolvedSet& solved,
                              const RunOptions& options = {});

/// One record per solved statement (id order), then library records whose
/// ids are not already present.
std::vector<SFTRecord> build_sft_dataset(const corpus::SolvedSet& solved,
                                         std::span<const SFTRecord> library = {});

struct Schedule {
  std::map<std::string, std::filesystem::path> sources;
  std::optional<std::filesystem::path> library_corpus;
  std::vector<IterationConfig> iterations;  // ordered by k
  std::vector<std::string> warnings;
};

/// Relative paths resolve against base_dir. Throws ConfigError on a repeated
/// k, an unknown source name, or samples_per_statement < 1.
Schedule plan_schedule(const json& j, const std::filesystem::path& base_dir = {});
Schedule plan_schedule(const std::filesystem::path& schedule_file);

SourceMap load_sources(const Schedule& schedule);

/// Runs every iteration of the schedule against state_dir:
///   solved.jsonl, sft-<k>.jsonl, attempts-<k>.jsonl, reports/iter-<k>.json
/// (all deterministic) and logs/timings-<k>.json. Iterations whose report
/// already exists are replayed from disk instead of rerun.
std::vector<IterationReport> run_schedule(const Schedule& schedule, ProverBackend& prover,
                                          verify::CheckerBackend& checker,
                                          const std::filesystem::path& state_dir,
                                          const RunOptions& options = {});

}  // namespace lemmaforge::iterate
