#pragma once

// Configuration, backend construction and stage orchestration shared by the
// command-line tool.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lemmaforge/common.hpp"
#include "lemmaforge/iterate.hpp"
#include "lemmaforge/prefdata.hpp"
#include "lemmaforge/quality.hpp"
#include "lemmaforge/sketch.hpp"
#include "lemmaforge/verify.hpp"

namespace lemmaforge::pipeline {

inline constexpr std::string_view kToolVersion = "0.3.0";

/// Stage names in execution order.
const std::vector<std::string>& stage_order();
/// Version string recorded in the manifest for each stage.
const std::map<std::string, std::string>& stage_versions();

/// Environment variables consulted for endpoint overrides. Nothing else is
/// read from the environment.
inline constexpr std::string_view kProverUrlEnv = "LEMMAFORGE_PROVER_URL";
inline constexpr std::string_view kJudgeUrlEnv = "LEMMAFORGE_JUDGE_URL";
inline constexpr std::string_view kSimplifierUrlEnv = "LEMMAFORGE_SIMPLIFIER_URL";

using Environment = std::map<std::string, std::string>;
/// Reads just the override variables above from the process environment.
Environment endpoint_environment();

/// A pluggable service: "mock" (scripted file), "toy" (built-in, where one
/// exists) or "http" (endpoint URL).
struct BackendSpec {
  std::string kind;
  std::string endpoint;
  std::optional<std::filesystem::path> script;
  std::optional<std::string> fallback;  // mock judge: answer for unscripted ids

  json to_json() const;
};

/// "mock", "mock:<path>", "toy", "http:<url>" or a bare http(s) URL.
BackendSpec parse_backend_arg(std::string_view text);

struct CheckerConfig {
  std::string kind = "toy";
  verify::ExternalCheckerConfig external;
  verify::Millis timeout = verify::kDefaultTimeout;
  std::size_t pool = 4;

  json to_json() const;
};

std::unique_ptr<verify::CheckerBackend> make_checker(const CheckerConfig& c);
std::unique_ptr<iterate::ProverBackend> make_prover(const BackendSpec& spec);
std::unique_ptr<quality::JudgeBackend> make_judge(const BackendSpec& spec);
std::unique_ptr<sketch::SimplifierBackend> make_simplifier(const BackendSpec& spec);

struct QualityStage {
  std::filesystem::path bundles;
  int judgments = quality::kDefaultJudgments;
  Ratio threshold = quality::kDefaultThreshold;
  std::vector<int> ks{1, 8};
};

struct IterateStage {
  std::filesystem::path schedule;
};

/// `attempts` unset means "the last iteration's attempts from this run".
struct EvaluateStage {
  std::optional<std::filesystem::path> attempts;
  std::optional<std::size_t> n;  // default: smallest attempt set
  int bootstrap = 1000;
};

struct PrefdataStage {
  std::optional<std::filesystem::path> attempts;
  prefdata::PassRatioBucket bucket{Ratio(0, 1), Ratio(1, 4)};
  bool length_penalized = false;
  prefdata::RewardConfig rewards;
};

struct SketchStage {
  std::filesystem::path statements;
  std::optional<std::filesystem::path> proofs;  // unset: simplification only
  int attempts = sketch::kDefaultAttempts;
};

struct PipelineConfig {
  std::filesystem::path run_dir;
  std::uint64_t seed = 0;
  CheckerConfig checker;
  std::optional<BackendSpec> prover;
  std::optional<BackendSpec> judge;
  std::optional<BackendSpec> simplifier;
  std::size_t prover_concurrency = 4;
  std::size_t judge_concurrency = 4;

  std::optional<QualityStage> quality;
  std::optional<IterateStage> iterate;
  std::optional<EvaluateStage> evaluate;
  std::optional<PrefdataStage> prefdata;
  std::optional<SketchStage> sketch;

  std::set<std::string> configured_stages() const;
  /// Resolved form with absolute paths; its hash identifies the run.
  json to_json() const;
};

struct ValidationResult {
  std::optional<PipelineConfig> config;
  std::vector<std::string> errors;
  std::vector<std::string> warnings;

  bool ok() const noexcept { return config.has_value(); }
};

/// Collects every violation rather than stopping at the first. Relative
/// paths resolve against base_dir. Unknown keys produce warnings.
ValidationResult validate_config(const json& j, const std::filesystem::path& base_dir,
                                 const Environment& env = {});
/// Parse failures of the file itself are reported as a single error.
ValidationResult validate_config(const std::filesystem::path& path, const Environment& env = {});

struct StageResult {
  std::string stage;
  std::string status;  // ok | failed | skipped
  std::string detail;
};

struct PipelineResult {
  int exit_code = 0;
  std::filesystem::path run_dir;
  std::vector<StageResult> stages;
};

/// Runs the requested stages (all configured stages when empty) in order.
/// A failing stage marks the stages that consume its output as skipped;
/// independent stages still run. Writes <run_dir>/manifest.json and appends
/// to <run_dir>/logs/pipeline.log.
PipelineResult run_pipeline(const PipelineConfig& config, const std::set<std::string>& stages = {});

}  // namespace lemmaforge::pipeline
