#pragma once

#include <cstdint>
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
#include "lemmaforge/http.hpp"
#include "lemmaforge/verify.hpp"

namespace lemmaforge::quality {

inline constexpr std::string_view kFcPromptTemplateId = "fc-assessment-v1";
inline constexpr int kDefaultJudgments = 4;
inline const Ratio kDefaultThreshold{1, 2};

/// Faithfulness/completeness prompt with {informal} and {formal} slots.
std::string_view fc_prompt_template();
std::string render_fc_prompt(std::string_view informal_text, std::string_view formal_text);

struct FCScore {
  int num_appropriate = 0;
  int num_judgments = 1;

  Ratio score() const { return Ratio(num_appropriate, num_judgments); }
};

enum class JudgeLabel { appropriate, inappropriate };

struct JudgeVerdict {
  JudgeLabel label = JudgeLabel::inappropriate;
  std::string raw_response;
  /// Set when the response carried no recognizable label or the call failed.
  bool flagged = false;
};

/// The last word of the last non-empty line, compared case-insensitively to
/// "appropriate" / "inappropriate". Anything else is flagged inappropriate.
JudgeVerdict parse_judge_response(std::string raw_response);

struct JudgeRequest {
  std::string statement_id;
  std::string informal_text;
  std::string formal_text;
  std::string prompt_template_id{kFcPromptTemplateId};
  std::string prompt;
  std::uint64_t seed = 0;
  int judgment_index = 0;
};

json to_json(const JudgeRequest& r);

/// Returns the raw judge response. Throws on transport failure.
/// Implementations must tolerate concurrent calls.
class JudgeBackend {
 public:
  virtual ~JudgeBackend() = default;
  virtual std::string judge(const JudgeRequest& request) = 0;
};

/// In-memory test double: per statement id, a response sequence indexed by
/// judgment index (wrapping).
class ScriptedJudge final : public JudgeBackend {
 public:
  explicit ScriptedJudge(std::map<std::string, std::vector<std::string>> script,
                         std::optional<std::string> fallback = std::nullopt);
  /// Lines of {"statement_id": ..., "responses": [...]}.
  static ScriptedJudge from_file(const std::filesystem::path& path,
                                 std::optional<std::string> fallback = std::nullopt);
  std::string judge(const JudgeRequest& request) override;

 private:
  std::map<std::string, std::vector<std::string>> script_;
  std::optional<std::string> fallback_;
};

/// POSTs the request record, expects {"raw_response": "..."}.
class HttpJudge final : public JudgeBackend {
 public:
  explicit HttpJudge(http::Endpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::string judge(const JudgeRequest& request) override;

 private:
  http::Endpoint endpoint_;
};

struct FCJudgment {
  FCScore score;
  std::vector<JudgeVerdict> verdicts;  // in judgment order
  std::vector<std::string> error_log;  // failed or unparseable calls
};

/// Issues n_judgments independent calls (seeded per call) and counts
/// "appropriate" labels. A failed call counts as inappropriate and is logged.
FCJudgment fc_judge(const corpus::InformalStatement& informal,
                    const corpus::FormalStatement& formal, JudgeBackend& judge,
                    int n_judgments, std::uint64_t seed, std::size_t concurrency = 1);

/// Folds already-collected verdicts into a judgment.
FCJudgment aggregate_judgments(std::vector<JudgeVerdict> verdicts, std::vector<std::string> errors);

struct ScoredStatement {
  corpus::FormalStatement statement;
  FCScore fc;
};

/// Keeps score >= threshold; only scores strictly below are removed.
std::vector<corpus::FormalStatement> fc_filter(std::span<const ScoredStatement> scored,
                                               Ratio threshold = kDefaultThreshold);

// --- candidate bundles ------------------------------------------------------

struct Candidate {
  corpus::FormalStatement statement;
  std::optional<bool> cc_pass;
  std::optional<FCScore> fc;

  bool valid(Ratio threshold = kDefaultThreshold) const {
    return cc_pass.value_or(false) && fc && fc->score() >= threshold;
  }
};

struct CandidateBundle {
  std::string informal_id;
  std::string informal_text;
  std::string source = "numina";
  /// Candidates per formalizer, each list in generation order.
  std::map<corpus::Formalizer, std::vector<Candidate>> candidates;
};

json to_json(const CandidateBundle& b);
CandidateBundle bundle_from_json(const json& j);
std::vector<CandidateBundle> load_bundles(const std::filesystem::path& path);
void write_bundles(const std::filesystem::path& path, std::span<const CandidateBundle> bundles);

/// One valid candidate per formalizer, drawn uniformly (seeded). Formalizers
/// with no valid candidate contribute nothing. Throws ContractViolation when a
/// candidate lacks cc_pass or fc.
std::vector<corpus::FormalStatement> select_candidates(const CandidateBundle& bundle,
                                                       std::uint64_t seed,
                                                       Ratio threshold = kDefaultThreshold);

enum class GateTest { cc, fc, cc_fc };

struct GateCell {
  std::size_t qualifying = 0;  // problems with >= 1 qualifying candidate among the first k
  std::size_t problems = 0;
  Ratio rate() const { return problems ? Ratio(static_cast<std::int64_t>(qualifying),
                                               static_cast<std::int64_t>(problems))
                                       : Ratio(0, 1); }
};

/// Acceptance statistics per formalizer, test and k (pass@k in generation order).
struct GateReport {
  std::vector<int> ks;
  std::map<corpus::Formalizer, std::map<GateTest, std::map<int, GateCell>>> cells;

  const GateCell& at(corpus::Formalizer f, GateTest t, int k) const {
    return cells.at(f).at(t).at(k);
  }
  json to_json() const;
  std::string to_table() const;
};

GateReport gate_report(std::span<const CandidateBundle> bundles, std::vector<int> ks = {1, 8},
                       Ratio threshold = kDefaultThreshold);

// --- full gate --------------------------------------------------------------

struct GateOptions {
  int n_judgments = kDefaultJudgments;
  Ratio threshold = kDefaultThreshold;
  std::uint64_t seed = 0;
  std::size_t checker_pool = 4;
  std::size_t judge_concurrency = 4;
  verify::Millis cc_timeout = verify::kDefaultTimeout;
};

struct GateResult {
  std::vector<CandidateBundle> bundles;  // cc_pass and fc filled in
  std::vector<corpus::FormalStatement> selected;
  GateReport report;
  std::vector<std::string> judge_error_log;
};

/// Fills missing cc_pass/fc values (CC via the checker, FC via the judge),
/// then selects candidates and builds the report.
GateResult run_gate(std::vector<CandidateBundle> bundles, verify::CheckerBackend& checker,
                    JudgeBackend& judge, const GateOptions& options);

}  // namespace lemmaforge::quality
