#pragma once

// Have-block decomposition of structured proofs.
//
// Supported grammar: a proof starts with "by"; tactic blocks are delimited by
// indentation. A have-introduction is
//
//     have NAME : GOAL := by TACTIC          (inline body)
//     have NAME : GOAL := by                 (block body, strictly deeper lines)
//       ...
//
// where "NAME" may be omitted ("this"). Other lines are opaque tactics; a
// deeper-indented line after an opaque tactic is a continuation. Brackets
// must balance. Comments are ignored when reading structure.

#include <cstdint>
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
#include "lemmaforge/iterate.hpp"
#include "lemmaforge/verify.hpp"

namespace lemmaforge::sketch {

inline constexpr std::string_view kPlaceholder = "sorry";
inline constexpr int kDefaultAttempts = 32;

/// Parse failure carrying the byte offset into the proof text.
class SketchError : public ParseError {
 public:
  SketchError(const std::string& message, std::size_t offset, std::size_t line)
      : ParseError(message, line), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
};

struct SketchNode {
  std::string name;
  std::string subgoal_text;
  Span have_span;  // first character of "have" to the end of the body
  Span body_span;  // text after "by" through the last body line
  int depth = 1;
  std::vector<SketchNode> children;
};

/// Top-level have nodes in source order (the root is implicit).
struct SketchTree {
  std::vector<SketchNode> nodes;
};

SketchTree parse_have_blocks(std::string_view proof_text);

/// Every top-level have body becomes " sorry"; everything else is kept.
std::string strip_subproofs(const SketchTree& tree, std::string_view proof_text);
std::string strip_subproofs(std::string_view proof_text);

struct Premise {
  std::string name;  // binder names, e.g. "h₀" or "x y"
  std::string type;
  std::string text;  // as written, brackets included
};

struct Subproblem {
  std::size_t node_index = 0;
  std::string name;
  std::string goal;
  std::vector<Premise> hypotheses;  // statement premises, then earlier subgoals

  /// Standalone statement: "theorem <base>_<name> <hypotheses> : <goal> :=".
  corpus::FormalStatement to_statement(const corpus::FormalStatement& parent) const;
};

/// Explicit binders of a theorem statement, in order.
std::vector<Premise> statement_premises(std::string_view body);
/// Text between the binders' closing colon and ":=".
std::optional<std::string> statement_goal(std::string_view body);

std::vector<Subproblem> extract_subproblems(const SketchTree& tree,
                                            const corpus::FormalStatement& statement);

struct SubproofResult {
  bool solved = false;
  std::optional<std::string> proof;  // starts with "by"
  int attempts = 0;                  // samples verified (index of the winner, 1-based)
  std::string error;                 // prover failure, if any
};

struct SolveOptions {
  int attempts = kDefaultAttempts;
  std::uint64_t seed = 0;
  std::size_t concurrency = 4;
  verify::Millis timeout = verify::kDefaultTimeout;
};

/// Requests `attempts` samples per subproblem and verifies them in order; the
/// first pass wins. Prover failures are recorded per node.
std::vector<SubproofResult> solve_subproblems(std::span<const Subproblem> subproblems,
                                              const corpus::FormalStatement& statement,
                                              iterate::ProverBackend& prover,
                                              verify::CheckerBackend& checker,
                                              const SolveOptions& options = {});

/// Replaces the placeholders of the top-level have nodes, in order, with the
/// given proofs (each starting with "by"). Multi-line bodies not indented
/// past their have line are re-indented. Throws ContractViolation naming
/// the node when a subproof is missing.
std::string assemble(std::string_view sketch_text, const std::map<std::size_t, std::string>& subproofs);

/// "by" + body text of every top-level node, keyed by node index.
std::map<std::size_t, std::string> original_bodies(const SketchTree& tree, std::string_view proof_text);

struct SketchOutcome {
  std::string statement_id;
  std::string status;  // pass | fail | sketch_invalid | subgoal_failed | parse_error
  std::string detail;
  std::vector<Subproblem> subproblems;
  std::vector<SubproofResult> results;
  std::optional<std::string> assembled;

  json to_json() const;
};

SketchOutcome run_sketch(const corpus::FormalStatement& statement, std::string_view proof_text,
                         iterate::ProverBackend& prover, verify::CheckerBackend& checker,
                         const SolveOptions& options = {});

// --- goal equations ---------------------------------------------------------

struct GoalEquation {
  std::string lhs;
  std::string rhs;

  std::string difference() const { return "(" + lhs + ") - (" + rhs + ")"; }
};

/// Splits a goal "A = B" at its single top-level '='. Goals with any other
/// top-level relation or connective give nullopt.
std::optional<GoalEquation> split_goal_equation(std::string_view goal);
std::optional<GoalEquation> extract_goal_equation(const corpus::FormalStatement& statement);

class SimplifierBackend {
 public:
  virtual ~SimplifierBackend() = default;
  /// Returns the simplified expression text; throws on failure.
  virtual std::string simplify(const std::string& difference_expression_text) = 0;
};

/// Looks the expression up in a table; unknown expressions come back unchanged.
class ScriptedSimplifier final : public SimplifierBackend {
 public:
  explicit ScriptedSimplifier(std::map<std::string, std::string> table) : table_(std::move(table)) {}
  /// Lines of {"difference_expression_text", "simplified_text"}.
  static ScriptedSimplifier from_file(const std::filesystem::path& path);
  std::string simplify(const std::string& expr) override;

 private:
  std::map<std::string, std::string> table_;
};

/// Evaluates closed integer expressions of the toy language.
class ToySimplifier final : public SimplifierBackend {
 public:
  std::string simplify(const std::string& expr) override;
};

/// POSTs {"difference_expression_text"}, expects {"simplified_text"}.
class HttpSimplifier final : public SimplifierBackend {
 public:
  explicit HttpSimplifier(http::Endpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::string simplify(const std::string& expr) override;

 private:
  http::Endpoint endpoint_;
};

struct SimplifyRecord {
  std::string statement_id;
  std::optional<GoalEquation> equation;
  std::string simplified;
  bool closable = false;
  std::string error;

  json to_json() const;
};

std::vector<SimplifyRecord> simplify_statements(std::span<const corpus::FormalStatement> statements,
                                                SimplifierBackend& simplifier);

}  // namespace lemmaforge::sketch
