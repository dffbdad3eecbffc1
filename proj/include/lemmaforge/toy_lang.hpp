#pragma once

// Miniature proof language used as a deterministic stand-in for the external
// proof assistant.
//
//   statement := ("theorem" | "lemma") NAME binder* ":" expr "=" expr ":="
//   binder    := "(" NAME ":" expr "=" expr ")"
//   expr      := integer arithmetic over + - * / % and parentheses
//   proof     := "by" tactic | "by" NEWLINE block
//   tactic    := "eval" | "sorry" | "sleep" MS | "try" tactic
//              | "have" NAME ":" expr "=" expr ":=" "by" [tactic]   (body indented below)
//
// "eval" closes the goal iff both sides evaluate equal over 64-bit integers.
// "have" bodies must close their own subgoal. Every other tactic fails.

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lemmaforge::toy {

struct Equation {
  std::string lhs;
  std::string rhs;
};

struct Hypothesis {
  std::string name;
  Equation eq;
};

struct Statement {
  std::string name;
  std::vector<Hypothesis> premises;
  Equation goal;
};

/// Error with a 1-based line/column relative to the parsed text.
struct LangError {
  std::string message;
  int line = 1;
  int column = 1;
};

struct StatementParse {
  std::optional<Statement> statement;
  std::optional<LangError> error;
};

StatementParse parse_statement(std::string_view body);

/// Evaluates an integer expression; nullopt with `error` set on failure.
std::optional<std::int64_t> evaluate(std::string_view expr, std::string* error = nullptr);

/// Renders "theorem name (h : a = b) ... : lhs = rhs :=".
std::string render_statement(const Statement& s);

struct ProofOutcome {
  enum class Kind { closed, failed, timed_out } kind = Kind::failed;
  std::optional<LangError> error;  // set when failed
  bool used_placeholder = false;
};

/// Runs `proof` against `goal`. Sleeps stop at `deadline` and yield timed_out.
ProofOutcome run_proof(const Equation& goal, std::string_view proof,
                       std::chrono::steady_clock::time_point deadline);

}  // namespace lemmaforge::toy
