#include "lemmaforge/toy_lang.hpp"

#include <cctype>
#include <thread>

#include <fmt/format.h>

#include "lemmaforge/common.hpp"
#include "lemmaforge/corpus.hpp"

namespace lemmaforge::toy {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool is_ident_start(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isalpha(u) || c == '_' || u >= 0x80;
}

bool is_ident_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) || c == '_' || c == '\'' || c == '.' || u >= 0x80;
}

LangError error_at(std::string_view text, std::size_t offset, std::string message) {
  LangError e{std::move(message), 1, 1};
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++e.line;
      e.column = 1;
    } else {
      ++e.column;
    }
  }
  return e;
}

// Offset of the first unbalanced bracket, if any.
std::optional<std::size_t> unbalanced_bracket(std::string_view text) {
  std::vector<std::pair<char, std::size_t>> stack;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '(' || c == '[' || c == '{') {
      stack.emplace_back(c, i);
    } else if (c == ')' || c == ']' || c == '}') {
      const char open = c == ')' ? '(' : (c == ']' ? '[' : '{');
      if (stack.empty() || stack.back().first != open) return i;
      stack.pop_back();
    }
  }
  if (!stack.empty()) return stack.back().second;
  return std::nullopt;
}

// Recursive-descent arithmetic. In syntax-only mode identifiers are accepted.
class ExprParser {
 public:
  ExprParser(std::string_view s, bool evaluate) : s_(s), eval_(evaluate) {}

  // Returns true when the whole input is one well-formed expression.
  bool parse() {
    skip();
    if (pos_ >= s_.size()) return fail("expected an expression");
    value_ = expr();
    if (!syntax_error_.empty()) return false;
    skip();
    if (pos_ != s_.size()) return fail(fmt::format("unexpected '{}'", s_[pos_]));
    return true;
  }

  std::int64_t value() const { return value_; }
  const std::string& syntax_error() const { return syntax_error_; }
  const std::string& eval_error() const { return eval_error_; }
  std::size_t error_pos() const { return error_pos_; }

 private:
  void skip() {
    while (pos_ < s_.size() && is_space(s_[pos_])) ++pos_;
  }

  bool fail(std::string message) {
    if (syntax_error_.empty()) {
      syntax_error_ = std::move(message);
      error_pos_ = pos_;
    }
    return false;
  }

  void eval_fail(std::string message) {
    if (eval_error_.empty()) eval_error_ = std::move(message);
  }

  std::int64_t combine(char op, std::int64_t a, std::int64_t b) {
    std::int64_t r = 0;
    switch (op) {
      case '+':
        if (__builtin_add_overflow(a, b, &r)) eval_fail("integer overflow");
        return r;
      case '-':
        if (__builtin_sub_overflow(a, b, &r)) eval_fail("integer overflow");
        return r;
      case '*':
        if (__builtin_mul_overflow(a, b, &r)) eval_fail("integer overflow");
        return r;
      case '/':
      case '%':
        if (b == 0) {
          eval_fail("division by zero");
          return 0;
        }
        if (a == INT64_MIN && b == -1) {
          eval_fail("integer overflow");
          return 0;
        }
        return op == '/' ? a / b : a % b;
    }
    return 0;
  }

  std::int64_t expr() {
    std::int64_t acc = term();
    for (;;) {
      skip();
      if (pos_ < s_.size() && (s_[pos_] == '+' || s_[pos_] == '-')) {
        const char op = s_[pos_++];
        acc = combine(op, acc, term());
      } else {
        return acc;
      }
    }
  }

  std::int64_t term() {
    std::int64_t acc = factor();
    for (;;) {
      skip();
      if (pos_ < s_.size() && (s_[pos_] == '*' || s_[pos_] == '/' || s_[pos_] == '%')) {
        const char op = s_[pos_++];
        acc = combine(op, acc, factor());
      } else {
        return acc;
      }
    }
  }

  std::int64_t factor() {
    skip();
    if (pos_ >= s_.size()) {
      fail("unexpected end of expression");
      return 0;
    }
    const char c = s_[pos_];
    if (c == '-') {
      ++pos_;
      return combine('-', 0, factor());
    }
    if (c == '(') {
      ++pos_;
      const std::int64_t v = expr();
      skip();
      if (pos_ >= s_.size() || s_[pos_] != ')') {
        fail("expected ')'");
        return 0;
      }
      ++pos_;
      return v;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      std::int64_t v = 0;
      while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
        if (__builtin_mul_overflow(v, 10, &v) ||
            __builtin_add_overflow(v, s_[pos_] - '0', &v))
          eval_fail("integer literal out of range");
        ++pos_;
      }
      return v;
    }
    if (is_ident_start(c)) {
      const std::size_t b = pos_;
      while (pos_ < s_.size() && is_ident_char(s_[pos_])) ++pos_;
      if (eval_) eval_fail(fmt::format("unknown identifier '{}'", s_.substr(b, pos_ - b)));
      return 0;
    }
    fail(fmt::format("unexpected '{}'", c));
    return 0;
  }

  std::string_view s_;
  bool eval_;
  std::size_t pos_ = 0;
  std::int64_t value_ = 0;
  std::string syntax_error_;
  std::string eval_error_;
  std::size_t error_pos_ = 0;
};

// Offset of the single top-level '=' of an equation, skipping ':=', '==',
// '<=', '>=', '!='.
std::optional<std::size_t> equation_split(std::string_view text, std::string* error) {
  int depth = 0;
  std::optional<std::size_t> found;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c != '=' || depth != 0) continue;
    const char prev = i > 0 ? text[i - 1] : ' ';
    const char next = i + 1 < text.size() ? text[i + 1] : ' ';
    if (prev == ':' || prev == '<' || prev == '>' || prev == '!' || prev == '=' || next == '=')
      continue;
    if (found) {
      if (error) *error = "more than one '=' in equation";
      return std::nullopt;
    }
    found = i;
  }
  if (!found && error) *error = "expected an equation 'lhs = rhs'";
  return found;
}

// Parses "lhs = rhs" where both sides are syntactically valid expressions.
std::optional<Equation> parse_equation(std::string_view full, std::size_t begin, std::size_t end,
                                       std::optional<LangError>& err) {
  const std::string_view text = full.substr(begin, end - begin);
  std::string why;
  const auto split = equation_split(text, &why);
  if (!split) {
    err = error_at(full, begin, why);
    return std::nullopt;
  }
  Equation eq{trim(text.substr(0, *split)), trim(text.substr(*split + 1))};
  for (const auto& [side, off] :
       {std::pair{text.substr(0, *split), begin}, std::pair{text.substr(*split + 1), begin + *split + 1}}) {
    ExprParser p(side, false);
    if (!p.parse()) {
      err = error_at(full, off + p.error_pos(), p.syntax_error());
      return std::nullopt;
    }
  }
  return eq;
}

struct Cursor {
  std::string_view s;
  std::size_t pos = 0;

  void skip() {
    while (pos < s.size() && is_space(s[pos])) ++pos;
  }
  bool eat(std::string_view tok) {
    skip();
    if (s.compare(pos, tok.size(), tok) == 0) {
      pos += tok.size();
      return true;
    }
    return false;
  }
  std::string ident() {
    skip();
    if (pos >= s.size() || !is_ident_start(s[pos])) return {};
    const std::size_t b = pos;
    while (pos < s.size() && is_ident_char(s[pos])) ++pos;
    return std::string(s.substr(b, pos - b));
  }
};

}  // namespace

std::optional<std::int64_t> evaluate(std::string_view expr, std::string* error) {
  ExprParser p(expr, true);
  if (!p.parse()) {
    if (error) *error = p.syntax_error();
    return std::nullopt;
  }
  if (!p.eval_error().empty()) {
    if (error) *error = p.eval_error();
    return std::nullopt;
  }
  return p.value();
}

StatementParse parse_statement(std::string_view raw_body) {
  const std::string body = corpus::blank_comments(raw_body);
  StatementParse out;
  auto fail = [&](std::size_t offset, std::string msg) {
    out.error = error_at(body, offset, std::move(msg));
    return out;
  };

  if (trim(body).empty()) return fail(0, "empty statement");
  if (auto bad = unbalanced_bracket(body)) return fail(*bad, "unbalanced bracket");

  const auto delim = corpus::proof_delimiter_offset(body);
  if (!delim) return fail(body.size(), "statement must end with ':='");

  Cursor cur{std::string_view(body).substr(0, *delim)};
  Statement st;
  const std::string keyword = cur.ident();
  if (keyword != "theorem" && keyword != "lemma")
    return fail(0, "expected 'theorem' or 'lemma'");
  st.name = cur.ident();
  if (st.name.empty()) return fail(cur.pos, "expected a theorem name");

  for (;;) {
    cur.skip();
    if (!cur.eat("(")) break;
    Hypothesis h;
    h.name = cur.ident();
    if (h.name.empty()) return fail(cur.pos, "expected a hypothesis name");
    if (!cur.eat(":")) return fail(cur.pos, "expected ':' in binder");
    // matching ')' is guaranteed by the balance check
    int depth = 1;
    std::size_t end = cur.pos;
    while (end < cur.s.size()) {
      if (cur.s[end] == '(') ++depth;
      if (cur.s[end] == ')' && --depth == 0) break;
      ++end;
    }
    auto eq = parse_equation(body, cur.pos, end, out.error);
    if (!eq) return out;
    h.eq = std::move(*eq);
    st.premises.push_back(std::move(h));
    cur.pos = end + 1;
  }

  cur.skip();
  if (cur.pos >= cur.s.size() || cur.s[cur.pos] != ':')
    return fail(cur.pos, "expected ':' before the goal");
  ++cur.pos;
  auto goal = parse_equation(body, cur.pos, *delim, out.error);
  if (!goal) return out;
  st.goal = std::move(*goal);
  out.statement = std::move(st);
  return out;
}

std::string render_statement(const Statement& s) {
  std::string out = "theorem " + s.name;
  for (const auto& h : s.premises) out += fmt::format(" ({} : {} = {})", h.name, h.eq.lhs, h.eq.rhs);
  out += fmt::format(" : {} = {} :=", s.goal.lhs, s.goal.rhs);
  return out;
}

// ---------------------------------------------------------------------------
// Tactic interpreter
// ---------------------------------------------------------------------------

namespace {

struct Line {
  int number = 0;  // 1-based within the proof text
  int indent = 0;
  std::string text;  // trimmed
};

struct TimedOut {};

struct Failure {
  LangError error;
};

class Interpreter {
 public:
  Interpreter(std::chrono::steady_clock::time_point deadline) : deadline_(deadline) {}

  bool used_placeholder = false;

  // Runs the tactic (or tactic block) following a "by" token.
  void run_by(const Equation& goal, std::string_view inline_tactic, const std::vector<Line>& block,
              int by_line, int by_column) {
    bool closed = false;
    if (!inline_tactic.empty()) {
      if (!block.empty())
        throw Failure{{"unexpected tactic block after an inline proof", block.front().number,
                       block.front().indent + 1}};
      run_tactic(goal, std::string(inline_tactic), closed, by_line, by_column);
    } else {
      if (block.empty()) throw Failure{{"expected a tactic block after 'by'", by_line, by_column}};
      run_block(goal, block, closed);
    }
    if (!closed) throw Failure{{"unsolved goals", by_line, by_column}};
  }

 private:
  void check_clock() {
    if (std::chrono::steady_clock::now() >= deadline_) throw TimedOut{};
  }

  void run_block(const Equation& goal, const std::vector<Line>& lines, bool& closed) {
    const int indent = lines.front().indent;
    std::size_t i = 0;
    while (i < lines.size()) {
      const Line& line = lines[i];
      if (line.indent != indent)
        throw Failure{{"unexpected indentation", line.number, line.indent + 1}};
      std::size_t j = i + 1;
      while (j < lines.size() && lines[j].indent > indent) ++j;
      std::vector<Line> body(lines.begin() + static_cast<std::ptrdiff_t>(i + 1),
                             lines.begin() + static_cast<std::ptrdiff_t>(j));
      if (line.text.rfind("have ", 0) == 0) {
        if (closed) throw Failure{{"no goals to be proved", line.number, line.indent + 1}};
        run_have(line, body);
      } else {
        if (!body.empty())
          throw Failure{{"unexpected indentation", body.front().number, body.front().indent + 1}};
        run_tactic(goal, line.text, closed, line.number, line.indent + 1);
      }
      i = j;
    }
  }

  void run_have(const Line& line, const std::vector<Line>& body) {
    const std::string& t = line.text;
    const std::size_t assign = t.find(":=");
    if (assign == std::string::npos)
      throw Failure{{"expected ':=' in have", line.number, line.indent + 1}};
    Cursor cur{std::string_view(t).substr(0, assign)};
    cur.eat("have");
    if (cur.ident().empty()) throw Failure{{"expected a name after have", line.number, line.indent + 1}};
    if (!cur.eat(":")) throw Failure{{"expected ':' after have name", line.number, line.indent + 1}};
    std::optional<LangError> err;
    auto eq = parse_equation(t, cur.pos, assign, err);
    if (!eq) throw Failure{{err->message, line.number, line.indent + err->column}};
    std::string_view rest = std::string_view(t).substr(assign + 2);
    const std::string after = trim(rest);
    if (after.rfind("by", 0) != 0 || (after.size() > 2 && !is_space(after[2])))
      throw Failure{{"expected 'by' after ':='", line.number, line.indent + 1}};
    run_by(*eq, trim(std::string_view(after).substr(2)), body, line.number, line.indent + 1);
  }

  void run_tactic(const Equation& goal, const std::string& text, bool& closed, int line, int col) {
    check_clock();
    Cursor cur{text};
    const std::string word = cur.ident();
    const std::string rest = trim(std::string_view(text).substr(cur.pos));

    if (word == "try") {
      if (rest.empty()) throw Failure{{"expected a tactic after try", line, col}};
      bool attempt = closed;
      try {
        run_tactic(goal, rest, attempt, line, col + 4);
        closed = attempt;
      } catch (const Failure&) {
      }
      return;
    }
    if (word == "sleep") {
      std::int64_t ms = 0;
      try {
        ms = std::stoll(rest);
      } catch (...) {
        throw Failure{{"sleep expects a duration in milliseconds", line, col}};
      }
      const auto until = std::chrono::steady_clock::now() + std::chrono::milliseconds(ms);
      if (until >= deadline_) {
        std::this_thread::sleep_until(deadline_);
        throw TimedOut{};
      }
      std::this_thread::sleep_until(until);
      return;
    }
    if (closed) throw Failure{{"no goals to be proved", line, col}};
    if (word == "eval" && rest.empty()) {
      std::string why;
      const auto lhs = evaluate(goal.lhs, &why);
      if (!lhs) throw Failure{{"eval failed: " + why, line, col}};
      const auto rhs = evaluate(goal.rhs, &why);
      if (!rhs) throw Failure{{"eval failed: " + why, line, col}};
      if (*lhs != *rhs)
        throw Failure{{fmt::format("eval failed: {} evaluates to {}, {} evaluates to {}", goal.lhs,
                                   *lhs, goal.rhs, *rhs),
                       line, col}};
      closed = true;
      return;
    }
    if (word == "sorry" && rest.empty()) {
      used_placeholder = true;
      closed = true;
      return;
    }
    throw Failure{{fmt::format("unknown tactic '{}'", text), line, col}};
  }

  std::chrono::steady_clock::time_point deadline_;
};

}  // namespace

ProofOutcome run_proof(const Equation& goal, std::string_view raw_proof,
                       std::chrono::steady_clock::time_point deadline) {
  const std::string proof = corpus::blank_comments(normalize_newlines(raw_proof));
  ProofOutcome out;

  const auto raw_lines = split_lines(proof);
  std::vector<Line> lines;
  for (std::size_t i = 0; i < raw_lines.size(); ++i) {
    const std::string& l = raw_lines[i];
    const std::string t = trim(l);
    if (t.empty()) continue;
    const auto indent = l.find_first_not_of(" \t");
    lines.push_back(Line{static_cast<int>(i + 1), static_cast<int>(indent), t});
  }

  Interpreter interp(deadline);
  try {
    if (lines.empty()) throw Failure{{"empty proof", 1, 1}};
    if (auto bad = unbalanced_bracket(proof)) {
      const LangError e = error_at(proof, *bad, "unbalanced bracket");
      throw Failure{e};
    }
    const Line& first = lines.front();
    if (first.text.rfind("by", 0) != 0 || (first.text.size() > 2 && !is_space(first.text[2])))
      throw Failure{{"proof must start with 'by'", first.number, first.indent + 1}};
    const std::string inline_tactic = trim(std::string_view(first.text).substr(2));
    const std::vector<Line> block(lines.begin() + 1, lines.end());
    interp.run_by(goal, inline_tactic, block, first.number, first.indent + 1);
    out.kind = ProofOutcome::Kind::closed;
  } catch (const Failure& f) {
    out.kind = ProofOutcome::Kind::failed;
    out.error = f.error;
  } catch (const TimedOut&) {
    out.kind = ProofOutcome::Kind::timed_out;
  }
  out.used_placeholder = interp.used_placeholder;
  return out;
}

}  // namespace lemmaforge::toy
