#include "lemmaforge/sketch.hpp"

#include <algorithm>
#include <cstring>
#include <regex>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include "lemmaforge/toy_lang.hpp"

namespace lemmaforge::sketch {

namespace {

struct RawLine {
  std::size_t start = 0;  // offset of the first byte
  std::size_t end = 0;    // offset past the last byte, newline and CR excluded
  std::size_t number = 0;
  int indent = 0;
  std::string code;  // comment-blanked and trimmed
};

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

std::size_t line_of(std::string_view text, std::size_t offset) {
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(
                                                                             std::min(offset, text.size())),
                                                 '\n'));
}

[[noreturn]] void fail(std::string_view text, std::size_t offset, const std::string& msg) {
  throw SketchError(fmt::format("offset {}: {}", offset, msg), offset, line_of(text, offset));
}

// Brackets outside comments and string literals must pair up.
void check_brackets(std::string_view text, std::string_view blanked) {
  std::vector<std::pair<char, std::size_t>> stack;
  bool in_string = false;
  for (std::size_t i = 0; i < blanked.size(); ++i) {
    const char c = blanked[i];
    if (in_string) {
      if (c == '\\') ++i;
      else if (c == '"') in_string = false;
      continue;
    }
    switch (c) {
      case '"': in_string = true; break;
      case '(': case '[': case '{': stack.emplace_back(c, i); break;
      case ')': case ']': case '}': {
        const char open = c == ')' ? '(' : c == ']' ? '[' : '{';
        if (stack.empty() || stack.back().first != open)
          fail(text, i, fmt::format("unbalanced '{}'", c));
        stack.pop_back();
        break;
      }
      default: break;
    }
  }
  if (in_string) fail(text, text.size(), "unterminated string literal");
  if (!stack.empty()) fail(text, stack.back().second, fmt::format("unclosed '{}'", stack.back().first));
}

std::vector<RawLine> structural_lines(std::string_view text, std::string_view blanked) {
  std::vector<RawLine> out;
  std::size_t pos = 0, number = 1;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    RawLine l;
    l.start = pos;
    l.end = nl;
    if (l.end > l.start && text[l.end - 1] == '\r') --l.end;
    l.number = number;
    const std::string_view b = blanked.substr(pos, l.end - pos);
    std::size_t k = 0;
    while (k < b.size() && (b[k] == ' ' || b[k] == '\t')) ++k;
    l.indent = static_cast<int>(k);
    l.code = trim(b);
    if (!l.code.empty()) out.push_back(std::move(l));
    if (nl == text.size()) break;
    pos = nl + 1;
    ++number;
  }
  return out;
}

const std::regex& have_pattern() {
  static const std::regex re(R"(^have(?:\s+([^\s:]+))?\s*:\s*(.+?)\s*:=\s*by(?:\s(.*))?$)");
  return re;
}

class TreeParser {
 public:
  TreeParser(std::string_view text, std::string_view blanked, std::vector<RawLine> lines)
      : text_(text), blanked_(blanked), lines_(std::move(lines)) {}

  std::vector<SketchNode> block(std::size_t a, std::size_t b, int depth, int parent_indent) {
    std::vector<SketchNode> out;
    if (a >= b) return out;
    const int indent = lines_[a].indent;
    std::size_t i = a;
    while (i < b) {
      const RawLine& line = lines_[i];
      if (line.indent != indent)
        fail(text_, line.start + static_cast<std::size_t>(line.indent),
             fmt::format("line {}: indentation {} matches no enclosing block (expected {}, parent {})",
                         line.number, line.indent, indent, parent_indent));
      std::size_t j = i + 1;
      while (j < b && lines_[j].indent > indent) ++j;
      std::smatch m;
      if (std::regex_match(line.code, m, have_pattern())) out.push_back(have_node(line, m, i, j, depth));
      i = j;
    }
    return out;
  }

 private:
  SketchNode have_node(const RawLine& line, const std::smatch& m, std::size_t i, std::size_t j, int depth) {
    const std::size_t code_start = line.start + static_cast<std::size_t>(line.indent);
    SketchNode node;
    node.name = m[1].matched ? m[1].str() : "this";
    node.subgoal_text = trim(text_.substr(code_start + static_cast<std::size_t>(m.position(2)),
                                          static_cast<std::size_t>(m.length(2))));
    const std::size_t by_end = m[3].matched ? code_start + static_cast<std::size_t>(m.position(3))
                                            : code_start + line.code.size();
    const bool inline_body = m[3].matched && !trim(m[3].str()).empty();
    node.depth = depth;
    node.have_span.begin = code_start;
    node.body_span.begin = by_end;
    if (m[3].matched) node.body_span.begin = by_end - 1;  // keep the separating space in the body
    if (inline_body) {
      if (j > i + 1)
        fail(text_, lines_[i + 1].start + static_cast<std::size_t>(lines_[i + 1].indent),
             fmt::format("line {}: tactic block after an inline have body", lines_[i + 1].number));
      node.body_span.end = line.end;
    } else {
      if (j == i + 1)
        fail(text_, by_end, fmt::format("line {}: expected a tactic block after 'by'", line.number));
      node.body_span.end = lines_[j - 1].end;
      node.children = block(i + 1, j, depth + 1, line.indent);
    }
    node.have_span.end = node.body_span.end;
    return node;
  }

  std::string_view text_;
  std::string_view blanked_;
  std::vector<RawLine> lines_;
};

int column_of(std::string_view text, std::size_t offset) {
  const std::size_t nl = text.rfind('\n', offset == 0 ? 0 : offset - 1);
  const std::size_t start = (nl == std::string_view::npos || offset == 0) ? 0 : nl + 1;
  return static_cast<int>(offset - start);
}

// Proof "by ..." to the text that follows "by" inside a have line.
std::string body_from_proof(std::string_view proof, int have_indent, std::string_view node_label) {
  const std::string t = [&] {
    std::string s(proof);
    while (!s.empty() && is_space(s.back())) s.pop_back();
    std::size_t k = 0;
    while (k < s.size() && is_space(s[k])) ++k;
    return s.substr(k);
  }();
  if (t.rfind("by", 0) != 0 || (t.size() > 2 && !is_space(t[2])))
    throw ContractViolation(fmt::format("subproof for {} must start with 'by'", node_label));
  const std::string rest = t.substr(2);
  const std::size_t nl = rest.find('\n');
  if (nl == std::string::npos) {
    if (trim(rest).empty()) throw ContractViolation(fmt::format("subproof for {} is empty", node_label));
    return rest.front() == ' ' ? rest : " " + trim(rest);
  }
  const std::string first = rest.substr(0, nl);
  std::vector<std::string> block = split_lines(std::string_view(rest).substr(nl + 1));
  int min_indent = -1;
  for (const auto& l : block) {
    if (trim(l).empty()) continue;
    const int ind = static_cast<int>(l.find_first_not_of(" \t"));
    min_indent = min_indent < 0 ? ind : std::min(min_indent, ind);
  }
  if (min_indent < 0) throw ContractViolation(fmt::format("subproof for {} is empty", node_label));
  const int shift = min_indent > have_indent ? 0 : have_indent + 2 - min_indent;
  std::string out = first;
  for (const auto& l : block) {
    out += '\n';
    if (trim(l).empty()) continue;
    out += std::string(static_cast<std::size_t>(shift), ' ') + l;
  }
  return out;
}

}  // namespace

SketchTree parse_have_blocks(std::string_view proof_text) {
  const std::string blanked = corpus::blank_comments(proof_text);
  check_brackets(proof_text, blanked);
  auto lines = structural_lines(proof_text, blanked);
  if (lines.empty()) fail(proof_text, 0, "empty proof");
  const RawLine& first = lines.front();
  if (first.code.rfind("by", 0) != 0 || (first.code.size() > 2 && !is_space(first.code[2])))
    fail(proof_text, first.start + static_cast<std::size_t>(first.indent), "proof must start with 'by'");
  SketchTree tree;
  if (first.code.size() > 2) {
    if (lines.size() > 1)
      fail(proof_text, lines[1].start, "tactic block after an inline proof");
    return tree;
  }
  if (lines.size() == 1) fail(proof_text, first.end, "expected a tactic block after 'by'");
  if (lines[1].indent <= first.indent)
    fail(proof_text, lines[1].start, "tactic block must be indented past 'by'");
  const std::size_t n = lines.size();
  const int by_indent = first.indent;
  TreeParser parser(proof_text, blanked, std::move(lines));
  tree.nodes = parser.block(1, n, 1, by_indent);
  return tree;
}

std::string strip_subproofs(const SketchTree& tree, std::string_view proof_text) {
  std::string out(proof_text);
  for (auto it = tree.nodes.rbegin(); it != tree.nodes.rend(); ++it)
    out.replace(it->body_span.begin, it->body_span.end - it->body_span.begin,
                fmt::format(" {}", kPlaceholder));
  return out;
}

std::string strip_subproofs(std::string_view proof_text) {
  return strip_subproofs(parse_have_blocks(proof_text), proof_text);
}

std::map<std::size_t, std::string> original_bodies(const SketchTree& tree, std::string_view proof_text) {
  std::map<std::size_t, std::string> out;
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const Span s = tree.nodes[i].body_span;
    out[i] = "by" + std::string(proof_text.substr(s.begin, s.end - s.begin));
  }
  return out;
}

std::string assemble(std::string_view sketch_text, const std::map<std::size_t, std::string>& subproofs) {
  const SketchTree tree = parse_have_blocks(sketch_text);
  std::string out(sketch_text);
  for (std::size_t r = tree.nodes.size(); r-- > 0;) {
    const SketchNode& node = tree.nodes[r];
    const std::string label = fmt::format("node {} '{}'", r, node.name);
    const auto it = subproofs.find(r);
    if (it == subproofs.end()) throw ContractViolation(fmt::format("no subproof for {}", label));
    const std::string body = body_from_proof(it->second, column_of(sketch_text, node.have_span.begin), label);
    out.replace(node.body_span.begin, node.body_span.end - node.body_span.begin, body);
  }
  for (const auto& [i, _] : subproofs)
    if (i >= tree.nodes.size())
      throw ContractViolation(fmt::format("subproof for node {} but the sketch has {} nodes", i, tree.nodes.size()));
  return out;
}

// ---------------------------------------------------------------------------
// Statements and subproblems
// ---------------------------------------------------------------------------

namespace {

struct StatementShape {
  std::vector<Premise> premises;
  std::size_t goal_begin = 0;
  std::size_t goal_end = 0;
};

std::optional<StatementShape> statement_shape(std::string_view body) {
  const auto delim = corpus::proof_delimiter_offset(body);
  if (!delim) return std::nullopt;
  const std::string blanked = corpus::blank_comments(body);
  std::size_t p = 0;
  auto skip = [&] {
    while (p < *delim && is_space(blanked[p])) ++p;
  };
  auto word = [&] {
    skip();
    const std::size_t s = p;
    while (p < *delim && !is_space(blanked[p]) && !std::strchr("([{:", blanked[p])) ++p;
    return std::string(blanked.substr(s, p - s));
  };
  const std::string kw = word();
  if (kw != "theorem" && kw != "lemma" && kw != "example") return std::nullopt;
  if (kw != "example" && word().empty()) return std::nullopt;

  StatementShape shape;
  for (;;) {
    skip();
    if (p >= *delim) return std::nullopt;
    const char open = blanked[p];
    if (open != '(' && open != '[' && open != '{') break;
    const char close = open == '(' ? ')' : open == '[' ? ']' : '}';
    int depth = 0;
    std::size_t q = p;
    for (; q < *delim; ++q) {
      if (blanked[q] == open) ++depth;
      else if (blanked[q] == close && --depth == 0) break;
    }
    if (q >= *delim) return std::nullopt;
    Premise pr;
    pr.text = std::string(body.substr(p, q + 1 - p));
    const std::string_view inner = std::string_view(blanked).substr(p + 1, q - p - 1);
    std::size_t colon = std::string_view::npos;
    int d = 0;
    for (std::size_t k = 0; k < inner.size(); ++k) {
      if (std::strchr("([{", inner[k])) ++d;
      else if (std::strchr(")]}", inner[k])) --d;
      else if (d == 0 && inner[k] == ':' && (k + 1 >= inner.size() || inner[k + 1] != '=')) {
        colon = k;
        break;
      }
    }
    const std::string_view raw_inner = body.substr(p + 1, q - p - 1);
    if (colon == std::string_view::npos) {
      pr.type = trim(raw_inner);
    } else {
      pr.name = trim(raw_inner.substr(0, colon));
      pr.type = trim(raw_inner.substr(colon + 1));
    }
    shape.premises.push_back(std::move(pr));
    p = q + 1;
  }
  if (blanked[p] != ':') return std::nullopt;
  shape.goal_begin = p + 1;
  shape.goal_end = *delim;
  return shape;
}

}  // namespace

std::vector<Premise> statement_premises(std::string_view body) {
  auto s = statement_shape(body);
  if (!s) throw ParseError(fmt::format("cannot read binders of statement '{}'", trim(body.substr(0, 60))), 1);
  return s->premises;
}

std::optional<std::string> statement_goal(std::string_view body) {
  auto s = statement_shape(body);
  if (!s) return std::nullopt;
  return trim(body.substr(s->goal_begin, s->goal_end - s->goal_begin));
}

corpus::FormalStatement Subproblem::to_statement(const corpus::FormalStatement& parent) const {
  const std::string base = parent.theorem_name.empty() ? std::string("goal") : parent.theorem_name;
  std::string text = fmt::format("theorem {}_sub{}", base, node_index);
  for (const auto& h : hypotheses) text += " " + h.text;
  text += fmt::format(" : {} :=", goal);
  auto st = corpus::make_statement(fmt::format("{}/sub{}", parent.id, node_index), text, parent.header,
                                   parent.formalizer);
  st.informal_id = parent.informal_id;
  st.extra["parent_id"] = parent.id;
  st.extra["have_name"] = name;
  return st;
}

std::vector<Subproblem> extract_subproblems(const SketchTree& tree, const corpus::FormalStatement& statement) {
  const auto premises = statement_premises(statement.body);
  std::vector<Subproblem> out;
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    Subproblem sp;
    sp.node_index = i;
    sp.name = tree.nodes[i].name;
    sp.goal = tree.nodes[i].subgoal_text;
    sp.hypotheses = premises;
    for (std::size_t j = 0; j < i; ++j) {
      const auto& prev = tree.nodes[j];
      sp.hypotheses.push_back({prev.name, prev.subgoal_text, fmt::format("({} : {})", prev.name, prev.subgoal_text)});
    }
    out.push_back(std::move(sp));
  }
  return out;
}

std::vector<SubproofResult> solve_subproblems(std::span<const Subproblem> subproblems,
                                              const corpus::FormalStatement& statement,
                                              iterate::ProverBackend& prover,
                                              verify::CheckerBackend& checker, const SolveOptions& options) {
  if (options.attempts < 1) throw ContractViolation("solve_subproblems: attempts must be >= 1");
  return parallel_map(subproblems, options.concurrency, [&](const Subproblem& sp) {
    SubproofResult r;
    const auto st = sp.to_statement(statement);
    std::vector<std::string> proofs;
    try {
      proofs = prover.prove({st.id, st.header, st.body, options.attempts, derive_seed(options.seed, st.id)});
      if (proofs.size() != static_cast<std::size_t>(options.attempts))
        throw InfrastructureError(
            fmt::format("prover returned {} proofs, expected {}", proofs.size(), options.attempts));
    } catch (const std::exception& e) {
      r.error = e.what();
      spdlog::warn("{}: subgoal '{}' prover failure: {}", statement.id, sp.name, r.error);
      return r;
    }
    const std::string tag = hex64(fnv1a64(st.id));
    for (std::size_t k = 0; k < proofs.size(); ++k) {
      r.attempts = static_cast<int>(k + 1);
      try {
        const auto v = verify::check_proof(
            {st, proofs[k], options.timeout, fmt::format("sketch-{}-{}", tag, k), false}, checker);
        if (v.status == verify::Status::pass) {
          r.solved = true;
          r.proof = proofs[k];
          return r;
        }
      } catch (const InfrastructureError& e) {
        spdlog::warn("{}: subgoal '{}' sample {}: {}", statement.id, sp.name, k, e.what());
      }
    }
    return r;
  });
}

json SketchOutcome::to_json() const {
  json nodes = json::array();
  for (std::size_t i = 0; i < subproblems.size(); ++i) {
    json n{{"index", subproblems[i].node_index}, {"name", subproblems[i].name}, {"goal", subproblems[i].goal}};
    if (i < results.size()) {
      n["solved"] = results[i].solved;
      n["attempts"] = results[i].attempts;
      if (results[i].proof) n["proof_text"] = *results[i].proof;
      if (!results[i].error.empty()) n["error"] = results[i].error;
    }
    nodes.push_back(std::move(n));
  }
  json j{{"statement_id", statement_id}, {"status", status}, {"nodes", nodes}};
  if (!detail.empty()) j["detail"] = detail;
  if (assembled) j["assembled_proof"] = *assembled;
  return j;
}

SketchOutcome run_sketch(const corpus::FormalStatement& statement, std::string_view proof_text,
                         iterate::ProverBackend& prover, verify::CheckerBackend& checker,
                         const SolveOptions& options) {
  SketchOutcome out;
  out.statement_id = statement.id;
  SketchTree tree;
  try {
    tree = parse_have_blocks(proof_text);
    out.subproblems = extract_subproblems(tree, statement);
  } catch (const ParseError& e) {
    out.status = "parse_error";
    out.detail = e.what();
    return out;
  }
  const std::string sketch = strip_subproofs(tree, proof_text);
  const std::string tag = hex64(fnv1a64(statement.id));
  const auto sv = verify::check_proof({statement, sketch, options.timeout, "sketch-" + tag, true}, checker);
  if (sv.status != verify::Status::pass) {
    out.status = "sketch_invalid";
    out.detail = sv.diagnostics.empty() ? verify::to_string(sv.status) : sv.diagnostics.front().message;
    return out;
  }
  out.results = solve_subproblems(out.subproblems, statement, prover, checker, options);
  std::map<std::size_t, std::string> proofs;
  std::vector<std::string> missing;
  for (std::size_t i = 0; i < out.results.size(); ++i) {
    if (out.results[i].solved) proofs[i] = *out.results[i].proof;
    else missing.push_back(out.subproblems[i].name);
  }
  if (!missing.empty()) {
    out.status = "subgoal_failed";
    out.detail = fmt::format("unsolved: {}", fmt::join(missing, ", "));
    return out;
  }
  out.assembled = assemble(sketch, proofs);
  const auto fv =
      verify::check_proof({statement, *out.assembled, options.timeout, "assembled-" + tag, false}, checker);
  out.status = std::string(verify::to_string(fv.status));
  if (!fv.diagnostics.empty()) out.detail = fv.diagnostics.front().message;
  return out;
}

// ---------------------------------------------------------------------------
// Goal equations
// ---------------------------------------------------------------------------

std::optional<GoalEquation> split_goal_equation(std::string_view goal) {
  const std::string blanked = corpus::blank_comments(goal);
  static const std::vector<std::string_view> rejected{"≠", "≤", "≥", "∧", "∨", "→", "↔", "¬", "∀", "∃", "∣",
                                                      "<", ">", "!=", "==", "->", "/\\", "\\/"};
  int depth = 0;
  std::optional<std::size_t> eq;
  for (std::size_t i = 0; i < blanked.size(); ++i) {
    const char c = blanked[i];
    if (c == '(' || c == '[' || c == '{') { ++depth; continue; }
    if (c == ')' || c == ']' || c == '}') { --depth; continue; }
    if (depth != 0) continue;
    for (auto r : rejected)
      if (std::string_view(blanked).substr(i, r.size()) == r) return std::nullopt;
    if (c == ',' ) return std::nullopt;
    if (c == '=') {
      if (eq) return std::nullopt;
      eq = i;
    }
  }
  if (!eq) return std::nullopt;
  GoalEquation g{trim(goal.substr(0, *eq)), trim(goal.substr(*eq + 1))};
  if (g.lhs.empty() || g.rhs.empty()) return std::nullopt;
  return g;
}

std::optional<GoalEquation> extract_goal_equation(const corpus::FormalStatement& statement) {
  const auto goal = statement_goal(statement.body);
  if (!goal) return std::nullopt;
  return split_goal_equation(*goal);
}

ScriptedSimplifier ScriptedSimplifier::from_file(const std::filesystem::path& path) {
  std::map<std::string, std::string> table;
  for_each_jsonl(path, [&](const json& j, std::size_t line) {
    try {
      table[j.at("difference_expression_text").get<std::string>()] = j.at("simplified_text").get<std::string>();
    } catch (const json::exception& e) {
      throw ParseError(fmt::format("{}: {}", path.string(), e.what()), line);
    }
  });
  return ScriptedSimplifier(std::move(table));
}

std::string ScriptedSimplifier::simplify(const std::string& expr) {
  const auto it = table_.find(expr);
  return it == table_.end() ? expr : it->second;
}

std::string ToySimplifier::simplify(const std::string& expr) {
  std::string err;
  const auto v = toy::evaluate(expr, &err);
  if (!v) throw Error(fmt::format("cannot simplify '{}': {}", expr, err));
  return std::to_string(*v);
}

std::string HttpSimplifier::simplify(const std::string& expr) {
  const json resp = http::post_json(endpoint_, json{{"difference_expression_text", expr}});
  if (!resp.contains("simplified_text") || !resp["simplified_text"].is_string())
    throw InfrastructureError("simplifier response lacks 'simplified_text'");
  return resp["simplified_text"].get<std::string>();
}

json SimplifyRecord::to_json() const {
  json j{{"statement_id", statement_id}, {"closable", closable}};
  if (equation) {
    j["lhs"] = equation->lhs;
    j["rhs"] = equation->rhs;
    j["difference_expression_text"] = equation->difference();
    j["simplified_text"] = simplified;
  }
  if (!error.empty()) j["error"] = error;
  return j;
}

std::vector<SimplifyRecord> simplify_statements(std::span<const corpus::FormalStatement> statements,
                                                SimplifierBackend& simplifier) {
  std::vector<SimplifyRecord> out;
  for (const auto& st : statements) {
    SimplifyRecord r;
    r.statement_id = st.id;
    r.equation = extract_goal_equation(st);
    if (r.equation) {
      try {
        r.simplified = simplifier.simplify(r.equation->difference());
        r.closable = trim(r.simplified) == "0";
      } catch (const std::exception& e) {
        r.error = e.what();
        spdlog::warn("{}: simplifier failed: {}", st.id, r.error);
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace lemmaforge::sketch
