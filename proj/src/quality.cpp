#include "lemmaforge/quality.hpp"

#include <cctype>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "fc_prompt_asset.hpp"

namespace lemmaforge::quality {

using corpus::Formalizer;
using corpus::FormalStatement;

std::string_view fc_prompt_template() { return detail::kFcPromptAsset; }

std::string render_fc_prompt(std::string_view informal_text, std::string_view formal_text) {
  const std::string_view tpl = fc_prompt_template();
  std::string out;
  out.reserve(tpl.size() + informal_text.size() + formal_text.size());
  std::size_t i = 0;
  while (i < tpl.size()) {
    if (tpl.compare(i, 10, "{informal}") == 0) {
      out += informal_text;
      i += 10;
    } else if (tpl.compare(i, 8, "{formal}") == 0) {
      out += formal_text;
      i += 8;
    } else {
      out.push_back(tpl[i++]);
    }
  }
  return out;
}

JudgeVerdict parse_judge_response(std::string raw_response) {
  JudgeVerdict v;
  v.raw_response = std::move(raw_response);
  const auto lines = split_lines(normalize_newlines(v.raw_response));
  std::string last;
  for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
    last = trim(*it);
    if (!last.empty()) break;
  }
  // last alphabetic word of the final line
  std::size_t end = last.size();
  while (end > 0 && !std::isalpha(static_cast<unsigned char>(last[end - 1]))) --end;
  std::size_t begin = end;
  while (begin > 0 && std::isalpha(static_cast<unsigned char>(last[begin - 1]))) --begin;
  std::string word = last.substr(begin, end - begin);
  for (auto& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));

  if (word == "appropriate") {
    v.label = JudgeLabel::appropriate;
  } else {
    v.label = JudgeLabel::inappropriate;
    v.flagged = word != "inappropriate";
  }
  return v;
}

json to_json(const JudgeRequest& r) {
  return json{{"statement_id", r.statement_id},
              {"informal_text", r.informal_text},
              {"formal_text", r.formal_text},
              {"prompt_template_id", r.prompt_template_id},
              {"prompt", r.prompt},
              {"seed", r.seed},
              {"judgment_index", r.judgment_index}};
}

ScriptedJudge::ScriptedJudge(std::map<std::string, std::vector<std::string>> script,
                             std::optional<std::string> fallback)
    : script_(std::move(script)), fallback_(std::move(fallback)) {}

ScriptedJudge ScriptedJudge::from_file(const std::filesystem::path& path,
                                       std::optional<std::string> fallback) {
  std::map<std::string, std::vector<std::string>> script;
  for_each_jsonl(path, [&](const json& j, std::size_t line) {
    try {
      script[j.at("statement_id").get<std::string>()] =
          j.at("responses").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw ParseError(fmt::format("{}: {}", path.string(), e.what()), line);
    }
  });
  return ScriptedJudge(std::move(script), std::move(fallback));
}

std::string ScriptedJudge::judge(const JudgeRequest& request) {
  auto it = script_.find(request.statement_id);
  if (it == script_.end() || it->second.empty()) {
    if (fallback_) return *fallback_;
    throw InfrastructureError(
        fmt::format("scripted judge has no response for '{}'", request.statement_id));
  }
  const auto& seq = it->second;
  return seq[static_cast<std::size_t>(request.judgment_index) % seq.size()];
}

std::string HttpJudge::judge(const JudgeRequest& request) {
  const json reply = http::post_json(endpoint_, to_json(request));
  auto it = reply.find("raw_response");
  if (it == reply.end() || !it->is_string())
    throw InfrastructureError("judge reply lacks a string 'raw_response'");
  return it->get<std::string>();
}

// ---------------------------------------------------------------------------

FCJudgment aggregate_judgments(std::vector<JudgeVerdict> verdicts, std::vector<std::string> errors) {
  if (verdicts.empty()) throw ContractViolation("fc score needs at least one judgment");
  FCJudgment out;
  out.score.num_judgments = static_cast<int>(verdicts.size());
  for (const auto& v : verdicts)
    if (v.label == JudgeLabel::appropriate) ++out.score.num_appropriate;
  out.verdicts = std::move(verdicts);
  out.error_log = std::move(errors);
  return out;
}

namespace {

JudgeRequest make_request(const corpus::InformalStatement& informal, const FormalStatement& formal,
                          std::uint64_t seed, int index) {
  JudgeRequest r;
  r.statement_id = formal.id;
  r.informal_text = informal.text;
  r.formal_text = corpus::candidate_source(formal, "");
  r.formal_text = trim(r.formal_text);
  r.prompt = render_fc_prompt(r.informal_text, r.formal_text);
  r.seed = derive_seed(seed, fmt::format("{}#fc{}", formal.id, index));
  r.judgment_index = index;
  return r;
}

// One judge call; failures become flagged inappropriate verdicts.
std::pair<JudgeVerdict, std::string> call_judge(JudgeBackend& judge, const JudgeRequest& r) {
  try {
    auto v = parse_judge_response(judge.judge(r));
    std::string note;
    if (v.flagged)
      note = fmt::format("{} judgment {}: unrecognized response, counted inappropriate",
                         r.statement_id, r.judgment_index);
    return {std::move(v), std::move(note)};
  } catch (const std::exception& e) {
    JudgeVerdict v;
    v.flagged = true;
    return {std::move(v), fmt::format("{} judgment {}: call failed ({}), counted inappropriate",
                                      r.statement_id, r.judgment_index, e.what())};
  }
}

}  // namespace

FCJudgment fc_judge(const corpus::InformalStatement& informal, const FormalStatement& formal,
                    JudgeBackend& judge, int n_judgments, std::uint64_t seed,
                    std::size_t concurrency) {
  if (n_judgments < 1) throw ContractViolation("fc_judge: n_judgments must be >= 1");
  std::vector<JudgeRequest> requests;
  for (int i = 0; i < n_judgments; ++i) requests.push_back(make_request(informal, formal, seed, i));
  auto results = parallel_map(std::span<const JudgeRequest>(requests), concurrency,
                              [&](const JudgeRequest& r) { return call_judge(judge, r); });
  std::vector<JudgeVerdict> verdicts;
  std::vector<std::string> errors;
  for (auto& [v, note] : results) {
    verdicts.push_back(std::move(v));
    if (!note.empty()) errors.push_back(std::move(note));
  }
  return aggregate_judgments(std::move(verdicts), std::move(errors));
}

std::vector<FormalStatement> fc_filter(std::span<const ScoredStatement> scored, Ratio threshold) {
  std::vector<FormalStatement> out;
  for (const auto& s : scored)
    if (s.fc.score() >= threshold) out.push_back(s.statement);
  return out;
}

// ---------------------------------------------------------------------------
// Bundles
// ---------------------------------------------------------------------------

json to_json(const CandidateBundle& b) {
  json cands = json::array();
  for (const auto& [f, list] : b.candidates) {
    for (const auto& c : list) {
      json j{{"formalizer", corpus::to_string(f)}, {"statement", corpus::to_json(c.statement)}};
      if (c.cc_pass) j["cc_pass"] = *c.cc_pass;
      if (c.fc)
        j["fc"] = json{{"num_appropriate", c.fc->num_appropriate},
                       {"num_judgments", c.fc->num_judgments}};
      cands.push_back(std::move(j));
    }
  }
  return json{{"informal_id", b.informal_id},
              {"informal_text", b.informal_text},
              {"source", b.source},
              {"candidates", std::move(cands)}};
}

CandidateBundle bundle_from_json(const json& j) {
  CandidateBundle b;
  b.informal_id = j.at("informal_id").get<std::string>();
  b.informal_text = j.value("informal_text", std::string{});
  b.source = j.value("source", std::string("numina"));
  for (const auto& c : j.at("candidates")) {
    Candidate cand;
    json stmt = c.at("statement");
    const Formalizer f = corpus::parse_formalizer(
        c.value("formalizer", stmt.value("formalizer", std::string("external"))));
    stmt["formalizer"] = corpus::to_string(f);
    if (!stmt.contains("informal_id")) stmt["informal_id"] = b.informal_id;
    cand.statement = corpus::formal_from_json(stmt);
    if (auto it = c.find("cc_pass"); it != c.end() && !it->is_null()) cand.cc_pass = it->get<bool>();
    if (auto it = c.find("fc"); it != c.end() && !it->is_null()) {
      FCScore s{it->at("num_appropriate").get<int>(), it->at("num_judgments").get<int>()};
      if (s.num_judgments <= 0 || s.num_appropriate < 0 || s.num_appropriate > s.num_judgments)
        throw ParseError(fmt::format("candidate '{}': invalid fc counts", cand.statement.id));
      cand.fc = s;
    }
    b.candidates[f].push_back(std::move(cand));
  }
  return b;
}

std::vector<CandidateBundle> load_bundles(const std::filesystem::path& path) {
  std::vector<CandidateBundle> out;
  std::set<std::string> ids;
  for_each_jsonl(path, [&](const json& j, std::size_t line) {
    try {
      out.push_back(bundle_from_json(j));
    } catch (const json::exception& e) {
      throw ParseError(fmt::format("{}: {}", path.string(), e.what()), line);
    } catch (const ParseError& e) {
      throw ParseError(fmt::format("{}: {}", path.string(), e.what()), line);
    }
    if (!ids.insert(out.back().informal_id).second)
      throw IntegrityError(fmt::format("duplicate informal_id '{}'", out.back().informal_id), line);
  });
  return out;
}

void write_bundles(const std::filesystem::path& path, std::span<const CandidateBundle> bundles) {
  std::vector<json> records;
  for (const auto& b : bundles) records.push_back(to_json(b));
  write_jsonl(path, records);
}

std::vector<FormalStatement> select_candidates(const CandidateBundle& bundle, std::uint64_t seed,
                                               Ratio threshold) {
  std::vector<FormalStatement> out;
  for (const auto& [f, list] : bundle.candidates) {
    std::vector<const Candidate*> valid;
    for (const auto& c : list) {
      if (!c.cc_pass || !c.fc)
        throw ContractViolation(fmt::format("select_candidates: candidate '{}' is missing {}",
                                            c.statement.id, c.cc_pass ? "fc" : "cc_pass"));
      if (c.valid(threshold)) valid.push_back(&c);
    }
    if (valid.empty()) continue;
    std::mt19937_64 rng(
        derive_seed(seed, fmt::format("{}/{}", bundle.informal_id, corpus::to_string(f))));
    out.push_back(valid[uniform_index(rng, valid.size())]->statement);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

namespace {

std::string_view test_name(GateTest t) {
  switch (t) {
    case GateTest::cc: return "CC";
    case GateTest::fc: return "FC";
    case GateTest::cc_fc: return "CC+FC";
  }
  return "";
}

bool qualifies(const Candidate& c, GateTest t, Ratio threshold) {
  const bool cc = c.cc_pass.value_or(false);
  const bool fc = c.fc && c.fc->score() >= threshold;
  switch (t) {
    case GateTest::cc: return cc;
    case GateTest::fc: return fc;
    case GateTest::cc_fc: return cc && fc;
  }
  return false;
}

}  // namespace

GateReport gate_report(std::span<const CandidateBundle> bundles, std::vector<int> ks,
                       Ratio threshold) {
  GateReport r;
  r.ks = std::move(ks);
  for (const auto& b : bundles) {
    for (const auto& [f, list] : b.candidates) {
      if (list.empty()) continue;
      for (GateTest t : {GateTest::cc, GateTest::fc, GateTest::cc_fc}) {
        for (int k : r.ks) {
          auto& cell = r.cells[f][t][k];
          ++cell.problems;
          const std::size_t limit = std::min<std::size_t>(static_cast<std::size_t>(k), list.size());
          for (std::size_t i = 0; i < limit; ++i) {
            if (qualifies(list[i], t, threshold)) {
              ++cell.qualifying;
              break;
            }
          }
        }
      }
    }
  }
  return r;
}

json GateReport::to_json() const {
  json rows = json::array();
  for (const auto& [f, tests] : cells)
    for (const auto& [t, per_k] : tests)
      for (const auto& [k, cell] : per_k)
        rows.push_back(json{{"formalizer", corpus::to_string(f)},
                            {"test", test_name(t)},
                            {"k", k},
                            {"qualifying", cell.qualifying},
                            {"problems", cell.problems},
                            {"rate", cell.rate().to_double()}});
  return json{{"rows", std::move(rows)}};
}

std::string GateReport::to_table() const {
  std::ostringstream os;
  os << fmt::format("{:<8}{:<8}", "Test", "Pass");
  for (const auto& [f, _] : cells) os << fmt::format("{:>14}", fmt::format("Formalizer {}", corpus::to_string(f)));
  os << '\n';
  for (GateTest t : {GateTest::cc, GateTest::fc, GateTest::cc_fc}) {
    for (int k : ks) {
      os << fmt::format("{:<8}{:<8}", test_name(t), fmt::format("@{}", k));
      for (const auto& [f, tests] : cells)
        os << fmt::format("{:>13.2f}%", 100.0 * tests.at(t).at(k).rate().to_double());
      os << '\n';
    }
  }
  return os.str();
}

// ---------------------------------------------------------------------------

GateResult run_gate(std::vector<CandidateBundle> bundles, verify::CheckerBackend& checker,
                    JudgeBackend& judge, const GateOptions& options) {
  struct Slot {
    std::size_t bundle;
    Formalizer formalizer;
    std::size_t index;
  };
  std::vector<Slot> slots;
  for (std::size_t b = 0; b < bundles.size(); ++b)
    for (const auto& [f, list] : bundles[b].candidates)
      for (std::size_t i = 0; i < list.size(); ++i) slots.push_back({b, f, i});
  auto cand = [&](const Slot& s) -> Candidate& { return bundles[s.bundle].candidates.at(s.formalizer)[s.index]; };

  // CC for every candidate that lacks it
  std::vector<Slot> need_cc;
  for (const auto& s : slots)
    if (!cand(s).cc_pass) need_cc.push_back(s);
  const auto cc = parallel_map(std::span<const Slot>(need_cc), options.checker_pool, [&](const Slot& s) {
    try {
      return verify::cc_test(cand(s).statement, checker, options.cc_timeout);
    } catch (const std::exception& e) {
      spdlog::warn("cc test for '{}' failed to run: {}", cand(s).statement.id, e.what());
      return false;
    }
  });
  for (std::size_t i = 0; i < need_cc.size(); ++i) cand(need_cc[i]).cc_pass = cc[i];

  // FC: flatten (candidate, judgment) calls so distinct candidates share the limit
  struct Call {
    std::size_t slot;
    JudgeRequest request;
  };
  std::vector<Call> calls;
  for (std::size_t si = 0; si < slots.size(); ++si) {
    const auto& c = cand(slots[si]);
    if (c.fc) continue;
    const auto& b = bundles[slots[si].bundle];
    corpus::InformalStatement informal{b.informal_id, b.source, b.informal_text, json::object()};
    for (int i = 0; i < options.n_judgments; ++i)
      calls.push_back({si, make_request(informal, c.statement, options.seed, i)});
  }
  const auto answers = parallel_map(std::span<const Call>(calls), options.judge_concurrency,
                                    [&](const Call& call) { return call_judge(judge, call.request); });

  GateResult result;
  std::map<std::size_t, std::pair<std::vector<JudgeVerdict>, std::vector<std::string>>> per_slot;
  for (std::size_t i = 0; i < calls.size(); ++i) {
    auto& [verdicts, errors] = per_slot[calls[i].slot];
    verdicts.push_back(answers[i].first);
    if (!answers[i].second.empty()) {
      errors.push_back(answers[i].second);
      result.judge_error_log.push_back(answers[i].second);
    }
  }
  for (auto& [si, ve] : per_slot)
    cand(slots[si]).fc = aggregate_judgments(std::move(ve.first), std::move(ve.second)).score;

  for (const auto& b : bundles) {
    auto chosen = select_candidates(b, options.seed, options.threshold);
    result.selected.insert(result.selected.end(), chosen.begin(), chosen.end());
  }
  result.report = gate_report(bundles, {1, 8}, options.threshold);
  result.bundles = std::move(bundles);
  return result;
}

}  // namespace lemmaforge::quality
