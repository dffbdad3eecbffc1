#include "lemmaforge/corpus.hpp"

#include <cctype>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>

namespace lemmaforge::corpus {

std::string_view to_string(Formalizer f) noexcept {
  switch (f) {
    case Formalizer::A: return "A";
    case Formalizer::B: return "B";
    case Formalizer::human: return "human";
    case Formalizer::external: return "external";
  }
  return "external";
}

Formalizer parse_formalizer(std::string_view s) {
  if (s == "A") return Formalizer::A;
  if (s == "B") return Formalizer::B;
  if (s == "human") return Formalizer::human;
  if (s == "external") return Formalizer::external;
  throw ParseError(fmt::format("unknown formalizer '{}'", s));
}

// ---------------------------------------------------------------------------

namespace {

// true for characters that are code (including string literals), false for
// characters inside comments.
std::vector<bool> code_mask(std::string_view t) {
  std::vector<bool> mask(t.size(), true);
  std::size_t i = 0;
  while (i < t.size()) {
    if (t[i] == '"') {
      ++i;
      while (i < t.size() && t[i] != '"') i += (t[i] == '\\') ? 2 : 1;
      ++i;
      continue;
    }
    if (t.compare(i, 2, "--") == 0) {
      while (i < t.size() && t[i] != '\n') mask[i++] = false;
      continue;
    }
    if (t.compare(i, 2, "/-") == 0) {
      int depth = 0;
      while (i < t.size()) {
        if (t.compare(i, 2, "/-") == 0) {
          ++depth;
          mask[i] = mask[i + 1] = false;
          i += 2;
        } else if (t.compare(i, 2, "-/") == 0) {
          --depth;
          mask[i] = mask[i + 1] = false;
          i += 2;
          if (depth == 0) break;
        } else {
          mask[i++] = false;
        }
      }
      continue;
    }
    ++i;
  }
  return mask;
}

bool is_ident_char(unsigned char c) {
  return std::isalnum(c) || c == '_' || c == '.' || c == '\'' || c >= 0x80;
}

}  // namespace

std::string strip_comments(std::string_view text) {
  const auto mask = code_mask(text);
  std::string out;
  out.reserve(text.size());
  bool in_block = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (mask[i]) {
      in_block = false;
      out.push_back(text[i]);
    } else if (!in_block && text.compare(i, 2, "/-") == 0) {
      // a block comment separates tokens like whitespace
      out.push_back(' ');
      in_block = true;
    }
  }
  return out;
}

std::string blank_comments(std::string_view text) {
  const auto mask = code_mask(text);
  std::string out(text);
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!mask[i] && out[i] != '\n') out[i] = ' ';
  return out;
}

std::string normalized_key(std::string_view body) {
  return collapse_whitespace(strip_comments(body));
}

std::optional<std::size_t> proof_delimiter_offset(std::string_view body) {
  const auto mask = code_mask(body);
  std::size_t end = body.size();
  while (end > 0 && (!mask[end - 1] || std::isspace(static_cast<unsigned char>(body[end - 1]))))
    --end;
  if (end >= 2 && body.compare(end - 2, 2, ":=") == 0) return end - 2;
  return std::nullopt;
}

std::string theorem_name_of(std::string_view body) {
  const std::string code = strip_comments(body);
  std::string_view s = code;
  for (std::string_view kw : {"theorem", "lemma", "example"}) {
    std::size_t pos = 0;
    while ((pos = s.find(kw, pos)) != std::string_view::npos) {
      const bool left_ok = pos == 0 || std::isspace(static_cast<unsigned char>(s[pos - 1]));
      const std::size_t after = pos + kw.size();
      const bool right_ok =
          after < s.size() && std::isspace(static_cast<unsigned char>(s[after]));
      if (left_ok && right_ok) {
        if (kw == "example") return "example";
        std::size_t b = after;
        while (b < s.size() && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
        std::size_t e = b;
        while (e < s.size() && is_ident_char(static_cast<unsigned char>(s[e]))) ++e;
        return std::string(s.substr(b, e - b));
      }
      pos = after;
    }
  }
  return {};
}

FormalStatement make_statement(std::string id, std::string body, std::string header,
                               Formalizer formalizer) {
  FormalStatement s;
  s.id = std::move(id);
  s.body = std::move(body);
  s.header = std::move(header);
  s.formalizer = formalizer;
  s.theorem_name = theorem_name_of(s.body);
  s.normalized_key = normalized_key(s.body);
  return s;
}

std::string candidate_source(const FormalStatement& s, std::string_view proof_text) {
  std::string out;
  if (!s.header.empty()) {
    out += s.header;
    if (s.header.back() != '\n') out += '\n';
  }
  out += s.body;
  out += ' ';
  out += proof_text;
  return out;
}

// ---------------------------------------------------------------------------

const SolvedEntry* SolvedSet::find(std::string_view id) const {
  auto it = entries_.find(id);
  return it == entries_.end() ? nullptr : &it->second;
}

void SolvedSet::insert(SolvedEntry entry) {
  const std::string id = entry.statement.id;
  auto [it, inserted] = entries_.emplace(id, std::move(entry));
  if (!inserted) throw IntegrityError(fmt::format("statement '{}' already solved", id));
}

// ---------------------------------------------------------------------------

namespace {

const std::set<std::string, std::less<>> kInformalFields{"id", "source", "text"};
const std::set<std::string, std::less<>> kFormalFields{"id",           "informal_id", "formalizer",
                                                       "theorem_name", "header",      "body"};
const std::set<std::string, std::less<>> kAttemptFields{"statement_id", "proof_text",
                                                        "sample_index", "producer"};

json extras_of(const json& j, const std::set<std::string, std::less<>>& known) {
  json extra = json::object();
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.contains(it.key())) extra[it.key()] = it.value();
  return extra;
}

void merge_extras(json& j, const json& extra) {
  for (auto it = extra.begin(); it != extra.end(); ++it)
    if (!j.contains(it.key())) j[it.key()] = it.value();
}

std::string required_string(const json& j, std::string_view key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string())
    throw ParseError(fmt::format("missing or non-string field '{}'", key));
  return it->get<std::string>();
}

std::string optional_string(const json& j, std::string_view key, std::string fallback = {}) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  if (!it->is_string()) throw ParseError(fmt::format("field '{}' must be a string", key));
  return it->get<std::string>();
}

}  // namespace

json to_json(const InformalStatement& s) {
  json j{{"id", s.id}, {"source", s.source}, {"text", s.text}};
  merge_extras(j, s.extra);
  return j;
}

json to_json(const FormalStatement& s) {
  json j{{"id", s.id},
         {"informal_id", s.informal_id ? json(*s.informal_id) : json(nullptr)},
         {"formalizer", to_string(s.formalizer)},
         {"theorem_name", s.theorem_name},
         {"header", s.header},
         {"body", s.body}};
  merge_extras(j, s.extra);
  return j;
}

json to_json(const ProofAttempt& p) {
  json j{{"statement_id", p.statement_id},
         {"proof_text", p.proof_text},
         {"sample_index", p.sample_index},
         {"producer", p.producer}};
  merge_extras(j, p.extra);
  return j;
}

json to_json(const SolvedEntry& e) {
  return json{{"statement_id", e.statement.id},
              {"proof_text", e.proof.proof_text},
              {"producer", e.proof.producer},
              {"iteration_found", e.iteration_found}};
}

InformalStatement informal_from_json(const json& j) {
  InformalStatement s;
  s.id = required_string(j, "id");
  s.source = optional_string(j, "source", "custom");
  s.text = required_string(j, "text");
  s.extra = extras_of(j, kInformalFields);
  return s;
}

FormalStatement formal_from_json(const json& j) {
  FormalStatement s;
  s.id = required_string(j, "id");
  if (auto it = j.find("informal_id"); it != j.end() && !it->is_null())
    s.informal_id = it->get<std::string>();
  s.formalizer = parse_formalizer(optional_string(j, "formalizer", "external"));
  s.header = optional_string(j, "header");
  s.body = required_string(j, "body");
  s.theorem_name = optional_string(j, "theorem_name");
  if (s.theorem_name.empty()) s.theorem_name = theorem_name_of(s.body);
  s.normalized_key = normalized_key(s.body);
  s.extra = extras_of(j, kFormalFields);
  return s;
}

ProofAttempt attempt_from_json(const json& j) {
  ProofAttempt p;
  p.statement_id = required_string(j, "statement_id");
  p.proof_text = required_string(j, "proof_text");
  if (auto it = j.find("sample_index"); it != j.end()) {
    if (!it->is_number_integer() || it->get<std::int64_t>() < 0)
      throw ParseError("sample_index must be a non-negative integer");
    p.sample_index = it->get<std::int64_t>();
  }
  p.producer = optional_string(j, "producer");
  p.extra = extras_of(j, kAttemptFields);
  return p;
}

namespace {

template <class T, class FromJson>
std::vector<T> load_with_unique_ids(const std::filesystem::path& path, FromJson from_json,
                                    bool require_text) {
  std::vector<T> out;
  std::unordered_map<std::string, std::size_t> first_line;
  for_each_jsonl(path, [&](const json& j, std::size_t line) {
    T rec;
    try {
      rec = from_json(j);
    } catch (const ParseError& e) {
      throw ParseError(fmt::format("{}: {}", path.string(), e.what()), line);
    }
    if (rec.id.empty()) throw IntegrityError("empty id", line);
    if constexpr (requires { rec.text; }) {
      if (require_text && trim(rec.text).empty())
        throw IntegrityError(fmt::format("statement '{}' has empty text", rec.id), line);
    }
    auto [it, fresh] = first_line.emplace(rec.id, line);
    if (!fresh)
      throw IntegrityError(
          fmt::format("duplicate id '{}' (first seen on line {})", rec.id, it->second), line);
    out.push_back(std::move(rec));
  });
  return out;
}

}  // namespace

std::vector<InformalStatement> load_informal_statements(const std::filesystem::path& path) {
  return load_with_unique_ids<InformalStatement>(path, informal_from_json, true);
}

std::vector<FormalStatement> load_formal_statements(const std::filesystem::path& path) {
  return load_with_unique_ids<FormalStatement>(path, formal_from_json, false);
}

std::vector<ProofAttempt> load_proof_attempts(const std::filesystem::path& path) {
  std::vector<ProofAttempt> out;
  for_each_jsonl(path, [&](const json& j, std::size_t line) {
    try {
      out.push_back(attempt_from_json(j));
    } catch (const ParseError& e) {
      throw ParseError(fmt::format("{}: {}", path.string(), e.what()), line);
    }
  });
  return out;
}

namespace {

template <class T>
void write_records(const std::filesystem::path& path, std::span<const T> items) {
  std::vector<json> records;
  records.reserve(items.size());
  for (const auto& s : items) records.push_back(to_json(s));
  write_jsonl(path, records);
}

}  // namespace

void write_statements(const std::filesystem::path& path, std::span<const FormalStatement> s) {
  write_records(path, s);
}

void write_statements(const std::filesystem::path& path, std::span<const InformalStatement> s) {
  write_records(path, s);
}

void write_attempts(const std::filesystem::path& path, std::span<const ProofAttempt> a) {
  write_records(path, a);
}

void write_solved(const std::filesystem::path& path, const SolvedSet& solved) {
  std::vector<json> records;
  records.reserve(solved.size());
  for (const auto& [id, e] : solved.entries()) {
    json j = to_json(e);
    j["sample_index"] = e.proof.sample_index;
    records.push_back(std::move(j));
  }
  write_jsonl(path, records);
}

SolvedSet load_solved(const std::filesystem::path& path,
                      std::span<const FormalStatement> statements) {
  std::unordered_map<std::string_view, const FormalStatement*> by_id;
  for (const auto& s : statements) by_id.emplace(s.id, &s);
  SolvedSet out;
  for_each_jsonl(path, [&](const json& j, std::size_t line) {
    SolvedEntry e;
    try {
      const std::string id = required_string(j, "statement_id");
      auto it = by_id.find(id);
      if (it == by_id.end())
        throw IntegrityError(fmt::format("solved entry for unknown statement '{}'", id), line);
      e.statement = *it->second;
      e.proof.statement_id = id;
      e.proof.proof_text = required_string(j, "proof_text");
      e.proof.producer = optional_string(j, "producer");
      e.proof.sample_index = j.value("sample_index", std::int64_t{0});
      e.iteration_found = j.at("iteration_found").get<int>();
    } catch (const json::exception& ex) {
      throw ParseError(fmt::format("{}: {}", path.string(), ex.what()), line);
    } catch (const ParseError& ex) {
      throw ParseError(fmt::format("{}: {}", path.string(), ex.what()), line);
    }
    try {
      out.insert(std::move(e));
    } catch (const IntegrityError& ex) {
      throw IntegrityError(ex.what(), line);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------

std::vector<FormalStatement> dedup_statements(std::span<const FormalStatement> set) {
  std::vector<FormalStatement> out;
  std::unordered_set<std::string> seen;
  for (const auto& s : set) {
    const std::string key = s.normalized_key.empty() ? normalized_key(s.body) : s.normalized_key;
    if (seen.insert(key).second) out.push_back(s);
  }
  return out;
}

std::size_t retained_proof_index(std::string_view statement_id, std::size_t candidates,
                                 std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, statement_id));
  return uniform_index(rng, candidates);
}

SolvedSet merge_solved(const SolvedSet& existing, std::span<const VerifiedStatement> newly_verified,
                       int iteration, std::uint64_t seed) {
  for (const auto& v : newly_verified)
    for (const auto& p : v.proofs)
      if (!p.passed)
        throw ContractViolation(fmt::format(
            "merge_solved: proof {} of statement '{}' has no pass verdict",
            p.attempt.sample_index, v.statement.id));

  SolvedSet out = existing;
  for (const auto& v : newly_verified) {
    if (v.proofs.empty() || out.contains(v.statement.id)) continue;
    const std::size_t pick = retained_proof_index(v.statement.id, v.proofs.size(), seed);
    out.insert(SolvedEntry{v.statement, v.proofs[pick].attempt, iteration});
  }
  return out;
}

DatasetManifest build_manifest(std::string name, std::span<const FormalStatement> statements,
                               const std::map<std::string, std::string>& source_of) {
  DatasetManifest m;
  m.name = std::move(name);
  std::unordered_set<std::string_view> seen;
  for (const auto& s : statements) {
    if (!seen.insert(s.id).second)
      throw IntegrityError(fmt::format("manifest '{}': duplicate statement '{}'", m.name, s.id));
    m.statement_ids.push_back(s.id);
    std::string tag;
    if (auto it = source_of.find(s.id); it != source_of.end())
      tag = it->second;
    else
      tag = std::string(to_string(s.formalizer));
    ++m.counts_per_source[tag];
  }
  return m;
}

}  // namespace lemmaforge::corpus
