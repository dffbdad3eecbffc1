#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lemmaforge/common.hpp"

namespace lemmaforge::corpus {

enum class Formalizer { A, B, human, external };

std::string_view to_string(Formalizer f) noexcept;
Formalizer parse_formalizer(std::string_view s);

struct InformalStatement {
  std::string id;
  std::string source;  // numina, aops, leanworkbook, custom, ...
  std::string text;
  json extra = json::object();
};

struct FormalStatement {
  std::string id;
  std::optional<std::string> informal_id;
  Formalizer formalizer = Formalizer::external;
  std::string theorem_name;
  std::string header;
  std::string body;  // ends at the proof delimiter ":="
  std::string normalized_key;
  json extra = json::object();
};

/// Builds a statement and fills normalized_key (and theorem_name, when empty).
FormalStatement make_statement(std::string id, std::string body, std::string header = {},
                               Formalizer formalizer = Formalizer::external);

struct ProofAttempt {
  std::string statement_id;
  std::string proof_text;
  std::int64_t sample_index = 0;
  std::string producer;
  json extra = json::object();
};

struct SolvedEntry {
  FormalStatement statement;
  ProofAttempt proof;
  int iteration_found = 0;
};

/// Solved statements keyed (and iterated) by statement id.
class SolvedSet {
 public:
  using Map = std::map<std::string, SolvedEntry, std::less<>>;

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  bool contains(std::string_view id) const { return entries_.find(id) != entries_.end(); }
  const SolvedEntry* find(std::string_view id) const;
  const Map& entries() const noexcept { return entries_; }

  /// Throws IntegrityError if the statement is already present.
  void insert(SolvedEntry entry);

 private:
  Map entries_;
};

struct DatasetManifest {
  std::string name;
  std::vector<std::string> statement_ids;
  std::map<std::string, std::size_t> counts_per_source;
};

// --- statement text ---------------------------------------------------------

/// Lean-style comments ("-- ..." and nestable "/- ... -/") removed; string
/// literals are left untouched.
std::string strip_comments(std::string_view text);

/// Same length as text; comment characters other than '\n' become spaces,
/// so offsets and line numbers survive.
std::string blank_comments(std::string_view text);

/// Comments stripped, whitespace runs collapsed, trimmed.
std::string normalized_key(std::string_view body);

/// Offset of the terminal ":=" in body, if the body (comments ignored) ends
/// with one.
std::optional<std::size_t> proof_delimiter_offset(std::string_view body);

/// Name following the leading "theorem"/"lemma" keyword, or empty.
std::string theorem_name_of(std::string_view body);

/// header + body + " " + proof, the unit handed to a checker.
std::string candidate_source(const FormalStatement& s, std::string_view proof_text);

// --- records ----------------------------------------------------------------

json to_json(const InformalStatement& s);
json to_json(const FormalStatement& s);
json to_json(const ProofAttempt& p);
/// SolvedEntry record: statement_id, proof_text, producer, iteration_found.
json to_json(const SolvedEntry& e);

InformalStatement informal_from_json(const json& j);
FormalStatement formal_from_json(const json& j);
ProofAttempt attempt_from_json(const json& j);

std::vector<InformalStatement> load_informal_statements(const std::filesystem::path& path);
std::vector<FormalStatement> load_formal_statements(const std::filesystem::path& path);
std::vector<ProofAttempt> load_proof_attempts(const std::filesystem::path& path);

void write_statements(const std::filesystem::path& path, std::span<const FormalStatement> s);
void write_statements(const std::filesystem::path& path, std::span<const InformalStatement> s);
void write_attempts(const std::filesystem::path& path, std::span<const ProofAttempt> a);

void write_solved(const std::filesystem::path& path, const SolvedSet& solved);
/// Resolves statement_id against `statements`; unknown ids are an IntegrityError.
SolvedSet load_solved(const std::filesystem::path& path,
                      std::span<const FormalStatement> statements);

// --- dataset operations -----------------------------------------------------

/// At most one statement per normalized_key, first occurrence wins, order kept.
std::vector<FormalStatement> dedup_statements(std::span<const FormalStatement> set);

/// A passing proof, as handed to merge_solved.
struct VerifiedProof {
  ProofAttempt attempt;
  bool passed = false;
};

struct VerifiedStatement {
  FormalStatement statement;
  std::vector<VerifiedProof> proofs;
};

/// Cumulative update. Statements already solved keep their entry; a newly
/// solved statement gets one proof drawn uniformly (seeded per statement id)
/// among its passing proofs. Throws ContractViolation on a non-passing proof.
SolvedSet merge_solved(const SolvedSet& existing, std::span<const VerifiedStatement> newly_verified,
                       int iteration, std::uint64_t seed);

/// Index of the retained proof among `candidates` for statement_id.
std::size_t retained_proof_index(std::string_view statement_id, std::size_t candidates,
                                 std::uint64_t seed);

DatasetManifest build_manifest(std::string name, std::span<const FormalStatement> statements,
                               const std::map<std::string, std::string>& source_of = {});

}  // namespace lemmaforge::corpus
