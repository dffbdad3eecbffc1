#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lemmaforge/common.hpp"
#include "lemmaforge/corpus.hpp"
#include "lemmaforge/verify.hpp"

namespace lemmaforge::prefdata {

struct Sample {
  std::int64_t sample_index = 0;
  std::string proof_text;
  verify::Status status = verify::Status::fail;
};

/// All verified samples of one statement, ordered by sample_index.
struct SampleSet {
  std::string statement_id;
  std::vector<Sample> samples;

  std::size_t n() const noexcept { return samples.size(); }
  std::size_t c() const noexcept;
};

/// Groups attempt records by statement id (sorted). Samples whose checker
/// could not run ("infrastructure_error") are dropped with a warning;
/// duplicate (statement_id, sample_index) pairs are an IntegrityError.
std::vector<SampleSet> sample_sets_from_records(std::span<const json> records);
std::vector<SampleSet> load_sample_sets(const std::filesystem::path& path);

/// c / n. Throws ContractViolation when n == 0.
Ratio pass_ratio(const SampleSet& set);

/// Half-open interval (lower, upper].
struct PassRatioBucket {
  Ratio lower{0, 1};
  Ratio upper{1, 1};

  PassRatioBucket() = default;
  /// Throws ContractViolation unless 0 <= lower < upper <= 1.
  PassRatioBucket(Ratio lower, Ratio upper);
  /// "lower,upper", each side as accepted by Ratio::parse.
  static PassRatioBucket parse(std::string_view text);

  bool contains(Ratio r) const noexcept { return lower < r && r <= upper; }
};

std::vector<SampleSet> bucket_statements(std::span<const SampleSet> sets,
                                         const PassRatioBucket& bucket);

struct PreferencePair {
  std::string statement_id;
  corpus::ProofAttempt chosen;
  corpus::ProofAttempt rejected;
  verify::Status rejected_status = verify::Status::fail;
};

/// statement_id, chosen_text, rejected_text, plus sample indices and the
/// rejected sample's status.
json to_json(const PreferencePair& p);

struct DpoResult {
  std::vector<PreferencePair> pairs;  // sorted by statement_id
  std::vector<std::string> skip_log;
};

/// One pair per statement. The chosen proof is uniform among passes, or the
/// shortest pass (lowest sample_index on ties) when length_penalized; the
/// rejected proof is uniform among fail/timeout samples. Draws are seeded per
/// statement id. Sets lacking a pass or a non-pass are skipped and logged.
DpoResult build_dpo_pairs(std::span<const SampleSet> selected, bool length_penalized,
                          std::uint64_t seed);

struct RewardConfig {
  double pass_reward = 8;
  double fail_reward = -8;
  double timeout_reward = -8;

  /// Throws ConfigError unless pass > fail and timeout is one of 0, -8, -16.
  void validate() const;
};

struct Reward {
  std::int64_t sample_index = 0;
  verify::Status status = verify::Status::fail;
  double reward = 0;
};

std::vector<Reward> assign_rewards(const SampleSet& set, const RewardConfig& cfg = {});

/// Reward export records: statement_id, sample_index, status, reward.
std::vector<json> reward_records(std::span<const SampleSet> sets, const RewardConfig& cfg = {});

struct RewardSummary {
  double mean = 0;
  double std = 0;  // population standard deviation
};

/// Throws ContractViolation when the group has fewer than 2 samples.
RewardSummary group_reward_summary(const SampleSet& set, const RewardConfig& cfg = {});

}  // namespace lemmaforge::prefdata
