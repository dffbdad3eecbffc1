#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "lemmaforge/common.hpp"
#include "lemmaforge/verify.hpp"

namespace lemmaforge::evaluate {

using BigRational = boost::multiprecision::cpp_rational;

struct AttemptSet {
  std::string statement_id;
  std::vector<verify::Verdict> verdicts;  // in sample order

  std::size_t n() const noexcept { return verdicts.size(); }
  std::size_t c() const noexcept;
  /// True iff one of the first m verdicts passes.
  bool any_pass(std::size_t m) const;
};

struct BenchmarkRun {
  std::string benchmark = "custom";
  std::string model;
  std::vector<AttemptSet> sets;  // ordered by statement id
};

/// Attempt records: {statement_id, sample_index, status, proof_text?,
/// wall_time_ms?, diagnostics?, benchmark?, model?}. Sample indices of a
/// statement must be exactly 0..n-1; benchmark/model tags must agree.
BenchmarkRun load_run(const std::filesystem::path& path);
BenchmarkRun run_from_records(std::span<const json> records);

/// Proof texts in record order, for style statistics.
std::vector<std::string> load_proof_texts(const std::filesystem::path& path,
                                          bool passing_only = false);

// --- registry ---------------------------------------------------------------

struct BenchmarkInfo {
  std::string name;
  std::size_t size = 0;
  std::optional<std::filesystem::path> dataset;
};

/// Built-in benchmark sizes.
std::map<std::string, BenchmarkInfo> default_registry();
/// {"name": {"size": n, "dataset": path}} merged over the defaults.
std::map<std::string, BenchmarkInfo> load_registry(const std::filesystem::path& path);

/// Throws IntegrityError unless the run has exactly one attempt set per
/// registered statement (by count, and by id when the dataset is readable).
void check_coverage(const BenchmarkRun& run, const std::map<std::string, BenchmarkInfo>& registry);

// --- metrics ----------------------------------------------------------------

/// Fraction of statements with a pass among their first n samples.
Ratio pass_at_n_empirical(const BenchmarkRun& run, std::size_t n);

/// 1 - C(n-c, k) / C(n, k), exact.
BigRational pass_at_k_unbiased(std::int64_t n, std::int64_t c, std::int64_t k);
double pass_at_k_unbiased_double(std::int64_t n, std::int64_t c, std::int64_t k);

struct BootstrapResult {
  double mean = 0;
  double std = 0;  // sample standard deviation over replicates
  int replicates = 0;
};

inline constexpr int kDefaultReplicates = 1000;

/// Each replicate draws n sample indices per statement with replacement.
BootstrapResult bootstrap_ci(const BenchmarkRun& run, std::size_t n,
                             int replicates = kDefaultReplicates, std::uint64_t seed = 0);

/// Budgets must be strictly ascending and no larger than every attempt set.
std::vector<std::pair<std::size_t, Ratio>> scaling_curve(const BenchmarkRun& run,
                                                         std::span<const std::size_t> budgets);
std::string scaling_csv(std::span<const std::pair<std::size_t, Ratio>> curve);

struct RunRates {
  std::string run;
  std::map<std::string, double> rates;  // benchmark -> rate
};

struct CorrelationMatrix {
  std::vector<std::string> benchmarks;
  std::vector<std::vector<double>> values;

  json to_json() const;
};

/// Pearson correlation between every pair of benchmark columns. Requires at
/// least 3 runs, all reporting the same benchmarks, and no constant column.
CorrelationMatrix cross_dataset_correlation(std::span<const RunRates> runs);

/// One row per model tag, pass@n per benchmark.
std::vector<RunRates> rate_matrix(std::span<const BenchmarkRun> runs, std::size_t n);

// --- proof style ------------------------------------------------------------

struct ProofStats {
  std::size_t length = 0;     // code points after newline normalization
  std::size_t try_count = 0;  // "try" tokens outside comments and strings
};

ProofStats proof_stats(std::string_view proof_text);

struct StyleReport {
  std::size_t proofs = 0;
  Ratio avg_length{0, 1};
  Ratio avg_try{0, 1};
  bool empty = true;

  json to_json() const;
};

StyleReport proof_style_report(std::span<const std::string> proofs);

}  // namespace lemmaforge::evaluate
