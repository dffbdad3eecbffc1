#include "lemmaforge/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "lemmaforge/corpus.hpp"

namespace lemmaforge::evaluate {

namespace fs = std::filesystem;
using boost::multiprecision::cpp_int;

std::size_t AttemptSet::c() const noexcept {
  return static_cast<std::size_t>(std::count_if(verdicts.begin(), verdicts.end(), [](const auto& v) {
    return v.status == verify::Status::pass;
  }));
}

bool AttemptSet::any_pass(std::size_t m) const {
  if (m > verdicts.size())
    throw ContractViolation(fmt::format("statement '{}' has {} samples, {} requested", statement_id,
                                        verdicts.size(), m));
  return std::any_of(verdicts.begin(), verdicts.begin() + static_cast<std::ptrdiff_t>(m),
                     [](const auto& v) { return v.status == verify::Status::pass; });
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

BenchmarkRun run_from_records(std::span<const json> records) {
  BenchmarkRun run;
  std::optional<std::string> benchmark, model;
  std::map<std::string, std::map<std::int64_t, verify::Verdict>> grouped;

  auto agree = [](std::optional<std::string>& slot, const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return;
    const auto v = it->get<std::string>();
    if (slot && *slot != v)
      throw IntegrityError(fmt::format("records disagree on {}: '{}' vs '{}'", key, *slot, v));
    slot = v;
  };

  for (std::size_t i = 0; i < records.size(); ++i) {
    const json& j = records[i];
    try {
      agree(benchmark, j, "benchmark");
      agree(model, j, "model");
      const auto id = j.at("statement_id").get<std::string>();
      const auto index = j.value("sample_index", std::int64_t{0});
      json rec = j;
      // a checker that could not run yields no proof either way
      if (rec.value("status", std::string{}) == "infrastructure_error") rec["status"] = "fail";
      if (!grouped[id].emplace(index, verify::verdict_from_record(rec)).second)
        throw IntegrityError(fmt::format("statement '{}' has sample {} twice", id, index), i + 1);
    } catch (const json::exception& e) {
      throw ParseError(e.what(), i + 1);
    }
  }
  for (auto& [id, samples] : grouped) {
    AttemptSet set{id, {}};
    std::int64_t expect = 0;
    for (auto& [index, v] : samples) {
      if (index != expect)
        throw IntegrityError(fmt::format("statement '{}' is missing sample {}", id, expect));
      set.verdicts.push_back(std::move(v));
      ++expect;
    }
    run.sets.push_back(std::move(set));
  }
  if (benchmark) run.benchmark = *benchmark;
  if (model) run.model = *model;
  return run;
}

BenchmarkRun load_run(const fs::path& path) {
  std::vector<json> records;
  for_each_jsonl(path, [&](const json& j, std::size_t) { records.push_back(j); });
  try {
    return run_from_records(records);
  } catch (const IntegrityError& e) {
    throw IntegrityError(fmt::format("{}: {}", path.string(), e.what()), e.line());
  } catch (const ParseError& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()), e.line());
  }
}

std::vector<std::string> load_proof_texts(const fs::path& path, bool passing_only) {
  std::vector<std::string> out;
  for_each_jsonl(path, [&](const json& j, std::size_t line) {
    auto it = j.find("proof_text");
    if (it == j.end() || !it->is_string())
      throw ParseError(fmt::format("{}: record lacks proof_text", path.string()), line);
    if (passing_only && j.value("status", std::string("pass")) != "pass") return;
    out.push_back(it->get<std::string>());
  });
  return out;
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

std::map<std::string, BenchmarkInfo> default_registry() {
  std::map<std::string, BenchmarkInfo> r;
  for (auto [name, size] : std::initializer_list<std::pair<const char*, std::size_t>>{
           {"minif2f_test", 244},
           {"minif2f_valid", 244},
           {"proofnet", 371},
           {"putnambench", 644},
           {"leanworkbook", 140'000},
           {"numinatest", 250}})
    r[name] = BenchmarkInfo{name, size, std::nullopt};
  return r;
}

std::map<std::string, BenchmarkInfo> load_registry(const fs::path& path) {
  auto r = default_registry();
  json j;
  try {
    j = json::parse(read_text_file(path));
    for (const auto& [name, entry] : j.items()) {
      auto& info = r[name];
      info.name = name;
      if (entry.contains("size")) info.size = entry.at("size").get<std::size_t>();
      if (entry.contains("dataset")) {
        fs::path p = entry.at("dataset").get<std::string>();
        info.dataset = p.is_absolute() ? p : path.parent_path() / p;
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return r;
}

void check_coverage(const BenchmarkRun& run, const std::map<std::string, BenchmarkInfo>& registry) {
  auto it = registry.find(run.benchmark);
  if (it == registry.end()) return;
  const auto& info = it->second;
  if (info.dataset && fs::exists(*info.dataset)) {
    const auto stmts = corpus::load_formal_statements(*info.dataset);
    std::set<std::string> want, have;
    for (const auto& s : stmts) want.insert(s.id);
    for (const auto& s : run.sets) have.insert(s.statement_id);
    for (const auto& id : want)
      if (!have.count(id))
        throw IntegrityError(fmt::format("{}: no attempts for statement '{}'", run.benchmark, id));
    for (const auto& id : have)
      if (!want.count(id))
        throw IntegrityError(fmt::format("{}: attempts for unknown statement '{}'", run.benchmark, id));
    return;
  }
  if (info.size && run.sets.size() != info.size)
    throw IntegrityError(fmt::format("{}: run covers {} statements, benchmark has {}", run.benchmark,
                                     run.sets.size(), info.size));
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

Ratio pass_at_n_empirical(const BenchmarkRun& run, std::size_t n) {
  if (n < 1) throw ContractViolation("pass@n needs n >= 1");
  if (run.sets.empty()) throw ContractViolation("pass@n of an empty run");
  std::int64_t hits = 0;
  for (const auto& s : run.sets) hits += s.any_pass(n);
  return Ratio(hits, static_cast<std::int64_t>(run.sets.size()));
}

BigRational pass_at_k_unbiased(std::int64_t n, std::int64_t c, std::int64_t k) {
  if (n < 1 || c < 0 || c > n || k < 1 || k > n)
    throw ContractViolation(fmt::format("pass@k needs 0 <= c <= n and 1 <= k <= n (n={}, c={}, k={})",
                                        n, c, k));
  if (n - c < k) return BigRational(1);
  // C(n-c, k) / C(n, k) = prod_{i<k} (n-c-i) / (n-i)
  cpp_int num = 1, den = 1;
  for (std::int64_t i = 0; i < k; ++i) {
    num *= n - c - i;
    den *= n - i;
  }
  return BigRational(1) - BigRational(num, den);
}

double pass_at_k_unbiased_double(std::int64_t n, std::int64_t c, std::int64_t k) {
  return pass_at_k_unbiased(n, c, k).convert_to<double>();
}

BootstrapResult bootstrap_ci(const BenchmarkRun& run, std::size_t n, int replicates,
                             std::uint64_t seed) {
  if (replicates < 2) throw ContractViolation("bootstrap needs at least 2 replicates");
  if (n < 1) throw ContractViolation("bootstrap needs n >= 1");
  if (run.sets.empty()) throw ContractViolation("bootstrap of an empty run");
  for (const auto& s : run.sets)
    if (s.n() < 1) throw ContractViolation(fmt::format("statement '{}' has no samples", s.statement_id));

  std::vector<double> rates;
  rates.reserve(static_cast<std::size_t>(replicates));
  for (int r = 0; r < replicates; ++r) {
    std::mt19937_64 rng(derive_seed(seed, fmt::format("bootstrap/{}", r)));
    std::size_t hits = 0;
    for (const auto& s : run.sets) {
      bool hit = false;
      for (std::size_t d = 0; d < n; ++d)
        hit |= s.verdicts[uniform_index(rng, s.n())].status == verify::Status::pass;
      hits += hit;
    }
    rates.push_back(static_cast<double>(hits) / static_cast<double>(run.sets.size()));
  }
  BootstrapResult out;
  out.replicates = replicates;
  double sum = 0;
  for (double x : rates) sum += x;
  out.mean = sum / replicates;
  double ss = 0;
  for (double x : rates) ss += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(ss / (replicates - 1));
  return out;
}

std::vector<std::pair<std::size_t, Ratio>> scaling_curve(const BenchmarkRun& run,
                                                         std::span<const std::size_t> budgets) {
  std::vector<std::pair<std::size_t, Ratio>> out;
  for (std::size_t i = 0; i < budgets.size(); ++i) {
    if (i && budgets[i] <= budgets[i - 1])
      throw ContractViolation("scaling_curve budgets must be strictly ascending");
    out.emplace_back(budgets[i], pass_at_n_empirical(run, budgets[i]));
  }
  return out;
}

std::string scaling_csv(std::span<const std::pair<std::size_t, Ratio>> curve) {
  std::string out = "budget,rate\n";
  for (const auto& [n, r] : curve) out += fmt::format("{},{:.6f}\n", n, r.to_double());
  return out;
}

json CorrelationMatrix::to_json() const {
  return json{{"benchmarks", benchmarks}, {"values", values}};
}

CorrelationMatrix cross_dataset_correlation(std::span<const RunRates> runs) {
  if (runs.size() < 3)
    throw ContractViolation(fmt::format("correlation needs at least 3 runs, got {}", runs.size()));
  CorrelationMatrix m;
  for (const auto& [b, _] : runs.front().rates) m.benchmarks.push_back(b);
  for (const auto& r : runs) {
    if (r.rates.size() != m.benchmarks.size())
      throw ContractViolation(fmt::format("run '{}' reports a different benchmark set", r.run));
    for (const auto& b : m.benchmarks)
      if (!r.rates.count(b))
        throw ContractViolation(fmt::format("run '{}' lacks benchmark '{}'", r.run, b));
  }
  const std::size_t B = m.benchmarks.size();
  const double n = static_cast<double>(runs.size());
  std::vector<std::vector<double>> centered(B);
  for (std::size_t j = 0; j < B; ++j) {
    double mean = 0;
    for (const auto& r : runs) mean += r.rates.at(m.benchmarks[j]);
    mean /= n;
    double ss = 0;
    for (const auto& r : runs) {
      centered[j].push_back(r.rates.at(m.benchmarks[j]) - mean);
      ss += centered[j].back() * centered[j].back();
    }
    const auto [lo, hi] = std::minmax_element(centered[j].begin(), centered[j].end());
    if (*lo == *hi)
      throw ContractViolation(fmt::format("benchmark '{}' is constant across runs", m.benchmarks[j]));
    const double norm = std::sqrt(ss);
    for (auto& x : centered[j]) x /= norm;
  }
  m.values.assign(B, std::vector<double>(B, 0.0));
  for (std::size_t a = 0; a < B; ++a) {
    m.values[a][a] = 1.0;
    for (std::size_t b = a + 1; b < B; ++b) {
      double dot = 0;
      for (std::size_t i = 0; i < runs.size(); ++i) dot += centered[a][i] * centered[b][i];
      dot = std::clamp(dot, -1.0, 1.0);
      m.values[a][b] = m.values[b][a] = dot;
    }
  }
  return m;
}

std::vector<RunRates> rate_matrix(std::span<const BenchmarkRun> runs, std::size_t n) {
  std::map<std::string, RunRates> by_model;
  for (const auto& r : runs) {
    auto& row = by_model[r.model];
    row.run = r.model;
    if (!row.rates.emplace(r.benchmark, pass_at_n_empirical(r, n).to_double()).second)
      throw IntegrityError(fmt::format("model '{}' has two runs on '{}'", r.model, r.benchmark));
  }
  std::vector<RunRates> out;
  for (auto& [_, row] : by_model) out.push_back(std::move(row));
  return out;
}

// ---------------------------------------------------------------------------
// Proof style
// ---------------------------------------------------------------------------

namespace {

// Comments and string literal contents replaced by spaces.
std::string code_only(std::string_view text) {
  std::string s = corpus::blank_comments(text);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '"') continue;
    ++i;
    while (i < s.size() && s[i] != '"') {
      if (s[i] == '\\' && i + 1 < s.size()) s[i++] = ' ';
      if (s[i] != '\n') s[i] = ' ';
      ++i;
    }
  }
  return s;
}

}  // namespace

ProofStats proof_stats(std::string_view proof_text) {
  ProofStats st;
  const std::string text = normalize_newlines(proof_text);
  st.length = utf8_length(text);
  std::istringstream tokens(code_only(text));
  std::string tok;
  while (tokens >> tok) st.try_count += tok == "try";
  return st;
}

json StyleReport::to_json() const {
  return json{{"proofs", proofs},
              {"empty", empty},
              {"avg_length", avg_length.to_string()},
              {"avg_length_value", avg_length.to_double()},
              {"avg_try", avg_try.to_string()},
              {"avg_try_value", avg_try.to_double()}};
}

StyleReport proof_style_report(std::span<const std::string> proofs) {
  StyleReport r;
  r.proofs = proofs.size();
  if (proofs.empty()) return r;
  r.empty = false;
  std::int64_t length = 0, tries = 0;
  for (const auto& p : proofs) {
    const auto st = proof_stats(p);
    length += static_cast<std::int64_t>(st.length);
    tries += static_cast<std::int64_t>(st.try_count);
  }
  const auto n = static_cast<std::int64_t>(proofs.size());
  r.avg_length = Ratio(length, n);
  r.avg_try = Ratio(tries, n);
  return r;
}

}  // namespace lemmaforge::evaluate
