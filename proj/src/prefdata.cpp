#include "lemmaforge/prefdata.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "lemmaforge/evaluate.hpp"

namespace lemmaforge::prefdata {

using verify::Status;

std::size_t SampleSet::c() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(), [](const Sample& s) { return s.status == Status::pass; }));
}

std::vector<SampleSet> sample_sets_from_records(std::span<const json> records) {
  std::map<std::string, std::map<std::int64_t, Sample>> grouped;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const json& j = records[i];
    try {
      const auto id = j.at("statement_id").get<std::string>();
      const auto status = j.at("status").get<std::string>();
      Sample s;
      s.sample_index = j.value("sample_index", std::int64_t{0});
      if (status == "infrastructure_error") {
        spdlog::warn("{} sample {}: checker did not run, sample ignored", id, s.sample_index);
        continue;
      }
      s.status = verify::parse_status(status);
      s.proof_text = j.at("proof_text").get<std::string>();
      if (!grouped[id].emplace(s.sample_index, std::move(s)).second)
        throw IntegrityError(fmt::format("statement '{}' has sample {} twice", id,
                                         j.value("sample_index", std::int64_t{0})),
                             i + 1);
    } catch (const json::exception& e) {
      throw ParseError(e.what(), i + 1);
    }
  }
  std::vector<SampleSet> out;
  for (auto& [id, samples] : grouped) {
    SampleSet set{id, {}};
    for (auto& [_, s] : samples) set.samples.push_back(std::move(s));
    out.push_back(std::move(set));
  }
  return out;
}

std::vector<SampleSet> load_sample_sets(const std::filesystem::path& path) {
  std::vector<json> records;
  for_each_jsonl(path, [&](const json& j, std::size_t) { records.push_back(j); });
  try {
    return sample_sets_from_records(records);
  } catch (const IntegrityError& e) {
    throw IntegrityError(fmt::format("{}: {}", path.string(), e.what()), e.line());
  } catch (const ParseError& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()), e.line());
  }
}

Ratio pass_ratio(const SampleSet& set) {
  if (set.n() == 0) throw ContractViolation(fmt::format("'{}' has no samples", set.statement_id));
  return Ratio(static_cast<std::int64_t>(set.c()), static_cast<std::int64_t>(set.n()));
}

PassRatioBucket::PassRatioBucket(Ratio lo, Ratio hi) : lower(lo), upper(hi) {
  if (!(Ratio(0, 1) <= lower && lower < upper && upper <= Ratio(1, 1)))
    throw ContractViolation(
        fmt::format("bucket ({}, {}] must satisfy 0 <= lower < upper <= 1", lower.to_string(), upper.to_string()));
}

PassRatioBucket PassRatioBucket::parse(std::string_view text) {
  const auto comma = text.find(',');
  if (comma == std::string_view::npos)
    throw ConfigError(fmt::format("bucket '{}' must be 'lower,upper'", text));
  try {
    return PassRatioBucket(Ratio::parse(trim(text.substr(0, comma))),
                           Ratio::parse(trim(text.substr(comma + 1))));
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  } catch (const ParseError& e) {
    throw ConfigError(fmt::format("bucket '{}': {}", text, e.what()));
  }
}

std::vector<SampleSet> bucket_statements(std::span<const SampleSet> sets, const PassRatioBucket& bucket) {
  std::vector<SampleSet> out;
  for (const auto& s : sets)
    if (s.n() > 0 && bucket.contains(pass_ratio(s))) out.push_back(s);
  return out;
}

json to_json(const PreferencePair& p) {
  return json{{"statement_id", p.statement_id},
              {"chosen_text", p.chosen.proof_text},
              {"rejected_text", p.rejected.proof_text},
              {"chosen_sample_index", p.chosen.sample_index},
              {"rejected_sample_index", p.rejected.sample_index},
              {"rejected_status", verify::to_string(p.rejected_status)}};
}

DpoResult build_dpo_pairs(std::span<const SampleSet> selected, bool length_penalized,
                          std::uint64_t seed) {
  DpoResult out;
  std::vector<const SampleSet*> order;
  for (const auto& s : selected) order.push_back(&s);
  std::sort(order.begin(), order.end(),
            [](const SampleSet* a, const SampleSet* b) { return a->statement_id < b->statement_id; });

  for (const SampleSet* set : order) {
    std::vector<const Sample*> passes, rejects;
    for (const auto& s : set->samples) (s.status == Status::pass ? passes : rejects).push_back(&s);
    if (passes.empty() || rejects.empty()) {
      out.skip_log.push_back(fmt::format("{}: skipped, no {} sample", set->statement_id,
                                         passes.empty() ? "passing" : "non-passing"));
      spdlog::info("{}", out.skip_log.back());
      continue;
    }
    std::mt19937_64 rng(derive_seed(seed, set->statement_id));
    const Sample* chosen = nullptr;
    if (length_penalized) {
      std::size_t best = 0;
      for (const Sample* s : passes) {
        const auto len = evaluate::proof_stats(s->proof_text).length;
        if (!chosen || len < best || (len == best && s->sample_index < chosen->sample_index)) {
          chosen = s;
          best = len;
        }
      }
    } else {
      chosen = passes[uniform_index(rng, passes.size())];
    }
    const Sample* rejected = rejects[uniform_index(rng, rejects.size())];
    PreferencePair p;
    p.statement_id = set->statement_id;
    p.chosen = {set->statement_id, chosen->proof_text, chosen->sample_index, {}, json::object()};
    p.rejected = {set->statement_id, rejected->proof_text, rejected->sample_index, {}, json::object()};
    p.rejected_status = rejected->status;
    out.pairs.push_back(std::move(p));
  }
  return out;
}

void RewardConfig::validate() const {
  if (!(pass_reward > fail_reward))
    throw ConfigError(fmt::format("pass reward {} must exceed fail reward {}", pass_reward, fail_reward));
  if (timeout_reward != 0 && timeout_reward != -8 && timeout_reward != -16)
    throw ConfigError(fmt::format("timeout reward must be 0, -8 or -16, got {}", timeout_reward));
}

std::vector<Reward> assign_rewards(const SampleSet& set, const RewardConfig& cfg) {
  cfg.validate();
  std::vector<Reward> out;
  out.reserve(set.n());
  for (const auto& s : set.samples) {
    double r = 0;
    switch (s.status) {
      case Status::pass: r = cfg.pass_reward; break;
      case Status::fail: r = cfg.fail_reward; break;
      case Status::timeout: r = cfg.timeout_reward; break;
    }
    out.push_back({s.sample_index, s.status, r});
  }
  return out;
}

std::vector<json> reward_records(std::span<const SampleSet> sets, const RewardConfig& cfg) {
  std::vector<json> out;
  for (const auto& set : sets)
    for (const auto& r : assign_rewards(set, cfg))
      out.push_back(json{{"statement_id", set.statement_id},
                         {"sample_index", r.sample_index},
                         {"status", verify::to_string(r.status)},
                         {"reward", r.reward}});
  return out;
}

RewardSummary group_reward_summary(const SampleSet& set, const RewardConfig& cfg) {
  if (set.n() < 2)
    throw ContractViolation(fmt::format("'{}': reward group needs at least 2 samples", set.statement_id));
  const auto rewards = assign_rewards(set, cfg);
  RewardSummary s;
  for (const auto& r : rewards) s.mean += r.reward;
  s.mean /= static_cast<double>(rewards.size());
  double ss = 0;
  for (const auto& r : rewards) ss += (r.reward - s.mean) * (r.reward - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(rewards.size()));
  return s;
}

}  // namespace lemmaforge::prefdata
