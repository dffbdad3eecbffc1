#include "lemmaforge/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include "lemmaforge/evaluate.hpp"
#include "lemmaforge/http.hpp"

namespace lemmaforge::pipeline {

namespace fs = std::filesystem;

const std::vector<std::string>& stage_order() {
  static const std::vector<std::string> order{"quality", "iterate", "evaluate", "prefdata", "sketch"};
  return order;
}

const std::map<std::string, std::string>& stage_versions() {
  static const std::map<std::string, std::string> v{
      {"quality", "1.1"}, {"iterate", "1.2"}, {"evaluate", "1.1"}, {"prefdata", "1.0"}, {"sketch", "1.0"}};
  return v;
}

Environment endpoint_environment() {
  Environment env;
  for (auto name : {kProverUrlEnv, kJudgeUrlEnv, kSimplifierUrlEnv})
    if (const char* v = std::getenv(std::string(name).c_str()); v && *v) env[std::string(name)] = v;
  return env;
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

json BackendSpec::to_json() const {
  json j{{"kind", kind}};
  if (!endpoint.empty()) j["endpoint"] = endpoint;
  if (script) j["script"] = script->string();
  if (fallback) j["fallback"] = *fallback;
  return j;
}

BackendSpec parse_backend_arg(std::string_view text) {
  BackendSpec s;
  const std::string t = trim(text);
  if (t.rfind("http://", 0) == 0 || t.rfind("https://", 0) == 0) {
    s.kind = "http";
    s.endpoint = t;
  } else if (t.rfind("http:", 0) == 0) {
    s.kind = "http";
    s.endpoint = t.substr(5);
  } else if (t == "mock" || t == "toy") {
    s.kind = t;
  } else if (t.rfind("mock:", 0) == 0) {
    s.kind = "mock";
    s.script = t.substr(5);
  } else {
    throw ConfigError(fmt::format("backend '{}' must be mock, mock:<path>, toy or http:<url>", t));
  }
  if (s.kind == "http" && s.endpoint.empty()) throw ConfigError("http backend needs a URL");
  return s;
}

json CheckerConfig::to_json() const {
  json j{{"kind", kind}, {"timeout_ms", timeout.count()}, {"pool", pool}};
  if (kind == "external") {
    j["executable"] = external.executable.string();
    j["args"] = external.args;
    j["extension"] = external.extension;
    j["scratch_dir"] = external.scratch_dir.string();
  }
  return j;
}

std::unique_ptr<verify::CheckerBackend> make_checker(const CheckerConfig& c) {
  return verify::make_checker({c.kind, c.external});
}

namespace {

const fs::path& need_script(const BackendSpec& spec, std::string_view what) {
  if (!spec.script) throw ConfigError(fmt::format("mock {} needs a script file", what));
  return *spec.script;
}

}  // namespace

std::unique_ptr<iterate::ProverBackend> make_prover(const BackendSpec& spec) {
  if (spec.kind == "mock") {
    auto p = iterate::ScriptedProver::from_file(need_script(spec, "prover"));
    return std::make_unique<iterate::ScriptedProver>(std::move(p));
  }
  if (spec.kind == "http") return std::make_unique<iterate::HttpProver>(http::parse_url(spec.endpoint));
  throw ConfigError(fmt::format("unknown prover backend '{}'", spec.kind));
}

std::unique_ptr<quality::JudgeBackend> make_judge(const BackendSpec& spec) {
  if (spec.kind == "mock")
    return std::make_unique<quality::ScriptedJudge>(
        quality::ScriptedJudge::from_file(need_script(spec, "judge"), spec.fallback));
  if (spec.kind == "http") return std::make_unique<quality::HttpJudge>(http::parse_url(spec.endpoint));
  throw ConfigError(fmt::format("unknown judge backend '{}'", spec.kind));
}

std::unique_ptr<sketch::SimplifierBackend> make_simplifier(const BackendSpec& spec) {
  if (spec.kind == "mock")
    return std::make_unique<sketch::ScriptedSimplifier>(
        sketch::ScriptedSimplifier::from_file(need_script(spec, "simplifier")));
  if (spec.kind == "toy") return std::make_unique<sketch::ToySimplifier>();
  if (spec.kind == "http") return std::make_unique<sketch::HttpSimplifier>(http::parse_url(spec.endpoint));
  throw ConfigError(fmt::format("unknown simplifier backend '{}'", spec.kind));
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

std::set<std::string> PipelineConfig::configured_stages() const {
  std::set<std::string> s;
  if (quality) s.insert("quality");
  if (iterate) s.insert("iterate");
  if (evaluate) s.insert("evaluate");
  if (prefdata) s.insert("prefdata");
  if (sketch) s.insert("sketch");
  return s;
}

json PipelineConfig::to_json() const {
  json j{{"run_dir", run_dir.string()},
         {"seed", seed},
         {"checker", checker.to_json()},
         {"prover_concurrency", prover_concurrency},
         {"judge_concurrency", judge_concurrency}};
  if (prover) j["prover"] = prover->to_json();
  if (judge) j["judge"] = judge->to_json();
  if (simplifier) j["simplifier"] = simplifier->to_json();
  json st = json::object();
  if (quality) {
    std::vector<int> ks = quality->ks;
    st["quality"] = {{"bundles", quality->bundles.string()},
                     {"judgments", quality->judgments},
                     {"threshold", quality->threshold.to_string()},
                     {"ks", ks}};
  }
  if (iterate) st["iterate"] = {{"schedule", iterate->schedule.string()}};
  if (evaluate) {
    json e{{"bootstrap", evaluate->bootstrap}};
    if (evaluate->attempts) e["attempts"] = evaluate->attempts->string();
    if (evaluate->n) e["n"] = *evaluate->n;
    st["evaluate"] = e;
  }
  if (prefdata) {
    json p{{"bucket", prefdata->bucket.lower.to_string() + "," + prefdata->bucket.upper.to_string()},
           {"length_penalized", prefdata->length_penalized},
           {"pass_reward", prefdata->rewards.pass_reward},
           {"fail_reward", prefdata->rewards.fail_reward},
           {"timeout_reward", prefdata->rewards.timeout_reward}};
    if (prefdata->attempts) p["attempts"] = prefdata->attempts->string();
    st["prefdata"] = p;
  }
  if (sketch) {
    json s{{"statements", sketch->statements.string()}, {"attempts", sketch->attempts}};
    if (sketch->proofs) s["proofs"] = sketch->proofs->string();
    st["sketch"] = s;
  }
  j["stages"] = st;
  return j;
}

namespace {

// Reads one JSON object, recording every problem instead of throwing.
class Reader {
 public:
  Reader(const fs::path& base, ValidationResult& out) : base_(base), out_(out) {}

  const json* object(const json& parent, const std::string& key, const std::string& where, bool required,
                     const std::set<std::string>& known) {
    const json* v = find(parent, key, where, required);
    if (!v) return nullptr;
    if (!v->is_object()) {
      error(where + key, "must be an object");
      return nullptr;
    }
    for (const auto& [k, _] : v->items())
      if (!known.count(k)) out_.warnings.push_back(fmt::format("{}{}.{}: unknown key ignored", where, key, k));
    return v;
  }

  std::optional<std::string> string(const json& parent, const std::string& key, const std::string& where,
                                    bool required) {
    const json* v = find(parent, key, where, required);
    if (!v) return std::nullopt;
    if (!v->is_string()) {
      error(where + key, "must be a string");
      return std::nullopt;
    }
    return v->get<std::string>();
  }

  std::optional<std::int64_t> integer(const json& parent, const std::string& key, const std::string& where,
                                      bool required, std::int64_t min_value) {
    const json* v = find(parent, key, where, required);
    if (!v) return std::nullopt;
    if (!v->is_number_integer()) {
      error(where + key, "must be an integer");
      return std::nullopt;
    }
    const auto x = v->get<std::int64_t>();
    if (x < min_value) {
      error(where + key, fmt::format("must be >= {}", min_value));
      return std::nullopt;
    }
    return x;
  }

  std::optional<double> number(const json& parent, const std::string& key, const std::string& where) {
    const json* v = find(parent, key, where, false);
    if (!v) return std::nullopt;
    if (!v->is_number()) {
      error(where + key, "must be a number");
      return std::nullopt;
    }
    return v->get<double>();
  }

  std::optional<bool> boolean(const json& parent, const std::string& key, const std::string& where) {
    const json* v = find(parent, key, where, false);
    if (!v) return std::nullopt;
    if (!v->is_boolean()) {
      error(where + key, "must be true or false");
      return std::nullopt;
    }
    return v->get<bool>();
  }

  /// Resolved path; must exist unless may_be_missing.
  std::optional<fs::path> path(const json& parent, const std::string& key, const std::string& where, bool required,
                               bool may_be_missing = false) {
    auto s = string(parent, key, where, required);
    if (!s) return std::nullopt;
    fs::path p = resolve(*s);
    if (!may_be_missing && !fs::exists(p)) {
      error(where + key, fmt::format("'{}' does not exist", p.string()));
      return std::nullopt;
    }
    return p;
  }

  fs::path resolve(const std::string& s) const {
    fs::path p(s);
    return (p.is_absolute() ? p : base_ / p).lexically_normal();
  }

  void error(const std::string& where, const std::string& msg) { out_.errors.push_back(where + ": " + msg); }

 private:
  const json* find(const json& parent, const std::string& key, const std::string& where, bool required) {
    auto it = parent.find(key);
    if (it == parent.end() || it->is_null()) {
      if (required) error(where + key, "is required");
      return nullptr;
    }
    return &*it;
  }

  fs::path base_;
  ValidationResult& out_;
};

std::optional<BackendSpec> read_backend(Reader& r, const json& root, const std::string& key,
                                        const std::set<std::string>& kinds, const Environment& env,
                                        std::string_view env_name, bool required) {
  const json* b = r.object(root, key, "", required,
                           {"kind", "endpoint", "script", "fallback", "concurrency"});
  if (!b) return std::nullopt;
  const std::string where = key + ".";
  BackendSpec spec;
  auto kind = r.string(*b, "kind", where, true);
  if (!kind) return std::nullopt;
  if (!kinds.count(*kind)) {
    r.error(where + "kind", fmt::format("'{}' is not one of {}", *kind, fmt::join(kinds, ", ")));
    return std::nullopt;
  }
  spec.kind = *kind;
  if (auto e = r.string(*b, "endpoint", where, false)) spec.endpoint = *e;
  if (auto it = env.find(std::string(env_name)); it != env.end()) spec.endpoint = it->second;
  if (spec.kind == "http") {
    if (spec.endpoint.empty()) {
      r.error(where + "endpoint", fmt::format("is required for an http backend (or set {})", env_name));
      return std::nullopt;
    }
    try {
      http::parse_url(spec.endpoint);
    } catch (const std::exception& e) {
      r.error(where + "endpoint", e.what());
      return std::nullopt;
    }
  }
  if (spec.kind == "mock") {
    spec.script = r.path(*b, "script", where, true);
    if (!spec.script) return std::nullopt;
  }
  spec.fallback = r.string(*b, "fallback", where, false);
  return spec;
}

}  // namespace

ValidationResult validate_config(const json& j, const fs::path& base_dir, const Environment& env) {
  ValidationResult out;
  if (!j.is_object()) {
    out.errors.push_back("config must be an object");
    return out;
  }
  Reader r(base_dir, out);
  for (const auto& [k, _] : j.items())
    if (!std::set<std::string>{"run_dir", "seed", "checker", "prover", "judge", "simplifier", "stages"}.count(k))
      out.warnings.push_back(fmt::format("{}: unknown key ignored", k));

  PipelineConfig c;
  if (auto rd = r.path(j, "run_dir", "", true, true)) c.run_dir = *rd;
  const auto seed = r.integer(j, "seed", "", true, 0);
  if (seed) c.seed = static_cast<std::uint64_t>(*seed);

  if (const json* ch = r.object(j, "checker", "", false,
                                {"kind", "executable", "args", "extension", "scratch_dir", "timeout_ms", "pool"})) {
    if (auto kind = r.string(*ch, "kind", "checker.", true)) {
      if (*kind != "toy" && *kind != "external") r.error("checker.kind", fmt::format("'{}' is not toy or external", *kind));
      c.checker.kind = *kind;
    }
    if (c.checker.kind == "external") {
      if (auto exe = r.path(*ch, "executable", "checker.", true)) c.checker.external.executable = *exe;
      if (auto it = ch->find("args"); it != ch->end()) {
        if (!it->is_array() || !std::all_of(it->begin(), it->end(), [](const json& a) { return a.is_string(); }))
          r.error("checker.args", "must be a list of strings");
        else
          c.checker.external.args = it->get<std::vector<std::string>>();
      }
      if (auto ext = r.string(*ch, "extension", "checker.", false)) c.checker.external.extension = *ext;
      c.checker.external.scratch_dir = r.resolve(r.string(*ch, "scratch_dir", "checker.", false).value_or("scratch"));
    }
    if (auto t = r.integer(*ch, "timeout_ms", "checker.", false, 1)) c.checker.timeout = verify::Millis(*t);
    if (auto p = r.integer(*ch, "pool", "checker.", false, 1)) c.checker.pool = static_cast<std::size_t>(*p);
  }

  const json* stages = r.object(j, "stages", "", false, {"quality", "iterate", "evaluate", "prefdata", "sketch"});
  bool need_prover = false, need_judge = false;
  if (stages) {
    if (const json* q = r.object(*stages, "quality", "stages.", false, {"bundles", "judgments", "threshold", "ks"})) {
      QualityStage s;
      need_judge = true;
      if (auto p = r.path(*q, "bundles", "stages.quality.", true)) s.bundles = *p;
      if (auto n = r.integer(*q, "judgments", "stages.quality.", false, 1)) s.judgments = static_cast<int>(*n);
      if (auto it = q->find("threshold"); it != q->end()) {
        try {
          s.threshold = it->is_string() ? Ratio::parse(it->get<std::string>())
                                        : Ratio::parse(fmt::format("{}", it->get<double>()));
        } catch (const std::exception& e) {
          r.error("stages.quality.threshold", e.what());
        }
      }
      if (auto it = q->find("ks"); it != q->end()) {
        if (!it->is_array() || it->empty() ||
            !std::all_of(it->begin(), it->end(), [](const json& k) { return k.is_number_integer() && k.get<int>() >= 1; }))
          r.error("stages.quality.ks", "must be a non-empty list of positive integers");
        else
          s.ks = it->get<std::vector<int>>();
      }
      c.quality = s;
    }
    if (const json* it = r.object(*stages, "iterate", "stages.", false, {"schedule"})) {
      IterateStage s;
      need_prover = true;
      if (auto p = r.path(*it, "schedule", "stages.iterate.", true)) {
        s.schedule = *p;
        try {
          for (const auto& w : iterate::plan_schedule(*p).warnings) out.warnings.push_back("schedule: " + w);
        } catch (const std::exception& e) {
          r.error("stages.iterate.schedule", e.what());
        }
      }
      c.iterate = s;
    }
    if (const json* e = r.object(*stages, "evaluate", "stages.", false, {"attempts", "n", "bootstrap"})) {
      EvaluateStage s;
      s.attempts = r.path(*e, "attempts", "stages.evaluate.", false);
      if (!e->contains("attempts") && !c.iterate)
        r.error("stages.evaluate.attempts", "is required when no iterate stage is configured");
      if (auto n = r.integer(*e, "n", "stages.evaluate.", false, 1)) s.n = static_cast<std::size_t>(*n);
      if (auto b = r.integer(*e, "bootstrap", "stages.evaluate.", false, 2)) s.bootstrap = static_cast<int>(*b);
      c.evaluate = s;
    }
    if (const json* p = r.object(*stages, "prefdata", "stages.",
                                 false, {"attempts", "bucket", "length_penalized", "pass_reward", "fail_reward",
                                         "timeout_reward"})) {
      PrefdataStage s;
      s.attempts = r.path(*p, "attempts", "stages.prefdata.", false);
      if (!p->contains("attempts") && !c.iterate)
        r.error("stages.prefdata.attempts", "is required when no iterate stage is configured");
      if (auto b = r.string(*p, "bucket", "stages.prefdata.", false)) {
        try {
          s.bucket = prefdata::PassRatioBucket::parse(*b);
        } catch (const std::exception& e) {
          r.error("stages.prefdata.bucket", e.what());
        }
      }
      s.length_penalized = r.boolean(*p, "length_penalized", "stages.prefdata.").value_or(false);
      if (auto v = r.number(*p, "pass_reward", "stages.prefdata.")) s.rewards.pass_reward = *v;
      if (auto v = r.number(*p, "fail_reward", "stages.prefdata.")) s.rewards.fail_reward = *v;
      if (auto v = r.number(*p, "timeout_reward", "stages.prefdata.")) s.rewards.timeout_reward = *v;
      try {
        s.rewards.validate();
      } catch (const std::exception& e) {
        r.error("stages.prefdata", e.what());
      }
      c.prefdata = s;
    }
    if (const json* s = r.object(*stages, "sketch", "stages.", false, {"statements", "proofs", "attempts"})) {
      SketchStage st;
      if (auto p = r.path(*s, "statements", "stages.sketch.", true)) st.statements = *p;
      st.proofs = r.path(*s, "proofs", "stages.sketch.", false);
      if (s->contains("proofs")) need_prover = true;
      if (auto a = r.integer(*s, "attempts", "stages.sketch.", false, 1)) st.attempts = static_cast<int>(*a);
      c.sketch = st;
    }
  }

  c.prover = read_backend(r, j, "prover", {"mock", "http"}, env, kProverUrlEnv, need_prover);
  c.judge = read_backend(r, j, "judge", {"mock", "http"}, env, kJudgeUrlEnv, need_judge);
  c.simplifier = read_backend(r, j, "simplifier", {"mock", "toy", "http"}, env, kSimplifierUrlEnv, false);
  for (auto [key, slot] : {std::pair{"prover", &c.prover_concurrency}, std::pair{"judge", &c.judge_concurrency}})
    if (auto it = j.find(key); it != j.end() && it->is_object())
      if (auto n = r.integer(*it, "concurrency", std::string(key) + ".", false, 1)) *slot = static_cast<std::size_t>(*n);

  if (out.errors.empty()) out.config = std::move(c);
  return out;
}

ValidationResult validate_config(const fs::path& path, const Environment& env) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const std::exception& e) {
    ValidationResult out;
    out.errors.push_back(fmt::format("{}: {}", path.string(), e.what()));
    return out;
  }
  return validate_config(j, fs::absolute(path).parent_path(), env);
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

namespace {

class RunLog {
 public:
  explicit RunLog(const fs::path& file) : out_(file, std::ios::app) {
    if (!out_) throw InfrastructureError(fmt::format("cannot open log {}", file.string()));
  }
  template <class... Args>
  void operator()(fmt::format_string<Args...> f, Args&&... args) {
    const std::string line = fmt::format(f, std::forward<Args>(args)...);
    spdlog::info("{}", line);
    out_ << line << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

void write_json_file(const fs::path& p, const json& j) { write_text_file(p, j.dump(2) + "\n"); }

void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  write_text_file(p, text);
}

// Attempts of the highest iteration found in an iterate state directory.
fs::path last_attempts(const fs::path& state_dir) {
  std::optional<std::pair<int, fs::path>> best;
  if (fs::exists(state_dir))
    for (const auto& e : fs::directory_iterator(state_dir)) {
      const std::string name = e.path().filename().string();
      if (name.rfind("attempts-", 0) != 0 || e.path().extension() != ".jsonl") continue;
      const int k = std::stoi(name.substr(9));
      if (!best || k > best->first) best = {k, e.path()};
    }
  if (!best) throw Error(fmt::format("no attempts file in {}", state_dir.string()));
  return best->second;
}

struct Context {
  const PipelineConfig& cfg;
  fs::path run_dir;
  RunLog& log;
  verify::CheckerBackend& checker;
};

void stage_quality(Context& ctx) {
  const auto& s = *ctx.cfg.quality;
  const fs::path dir = ctx.run_dir / "quality";
  fs::create_directories(dir);
  auto judge = make_judge(*ctx.cfg.judge);
  quality::GateOptions opt;
  opt.n_judgments = s.judgments;
  opt.threshold = s.threshold;
  opt.seed = derive_seed(ctx.cfg.seed, "quality");
  opt.checker_pool = ctx.cfg.checker.pool;
  opt.judge_concurrency = ctx.cfg.judge_concurrency;
  opt.cc_timeout = ctx.cfg.checker.timeout;
  auto result = quality::run_gate(quality::load_bundles(s.bundles), ctx.checker, *judge, opt);
  result.report = quality::gate_report(result.bundles, s.ks, s.threshold);
  quality::write_bundles(dir / "scored_bundles.jsonl", result.bundles);
  corpus::write_statements(dir / "selected.jsonl", result.selected);
  write_json_file(dir / "report.json", result.report.to_json());
  write_text_file(dir / "report.txt", result.report.to_table());
  write_lines(dir / "judge_errors.log", result.judge_error_log);
  ctx.log("quality: {} bundles, {} statements selected, {} judge errors", result.bundles.size(),
          result.selected.size(), result.judge_error_log.size());
}

void stage_iterate(Context& ctx) {
  const fs::path dir = ctx.run_dir / "iterate";
  fs::create_directories(dir);
  const auto schedule = iterate::plan_schedule(ctx.cfg.iterate->schedule);
  for (const auto& w : schedule.warnings) ctx.log("iterate: warning: {}", w);
  auto prover = make_prover(*ctx.cfg.prover);
  iterate::RunOptions opt;
  opt.prover_concurrency = ctx.cfg.prover_concurrency;
  opt.checker_pool = ctx.cfg.checker.pool;
  opt.timeout = ctx.cfg.checker.timeout;
  const auto reports = iterate::run_schedule(schedule, *prover, ctx.checker, dir, opt);
  for (const auto& r : reports)
    ctx.log("iterate: k={} attempted={} new={} cumulative={}", r.k, r.statements_attempted, r.newly_solved_count,
            r.cumulative_solved_count);
}

void stage_evaluate(Context& ctx) {
  const auto& s = *ctx.cfg.evaluate;
  const fs::path dir = ctx.run_dir / "evaluate";
  fs::create_directories(dir);
  const fs::path attempts = s.attempts ? *s.attempts : last_attempts(ctx.run_dir / "iterate");
  const auto run = evaluate::load_run(attempts);
  if (run.sets.empty()) throw Error(fmt::format("{} holds no attempts", attempts.string()));
  std::size_t smallest = run.sets.front().n();
  for (const auto& set : run.sets) smallest = std::min(smallest, set.n());
  const std::size_t n = s.n.value_or(smallest);
  const Ratio rate = evaluate::pass_at_n_empirical(run, n);
  const auto boot = evaluate::bootstrap_ci(run, n, s.bootstrap, derive_seed(ctx.cfg.seed, "evaluate"));
  std::vector<std::size_t> budgets;
  for (std::size_t b = 1; b < n; b *= 2) budgets.push_back(b);
  budgets.push_back(n);
  const auto curve = evaluate::scaling_curve(run, budgets);
  const auto style = evaluate::proof_style_report(evaluate::load_proof_texts(attempts, true));
  json summary{{"attempts", attempts.filename().string()},
               {"benchmark", run.benchmark},
               {"model", run.model},
               {"statements", run.sets.size()},
               {"n", n},
               {"pass_at_n", rate.to_string()},
               {"pass_at_n_value", rate.to_double()},
               {"bootstrap", {{"mean", boot.mean}, {"std", boot.std}, {"replicates", boot.replicates}}},
               {"style", style.to_json()}};
  write_json_file(dir / "summary.json", summary);
  write_text_file(dir / "scaling.csv", evaluate::scaling_csv(curve));
  ctx.log("evaluate: pass@{} = {} over {} statements", n, rate.to_string(), run.sets.size());
}

void stage_prefdata(Context& ctx) {
  const auto& s = *ctx.cfg.prefdata;
  const fs::path dir = ctx.run_dir / "prefdata";
  fs::create_directories(dir);
  const fs::path attempts = s.attempts ? *s.attempts : last_attempts(ctx.run_dir / "iterate");
  const auto sets = prefdata::load_sample_sets(attempts);
  const auto selected = prefdata::bucket_statements(sets, s.bucket);
  const auto dpo = prefdata::build_dpo_pairs(selected, s.length_penalized, derive_seed(ctx.cfg.seed, "prefdata"));
  std::vector<json> pairs;
  for (const auto& p : dpo.pairs) pairs.push_back(prefdata::to_json(p));
  write_jsonl(dir / "dpo_pairs.jsonl", pairs);
  write_lines(dir / "skipped.log", dpo.skip_log);
  write_jsonl(dir / "rewards.jsonl", prefdata::reward_records(sets, s.rewards));
  ctx.log("prefdata: {} statements in bucket, {} pairs", selected.size(), dpo.pairs.size());
}

void stage_sketch(Context& ctx) {
  const auto& s = *ctx.cfg.sketch;
  const fs::path dir = ctx.run_dir / "sketch";
  fs::create_directories(dir);
  const auto statements = corpus::load_formal_statements(s.statements);
  if (s.proofs) {
    std::map<std::string, std::string> proofs;
    for (const auto& a : corpus::load_proof_attempts(*s.proofs)) proofs.emplace(a.statement_id, a.proof_text);
    auto prover = make_prover(*ctx.cfg.prover);
    sketch::SolveOptions opt;
    opt.attempts = s.attempts;
    opt.seed = derive_seed(ctx.cfg.seed, "sketch");
    opt.concurrency = ctx.cfg.prover_concurrency;
    opt.timeout = ctx.cfg.checker.timeout;
    std::vector<json> records;
    std::size_t passed = 0;
    for (const auto& st : statements) {
      const auto it = proofs.find(st.id);
      if (it == proofs.end()) {
        ctx.log("sketch: {} has no proof sketch, skipped", st.id);
        continue;
      }
      const auto o = sketch::run_sketch(st, it->second, *prover, ctx.checker, opt);
      if (o.status == "pass") ++passed;
      records.push_back(o.to_json());
    }
    write_jsonl(dir / "outcomes.jsonl", records);
    ctx.log("sketch: {} of {} sketched statements assembled and verified", passed, records.size());
  }
  if (ctx.cfg.simplifier) {
    auto simp = make_simplifier(*ctx.cfg.simplifier);
    std::vector<json> records;
    std::size_t closable = 0;
    for (const auto& r : sketch::simplify_statements(statements, *simp)) {
      closable += r.closable;
      records.push_back(r.to_json());
    }
    write_jsonl(dir / "simplify.jsonl", records);
    ctx.log("sketch: {} of {} goals simplify to zero", closable, records.size());
  }
}

// Stages whose default inputs come from another stage's outputs.
std::set<std::string> dependencies(const PipelineConfig& c, const std::string& stage) {
  if (stage == "evaluate" && c.evaluate && !c.evaluate->attempts) return {"iterate"};
  if (stage == "prefdata" && c.prefdata && !c.prefdata->attempts) return {"iterate"};
  return {};
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& config, const std::set<std::string>& stages) {
  const auto configured = config.configured_stages();
  std::set<std::string> wanted = stages.empty() ? configured : stages;
  for (const auto& s : wanted) {
    if (!stage_versions().count(s)) throw ConfigError(fmt::format("unknown stage '{}'", s));
    if (!configured.count(s)) throw ConfigError(fmt::format("stage '{}' is not configured", s));
  }

  PipelineResult result;
  result.run_dir = config.run_dir;
  fs::create_directories(config.run_dir / "logs");
  RunLog log(config.run_dir / "logs" / "pipeline.log");

  const json resolved = config.to_json();
  json manifest{{"tool_version", kToolVersion},
                {"config_hash", hex64(fnv1a64(resolved.dump()))},
                {"seed", config.seed},
                {"stages", std::vector<std::string>()},
                {"stage_versions", json::object()},
                {"stage_seeds", json::object()},
                {"config", resolved}};
  for (const auto& s : stage_order())
    if (wanted.count(s)) {
      manifest["stages"].push_back(s);
      manifest["stage_versions"][s] = stage_versions().at(s);
      manifest["stage_seeds"][s] = derive_seed(config.seed, s);
    }
  write_json_file(config.run_dir / "manifest.json", manifest);
  log("run {} config {}", config.run_dir.string(), manifest["config_hash"].get<std::string>());

  auto checker = make_checker(config.checker);
  Context ctx{config, config.run_dir, log, *checker};
  std::set<std::string> failed;
  for (const auto& stage : stage_order()) {
    if (!wanted.count(stage)) continue;
    StageResult r{stage, "ok", {}};
    for (const auto& dep : dependencies(config, stage))
      if (failed.count(dep) || (!wanted.count(dep) && !fs::exists(config.run_dir / dep))) {
        r.status = "skipped";
        r.detail = fmt::format("needs output of stage '{}'", dep);
      }
    if (r.status == "ok") {
      try {
        if (stage == "quality") stage_quality(ctx);
        else if (stage == "iterate") stage_iterate(ctx);
        else if (stage == "evaluate") stage_evaluate(ctx);
        else if (stage == "prefdata") stage_prefdata(ctx);
        else if (stage == "sketch") stage_sketch(ctx);
      } catch (const std::exception& e) {
        r.status = "failed";
        r.detail = e.what();
      }
    }
    if (r.status != "ok") {
      failed.insert(stage);
      result.exit_code = 1;
    }
    log("stage {}: {}{}", stage, r.status, r.detail.empty() ? "" : " (" + r.detail + ")");
    result.stages.push_back(std::move(r));
  }
  return result;
}

}  // namespace lemmaforge::pipeline
