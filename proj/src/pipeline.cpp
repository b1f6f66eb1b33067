#include "mpco/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <map>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "mpco/optimizer.hpp"

namespace mpco {

using nlohmann::json;

namespace {

const std::set<std::string> kTopLevelKeys = {
    "repo_root",  "system",      "profile",     "contexts",       "meta_prompter",
    "targets",    "strategies",  "strategies_dir", "ablations",   "validation",
    "run_dir",    "staging_ignore", "concurrency", "retry",       "seed",
    "commentary_prefixes"};

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ValidationError("unknown config key '" + where + key + "'");
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal();
}

std::string relpath(const fs::path& p) { return p.generic_string(); }

ModelConfig model_from(const json& j, const fs::path& base, const std::string& where) {
  ModelConfig m;
  try {
    m = j.get<ModelConfig>();
  } catch (const json::exception& e) {
    throw ValidationError(where + ": " + e.what());
  }
  if (m.provider == "mock" && !m.endpoint_url.empty()) {
    m.endpoint_url = resolve(base, m.endpoint_url).string();
  }
  return m;
}

std::string file_safe(std::string_view s) {
  std::string out;
  for (char c : s) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '.' || c == '-' || c == '_';
    out += ok ? c : '_';
  }
  return out;
}

bool uses_context_sections(StrategyKind k) {
  return k == StrategyKind::mpco || k == StrategyKind::contextual;
}

// Runs fn(i) for i in [0, n) on up to `workers` threads. The first exception
// escaping fn is rethrown after all threads finish.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

json read_json(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::parse_error& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) {
  fs::create_directories(p.parent_path());
  write_file_atomic(p, j.dump(2) + "\n");
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  reject_unknown(j, kTopLevelKeys, "");
  PipelineConfig c;
  try {
    c.repo_root = resolve(base_dir, j.at("repo_root").get<std::string>());
    c.system = j.value("system", std::string());
    if (c.system.empty()) {
      fs::path r = c.repo_root;
      if (r.filename().empty()) r = r.parent_path();
      c.system = r.filename().string();
    }

    const json& p = j.at("profile");
    reject_unknown(p, {"path", "format", "mode", "k", "ignore"}, "profile.");
    c.profile_path = resolve(base_dir, p.at("path").get<std::string>());
    c.profile_format = p.value("format", c.profile_format);
    c.rank_mode = rank_mode_from_string(p.value("mode", std::string("self")));
    const long long k = p.value("k", 10LL);
    if (k < 1) throw ValidationError("profile.k must be >= 1");
    c.k = static_cast<std::size_t>(k);
    c.profile_ignore = p.value("ignore", std::vector<std::string>{});

    const json& ctx = j.at("contexts");
    reject_unknown(ctx, {"db", "project", "task"}, "contexts.");
    c.context_db = resolve(base_dir, ctx.at("db").get<std::string>());
    c.project_id = ctx.at("project").get<std::string>();
    c.task_id = ctx.at("task").get<std::string>();

    if (j.contains("meta_prompter") && !j["meta_prompter"].is_null()) {
      c.meta_prompter = model_from(j["meta_prompter"], base_dir, "meta_prompter");
    }
    for (const json& t : j.at("targets")) {
      reject_unknown(t, {"llm_context", "model"}, "targets[].");
      c.targets.push_back({t.at("llm_context").get<std::string>(),
                           model_from(t.at("model"), base_dir, "targets[].model")});
    }

    if (j.contains("strategies")) {
      for (const json& s : j["strategies"]) c.strategies.push_back(strategy_from_string(s.get<std::string>()));
    } else {
      c.strategies = all_strategies();
    }
    if (j.contains("strategies_dir")) {
      c.strategies_dir = resolve(base_dir, j["strategies_dir"].get<std::string>());
    }
    if (j.contains("ablations")) {
      for (const json& a : j["ablations"]) {
        c.ablations.push_back(AblationMask::from_names(a.get<std::vector<std::string>>()));
      }
    } else {
      c.ablations = {AblationMask{}};
    }

    c.validation = j.at("validation").get<ValidationConfig>();
    c.run_dir = resolve(base_dir, j.value("run_dir", std::string("mpco-run")));
    if (j.contains("staging_ignore")) c.staging_ignore = j["staging_ignore"].get<std::vector<std::string>>();

    if (j.contains("concurrency")) {
      const json& cc = j["concurrency"];
      reject_unknown(cc, {"global", "per_provider", "workers"}, "concurrency.");
      c.global_cap = cc.value("global", c.global_cap);
      c.per_provider_cap = cc.value("per_provider", c.per_provider_cap);
      c.workers = cc.value("workers", c.workers);
    }
    if (j.contains("retry")) {
      const json& r = j["retry"];
      reject_unknown(r, {"base_ms", "factor", "jitter"}, "retry.");
      c.retry.base = std::chrono::milliseconds(r.value("base_ms", c.retry.base.count()));
      c.retry.factor = r.value("factor", c.retry.factor);
      c.retry.jitter = r.value("jitter", c.retry.jitter);
    }
    c.seed = j.value("seed", c.seed);
    if (j.contains("commentary_prefixes")) {
      c.commentary_prefixes = j["commentary_prefixes"].get<std::vector<std::string>>();
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return c;
}

json PipelineConfig::to_json() const {
  json targets_json = json::array();
  for (const TargetConfig& t : targets) {
    targets_json.push_back({{"llm_context", t.llm_context}, {"model", t.model}});
  }
  json strategies_json = json::array();
  for (StrategyKind k : strategies) strategies_json.push_back(mpco::to_string(k));
  json ablations_json = json::array();
  for (const AblationMask& m : ablations) ablations_json.push_back(m.names());

  json j = {{"repo_root", relpath(repo_root)},
            {"system", system},
            {"profile",
             {{"path", relpath(profile_path)},
              {"format", profile_format},
              {"mode", rank_mode == RankMode::self ? "self" : "total"},
              {"k", k},
              {"ignore", profile_ignore}}},
            {"contexts", {{"db", relpath(context_db)}, {"project", project_id}, {"task", task_id}}},
            {"meta_prompter", meta_prompter ? json(*meta_prompter) : json(nullptr)},
            {"targets", targets_json},
            {"strategies", strategies_json},
            {"ablations", ablations_json},
            {"validation", validation},
            {"staging_ignore", staging_ignore},
            {"concurrency",
             {{"global", global_cap}, {"per_provider", per_provider_cap}, {"workers", workers}}},
            {"retry",
             {{"base_ms", retry.base.count()}, {"factor", retry.factor}, {"jitter", retry.jitter}}},
            {"seed", seed},
            {"commentary_prefixes", commentary_prefixes}};
  if (strategies_dir) j["strategies_dir"] = relpath(*strategies_dir);
  return j;
}

void PipelineConfig::check() const {
  if (!fs::is_directory(repo_root)) throw ValidationError("repo_root is not a directory: " + repo_root.string());
  if (!fs::is_regular_file(profile_path)) throw ValidationError("profile not found: " + profile_path.string());
  if (!fs::is_regular_file(context_db)) throw ValidationError("context db not found: " + context_db.string());
  if (strategies_dir && !fs::is_directory(*strategies_dir)) {
    throw ValidationError("strategies_dir is not a directory: " + strategies_dir->string());
  }
  if (targets.empty()) throw ValidationError("at least one target model is required");
  if (strategies.empty()) throw ValidationError("at least one strategy is required");
  if (ablations.empty()) throw ValidationError("ablations must list at least one mask");
  if (workers < 1 || global_cap < 1 || per_provider_cap < 1) {
    throw ValidationError("concurrency values must be >= 1");
  }
  validation.check();

  std::vector<const ModelConfig*> models;
  std::set<std::string> ids;
  for (const TargetConfig& t : targets) {
    if (!ids.insert(t.model.model_id).second) {
      throw ValidationError("duplicate target model '" + t.model.model_id + "'");
    }
    models.push_back(&t.model);
  }
  const bool wants_meta =
      std::find(strategies.begin(), strategies.end(), StrategyKind::mpco) != strategies.end();
  if (wants_meta && !meta_prompter) throw ValidationError("strategy mpco needs a meta_prompter");
  if (meta_prompter) models.push_back(&*meta_prompter);
  for (const ModelConfig* m : models) {
    m->check();
    if (m->provider == "mock" && !fs::is_regular_file(m->endpoint_url)) {
      throw ValidationError("mock script not found: " + m->endpoint_url);
    }
  }

  const ContextDb db = ContextDb::load(context_db);
  for (const TargetConfig& t : targets) {
    try {
      assemble(db, project_id, task_id, t.llm_context);
    } catch (const LookupError& e) {
      throw ValidationError(std::string("contexts: ") + e.what());
    }
  }
  for (StrategyKind kind : strategies) {
    (strategies_dir ? PromptStrategy::load(kind, *strategies_dir) : PromptStrategy::builtin(kind)).check();
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ValidationError("override must look like key.path=value: '" + assignment + "'");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string seg = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (seg.empty()) throw ValidationError("empty segment in override '" + path + "'");
    json* child;
    if (node->is_array()) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(seg);
      } catch (const std::exception&) {
        throw ValidationError("override '" + path + "': '" + seg + "' is not an index");
      }
      if (idx >= node->size()) throw ValidationError("override '" + path + "': index out of range");
      child = &(*node)[idx];
    } else {
      if (node->is_null()) *node = json::object();
      if (!node->is_object()) throw ValidationError("override '" + path + "' descends into a scalar");
      child = &(*node)[seg];
    }
    if (dot == std::string::npos) {
      *child = value;
      return;
    }
    node = child;
    start = dot + 1;
  }
}

PipelineConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  json doc = read_json(path);
  for (const std::string& o : overrides) apply_override(doc, o);
  fs::path base = fs::absolute(path).parent_path();
  PipelineConfig cfg = PipelineConfig::from_json(doc, base);
  cfg.check();
  return cfg;
}

struct Pipeline::PromptState {
  bool ok = false;
  GeneratedPrompt prompt;
  std::string outcome;  // prompt_rejected or llm_error when !ok
  std::string reason;
  bool available = true;  // false: not cached and generation disabled
};

struct Pipeline::JobState {
  Job job;
  std::string outcome;  // empty: not reached
  std::string reason;
  std::string meta_prompter = "static";
  std::optional<OptimizationResult> optimization;
  std::optional<VariantWorkspace> workspace;
  std::optional<json> manifest;
  std::optional<EvaluationResult> evaluation;
  std::optional<double> pi;
};

Pipeline::Pipeline(PipelineConfig cfg, Logger log) : cfg_(std::move(cfg)), log_(std::move(log)) {
  if (!log_) log_ = [](const std::string& m) { fmt::print(stderr, "{}\n", m); };
}

void Pipeline::warn(const std::string& msg) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    ++warnings_;
  }
  log_("warning: " + msg);
}

void Pipeline::ensure_run_dir() {
  fs::create_directories(cfg_.run_dir);
  const fs::path cfg_file = cfg_.run_dir / "config.json";
  const json current = cfg_.to_json();
  if (fs::exists(cfg_file)) {
    if (read_json(cfg_file) != current) {
      throw ValidationError("run directory " + cfg_.run_dir.string() +
                            " was created with a different configuration");
    }
  } else {
    write_json(cfg_file, current);
  }
}

ChatClient& Pipeline::client() {
  std::lock_guard<std::mutex> lock(mu_);
  if (!client_) {
    ChatClient::Options o;
    o.global_cap = cfg_.global_cap;
    o.per_provider_cap = cfg_.per_provider_cap;
    o.retry = cfg_.retry;
    o.audit_log = cfg_.run_dir / "exchanges.jsonl";
    o.seed = cfg_.seed;
    client_ = std::make_unique<ChatClient>(o);
  }
  return *client_;
}

const ContextDb& Pipeline::db() {
  std::lock_guard<std::mutex> lock(mu_);
  if (!db_) db_ = ContextDb::load(cfg_.context_db);
  return *db_;
}

ProfileOutcome Pipeline::profile() {
  ensure_run_dir();
  ProfileOutcome out;
  Profile prof = load_profile(cfg_.profile_path, cfg_.profile_format);
  std::vector<FrameStat> stats = filter_ignored(frame_stats(prof), cfg_.profile_ignore);
  std::vector<FrameStat> top = top_k(std::move(stats), cfg_.k, cfg_.rank_mode);
  for (std::size_t i = 0; i < top.size(); ++i) {
    const FrameStat& s = top[i];
    try {
      Language lang = s.file ? language_for_path(*s.file) : Language::other;
      out.bottlenecks.push_back(extract_snippet(cfg_.repo_root, s, lang, i + 1));
    } catch (const Error& e) {
      out.warnings.push_back(fmt::format("frame #{} '{}' skipped: {}", i + 1, s.frame_name, e.what()));
    }
  }
  for (const std::string& w : out.warnings) warn(w);
  write_json(cfg_.run_dir / "bottlenecks.json", json(out.bottlenecks));
  bottlenecks_ = out.bottlenecks;
  return out;
}

const std::vector<Bottleneck>& Pipeline::bottlenecks() {
  if (!bottlenecks_) profile();
  return *bottlenecks_;
}

std::vector<Job> Pipeline::prompt_jobs() const {
  std::vector<Job> out;
  for (StrategyKind kind : cfg_.strategies) {
    std::vector<AblationMask> masks =
        uses_context_sections(kind) ? cfg_.ablations : std::vector<AblationMask>{AblationMask{}};
    std::set<std::string> seen_masks;
    for (const AblationMask& mask : masks) {
      if (!seen_masks.insert(mask.suffix()).second) continue;
      for (std::size_t t = 0; t < cfg_.targets.size(); ++t) {
        Job j;
        j.kind = kind;
        j.mask = mask;
        j.strategy_label = mask.empty() ? to_string(kind) : to_string(kind) + "_" + mask.suffix();
        j.target_index = t;
        j.prompt_key = file_safe(j.strategy_label) + "__" + file_safe(cfg_.targets[t].model.model_id);
        out.push_back(std::move(j));
      }
    }
  }
  return out;
}

std::vector<Job> Pipeline::jobs() const {
  if (!bottlenecks_) throw Error("jobs() before profile()");
  std::vector<Job> out;
  std::set<std::string> keys;
  for (std::size_t b = 0; b < bottlenecks_->size(); ++b) {
    for (Job j : prompt_jobs()) {
      j.bottleneck_index = b;
      j.key = file_safe((*bottlenecks_)[b].id) + "__" + j.prompt_key;
      if (!keys.insert(j.key).second) throw ValidationError("job key collision: " + j.key);
      out.push_back(std::move(j));
    }
  }
  std::sort(out.begin(), out.end(), [](const Job& a, const Job& b) { return a.key < b.key; });
  return out;
}

ContextBundle Pipeline::bundle_for(const Job& job) {
  return assemble(db(), cfg_.project_id, cfg_.task_id, cfg_.targets[job.target_index].llm_context,
                  job.mask);
}

PromptStrategy Pipeline::strategy(StrategyKind kind) {
  return cfg_.strategies_dir ? PromptStrategy::load(kind, *cfg_.strategies_dir)
                             : PromptStrategy::builtin(kind);
}

fs::path Pipeline::prompt_file(const Job& job) const {
  return cfg_.run_dir / "prompts" / (job.prompt_key + ".json");
}

Pipeline::PromptState Pipeline::prompt_for(const Job& job) {
  PromptState st;
  const fs::path file = prompt_file(job);
  if (fs::exists(file)) {
    json j = read_json(file);
    if (j.at("status") == "ok") {
      st.ok = true;
      st.prompt = j.at("prompt").get<GeneratedPrompt>();
    } else {
      st.outcome = "prompt_rejected";
      st.reason = j.at("reason").get<std::string>();
    }
    return st;
  }

  const ContextBundle bundle = bundle_for(job);
  if (job.kind != StrategyKind::mpco) {
    st.ok = true;
    st.prompt = static_prompt(strategy(job.kind), bundle);
    write_json(file, {{"status", "ok"}, {"prompt", st.prompt}});
    return st;
  }

  MetaPromptOptions opts;
  opts.template_text = strategy(StrategyKind::mpco).template_text;
  opts.commentary_prefixes = cfg_.commentary_prefixes;
  try {
    st.prompt = generate_prompt(client(), *cfg_.meta_prompter, bundle, opts);
    st.ok = true;
    write_json(file, {{"status", "ok"}, {"prompt", st.prompt}});
  } catch (const RejectedResponseError& e) {
    st.outcome = "prompt_rejected";
    st.reason = e.what();
    write_json(file, {{"status", "rejected"}, {"reason", st.reason}, {"raw", e.raw()}});
  } catch (const Error& e) {
    st.outcome = "llm_error";
    st.reason = e.what();
    warn(fmt::format("meta-prompting for {} failed: {}", job.strategy_label, e.what()));
  }
  return st;
}

std::map<std::string, Pipeline::PromptState> Pipeline::stage_prompts(bool generate) {
  std::vector<Job> todo = prompt_jobs();
  std::vector<PromptState> results(todo.size());
  parallel_for(todo.size(), cfg_.workers, [&](std::size_t i) {
    if (!generate && todo[i].kind == StrategyKind::mpco && !fs::exists(prompt_file(todo[i]))) {
      results[i].available = false;
      return;
    }
    results[i] = prompt_for(todo[i]);
  });
  std::map<std::string, PromptState> out;
  for (std::size_t i = 0; i < todo.size(); ++i) out[todo[i].prompt_key] = results[i];
  return out;
}

void Pipeline::prompts() {
  ensure_run_dir();
  stage_prompts(true);
}

std::vector<Pipeline::JobState> Pipeline::stage_optimize(bool generate) {
  const std::vector<Job> all = jobs();
  const std::vector<Bottleneck>& bs = bottlenecks();

  const std::map<std::string, PromptState> prompt_states = stage_prompts(generate);

  std::vector<JobState> states(all.size());
  parallel_for(all.size(), cfg_.workers, [&](std::size_t i) {
    const Job& job = all[i];
    JobState& st = states[i];
    st.job = job;
    const TargetConfig& target = cfg_.targets[job.target_index];
    const Bottleneck& b = bs[job.bottleneck_index];
    if (job.kind == StrategyKind::mpco) st.meta_prompter = cfg_.meta_prompter->model_id;

    const PromptState& ps = prompt_states.at(job.prompt_key);
    if (!ps.available) return;
    if (!ps.ok) {
      st.outcome = ps.outcome;
      st.reason = ps.reason;
      return;
    }

    const fs::path opt_file = cfg_.run_dir / "optimizations" / (job.key + ".json");
    if (fs::exists(opt_file)) {
      st.optimization = read_json(opt_file).get<OptimizationResult>();
    } else if (!generate) {
      return;
    } else {
      OptimizeOptions oo;
      oo.strategy_label = job.strategy_label;
      oo.commentary_prefixes = cfg_.commentary_prefixes;
      try {
        st.optimization = mpco::optimize(client(), target.model, ps.prompt, b, oo);
      } catch (const Error& e) {
        st.outcome = "llm_error";
        st.reason = e.what();
        warn(fmt::format("{}: {}", job.key, e.what()));
        return;
      }
      write_json(opt_file, *st.optimization);
    }

    if (st.optimization->status != OptStatus::ok) {
      st.outcome = "format_rejected";
      st.reason = st.optimization->reason;
      return;
    }

    const std::string vid = make_variant_id(b, job.strategy_label, target.model.model_id,
                                            st.meta_prompter, *st.optimization->extracted_code);
    const fs::path staging = cfg_.run_dir / "staging";
    try {
      if (fs::exists(staging / vid / "manifest.json")) {
        st.workspace = workspace_from_manifest(staging / vid);
      } else if (generate) {
        VariantOptions vo;
        vo.ignore = cfg_.staging_ignore;
        vo.exclude = {cfg_.run_dir};
        vo.labels = {{"key", job.key},
                     {"strategy", job.strategy_label},
                     {"target_llm", target.model.model_id},
                     {"meta_prompter", st.meta_prompter}};
        st.workspace = gen_variant(cfg_.repo_root, b, *st.optimization->extracted_code, staging, vid, vo);
      } else {
        return;
      }
      st.manifest = read_json(st.workspace->manifest_path());
    } catch (const Error& e) {
      st.outcome = "variant_error";
      st.reason = e.what();
      st.workspace.reset();
      warn(fmt::format("{}: {}", job.key, e.what()));
      return;
    }
    st.outcome = "pending";
  });
  return states;
}

EvaluationResult Pipeline::baseline() {
  const fs::path dir = cfg_.run_dir / "baseline";
  const fs::path file = dir / "evaluation.json";
  if (fs::exists(file)) return read_json(file).get<EvaluationResult>();
  log_("measuring baseline");
  EvaluationResult r = measure_baseline(cfg_.repo_root, cfg_.validation, dir, cfg_.staging_ignore,
                                        {cfg_.run_dir});
  if (r.status != EvalStatus::ok) {
    throw ValidationError(fmt::format("baseline {}: {} (logs in {})", to_string(r.status), r.reason,
                                      (dir / "logs").string()));
  }
  if (!(r.mean_runtime() > 0)) throw ValidationError("baseline mean runtime is not positive");
  write_json(file, r);
  return r;
}

void Pipeline::stage_validate(std::vector<JobState>& states, const EvaluationResult& base) {
  for (JobState& st : states) {  // sorted by key
    if (st.outcome != "pending") continue;
    const fs::path file = st.workspace->root / "evaluation.json";
    if (fs::exists(file)) {
      st.evaluation = read_json(file).get<EvaluationResult>();
    } else {
      log_("validating " + st.job.key);
      st.evaluation = mpco::validate(*st.workspace, cfg_.validation);
      write_json(file, *st.evaluation);
    }
    if (st.evaluation->status == EvalStatus::ok) {
      st.outcome = "ok";
      st.pi = percent_improvement(base.mean_runtime(), st.evaluation->mean_runtime());
    } else {
      st.outcome = to_string(st.evaluation->status);
      st.reason = st.evaluation->reason;
    }
  }
}

void Pipeline::optimize() {
  ensure_run_dir();
  profile();
  stage_optimize(true);
}

void Pipeline::validate() {
  ensure_run_dir();
  profile();
  EvaluationResult base = baseline();
  std::vector<JobState> states = stage_optimize(false);
  stage_validate(states, base);
}

RunLedger Pipeline::make_ledger(const std::vector<JobState>& states, const EvaluationResult& base) {
  RunLedger l;
  l.system = cfg_.system;
  l.baseline = base;
  l.context_fingerprint = db().fingerprint();
  l.profile_fingerprint = sha256_hex(read_file(cfg_.profile_path));
  l.config = cfg_.to_json();
  const std::vector<Bottleneck>& bs = bottlenecks();
  for (const JobState& st : states) {
    VariantRecord r;
    r.key = st.job.key;
    r.bottleneck_id = bs[st.job.bottleneck_index].id;
    r.strategy = st.job.strategy_label;
    r.target_llm = cfg_.targets[st.job.target_index].model.model_id;
    r.meta_prompter = st.meta_prompter;
    r.outcome = st.outcome;
    r.reason = st.reason;
    if (st.workspace) r.variant_id = st.workspace->variant_id;
    r.optimization = st.optimization;
    r.manifest = st.manifest;
    r.evaluation = st.evaluation;
    r.pi = st.pi;
    l.variants.push_back(std::move(r));
  }
  std::sort(l.variants.begin(), l.variants.end(),
            [](const VariantRecord& a, const VariantRecord& b) { return a.key < b.key; });
  return l;
}

RunLedger Pipeline::run() {
  ensure_run_dir();
  profile();
  EvaluationResult base = baseline();
  std::vector<JobState> states = stage_optimize(true);
  stage_validate(states, base);
  RunLedger ledger = make_ledger(states, base);
  write_json(cfg_.run_dir / "ledger.json", ledger_to_json(ledger));
  write_reports(cfg_.run_dir, build_tables({ledger}, Grouping::by_strategy));
  return ledger;
}

json rank_json(const json& groups, const RankOptions& options) {
  std::vector<ApproachSamples> in = groups.get<std::vector<ApproachSamples>>();
  return json(rank_approaches(in, options));
}

}  // namespace mpco
