#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpco/context.hpp"
#include "mpco/llm_client.hpp"
#include "mpco/profile.hpp"
#include "mpco/prompt.hpp"
#include "mpco/report.hpp"
#include "mpco/validator.hpp"

namespace mpco {

struct TargetConfig {
  std::string llm_context;  // id in the context db's llms collection
  ModelConfig model;
};

struct PipelineConfig {
  fs::path repo_root;
  std::string system;  // defaults to the repository directory name

  fs::path profile_path;
  std::string profile_format = "folded";
  RankMode rank_mode = RankMode::self;
  std::size_t k = 10;
  std::vector<std::string> profile_ignore;  // globs on frame file paths

  fs::path context_db;
  std::string project_id;
  std::string task_id;

  std::optional<ModelConfig> meta_prompter;  // required when mpco is selected
  std::vector<TargetConfig> targets;
  std::vector<StrategyKind> strategies;
  std::optional<fs::path> strategies_dir;
  std::vector<AblationMask> ablations;  // applied to mpco and contextual

  ValidationConfig validation;
  fs::path run_dir;
  std::vector<std::string> staging_ignore = default_copy_ignores();

  std::size_t global_cap = 4;
  std::size_t per_provider_cap = 2;
  std::size_t workers = 4;
  RetryPolicy retry;
  std::uint64_t seed = 0;
  std::vector<std::string> commentary_prefixes = default_commentary_prefixes();

  // Relative paths resolve against `base_dir`. Throws ValidationError.
  static PipelineConfig from_json(const nlohmann::json& j, const fs::path& base_dir);
  // Without run_dir, so two runs of one configuration compare equal.
  nlohmann::json to_json() const;
  // Referenced paths exist, >= 1 target and strategy, validation settings sane.
  void check() const;
};

// Applies "a.b.c=value" overrides. The value is parsed as JSON when it can be,
// and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

PipelineConfig load_config(const fs::path& path, const std::vector<std::string>& overrides = {});

// One unit of work: a bottleneck sent with one prompt variant to one target.
struct Job {
  std::string key;
  std::size_t bottleneck_index = 0;
  std::string strategy_label;  // "mpco", "mpco_np", "cot", ...
  StrategyKind kind = StrategyKind::mpco;
  AblationMask mask;
  std::size_t target_index = 0;
  std::string prompt_key;  // shared by every bottleneck: "<label>__<model>"
};

// Progress and warnings go through this; default is stderr.
using Logger = std::function<void(const std::string&)>;

struct ProfileOutcome {
  std::vector<Bottleneck> bottlenecks;
  std::vector<std::string> warnings;  // frames that could not become bottlenecks
};

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg, Logger log = {});

  const PipelineConfig& config() const { return cfg_; }

  // Stage 1. Writes bottlenecks.json.
  ProfileOutcome profile();
  // Stage 2 for every (strategy label, target) pair. Cached under prompts/.
  void prompts();
  // Stages 1 to 3: optimization requests and variant trees.
  void optimize();
  // Baseline plus every materialized variant, strictly one at a time.
  void validate();
  // Everything, then ledger.json and the reports. Throws on a baseline failure.
  RunLedger run();

  // Warnings raised so far (skipped frames, LLM and variant errors).
  std::size_t warning_count() const { return warnings_; }

  // Bottleneck-independent part of the job list (bottleneck_index 0).
  std::vector<Job> prompt_jobs() const;
  std::vector<Job> jobs() const;  // sorted by key; needs profile()

 private:
  struct PromptState;
  struct JobState;

  void ensure_run_dir();
  ChatClient& client();
  const ContextDb& db();
  const std::vector<Bottleneck>& bottlenecks();
  ContextBundle bundle_for(const Job& job);
  PromptStrategy strategy(StrategyKind kind);
  fs::path prompt_file(const Job& job) const;
  PromptState prompt_for(const Job& job);
  std::map<std::string, PromptState> stage_prompts(bool generate);
  EvaluationResult baseline();
  std::vector<JobState> stage_optimize(bool generate);
  void stage_validate(std::vector<JobState>& states, const EvaluationResult& base);
  RunLedger make_ledger(const std::vector<JobState>& states, const EvaluationResult& base);
  void warn(const std::string& msg);

  PipelineConfig cfg_;
  Logger log_;
  std::unique_ptr<ChatClient> client_;
  std::optional<ContextDb> db_;
  std::optional<std::vector<Bottleneck>> bottlenecks_;
  std::mutex mu_;
  std::size_t warnings_ = 0;
};

// Ranks groups of %PI samples: input [{"approach_name", "samples"}], output
// the ranked list as JSON.
nlohmann::json rank_json(const nlohmann::json& groups, const RankOptions& options = {});

}  // namespace mpco
