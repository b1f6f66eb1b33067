#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpco/common.hpp"
#include "mpco/optimizer.hpp"

namespace mpco {

enum class RuntimeSource { wall_clock, stdout_regex };
enum class EvalStatus { ok, build_fail, test_fail, bench_fail, timeout };

std::string to_string(RuntimeSource s);
RuntimeSource runtime_source_from_string(std::string_view s);
std::string to_string(EvalStatus s);
EvalStatus eval_status_from_string(std::string_view s);

struct ValidationConfig {
  std::optional<std::string> build_cmd;
  std::optional<std::string> test_cmd;
  std::string bench_cmd;
  int repetitions = 10;
  int warmup = 0;  // discarded bench runs before the timed ones
  std::chrono::milliseconds per_run_timeout{600000};
  RuntimeSource runtime_source = RuntimeSource::wall_clock;
  // Capture 1: the number. Optional capture 2: unit (ns, us, ms, s); seconds
  // when absent.
  std::optional<std::string> stdout_regex;
  std::string command_prefix;  // prepended to every phase, e.g. a container runner

  // Throws ValidationError.
  void check() const;
};

void to_json(nlohmann::json& j, const ValidationConfig& c);
void from_json(const nlohmann::json& j, ValidationConfig& c);

struct PhaseLog {
  std::string phase;  // build, test, warmup-<i>, bench-<i>
  int exit_code = 0;
  bool timed_out = false;
  double seconds = 0;
  std::string log_file;  // relative to the workspace root

  bool operator==(const PhaseLog&) const = default;
};

struct EvaluationResult {
  std::string variant_id;
  EvalStatus status = EvalStatus::ok;
  std::vector<double> runtimes;  // seconds
  std::vector<PhaseLog> logs;
  std::string reason;

  double mean_runtime() const;
};

void to_json(nlohmann::json& j, const EvaluationResult& r);
void from_json(const nlohmann::json& j, EvaluationResult& r);

struct ProcessResult {
  int exit_code = -1;  // 128 + signal when killed by a signal
  bool timed_out = false;
  double seconds = 0;  // spawn to exit
  std::string out;
  std::string err;
};

// Runs `command` through /bin/sh in its own process group. On timeout the
// whole group is killed.
ProcessResult run_command(const std::string& command, const fs::path& cwd,
                          std::chrono::milliseconds timeout);

// Seconds parsed from the first match of `pattern` in `text`.
std::optional<double> runtime_from_stdout(const std::string& text, const std::string& pattern);

// Build, test, then bench x repetitions inside `tree`, strictly sequentially.
// Phase logs go to `root/logs/<phase>.txt`.
EvaluationResult validate_tree(const fs::path& root, const fs::path& tree,
                               const std::string& variant_id, const ValidationConfig& cfg);

EvaluationResult validate(const VariantWorkspace& ws, const ValidationConfig& cfg);

// Same phases on an unmodified copy of the repository at `work_dir/tree`.
EvaluationResult measure_baseline(const fs::path& repo_root, const ValidationConfig& cfg,
                                  const fs::path& work_dir,
                                  const std::vector<std::string>& ignore = default_copy_ignores(),
                                  const std::vector<fs::path>& exclude = {});

}  // namespace mpco
