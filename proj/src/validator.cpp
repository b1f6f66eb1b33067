#include "mpco/validator.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/syscall.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <numeric>
#include <regex>
#include <thread>

#include <fmt/format.h>

namespace mpco {

using nlohmann::json;

std::string to_string(RuntimeSource s) {
  return s == RuntimeSource::wall_clock ? "wall_clock" : "stdout_regex";
}

RuntimeSource runtime_source_from_string(std::string_view s) {
  if (s == "wall_clock") return RuntimeSource::wall_clock;
  if (s == "stdout_regex") return RuntimeSource::stdout_regex;
  throw ValidationError("runtime_source must be wall_clock or stdout_regex");
}

std::string to_string(EvalStatus s) {
  switch (s) {
    case EvalStatus::ok: return "ok";
    case EvalStatus::build_fail: return "build_fail";
    case EvalStatus::test_fail: return "test_fail";
    case EvalStatus::bench_fail: return "bench_fail";
    case EvalStatus::timeout: return "timeout";
  }
  return "?";
}

EvalStatus eval_status_from_string(std::string_view s) {
  for (EvalStatus v : {EvalStatus::ok, EvalStatus::build_fail, EvalStatus::test_fail,
                       EvalStatus::bench_fail, EvalStatus::timeout}) {
    if (to_string(v) == s) return v;
  }
  throw ParseError("unknown evaluation status '" + std::string(s) + "'");
}

void ValidationConfig::check() const {
  if (trim(bench_cmd).empty()) throw ValidationError("validation.bench_cmd is required");
  if (repetitions < 1) throw ValidationError("validation.repetitions must be >= 1");
  if (warmup < 0) throw ValidationError("validation.warmup must be >= 0");
  if (per_run_timeout.count() <= 0) {
    throw ValidationError("validation.per_run_timeout_ms must be positive");
  }
  if (runtime_source == RuntimeSource::stdout_regex) {
    if (!stdout_regex || stdout_regex->empty()) {
      throw ValidationError("validation.stdout_regex is required for runtime_source stdout_regex");
    }
    try {
      std::regex re(*stdout_regex);
      if (re.mark_count() < 1) {
        throw ValidationError("validation.stdout_regex needs a capture group for the number");
      }
    } catch (const std::regex_error& e) {
      throw ValidationError(std::string("validation.stdout_regex: ") + e.what());
    }
  }
}

void to_json(json& j, const ValidationConfig& c) {
  j = json{{"build_cmd", c.build_cmd ? json(*c.build_cmd) : json(nullptr)},
           {"test_cmd", c.test_cmd ? json(*c.test_cmd) : json(nullptr)},
           {"bench_cmd", c.bench_cmd},
           {"repetitions", c.repetitions},
           {"warmup", c.warmup},
           {"per_run_timeout_ms", c.per_run_timeout.count()},
           {"runtime_source", to_string(c.runtime_source)},
           {"stdout_regex", c.stdout_regex ? json(*c.stdout_regex) : json(nullptr)},
           {"command_prefix", c.command_prefix}};
}

void from_json(const json& j, ValidationConfig& c) {
  c = ValidationConfig{};
  auto opt_string = [&](const char* key) -> std::optional<std::string> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<std::string>();
  };
  c.build_cmd = opt_string("build_cmd");
  c.test_cmd = opt_string("test_cmd");
  c.bench_cmd = j.value("bench_cmd", std::string());
  c.repetitions = j.value("repetitions", c.repetitions);
  c.warmup = j.value("warmup", c.warmup);
  c.per_run_timeout = std::chrono::milliseconds(
      j.value("per_run_timeout_ms", static_cast<std::int64_t>(c.per_run_timeout.count())));
  c.runtime_source = runtime_source_from_string(j.value("runtime_source", std::string("wall_clock")));
  c.stdout_regex = opt_string("stdout_regex");
  c.command_prefix = j.value("command_prefix", std::string());
}

double EvaluationResult::mean_runtime() const {
  if (runtimes.empty()) throw DomainError("no runtimes for " + variant_id);
  return std::accumulate(runtimes.begin(), runtimes.end(), 0.0) /
         static_cast<double>(runtimes.size());
}

void to_json(json& j, const EvaluationResult& r) {
  json logs = json::array();
  for (const PhaseLog& l : r.logs) {
    logs.push_back({{"phase", l.phase},
                    {"exit_code", l.exit_code},
                    {"timed_out", l.timed_out},
                    {"seconds", l.seconds},
                    {"log_file", l.log_file}});
  }
  j = json{{"variant_id", r.variant_id},
           {"status", to_string(r.status)},
           {"runtimes", r.runtimes},
           {"logs", logs},
           {"reason", r.reason}};
}

void from_json(const json& j, EvaluationResult& r) {
  r.variant_id = j.at("variant_id").get<std::string>();
  r.status = eval_status_from_string(j.at("status").get<std::string>());
  r.runtimes = j.at("runtimes").get<std::vector<double>>();
  r.reason = j.value("reason", std::string());
  r.logs.clear();
  for (const json& l : j.value("logs", json::array())) {
    r.logs.push_back({l.at("phase").get<std::string>(), l.at("exit_code").get<int>(),
                      l.at("timed_out").get<bool>(), l.at("seconds").get<double>(),
                      l.at("log_file").get<std::string>()});
  }
}

namespace {

int open_capture(const fs::path& p) {
  int fd = ::open(p.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("cannot create " + p.string() + ": " + std::strerror(errno));
  return fd;
}

// Waits for `pid` up to `deadline`. Returns false on timeout.
bool wait_until(pid_t pid, int& status, std::chrono::steady_clock::time_point deadline) {
#ifdef SYS_pidfd_open
  int pidfd = static_cast<int>(::syscall(SYS_pidfd_open, pid, 0));
  if (pidfd >= 0) {
    for (;;) {
      auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) break;
      pollfd pfd{pidfd, POLLIN, 0};
      int rc = ::poll(&pfd, 1, static_cast<int>(std::min<std::int64_t>(left.count(), 1 << 30)));
      if (rc > 0) {
        ::close(pidfd);
        ::waitpid(pid, &status, 0);
        return true;
      }
      if (rc < 0 && errno != EINTR) break;
    }
    ::close(pidfd);
    return ::waitpid(pid, &status, WNOHANG) == pid;
  }
#endif
  for (;;) {
    pid_t rc = ::waitpid(pid, &status, WNOHANG);
    if (rc == pid) return true;
    if (std::chrono::steady_clock::now() >= deadline) return false;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
}

}  // namespace

ProcessResult run_command(const std::string& command, const fs::path& cwd,
                          std::chrono::milliseconds timeout) {
  // Output goes to files rather than pipes so a chatty child can never block.
  char tmpl[] = "/tmp/mpco-run-XXXXXX";
  if (::mkdtemp(tmpl) == nullptr) throw IoError(std::string("mkdtemp: ") + std::strerror(errno));
  const fs::path scratch = tmpl;
  const fs::path out_path = scratch / "stdout";
  const fs::path err_path = scratch / "stderr";
  int out_fd = open_capture(out_path);
  int err_fd = open_capture(err_path);
  int null_fd = ::open("/dev/null", O_RDONLY | O_CLOEXEC);
  const std::string dir = cwd.string();

  const auto start = std::chrono::steady_clock::now();
  pid_t pid = ::fork();
  if (pid < 0) {
    ::close(out_fd);
    ::close(err_fd);
    ::close(null_fd);
    fs::remove_all(scratch);
    throw IoError(std::string("fork: ") + std::strerror(errno));
  }
  if (pid == 0) {
    ::setpgid(0, 0);
    ::dup2(null_fd, 0);
    ::dup2(out_fd, 1);
    ::dup2(err_fd, 2);
    if (::chdir(dir.c_str()) != 0) _exit(126);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  ::setpgid(pid, pid);
  ::close(out_fd);
  ::close(err_fd);
  ::close(null_fd);

  ProcessResult r;
  int status = 0;
  if (!wait_until(pid, status, start + timeout)) {
    ::kill(-pid, SIGKILL);
    ::kill(pid, SIGKILL);
    ::waitpid(pid, &status, 0);
    r.timed_out = true;
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  // Stray grandchildren must not outlive the phase.
  ::kill(-pid, SIGKILL);
  if (WIFEXITED(status)) {
    r.exit_code = WEXITSTATUS(status);
  } else if (WIFSIGNALED(status)) {
    r.exit_code = 128 + WTERMSIG(status);
  }
  r.out = read_file(out_path);
  r.err = read_file(err_path);
  std::error_code ec;
  fs::remove_all(scratch, ec);
  return r;
}

std::optional<double> runtime_from_stdout(const std::string& text, const std::string& pattern) {
  std::regex re(pattern);
  std::smatch m;
  if (!std::regex_search(text, m, re) || m.size() < 2 || !m[1].matched) return std::nullopt;
  double value = 0;
  try {
    std::size_t used = 0;
    value = std::stod(m[1].str(), &used);
    if (used != m[1].length()) return std::nullopt;
  } catch (const std::exception&) {
    return std::nullopt;
  }
  std::string unit = m.size() > 2 && m[2].matched ? trim(m[2].str()) : "s";
  double scale = 0;
  if (unit == "s" || unit == "sec" || unit == "secs" || unit == "seconds" || unit.empty()) {
    scale = 1;
  } else if (unit == "ms") {
    scale = 1e-3;
  } else if (unit == "us" || unit == "\xC2\xB5s") {
    scale = 1e-6;
  } else if (unit == "ns") {
    scale = 1e-9;
  } else {
    return std::nullopt;
  }
  return value * scale;
}

namespace {

struct PhaseRun {
  ProcessResult proc;
  PhaseLog log;
};

PhaseRun run_phase(const fs::path& root, const fs::path& tree, const std::string& phase,
                   const std::string& cmd, const ValidationConfig& cfg) {
  const std::string full = cfg.command_prefix.empty() ? cmd : cfg.command_prefix + " " + cmd;
  PhaseRun run;
  run.proc = run_command(full, tree, cfg.per_run_timeout);
  run.log.phase = phase;
  run.log.exit_code = run.proc.exit_code;
  run.log.timed_out = run.proc.timed_out;
  run.log.seconds = run.proc.seconds;
  run.log.log_file = "logs/" + phase + ".txt";
  std::string text = fmt::format("$ {}\n== stdout ==\n{}", full, run.proc.out);
  if (!run.proc.out.empty() && run.proc.out.back() != '\n') text += '\n';
  text += "== stderr ==\n" + run.proc.err;
  if (!run.proc.err.empty() && run.proc.err.back() != '\n') text += '\n';
  text += fmt::format("== exit {}{} after {:.3f} s ==\n", run.proc.exit_code,
                      run.proc.timed_out ? " (timeout)" : "", run.proc.seconds);
  write_file_atomic(root / run.log.log_file, text);
  return run;
}

}  // namespace

EvaluationResult validate_tree(const fs::path& root, const fs::path& tree,
                               const std::string& variant_id, const ValidationConfig& cfg) {
  cfg.check();
  EvaluationResult r;
  r.variant_id = variant_id;
  fs::create_directories(root / "logs");

  auto failed = [&](const PhaseRun& run, EvalStatus status, const std::string& phase) {
    if (run.proc.timed_out) {
      r.status = EvalStatus::timeout;
      r.reason = fmt::format("{} exceeded {} ms", phase, cfg.per_run_timeout.count());
      return true;
    }
    if (run.proc.exit_code != 0) {
      r.status = status;
      r.reason = fmt::format("{} exited with {}", phase, run.proc.exit_code);
      return true;
    }
    return false;
  };

  if (cfg.build_cmd) {
    PhaseRun run = run_phase(root, tree, "build", *cfg.build_cmd, cfg);
    r.logs.push_back(run.log);
    if (failed(run, EvalStatus::build_fail, "build")) return r;
  }
  if (cfg.test_cmd) {
    PhaseRun run = run_phase(root, tree, "test", *cfg.test_cmd, cfg);
    r.logs.push_back(run.log);
    if (failed(run, EvalStatus::test_fail, "test")) return r;
  }
  for (int i = 1; i <= cfg.warmup; ++i) {
    PhaseRun run = run_phase(root, tree, fmt::format("warmup-{}", i), cfg.bench_cmd, cfg);
    r.logs.push_back(run.log);
    if (failed(run, EvalStatus::bench_fail, run.log.phase)) return r;
  }
  for (int i = 1; i <= cfg.repetitions; ++i) {
    PhaseRun run = run_phase(root, tree, fmt::format("bench-{}", i), cfg.bench_cmd, cfg);
    r.logs.push_back(run.log);
    if (failed(run, EvalStatus::bench_fail, run.log.phase)) {
      r.runtimes.clear();
      return r;
    }
    double t = run.proc.seconds;
    if (cfg.runtime_source == RuntimeSource::stdout_regex) {
      std::optional<double> parsed = runtime_from_stdout(run.proc.out, *cfg.stdout_regex);
      if (!parsed) {
        r.status = EvalStatus::bench_fail;
        r.reason = run.log.phase + ": no runtime matching the stdout pattern";
        r.runtimes.clear();
        return r;
      }
      t = *parsed;
    }
    if (!std::isfinite(t) || t <= 0) {
      r.status = EvalStatus::bench_fail;
      r.reason = fmt::format("{}: runtime {} is not positive", run.log.phase, t);
      r.runtimes.clear();
      return r;
    }
    r.runtimes.push_back(t);
  }
  r.status = EvalStatus::ok;
  return r;
}

EvaluationResult validate(const VariantWorkspace& ws, const ValidationConfig& cfg) {
  return validate_tree(ws.root, ws.tree, ws.variant_id, cfg);
}

EvaluationResult measure_baseline(const fs::path& repo_root, const ValidationConfig& cfg,
                                  const fs::path& work_dir, const std::vector<std::string>& ignore,
                                  const std::vector<fs::path>& exclude) {
  cfg.check();
  std::error_code ec;
  fs::remove_all(work_dir / "tree", ec);
  std::vector<fs::path> skip = exclude;
  skip.push_back(work_dir);
  copy_tree(repo_root, work_dir / "tree", ignore, skip);
  return validate_tree(work_dir, work_dir / "tree", "baseline", cfg);
}

}  // namespace mpco
