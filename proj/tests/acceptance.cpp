// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "mpco/pipeline.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

extern char** environ;

namespace mpco {
namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond && pass) {
      pass = false;
      detail = what;
    }
  }
};

fs::path toy(const std::string& name) { return testing::fixture_dir() / "toy" / name; }

// Starts the CLI with output sent to `log`; returns the child pid.
pid_t spawn_cli(const std::vector<std::string>& args, const fs::path& log) {
  std::vector<std::string> full = {MPCO_CLI};
  full.insert(full.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (std::string& a : full) argv.push_back(a.data());
  argv.push_back(nullptr);
  posix_spawn_file_actions_t fa;
  posix_spawn_file_actions_init(&fa);
  posix_spawn_file_actions_addopen(&fa, 1, log.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  posix_spawn_file_actions_adddup2(&fa, 1, 2);
  pid_t pid = -1;
  int rc = posix_spawn(&pid, argv[0], &fa, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&fa);
  if (rc != 0) throw Error("cannot start " + full[0]);
  return pid;
}

int wait_exit(pid_t pid) {
  int status = 0;
  waitpid(pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
}

int run_cli(const std::vector<std::string>& args, const fs::path& log) {
  return wait_exit(spawn_cli(args, log));
}

std::string log_tail(const fs::path& log) {
  if (!fs::exists(log)) return "";
  std::string text = read_file(log);
  return text.size() > 400 ? text.substr(text.size() - 400) : text;
}

std::optional<double> mean_pi(const fs::path& run_dir, const std::string& group) {
  TableModel m = parse_json(read_file(run_dir / "report.json"));
  for (const SystemTable& s : m.systems) {
    for (const TableRow& r : s.rows) {
      if (r.group == group) return r.mean;
    }
  }
  return std::nullopt;
}

// --- 1 ---------------------------------------------------------------------

Outcome pi_correctness() {
  Outcome o;
  const double v = percent_improvement(143.4, 116.1);
  o.require(std::abs(v - 19.04) <= 0.01, fmt::format("pi(143.4, 116.1) = {}", v));
  for (double x : {1e-6, 0.5, 1.0, 143.4, 1e9}) {
    o.require(percent_improvement(x, x) == 0.0, fmt::format("pi({0}, {0}) != 0", x));
  }
  o.require(percent_improvement(100, 80) == 20.0, "pi(100, 80) != 20");
  o.require(percent_improvement(200, 50) == 75.0, "pi(200, 50) != 75");
  o.require(percent_improvement(100, 50) == 50.0, "pi(100, 50) != 50");
  o.require(percent_improvement(50, 100) == -100.0, "pi(50, 100) != -100");
  if (o.pass) o.detail = fmt::format("pi(143.4, 116.1) = {:.4f}", v);
  return o;
}

// --- 2 ---------------------------------------------------------------------

Outcome mann_whitney_oracle() {
  Outcome o;
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> size(2, 6);
  std::uniform_int_distribution<int> value(-1000, 1000);
  double worst = 0;
  const int pairs = 250;
  for (int t = 0; t < pairs && o.pass; ++t) {
    std::set<int> used;
    auto draw = [&](int n) {
      std::vector<double> v;
      while (static_cast<int>(v.size()) < n) {
        int x = value(rng);
        if (used.insert(x).second) v.push_back(x / 8.0);
      }
      return v;
    };
    std::vector<double> a = draw(size(rng));
    std::vector<double> b = draw(size(rng));
    MannWhitney ab = mann_whitney_u(a, b);
    MannWhitney ba = mann_whitney_u(b, a);
    const double want = oracle::enumerate_mwu_p(a, b);
    worst = std::max(worst, std::abs(ab.p - want));
    o.require(ab.exact, "exact path not taken");
    o.require(std::abs(ab.p - want) <= 1e-12, fmt::format("p {} vs enumeration {}", ab.p, want));
    o.require(ab.u + ba.u == static_cast<double>(a.size() * b.size()), "U_a + U_b != n_a n_b");
    o.require(ab.u == oracle::pairwise_u(a, b), "U differs from pairwise count");
  }
  if (o.pass) o.detail = fmt::format("{} pairs, max |p - p_enum| = {:.1e}", pairs, worst);
  return o;
}

// --- 3 ---------------------------------------------------------------------

Outcome cohens_d_properties() {
  Outcome o;
  o.require(cohens_d({1, 2, 3}, {3, 4, 5}) == -2.0, "d([1,2,3],[3,4,5]) != -2");
  std::mt19937_64 rng(77);
  std::normal_distribution<double> nd(0, 3);
  std::uniform_int_distribution<int> size(2, 12);
  std::uniform_real_distribution<double> shift(-50, 50);
  std::uniform_real_distribution<double> scale(0.01, 100);
  for (int t = 0; t < 100 && o.pass; ++t) {
    std::vector<double> a(size(rng)), b(size(rng));
    for (double& x : a) x = nd(rng) + 1;
    for (double& x : b) x = nd(rng);
    const double d = cohens_d(a, b);
    o.require(std::abs(d + cohens_d(b, a)) <= 1e-9, "antisymmetry");
    const double c = shift(rng);
    const double k = scale(rng);
    auto map = [](std::vector<double> v, auto f) {
      for (double& x : v) x = f(x);
      return v;
    };
    auto sh = [c](double x) { return x + c; };
    auto sc = [k](double x) { return x * k; };
    o.require(std::abs(cohens_d(map(a, sh), map(b, sh)) - d) <= 1e-9, "shift invariance");
    o.require(std::abs(cohens_d(map(a, sc), map(b, sc)) - d) <= 1e-9, "scale invariance");
  }
  if (o.pass) o.detail = "d = -2.0 exactly; 100 random pairs";
  return o;
}

// --- 4 ---------------------------------------------------------------------

ApproachSamples synthetic(const std::string& name, double mean, double sd) {
  std::vector<double> z = {-1.6, -1.1, -0.7, -0.4, -0.1, 0.15, 0.45, 0.8, 1.1, 1.4};
  Summary s = summarize(z);
  ApproachSamples g{name, {}};
  for (double v : z) g.samples.push_back(mean + sd * (v - s.mean) / s.sd);
  return g;
}

Outcome ranking_semantics() {
  Outcome o;
  std::vector<ApproachSamples> groups = {
      synthetic("contextual", 18.49, 1.17), synthetic("cot", 19.01, 1.53),
      synthetic("few_shot", 19.29, 2.37), synthetic("mpco", 19.06, 1.48)};
  auto r = rank_approaches(groups);
  std::vector<int> ranks;
  std::vector<std::string> names;
  for (const RankedApproach& x : r) {
    ranks.push_back(x.rank);
    names.push_back(x.approach_name);
  }
  o.require(names == std::vector<std::string>{"few_shot", "mpco", "cot", "contextual"}, "mean order");
  o.require(ranks == std::vector<int>{1, 1, 1, 2}, fmt::format("ranks {}", fmt::join(ranks, ",")));
  o.require(r.size() == 4 && !r[1].vs_previous->significant && !r[2].vs_previous->significant &&
                r[3].vs_previous->significant,
            "chain significance pattern is not (no, no, yes)");
  o.require(fmt::format("{:.2f} ({:.2f})", r[0].mean_pi, r[0].sd_pi) == "19.29 (2.37)", "top cell");
  auto again = rank_approaches({groups[3], groups[1], groups[0], groups[2]});
  for (std::size_t i = 0; i < again.size(); ++i) {
    o.require(again[i].rank == r[i].rank && again[i].approach_name == r[i].approach_name,
              "input order changed the result");
  }
  if (o.pass) o.detail = "ranks 1,1,1,2";
  return o;
}

// --- 5 ---------------------------------------------------------------------

Outcome top_k_oracle() {
  Outcome o;
  std::mt19937 rng(5);
  std::uniform_int_distribution<int> len(0, 40);
  std::uniform_int_distribution<int> w(0, 8);
  std::uniform_int_distribution<int> name(0, 12);
  std::uniform_int_distribution<int> file(0, 3);
  std::uniform_int_distribution<int> line(1, 4);
  std::uniform_int_distribution<std::size_t> kk(1, 45);
  for (int t = 0; t < 500 && o.pass; ++t) {
    std::vector<FrameStat> stats;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) {
      FrameStat s;
      s.frame_name = "f" + std::to_string(name(rng));
      int f = file(rng);
      if (f > 0) {
        s.file = "src/m" + std::to_string(f) + ".cpp";
        s.line = line(rng);
      }
      s.self_weight = w(rng);
      s.total_weight = s.self_weight + w(rng);
      stats.push_back(s);
    }
    double total = 0;
    for (const FrameStat& s : stats) total += s.self_weight;
    for (FrameStat& s : stats) s.share = total > 0 ? s.self_weight / total : 0;
    const std::size_t k = kk(rng);
    for (RankMode mode : {RankMode::self, RankMode::total}) {
      o.require(top_k(stats, k, mode) == oracle::brute_force_top_k(stats, k, mode),
                fmt::format("list {} differs from brute force", t));
    }
  }
  if (o.pass) o.detail = "500 lists, self and total modes";
  return o;
}

// --- shared end-to-end runs ------------------------------------------------

struct E2E {
  testing::TempDir tmp;
  fs::path sim_a = tmp.path() / "sim-a";
  fs::path sim_b = tmp.path() / "sim-b";
  std::optional<int> exit_a, exit_b;

  int a() {
    if (!exit_a) exit_a = run_cli({"run", "-c", toy("config_sim.json").string(), "--run-dir", sim_a.string()},
                                  tmp.path() / "sim-a.log");
    return *exit_a;
  }
  int b() {
    if (!exit_b) exit_b = run_cli({"run", "-c", toy("config_sim.json").string(), "--run-dir", sim_b.string()},
                                  tmp.path() / "sim-b.log");
    return *exit_b;
  }
};

E2E& e2e() {
  static E2E e;
  return e;
}

// --- 6 ---------------------------------------------------------------------

Outcome single_edit() {
  Outcome o;
  E2E& e = e2e();
  o.require(e.a() == 0, "e2e run failed: " + log_tail(e.tmp.path() / "sim-a.log"));
  if (!o.pass) return o;
  std::size_t checked = 0;
  for (const auto& entry : fs::directory_iterator(e.sim_a / "staging")) {
    json m = json::parse(read_file(entry.path() / "manifest.json"));
    auto problems = oracle::single_edit_violations(
        toy("repo"), entry.path() / "tree", m.at("edited_file").get<std::string>(),
        m.at("span").at("start_line").get<int>(), m.at("span").at("end_line").get<int>(),
        {"__pycache__"});
    o.require(problems.empty(), entry.path().filename().string() + ": " +
                                    (problems.empty() ? "" : problems.front()));
    o.require(read_file(entry.path() / "tree" / m.at("edited_file").get<std::string>()) !=
                  read_file(toy("repo") / m.at("edited_file").get<std::string>()),
              "variant identical to the source");
    ++checked;
  }
  o.require(checked > 0, "no variants produced");
  if (o.pass) o.detail = fmt::format("{} variant trees", checked);
  return o;
}

// --- 7 ---------------------------------------------------------------------

// Golden text with the paragraph under `header` and the blank line before it cut.
std::string without_section(std::string text, const std::string& header) {
  const std::size_t at = text.find("\n\n" + header + "\n");
  if (at == std::string::npos) return text;
  std::size_t end = text.find("\n\n", at + 2);
  if (end == std::string::npos) {
    text.erase(at + 1);
  } else {
    text.erase(at, end - at);
  }
  return text;
}

Outcome template_fidelity() {
  Outcome o;
  ContextDb db = ContextDb::load(testing::fixture_dir() / "contexts/minimal.json");
  const std::string golden = read_file(testing::source_dir() / "tests/golden/meta_prompt_full.txt");
  const std::string full = render_meta_prompt(assemble(db, "bitmap", "runtime", "gpt4o"));
  o.require(full == golden, "full rendering differs from the golden file");
  o.require(golden.rfind("You are an expert in code optimization", 0) == 0, "golden opening line");
  o.require(render_meta_prompt(assemble(db, "bitmap", "runtime", "gpt4o", {false, false, true})) ==
                read_file(testing::source_dir() / "tests/golden/meta_prompt_nl.txt"),
            "no-llm rendering differs from its golden file");
  const std::vector<std::string> headers = {"## Project Context", "## Task Context",
                                            "## Target LLM Context"};
  for (int m = 1; m < 8; ++m) {
    AblationMask mask{bool(m & 1), bool(m & 2), bool(m & 4)};
    std::string want = golden;
    if (mask.project) want = without_section(want, headers[0]);
    if (mask.task) want = without_section(want, headers[1]);
    if (mask.llm) want = without_section(want, headers[2]);
    const std::string got = render_meta_prompt(assemble(db, "bitmap", "runtime", "gpt4o", mask));
    o.require(got == want, "mask " + mask.suffix() + " does not remove exactly its sections");
  }
  if (o.pass) o.detail = "golden match; 7 masks";
  return o;
}

// --- 8 ---------------------------------------------------------------------

Outcome format_filtering() {
  Outcome o;
  const std::string code = read_file(toy("mock/faster.py"));
  Bottleneck b;
  b.id = "b01-x";
  b.language = Language::python;
  b.snippet = "def checksum(n):\n    return n // 2\n";
  b.span = {"toy.py", 6, 11};
  GeneratedPrompt prompt;
  prompt.strategy = StrategyKind::fixed;
  prompt.text = "Optimize:\n\n{code}\n";

  struct Case {
    std::string reply;
    bool accept;
  };
  const std::vector<std::pair<std::string, Case>> suite = {
      {"single block", {read_file(toy("mock/faster_reply.md")), true}},
      {"bare code", {code, true}},
      {"multi block", {read_file(toy("mock/multi_reply.md")), false}},
      {"prose-wrapped", {read_file(toy("mock/prose_reply.md")), false}},
      {"trailing prose", {"```python\n" + code + "```\nThis halves the loop.\n", false}},
      {"commentary inside", {"```python\nHere is the code:\n" + code + "```\n", false}},
  };
  for (const auto& [name, c] : suite) {
    ChatClient client;
    ModelConfig cfg;
    cfg.model_id = "scripted";
    cfg.provider = "mock";
    cfg.endpoint_url = "inline";
    client.set_provider(cfg, std::make_shared<MockProvider>(std::vector<MockRule>{
                                 {MockRule::Match::substring, "", std::nullopt, c.reply, 0}}));
    OptimizationResult r = mpco::optimize(client, cfg, prompt, b);
    o.require((r.status == OptStatus::ok) == c.accept,
              fmt::format("{}: got {} ({})", name, to_string(r.status), r.reason));
  }

  testing::TempDir tmp;
  const fs::path run = tmp.path() / "format";
  int rc = run_cli({"run", "-c", toy("config_format.json").string(), "--run-dir", run.string()},
                   tmp.path() / "format.log");
  o.require(rc == 0, "format run failed: " + log_tail(tmp.path() / "format.log"));
  if (!o.pass) return o;
  RunLedger l = ledger_from_json(json::parse(read_file(run / "ledger.json")));
  std::size_t accepted = 0, rejected = 0;
  std::vector<ApproachSamples> stats_input;
  for (const VariantRecord& r : l.variants) {
    const bool want_ok = r.target_llm == "mock-single";
    o.require((r.outcome == "ok") == want_ok, r.key + " -> " + r.outcome);
    o.require(r.outcome == "ok" || r.outcome == "format_rejected", r.key + " -> " + r.outcome);
    (r.outcome == "ok" ? accepted : rejected)++;
  }
  TableModel m = parse_json(read_file(run / "report.json"));
  std::size_t in_stats = 0;
  for (const TableRow& row : m.systems.at(0).rows) in_stats += row.n;
  o.require(in_stats == accepted, fmt::format("{} samples in statistics, {} accepted", in_stats, accepted));
  int counted = 0;
  for (const auto& [g, by_outcome] : m.systems.at(0).exclusions) {
    auto it = by_outcome.find("format_rejected");
    if (it != by_outcome.end()) counted += it->second;
  }
  o.require(counted == static_cast<int>(rejected), "exclusion counts do not match");
  if (o.pass) {
    o.detail = fmt::format("{} scripted replies; pipeline: {} accepted, {} rejected and excluded",
                           suite.size(), accepted, rejected);
  }
  return o;
}

// --- 9 ---------------------------------------------------------------------

Outcome end_to_end() {
  Outcome o;
  testing::TempDir tmp;
  const fs::path wall = tmp.path() / "wall";
  auto t0 = Clock::now();
  int rc = run_cli({"run", "-c", toy("config_wall.json").string(), "--run-dir", wall.string()},
                   tmp.path() / "wall.log");
  const double wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  o.require(rc == 0, "wall-clock run failed: " + log_tail(tmp.path() / "wall.log"));
  if (!o.pass) return o;
  o.require(wall_seconds < 300, fmt::format("wall-clock run took {:.0f} s", wall_seconds));
  PipelineConfig wcfg = load_config(toy("config_wall.json"));
  o.require(wcfg.validation.repetitions == 5, "wall config does not use 5 repetitions");
  std::optional<double> wall_pi = mean_pi(wall, "mpco");
  o.require(wall_pi && *wall_pi >= 35 && *wall_pi <= 60,
            fmt::format("wall-clock mean %PI {} outside [35, 60]", wall_pi.value_or(NAN)));

  E2E& e = e2e();
  o.require(e.a() == 0 && e.b() == 0, "stdout_regex runs failed");
  if (!o.pass) return o;
  std::optional<double> sim_pi = mean_pi(e.sim_a, "mpco");
  o.require(sim_pi && fmt::format("{:.2f}", *sim_pi) == "50.00",
            fmt::format("stdout_regex %PI {}", sim_pi.value_or(NAN)));
  o.require(read_file(e.sim_a / "report.md").find("| mpco | 50.00 (0.00) |") != std::string::npos,
            "report.md lacks the 50.00 cell");
  for (const char* f : {"report.md", "report.csv", "report.json", "ledger.json"}) {
    o.require(read_file(e.sim_a / f) == read_file(e.sim_b / f), std::string(f) + " differs between reruns");
  }
  if (o.pass) {
    o.detail = fmt::format("wall-clock %PI {:.2f} in {:.0f} s; stdout_regex %PI {:.2f}, reports identical",
                           *wall_pi, wall_seconds, *sim_pi);
  }
  return o;
}

// --- 10 --------------------------------------------------------------------

bool any_evaluation(const fs::path& run) {
  std::error_code ec;
  if (!fs::is_directory(run / "staging", ec)) return false;
  for (const auto& d : fs::directory_iterator(run / "staging", ec)) {
    if (fs::exists(d.path() / "evaluation.json")) return true;
  }
  return false;
}

Outcome resume_safety() {
  Outcome o;
  E2E& e = e2e();
  o.require(e.a() == 0, "reference run failed");
  if (!o.pass) return o;
  testing::TempDir tmp;
  const fs::path run = tmp.path() / "killed";
  const std::vector<std::string> args = {"run", "-c", toy("config_sim.json").string(), "--run-dir",
                                         run.string()};
  pid_t pid = spawn_cli(args, tmp.path() / "killed.log");
  auto deadline = Clock::now() + std::chrono::minutes(2);
  while (!any_evaluation(run) && Clock::now() < deadline) {
    int status = 0;
    if (waitpid(pid, &status, WNOHANG) == pid) {
      pid = -1;
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  bool killed_mid_run = false;
  if (pid > 0) {
    kill(pid, SIGKILL);
    wait_exit(pid);
    killed_mid_run = !fs::exists(run / "ledger.json");
  }
  o.require(killed_mid_run, "the run finished before it could be interrupted");
  int rc = run_cli(args, tmp.path() / "resumed.log");
  o.require(rc == 0, "resumed run failed: " + log_tail(tmp.path() / "resumed.log"));
  if (!o.pass) return o;
  o.require(read_file(run / "ledger.json") == read_file(e.sim_a / "ledger.json"),
            "resumed ledger differs from the uninterrupted one");
  if (o.pass) o.detail = "killed after the first evaluation; resumed ledger identical";
  return o;
}

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;
  std::function<Outcome()> fn;
};

}  // namespace
}  // namespace mpco

int main() {
  using namespace mpco;
  const std::vector<Criterion> criteria = {
      {1, "percent improvement", 1, pi_correctness},
      {2, "Mann-Whitney exact p vs enumeration", 30, mann_whitney_oracle},
      {3, "Cohen's d", 1, cohens_d_properties},
      {4, "chain ranking semantics", 1, ranking_semantics},
      {5, "top-k vs brute force", 5, top_k_oracle},
      {6, "single-edit invariant", 10, single_edit},
      {7, "meta-prompt template fidelity", 1, template_fidelity},
      {8, "format filtering", 5, format_filtering},
      {9, "end-to-end desk-scale run", 300, end_to_end},
      {10, "resume safety", 300, resume_safety},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    Outcome o;
    auto t0 = Clock::now();
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (o.pass && secs > c.budget_seconds) {
      o.pass = false;
      o.detail = fmt::format("took {:.2f} s, budget {:.0f} s", secs, c.budget_seconds);
    }
    failures += !o.pass;
    fmt::print("[{}] criterion {:>2}: {} ({:.2f} s) {}\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs,
               o.detail);
    std::fflush(stdout);
  }
  fmt::print("{} of {} criteria passed\n", criteria.size() - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
