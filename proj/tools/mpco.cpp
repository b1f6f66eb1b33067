#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "mpco/pipeline.hpp"
#include "mpco/report.hpp"

namespace {

using nlohmann::json;

constexpr int kOk = 0;
constexpr int kFatal = 1;
constexpr int kWarnings = 2;

struct ConfigFlags {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::size_t> k;
  std::optional<std::string> run_dir;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "override a config field: path.to.field=value");
    cmd->add_option("--k", k, "same as --set profile.k=N");
    cmd->add_option("--run-dir", run_dir, "same as --set run_dir=PATH");
  }

  mpco::PipelineConfig load() const {
    std::vector<std::string> all = overrides;
    if (k) all.push_back("profile.k=" + std::to_string(*k));
    if (run_dir) {
      // Relative to the working directory, like any other command-line path.
      all.push_back("run_dir=" + json(mpco::fs::absolute(*run_dir).string()).dump());
    }
    return mpco::load_config(config, all);
  }
};

int finish(const mpco::Pipeline& p) {
  if (p.warning_count() > 0) {
    fmt::print(stderr, "finished with {} warning(s)\n", p.warning_count());
    return kWarnings;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-prompted code optimization harness"};
  app.require_subcommand(1);

  ConfigFlags profile_flags, prompts_flags, optimize_flags, validate_flags, run_flags;
  CLI::App* profile_cmd = app.add_subcommand("profile", "rank hot frames and extract bottlenecks");
  profile_flags.attach(profile_cmd);
  CLI::App* prompts_cmd = app.add_subcommand("prompts", "generate prompts for every strategy and target");
  prompts_flags.attach(prompts_cmd);
  CLI::App* optimize_cmd = app.add_subcommand("optimize", "request optimizations and build variant trees");
  optimize_flags.attach(optimize_cmd);
  CLI::App* validate_cmd = app.add_subcommand("validate", "measure the baseline and built variants");
  validate_flags.attach(validate_cmd);
  CLI::App* run_cmd = app.add_subcommand("run", "all stages, ledger and reports");
  run_flags.attach(run_cmd);

  std::string rank_input;
  double alpha = 0.05;
  double d_threshold = 0.2;
  CLI::App* rank_cmd = app.add_subcommand("rank", "rank %PI sample groups from a JSON file");
  rank_cmd->add_option("input", rank_input, "[{\"approach_name\": .., \"samples\": [..]}, ..]")
      ->required()
      ->check(CLI::ExistingFile);
  rank_cmd->add_option("--alpha", alpha, "significance level");
  rank_cmd->add_option("--d-threshold", d_threshold, "Cohen's d threshold");

  std::vector<std::string> report_dirs;
  std::string grouping = "by_strategy";
  std::string report_out;
  CLI::App* report_cmd = app.add_subcommand("report", "tables from one or more run directories");
  report_cmd->add_option("run_dirs", report_dirs, "run directories holding ledger.json")
      ->required()
      ->check(CLI::ExistingDirectory);
  report_cmd->add_option("--grouping", grouping, "by_strategy, by_target_llm or by_meta_prompter");
  report_cmd->add_option("--out", report_out, "output directory (default: the first run directory)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*profile_cmd) {
      mpco::Pipeline p(profile_flags.load());
      mpco::ProfileOutcome out = p.profile();
      fmt::print("{} bottleneck(s) written to {}\n", out.bottlenecks.size(),
                 (p.config().run_dir / "bottlenecks.json").string());
      return finish(p);
    }
    if (*prompts_cmd) {
      mpco::Pipeline p(prompts_flags.load());
      p.prompts();
      return finish(p);
    }
    if (*optimize_cmd) {
      mpco::Pipeline p(optimize_flags.load());
      p.optimize();
      return finish(p);
    }
    if (*validate_cmd) {
      mpco::Pipeline p(validate_flags.load());
      p.validate();
      return finish(p);
    }
    if (*run_cmd) {
      mpco::Pipeline p(run_flags.load());
      mpco::RunLedger ledger = p.run();
      std::size_t ok = 0;
      for (const mpco::VariantRecord& r : ledger.variants) ok += r.outcome == "ok";
      fmt::print("{} of {} variant(s) accepted; report in {}\n", ok, ledger.variants.size(),
                 (p.config().run_dir / "report.md").string());
      return finish(p);
    }
    if (*rank_cmd) {
      json in = json::parse(mpco::read_file(rank_input));
      std::cout << mpco::rank_json(in, {alpha, d_threshold}).dump(2) << "\n";
      return kOk;
    }
    if (*report_cmd) {
      std::vector<mpco::RunLedger> ledgers;
      for (const std::string& d : report_dirs) {
        ledgers.push_back(
            mpco::ledger_from_json(json::parse(mpco::read_file(mpco::fs::path(d) / "ledger.json"))));
      }
      mpco::fs::path out = report_out.empty() ? mpco::fs::path(report_dirs.front()) : mpco::fs::path(report_out);
      mpco::fs::create_directories(out);
      mpco::write_reports(out, mpco::build_tables(ledgers, mpco::grouping_from_string(grouping)));
      fmt::print("reports written to {}\n", out.string());
      return kOk;
    }
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kFatal;
  }
  return kFatal;
}
