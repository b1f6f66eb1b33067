#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpco/optimizer.hpp"
#include "mpco/stats.hpp"
#include "mpco/validator.hpp"

namespace mpco {

// Outcomes that keep a record out of the statistics, in report column order.
const std::vector<std::string>& exclusion_outcomes();

struct VariantRecord {
  std::string key;  // stable job key: bottleneck | strategy | target model
  std::string bottleneck_id;
  std::string strategy;
  std::string target_llm;
  std::string meta_prompter;
  // ok, or one of exclusion_outcomes()
  std::string outcome;
  std::string reason;
  std::optional<std::string> variant_id;
  std::optional<OptimizationResult> optimization;
  std::optional<nlohmann::json> manifest;
  std::optional<EvaluationResult> evaluation;
  std::optional<double> pi;  // set iff outcome == "ok"
};

struct RunLedger {
  std::string system;
  EvaluationResult baseline;
  std::vector<VariantRecord> variants;  // sorted by key
  std::string context_fingerprint;
  std::string profile_fingerprint;
  nlohmann::json config = nlohmann::json::object();  // without run-specific paths
};

// Deterministic: no timestamps, latencies or phase durations.
nlohmann::json ledger_to_json(const RunLedger& ledger);
RunLedger ledger_from_json(const nlohmann::json& j);

enum class Grouping { by_strategy, by_target_llm, by_meta_prompter };

std::string to_string(Grouping g);
Grouping grouping_from_string(std::string_view s);

struct TableRow {
  std::string group;
  std::size_t n = 0;  // accepted variants
  std::optional<double> mean;
  std::optional<double> sd;
  std::optional<int> rank;  // absent: no accepted variant ("n/a")

  bool operator==(const TableRow&) const = default;
};

struct BestVariant {
  std::string group;
  std::string variant_id;
  std::string bottleneck_id;
  std::string strategy;
  std::string target_llm;
  double pi = 0;

  bool operator==(const BestVariant&) const = default;
};

struct SystemTable {
  std::string system;
  std::optional<double> baseline_mean;  // seconds
  int repetitions = 0;
  int warmup = 0;
  std::vector<TableRow> rows;  // one per group, in TableModel::groups order
  std::map<std::string, std::map<std::string, int>> exclusions;  // group -> outcome -> count
  std::vector<BestVariant> best;  // best accepted variant per group

  bool operator==(const SystemTable&) const = default;
};

struct AverageRank {
  std::string group;
  std::optional<double> value;

  bool operator==(const AverageRank&) const = default;
};

struct TableModel {
  Grouping grouping = Grouping::by_strategy;
  std::vector<std::string> groups;  // sorted
  std::vector<SystemTable> systems;  // sorted by name
  std::vector<AverageRank> average_rank;

  bool operator==(const TableModel&) const = default;
};

// Ledgers of the same system are merged (e.g. one run per meta-prompter).
TableModel build_tables(const std::vector<RunLedger>& ledgers, Grouping grouping,
                        const RankOptions& options = {});

std::string render_markdown(const TableModel& model);
std::string render_csv(const TableModel& model);
std::string render_json(const TableModel& model);

struct CsvRow {
  std::string system;
  TableRow row;

  bool operator==(const CsvRow&) const = default;
};

std::vector<CsvRow> csv_rows(const TableModel& model);
std::vector<CsvRow> parse_csv(std::string_view text);
TableModel parse_json(std::string_view text);

// report.md, report.csv and report.json under `dir`.
void write_reports(const fs::path& dir, const TableModel& model);

}  // namespace mpco
