#include "mpco/report.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>

namespace mpco {

using nlohmann::json;

const std::vector<std::string>& exclusion_outcomes() {
  static const std::vector<std::string> outcomes = {
      "prompt_rejected", "format_rejected", "build_fail", "test_fail",
      "bench_fail",      "timeout",         "llm_error",  "variant_error"};
  return outcomes;
}

namespace {

json opt_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_number_from(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

// Evaluation without wall-clock phase durations, which differ between runs.
json stable_evaluation(const EvaluationResult& e) {
  json j = e;
  for (json& l : j["logs"]) l.erase("seconds");
  return j;
}

EvaluationResult evaluation_from_stable(const json& j) {
  json copy = j;
  for (json& l : copy["logs"]) {
    if (!l.contains("seconds")) l["seconds"] = 0.0;
  }
  return copy.get<EvaluationResult>();
}

std::string cell(const std::optional<double>& v, int decimals) {
  if (!v) return "n/a";
  return fmt::format("{:.{}f}", *v, decimals);
}

std::string full(const std::optional<double>& v) { return v ? fmt::format("{}", *v) : "n/a"; }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::vector<std::string>> parse_csv_records(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> rec;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      rec.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        rec.push_back(std::move(field));
        records.push_back(std::move(rec));
      }
      rec.clear();
      field.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw ParseError("csv: unterminated quoted field");
  if (any || !field.empty()) {
    rec.push_back(std::move(field));
    records.push_back(std::move(rec));
  }
  return records;
}

std::string group_of(const VariantRecord& r, Grouping g) {
  switch (g) {
    case Grouping::by_strategy: return r.strategy;
    case Grouping::by_target_llm: return r.target_llm;
    case Grouping::by_meta_prompter: return r.meta_prompter;
  }
  return {};
}

std::string group_heading(Grouping g) {
  switch (g) {
    case Grouping::by_strategy: return "Strategy";
    case Grouping::by_target_llm: return "Target LLM";
    case Grouping::by_meta_prompter: return "Meta-prompter";
  }
  return "Group";
}

std::string md_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out;
}

}  // namespace

json ledger_to_json(const RunLedger& ledger) {
  json variants = json::array();
  for (const VariantRecord& r : ledger.variants) {
    json v = {{"key", r.key},
              {"bottleneck_id", r.bottleneck_id},
              {"strategy", r.strategy},
              {"target_llm", r.target_llm},
              {"meta_prompter", r.meta_prompter},
              {"outcome", r.outcome},
              {"reason", r.reason},
              {"variant_id", r.variant_id ? json(*r.variant_id) : json(nullptr)},
              {"optimization", r.optimization ? json(*r.optimization) : json(nullptr)},
              {"manifest", r.manifest ? *r.manifest : json(nullptr)},
              {"evaluation", r.evaluation ? stable_evaluation(*r.evaluation) : json(nullptr)},
              {"pi", opt_number(r.pi)}};
    variants.push_back(std::move(v));
  }
  return json{{"system", ledger.system},
              {"baseline", stable_evaluation(ledger.baseline)},
              {"variants", variants},
              {"context_fingerprint", ledger.context_fingerprint},
              {"profile_fingerprint", ledger.profile_fingerprint},
              {"config", ledger.config}};
}

RunLedger ledger_from_json(const json& j) {
  RunLedger l;
  l.system = j.at("system").get<std::string>();
  l.baseline = evaluation_from_stable(j.at("baseline"));
  l.context_fingerprint = j.value("context_fingerprint", std::string());
  l.profile_fingerprint = j.value("profile_fingerprint", std::string());
  l.config = j.value("config", json::object());
  for (const json& v : j.at("variants")) {
    VariantRecord r;
    r.key = v.at("key").get<std::string>();
    r.bottleneck_id = v.at("bottleneck_id").get<std::string>();
    r.strategy = v.at("strategy").get<std::string>();
    r.target_llm = v.at("target_llm").get<std::string>();
    r.meta_prompter = v.at("meta_prompter").get<std::string>();
    r.outcome = v.at("outcome").get<std::string>();
    r.reason = v.value("reason", std::string());
    if (!v.at("variant_id").is_null()) r.variant_id = v["variant_id"].get<std::string>();
    if (!v.at("optimization").is_null()) r.optimization = v["optimization"].get<OptimizationResult>();
    if (!v.at("manifest").is_null()) r.manifest = v["manifest"];
    if (!v.at("evaluation").is_null()) r.evaluation = evaluation_from_stable(v["evaluation"]);
    r.pi = opt_number_from(v, "pi");
    l.variants.push_back(std::move(r));
  }
  return l;
}

std::string to_string(Grouping g) {
  switch (g) {
    case Grouping::by_strategy: return "by_strategy";
    case Grouping::by_target_llm: return "by_target_llm";
    case Grouping::by_meta_prompter: return "by_meta_prompter";
  }
  return "?";
}

Grouping grouping_from_string(std::string_view s) {
  for (Grouping g : {Grouping::by_strategy, Grouping::by_target_llm, Grouping::by_meta_prompter}) {
    if (to_string(g) == s) return g;
  }
  throw ValidationError("unknown grouping '" + std::string(s) + "'");
}

TableModel build_tables(const std::vector<RunLedger>& ledgers, Grouping grouping,
                        const RankOptions& options) {
  TableModel model;
  model.grouping = grouping;

  std::map<std::string, std::vector<const RunLedger*>> by_system;
  std::set<std::string> groups;
  for (const RunLedger& l : ledgers) {
    by_system[l.system].push_back(&l);
    for (const VariantRecord& r : l.variants) groups.insert(group_of(r, grouping));
  }
  model.groups.assign(groups.begin(), groups.end());

  std::map<std::string, std::vector<int>> ranks_per_group;
  for (const auto& [system, runs] : by_system) {
    SystemTable table;
    table.system = system;
    const RunLedger& first = *runs.front();
    if (first.baseline.status == EvalStatus::ok && !first.baseline.runtimes.empty()) {
      table.baseline_mean = first.baseline.mean_runtime();
    }
    if (first.config.contains("validation")) {
      table.repetitions = first.config["validation"].value("repetitions", 0);
      table.warmup = first.config["validation"].value("warmup", 0);
    }

    std::map<std::string, std::vector<double>> samples;
    std::map<std::string, const VariantRecord*> best;
    for (const RunLedger* run : runs) {
      for (const VariantRecord& r : run->variants) {
        const std::string g = group_of(r, grouping);
        if (r.outcome == "ok" && r.pi) {
          samples[g].push_back(*r.pi);
          auto it = best.find(g);
          if (it == best.end() || *r.pi > *it->second->pi ||
              (*r.pi == *it->second->pi && r.key < it->second->key)) {
            best[g] = &r;
          }
        } else {
          ++table.exclusions[g][r.outcome];
        }
      }
    }

    std::vector<ApproachSamples> rankable;
    for (const auto& [g, s] : samples) rankable.push_back({g, s});
    std::map<std::string, RankedApproach> ranked;
    if (!rankable.empty()) {
      for (RankedApproach& r : rank_approaches(rankable, options)) ranked[r.approach_name] = r;
    }
    for (const std::string& g : model.groups) {
      TableRow row;
      row.group = g;
      auto it = ranked.find(g);
      if (it != ranked.end()) {
        row.n = it->second.n;
        row.mean = it->second.mean_pi;
        row.sd = it->second.sd_pi;
        row.rank = it->second.rank;
        ranks_per_group[g].push_back(it->second.rank);
      }
      table.rows.push_back(row);
    }
    for (const auto& [g, r] : best) {
      table.best.push_back({g, r->variant_id.value_or(""), r->bottleneck_id, r->strategy,
                            r->target_llm, *r->pi});
    }
    model.systems.push_back(std::move(table));
  }

  for (const std::string& g : model.groups) {
    AverageRank a{g, std::nullopt};
    auto it = ranks_per_group.find(g);
    if (it != ranks_per_group.end() && !it->second.empty()) {
      double sum = 0;
      for (int r : it->second) sum += r;
      a.value = sum / static_cast<double>(it->second.size());
    }
    model.average_rank.push_back(a);
  }
  return model;
}

std::string render_markdown(const TableModel& model) {
  std::string md = fmt::format("# %PI results ({})\n\n", to_string(model.grouping));

  std::string header = "| " + group_heading(model.grouping) + " |";
  std::string rule = "|---|";
  for (const SystemTable& s : model.systems) {
    header += fmt::format(" {} %PI Mean (SD) | r |", md_escape(s.system));
    rule += "---:|---:|";
  }
  header += " Avg. r |";
  rule += "---:|";
  md += header + "\n" + rule + "\n";
  for (std::size_t gi = 0; gi < model.groups.size(); ++gi) {
    std::string line = "| " + md_escape(model.groups[gi]) + " |";
    for (const SystemTable& s : model.systems) {
      const TableRow& row = s.rows[gi];
      if (row.rank) {
        line += fmt::format(" {} ({}) | {} |", cell(row.mean, 2), cell(row.sd, 2), *row.rank);
      } else {
        line += " n/a | - |";
      }
    }
    line += " " + cell(model.average_rank[gi].value, 2) + " |";
    md += line + "\n";
  }

  md += "\n## Exclusions\n\n| System | Group | accepted |";
  for (const std::string& o : exclusion_outcomes()) md += " " + o + " |";
  md += "\n|---|---|---:|";
  for (std::size_t i = 0; i < exclusion_outcomes().size(); ++i) md += "---:|";
  md += "\n";
  for (const SystemTable& s : model.systems) {
    for (std::size_t gi = 0; gi < model.groups.size(); ++gi) {
      const std::string& g = model.groups[gi];
      md += fmt::format("| {} | {} | {} |", md_escape(s.system), md_escape(g), s.rows[gi].n);
      auto ex = s.exclusions.find(g);
      for (const std::string& o : exclusion_outcomes()) {
        int count = 0;
        if (ex != s.exclusions.end()) {
          auto c = ex->second.find(o);
          if (c != ex->second.end()) count = c->second;
        }
        md += fmt::format(" {} |", count);
      }
      md += "\n";
    }
  }

  md += "\n## Best variants\n\n| System | Group | Variant | Bottleneck | Strategy | Target LLM | %PI |\n"
        "|---|---|---|---|---|---|---:|\n";
  for (const SystemTable& s : model.systems) {
    for (const BestVariant& b : s.best) {
      md += fmt::format("| {} | {} | {} | {} | {} | {} | {:.2f} |\n", md_escape(s.system),
                        md_escape(b.group), b.variant_id, b.bottleneck_id, md_escape(b.strategy),
                        md_escape(b.target_llm), b.pi);
    }
  }

  md += "\n## Baseline\n\n| System | Mean runtime (s) | Repetitions | Warm-up runs |\n"
        "|---|---:|---:|---:|\n";
  for (const SystemTable& s : model.systems) {
    md += fmt::format("| {} | {} | {} | {} |\n", md_escape(s.system), cell(s.baseline_mean, 4),
                      s.repetitions, s.warmup);
  }
  return md;
}

std::vector<CsvRow> csv_rows(const TableModel& model) {
  std::vector<CsvRow> rows;
  for (const SystemTable& s : model.systems) {
    for (const TableRow& r : s.rows) rows.push_back({s.system, r});
  }
  return rows;
}

std::string render_csv(const TableModel& model) {
  std::string out = "system,group,n,mean_pi,sd_pi,rank\n";
  for (const CsvRow& c : csv_rows(model)) {
    out += fmt::format("{},{},{},{},{},{}\n", csv_field(c.system), csv_field(c.row.group), c.row.n,
                       full(c.row.mean), full(c.row.sd),
                       c.row.rank ? std::to_string(*c.row.rank) : "n/a");
  }
  return out;
}

std::vector<CsvRow> parse_csv(std::string_view text) {
  auto records = parse_csv_records(text);
  if (records.empty()) throw ParseError("csv: missing header");
  const std::vector<std::string> header = {"system", "group", "n", "mean_pi", "sd_pi", "rank"};
  if (records.front() != header) throw ParseError("csv: unexpected header");
  auto number = [](const std::string& s) -> std::optional<double> {
    if (s == "n/a") return std::nullopt;
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw ParseError("csv: bad number '" + s + "'");
    return v;
  };
  std::vector<CsvRow> rows;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.size() != header.size()) throw ParseError(fmt::format("csv: row {} has {} fields", i, r.size()));
    CsvRow c;
    c.system = r[0];
    c.row.group = r[1];
    c.row.n = std::stoul(r[2]);
    c.row.mean = number(r[3]);
    c.row.sd = number(r[4]);
    if (r[5] != "n/a") c.row.rank = std::stoi(r[5]);
    rows.push_back(std::move(c));
  }
  return rows;
}

namespace {

json model_to_json(const TableModel& m) {
  json systems = json::array();
  for (const SystemTable& s : m.systems) {
    json rows = json::array();
    for (const TableRow& r : s.rows) {
      rows.push_back({{"group", r.group},
                      {"n", r.n},
                      {"mean_pi", opt_number(r.mean)},
                      {"sd_pi", opt_number(r.sd)},
                      {"rank", r.rank ? json(*r.rank) : json(nullptr)}});
    }
    json best = json::array();
    for (const BestVariant& b : s.best) {
      best.push_back({{"group", b.group},
                      {"variant_id", b.variant_id},
                      {"bottleneck_id", b.bottleneck_id},
                      {"strategy", b.strategy},
                      {"target_llm", b.target_llm},
                      {"pi", b.pi}});
    }
    systems.push_back({{"system", s.system},
                       {"baseline_mean", opt_number(s.baseline_mean)},
                       {"repetitions", s.repetitions},
                       {"warmup", s.warmup},
                       {"rows", rows},
                       {"exclusions", s.exclusions},
                       {"best", best}});
  }
  json avg = json::array();
  for (const AverageRank& a : m.average_rank) {
    avg.push_back({{"group", a.group}, {"value", opt_number(a.value)}});
  }
  return json{{"grouping", to_string(m.grouping)},
              {"groups", m.groups},
              {"systems", systems},
              {"average_rank", avg}};
}

}  // namespace

std::string render_json(const TableModel& model) { return model_to_json(model).dump(2) + "\n"; }

TableModel parse_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("report json: ") + e.what());
  }
  TableModel m;
  m.grouping = grouping_from_string(j.at("grouping").get<std::string>());
  m.groups = j.at("groups").get<std::vector<std::string>>();
  for (const json& s : j.at("systems")) {
    SystemTable t;
    t.system = s.at("system").get<std::string>();
    t.baseline_mean = opt_number_from(s, "baseline_mean");
    t.repetitions = s.at("repetitions").get<int>();
    t.warmup = s.at("warmup").get<int>();
    for (const json& r : s.at("rows")) {
      TableRow row;
      row.group = r.at("group").get<std::string>();
      row.n = r.at("n").get<std::size_t>();
      row.mean = opt_number_from(r, "mean_pi");
      row.sd = opt_number_from(r, "sd_pi");
      if (!r.at("rank").is_null()) row.rank = r["rank"].get<int>();
      t.rows.push_back(row);
    }
    t.exclusions = s.at("exclusions").get<std::map<std::string, std::map<std::string, int>>>();
    for (const json& b : s.at("best")) {
      t.best.push_back({b.at("group").get<std::string>(), b.at("variant_id").get<std::string>(),
                        b.at("bottleneck_id").get<std::string>(),
                        b.at("strategy").get<std::string>(), b.at("target_llm").get<std::string>(),
                        b.at("pi").get<double>()});
    }
    m.systems.push_back(std::move(t));
  }
  for (const json& a : j.at("average_rank")) {
    m.average_rank.push_back({a.at("group").get<std::string>(), opt_number_from(a, "value")});
  }
  return m;
}

void write_reports(const fs::path& dir, const TableModel& model) {
  write_file_atomic(dir / "report.md", render_markdown(model));
  write_file_atomic(dir / "report.csv", render_csv(model));
  write_file_atomic(dir / "report.json", render_json(model));
}

}  // namespace mpco
