#include "mpco/prompt.hpp"

#include <algorithm>
#include <fstream>

#include <fmt/format.h>

namespace mpco {

using nlohmann::json;

namespace {

bool is_ident(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

// Length of the placeholder `{name}` starting at text[i], or 0.
std::size_t placeholder_at(std::string_view text, std::size_t i) {
  if (text[i] != '{') return 0;
  std::size_t j = i + 1;
  while (j < text.size() && is_ident(text[j])) ++j;
  if (j == i + 1 || j >= text.size() || text[j] != '}') return 0;
  return j - i + 1;
}

bool is_blank(std::string_view line) { return trim(line).empty(); }

// Which mask flag removes a section with this header line, if any.
std::optional<bool AblationMask::*> section_for(std::string_view header) {
  const std::string h = trim(header);
  if (h == "## Project Context") return &AblationMask::project;
  if (h == "## Task Context") return &AblationMask::task;
  if (h == "## Target LLM Context") return &AblationMask::llm;
  return std::nullopt;
}

std::string drop_masked_sections(std::string_view tmpl, const AblationMask& mask) {
  if (mask.empty()) return std::string(tmpl);

  // Split keeping every line, so join("\n") restores the input exactly.
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  for (;;) {
    std::size_t nl = tmpl.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.push_back(tmpl.substr(start));
      break;
    }
    lines.push_back(tmpl.substr(start, nl - start));
    start = nl + 1;
  }

  struct Paragraph {
    std::size_t gap_begin;  // blank lines before the paragraph
    std::size_t begin;
    std::size_t end;
  };
  std::vector<Paragraph> paragraphs;
  std::size_t i = 0;
  while (i < lines.size()) {
    std::size_t gap = i;
    while (i < lines.size() && is_blank(lines[i])) ++i;
    if (i == lines.size()) break;
    std::size_t b = i;
    while (i < lines.size() && !is_blank(lines[i])) ++i;
    paragraphs.push_back({gap, b, i});
  }
  if (paragraphs.empty()) return std::string(tmpl);
  const std::size_t trailing = paragraphs.back().end;

  std::vector<std::string_view> out;
  bool first_kept = true;
  for (const Paragraph& p : paragraphs) {
    auto section = section_for(lines[p.begin]);
    if (section && mask.*(*section)) continue;
    // The first kept paragraph inherits the template's leading blank lines.
    std::size_t gap = first_kept ? paragraphs.front().gap_begin : p.gap_begin;
    std::size_t gap_end = first_kept ? paragraphs.front().begin : p.begin;
    for (std::size_t k = gap; k < gap_end; ++k) out.push_back(lines[k]);
    for (std::size_t k = p.begin; k < p.end; ++k) out.push_back(lines[k]);
    first_kept = false;
  }
  for (std::size_t k = trailing; k < lines.size(); ++k) out.push_back(lines[k]);
  return join(out, "\n");
}

void append_literal(std::string& out, std::string_view text, bool as_template) {
  if (!as_template) {
    out += text;
    return;
  }
  for (char c : text) {
    out += c;
    if (c == '{' || c == '}') out += c;
  }
}

std::string strategy_file(StrategyKind kind) { return to_string(kind) + ".tmpl"; }

}  // namespace

std::string to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::mpco: return "mpco";
    case StrategyKind::cot: return "cot";
    case StrategyKind::few_shot: return "few_shot";
    case StrategyKind::contextual: return "contextual";
    case StrategyKind::fixed: return "fixed";
  }
  return "?";
}

StrategyKind strategy_from_string(std::string_view s) {
  for (StrategyKind k : all_strategies()) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError("unknown strategy '" + std::string(s) + "'");
}

const std::vector<StrategyKind>& all_strategies() {
  static const std::vector<StrategyKind> kinds = {StrategyKind::mpco, StrategyKind::cot,
                                                  StrategyKind::few_shot, StrategyKind::contextual,
                                                  StrategyKind::fixed};
  return kinds;
}

const std::set<std::string>& context_placeholders() {
  static const std::set<std::string> names = {
      "project_name",     "project_description", "project_languages", "objective",
      "task_description", "task_considerations", "target_llm",        "llm_considerations",
      "code"};
  return names;
}

std::vector<std::string> template_placeholders(std::string_view tmpl) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    if (tmpl.compare(i, 2, "{{") == 0 || tmpl.compare(i, 2, "}}") == 0) {
      ++i;
      continue;
    }
    if (std::size_t len = placeholder_at(tmpl, i)) {
      std::string name(tmpl.substr(i + 1, len - 2));
      if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
      i += len - 1;
    }
  }
  return names;
}

std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& values,
                            const AblationMask& mask, const std::set<std::string>& deferred) {
  const std::string text = drop_masked_sections(tmpl, mask);
  const bool as_template = !deferred.empty();
  std::string out;
  out.reserve(text.size());
  std::size_t literal_start = 0;
  auto flush = [&](std::size_t upto) {
    append_literal(out, std::string_view(text).substr(literal_start, upto - literal_start),
                   as_template);
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text.compare(i, 2, "{{") == 0 || text.compare(i, 2, "}}") == 0) {
      flush(i);
      append_literal(out, text.substr(i, 1), as_template);
      literal_start = i + 2;
      ++i;
      continue;
    }
    std::size_t len = placeholder_at(text, i);
    if (len == 0) continue;
    flush(i);
    std::string name = text.substr(i + 1, len - 2);
    if (deferred.count(name)) {
      out += text.substr(i, len);
    } else {
      auto it = values.find(name);
      if (it == values.end()) throw RenderError("placeholder {" + name + "} has no value");
      append_literal(out, it->second, as_template);
    }
    literal_start = i + len;
    i += len - 1;
  }
  flush(text.size());
  return out;
}

std::map<std::string, std::string> placeholder_values(const ContextBundle& b) {
  std::map<std::string, std::string> v;
  v["objective"] = b.task.objective;
  v["target_llm"] = b.llm.target_llm;
  if (!b.ablation.project) {
    v["project_name"] = b.project.project_name;
    v["project_description"] = b.project.project_description;
    v["project_languages"] = join(b.project.project_languages, ", ");
  }
  if (!b.ablation.task) {
    v["task_description"] = b.task.task_description;
    v["task_considerations"] = join(b.task.task_considerations, "; ");
  }
  if (!b.ablation.llm) v["llm_considerations"] = join(b.llm.llm_considerations, "; ");
  return v;
}

std::string render_meta_prompt(const ContextBundle& bundle) {
  return render_meta_prompt(bundle, builtin_template(StrategyKind::mpco));
}

std::string render_meta_prompt(const ContextBundle& bundle, std::string_view tmpl) {
  return render_template(tmpl, placeholder_values(bundle), bundle.ablation);
}

std::string fence_code(std::string_view code, Language lang) {
  std::size_t longest = 0;
  std::size_t run = 0;
  for (char c : code) {
    run = c == '`' ? run + 1 : 0;
    longest = std::max(longest, run);
  }
  std::string fence(std::max<std::size_t>(3, longest + 1), '`');
  std::string out = fence;
  if (lang != Language::other) out += to_string(lang);
  out += '\n';
  out += code;
  if (!code.empty() && code.back() != '\n') out += '\n';
  out += fence;
  out += '\n';
  return out;
}

std::string render_examples(const std::vector<FewShotExample>& examples) {
  std::vector<std::string> parts;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    std::string block = fmt::format("Example {}\nOriginal code:\n", i + 1);
    block += fence_code(examples[i].original);
    block += "Optimized code:\n";
    block += fence_code(examples[i].optimized);
    block.pop_back();  // paragraphs are joined with blank lines below
    parts.push_back(std::move(block));
  }
  return join(parts, "\n\n");
}

void PromptStrategy::check() const {
  if (trim(template_text).empty()) throw ValidationError(to_string(kind) + ": template is empty");
  for (const std::string& name : template_placeholders(template_text)) {
    bool ok = context_placeholders().count(name) ||
              (name == "examples" && kind == StrategyKind::few_shot);
    if (!ok) throw ValidationError(to_string(kind) + ": unknown placeholder {" + name + "}");
  }
  auto names = template_placeholders(template_text);
  bool has_code = std::find(names.begin(), names.end(), "code") != names.end();
  if (kind == StrategyKind::mpco && has_code) {
    throw ValidationError("mpco: the meta-prompt template must not contain {code}");
  }
  if (kind != StrategyKind::mpco && !has_code) {
    throw ValidationError(to_string(kind) + ": template needs a {code} placeholder");
  }
}

PromptStrategy PromptStrategy::builtin(StrategyKind kind) {
  PromptStrategy s;
  s.kind = kind;
  s.template_text = std::string(builtin_template(kind));
  if (kind == StrategyKind::few_shot) s.examples = builtin_examples();
  return s;
}

PromptStrategy PromptStrategy::load(StrategyKind kind, const fs::path& dir) {
  PromptStrategy s = builtin(kind);
  fs::path tmpl = dir / strategy_file(kind);
  if (fs::exists(tmpl)) s.template_text = read_file(tmpl);
  if (kind == StrategyKind::few_shot) {
    fs::path ex = dir / "few_shot_examples.json";
    if (fs::exists(ex)) s.examples = parse_examples(read_file(ex));
  }
  s.check();
  return s;
}

std::vector<FewShotExample> parse_examples(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("few-shot examples: ") + e.what());
  }
  if (!doc.is_array()) throw ParseError("few-shot examples must be a JSON list");
  std::vector<FewShotExample> out;
  for (const json& e : doc) {
    if (!e.is_object() || !e.contains("original") || !e.contains("optimized")) {
      throw ParseError("few-shot example needs 'original' and 'optimized'");
    }
    out.push_back({e["original"].get<std::string>(), e["optimized"].get<std::string>()});
  }
  return out;
}

std::string render_strategy_template(const PromptStrategy& strategy, const ContextBundle& bundle) {
  if (strategy.kind == StrategyKind::mpco) {
    throw ValidationError("mpco prompts come from generate_prompt");
  }
  strategy.check();
  auto values = placeholder_values(bundle);
  if (strategy.kind == StrategyKind::few_shot) values["examples"] = render_examples(strategy.examples);
  return render_template(strategy.template_text, values, bundle.ablation, {"code"});
}

std::string render_strategy_prompt(const PromptStrategy& strategy, const ContextBundle& bundle,
                                   std::string_view code, Language lang) {
  return render_template(render_strategy_template(strategy, bundle),
                         {{"code", fence_code(code, lang)}});
}

std::string GeneratedPrompt::fingerprint() const {
  json j = json(*this);
  j.erase("timestamp");
  return sha256_hex(j.dump()).substr(0, 16);
}

void to_json(json& j, const GeneratedPrompt& p) {
  j = json{{"strategy", to_string(p.strategy)},
           {"target_llm", p.target_llm},
           {"text", p.text},
           {"meta_prompter", p.provenance.meta_prompter},
           {"timestamp", p.provenance.timestamp},
           {"bundle_fingerprint", p.provenance.bundle_fingerprint},
           {"temperature", nullptr},
           {"system_message", nullptr}};
  if (p.provenance.temperature) j["temperature"] = *p.provenance.temperature;
  if (p.provenance.system_message) j["system_message"] = *p.provenance.system_message;
}

void from_json(const json& j, GeneratedPrompt& p) {
  p.strategy = strategy_from_string(j.at("strategy").get<std::string>());
  p.target_llm = j.at("target_llm").get<std::string>();
  p.text = j.at("text").get<std::string>();
  p.provenance.meta_prompter = j.at("meta_prompter").get<std::string>();
  p.provenance.timestamp = j.value("timestamp", std::string());
  p.provenance.bundle_fingerprint = j.at("bundle_fingerprint").get<std::string>();
  p.provenance.temperature.reset();
  p.provenance.system_message.reset();
  if (j.contains("temperature") && !j["temperature"].is_null()) {
    p.provenance.temperature = j["temperature"].get<double>();
  }
  if (j.contains("system_message") && !j["system_message"].is_null()) {
    p.provenance.system_message = j["system_message"].get<std::string>();
  }
}

std::string compose_request(const GeneratedPrompt& prompt, std::string_view code, Language lang) {
  if (prompt.strategy == StrategyKind::mpco) {
    std::string out = prompt.text;
    while (!out.empty() && (out.back() == '\n' || out.back() == ' ')) out.pop_back();
    return out + "\n\n" + fence_code(code, lang);
  }
  return render_template(prompt.text, {{"code", fence_code(code, lang)}});
}

GeneratedPrompt static_prompt(const PromptStrategy& strategy, const ContextBundle& bundle) {
  GeneratedPrompt p;
  p.strategy = strategy.kind;
  p.target_llm = bundle.llm.target_llm;
  p.text = render_strategy_template(strategy, bundle);
  p.provenance.meta_prompter = "static";
  p.provenance.timestamp = utc_timestamp();
  p.provenance.bundle_fingerprint = bundle.fingerprint();
  return p;
}

const std::vector<std::string>& default_commentary_prefixes() {
  static const std::vector<std::string> prefixes = {
      "Sure",    "Certainly", "Of course",    "Here is", "Here's", "Here are",
      "Below is", "Note:",    "Explanation:", "I have ", "I've "};
  return prefixes;
}

ReplyVerdict validate_prompt_reply(std::string_view raw, const std::vector<std::string>& prefixes) {
  auto reject = [](std::string reason) { return ReplyVerdict{false, {}, std::move(reason)}; };
  auto commentary = [&](std::string_view line) -> std::optional<std::string> {
    std::string_view t = trim_left(line);
    for (const std::string& p : prefixes) {
      if (!p.empty() && starts_with(t, p)) return std::string(trim(line));
    }
    return std::nullopt;
  };

  const std::vector<std::string_view> lines = split_lines(raw);
  std::vector<std::size_t> fences;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (starts_with(trim_left(lines[i]), "```")) fences.push_back(i);
  }

  if (fences.empty()) {
    if (trim(raw).empty()) return reject("empty reply");
    for (std::string_view l : lines) {
      if (auto c = commentary(l)) return reject("commentary line: " + *c);
    }
    return {true, std::string(raw), {}};
  }
  if (fences.size() % 2 != 0) return reject("unterminated fenced block");
  if (fences.size() > 2) return reject("multiple blocks");

  for (std::size_t i = 0; i < lines.size(); ++i) {
    if ((i < fences[0] || i > fences[1]) && !is_blank(lines[i])) {
      return reject("text outside the fenced block");
    }
  }
  std::vector<std::string_view> inner(lines.begin() + fences[0] + 1, lines.begin() + fences[1]);
  std::string interior = join(inner, "\n");
  if (trim(interior).empty()) return reject("empty fenced block");
  for (std::string_view l : inner) {
    if (auto c = commentary(l)) return reject("commentary line: " + *c);
  }
  return {true, interior, {}};
}

GeneratedPrompt generate_prompt(ChatClient& client, const ModelConfig& meta_prompter,
                                const ContextBundle& bundle, const MetaPromptOptions& options) {
  const std::string request =
      options.template_text.empty()
          ? render_meta_prompt(bundle)
          : render_meta_prompt(bundle, options.template_text);
  ChatExchange exchange = client.complete(meta_prompter, request);
  ReplyVerdict verdict = validate_prompt_reply(exchange.response_text, options.commentary_prefixes);
  if (!verdict) throw RejectedResponseError(verdict.reason, exchange.response_text);

  GeneratedPrompt p;
  p.strategy = StrategyKind::mpco;
  p.target_llm = bundle.llm.target_llm;
  p.text = std::move(verdict.text);
  p.provenance.meta_prompter = meta_prompter.model_id;
  p.provenance.timestamp = utc_timestamp();
  p.provenance.bundle_fingerprint = bundle.fingerprint();
  p.provenance.temperature = meta_prompter.temperature;
  p.provenance.system_message = meta_prompter.system_message;
  return p;
}

}  // namespace mpco
