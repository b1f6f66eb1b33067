#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mpco/common.hpp"
#include "mpco/context.hpp"
#include "mpco/llm_client.hpp"
#include "mpco/source_scan.hpp"

namespace mpco {

enum class StrategyKind { mpco, cot, few_shot, contextual, fixed };

std::string to_string(StrategyKind k);
StrategyKind strategy_from_string(std::string_view s);  // throws ValidationError
const std::vector<StrategyKind>& all_strategies();

struct FewShotExample {
  std::string original;
  std::string optimized;

  bool operator==(const FewShotExample&) const = default;
};

struct PromptStrategy {
  StrategyKind kind = StrategyKind::mpco;
  std::string template_text;
  std::vector<FewShotExample> examples;  // few_shot only

  // Throws ValidationError if the template uses unknown placeholders.
  void check() const;

  static PromptStrategy builtin(StrategyKind kind);
  // Reads `<dir>/<kind>.tmpl` (and few_shot_examples.json for few_shot),
  // falling back to the built-in text for files that are absent.
  static PromptStrategy load(StrategyKind kind, const fs::path& dir);
};

std::string_view builtin_template(StrategyKind kind);
const std::vector<FewShotExample>& builtin_examples();
std::vector<FewShotExample> parse_examples(std::string_view json_text);

// Placeholders any template may use. `examples` is additionally allowed for
// the few_shot strategy.
const std::set<std::string>& context_placeholders();

// Names of the `{name}` placeholders in a template, in order of first use.
std::vector<std::string> template_placeholders(std::string_view tmpl);

// Fills placeholders. Paragraphs headed by a masked section header
// ("## Project Context", "## Task Context", "## Target LLM Context") are
// dropped together with their header. `{{` and `}}` produce literal braces.
// Placeholders listed in `deferred` are left in place and the result is
// itself a template (literal braces re-escaped). Throws RenderError for a
// placeholder with no value.
std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& values,
                            const AblationMask& mask = {},
                            const std::set<std::string>& deferred = {});

// Context placeholder values for a bundle. Fields exclusive to a masked
// section are omitted, so they cannot leak into the rendering.
std::map<std::string, std::string> placeholder_values(const ContextBundle& bundle);

std::string render_meta_prompt(const ContextBundle& bundle);
std::string render_meta_prompt(const ContextBundle& bundle, std::string_view tmpl);

// Code wrapped in a fence longer than any backtick run inside it.
std::string fence_code(std::string_view code, Language lang = Language::other);
std::string render_examples(const std::vector<FewShotExample>& examples);

// Baseline prompt with context filled in and `{code}` still pending.
std::string render_strategy_template(const PromptStrategy& strategy, const ContextBundle& bundle);
std::string render_strategy_prompt(const PromptStrategy& strategy, const ContextBundle& bundle,
                                   std::string_view code, Language lang = Language::other);

struct PromptProvenance {
  std::string meta_prompter = "static";
  std::string timestamp;
  std::string bundle_fingerprint;
  std::optional<double> temperature;  // absent: provider default
  std::optional<std::string> system_message;
};

struct GeneratedPrompt {
  StrategyKind strategy = StrategyKind::mpco;
  std::string target_llm;
  // mpco: the meta-prompter's reply. Other kinds: a template whose only
  // remaining placeholder is `{code}`.
  std::string text;
  PromptProvenance provenance;

  // Hash of everything except the timestamp.
  std::string fingerprint() const;
};

void to_json(nlohmann::json& j, const GeneratedPrompt& p);
void from_json(const nlohmann::json& j, GeneratedPrompt& p);

// Full request sent to a target model for one snippet. mpco: prompt, blank
// line, fenced code. Other kinds: `{code}` replaced by the fenced code.
std::string compose_request(const GeneratedPrompt& prompt, std::string_view code,
                            Language lang = Language::other);

GeneratedPrompt static_prompt(const PromptStrategy& strategy, const ContextBundle& bundle);

struct ReplyVerdict {
  bool accepted = false;
  std::string text;    // accepted text
  std::string reason;  // rejection reason

  explicit operator bool() const { return accepted; }
};

const std::vector<std::string>& default_commentary_prefixes();

// Accepts exactly one fenced block (returns its interior) or fence-free text;
// in both cases no line may start with a commentary prefix.
ReplyVerdict validate_prompt_reply(std::string_view raw,
                                   const std::vector<std::string>& prefixes =
                                       default_commentary_prefixes());

class RejectedResponseError : public Error {
 public:
  RejectedResponseError(const std::string& reason, std::string raw)
      : Error("rejected response: " + reason), raw_(std::move(raw)) {}
  const std::string& raw() const { return raw_; }

 private:
  std::string raw_;
};

struct MetaPromptOptions {
  std::string template_text;  // empty: built-in mpco template
  std::vector<std::string> commentary_prefixes = default_commentary_prefixes();
};

// One meta-prompting call. Throws RejectedResponseError for replies that fail
// validate_prompt_reply; transport errors propagate.
GeneratedPrompt generate_prompt(ChatClient& client, const ModelConfig& meta_prompter,
                                const ContextBundle& bundle, const MetaPromptOptions& options = {});

}  // namespace mpco
