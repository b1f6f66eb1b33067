#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mpco/common.hpp"
#include "mpco/llm_client.hpp"
#include "mpco/profile.hpp"
#include "mpco/prompt.hpp"

namespace mpco {

enum class OptStatus { ok, format_rejected };

std::string to_string(OptStatus s);
OptStatus opt_status_from_string(std::string_view s);

struct OptimizationResult {
  std::string bottleneck_id;
  std::string target_llm;     // target model id
  std::string strategy;       // label, e.g. "mpco", "mpco_np", "cot"
  std::string meta_prompter;  // model id, or "static"
  std::string prompt_fingerprint;
  std::string raw_response;
  std::optional<std::string> extracted_code;
  OptStatus status = OptStatus::format_rejected;
  std::string reason;              // why it was rejected
  std::optional<std::string> tag;  // manual classification, never set here

  bool operator==(const OptimizationResult&) const = default;
};

void to_json(nlohmann::json& j, const OptimizationResult& r);
void from_json(const nlohmann::json& j, OptimizationResult& r);

// Code from a reply holding exactly one fenced block or bare code, with
// leading and trailing blank lines removed. Absent for anything else.
std::optional<std::string> extract_code(std::string_view raw, Language lang,
                                        const std::vector<std::string>& prefixes =
                                            default_commentary_prefixes());

struct OptimizeOptions {
  std::string strategy_label;  // default: the prompt's strategy name
  std::vector<std::string> commentary_prefixes = default_commentary_prefixes();
};

// Sends the prompt plus the bottleneck's code to `target` and classifies the
// reply. Transport errors propagate.
OptimizationResult optimize(ChatClient& client, const ModelConfig& target,
                            const GeneratedPrompt& prompt, const Bottleneck& b,
                            const OptimizeOptions& options = {});

struct VariantWorkspace {
  std::string variant_id;
  fs::path root;         // staging_dir / variant_id
  fs::path tree;         // root / "tree", the repository copy
  std::string edited_file;  // relative, generic separators
  SourceSpan original_span;
  std::string replacement;  // text actually written (after re-indentation)
  std::string before_sha256;
  std::string after_sha256;

  fs::path manifest_path() const { return root / "manifest.json"; }
  fs::path logs_dir() const { return root / "logs"; }
};

nlohmann::json manifest_json(const VariantWorkspace& ws, const Bottleneck& b,
                             const nlohmann::json& labels);
VariantWorkspace workspace_from_manifest(const fs::path& root);

const std::vector<std::string>& default_copy_ignores();

// Copies the tree under `from` to `to`, skipping entries whose name or
// relative path matches a glob, and skipping `exclude` (e.g. a run directory
// inside the repository).
void copy_tree(const fs::path& from, const fs::path& to, const std::vector<std::string>& ignore,
               const std::vector<fs::path>& exclude = {});

// Re-indents Python code so its first line carries `indent`.
std::string reindent_python(std::string_view code, std::string_view indent);

// Stable id over everything that determines a variant's content.
std::string make_variant_id(const Bottleneck& b, std::string_view strategy,
                            std::string_view model, std::string_view meta_prompter,
                            std::string_view code);

struct VariantOptions {
  std::vector<std::string> ignore = default_copy_ignores();
  std::vector<fs::path> exclude;
  nlohmann::json labels = nlohmann::json::object();  // merged into the manifest
};

// Materializes staging_dir/variant_id with exactly b.span replaced by `code`.
// Throws StaleBottleneckError if the file no longer holds b.snippet at
// b.span, IoError on copy failures. The manifest is written last, so a
// directory without one is incomplete.
VariantWorkspace gen_variant(const fs::path& repo_root, const Bottleneck& b, std::string_view code,
                             const fs::path& staging_dir, const std::string& variant_id,
                             const VariantOptions& options = {});

}  // namespace mpco
