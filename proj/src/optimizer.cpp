#include "mpco/optimizer.hpp"

#include <fnmatch.h>

#include <algorithm>

#include <fmt/format.h>

namespace mpco {

using nlohmann::json;

namespace {

std::string leading_ws(std::string_view line) {
  std::size_t i = 0;
  while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
  return std::string(line.substr(0, i));
}

bool glob_hit(const std::vector<std::string>& globs, const std::string& name,
              const std::string& rel) {
  for (const std::string& g : globs) {
    if (fnmatch(g.c_str(), name.c_str(), 0) == 0) return true;
    if (fnmatch(g.c_str(), rel.c_str(), 0) == 0) return true;
  }
  return false;
}

fs::path normalized(const fs::path& p) {
  std::error_code ec;
  fs::path c = fs::weakly_canonical(p, ec);
  return ec ? p.lexically_normal() : c;
}

}  // namespace

std::string to_string(OptStatus s) { return s == OptStatus::ok ? "ok" : "format_rejected"; }

OptStatus opt_status_from_string(std::string_view s) {
  if (s == "ok") return OptStatus::ok;
  if (s == "format_rejected") return OptStatus::format_rejected;
  throw ParseError("unknown optimization status '" + std::string(s) + "'");
}

void to_json(json& j, const OptimizationResult& r) {
  j = json{{"bottleneck_id", r.bottleneck_id},
           {"target_llm", r.target_llm},
           {"strategy", r.strategy},
           {"meta_prompter", r.meta_prompter},
           {"prompt_fingerprint", r.prompt_fingerprint},
           {"raw_response", r.raw_response},
           {"extracted_code", r.extracted_code ? json(*r.extracted_code) : json(nullptr)},
           {"status", to_string(r.status)},
           {"reason", r.reason},
           {"tag", r.tag ? json(*r.tag) : json(nullptr)}};
}

void from_json(const json& j, OptimizationResult& r) {
  r.bottleneck_id = j.at("bottleneck_id").get<std::string>();
  r.target_llm = j.at("target_llm").get<std::string>();
  r.strategy = j.at("strategy").get<std::string>();
  r.meta_prompter = j.value("meta_prompter", std::string("static"));
  r.prompt_fingerprint = j.at("prompt_fingerprint").get<std::string>();
  r.raw_response = j.at("raw_response").get<std::string>();
  r.extracted_code.reset();
  if (!j.at("extracted_code").is_null()) r.extracted_code = j["extracted_code"].get<std::string>();
  r.status = opt_status_from_string(j.at("status").get<std::string>());
  r.reason = j.value("reason", std::string());
  r.tag.reset();
  if (j.contains("tag") && !j["tag"].is_null()) r.tag = j["tag"].get<std::string>();
}

std::optional<std::string> extract_code(std::string_view raw, Language /*lang*/,
                                        const std::vector<std::string>& prefixes) {
  ReplyVerdict v = validate_prompt_reply(raw, prefixes);
  if (!v) return std::nullopt;
  std::vector<std::string_view> lines = split_lines(v.text);
  auto blank = [](std::string_view l) { return trim(l).empty(); };
  while (!lines.empty() && blank(lines.front())) lines.erase(lines.begin());
  while (!lines.empty() && blank(lines.back())) lines.pop_back();
  if (lines.empty()) return std::nullopt;
  return join(lines, "\n");
}

OptimizationResult optimize(ChatClient& client, const ModelConfig& target,
                            const GeneratedPrompt& prompt, const Bottleneck& b,
                            const OptimizeOptions& options) {
  if (b.snippet.empty()) throw ValidationError("bottleneck " + b.id + " has an empty snippet");
  OptimizationResult r;
  r.bottleneck_id = b.id;
  r.target_llm = target.model_id;
  r.strategy = options.strategy_label.empty() ? to_string(prompt.strategy) : options.strategy_label;
  r.meta_prompter = prompt.provenance.meta_prompter;
  r.prompt_fingerprint = prompt.fingerprint();

  ChatExchange e = client.complete(target, compose_request(prompt, b.snippet, b.language));
  r.raw_response = e.response_text;

  ReplyVerdict v = validate_prompt_reply(r.raw_response, options.commentary_prefixes);
  if (!v) {
    r.reason = v.reason;
    return r;
  }
  std::optional<std::string> code = extract_code(r.raw_response, b.language,
                                                 options.commentary_prefixes);
  if (!code) {
    r.reason = "no code in reply";
    return r;
  }
  if (!is_single_function(*code, b.language)) {
    r.reason = "not a drop-in replacement for a single function";
    return r;
  }
  r.extracted_code = std::move(code);
  r.status = OptStatus::ok;
  return r;
}

const std::vector<std::string>& default_copy_ignores() {
  static const std::vector<std::string> globs = {".git", ".hg", ".svn", "build", "__pycache__"};
  return globs;
}

void copy_tree(const fs::path& from, const fs::path& to, const std::vector<std::string>& ignore,
               const std::vector<fs::path>& exclude) {
  std::vector<fs::path> skip;
  for (const fs::path& e : exclude) skip.push_back(normalized(e));
  std::error_code ec;
  fs::create_directories(to, ec);
  if (ec) throw IoError("cannot create " + to.string() + ": " + ec.message());

  auto it = fs::recursive_directory_iterator(from, ec);
  if (ec) throw IoError("cannot read " + from.string() + ": " + ec.message());
  for (; it != fs::recursive_directory_iterator(); it.increment(ec)) {
    if (ec) throw IoError("walking " + from.string() + ": " + ec.message());
    const fs::path& src = it->path();
    const fs::path rel = src.lexically_relative(from);
    const bool is_dir = it->is_directory() && !it->is_symlink();
    if (glob_hit(ignore, src.filename().string(), rel.generic_string()) ||
        std::find(skip.begin(), skip.end(), normalized(src)) != skip.end()) {
      if (is_dir) it.disable_recursion_pending();
      continue;
    }
    const fs::path dst = to / rel;
    if (it->is_symlink()) {
      fs::copy_symlink(src, dst, ec);
    } else if (is_dir) {
      fs::create_directories(dst, ec);
    } else if (it->is_regular_file()) {
      fs::copy_file(src, dst, fs::copy_options::overwrite_existing, ec);
    }
    if (ec) throw IoError("cannot copy " + src.string() + ": " + ec.message());
  }
}

std::string reindent_python(std::string_view code, std::string_view indent) {
  std::vector<std::string_view> lines = split_lines(code);
  if (lines.empty()) return std::string(code);
  const std::string have = leading_ws(lines.front());
  if (have == indent) return std::string(code);
  std::vector<std::string> out;
  for (std::string_view l : lines) {
    if (trim(l).empty()) {
      out.emplace_back(l);
    } else if (starts_with(l, have)) {
      out.push_back(std::string(indent) + std::string(l.substr(have.size())));
    } else {
      out.push_back(std::string(indent) + std::string(trim_left(l)));
    }
  }
  std::string result = join(out, "\n");
  if (!code.empty() && code.back() == '\n') result += '\n';
  return result;
}

std::string make_variant_id(const Bottleneck& b, std::string_view strategy,
                            std::string_view model, std::string_view meta_prompter,
                            std::string_view code) {
  json key = {{"bottleneck", b.id},
              {"span", b.span},
              {"snippet", sha256_hex(b.snippet)},
              {"strategy", strategy},
              {"model", model},
              {"meta_prompter", meta_prompter},
              {"code", sha256_hex(code)}};
  return "v-" + sha256_hex(key.dump()).substr(0, 16);
}

json manifest_json(const VariantWorkspace& ws, const Bottleneck& b, const json& labels) {
  json j = labels.is_object() ? labels : json::object();
  j["variant_id"] = ws.variant_id;
  j["bottleneck_id"] = b.id;
  j["edited_file"] = ws.edited_file;
  j["span"] = ws.original_span;
  j["language"] = std::string(to_string(b.language));
  j["before_sha256"] = ws.before_sha256;
  j["after_sha256"] = ws.after_sha256;
  j["snippet_sha256"] = sha256_hex(b.snippet);
  j["replacement_sha256"] = sha256_hex(ws.replacement);
  j["replacement"] = ws.replacement;
  return j;
}

VariantWorkspace workspace_from_manifest(const fs::path& root) {
  json j;
  try {
    j = json::parse(read_file(root / "manifest.json"));
  } catch (const json::parse_error& e) {
    throw ParseError(root.string() + "/manifest.json: " + e.what());
  }
  VariantWorkspace ws;
  ws.variant_id = j.at("variant_id").get<std::string>();
  ws.root = root;
  ws.tree = root / "tree";
  ws.edited_file = j.at("edited_file").get<std::string>();
  ws.original_span = j.at("span").get<SourceSpan>();
  ws.replacement = j.at("replacement").get<std::string>();
  ws.before_sha256 = j.at("before_sha256").get<std::string>();
  ws.after_sha256 = j.at("after_sha256").get<std::string>();
  return ws;
}

VariantWorkspace gen_variant(const fs::path& repo_root, const Bottleneck& b, std::string_view code,
                             const fs::path& staging_dir, const std::string& variant_id,
                             const VariantOptions& options) {
  if (trim(code).empty()) throw ValidationError("replacement code for " + b.id + " is empty");

  const fs::path source_file = repo_root / b.span.file;
  const std::string original = read_file(source_file);
  ByteRange range;
  try {
    range = line_byte_range(original, {b.span.start_line, b.span.end_line});
  } catch (const ExtractionError&) {
    throw StaleBottleneckError(fmt::format("{}: lines {}-{} no longer exist in {}", b.id,
                                           b.span.start_line, b.span.end_line, b.span.file));
  }
  if (std::string_view(original).substr(range.begin, range.end - range.begin) != b.snippet) {
    throw StaleBottleneckError(fmt::format("{}: {} lines {}-{} changed since profiling", b.id,
                                           b.span.file, b.span.start_line, b.span.end_line));
  }

  std::string replacement(code);
  while (!replacement.empty() && replacement.back() == '\n') replacement.pop_back();
  if (b.language == Language::python) {
    replacement = reindent_python(replacement, leading_ws(b.snippet));
  }

  VariantWorkspace ws;
  ws.variant_id = variant_id;
  ws.root = staging_dir / variant_id;
  ws.tree = ws.root / "tree";
  ws.edited_file = b.span.file;
  ws.original_span = b.span;
  ws.replacement = replacement;

  std::error_code ec;
  fs::remove_all(ws.root, ec);
  std::vector<fs::path> exclude = options.exclude;
  exclude.push_back(staging_dir);
  copy_tree(repo_root, ws.tree, options.ignore, exclude);

  std::string edited = original.substr(0, range.begin) + replacement + original.substr(range.end);
  const fs::path target = ws.tree / b.span.file;
  const auto perms = fs::status(source_file).permissions();
  write_file_atomic(target, edited);
  fs::permissions(target, perms, ec);

  ws.before_sha256 = sha256_hex(original);
  ws.after_sha256 = sha256_hex(edited);
  fs::create_directories(ws.logs_dir());
  write_file_atomic(ws.manifest_path(), manifest_json(ws, b, options.labels).dump(2) + "\n");
  return ws;
}

}  // namespace mpco
