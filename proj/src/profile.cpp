#include "mpco/profile.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <stdexcept>
#include <unordered_map>

#include <fmt/format.h>

namespace mpco {

namespace {

constexpr std::string_view kSpeedscopeSchema =
    "https://www.speedscope.app/file-format-schema.json";

struct ParsedFrameToken {
  std::string name;
  std::optional<std::string> file;
  std::optional<int> line;
};

// `name (path:line)` -> name, path, line. Anything else is a bare name.
ParsedFrameToken parse_frame_token(std::string_view token) {
  ParsedFrameToken out{std::string(token), std::nullopt, std::nullopt};
  if (token.empty() || token.back() != ')') return out;
  std::size_t open = token.rfind(" (");
  if (open == std::string_view::npos) return out;
  std::string_view loc = token.substr(open + 2, token.size() - open - 3);
  std::size_t colon = loc.rfind(':');
  if (colon == std::string_view::npos || colon == 0) return out;
  std::string_view digits = loc.substr(colon + 1);
  int line = 0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), line);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || line < 1) return out;
  out.name = std::string(token.substr(0, open));
  out.file = std::string(loc.substr(0, colon));
  out.line = line;
  return out;
}

std::string frame_token(const Frame& f) {
  if (f.file && f.line) return fmt::format("{} ({}:{})", f.name, *f.file, *f.line);
  return f.name;
}

double rank_weight(const FrameStat& s, RankMode mode) {
  return mode == RankMode::self ? s.self_weight : s.total_weight;
}

}  // namespace

std::string_view to_string(TimeUnit unit) {
  switch (unit) {
    case TimeUnit::nanoseconds:
      return "nanoseconds";
    case TimeUnit::microseconds:
      return "microseconds";
    case TimeUnit::milliseconds:
      return "milliseconds";
    case TimeUnit::seconds:
      return "seconds";
    case TimeUnit::samples:
      return "samples";
  }
  return "samples";
}

TimeUnit time_unit_from_string(std::string_view name) {
  if (name == "nanoseconds") return TimeUnit::nanoseconds;
  if (name == "microseconds") return TimeUnit::microseconds;
  if (name == "milliseconds") return TimeUnit::milliseconds;
  if (name == "seconds") return TimeUnit::seconds;
  if (name == "samples" || name == "none") return TimeUnit::samples;
  throw UnsupportedFormatError("unsupported unit '" + std::string(name) + "'");
}

RankMode rank_mode_from_string(std::string_view name) {
  if (name == "self") return RankMode::self;
  if (name == "total") return RankMode::total;
  throw ParseError("unknown rank mode '" + std::string(name) + "'");
}

double Profile::total_weight() const {
  double sum = 0;
  for (const Sample& s : samples) sum += s.weight;
  return sum;
}

void Profile::check() const {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    if (s.stack.empty()) throw ParseError(fmt::format("sample {} has an empty stack", i));
    if (!(s.weight >= 0) || !std::isfinite(s.weight)) {
      throw ParseError(fmt::format("sample {} has invalid weight {}", i, s.weight));
    }
    for (std::size_t idx : s.stack) {
      if (idx >= frames.size()) {
        throw ParseError(fmt::format("sample {} references frame {} of {}", i, idx,
                                     frames.size()));
      }
    }
  }
}

Profile parse_folded(std::string_view text) {
  Profile profile;
  profile.unit = TimeUnit::samples;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::string_view> lines = split_lines(text);
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const std::size_t lineno = li + 1;
    std::string line = trim(lines[li]);
    if (line.empty()) continue;
    std::size_t sep = line.find_last_of(" \t");
    if (sep == std::string::npos) throw ParseError("missing sample count", lineno);
    std::string_view count_text = std::string_view(line).substr(sep + 1);
    std::uint64_t count = 0;
    auto [ptr, ec] =
        std::from_chars(count_text.data(), count_text.data() + count_text.size(), count);
    if (ec != std::errc() || ptr != count_text.data() + count_text.size()) {
      throw ParseError("invalid sample count '" + std::string(count_text) + "'", lineno);
    }
    std::string stack_text = trim(std::string_view(line).substr(0, sep));
    if (stack_text.empty()) throw ParseError("empty stack", lineno);

    Sample sample;
    sample.weight = static_cast<double>(count);
    std::size_t pos = 0;
    while (pos <= stack_text.size()) {
      std::size_t semi = stack_text.find(';', pos);
      std::size_t stop = semi == std::string::npos ? stack_text.size() : semi;
      std::string token = stack_text.substr(pos, stop - pos);
      if (token.empty()) throw ParseError("empty frame name", lineno);
      auto [it, inserted] = index.try_emplace(token, profile.frames.size());
      if (inserted) {
        ParsedFrameToken parsed = parse_frame_token(token);
        profile.frames.push_back({parsed.name, parsed.file, parsed.line});
      }
      sample.stack.push_back(it->second);
      if (semi == std::string::npos) break;
      pos = semi + 1;
    }
    profile.samples.push_back(std::move(sample));
  }
  return profile;
}

std::string serialize_folded(const Profile& profile) {
  profile.check();
  std::string out;
  for (const Sample& s : profile.samples) {
    if (s.weight != std::floor(s.weight) || s.weight > 9.007199254740992e15) {
      throw DomainError(fmt::format("weight {} is not an integer count", s.weight));
    }
    std::vector<std::string> names;
    names.reserve(s.stack.size());
    for (std::size_t idx : s.stack) names.push_back(frame_token(profile.frames[idx]));
    out += join(names, ";");
    out += fmt::format(" {}\n", static_cast<std::uint64_t>(s.weight));
  }
  return out;
}

Profile parse_speedscope(std::string_view json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("speedscope document must be an object");
  if (doc.contains("$schema") && doc["$schema"] != kSpeedscopeSchema) {
    throw UnsupportedFormatError("unsupported schema " + doc["$schema"].dump());
  }
  if (!doc.contains("shared") || !doc["shared"].contains("frames") ||
      !doc["shared"]["frames"].is_array()) {
    throw ParseError("missing shared.frames");
  }
  if (!doc.contains("profiles") || !doc["profiles"].is_array()) {
    throw ParseError("missing profiles");
  }

  Profile profile;
  for (const auto& jf : doc["shared"]["frames"]) {
    if (!jf.is_object() || !jf.contains("name") || !jf["name"].is_string()) {
      throw ParseError("frame without a name");
    }
    Frame f{jf["name"].get<std::string>(), std::nullopt, std::nullopt};
    if (jf.contains("file") && jf["file"].is_string()) f.file = jf["file"].get<std::string>();
    if (jf.contains("line") && jf["line"].is_number_integer()) f.line = jf["line"].get<int>();
    profile.frames.push_back(std::move(f));
  }

  std::optional<TimeUnit> unit;
  for (const auto& jp : doc["profiles"]) {
    if (!jp.is_object() || !jp.contains("type") || !jp["type"].is_string()) {
      throw ParseError("profile without a type");
    }
    TimeUnit this_unit = time_unit_from_string(jp.value("unit", std::string("none")));
    if (unit && *unit != this_unit) {
      throw UnsupportedFormatError("profiles with mixed units");
    }
    unit = this_unit;

    const std::string type = jp["type"].get<std::string>();
    if (type == "sampled") {
      if (!jp.contains("samples") || !jp.contains("weights") || !jp["samples"].is_array() ||
          !jp["weights"].is_array()) {
        throw ParseError("sampled profile needs samples and weights");
      }
      const auto& js = jp["samples"];
      const auto& jw = jp["weights"];
      if (js.size() != jw.size()) {
        throw ParseError(fmt::format("{} samples but {} weights", js.size(), jw.size()));
      }
      for (std::size_t i = 0; i < js.size(); ++i) {
        if (!js[i].is_array() || !jw[i].is_number()) throw ParseError("malformed sample");
        Sample s;
        s.weight = jw[i].get<double>();
        for (const auto& idx : js[i]) {
          if (!idx.is_number_unsigned()) throw ParseError("malformed frame index");
          s.stack.push_back(idx.get<std::size_t>());
        }
        // Idle samples carry no frames.
        if (s.stack.empty()) continue;
        profile.samples.push_back(std::move(s));
      }
    } else if (type == "evented") {
      if (!jp.contains("events") || !jp["events"].is_array()) {
        throw ParseError("evented profile needs events");
      }
      std::vector<std::size_t> stack;
      std::optional<double> last_at;
      auto flush = [&](double at) {
        if (last_at && at > *last_at && !stack.empty()) {
          profile.samples.push_back({stack, at - *last_at});
        }
        last_at = at;
      };
      for (const auto& ev : jp["events"]) {
        if (!ev.is_object() || !ev.contains("type") || !ev.contains("frame") ||
            !ev.contains("at") || !ev["at"].is_number() || !ev["frame"].is_number_unsigned()) {
          throw ParseError("malformed event");
        }
        double at = ev["at"].get<double>();
        if (last_at && at < *last_at) throw ParseError("events out of order");
        auto frame = ev["frame"].get<std::size_t>();
        const std::string kind = ev["type"].get<std::string>();
        flush(at);
        if (kind == "O") {
          stack.push_back(frame);
        } else if (kind == "C") {
          if (stack.empty() || stack.back() != frame) {
            throw ParseError(fmt::format("close of frame {} does not match open stack", frame));
          }
          stack.pop_back();
        } else {
          throw ParseError("unknown event type '" + kind + "'");
        }
      }
      if (!stack.empty() && jp.contains("endValue") && jp["endValue"].is_number()) {
        flush(jp["endValue"].get<double>());
      }
    } else {
      throw UnsupportedFormatError("unsupported profile type '" + type + "'");
    }
  }
  profile.unit = unit.value_or(TimeUnit::samples);
  profile.check();
  return profile;
}

Profile load_profile(const fs::path& path, std::string_view format) {
  std::string text = read_file(path);
  if (format == "folded") return parse_folded(text);
  if (format == "speedscope") return parse_speedscope(text);
  throw UnsupportedFormatError("unknown profile format '" + std::string(format) + "'");
}

std::vector<FrameStat> frame_stats(const Profile& profile) {
  profile.check();
  std::vector<FrameStat> stats(profile.frames.size());
  for (std::size_t i = 0; i < profile.frames.size(); ++i) {
    stats[i].frame_name = profile.frames[i].name;
    stats[i].file = profile.frames[i].file;
    stats[i].line = profile.frames[i].line;
  }
  // seen[f] == sample index + 1 when f was already counted for that sample
  std::vector<std::size_t> seen(profile.frames.size(), 0);
  for (std::size_t si = 0; si < profile.samples.size(); ++si) {
    const Sample& s = profile.samples[si];
    stats[s.stack.back()].self_weight += s.weight;
    for (std::size_t idx : s.stack) {
      if (seen[idx] == si + 1) continue;
      seen[idx] = si + 1;
      stats[idx].total_weight += s.weight;
    }
  }
  const double total = profile.total_weight();
  for (FrameStat& st : stats) {
    st.share = total > 0 ? std::clamp(st.self_weight / total, 0.0, 1.0) : 0.0;
  }
  return stats;
}

std::vector<FrameStat> top_k(std::vector<FrameStat> stats, std::size_t k, RankMode mode) {
  if (k == 0) throw std::invalid_argument("top_k: k must be at least 1");
  auto before = [mode](const FrameStat& a, const FrameStat& b) {
    double wa = rank_weight(a, mode);
    double wb = rank_weight(b, mode);
    if (wa != wb) return wa > wb;
    if (a.frame_name != b.frame_name) return a.frame_name < b.frame_name;
    if (a.file != b.file) return a.file < b.file;
    if (a.line != b.line) return a.line < b.line;
    // Fully deterministic even for duplicate frame identities.
    RankMode other = mode == RankMode::self ? RankMode::total : RankMode::self;
    if (rank_weight(a, other) != rank_weight(b, other)) {
      return rank_weight(a, other) > rank_weight(b, other);
    }
    return a.share > b.share;
  };
  std::size_t n = std::min(k, stats.size());
  std::partial_sort(stats.begin(), stats.begin() + static_cast<std::ptrdiff_t>(n), stats.end(),
                    before);
  stats.resize(n);
  return stats;
}

std::vector<FrameStat> filter_ignored(std::vector<FrameStat> stats,
                                      const std::vector<std::string>& globs) {
  if (globs.empty()) return stats;
  std::erase_if(stats, [&](const FrameStat& s) {
    if (!s.file) return false;
    return std::any_of(globs.begin(), globs.end(), [&](const std::string& g) {
      return fnmatch(g.c_str(), s.file->c_str(), 0) == 0;
    });
  });
  return stats;
}

Language language_for_path(std::string_view path) {
  std::string ext = fs::path(path).extension().string();
  if (ext == ".py" || ext == ".pyi") return Language::python;
  static const char* const kCpp[] = {".c",  ".cc",  ".cpp", ".cxx", ".c++", ".h",
                                     ".hh", ".hpp", ".hxx", ".inl", ".ipp"};
  for (const char* e : kCpp) {
    if (ext == e) return Language::cpp;
  }
  return Language::other;
}

std::string bottleneck_id(std::size_t ordinal, std::string_view frame_name) {
  return fmt::format("b{:02}-{}", ordinal, sha256_hex(frame_name).substr(0, 8));
}

Bottleneck extract_snippet(const fs::path& repo_root, const FrameStat& stat, Language lang,
                           std::size_t ordinal) {
  if (!stat.file) throw ExtractionError("frame '" + stat.frame_name + "' has no source file");
  if (!stat.line) throw ExtractionError("frame '" + stat.frame_name + "' has no source line");

  fs::path rel = fs::path(*stat.file);
  if (rel.is_absolute()) {
    rel = rel.lexically_normal().lexically_relative(fs::absolute(repo_root).lexically_normal());
  } else {
    rel = rel.lexically_normal();
  }
  if (rel.empty() || *rel.begin() == "..") {
    throw IoError("'" + *stat.file + "' is outside the repository");
  }
  fs::path full = repo_root / rel;
  if (!fs::is_regular_file(full)) throw IoError("no such file: " + full.string());
  std::string text = read_file(full);

  std::optional<LineRange> range = enclosing_function(text, *stat.line, lang);
  if (!range) {
    throw ExtractionError(fmt::format("no function encloses {}:{}", rel.generic_string(),
                                      *stat.line));
  }
  ByteRange bytes = line_byte_range(text, *range);

  Bottleneck b;
  b.id = bottleneck_id(ordinal, stat.frame_name);
  b.frame = stat;
  b.snippet = text.substr(bytes.begin, bytes.end - bytes.begin);
  b.span = {rel.generic_string(), range->start, range->end};
  b.language = lang;
  return b;
}

void to_json(nlohmann::json& j, const FrameStat& s) {
  j = nlohmann::json{{"frame_name", s.frame_name},
                     {"file", s.file ? nlohmann::json(*s.file) : nlohmann::json()},
                     {"line", s.line ? nlohmann::json(*s.line) : nlohmann::json()},
                     {"self_weight", s.self_weight},
                     {"total_weight", s.total_weight},
                     {"share", s.share}};
}

void from_json(const nlohmann::json& j, FrameStat& s) {
  s.frame_name = j.at("frame_name").get<std::string>();
  s.file = j.contains("file") && j["file"].is_string()
               ? std::optional<std::string>(j["file"].get<std::string>())
               : std::nullopt;
  s.line = j.contains("line") && j["line"].is_number_integer()
               ? std::optional<int>(j["line"].get<int>())
               : std::nullopt;
  s.self_weight = j.at("self_weight").get<double>();
  s.total_weight = j.at("total_weight").get<double>();
  s.share = j.at("share").get<double>();
}

void to_json(nlohmann::json& j, const SourceSpan& s) {
  j = nlohmann::json{{"file", s.file}, {"start_line", s.start_line}, {"end_line", s.end_line}};
}

void from_json(const nlohmann::json& j, SourceSpan& s) {
  s.file = j.at("file").get<std::string>();
  s.start_line = j.at("start_line").get<int>();
  s.end_line = j.at("end_line").get<int>();
}

void to_json(nlohmann::json& j, const Bottleneck& b) {
  j = nlohmann::json{{"id", b.id},
                     {"frame", b.frame},
                     {"snippet", b.snippet},
                     {"span", b.span},
                     {"language", std::string(to_string(b.language))}};
}

void from_json(const nlohmann::json& j, Bottleneck& b) {
  b.id = j.at("id").get<std::string>();
  b.frame = j.at("frame").get<FrameStat>();
  b.snippet = j.at("snippet").get<std::string>();
  b.span = j.at("span").get<SourceSpan>();
  b.language = language_from_string(j.at("language").get<std::string>());
}

}  // namespace mpco
