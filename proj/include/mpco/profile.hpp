#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mpco/common.hpp"
#include "mpco/source_scan.hpp"

namespace mpco {

enum class TimeUnit { nanoseconds, microseconds, milliseconds, seconds, samples };

std::string_view to_string(TimeUnit unit);
TimeUnit time_unit_from_string(std::string_view name);

struct Frame {
  std::string name;
  std::optional<std::string> file;
  std::optional<int> line;  // 1-based

  bool operator==(const Frame&) const = default;
};

struct Sample {
  std::vector<std::size_t> stack;  // root -> leaf
  double weight = 0;

  bool operator==(const Sample&) const = default;
};

// A parsed CPU profile. Weights are in `unit`; integer-valued weights
// aggregate exactly.
struct Profile {
  std::vector<Frame> frames;
  std::vector<Sample> samples;
  TimeUnit unit = TimeUnit::samples;

  double total_weight() const;
  // Throws ParseError if any invariant (index range, non-negative weight,
  // non-empty stack) is violated.
  void check() const;

  bool operator==(const Profile&) const = default;
};

struct FrameStat {
  std::string frame_name;
  std::optional<std::string> file;
  std::optional<int> line;
  double self_weight = 0;   // samples whose leaf is this frame
  double total_weight = 0;  // samples containing this frame, once per sample
  double share = 0;         // self_weight / profile total, 0 when total is 0

  bool operator==(const FrameStat&) const = default;
};

enum class RankMode { self, total };

RankMode rank_mode_from_string(std::string_view name);

struct SourceSpan {
  std::string file;  // relative to the repository root, generic separators
  int start_line = 0;
  int end_line = 0;

  bool operator==(const SourceSpan&) const = default;
};

struct Bottleneck {
  std::string id;
  FrameStat frame;
  std::string snippet;
  SourceSpan span;
  Language language = Language::other;
};

// Folded ("collapsed") stacks: `root;...;leaf <count>` per line. A frame may
// carry a trailing ` (path:line)` location, as py-spy writes it.
Profile parse_folded(std::string_view text);
std::string serialize_folded(const Profile& profile);

// Speedscope file format, "sampled" and "evented" profiles. All profiles in
// the document are merged into one Profile; they must share a unit.
Profile parse_speedscope(std::string_view json_text);

// Picks a parser by name ("folded" or "speedscope").
Profile load_profile(const fs::path& path, std::string_view format);

std::vector<FrameStat> frame_stats(const Profile& profile);

// Greatest weight first under `mode`, ties by frame name ascending (then file,
// then line). Throws std::invalid_argument if k == 0.
std::vector<FrameStat> top_k(std::vector<FrameStat> stats, std::size_t k,
                             RankMode mode = RankMode::self);

// Drops stats whose file matches any of the glob patterns.
std::vector<FrameStat> filter_ignored(std::vector<FrameStat> stats,
                                      const std::vector<std::string>& globs);

Language language_for_path(std::string_view path);

// Locates the smallest function definition enclosing stat.line and slices it
// out of the file. `ordinal` is the 1-based position in the ranked list and
// feeds the bottleneck id.
Bottleneck extract_snippet(const fs::path& repo_root, const FrameStat& stat,
                           Language lang, std::size_t ordinal = 1);

std::string bottleneck_id(std::size_t ordinal, std::string_view frame_name);

void to_json(nlohmann::json& j, const FrameStat& s);
void from_json(const nlohmann::json& j, FrameStat& s);
void to_json(nlohmann::json& j, const SourceSpan& s);
void from_json(const nlohmann::json& j, SourceSpan& s);
void to_json(nlohmann::json& j, const Bottleneck& b);
void from_json(const nlohmann::json& j, Bottleneck& b);

}  // namespace mpco
