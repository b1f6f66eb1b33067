#pragma once

#include <optional>
#include <string_view>
#include <vector>

namespace mpco {

enum class Language { cpp, python, other };

std::string_view to_string(Language lang);
Language language_from_string(std::string_view name);

// 1-based, inclusive.
struct LineRange {
  int start = 0;
  int end = 0;

  bool contains(int line) const { return start <= line && line <= end; }
  bool operator==(const LineRange&) const = default;
};

// Byte offsets [begin, end) covering lines r.start..r.end, excluding the
// newline that terminates r.end. Throws ExtractionError when out of range.
struct ByteRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};
ByteRange line_byte_range(std::string_view text, LineRange r);

// Every function definition the scanner recognizes, in source order.
//
// Python: a `def` (or `async def`) spans from its header line to the last
// code line of its indentation block. Lines inside triple-quoted strings or
// open brackets are continuations and never end a block.
//
// C-family (cpp and other): a `{` is a function body when it follows a
// parameter list `name(...)`, optionally with trailing qualifiers, a trailing
// return type or a constructor initializer list. Control statements and
// lambdas are not functions. The definition starts at the first token after
// the previous `;`, `{`, `}` or access specifier and ends at the matching `}`.
std::vector<LineRange> function_definitions(std::string_view source, Language lang);

// Innermost definition containing `line`.
std::optional<LineRange> enclosing_function(std::string_view source, int line,
                                            Language lang);

// True if `code` is exactly one function definition, with nothing but blank
// lines and comments around it. For Language::other any non-blank text passes.
bool is_single_function(std::string_view code, Language lang);

}  // namespace mpco
