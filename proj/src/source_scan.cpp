#include "mpco/source_scan.hpp"

#include <algorithm>
#include <cctype>
#include <string>
#include <unordered_set>

#include "mpco/common.hpp"

namespace mpco {

std::string_view to_string(Language lang) {
  switch (lang) {
    case Language::cpp:
      return "cpp";
    case Language::python:
      return "python";
    case Language::other:
      return "other";
  }
  return "other";
}

Language language_from_string(std::string_view name) {
  if (name == "cpp" || name == "c++") return Language::cpp;
  if (name == "python") return Language::python;
  if (name == "other") return Language::other;
  throw ParseError("unknown language '" + std::string(name) + "'");
}

namespace {

// ---------------------------------------------------------------------------
// Python

struct PyLine {
  bool continuation = false;  // starts inside a string, bracket or after '\'
  bool blank = true;          // blank or comment-only
  bool is_def = false;
  int indent = 0;
};

int indent_width(std::string_view line) {
  int width = 0;
  for (char c : line) {
    if (c == ' ') {
      ++width;
    } else if (c == '\t') {
      width = (width / 8 + 1) * 8;
    } else {
      break;
    }
  }
  return width;
}

bool is_def_line(std::string_view line) {
  std::string_view s = trim_left(line);
  if (starts_with(s, "async")) {
    s = s.substr(5);
    if (s.empty() || (s[0] != ' ' && s[0] != '\t')) return false;
    s = trim_left(s);
  }
  if (!starts_with(s, "def")) return false;
  s = s.substr(3);
  return !s.empty() && (s[0] == ' ' || s[0] == '\t');
}

std::vector<PyLine> classify_python(std::string_view source) {
  std::vector<std::string_view> lines = split_lines(source);
  std::vector<PyLine> out(lines.size());

  int depth = 0;
  char triple = 0;  // quote char of an open triple-quoted string
  bool backslash = false;
  for (std::size_t li = 0; li < lines.size(); ++li) {
    std::string_view line = lines[li];
    PyLine& info = out[li];
    info.continuation = triple != 0 || depth > 0 || backslash;
    info.indent = indent_width(line);
    std::string_view t = trim_left(line);
    if (!info.continuation) {
      info.blank = t.empty() || t[0] == '#';
      info.is_def = !info.blank && is_def_line(line);
    } else {
      info.blank = false;
    }
    backslash = false;

    char single = 0;
    for (std::size_t i = 0; i < line.size(); ++i) {
      char c = line[i];
      if (triple) {
        if (c == '\\') {
          ++i;
        } else if (c == triple && line.substr(i, 3) == std::string(3, triple)) {
          triple = 0;
          i += 2;
        }
        continue;
      }
      if (single) {
        if (c == '\\') {
          ++i;
        } else if (c == single) {
          single = 0;
        }
        continue;
      }
      if (c == '#') break;
      if (c == '"' || c == '\'') {
        if (line.substr(i, 3) == std::string(3, c)) {
          triple = c;
          i += 2;
        } else {
          single = c;
        }
      } else if (c == '(' || c == '[' || c == '{') {
        ++depth;
      } else if (c == ')' || c == ']' || c == '}') {
        depth = std::max(0, depth - 1);
      } else if (c == '\\' && i + 1 == line.size()) {
        backslash = true;
      }
    }
  }
  return out;
}

std::vector<LineRange> python_functions(std::string_view source) {
  std::vector<PyLine> lines = classify_python(source);
  const int n = static_cast<int>(lines.size());
  std::vector<LineRange> defs;
  for (int d = 0; d < n; ++d) {
    if (!lines[d].is_def) continue;
    const int def_indent = lines[d].indent;
    int header_end = d;
    while (header_end + 1 < n && lines[header_end + 1].continuation) {
      ++header_end;
    }
    int end = header_end;
    for (int l = header_end + 1; l < n; ++l) {
      if (lines[l].continuation) {
        end = l;
        continue;
      }
      if (lines[l].blank) continue;
      if (lines[l].indent <= def_indent) break;
      end = l;
    }
    defs.push_back({d + 1, end + 1});
  }
  return defs;
}

// ---------------------------------------------------------------------------
// C-family

enum class TokKind { ident, number, string, punct, preproc };

struct Token {
  TokKind kind;
  std::string text;
  int line;
};

bool ident_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
}
bool ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

std::vector<Token> tokenize_c(std::string_view src) {
  std::vector<Token> toks;
  int line = 1;
  bool line_start = true;
  std::size_t i = 0;
  const std::size_t n = src.size();
  auto advance_to = [&](std::size_t to) {
    for (; i < to && i < n; ++i) {
      if (src[i] == '\n') ++line;
    }
  };
  while (i < n) {
    char c = src[i];
    if (c == '\n') {
      ++line;
      ++i;
      line_start = true;
      continue;
    }
    if (c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v') {
      ++i;
      continue;
    }
    if (c == '/' && i + 1 < n && src[i + 1] == '/') {
      while (i < n && src[i] != '\n') ++i;
      continue;
    }
    if (c == '/' && i + 1 < n && src[i + 1] == '*') {
      std::size_t close = src.find("*/", i + 2);
      advance_to(close == std::string_view::npos ? n : close + 2);
      continue;
    }
    if (c == '#' && line_start) {
      int start_line = line;
      std::size_t begin = i;
      while (i < n && src[i] != '\n') {
        if (src[i] == '\\' && i + 1 < n && src[i + 1] == '\n') {
          ++line;
          i += 2;
          continue;
        }
        ++i;
      }
      toks.push_back({TokKind::preproc, std::string(src.substr(begin, i - begin)), start_line});
      continue;
    }
    line_start = false;
    if (ident_start(c)) {
      std::size_t begin = i;
      while (i < n && ident_char(src[i])) ++i;
      std::string_view word = src.substr(begin, i - begin);
      bool raw_prefix = word == "R" || word == "LR" || word == "uR" || word == "UR" ||
                        word == "u8R";
      if (raw_prefix && i < n && src[i] == '"') {
        std::size_t paren = src.find('(', i);
        if (paren == std::string_view::npos) {
          advance_to(n);
          break;
        }
        std::string terminator = ")" + std::string(src.substr(i + 1, paren - i - 1)) + "\"";
        std::size_t close = src.find(terminator, paren);
        int start_line = line;
        advance_to(close == std::string_view::npos ? n : close + terminator.size());
        toks.push_back({TokKind::string, "R\"\"", start_line});
        continue;
      }
      toks.push_back({TokKind::ident, std::string(word), line});
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '.' && i + 1 < n && std::isdigit(static_cast<unsigned char>(src[i + 1])))) {
      std::size_t begin = i;
      while (i < n && (ident_char(src[i]) || src[i] == '.' || src[i] == '\'' ||
                       ((src[i] == '+' || src[i] == '-') &&
                        (src[i - 1] == 'e' || src[i - 1] == 'E' || src[i - 1] == 'p' ||
                         src[i - 1] == 'P')))) {
        ++i;
      }
      toks.push_back({TokKind::number, std::string(src.substr(begin, i - begin)), line});
      continue;
    }
    if (c == '"' || c == '\'') {
      int start_line = line;
      ++i;
      while (i < n && src[i] != c && src[i] != '\n') {
        if (src[i] == '\\' && i + 1 < n) {
          if (src[i + 1] == '\n') ++line;
          ++i;
        }
        ++i;
      }
      if (i < n && src[i] == c) ++i;
      toks.push_back({TokKind::string, std::string(1, c), start_line});
      continue;
    }
    if ((c == ':' && i + 1 < n && src[i + 1] == ':') ||
        (c == '-' && i + 1 < n && src[i + 1] == '>') ||
        (c == '&' && i + 1 < n && src[i + 1] == '&')) {
      toks.push_back({TokKind::punct, std::string(src.substr(i, 2)), line});
      i += 2;
      continue;
    }
    toks.push_back({TokKind::punct, std::string(1, c), line});
    ++i;
  }
  return toks;
}

struct CFunction {
  std::size_t first_token;
  std::size_t last_token;
  LineRange lines;
};

const std::unordered_set<std::string>& non_function_words() {
  static const std::unordered_set<std::string> words = {
      "if",      "for",      "while",   "switch",    "catch",        "return",
      "sizeof",  "alignof",  "decltype", "typeid",   "noexcept",     "throw",
      "new",     "delete",   "static_assert", "defined", "co_return", "co_await",
      "co_yield", "constexpr", "consteval", "requires", "__attribute__", "alignas",
      "and",     "or",       "not"};
  return words;
}

const std::unordered_set<std::string>& trailing_qualifiers() {
  static const std::unordered_set<std::string> words = {
      "const", "volatile", "noexcept", "override", "final", "mutable", "try", "&", "&&"};
  return words;
}

class CScanner {
 public:
  explicit CScanner(std::string_view source) : toks_(tokenize_c(source)) {
    // Preprocessor lines are not part of the bracket structure.
    for (std::size_t i = 0; i < toks_.size(); ++i) {
      if (toks_[i].kind != TokKind::preproc) code_.push_back(i);
    }
    match_.assign(code_.size(), npos);
    std::vector<std::size_t> stack;
    for (std::size_t k = 0; k < code_.size(); ++k) {
      const std::string& t = tok(k).text;
      if (tok(k).kind != TokKind::punct) continue;
      if (t == "(" || t == "[" || t == "{") {
        stack.push_back(k);
      } else if (t == ")" || t == "]" || t == "}") {
        char want = t == ")" ? '(' : t == "]" ? '[' : '{';
        // Unwind unmatched openers; the code is allowed to be malformed.
        while (!stack.empty() && tok(stack.back()).text[0] != want) stack.pop_back();
        if (!stack.empty()) {
          match_[k] = stack.back();
          match_[stack.back()] = k;
          stack.pop_back();
        }
      }
    }
  }

  std::vector<CFunction> functions() const {
    std::vector<CFunction> out;
    for (std::size_t k = 0; k < code_.size(); ++k) {
      if (!is(k, "{") || match_[k] == npos) continue;
      std::optional<std::size_t> name = function_name_before(k);
      if (!name) continue;
      std::size_t first = signature_start(*name);
      std::size_t close = match_[k];
      out.push_back({code_[first], code_[close], {tok(first).line, tok(close).line}});
    }
    return out;
  }

  std::size_t token_count() const { return toks_.size(); }

 private:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  const Token& tok(std::size_t k) const { return toks_[code_[k]]; }
  bool is(std::size_t k, std::string_view text) const {
    return k < code_.size() && tok(k).kind != TokKind::string && tok(k).text == text;
  }
  bool is_ident(std::size_t k) const {
    return k < code_.size() && tok(k).kind == TokKind::ident;
  }

  // Walks back over `name`, `ns::name`, `name<...>` and returns the index of
  // the first token of the (possibly qualified) name.
  std::size_t qualified_name_start(std::size_t k) const {
    while (k > 0) {
      if (is(k, ">")) {
        int depth = 0;
        std::size_t j = k;
        while (true) {
          if (is(j, ">")) ++depth;
          if (is(j, "<")) --depth;
          if (depth == 0 || j == 0) break;
          --j;
        }
        if (depth != 0 || j == 0) return k;
        k = j - 1;
        continue;
      }
      if (k > 0 && is(k - 1, "::")) {
        if (k < 2) return k - 1;
        k -= 2;
        continue;
      }
      return k;
    }
    return k;
  }

  std::size_t skip_qualifiers(std::size_t j) const {
    while (j != npos) {
      if (trailing_qualifiers().count(tok(j).text) && tok(j).kind != TokKind::string) {
        j = j == 0 ? npos : j - 1;
        continue;
      }
      // noexcept(...), throw(...), __attribute__((...))
      if (is(j, ")") && match_[j] != npos && match_[j] > 0) {
        const std::string& w = tok(match_[j] - 1).text;
        if (w == "noexcept" || w == "throw" || w == "__attribute__") {
          j = match_[j] >= 2 ? match_[j] - 2 : npos;
          continue;
        }
      }
      break;
    }
    return j;
  }

  // Given the index of a `{`, returns the index of the function name token if
  // the brace opens a function body.
  std::optional<std::size_t> function_name_before(std::size_t brace) const {
    if (brace == 0) return std::nullopt;
    std::size_t j = skip_qualifiers(brace - 1);
    if (j == npos) return std::nullopt;

    // Trailing return type: `) -> type {`.
    if (!is(j, ")")) {
      std::size_t k = j;
      int budget = 64;
      while (k != npos && budget-- > 0) {
        if (is(k, "->")) {
          j = k == 0 ? npos : skip_qualifiers(k - 1);
          break;
        }
        if (is(k, ";") || is(k, "{") || is(k, "}") || is(k, "=")) break;
        if (is(k, ")")) {
          if (match_[k] == npos || match_[k] == 0 || tok(match_[k] - 1).text != "decltype") {
            break;
          }
          k = match_[k];
        }
        k = k == 0 ? npos : k - 1;
      }
      if (j == npos) return std::nullopt;
    }

    // Constructor initializer list: `) : a(x), b{y} {`.
    if ((is(j, ")") || is(j, "}")) && match_[j] != npos && match_[j] > 0) {
      std::size_t cursor = j;
      while ((is(cursor, ")") || is(cursor, "}")) && match_[cursor] != npos &&
             match_[cursor] > 0 && is_ident_or_template_close(match_[cursor] - 1)) {
        std::size_t name_start = qualified_name_start(match_[cursor] - 1);
        if (name_start == 0) break;
        std::size_t sep = name_start - 1;
        if (is(sep, ",")) {
          if (sep == 0) break;
          cursor = sep - 1;
          continue;
        }
        if (is(sep, ":") && sep > 0) {
          std::size_t before = skip_qualifiers(sep - 1);
          if (before != npos && is(before, ")")) {
            j = before;
          }
        }
        break;
      }
    }

    if (!is(j, ")") || match_[j] == npos || match_[j] == 0) return std::nullopt;
    std::size_t name = match_[j] - 1;
    const Token& t = tok(name);
    if (t.kind == TokKind::ident) {
      if (non_function_words().count(t.text)) return std::nullopt;
      return name;
    }
    // Explicit specialization: `f<int>(...)`.
    if (is(name, ">")) {
      std::size_t start = qualified_name_start(name);
      if (start != name && is_ident(start) && !non_function_words().count(tok(start).text)) {
        return start;
      }
    }
    // operator(), operator==, operator[] and friends.
    for (std::size_t back = 0; back < 4 && back <= name; ++back) {
      std::size_t k = name - back;
      if (is(k, ")") || is(k, "]")) {
        if (match_[k] == npos) return std::nullopt;
        k = match_[k];
        if (k == 0) return std::nullopt;
        if (is(k - 1, "operator")) return k - 1;
        return std::nullopt;
      }
      if (is(k, "operator")) return k;
      if (tok(k).kind != TokKind::punct) return std::nullopt;
    }
    return std::nullopt;
  }

  bool is_ident_or_template_close(std::size_t k) const {
    return is_ident(k) || is(k, ">");
  }

  std::size_t signature_start(std::size_t name) const {
    std::size_t k = name;
    while (k > 0) {
      std::size_t prev = k - 1;
      if (is(prev, ";") || is(prev, "{") || is(prev, "}")) return k;
      if (is(prev, ":") && prev > 0) {
        const std::string& w = tok(prev - 1).text;
        if (w == "public" || w == "private" || w == "protected" || w == "signals" ||
            w == "slots") {
          return k;
        }
      }
      if ((is(prev, ")") || is(prev, "]")) && match_[prev] != npos) {
        k = match_[prev];
        continue;
      }
      k = prev;
    }
    return 0;
  }

  std::vector<Token> toks_;
  std::vector<std::size_t> code_;  // indices into toks_, preprocessor excluded
  std::vector<std::size_t> match_;
};

}  // namespace

ByteRange line_byte_range(std::string_view text, LineRange r) {
  std::vector<std::size_t> starts;
  for (std::size_t pos = 0; pos < text.size();) {
    starts.push_back(pos);
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  if (r.start < 1 || r.end < r.start || static_cast<std::size_t>(r.end) > starts.size()) {
    throw ExtractionError("line range " + std::to_string(r.start) + "-" +
                          std::to_string(r.end) + " outside file of " +
                          std::to_string(starts.size()) + " lines");
  }
  std::size_t end = text.find('\n', starts[r.end - 1]);
  return {starts[r.start - 1], end == std::string_view::npos ? text.size() : end};
}

std::vector<LineRange> function_definitions(std::string_view source, Language lang) {
  if (lang == Language::python) return python_functions(source);
  std::vector<LineRange> out;
  for (const CFunction& f : CScanner(source).functions()) out.push_back(f.lines);
  std::sort(out.begin(), out.end(), [](const LineRange& a, const LineRange& b) {
    return a.start != b.start ? a.start < b.start : a.end > b.end;
  });
  return out;
}

std::optional<LineRange> enclosing_function(std::string_view source, int line,
                                            Language lang) {
  std::optional<LineRange> best;
  for (const LineRange& r : function_definitions(source, lang)) {
    if (!r.contains(line)) continue;
    if (!best || r.start > best->start || (r.start == best->start && r.end < best->end)) {
      best = r;
    }
  }
  return best;
}

bool is_single_function(std::string_view code, Language lang) {
  if (trim(code).empty()) return false;
  if (lang == Language::other) return true;
  if (lang == Language::python) {
    std::vector<PyLine> lines = classify_python(code);
    int first = -1;
    int last = -1;
    for (int i = 0; i < static_cast<int>(lines.size()); ++i) {
      if (lines[i].continuation || !lines[i].blank) {
        if (first < 0) first = i;
        last = i;
      }
    }
    if (first < 0 || !lines[first].is_def) return false;
    for (const LineRange& r : python_functions(code)) {
      if (r.start == first + 1) return r.end == last + 1;
    }
    return false;
  }
  CScanner scanner(code);
  if (scanner.token_count() == 0) return false;
  for (const CFunction& f : scanner.functions()) {
    if (f.first_token == 0 && f.last_token + 1 == scanner.token_count()) return true;
  }
  return false;
}

}  // namespace mpco
