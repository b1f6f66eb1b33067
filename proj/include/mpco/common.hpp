#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mpco {

namespace fs = std::filesystem;

// Error hierarchy. Every failure the harness reports as an exception derives
// from Error so callers can catch the whole family at stage boundaries.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class UnsupportedFormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ExtractionError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

class RenderError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class StaleBottleneckError : public Error {
 public:
  using Error::Error;
};

// Reads a whole file as bytes. Throws IoError.
std::string read_file(const fs::path& path);

// Writes through a temporary sibling and renames, so readers never observe a
// partially written file.
void write_file_atomic(const fs::path& path, std::string_view contents);

std::string sha256_hex(std::string_view data);

std::string trim(std::string_view s);
std::string_view trim_left(std::string_view s);
bool starts_with(std::string_view s, std::string_view prefix);

// Splits on '\n'. A trailing newline does not produce an empty last element.
std::vector<std::string_view> split_lines(std::string_view text);

std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::string join(const std::vector<std::string_view>& parts, std::string_view sep);

// UTC timestamp, ISO-8601 with seconds precision.
std::string utc_timestamp();

}  // namespace mpco
