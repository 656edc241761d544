#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace clfa::kv {

struct Entry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// `key = value` lines; `#` starts a comment, blank lines are skipped.
/// Throws ConfigError on a line without '=' or with an empty key.
std::vector<Entry> parse(const std::string& text);

// Strict scalar parsers: the whole value must be consumed. Throw ConfigError
// naming `key` otherwise.
std::size_t to_size(const std::string& key, const std::string& value);
std::uint64_t to_u64(const std::string& key, const std::string& value);
double to_double(const std::string& key, const std::string& value);
bool to_bool(const std::string& key, const std::string& value);

/// Shortest decimal that round-trips to the same double.
std::string format_double(double v);

}  // namespace clfa::kv
