#pragma once

#include <cstdint>
#include <string>

namespace avdit::kv {

// Typed readers for `key=value` config entries. Bad values raise InputError
// naming the key.

std::int64_t parse_int(const std::string& key, const std::string& value);
std::size_t parse_size(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);

/// Shortest text that parses back to the same double.
std::string format(double v);
inline std::string format(bool v) { return v ? "true" : "false"; }

}  // namespace avdit::kv
