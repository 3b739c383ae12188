#include "avdit/kv.hpp"

#include <charconv>
#include <cmath>

#include "avdit/errors.hpp"

namespace avdit::kv {

namespace {

template <typename N>
N parse_number(const std::string& key, const std::string& value, const char* what) {
    N out{};
    const char* end = value.data() + value.size();
    auto [p, ec] = std::from_chars(value.data(), end, out);
    if (value.empty() || ec != std::errc() || p != end) {
        throw InputError(key + ": expected " + what + ", got '" + value + "'");
    }
    return out;
}

}  // namespace

std::int64_t parse_int(const std::string& key, const std::string& value) {
    return parse_number<std::int64_t>(key, value, "an integer");
}

std::size_t parse_size(const std::string& key, const std::string& value) {
    return parse_number<std::size_t>(key, value, "a non-negative integer");
}

double parse_double(const std::string& key, const std::string& value) {
    const double v = parse_number<double>(key, value, "a number");
    if (!std::isfinite(v)) throw InputError(key + ": value must be finite");
    return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw InputError(key + ": expected true or false, got '" + value + "'");
}

std::string format(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

}  // namespace avdit::kv
