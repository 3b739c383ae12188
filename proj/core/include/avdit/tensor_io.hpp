#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "avdit/tensor.hpp"

namespace avdit {

/// ADTN binary tensor layout (all integers little-endian):
///   "ADTN" | u8 version = 1 | u8 dtype (0 = f32, 1 = f64) | u8 rank |
///   u64 extents[rank] | payload (row-major, little-endian IEEE-754)
inline constexpr std::string_view kTensorMagic = "ADTN";
inline constexpr unsigned char kTensorVersion = 1;

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

template <typename T>
std::string encode_tensor(const Tensor<T>& t);
/// Throws ParseError on bad magic/version/dtype, truncation or trailing bytes.
AnyTensor decode_tensor(std::string_view bytes);

template <typename T>
void write_tensor(const std::filesystem::path& path, const Tensor<T>& t);
AnyTensor read_tensor(const std::filesystem::path& path);
/// Reads a file that must hold dtype T; a dtype mismatch is a ParseError.
template <typename T>
Tensor<T> read_tensor_as(const std::filesystem::path& path);

/// Named tensors plus plain-text key=value metadata, stored as a directory:
///   manifest.txt  one `name=file` line per tensor, in order
///   config.txt    one `key=value` line per entry
///   *.adtn        tensor files
struct Checkpoint {
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    std::map<std::string, std::string> config;

    const Tensor<float>* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// `key=value` lines; blank lines and lines starting with '#' are skipped.
/// Malformed lines raise ParseError naming the 1-based line number.
std::map<std::string, std::string> parse_key_values(std::string_view text, const std::string& source);
std::string format_key_values(const std::map<std::string, std::string>& kv);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace avdit
