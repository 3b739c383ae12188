#include "avdit/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

static_assert(std::endian::native == std::endian::little, "ADTN I/O assumes a little-endian host");

namespace avdit {

namespace {

template <typename T>
constexpr unsigned char dtype_code() {
    return std::is_same_v<T, float> ? 0 : 1;
}

template <typename U>
void put(std::string& out, U value) {
    char buf[sizeof(U)];
    std::memcpy(buf, &value, sizeof(U));
    out.append(buf, sizeof(U));
}

class Reader {
   public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <typename U>
    U get(const char* what) {
        need(sizeof(U), what);
        U v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
        pos_ += sizeof(U);
        return v;
    }
    std::string_view take(std::size_t n, const char* what) {
        need(n, what);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }

   private:
    void need(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) {
            throw ParseError(std::string("tensor file truncated while reading ") + what + " at byte " +
                             std::to_string(pos_));
        }
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

template <typename T>
Tensor<T> decode_payload(Reader& r, Shape shape) {
    const std::size_t n = shape_numel(shape);
    auto raw = r.take(n * sizeof(T), "payload");
    std::vector<T> data(n);
    std::memcpy(data.data(), raw.data(), raw.size());
    return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace

template <typename T>
std::string encode_tensor(const Tensor<T>& t) {
    std::string out;
    out.reserve(7 + 8 * t.rank() + t.numel() * sizeof(T));
    out.append(kTensorMagic);
    put<unsigned char>(out, kTensorVersion);
    put<unsigned char>(out, dtype_code<T>());
    if (t.rank() > 255) throw DimensionError("tensor rank exceeds 255");
    put<unsigned char>(out, static_cast<unsigned char>(t.rank()));
    for (auto e : t.shape()) put<std::uint64_t>(out, e);
    out.append(reinterpret_cast<const char*>(t.ptr()), t.numel() * sizeof(T));
    return out;
}

AnyTensor decode_tensor(std::string_view bytes) {
    Reader r(bytes);
    if (r.take(4, "magic") != kTensorMagic) throw ParseError("bad tensor magic (expected ADTN)");
    const auto version = r.get<unsigned char>("version");
    if (version != kTensorVersion) throw ParseError("unsupported tensor version " + std::to_string(version));
    const auto dtype = r.get<unsigned char>("dtype");
    if (dtype > 1) throw ParseError("unknown tensor dtype code " + std::to_string(dtype));
    const auto rank = r.get<unsigned char>("rank");
    if (rank == 0) throw ParseError("tensor rank must be >= 1");
    Shape shape(rank);
    std::uint64_t numel = 1;
    for (auto& e : shape) {
        const auto v = r.get<std::uint64_t>("extent");
        if (v == 0) throw ParseError("tensor extent must be positive");
        if (numel > (std::uint64_t{1} << 40) / v) throw ParseError("tensor too large");
        numel *= v;
        e = static_cast<std::size_t>(v);
    }
    const std::size_t elem = dtype == 0 ? sizeof(float) : sizeof(double);
    if (r.remaining() != numel * elem) {
        if (r.remaining() < numel * elem) {
            throw ParseError("tensor file truncated: payload has " + std::to_string(r.remaining()) + " of " +
                             std::to_string(numel * elem) + " bytes");
        }
        throw ParseError("tensor file has " + std::to_string(r.remaining() - numel * elem) + " trailing bytes");
    }
    if (dtype == 0) return decode_payload<float>(r, std::move(shape));
    return decode_payload<double>(r, std::move(shape));
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw InputError("write failed for " + path.string());
}

template <typename T>
void write_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
    write_text_file(path, encode_tensor(t));
}

AnyTensor read_tensor(const std::filesystem::path& path) {
    try {
        return decode_tensor(read_text_file(path));
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

template <typename T>
Tensor<T> read_tensor_as(const std::filesystem::path& path) {
    AnyTensor any = read_tensor(path);
    if (auto* t = std::get_if<Tensor<T>>(&any)) return std::move(*t);
    throw ParseError(path.string() + ": unexpected tensor dtype");
}

const Tensor<float>* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return &t;
    }
    return nullptr;
}

std::map<std::string, std::string> parse_key_values(std::string_view text, const std::string& source) {
    std::map<std::string, std::string> kv;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        auto first = line.find_first_not_of(" \t");
        if (first == std::string_view::npos || line[first] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ParseError(source + ":" + std::to_string(line_no) + ": expected key=value");
        }
        auto trim = [](std::string_view s) {
            const auto b = s.find_first_not_of(" \t");
            if (b == std::string_view::npos) return std::string_view{};
            const auto e = s.find_last_not_of(" \t");
            return s.substr(b, e - b + 1);
        };
        const std::string key(trim(line.substr(0, eq)));
        if (key.empty()) throw ParseError(source + ":" + std::to_string(line_no) + ": empty key");
        if (kv.contains(key)) throw ParseError(source + ":" + std::to_string(line_no) + ": duplicate key " + key);
        kv.emplace(key, std::string(trim(line.substr(eq + 1))));
    }
    return kv;
}

std::string format_key_values(const std::map<std::string, std::string>& kv) {
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
    std::filesystem::create_directories(dir);
    std::string manifest;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
        const auto& [name, t] = ckpt.tensors[i];
        if (name.empty() || name.find_first_of("=\n") != std::string::npos) {
            throw InputError("invalid checkpoint tensor name '" + name + "'");
        }
        if (!seen.insert(name).second) throw InputError("duplicate checkpoint tensor name " + name);
        char file[32];
        std::snprintf(file, sizeof(file), "t%05zu.adtn", i);
        write_tensor(dir / file, t);
        manifest += name + "=" + file + "\n";
    }
    write_text_file(dir / "manifest.txt", manifest);
    write_text_file(dir / "config.txt", format_key_values(ckpt.config));
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw InputError("checkpoint directory not found: " + dir.string());
    Checkpoint ckpt;
    const std::string manifest = read_text_file(dir / "manifest.txt");
    // Manifest order is significant, so it is parsed line by line rather than into a map.
    std::istringstream in(manifest);
    std::string line;
    std::size_t line_no = 0;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == line.size()) {
            throw ParseError((dir / "manifest.txt").string() + ":" + std::to_string(line_no) + ": expected name=file");
        }
        const std::string name = line.substr(0, eq);
        const std::string file = line.substr(eq + 1);
        if (file.find('/') != std::string::npos || file.find("..") != std::string::npos) {
            throw ParseError((dir / "manifest.txt").string() + ":" + std::to_string(line_no) + ": bad file name");
        }
        if (!seen.insert(name).second) {
            throw ParseError((dir / "manifest.txt").string() + ":" + std::to_string(line_no) + ": duplicate " + name);
        }
        ckpt.tensors.emplace_back(name, read_tensor_as<float>(dir / file));
    }
    ckpt.config = parse_key_values(read_text_file(dir / "config.txt"), (dir / "config.txt").string());
    return ckpt;
}

template std::string encode_tensor(const Tensor<float>&);
template std::string encode_tensor(const Tensor<double>&);
template void write_tensor(const std::filesystem::path&, const Tensor<float>&);
template void write_tensor(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> read_tensor_as(const std::filesystem::path&);
template Tensor<double> read_tensor_as(const std::filesystem::path&);

}  // namespace avdit
