#include "hypergen/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hypergen/errors.hpp"

namespace hypergen::ckpt {

namespace {

constexpr char kMagic[4] = {'H', 'G', 'C', 'P'};

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const std::string& in, size_t at) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    return v;
}

uint64_t get_u64(const std::string& in, size_t at) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    return v;
}

uint64_t double_bits(double d) {
    uint64_t u;
    std::memcpy(&u, &d, sizeof u);
    return u;
}

double bits_double(uint64_t u) {
    double d;
    std::memcpy(&d, &u, sizeof d);
    return d;
}

std::string hex64(uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
    return buf;
}

uint64_t parse_hex64(const std::string& s, const std::string& path) {
    if (s.size() != 18 || s[0] != '0' || s[1] != 'x')
        throw checkpoint_error("checkpoint: malformed fingerprint in " + path);
    return std::strtoull(s.c_str() + 2, nullptr, 16);
}

}  // namespace

void Checkpoint::add(const std::string& name, const ad::Tensor& value) {
    if (!value.defined())
        throw checkpoint_error("checkpoint: array '" + name + "' is undefined");
    if (has(name)) throw checkpoint_error("checkpoint: duplicate array '" + name + "'");
    arrays.emplace_back(name, value);
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& [n, t] : arrays)
        if (n == name) return true;
    return false;
}

const ad::Tensor& Checkpoint::get(const std::string& name) const {
    for (const auto& [n, t] : arrays)
        if (n == name) return t;
    throw checkpoint_error("checkpoint: missing array '" + name + "' in component '" +
                           component + "'");
}

void save(const Checkpoint& c, const std::string& path) {
    nlohmann::json header;
    header["component"] = c.component;
    header["fingerprint"] = hex64(c.fingerprint);
    header["seed"] = c.seed;
    auto& arrs = header["arrays"] = nlohmann::json::array();
    for (const auto& [name, t] : c.arrays) {
        nlohmann::json a;
        a["name"] = name;
        a["shape"] = t.shape();
        a["count"] = t.size();
        arrs.push_back(std::move(a));
    }
    const std::string hjson = header.dump();

    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kFormatVersion);
    put_u64(out, hjson.size());
    out += hjson;
    for (const auto& [name, t] : c.arrays)
        for (double d : t.data()) put_u64(out, double_bits(d));

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw checkpoint_error("checkpoint: cannot open " + tmp + " for writing");
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw checkpoint_error("checkpoint: short write to " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw checkpoint_error("checkpoint: cannot move " + tmp + " to " + path);
}

Checkpoint load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw checkpoint_error("checkpoint: cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string in = ss.str();

    if (in.size() < 16 || std::memcmp(in.data(), kMagic, 4) != 0)
        throw checkpoint_error("checkpoint: " + path + " is not a checkpoint file");
    const uint32_t version = get_u32(in, 4);
    if (version != kFormatVersion)
        throw checkpoint_error("checkpoint: " + path + " has unsupported format version " +
                               std::to_string(version));
    const uint64_t hlen = get_u64(in, 8);
    if (16 + hlen > in.size())
        throw checkpoint_error("checkpoint: truncated header in " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(in.substr(16, hlen));
    } catch (const nlohmann::json::exception&) {
        throw checkpoint_error("checkpoint: corrupt header in " + path);
    }

    Checkpoint c;
    size_t total = 0;
    try {
        c.component = header.at("component").get<std::string>();
        c.fingerprint = parse_hex64(header.at("fingerprint").get<std::string>(), path);
        c.seed = header.at("seed").get<uint64_t>();
        size_t off = 16 + hlen;
        for (const auto& a : header.at("arrays")) {
            const auto name = a.at("name").get<std::string>();
            const auto shape = a.at("shape").get<std::vector<int>>();
            const auto count = a.at("count").get<int64_t>();
            int64_t n = 1;
            for (int d : shape) n *= d;
            if (count < 0 || n != count)
                throw checkpoint_error("checkpoint: inconsistent shape for array '" + name +
                                       "' in " + path);
            if (off + static_cast<size_t>(count) * 8 > in.size())
                throw checkpoint_error("checkpoint: truncated payload in " + path);
            std::vector<double> v(static_cast<size_t>(count));
            for (auto& d : v) {
                d = bits_double(get_u64(in, off));
                off += 8;
            }
            c.arrays.emplace_back(name, ad::Tensor::with_shape(shape, std::move(v)));
            total = off;
        }
    } catch (const nlohmann::json::exception&) {
        throw checkpoint_error("checkpoint: corrupt header in " + path);
    }
    if (total == 0) total = 16 + hlen;
    if (total != in.size())
        throw checkpoint_error("checkpoint: trailing bytes in " + path);
    return c;
}

Checkpoint load_expected(const std::string& path, const std::string& component,
                         uint64_t fingerprint, bool force) {
    Checkpoint c = load(path);
    if (c.component != component)
        throw checkpoint_error("checkpoint: " + path + " holds component '" + c.component +
                               "', expected '" + component + "'");
    if (c.fingerprint != fingerprint && !force)
        throw checkpoint_error("checkpoint: " + path +
                               " was produced by a different config (fingerprint " +
                               hex64(c.fingerprint) + ", expected " + hex64(fingerprint) +
                               "); pass force to load anyway");
    return c;
}

bool file_exists(const std::string& path) {
    std::error_code ec;
    return std::filesystem::exists(path, ec) && !ec;
}

}  // namespace hypergen::ckpt
