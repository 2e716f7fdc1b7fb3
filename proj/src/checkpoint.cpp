// SPDX-License-Identifier: Apache-2.0
#include "motionlm/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace motionlm {

namespace {

constexpr char kMagic[4] = {'M', 'L', 'M', 'C'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n, const char* what) const {
        if (pos + n > buf.size())
            throw ParseError(std::string("checkpoint truncated reading ") + what + " at byte " +
                             std::to_string(pos));
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    double f64(const char* what) {
        need(8, what);
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string bytes(size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out.append(name);
        put_u32(out, static_cast<uint32_t>(t.shape().size()));
        for (int d : t.shape()) put_u32(out, static_cast<uint32_t>(d));
        for (Eigen::Index i = 0; i < t.value().size(); ++i) put_f64(out, t.value()(i));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ParseError("cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

NamedTensors load_checkpoint(const std::string& path) {
    const std::string buf = read_file(path);
    Reader r{buf};
    const std::string magic = r.bytes(4, "magic");
    if (std::memcmp(magic.data(), kMagic, 4) != 0)
        throw ParseError("checkpoint magic mismatch in " + path);
    const uint32_t version = r.u32("version");
    if (version != kVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(version));
    const uint32_t count = r.u32("entry count");
    NamedTensors out;
    out.reserve(count);
    for (uint32_t e = 0; e < count; ++e) {
        const uint32_t name_len = r.u32("name length");
        const std::string name = r.bytes(name_len, "name");
        const uint32_t rank = r.u32("rank");
        Shape shape(rank);
        for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int>(r.u32("dim"));
        const int64_t n = numel(shape);
        Array values(n);
        for (int64_t i = 0; i < n; ++i) values(i) = r.f64("value");
        out.emplace_back(name, Tensor::from_flat(std::move(shape), std::move(values)));
    }
    return out;
}

void restore_into(const NamedTensors& loaded, NamedTensors& live) {
    std::map<std::string, Tensor> by_name;
    for (const auto& [name, t] : loaded) by_name.emplace(name, t);
    for (auto& [name, t] : live) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ParseError("checkpoint is missing tensor " + name);
        if (it->second.shape() != t.shape())
            throw ShapeError("checkpoint tensor " + name + " has shape " +
                             shape_str(it->second.shape()) + ", expected " + shape_str(t.shape()));
        t.value() = it->second.value();
    }
}

namespace {

// Plain SHA-1 (RFC 3174); used for content hashes in run reports.
struct Sha1 {
    uint32_t h[5] = {0x67452301u, 0xEFCDAB89u, 0x98BADCFEu, 0x10325476u, 0xC3D2E1F0u};
    std::array<uint8_t, 64> block{};
    size_t block_len = 0;
    uint64_t total_bits = 0;

    static uint32_t rol(uint32_t v, int s) { return (v << s) | (v >> (32 - s)); }

    void process() {
        uint32_t w[80];
        for (int i = 0; i < 16; ++i)
            w[i] = (static_cast<uint32_t>(block[4 * i]) << 24) | (static_cast<uint32_t>(block[4 * i + 1]) << 16) |
                   (static_cast<uint32_t>(block[4 * i + 2]) << 8) | static_cast<uint32_t>(block[4 * i + 3]);
        for (int i = 16; i < 80; ++i) w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);
        uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4];
        for (int i = 0; i < 80; ++i) {
            uint32_t f, k;
            if (i < 20) { f = (b & c) | ((~b) & d); k = 0x5A827999u; }
            else if (i < 40) { f = b ^ c ^ d; k = 0x6ED9EBA1u; }
            else if (i < 60) { f = (b & c) | (b & d) | (c & d); k = 0x8F1BBCDCu; }
            else { f = b ^ c ^ d; k = 0xCA62C1D6u; }
            const uint32_t tmp = rol(a, 5) + f + e + k + w[i];
            e = d; d = c; c = rol(b, 30); b = a; a = tmp;
        }
        h[0] += a; h[1] += b; h[2] += c; h[3] += d; h[4] += e;
    }

    void update(const uint8_t* data, size_t len) {
        total_bits += static_cast<uint64_t>(len) * 8;
        for (size_t i = 0; i < len; ++i) {
            block[block_len++] = data[i];
            if (block_len == 64) { process(); block_len = 0; }
        }
    }

    std::string finish() {
        const uint64_t bits = total_bits;
        const uint8_t pad = 0x80;
        update(&pad, 1);
        const uint8_t zero = 0;
        while (block_len != 56) update(&zero, 1);
        uint8_t len_be[8];
        for (int i = 0; i < 8; ++i) len_be[i] = static_cast<uint8_t>((bits >> (56 - 8 * i)) & 0xff);
        // update() would re-count these bytes; write them directly.
        for (int i = 0; i < 8; ++i) {
            block[block_len++] = len_be[i];
            if (block_len == 64) { process(); block_len = 0; }
        }
        static const char* hex = "0123456789abcdef";
        std::string out;
        for (uint32_t v : h)
            for (int i = 28; i >= 0; i -= 4) out.push_back(hex[(v >> i) & 0xf]);
        return out;
    }
};

}  // namespace

std::string sha1_hex(const std::string& bytes) {
    Sha1 s;
    s.update(reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size());
    return s.finish();
}

std::string sha1_file(const std::string& path) { return sha1_hex(read_file(path)); }

}  // namespace motionlm
