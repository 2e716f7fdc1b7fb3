// SPDX-License-Identifier: Apache-2.0
#include "motionlm/rvq.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace motionlm {

void RVQStack::validate() const {
    if (codebooks.empty()) throw ConfigError("rvq stack has no codebooks");
    const int k = codes_per_level();
    for (const auto& cb : codebooks) {
        if (cb.embeddings.rows() != k || cb.embeddings.cols() != d)
            throw ConfigError("rvq codebooks must share K and d");
        if (!cb.embeddings.allFinite()) throw NumericError("rvq codebook has non-finite embeddings");
    }
}

RVQStack make_rvq_stack(int levels, int codes, int d) {
    if (levels < 1 || codes < 1 || d < 1)
        throw ConfigError("rvq stack needs levels, codes and d all >= 1");
    RVQStack stack;
    stack.d = d;
    stack.codebooks.resize(levels);
    for (int l = 0; l < levels; ++l) {
        auto& cb = stack.codebooks[l];
        cb.level = l + 1;
        cb.embeddings = RowMat::Zero(codes, d);
        cb.usage_ema = Eigen::VectorXd::Zero(codes);
        cb.sum_ema = RowMat::Zero(codes, d);
    }
    return stack;
}

QuantizeResult quantize_vector(const Eigen::VectorXd& z, const RVQStack& stack) {
    if (z.size() != stack.d)
        throw ShapeError("quantize_vector: input width " + std::to_string(z.size()) +
                         " does not match stack d=" + std::to_string(stack.d));
    const int levels = stack.levels();
    QuantizeResult out;
    out.codes.resize(levels);
    out.residuals.resize(levels, stack.d);
    Eigen::VectorXd r = z;
    for (int l = 0; l < levels; ++l) {
        out.residuals.row(l) = r.transpose();
        const RowMat& emb = stack.codebooks[l].embeddings;
        int best = 0;
        Real best_dist = (r.transpose() - emb.row(0)).squaredNorm();
        for (int k = 1; k < emb.rows(); ++k) {
            const Real dist = (r.transpose() - emb.row(k)).squaredNorm();
            if (dist < best_dist) { best_dist = dist; best = k; }
        }
        out.codes(l) = best;
        r -= emb.row(best).transpose();
    }
    out.final_residual = r;
    return out;
}

SequenceQuantization quantize_sequence(const RowMat& z, const RVQStack& stack) {
    if (z.cols() != stack.d)
        throw ShapeError("quantize_sequence: latent width " + std::to_string(z.cols()) +
                         " does not match stack d=" + std::to_string(stack.d));
    const int t_len = static_cast<int>(z.rows());
    const int levels = stack.levels();
    SequenceQuantization out;
    out.codes.resize(t_len, levels);
    out.residuals.assign(levels, RowMat(t_len, stack.d));
    out.quantized.assign(levels, RowMat(t_len, stack.d));
    for (int t = 0; t < t_len; ++t) {
        QuantizeResult q = quantize_vector(z.row(t).transpose(), stack);
        for (int l = 0; l < levels; ++l) {
            out.codes(t, l) = q.codes(l);
            out.residuals[l].row(t) = q.residuals.row(l);
            out.quantized[l].row(t) = stack.codebooks[l].embeddings.row(q.codes(l));
        }
    }
    return out;
}

RowMat dequantize(const TokenGrid& codes, const RVQStack& stack) {
    const int levels = stack.levels();
    const int k = stack.codes_per_level();
    if (codes.cols() != levels)
        throw ShapeError("dequantize: grid has " + std::to_string(codes.cols()) +
                         " streams, stack has " + std::to_string(levels));
    RowMat out = RowMat::Zero(codes.rows(), stack.d);
    for (int t = 0; t < codes.rows(); ++t)
        for (int l = 0; l < levels; ++l) {
            const int c = codes(t, l);
            if (c < 0 || c >= k)
                throw IndexError("dequantize: code " + std::to_string(c) + " outside [0," +
                                 std::to_string(k) + ") at step " + std::to_string(t));
            out.row(t) += stack.codebooks[l].embeddings.row(c);
        }
    return out;
}

namespace {
constexpr char kTokenMagic[4] = {'M', 'T', 'O', 'K'};
constexpr uint32_t kTokenVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}
}  // namespace

void save_tokens(const std::string& path, const TokenGrid& codes, int codebook_size) {
    if (codebook_size < 1 || codebook_size > 65535)
        throw ConfigError("token file stores u16 codes; K must be in [1, 65535]");
    std::string out;
    out.append(kTokenMagic, 4);
    put_u32(out, kTokenVersion);
    put_u32(out, static_cast<uint32_t>(codes.rows()));
    put_u32(out, static_cast<uint32_t>(codes.cols()));
    put_u32(out, static_cast<uint32_t>(codebook_size));
    for (int t = 0; t < codes.rows(); ++t)
        for (int l = 0; l < codes.cols(); ++l) {
            const int c = codes(t, l);
            if (c < 0 || c >= codebook_size)
                throw IndexError("save_tokens: code " + std::to_string(c) + " outside [0," +
                                 std::to_string(codebook_size) + ")");
            put_u16(out, static_cast<uint16_t>(c));
        }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ParseError("cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

TokenGrid load_tokens(const std::string& path, int* codebook_size) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string buf = ss.str();
    size_t pos = 0;
    auto need = [&](size_t n, const char* what) {
        if (pos + n > buf.size())
            throw ParseError(path + ": truncated reading " + what + " at byte offset " +
                             std::to_string(pos));
    };
    auto u32 = [&](const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    };
    need(4, "magic");
    if (std::memcmp(buf.data(), kTokenMagic, 4) != 0)
        throw ParseError(path + ": bad token file magic at byte offset 0");
    pos = 4;
    const uint32_t version = u32("version");
    if (version != kTokenVersion)
        throw ParseError(path + ": unsupported token file version " + std::to_string(version));
    const uint32_t t_len = u32("T");
    const uint32_t levels = u32("L");
    const uint32_t k = u32("K");
    TokenGrid grid(t_len, levels);
    for (uint32_t t = 0; t < t_len; ++t)
        for (uint32_t l = 0; l < levels; ++l) {
            need(2, "code");
            const uint16_t c = static_cast<uint16_t>(static_cast<unsigned char>(buf[pos])) |
                               (static_cast<uint16_t>(static_cast<unsigned char>(buf[pos + 1])) << 8);
            pos += 2;
            if (c >= k)
                throw ParseError(path + ": code " + std::to_string(c) + " >= K at byte offset " +
                                 std::to_string(pos - 2));
            grid(t, l) = c;
        }
    if (codebook_size) *codebook_size = static_cast<int>(k);
    return grid;
}

}  // namespace motionlm
