// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "motionlm/tensor.hpp"

namespace motionlm {

// One quantization level: K embeddings of width d plus the EMA statistics
// that drive codebook learning.
struct Codebook {
    int level = 1;  // 1-based depth
    RowMat embeddings;        // K x d
    Eigen::VectorXd usage_ema;  // EMA of per-code assignment counts
    RowMat sum_ema;             // K x d EMA of assigned latents
};

struct RVQStack {
    std::vector<Codebook> codebooks;
    int d = 0;

    int levels() const { return static_cast<int>(codebooks.size()); }
    int codes_per_level() const {
        return codebooks.empty() ? 0 : static_cast<int>(codebooks[0].embeddings.rows());
    }
    void validate() const;
};

RVQStack make_rvq_stack(int levels, int codes, int d);

// T x L grid; column l holds stream m^l, row t the L codes of latent step t.
using TokenGrid = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct QuantizeResult {
    Eigen::VectorXi codes;          // L
    RowMat residuals;               // L x d; row l-1 holds r^l (r^1 = z)
    Eigen::VectorXd final_residual; // r^{L+1}
};

// r^1 = z; k^l = argmin_k ||r^l - e^l(k)||^2 (ties -> lowest index);
// r^{l+1} = r^l - e^l(k^l).
QuantizeResult quantize_vector(const Eigen::VectorXd& z, const RVQStack& stack);

struct SequenceQuantization {
    TokenGrid codes;                  // T x L
    std::vector<RowMat> residuals;    // per level: R^l, T x d (encoder side)
    std::vector<RowMat> quantized;    // per level: R-hat^l, T x d (embedding side)
};

SequenceQuantization quantize_sequence(const RowMat& z, const RVQStack& stack);

// Sum of embedding lookups across levels.
RowMat dequantize(const TokenGrid& codes, const RVQStack& stack);

// Token file: magic "MTOK", u32 version, u32 T, u32 L, u32 K, then the
// row-major grid as u16 little-endian.
void save_tokens(const std::string& path, const TokenGrid& codes, int codebook_size);
TokenGrid load_tokens(const std::string& path, int* codebook_size = nullptr);

}  // namespace motionlm
