// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "motionlm/tensor.hpp"

namespace motionlm {

// Multiply-add counter for the instrumented FLOP oracle. Enabled only
// around forward passes under test; matmul kernels add 2*m*k*n.
struct FlopCounter {
    static void add(uint64_t f);
    static uint64_t count();
    static void reset();
    static void set_enabled(bool on);
    static bool enabled();
};

// Counts attended position pairs (one increment of n^2 per attention layer).
struct AttnPairCounter {
    static void add(uint64_t pairs);
    static uint64_t count();
    static void reset();
};

// Elementwise
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real c);
Tensor abs(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);

enum class Activation { Relu, Gelu };
Tensor activation(const Tensor& a, Activation act);

// Reductions
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Linear algebra (rank-2 row-major)
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

// Row-wise broadcast over the last axis of an [n, m] tensor.
Tensor add_rowwise(const Tensor& x, const Tensor& bias);
Tensor mul_rowwise(const Tensor& x, const Tensor& gains);

// Softmax over the last axis.
Tensor softmax(const Tensor& x);
// Softmax over [n, n] scores where row i may attend columns 0..i only.
// Disallowed entries are exactly zero in the output.
Tensor causal_softmax(const Tensor& scores);

// Root-mean-square normalization over the last axis, scale only.
Tensor rms_layer_norm(const Tensor& x, const Tensor& gamma, Real eps = 1e-6);

// x: [C_in, T], w: [C_out, C_in, k], bias: [C_out]; zero padding both sides.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);
// [C, T] -> [C, T*factor] by repeating each column `factor` times.
Tensor upsample_repeat(const Tensor& x, int factor);

// table: [V, d]; out row i = table row ids[i].
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);
Tensor select_rows(const Tensor& x, const std::vector<int>& idx);
// out = base, then out[idx[i]] += rows[i] for each i.
Tensor scatter_rows_add(const Tensor& base, const Tensor& rows, const std::vector<int>& idx);
Tensor slice_cols(const Tensor& x, int col0, int width);
Tensor concat_cols(const std::vector<Tensor>& parts);

// Per-row -log softmax(logits)[target]; numerically stable.
Tensor cross_entropy_per_row(const Tensor& logits, const std::vector<int>& targets);
// Mean of the per-row losses.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);

// Values copied, gradient severed.
Tensor stop_gradient(const Tensor& x);

void check_finite(const Tensor& t, const char* op);

// Low-level kernels (row-major buffers). Each output element is a pure
// function of one row of `a` and one row/column of `b`, so computing a row
// subset gives bitwise the same values as computing the full product.
void matmul_nn(const Real* a, const Real* b, Real* c, int m, int k, int n);
void matmul_nt(const Real* a, const Real* b, Real* c, int m, int k, int n);  // c = a * b^T, b is n x k

}  // namespace motionlm
