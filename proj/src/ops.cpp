// SPDX-License-Identifier: Apache-2.0
#include "motionlm/ops.hpp"

#include <algorithm>
#include <cmath>

namespace motionlm {

namespace {

thread_local bool g_flops_enabled = false;
thread_local uint64_t g_flops = 0;
thread_local uint64_t g_attn_pairs = 0;

void require(bool cond, const char* op, const std::string& msg) {
    if (!cond) throw ShapeError(std::string(op) + ": " + msg);
}

Shape shape2(int r, int c) { return Shape{r, c}; }

}  // namespace

void FlopCounter::add(uint64_t f) { if (g_flops_enabled) g_flops += f; }
uint64_t FlopCounter::count() { return g_flops; }
void FlopCounter::reset() { g_flops = 0; }
void FlopCounter::set_enabled(bool on) { g_flops_enabled = on; }
bool FlopCounter::enabled() { return g_flops_enabled; }

void AttnPairCounter::add(uint64_t pairs) { g_attn_pairs += pairs; }
uint64_t AttnPairCounter::count() { return g_attn_pairs; }
void AttnPairCounter::reset() { g_attn_pairs = 0; }

void check_finite(const Tensor& t, const char* op) {
    if (!t.value().isFinite().all())
        throw NumericError(std::string(op) + ": non-finite input");
}

void matmul_nn(const Real* a, const Real* b, Real* c, int m, int k, int n) {
    FlopCounter::add(2ull * m * k * n);
    // Pack columns of b so every dot runs on contiguous memory.
    RowMat bt(n, k);
    for (int j = 0; j < n; ++j)
        for (int p = 0; p < k; ++p) bt(j, p) = b[static_cast<int64_t>(p) * n + j];
    for (int i = 0; i < m; ++i) {
        ConstVecMap ai(a + static_cast<int64_t>(i) * k, k);
        for (int j = 0; j < n; ++j)
            c[static_cast<int64_t>(i) * n + j] = ai.dot(ConstVecMap(bt.data() + static_cast<int64_t>(j) * k, k));
    }
}

void matmul_nt(const Real* a, const Real* b, Real* c, int m, int k, int n) {
    FlopCounter::add(2ull * m * k * n);
    for (int i = 0; i < m; ++i) {
        ConstVecMap ai(a + static_cast<int64_t>(i) * k, k);
        for (int j = 0; j < n; ++j)
            c[static_cast<int64_t>(i) * n + j] = ai.dot(ConstVecMap(b + static_cast<int64_t>(j) * k, k));
    }
}

Tensor add(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "add",
            "mismatched shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Array v = a.value() + b.value();
    return make_result(a.shape(), std::move(v), "add", {a, b},
                       [pa = a.node(), pb = b.node()](const TensorData& self) {
                           if (pa->requires_grad) pa->accumulate(self.grad);
                           if (pb->requires_grad) pb->accumulate(self.grad);
                       });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "sub",
            "mismatched shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Array v = a.value() - b.value();
    return make_result(a.shape(), std::move(v), "sub", {a, b},
                       [pa = a.node(), pb = b.node()](const TensorData& self) {
                           if (pa->requires_grad) pa->accumulate(self.grad);
                           if (pb->requires_grad) pb->accumulate(-self.grad);
                       });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "mul",
            "mismatched shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Array v = a.value() * b.value();
    return make_result(a.shape(), std::move(v), "mul", {a, b},
                       [pa = a.node(), pb = b.node()](const TensorData& self) {
                           if (pa->requires_grad) pa->accumulate(self.grad * pb->value);
                           if (pb->requires_grad) pb->accumulate(self.grad * pa->value);
                       });
}

Tensor scale(const Tensor& a, Real c) {
    Array v = a.value() * c;
    return make_result(a.shape(), std::move(v), "scale", {a},
                       [pa = a.node(), c](const TensorData& self) {
                           pa->accumulate(self.grad * c);
                       });
}

Tensor abs(const Tensor& a) {
    Array v = a.value().abs();
    return make_result(a.shape(), std::move(v), "abs", {a},
                       [pa = a.node()](const TensorData& self) {
                           pa->accumulate(self.grad * pa->value.sign());
                       });
}

Tensor relu(const Tensor& a) {
    check_finite(a, "relu");
    Array v = a.value().max(0.0);
    return make_result(a.shape(), std::move(v), "relu", {a},
                       [pa = a.node()](const TensorData& self) {
                           pa->accumulate(self.grad * (pa->value > 0.0).cast<Real>());
                       });
}

Tensor gelu(const Tensor& a) {
    check_finite(a, "gelu");
    constexpr Real kInvSqrt2 = 0.7071067811865476;
    Array v(a.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const Real x = a.value()(i);
        v(i) = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    return make_result(a.shape(), std::move(v), "gelu", {a},
                       [pa = a.node()](const TensorData& self) {
                           constexpr Real kInvSqrt2Pi = 0.3989422804014327;
                           Array d(pa->value.size());
                           for (Eigen::Index i = 0; i < d.size(); ++i) {
                               const Real x = pa->value(i);
                               d(i) = 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
                                      x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
                           }
                           pa->accumulate(self.grad * d);
                       });
}

Tensor activation(const Tensor& a, Activation act) {
    return act == Activation::Relu ? relu(a) : gelu(a);
}

Tensor sum(const Tensor& a) {
    Array v = Array::Constant(1, a.value().sum());
    return make_result({1}, std::move(v), "sum", {a},
                       [pa = a.node()](const TensorData& self) {
                           pa->accumulate(Array::Constant(pa->value.size(), self.grad(0)));
                       });
}

Tensor mean(const Tensor& a) {
    const Real inv = 1.0 / static_cast<Real>(a.size());
    Array v = Array::Constant(1, a.value().sum() * inv);
    return make_result({1}, std::move(v), "mean", {a},
                       [pa = a.node(), inv](const TensorData& self) {
                           pa->accumulate(Array::Constant(pa->value.size(), self.grad(0) * inv));
                       });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2, "matmul", "both operands must be rank 2");
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    require(k == k2, "matmul",
            "inner dimensions disagree: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Array v(static_cast<int64_t>(m) * n);
    matmul_nn(a.value().data(), b.value().data(), v.data(), m, k, n);
    return make_result(shape2(m, n), std::move(v), "matmul", {a, b},
                       [pa = a.node(), pb = b.node(), m, k, n](const TensorData& self) {
                           if (pa->requires_grad) {
                               // dA = G * B^T; rows of B are contiguous, so nt applies directly.
                               Array ga(static_cast<int64_t>(m) * k);
                               matmul_nt(self.grad.data(), pb->value.data(), ga.data(), m, n, k);
                               pa->accumulate(ga);
                           }
                           if (pb->requires_grad) {
                               // dB = A^T * G
                               Array gb(static_cast<int64_t>(k) * n);
                               RowMat at(k, m);
                               for (int i = 0; i < m; ++i)
                                   for (int p = 0; p < k; ++p) at(p, i) = pa->value(static_cast<int64_t>(i) * k + p);
                               matmul_nn(at.data(), self.grad.data(), gb.data(), k, m, n);
                               pb->accumulate(gb);
                           }
                       });
}

Tensor transpose(const Tensor& a) {
    require(a.rank() == 2, "transpose", "operand must be rank 2");
    const int m = a.dim(0), n = a.dim(1);
    Array v(static_cast<int64_t>(m) * n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) v(static_cast<int64_t>(j) * m + i) = a.value()(static_cast<int64_t>(i) * n + j);
    return make_result(shape2(n, m), std::move(v), "transpose", {a},
                       [pa = a.node(), m, n](const TensorData& self) {
                           Array g(static_cast<int64_t>(m) * n);
                           for (int i = 0; i < n; ++i)
                               for (int j = 0; j < m; ++j)
                                   g(static_cast<int64_t>(j) * n + i) = self.grad(static_cast<int64_t>(i) * m + j);
                           pa->accumulate(g);
                       });
}

Tensor reshape(const Tensor& a, Shape shape) {
    require(numel(shape) == a.size(), "reshape",
            "cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
    Array v = a.value();
    return make_result(std::move(shape), std::move(v), "reshape", {a},
                       [pa = a.node()](const TensorData& self) {
                           pa->accumulate(self.grad);
                       });
}

Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
    require(x.rank() == 2 && bias.rank() == 1, "add_rowwise", "expects [n,m] and [m]");
    const int n = x.dim(0), m = x.dim(1);
    require(bias.dim(0) == m, "add_rowwise", "bias width mismatch");
    Array v = x.value();
    ConstVecMap b(bias.value().data(), m);
    for (int i = 0; i < n; ++i) VecMap(v.data() + static_cast<int64_t>(i) * m, m) += b;
    return make_result(x.shape(), std::move(v), "add_rowwise", {x, bias},
                       [px = x.node(), pb = bias.node(), n, m](const TensorData& self) {
                           if (px->requires_grad) px->accumulate(self.grad);
                           if (pb->requires_grad) {
                               Array gb = Array::Zero(m);
                               for (int i = 0; i < n; ++i)
                                   VecMap(gb.data(), m) += ConstVecMap(self.grad.data() + static_cast<int64_t>(i) * m, m);
                               pb->accumulate(gb);
                           }
                       });
}

Tensor mul_rowwise(const Tensor& x, const Tensor& gains) {
    require(x.rank() == 2 && gains.rank() == 1, "mul_rowwise", "expects [n,m] and [m]");
    const int n = x.dim(0), m = x.dim(1);
    require(gains.dim(0) == m, "mul_rowwise", "gains width mismatch");
    Array v = x.value();
    for (int i = 0; i < n; ++i)
        VecMap(v.data() + static_cast<int64_t>(i) * m, m).array() *= gains.value();
    return make_result(x.shape(), std::move(v), "mul_rowwise", {x, gains},
                       [px = x.node(), pg = gains.node(), n, m](const TensorData& self) {
                           if (px->requires_grad) {
                               Array gx(self.grad.size());
                               for (int i = 0; i < n; ++i)
                                   for (int j = 0; j < m; ++j)
                                       gx(static_cast<int64_t>(i) * m + j) =
                                           self.grad(static_cast<int64_t>(i) * m + j) * pg->value(j);
                               px->accumulate(gx);
                           }
                           if (pg->requires_grad) {
                               Array gg = Array::Zero(m);
                               for (int i = 0; i < n; ++i)
                                   for (int j = 0; j < m; ++j)
                                       gg(j) += self.grad(static_cast<int64_t>(i) * m + j) *
                                                px->value(static_cast<int64_t>(i) * m + j);
                               pg->accumulate(gg);
                           }
                       });
}

namespace {

// Shared softmax backward: dx = p * (g - rowdot(g, p)).
void softmax_backward_rows(const Array& p, const Array& g, Array& out, int n, int m) {
    for (int i = 0; i < n; ++i) {
        const int64_t off = static_cast<int64_t>(i) * m;
        Real dot = 0;
        for (int j = 0; j < m; ++j) dot += g(off + j) * p(off + j);
        for (int j = 0; j < m; ++j) out(off + j) = p(off + j) * (g(off + j) - dot);
    }
}

}  // namespace

Tensor softmax(const Tensor& x) {
    check_finite(x, "softmax");
    require(x.rank() == 2 || x.rank() == 1, "softmax", "expects rank 1 or 2");
    const int n = x.rank() == 2 ? x.dim(0) : 1;
    const int m = x.rank() == 2 ? x.dim(1) : x.dim(0);
    Array v(x.size());
    for (int i = 0; i < n; ++i) {
        const int64_t off = static_cast<int64_t>(i) * m;
        Real mx = x.value()(off);
        for (int j = 1; j < m; ++j) mx = std::max(mx, x.value()(off + j));
        Real z = 0;
        for (int j = 0; j < m; ++j) { v(off + j) = std::exp(x.value()(off + j) - mx); z += v(off + j); }
        for (int j = 0; j < m; ++j) v(off + j) /= z;
    }
    return make_result(x.shape(), std::move(v), "softmax", {x},
                       [px = x.node(), n, m](const TensorData& self) {
                           Array gx(self.grad.size());
                           softmax_backward_rows(self.value, self.grad, gx, n, m);
                           px->accumulate(gx);
                       });
}

Tensor causal_softmax(const Tensor& scores) {
    check_finite(scores, "causal_softmax");
    require(scores.rank() == 2 && scores.dim(0) == scores.dim(1), "causal_softmax",
            "expects square [n,n] scores");
    const int n = scores.dim(0);
    Array v = Array::Zero(scores.size());
    for (int i = 0; i < n; ++i) {
        const int64_t off = static_cast<int64_t>(i) * n;
        Real mx = scores.value()(off);
        for (int j = 1; j <= i; ++j) mx = std::max(mx, scores.value()(off + j));
        Real z = 0;
        for (int j = 0; j <= i; ++j) { v(off + j) = std::exp(scores.value()(off + j) - mx); z += v(off + j); }
        for (int j = 0; j <= i; ++j) v(off + j) /= z;
        // entries j > i stay exactly zero
    }
    return make_result(scores.shape(), std::move(v), "causal_softmax", {scores},
                       [ps = scores.node(), n](const TensorData& self) {
                           Array gx(self.grad.size());
                           softmax_backward_rows(self.value, self.grad, gx, n, n);
                           ps->accumulate(gx);
                       });
}

Tensor rms_layer_norm(const Tensor& x, const Tensor& gamma, Real eps) {
    check_finite(x, "rms_layer_norm");
    require(x.rank() == 2 && gamma.rank() == 1, "rms_layer_norm", "expects [n,d] and [d]");
    const int n = x.dim(0), d = x.dim(1);
    require(gamma.dim(0) == d, "rms_layer_norm", "gamma width mismatch");
    Array v(x.size());
    Array inv(n);
    for (int i = 0; i < n; ++i) {
        const int64_t off = static_cast<int64_t>(i) * d;
        Real ms = 0;
        for (int j = 0; j < d; ++j) ms += x.value()(off + j) * x.value()(off + j);
        ms = ms / d + eps;
        inv(i) = 1.0 / std::sqrt(ms);
        for (int j = 0; j < d; ++j) v(off + j) = x.value()(off + j) * inv(i) * gamma.value()(j);
    }
    return make_result(x.shape(), std::move(v), "rms_layer_norm", {x, gamma},
                       [px = x.node(), pg = gamma.node(), inv, n, d](const TensorData& self) {
                           if (px->requires_grad) {
                               Array gx(self.grad.size());
                               for (int i = 0; i < n; ++i) {
                                   const int64_t off = static_cast<int64_t>(i) * d;
                                   Real dot = 0;
                                   for (int j = 0; j < d; ++j)
                                       dot += self.grad(off + j) * pg->value(j) * px->value(off + j);
                                   const Real c = inv(i) * inv(i) * inv(i) / d;
                                   for (int j = 0; j < d; ++j)
                                       gx(off + j) = self.grad(off + j) * pg->value(j) * inv(i) -
                                                     c * px->value(off + j) * dot;
                               }
                               px->accumulate(gx);
                           }
                           if (pg->requires_grad) {
                               Array gg = Array::Zero(d);
                               for (int i = 0; i < n; ++i) {
                                   const int64_t off = static_cast<int64_t>(i) * d;
                                   for (int j = 0; j < d; ++j)
                                       gg(j) += self.grad(off + j) * px->value(off + j) * inv(i);
                               }
                               pg->accumulate(gg);
                           }
                       });
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
    check_finite(x, "conv1d");
    require(x.rank() == 2, "conv1d", "input must be [C_in, T]");
    require(w.rank() == 3, "conv1d", "weight must be [C_out, C_in, k]");
    const int cin = x.dim(0), t = x.dim(1);
    const int cout = w.dim(0), k = w.dim(2);
    require(w.dim(1) == cin, "conv1d", "channel mismatch: input " + shape_str(x.shape()) +
                                            " weight " + shape_str(w.shape()));
    require(bias.rank() == 1 && bias.dim(0) == cout, "conv1d", "bias must be [C_out]");
    require(stride >= 1 && pad >= 0, "conv1d", "stride must be >= 1 and pad >= 0");
    const int tp = t + 2 * pad;
    require(tp >= k, "conv1d", "kernel longer than padded input");
    const int lout = (tp - k) / stride + 1;

    // im2col: [C_in*k, L_out]
    Array cols = Array::Zero(static_cast<int64_t>(cin) * k * lout);
    for (int ci = 0; ci < cin; ++ci)
        for (int j = 0; j < k; ++j) {
            const int64_t row = static_cast<int64_t>(ci) * k + j;
            for (int o = 0; o < lout; ++o) {
                const int pos = o * stride + j - pad;
                if (pos >= 0 && pos < t) cols(row * lout + o) = x.value()(static_cast<int64_t>(ci) * t + pos);
            }
        }
    Array v(static_cast<int64_t>(cout) * lout);
    matmul_nn(w.value().data(), cols.data(), v.data(), cout, cin * k, lout);
    for (int co = 0; co < cout; ++co)
        for (int o = 0; o < lout; ++o) v(static_cast<int64_t>(co) * lout + o) += bias.value()(co);

    return make_result(shape2(cout, lout), std::move(v), "conv1d", {x, w, bias},
                       [px = x.node(), pw = w.node(), pb = bias.node(), cols, cin, t, cout, k,
                        stride, pad, lout](const TensorData& self) {
                           const Array& g = self.grad;
                           if (pb->requires_grad) {
                               Array gb = Array::Zero(cout);
                               for (int co = 0; co < cout; ++co)
                                   for (int o = 0; o < lout; ++o) gb(co) += g(static_cast<int64_t>(co) * lout + o);
                               pb->accumulate(gb);
                           }
                           if (pw->requires_grad) {
                               // dW = G (cout x lout) * cols^T (lout x cin*k)
                               Array gw(static_cast<int64_t>(cout) * cin * k);
                               matmul_nt(g.data(), cols.data(), gw.data(), cout, lout, cin * k);
                               pw->accumulate(gw);
                           }
                           if (px->requires_grad) {
                               // dcols = W^T (cin*k x cout) * G (cout x lout), then col2im.
                               const int ck = cin * k;
                               RowMat wt(ck, cout);
                               for (int co = 0; co < cout; ++co)
                                   for (int r = 0; r < ck; ++r) wt(r, co) = pw->value(static_cast<int64_t>(co) * ck + r);
                               Array dcols(static_cast<int64_t>(ck) * lout);
                               matmul_nn(wt.data(), g.data(), dcols.data(), ck, cout, lout);
                               Array gx = Array::Zero(static_cast<int64_t>(cin) * t);
                               for (int ci = 0; ci < cin; ++ci)
                                   for (int j = 0; j < k; ++j) {
                                       const int64_t row = static_cast<int64_t>(ci) * k + j;
                                       for (int o = 0; o < lout; ++o) {
                                           const int pos = o * stride + j - pad;
                                           if (pos >= 0 && pos < t)
                                               gx(static_cast<int64_t>(ci) * t + pos) += dcols(row * lout + o);
                                       }
                                   }
                               px->accumulate(gx);
                           }
                       });
}

Tensor upsample_repeat(const Tensor& x, int factor) {
    require(x.rank() == 2, "upsample_repeat", "input must be [C, T]");
    require(factor >= 1, "upsample_repeat", "factor must be >= 1");
    const int c = x.dim(0), t = x.dim(1);
    Array v(static_cast<int64_t>(c) * t * factor);
    for (int ci = 0; ci < c; ++ci)
        for (int u = 0; u < t; ++u)
            for (int r = 0; r < factor; ++r)
                v(static_cast<int64_t>(ci) * t * factor + u * factor + r) = x.value()(static_cast<int64_t>(ci) * t + u);
    return make_result(shape2(c, t * factor), std::move(v), "upsample_repeat", {x},
                       [px = x.node(), c, t, factor](const TensorData& self) {
                           Array gx = Array::Zero(static_cast<int64_t>(c) * t);
                           for (int ci = 0; ci < c; ++ci)
                               for (int u = 0; u < t; ++u)
                                   for (int r = 0; r < factor; ++r)
                                       gx(static_cast<int64_t>(ci) * t + u) +=
                                           self.grad(static_cast<int64_t>(ci) * t * factor + u * factor + r);
                           px->accumulate(gx);
                       });
}

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
    require(table.rank() == 2, "embedding_lookup", "table must be [V, d]");
    const int vsize = table.dim(0), d = table.dim(1);
    for (int id : ids)
        if (id < 0 || id >= vsize)
            throw IndexError("embedding_lookup: id " + std::to_string(id) + " outside table of " +
                             std::to_string(vsize));
    const int n = static_cast<int>(ids.size());
    Array v(static_cast<int64_t>(n) * d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            v(static_cast<int64_t>(i) * d + j) = table.value()(static_cast<int64_t>(ids[i]) * d + j);
    return make_result(shape2(n, d), std::move(v), "embedding_lookup", {table},
                       [pt = table.node(), ids, n, d](const TensorData& self) {
                           Array gt = Array::Zero(pt->value.size());
                           for (int i = 0; i < n; ++i)
                               for (int j = 0; j < d; ++j)
                                   gt(static_cast<int64_t>(ids[i]) * d + j) += self.grad(static_cast<int64_t>(i) * d + j);
                           pt->accumulate(gt);
                       });
}

Tensor select_rows(const Tensor& x, const std::vector<int>& idx) {
    require(x.rank() == 2, "select_rows", "input must be rank 2");
    const int n = x.dim(0), d = x.dim(1);
    for (int i : idx)
        if (i < 0 || i >= n) throw IndexError("select_rows: row " + std::to_string(i) + " out of range");
    const int m = static_cast<int>(idx.size());
    Array v(static_cast<int64_t>(m) * d);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) v(static_cast<int64_t>(i) * d + j) = x.value()(static_cast<int64_t>(idx[i]) * d + j);
    return make_result(shape2(m, d), std::move(v), "select_rows", {x},
                       [px = x.node(), idx, m, d](const TensorData& self) {
                           Array gx = Array::Zero(px->value.size());
                           for (int i = 0; i < m; ++i)
                               for (int j = 0; j < d; ++j)
                                   gx(static_cast<int64_t>(idx[i]) * d + j) += self.grad(static_cast<int64_t>(i) * d + j);
                           px->accumulate(gx);
                       });
}

Tensor scatter_rows_add(const Tensor& base, const Tensor& rows, const std::vector<int>& idx) {
    require(base.rank() == 2 && rows.rank() == 2, "scatter_rows_add", "operands must be rank 2");
    const int n = base.dim(0), d = base.dim(1);
    require(rows.dim(1) == d, "scatter_rows_add", "row width mismatch");
    require(rows.dim(0) == static_cast<int>(idx.size()), "scatter_rows_add", "index count mismatch");
    for (int i : idx)
        if (i < 0 || i >= n) throw IndexError("scatter_rows_add: row " + std::to_string(i) + " out of range");
    const int m = static_cast<int>(idx.size());
    Array v = base.value();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) v(static_cast<int64_t>(idx[i]) * d + j) += rows.value()(static_cast<int64_t>(i) * d + j);
    return make_result(base.shape(), std::move(v), "scatter_rows_add", {base, rows},
                       [pb = base.node(), pr = rows.node(), idx, m, d](const TensorData& self) {
                           if (pb->requires_grad) pb->accumulate(self.grad);
                           if (pr->requires_grad) {
                               Array gr(static_cast<int64_t>(m) * d);
                               for (int i = 0; i < m; ++i)
                                   for (int j = 0; j < d; ++j)
                                       gr(static_cast<int64_t>(i) * d + j) = self.grad(static_cast<int64_t>(idx[i]) * d + j);
                               pr->accumulate(gr);
                           }
                       });
}

Tensor slice_cols(const Tensor& x, int col0, int width) {
    require(x.rank() == 2, "slice_cols", "input must be rank 2");
    const int n = x.dim(0), m = x.dim(1);
    require(col0 >= 0 && width >= 1 && col0 + width <= m, "slice_cols", "slice out of range");
    Array v(static_cast<int64_t>(n) * width);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < width; ++j) v(static_cast<int64_t>(i) * width + j) = x.value()(static_cast<int64_t>(i) * m + col0 + j);
    return make_result(shape2(n, width), std::move(v), "slice_cols", {x},
                       [px = x.node(), col0, width, n, m](const TensorData& self) {
                           Array gx = Array::Zero(px->value.size());
                           for (int i = 0; i < n; ++i)
                               for (int j = 0; j < width; ++j)
                                   gx(static_cast<int64_t>(i) * m + col0 + j) = self.grad(static_cast<int64_t>(i) * width + j);
                           px->accumulate(gx);
                       });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat_cols", "no parts");
    const int n = parts[0].dim(0);
    int total = 0;
    for (const auto& p : parts) {
        require(p.rank() == 2 && p.dim(0) == n, "concat_cols", "row count mismatch");
        total += p.dim(1);
    }
    Array v(static_cast<int64_t>(n) * total);
    int off = 0;
    for (const auto& p : parts) {
        const int w = p.dim(1);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < w; ++j) v(static_cast<int64_t>(i) * total + off + j) = p.value()(static_cast<int64_t>(i) * w + j);
        off += w;
    }
    std::vector<int> widths;
    for (const auto& p : parts) widths.push_back(p.dim(1));
    return make_result(shape2(n, total), std::move(v), "concat_cols", parts,
                       [widths, n, total](const TensorData& self) {
                           int off2 = 0;
                           for (size_t pi = 0; pi < widths.size(); ++pi) {
                               const int w = widths[pi];
                               auto& parent = self.parents[pi];
                               if (parent->requires_grad) {
                                   Array gp(static_cast<int64_t>(n) * w);
                                   for (int i = 0; i < n; ++i)
                                       for (int j = 0; j < w; ++j)
                                           gp(static_cast<int64_t>(i) * w + j) = self.grad(static_cast<int64_t>(i) * total + off2 + j);
                                   parent->accumulate(gp);
                               }
                               off2 += w;
                           }
                       });
}

Tensor cross_entropy_per_row(const Tensor& logits, const std::vector<int>& targets) {
    check_finite(logits, "cross_entropy");
    require(logits.rank() == 2, "cross_entropy", "logits must be [n, V]");
    const int n = logits.dim(0), vsize = logits.dim(1);
    require(static_cast<int>(targets.size()) == n, "cross_entropy", "target count mismatch");
    for (int tgt : targets)
        if (tgt < 0 || tgt >= vsize)
            throw IndexError("cross_entropy: target " + std::to_string(tgt) + " outside [0," +
                             std::to_string(vsize) + ")");
    Array v(n);
    Array probs(logits.size());
    for (int i = 0; i < n; ++i) {
        const int64_t off = static_cast<int64_t>(i) * vsize;
        Real mx = logits.value()(off);
        for (int j = 1; j < vsize; ++j) mx = std::max(mx, logits.value()(off + j));
        Real z = 0;
        for (int j = 0; j < vsize; ++j) { probs(off + j) = std::exp(logits.value()(off + j) - mx); z += probs(off + j); }
        for (int j = 0; j < vsize; ++j) probs(off + j) /= z;
        v(i) = std::log(z) + mx - logits.value()(off + targets[i]);
    }
    return make_result({n}, std::move(v), "cross_entropy", {logits},
                       [pl = logits.node(), probs, targets, n, vsize](const TensorData& self) {
                           Array gx(pl->value.size());
                           for (int i = 0; i < n; ++i) {
                               const int64_t off = static_cast<int64_t>(i) * vsize;
                               const Real gi = self.grad(i);
                               for (int j = 0; j < vsize; ++j) gx(off + j) = gi * probs(off + j);
                               gx(off + targets[i]) -= gi;
                           }
                           pl->accumulate(gx);
                       });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    return mean(cross_entropy_per_row(logits, targets));
}

Tensor stop_gradient(const Tensor& x) {
    auto node = std::make_shared<TensorData>();
    node->shape = x.shape();
    node->value = x.value();
    node->requires_grad = false;
    node->op = "stop_gradient";
    return Tensor(std::move(node));
}

}  // namespace motionlm
