// SPDX-License-Identifier: Apache-2.0
#include "motionlm/fusion.hpp"

#include <cmath>

namespace motionlm {

namespace {

Tensor copy_param(const Tensor& src) {
    return Tensor::from_flat(src.shape(), src.value(), true);
}

FfnParams copy_ffn(const FfnParams& f) {
    return {copy_param(f.w1), copy_param(f.b1), copy_param(f.w2), copy_param(f.b2)};
}

AttnParams copy_attn(const AttnParams& a) {
    return {copy_param(a.wq), copy_param(a.wk), copy_param(a.wv), copy_param(a.wo)};
}

LoraSet copy_lora(const LoraSet& s) {
    LoraSet out;
    for (int i = 0; i < 4; ++i) out.proj[i] = {copy_param(s.proj[i].b), copy_param(s.proj[i].a)};
    return out;
}

const char* route_label(Route r) {
    switch (r) {
        case Route::Text: return "text";
        case Route::MotionMain: return "motion";
        case Route::MotionTask: return "task";
    }
    return "?";
}

std::array<std::vector<int>, kNumRoutes> route_indices(const std::vector<Route>& tags) {
    std::array<std::vector<int>, kNumRoutes> idx;
    for (size_t i = 0; i < tags.size(); ++i) {
        const int r = static_cast<int>(tags[i]);
        if (r < 0 || r >= kNumRoutes)
            throw RoutingError("unknown route tag at position " + std::to_string(i));
        idx[r].push_back(static_cast<int>(i));
    }
    return idx;
}

Tensor ffn_forward(const Tensor& x, const FfnParams& p, Activation act) {
    Tensor h = activation(add_rowwise(matmul(x, p.w1), p.b1), act);
    return add_rowwise(matmul(h, p.w2), p.b2);
}

// Multi-head causal attention over precomputed projections; scaling is
// per-head 1/sqrt(d_k/h).
Tensor mhsa_core(const Tensor& q, const Tensor& k, const Tensor& v, int n_heads) {
    const int n = q.dim(0), d = q.dim(1);
    if (d % n_heads != 0) throw ConfigError("d_model must be divisible by the head count");
    const int dh = d / n_heads;
    const Real inv_sqrt = 1.0 / std::sqrt(static_cast<Real>(dh));
    AttnPairCounter::add(static_cast<uint64_t>(n) * n);
    std::vector<Tensor> heads;
    heads.reserve(n_heads);
    for (int i = 0; i < n_heads; ++i) {
        Tensor qi = slice_cols(q, i * dh, dh);
        Tensor ki = slice_cols(k, i * dh, dh);
        Tensor vi = slice_cols(v, i * dh, dh);
        Tensor scores = scale(matmul(qi, transpose(ki)), inv_sqrt);
        Tensor probs = causal_softmax(scores);
        heads.push_back(matmul(probs, vi));
    }
    return n_heads == 1 ? heads[0] : concat_cols(heads);
}

}  // namespace

const char* variant_name(VariantKind k) {
    switch (k) {
        case VariantKind::Prototype: return "prototype";
        case VariantKind::LoRA: return "lora";
        case VariantKind::MoE: return "moe";
        case VariantKind::MIS: return "mis";
    }
    return "?";
}

VariantKind variant_from_name(const std::string& name) {
    if (name == "prototype") return VariantKind::Prototype;
    if (name == "lora") return VariantKind::LoRA;
    if (name == "moe") return VariantKind::MoE;
    if (name == "mis") return VariantKind::MIS;
    throw ConfigError("unknown variant: " + name + " (expected prototype|lora|moe|mis)");
}

BlockParams make_prototype_block(const BlockConfig& config, Rng& rng, Real init_std) {
    const int d = config.d_model, df = config.d_ff;
    BlockParams b;
    b.ln1 = Tensor::from_flat({d}, Array::Constant(d, 1.0), true);
    b.ln2 = Tensor::from_flat({d}, Array::Constant(d, 1.0), true);
    b.attn.wq = Tensor::randn({d, d}, rng, init_std, true);
    b.attn.wk = Tensor::randn({d, d}, rng, init_std, true);
    b.attn.wv = Tensor::randn({d, d}, rng, init_std, true);
    b.attn.wo = Tensor::randn({d, d}, rng, init_std, true);
    b.ffn.w1 = Tensor::randn({d, df}, rng, init_std, true);
    b.ffn.b1 = Tensor::zeros({df}, true);
    b.ffn.w2 = Tensor::randn({df, d}, rng, init_std, true);
    b.ffn.b2 = Tensor::zeros({d}, true);
    return b;
}

BlockParams build_variant(const BlockParams& base, const BlockConfig& config,
                          const TowerVariant& variant, Rng& rng) {
    BlockParams out = base;  // shared handles; variant slots added below
    switch (variant.kind) {
        case VariantKind::Prototype:
            break;
        case VariantKind::LoRA: {
            if (variant.lora_rank < 1)
                throw ConfigError("LoRA rank must be >= 1");
            if (variant.lora_rank >= config.d_model)
                throw ConfigError("LoRA rank " + std::to_string(variant.lora_rank) +
                                  " must stay below d_model=" + std::to_string(config.d_model));
            for (Route r : {Route::Text, Route::MotionMain}) {
                LoraSet set;
                for (int p = 0; p < 4; ++p) {
                    set.proj[p].b = Tensor::zeros({config.d_model, variant.lora_rank}, true);
                    set.proj[p].a = Tensor::randn({variant.lora_rank, config.d_model}, rng, 0.02, true);
                }
                out.lora[static_cast<int>(r)] = std::move(set);
            }
            break;
        }
        case VariantKind::MoE: {
            out.ffn_expert[static_cast<int>(Route::Text)] = copy_ffn(base.ffn);
            out.ffn_expert[static_cast<int>(Route::MotionMain)] = copy_ffn(base.ffn);
            out.ffn = FfnParams{};  // base FFN fully replaced by the experts
            break;
        }
        case VariantKind::MIS: {
            for (Route r : {Route::Text, Route::MotionMain}) {
                const int i = static_cast<int>(r);
                out.attn_tower[i] = copy_attn(base.attn);
                out.ffn_expert[i] = copy_ffn(base.ffn);
                out.ln1_tower[i] = copy_param(base.ln1);
                out.ln2_tower[i] = copy_param(base.ln2);
            }
            out.attn = AttnParams{};
            out.ffn = FfnParams{};
            out.ln1 = Tensor();
            out.ln2 = Tensor();
            break;
        }
    }
    return out;
}

bool add_task_tower(BlockParams& block, const TowerVariant& variant) {
    const int main = static_cast<int>(Route::MotionMain);
    const int task = static_cast<int>(Route::MotionTask);
    switch (variant.kind) {
        case VariantKind::Prototype:
            return false;
        case VariantKind::LoRA:
            if (!block.lora[main]) throw RoutingError("LoRA block has no motion adapters to clone");
            block.lora[task] = copy_lora(*block.lora[main]);
            return true;
        case VariantKind::MoE:
            if (!block.ffn_expert[main]) throw RoutingError("MoE block has no motion expert to clone");
            block.ffn_expert[task] = copy_ffn(*block.ffn_expert[main]);
            return true;
        case VariantKind::MIS:
            if (!block.attn_tower[main]) throw RoutingError("MIS block has no motion tower to clone");
            block.attn_tower[task] = copy_attn(*block.attn_tower[main]);
            block.ffn_expert[task] = copy_ffn(*block.ffn_expert[main]);
            block.ln1_tower[task] = copy_param(*block.ln1_tower[main]);
            block.ln2_tower[task] = copy_param(*block.ln2_tower[main]);
            return true;
    }
    return false;
}

namespace {

// base (+) per-route low-rank deltas, applied to the rows of each route.
Tensor lora_projection(const Tensor& x, const Tensor& w, const BlockParams& block, int proj,
                       const std::array<std::vector<int>, kNumRoutes>& idx, Real alpha) {
    Tensor out = matmul(x, w);
    for (int r = 0; r < kNumRoutes; ++r) {
        if (idx[r].empty()) continue;
        if (!block.lora[r])
            throw RoutingError(std::string("no LoRA adapters for route ") +
                               route_label(static_cast<Route>(r)));
        const LoraAdapter& ad = block.lora[r]->proj[proj];
        Tensor xu = select_rows(x, idx[r]);
        Tensor delta = scale(matmul(matmul(xu, ad.b), ad.a), alpha);
        out = scatter_rows_add(out, delta, idx[r]);
    }
    return out;
}

// Applies one matrix per route to that route's rows.
template <typename GetW>
Tensor routed_matmul(const Tensor& x, const std::array<std::vector<int>, kNumRoutes>& idx,
                     int out_width, GetW&& get_w) {
    Tensor out = Tensor::zeros({x.dim(0), out_width});
    for (int r = 0; r < kNumRoutes; ++r) {
        if (idx[r].empty()) continue;
        Tensor xu = select_rows(x, idx[r]);
        out = scatter_rows_add(out, matmul(xu, get_w(r)), idx[r]);
    }
    return out;
}

template <typename GetGamma>
Tensor routed_rms(const Tensor& x, const std::array<std::vector<int>, kNumRoutes>& idx,
                  GetGamma&& get_gamma) {
    Tensor out = Tensor::zeros(x.shape());
    for (int r = 0; r < kNumRoutes; ++r) {
        if (idx[r].empty()) continue;
        Tensor xu = select_rows(x, idx[r]);
        out = scatter_rows_add(out, rms_layer_norm(xu, get_gamma(r)), idx[r]);
    }
    return out;
}

}  // namespace

Tensor routed_block_forward(const Tensor& x, const std::vector<Route>& tags,
                            const BlockParams& block, const BlockConfig& config,
                            const TowerVariant& variant, Activation act) {
    if (static_cast<int>(tags.size()) != x.dim(0))
        throw RoutingError("one route tag per position required: " + std::to_string(tags.size()) +
                           " tags for " + std::to_string(x.dim(0)) + " positions");
    const auto idx = route_indices(tags);

    switch (variant.kind) {
        case VariantKind::Prototype: {
            Tensor a_in = rms_layer_norm(x, block.ln1);
            Tensor attn_out = mhsa_core(matmul(a_in, block.attn.wq), matmul(a_in, block.attn.wk),
                                        matmul(a_in, block.attn.wv), config.n_heads);
            Tensor h = add(x, matmul(attn_out, block.attn.wo));
            Tensor ffn_out = ffn_forward(rms_layer_norm(x, block.ln2), block.ffn, act);
            return add(h, ffn_out);
        }
        case VariantKind::LoRA: {
            const Real alpha = variant.lora_alpha;
            Tensor a_in = rms_layer_norm(x, block.ln1);
            Tensor q = lora_projection(a_in, block.attn.wq, block, 0, idx, alpha);
            Tensor k = lora_projection(a_in, block.attn.wk, block, 1, idx, alpha);
            Tensor v = lora_projection(a_in, block.attn.wv, block, 2, idx, alpha);
            Tensor attn_out = mhsa_core(q, k, v, config.n_heads);
            Tensor o = lora_projection(attn_out, block.attn.wo, block, 3, idx, alpha);
            Tensor h = add(x, o);
            Tensor ffn_out = ffn_forward(rms_layer_norm(x, block.ln2), block.ffn, act);
            return add(h, ffn_out);
        }
        case VariantKind::MoE: {
            Tensor a_in = rms_layer_norm(x, block.ln1);
            Tensor attn_out = mhsa_core(matmul(a_in, block.attn.wq), matmul(a_in, block.attn.wk),
                                        matmul(a_in, block.attn.wv), config.n_heads);
            Tensor h = add(x, matmul(attn_out, block.attn.wo));
            Tensor f_in = rms_layer_norm(x, block.ln2);
            Tensor ffn_out = Tensor::zeros(x.shape());
            for (int r = 0; r < kNumRoutes; ++r) {
                if (idx[r].empty()) continue;
                if (!block.ffn_expert[r])
                    throw RoutingError(std::string("no FFN expert for route ") +
                                       route_label(static_cast<Route>(r)));
                Tensor fu = ffn_forward(select_rows(f_in, idx[r]), *block.ffn_expert[r], act);
                ffn_out = scatter_rows_add(ffn_out, fu, idx[r]);
            }
            return add(h, ffn_out);
        }
        case VariantKind::MIS: {
            for (int r = 0; r < kNumRoutes; ++r)
                if (!idx[r].empty() && !block.attn_tower[r])
                    throw RoutingError(std::string("no MIS tower for route ") +
                                       route_label(static_cast<Route>(r)));
            Tensor a_in = routed_rms(x, idx, [&](int r) { return *block.ln1_tower[r]; });
            Tensor q = routed_matmul(a_in, idx, config.d_model,
                                     [&](int r) { return block.attn_tower[r]->wq; });
            Tensor k = routed_matmul(a_in, idx, config.d_model,
                                     [&](int r) { return block.attn_tower[r]->wk; });
            Tensor v = routed_matmul(a_in, idx, config.d_model,
                                     [&](int r) { return block.attn_tower[r]->wv; });
            Tensor attn_out = mhsa_core(q, k, v, config.n_heads);
            Tensor o = routed_matmul(attn_out, idx, config.d_model,
                                     [&](int r) { return block.attn_tower[r]->wo; });
            Tensor h = add(x, o);
            Tensor f_in = routed_rms(x, idx, [&](int r) { return *block.ln2_tower[r]; });
            Tensor ffn_out = Tensor::zeros(x.shape());
            for (int r = 0; r < kNumRoutes; ++r) {
                if (idx[r].empty()) continue;
                Tensor fu = ffn_forward(select_rows(f_in, idx[r]), *block.ffn_expert[r], act);
                ffn_out = scatter_rows_add(ffn_out, fu, idx[r]);
            }
            return add(h, ffn_out);
        }
    }
    throw ConfigError("unhandled variant");
}

NamedTensors block_named_parameters(const BlockParams& block, const TowerVariant& variant,
                                    const std::string& prefix) {
    NamedTensors out;
    auto add_attn = [&](const AttnParams& a, const std::string& p) {
        out.emplace_back(p + ".wq", a.wq);
        out.emplace_back(p + ".wk", a.wk);
        out.emplace_back(p + ".wv", a.wv);
        out.emplace_back(p + ".wo", a.wo);
    };
    auto add_ffn = [&](const FfnParams& f, const std::string& p) {
        out.emplace_back(p + ".w1", f.w1);
        out.emplace_back(p + ".b1", f.b1);
        out.emplace_back(p + ".w2", f.w2);
        out.emplace_back(p + ".b2", f.b2);
    };
    switch (variant.kind) {
        case VariantKind::Prototype:
            out.emplace_back(prefix + ".ln1", block.ln1);
            out.emplace_back(prefix + ".ln2", block.ln2);
            add_attn(block.attn, prefix + ".attn");
            add_ffn(block.ffn, prefix + ".ffn");
            break;
        case VariantKind::LoRA:
            out.emplace_back(prefix + ".ln1", block.ln1);
            out.emplace_back(prefix + ".ln2", block.ln2);
            add_attn(block.attn, prefix + ".attn");
            add_ffn(block.ffn, prefix + ".ffn");
            for (int r = 0; r < kNumRoutes; ++r) {
                if (!block.lora[r]) continue;
                static const char* proj_names[4] = {"q", "k", "v", "o"};
                for (int p = 0; p < 4; ++p) {
                    const std::string base =
                        prefix + ".lora." + route_label(static_cast<Route>(r)) + "." + proj_names[p];
                    out.emplace_back(base + ".b", block.lora[r]->proj[p].b);
                    out.emplace_back(base + ".a", block.lora[r]->proj[p].a);
                }
            }
            break;
        case VariantKind::MoE:
            out.emplace_back(prefix + ".ln1", block.ln1);
            out.emplace_back(prefix + ".ln2", block.ln2);
            add_attn(block.attn, prefix + ".attn");
            for (int r = 0; r < kNumRoutes; ++r)
                if (block.ffn_expert[r])
                    add_ffn(*block.ffn_expert[r],
                            prefix + ".expert." + route_label(static_cast<Route>(r)));
            break;
        case VariantKind::MIS:
            for (int r = 0; r < kNumRoutes; ++r) {
                if (!block.attn_tower[r]) continue;
                const std::string p = prefix + ".tower." + route_label(static_cast<Route>(r));
                out.emplace_back(p + ".ln1", *block.ln1_tower[r]);
                out.emplace_back(p + ".ln2", *block.ln2_tower[r]);
                add_attn(*block.attn_tower[r], p + ".attn");
                add_ffn(*block.ffn_expert[r], p + ".ffn");
            }
            break;
    }
    return out;
}

int64_t param_count(const BlockConfig& config, const TowerVariant& variant) {
    const int64_t d = config.d_model, df = config.d_ff;
    const int64_t base = 4 * d * d + 2 * df * d;
    switch (variant.kind) {
        case VariantKind::Prototype: return base;
        case VariantKind::LoRA: return base + 16 * d * variant.lora_rank;
        case VariantKind::MoE: return 4 * d * d + 4 * df * d;
        case VariantKind::MIS: return 2 * base;
    }
    return 0;
}

int64_t flop_count(const BlockConfig& config, const TowerVariant& variant, int64_t n_tokens) {
    if (n_tokens < 0) throw ConfigError("flop_count: token count must be non-negative");
    const int64_t d = config.d_model, df = config.d_ff, n = n_tokens;
    const int64_t base = 4 * n * n * d + 8 * n * d * d + 4 * n * d * df;
    if (variant.kind == VariantKind::LoRA) return base + 16 * n * d * variant.lora_rank;
    return base;
}

int64_t enumerate_block_params(const BlockParams& block, const TowerVariant& variant) {
    // Walk the weight matrices the variant's forward actually uses; the
    // paper's convention skips biases and normalization gains.
    int64_t total = 0;
    auto attn_size = [](const AttnParams& a) {
        return a.wq.size() + a.wk.size() + a.wv.size() + a.wo.size();
    };
    auto ffn_size = [](const FfnParams& f) { return f.w1.size() + f.w2.size(); };
    switch (variant.kind) {
        case VariantKind::Prototype:
            total = attn_size(block.attn) + ffn_size(block.ffn);
            break;
        case VariantKind::LoRA:
            total = attn_size(block.attn) + ffn_size(block.ffn);
            for (int r = 0; r < kNumRoutes; ++r)
                if (block.lora[r])
                    for (int p = 0; p < 4; ++p)
                        total += block.lora[r]->proj[p].a.size() + block.lora[r]->proj[p].b.size();
            break;
        case VariantKind::MoE:
            total = attn_size(block.attn);
            for (int r = 0; r < kNumRoutes; ++r)
                if (block.ffn_expert[r]) total += ffn_size(*block.ffn_expert[r]);
            break;
        case VariantKind::MIS:
            for (int r = 0; r < kNumRoutes; ++r) {
                if (block.attn_tower[r]) total += attn_size(*block.attn_tower[r]);
                if (block.ffn_expert[r]) total += ffn_size(*block.ffn_expert[r]);
            }
            break;
    }
    return total;
}

int64_t measure_block_flops(const BlockParams& block, const BlockConfig& config,
                            const TowerVariant& variant, int n_tokens) {
    Rng rng(1234);
    Tensor x = Tensor::randn({n_tokens, config.d_model}, rng, 1.0, false);
    std::vector<Route> tags(n_tokens);
    for (int i = 0; i < n_tokens; ++i) tags[i] = i % 2 == 0 ? Route::MotionMain : Route::Text;
    if (variant.kind == VariantKind::Prototype)
        for (auto& t : tags) t = Route::Text;
    FlopCounter::reset();
    FlopCounter::set_enabled(true);
    routed_block_forward(x, tags, block, config, variant);
    FlopCounter::set_enabled(false);
    return static_cast<int64_t>(FlopCounter::count());
}

}  // namespace motionlm
