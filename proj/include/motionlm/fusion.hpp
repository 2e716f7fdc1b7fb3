// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>

#include "motionlm/checkpoint.hpp"
#include "motionlm/ops.hpp"

namespace motionlm {

enum class VariantKind { Prototype, LoRA, MoE, MIS };

const char* variant_name(VariantKind k);
VariantKind variant_from_name(const std::string& name);

struct TowerVariant {
    VariantKind kind = VariantKind::Prototype;
    int lora_rank = 8;
    Real lora_alpha = 16.0;
};

// Static routes. Text and MotionMain exist from stage 2; MotionTask is the
// stage-3 clone of the motion tower.
enum class Route { Text = 0, MotionMain = 1, MotionTask = 2 };
constexpr int kNumRoutes = 3;

struct BlockConfig {
    int d_model = 48;  // d_k
    int d_ff = 96;     // d_f
    int n_heads = 4;   // h
};

struct AttnParams {
    Tensor wq, wk, wv, wo;  // each [d, d]
};

struct FfnParams {
    Tensor w1, b1, w2, b2;  // w1 [d, d_f], w2 [d_f, d]
};

// Low-rank pair; applied to a row vector as x -> alpha * (x B) A.
struct LoraAdapter {
    Tensor b;  // [d, r], zero at build so delta W = BA = 0
    Tensor a;  // [r, d]
};

struct LoraSet {
    std::array<LoraAdapter, 4> proj;  // Q, K, V, O
};

// Parameter home for one transformer block under any variant. Slots that a
// variant does not use stay disengaged.
struct BlockParams {
    // shared set (Prototype; LoRA base; MoE attention+LN)
    Tensor ln1, ln2;
    AttnParams attn;
    FfnParams ffn;
    // per-route extensions
    std::array<std::optional<LoraSet>, kNumRoutes> lora;       // LoRA
    std::array<std::optional<FfnParams>, kNumRoutes> ffn_expert;  // MoE + MIS
    std::array<std::optional<AttnParams>, kNumRoutes> attn_tower;  // MIS
    std::array<std::optional<Tensor>, kNumRoutes> ln1_tower, ln2_tower;  // MIS
};

BlockParams make_prototype_block(const BlockConfig& config, Rng& rng, Real init_std = 0.02);

// Constructs the variant's parameter sets from a prototype block:
// LoRA B=0/A small normal, MoE experts copy the base FFN, MIS towers copy
// the whole block. Prototype returns the block unchanged.
BlockParams build_variant(const BlockParams& base, const BlockConfig& config,
                          const TowerVariant& variant, Rng& rng);

// Stage-3 clone: duplicates the MotionMain parameter set into the
// MotionTask slot. Returns false for Prototype (no motion tower exists).
bool add_task_tower(BlockParams& block, const TowerVariant& variant);

// h = x + MHSA(LN(x; ln1)); x' = h + FFN(LN(x; ln2)), with the variant's
// routing applied per position tag. Attention spans all positions.
Tensor routed_block_forward(const Tensor& x, const std::vector<Route>& tags,
                            const BlockParams& block, const BlockConfig& config,
                            const TowerVariant& variant, Activation act = Activation::Relu);

NamedTensors block_named_parameters(const BlockParams& block, const TowerVariant& variant,
                                    const std::string& prefix);

// Closed forms under the no-bias/no-LN counting convention.
int64_t param_count(const BlockConfig& config, const TowerVariant& variant);
int64_t flop_count(const BlockConfig& config, const TowerVariant& variant, int64_t n_tokens);

// Oracles: walk a constructed block / run an instrumented forward.
int64_t enumerate_block_params(const BlockParams& block, const TowerVariant& variant);
int64_t measure_block_flops(const BlockParams& block, const BlockConfig& config,
                            const TowerVariant& variant, int n_tokens);

}  // namespace motionlm
