// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <set>

#include "motionlm/fusion.hpp"
#include "motionlm/stream_patterns.hpp"
#include "motionlm/vocab.hpp"

namespace motionlm {

// One laid-out position: either a single unified-vocab id (text, special,
// or a flattened motion token) or a motion group carrying one code per
// stream, where code K is the per-stream pad row.
struct LaidStep {
    bool is_group = false;
    int id = -1;
    std::vector<int> codes;

    static LaidStep single(int id) { return {false, id, {}}; }
    static LaidStep group(std::vector<int> codes) { return {true, -1, std::move(codes)}; }
};

struct LaidSequence {
    LayoutKind layout = LayoutKind::Delay;
    Task task = Task::T2M;
    std::vector<LaidStep> steps;
    std::vector<bool> target_mask;  // which steps are loss targets

    int length() const { return static_cast<int>(steps.size()); }
};

struct BackboneConfig {
    int d_model = 48;
    int d_ff = 96;
    int n_heads = 4;
    int n_layers = 2;
    int max_positions = 256;
    Activation act = Activation::Relu;
    Real init_std = 0.02;
    LayoutKind layout = LayoutKind::Delay;
};

// Decoder-only causal transformer over the unified vocabulary with L
// per-stream embeddings f^l and heads g^l. Heads start at zero so an
// untrained model emits uniform logits.
struct MotionLm {
    BackboneConfig config;
    Vocabulary vocab;
    TowerVariant variant;
    bool task_tower = false;  // stage-3 routing to the Motion-Task tower
    int stage = 0;

    Tensor text_embedding;                 // [text_span, d]
    std::vector<Tensor> stream_embedding;  // L x [K+1, d]; row K is the pad
    Tensor pos_embedding;                  // [max_positions, d]
    std::vector<BlockParams> blocks;
    Tensor final_ln;
    Tensor text_head_w, text_head_b;             // d -> text_span
    std::vector<Tensor> motion_head_w, motion_head_b;  // L x (d -> K)

    NamedTensors named_parameters() const;
};

MotionLm make_motion_lm(const BackboneConfig& config, const Vocabulary& vocab,
                        const TowerVariant& variant, Rng& rng);

// Clones the motion tower of every block into the Motion-Task slot and
// enables stage-3 routing. Returns false (and logs nothing) for Prototype.
bool enable_task_tower(MotionLm& model);

Route route_for_step(const MotionLm& model, const LaidStep& step, Task task);

// Sum of per-stream embeddings (or the single lookup) plus the learned
// positional term, for one step; exposed for the embedding tests.
Tensor embed_step(const MotionLm& model, const LaidStep& step, int position);

// Input embedding + blocks + final norm; rows align with seq.steps.
Tensor backbone_hidden(const MotionLm& model, const LaidSequence& seq);

struct NllResult {
    Tensor loss;   // mean -log p over counted target tokens
    Real total = 0;
    int64_t count = 0;
    std::vector<Real> stream_sum;      // index l-1
    std::vector<int64_t> stream_count;
    Real text_sum = 0;
    int64_t text_count = 0;

    Real mean() const { return total / static_cast<Real>(count); }
};

// Teacher-forced NLL over a batch; targets sit one step ahead of their
// predicting position, pad targets are skipped, motion groups contribute one
// cross-entropy per non-pad stream.
NllResult forward_nll(const MotionLm& model, const std::vector<LaidSequence>& batch);

struct SamplingConfig {
    enum class Kind { Greedy, TopK, Temperature };
    Kind kind = Kind::Greedy;
    int top_k = 5;
    Real temperature = 1.0;
    uint64_t seed = 0;
};

struct TargetPlan {
    bool motion_target = false;
    int spans = 1;           // motion spans; 2 for interactive targets
    int steps_per_span = 16; // latent steps T per span
};

struct GenerateOutput {
    std::vector<int> text_ids;            // text targets, EOS stripped
    std::vector<TokenGrid> motion_grids;  // one per completed span
    bool truncated = false;
    LaidSequence sequence;  // prompt plus everything generated
};

// Autoregressive decoding from a prompt that already ends with the
// begin-target marker. Text targets decode until EOS; motion targets follow
// the span skeleton (structurally forced pads under Delay, separators
// between spans) and sample stream codes from the heads.
GenerateOutput generate(const MotionLm& model, const LaidSequence& prompt, const TargetPlan& plan,
                        const SamplingConfig& sampling, int max_steps);

// Influence set of target (level, step): gradient of the target's head
// logits w.r.t. each input token's embedding rows, thresholded. The probe
// sequence assigns stream l's code tau-1 at step tau so every (level, step)
// owns a private embedding row; requires steps <= K.
std::set<std::pair<int, int>> jacobian_dependency_probe(MotionLm& model, LayoutKind kind,
                                                        int level, int step, int steps_total,
                                                        Real threshold = 1e-12);

// Fresh tensors, identical values; stage-3 fine-tuning must not alias the
// stage-2 model it starts from.
MotionLm clone_model(const MotionLm& model);

void save_model(const std::string& path, const MotionLm& model);
MotionLm load_model(const std::string& path);

}  // namespace motionlm
