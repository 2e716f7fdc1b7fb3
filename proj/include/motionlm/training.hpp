// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>

#include "motionlm/backbone.hpp"
#include "motionlm/tokenizer.hpp"

namespace motionlm {

struct StagePlan {
    int stage = 2;
    std::vector<Task> tasks;  // empty = stage default
    int steps = 600;
    Real lr = 1e-3;
    Real weight_decay = 0.01;
    int warmup = 50;
    int batch_size = 8;
    uint64_t seed = 0;
};

// Line-delimited JSON metrics writer (step, loss, per-stream NLL, notes).
class MetricsLogger {
public:
    MetricsLogger() = default;
    explicit MetricsLogger(const std::string& path);
    void log_training_step(int step, Real loss, Real lr, const NllResult& nll);
    void log_note(const std::string& note);
    void log_metric(const std::string& name, Real value,
                    const std::vector<std::pair<std::string, Real>>& extra = {});

private:
    std::string path_;
};

// [task][source spans][begin-target][target spans][end], with the loss mask
// covering everything after the begin-target marker. Motion spans follow the
// layout (delayed groups, parallel groups, or level-major singles).
LaidSequence format_prompt(const CorpusItem& item, const TokenizerModel& tokenizer,
                           const Vocabulary& vocab, LayoutKind layout);

// Source prefix ending at the begin-target marker, for generation.
LaidSequence prompt_only(const CorpusItem& item, const TokenizerModel& tokenizer,
                         const Vocabulary& vocab, LayoutKind layout);

TargetPlan target_plan_for(const CorpusItem& item, const TokenizerModel& tokenizer,
                           int fallback_frames = 64);

// Inverse of format_prompt's framing: recovers the task tag and the span
// boundary positions from a laid sequence.
struct ParsedPrompt {
    Task task;
    int target_begin = -1;  // first step after the begin-target marker
    int eos = -1;
    std::vector<int> separators;
};
ParsedPrompt parse_prompt(const LaidSequence& seq, const Vocabulary& vocab);

// Motion span steps for a token grid under a layout (exposed for tests).
std::vector<LaidStep> motion_span_steps(const TokenGrid& grid, const Vocabulary& vocab,
                                        LayoutKind layout);

// Deterministic split: every `holdout_every`-th item goes to the held-out set.
std::pair<std::vector<CorpusItem>, std::vector<CorpusItem>> split_corpus(
    const std::vector<CorpusItem>& corpus, int holdout_every = 5);

// Stage 1: trains and freezes the motion tokenizer.
TokenizerModel run_stage1(const std::vector<CorpusItem>& corpus, const TokenizerConfig& config,
                          int input_dim, MetricsLogger* logger = nullptr);

constexpr std::array<Task, 4> kStage2Tasks = {Task::T2M, Task::M2T, Task::IT2M, Task::IM2T};

// Stage 2: modality alignment on the four basic tasks.
MotionLm run_stage2(const std::vector<CorpusItem>& corpus, const TokenizerModel& tokenizer,
                    const BackboneConfig& config, const TowerVariant& variant,
                    const StagePlan& plan, MetricsLogger* logger = nullptr);

// Stage 3: clones the motion tower into the task tower (when the variant
// has one) and fine-tunes on the full task set.
MotionLm run_stage3(const std::vector<CorpusItem>& corpus, const TokenizerModel& tokenizer,
                    const MotionLm& stage2_model, const StagePlan& plan,
                    MetricsLogger* logger = nullptr);

// Teacher-forced evaluation over formatted items (no parameter updates).
NllResult evaluate_nll(const MotionLm& model, const TokenizerModel& tokenizer,
                       const std::vector<CorpusItem>& items, LayoutKind layout);

Vocabulary vocabulary_for(const TokenizerModel& tokenizer);

}  // namespace motionlm
