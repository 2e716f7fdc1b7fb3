// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>

#include "motionlm/training.hpp"

namespace motionlm {

// Mean per-joint position error; frames are J joints x 2 coordinates.
Real mpjpe(const MotionSequence& reference, const MotionSequence& reconstruction);

// ADE: mean per-frame joint displacement; FDE: displacement at the final frame.
std::pair<Real, Real> ade_fde(const MotionSequence& pred, const MotionSequence& gt);

// Teacher-forced NLL split by stream index (index l-1), plus the text slot.
struct StreamNll {
    std::vector<Real> per_stream;  // mean NLL per stream
    Real text = 0;
    NllResult raw;
};
StreamNll per_stream_nll(const MotionLm& model, const TokenizerModel& tokenizer,
                         const std::vector<CorpusItem>& items, LayoutKind layout);

// Desk-scale evaluation: per-stream NLL, ADE/FDE on motion prediction, and
// parameter-bin recovery rates for generation/captioning/editing.
std::map<std::string, Real> evaluate_model(const MotionLm& model, const TokenizerModel& tokenizer,
                                           const std::vector<CorpusItem>& heldout,
                                           const SyntheticSpec& spec, uint64_t seed);

struct MetricsReport {
    std::map<std::string, Real> values;
    std::map<std::string, std::string> metadata;  // seed, config hash, checkpoint hashes
    std::vector<std::string> warnings;
    std::vector<std::pair<Real, Real>> recon_curve;             // (L, mse)
    std::vector<std::pair<std::string, Real>> layout_bars;      // label -> NLL
};

// Aggregates a run directory (metrics.jsonl, recon_vs_L.jsonl,
// nll_by_layout.jsonl, config.json, *.ckpt). Read-only; missing inputs are
// listed as warnings, never fatal.
MetricsReport build_report(const std::string& run_dir);

// Writes report.csv (deterministic bytes) and the SVG charts into out_dir.
void write_report(const MetricsReport& report, const std::string& out_dir);

MetricsReport report(const std::string& run_dir, const std::string& out_dir);

}  // namespace motionlm
