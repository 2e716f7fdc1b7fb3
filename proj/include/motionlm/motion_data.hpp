// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "motionlm/tensor.hpp"

namespace motionlm {

// T_o x d_o grid of pose frames. Units are dimensionless corpus units;
// frame_rate is metadata only.
struct MotionSequence {
    RowMat frames;
    Real frame_rate = 20.0;

    int length() const { return static_cast<int>(frames.rows()); }
    int feature_dim() const { return static_cast<int>(frames.cols()); }
};

enum class Task {
    T2M, M2T, IT2M, IM2T, M2MPredict, M2MInbetween, IM2M, React, Edit,
};
constexpr int kNumTasks = 9;

const char* task_name(Task t);
Task task_from_name(const std::string& name);
bool task_is_interactive(Task t);   // items carry two motions
// Tasks whose target is motion conditioned on motion (stage-3 task tower).
bool task_is_motion_to_motion(Task t);

// Generating parameters, kept as corpus metadata so metrics can score
// recovered bins without re-inferring ground truth.
struct MotionBins {
    int amp = -1;
    int freq = -1;
    int phase = -1;
    int dir = -1;
    bool operator==(const MotionBins&) const = default;
};

enum class Relation { Mirrors = 0, Follows = 1 };
enum class EditKind { Larger = 0, Smaller = 1, Reversed = 2 };

struct CorpusItem {
    Task task = Task::T2M;
    std::vector<int> text;              // token ids over the text vocabulary
    std::vector<MotionSequence> motions;  // agent A then agent B for interactive tasks
    std::vector<int> edit_instruction;  // Edit only
    MotionBins bins;                    // bins of the (first) motion
    int relation = -1;                  // interactive tasks
    int edit_kind = -1;                 // Edit
};

// Fixed word list plus the invertible description template. Text encodes
// parameter bins; parsing text recovers them exactly.
class TextGrammar {
public:
    TextGrammar();

    int size() const { return static_cast<int>(words_.size()); }
    const std::vector<std::string>& words() const { return words_; }
    int word_id(const std::string& w) const;

    std::vector<int> describe(const MotionBins& bins, int relation = -1) const;
    std::vector<int> edit_instruction(EditKind kind) const;

    MotionBins parse_bins(const std::vector<int>& text) const;
    int parse_relation(const std::vector<int>& text) const;      // -1 if absent
    int parse_edit(const std::vector<int>& instruction) const;   // -1 if absent

    std::string to_string(const std::vector<int>& ids) const;
    std::vector<int> tokenize(const std::string& sentence) const;

private:
    std::vector<std::string> words_;
};

// Sinusoidal joint trajectories; every knob that shapes the corpus lives
// here so generation is a pure function of the spec.
struct SyntheticSpec {
    int frames = 64;         // T_o
    int feature_dim = 8;     // d_o = joints * 2 coordinates
    Real frame_rate = 20.0;
    // Geometric bins: doubling amplitude moves the sample up exactly one bin.
    std::vector<std::pair<Real, Real>> amp_bins = {{0.25, 0.5}, {0.5, 1.0}, {1.0, 2.0}};
    std::vector<std::pair<Real, Real>> freq_bins = {{0.5, 1.0}, {1.0, 2.0}, {2.0, 4.0}};
    int phase_bins = 4;      // quarters of [0, 2pi)
    int directions = 3;      // x, y, diagonal
    Real bin_margin = 0.15;  // in-bin inset when sampling continuous values
    // Zero-order-hold spike jitter: every noise_hold frames a gate decides
    // whether the body takes a random displacement along fixed joint
    // patterns. Pure sinusoids would make every token stream predictable
    // from temporal context alone; gated bursts keep steps stochastic, and
    // the gate makes residual codes near-deterministic once the same-step
    // base code is known, which is the dependency residual quantization
    // feeds on.
    Real noise_std = 0.4;        // coarse burst scale when the gate fires
    Real noise_std_fine = 0.13;  // fine burst scale (second pattern)
    Real spike_prob = 0.3;       // per-window gate probability
    int noise_hold = 4;
    int follow_lag_frames = 8;
    uint64_t seed = 0;
    std::vector<Task> tasks = {Task::T2M, Task::M2T, Task::IT2M, Task::IM2T, Task::M2MPredict,
                               Task::M2MInbetween, Task::IM2M, Task::React, Task::Edit};
};

// Continuous parameters for one motion family member.
struct MotionParams {
    Real amplitude = 1.0;
    Real frequency = 1.0;  // Hz
    Real phase = 0.0;
    int direction = 0;
    MotionBins bins;
};

MotionSequence synthesize_motion(const SyntheticSpec& spec, const MotionParams& p);
MotionSequence add_hold_noise(const MotionSequence& seq, Real coarse_std, Real fine_std,
                              Real spike_prob, int hold, Rng& rng);
// Fixed signal-orthogonal joint patterns the jitter rides on (one per
// scale); estimators project them out exactly.
std::vector<Eigen::VectorXd> jitter_patterns(int feature_dim);
MotionSequence apply_relation(const SyntheticSpec& spec, const MotionSequence& a, Relation rel);
// Elementwise: Larger doubles, Smaller halves, Reversed negates.
MotionSequence apply_edit(const MotionSequence& src, EditKind kind);
MotionBins edited_bins(const MotionBins& src, EditKind kind, const SyntheticSpec& spec);
MotionSequence edit_target(const CorpusItem& item);

std::vector<CorpusItem> generate_corpus(const SyntheticSpec& spec, int n_items);

// Nearest-template classifier over the family bank of `spec`; used to score
// generated/reconstructed motions.
MotionBins estimate_bins(const MotionSequence& seq, const SyntheticSpec& spec);

// Binary motion file: magic "MOTN", u32 version, u32 T_o, u32 d_o,
// f64 frame_rate, then row-major f64 values, all little-endian.
void save_motion(const std::string& path, const MotionSequence& seq);
MotionSequence load_motion(const std::string& path);

// Corpus: one JSON record per line in <dir>/items.jsonl; motions stored as
// referenced .motion files under <dir>.
void save_corpus(const std::string& dir, const std::vector<CorpusItem>& items);
std::vector<CorpusItem> load_corpus(const std::string& dir);

MotionSequence crop(const MotionSequence& seq, int length, int offset = 0);

struct FeatureStats {
    Eigen::VectorXd mean;
    Eigen::VectorXd std;  // constant features clamp to 1
};
FeatureStats zscore_stats(const std::vector<CorpusItem>& corpus);
MotionSequence normalize(const MotionSequence& seq, const FeatureStats& stats);
MotionSequence denormalize(const MotionSequence& seq, const FeatureStats& stats);
std::vector<CorpusItem> normalize_corpus(const std::vector<CorpusItem>& corpus,
                                         const FeatureStats& stats);

}  // namespace motionlm
