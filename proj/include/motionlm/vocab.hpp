// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "motionlm/motion_data.hpp"

namespace motionlm {

// Unified id space: [0, n_text) text words, then the special ids, then L
// contiguous per-stream motion ranges of K codes each. The pad sentinel is
// a special id, outside every token vocabulary; inside a motion group it is
// represented as per-stream code K (one extra learned embedding row).
struct Vocabulary {
    int n_text = 0;
    int levels = 0;  // L
    int codes = 0;   // K per stream

    Vocabulary() = default;
    Vocabulary(int n_text_, int levels_, int codes_)
        : n_text(n_text_), levels(levels_), codes(codes_) {}

    static constexpr int kNumMarkers = 4;  // pad, eos, tgt, sep
    int n_special() const { return kNumMarkers + kNumTasks; }

    int pad_id() const { return n_text + 0; }
    int eos_id() const { return n_text + 1; }
    int tgt_id() const { return n_text + 2; }  // begin-target marker
    int sep_id() const { return n_text + 3; }  // agent separator
    int task_id(Task t) const { return n_text + kNumMarkers + static_cast<int>(t); }

    // ids the text embedding/head cover (text words plus specials)
    int text_span() const { return n_text + n_special(); }
    int motion_base() const { return text_span(); }
    int total() const { return motion_base() + levels * codes; }

    bool is_motion(int id) const { return id >= motion_base() && id < total(); }

    int motion_id(int level, int code) const {  // level is 1-based
        if (level < 1 || level > levels || code < 0 || code >= codes)
            throw VocabError("motion token (level " + std::to_string(level) + ", code " +
                             std::to_string(code) + ") outside L=" + std::to_string(levels) +
                             ", K=" + std::to_string(codes));
        return motion_base() + (level - 1) * codes + code;
    }

    struct Decomposed {
        bool is_motion = false;
        int level = 0;  // 1-based when motion
        int code = 0;   // code for motion, raw id for text/special
    };

    Decomposed decompose(int id) const {
        if (id < 0 || id >= total())
            throw VocabError("id " + std::to_string(id) + " outside unified vocabulary of " +
                             std::to_string(total()));
        if (!is_motion(id)) return {false, 0, id};
        const int rel = id - motion_base();
        return {true, rel / codes + 1, rel % codes};
    }
};

}  // namespace motionlm
