// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <set>
#include <string>
#include <utility>
#include <vector>

#include "motionlm/rvq.hpp"

namespace motionlm {

enum class LayoutKind { Flatten, Parallel, Delay };

const char* layout_name(LayoutKind k);
LayoutKind layout_from_name(const std::string& name);

struct Layout {
    LayoutKind kind = LayoutKind::Delay;
    int levels = 1;  // L
    int steps = 1;   // T
};

// L parallel token streams of common length T (stream l = row l-1). The
// transpose view of TokenGrid.
struct MultiStreamTokens {
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> streams;  // L x T

    int levels() const { return static_cast<int>(streams.rows()); }
    int steps() const { return static_cast<int>(streams.cols()); }

    static MultiStreamTokens from_grid(const TokenGrid& grid);
    TokenGrid to_grid() const;
    bool operator==(const MultiStreamTokens& o) const { return streams == o.streams; }
};

// U = [m^1_1, m^2_1, ..., m^L_1, ..., m^1_T, ..., m^L_T]
std::vector<int> flatten(const MultiStreamTokens& m);
MultiStreamTokens unflatten(const std::vector<int>& flat, int levels);

// Stream l staggered by l-1: [pad x (l-1), m^l, pad x (L-l)], length T+L-1.
// The pad id is a reserved sentinel outside every token vocabulary.
struct PaddedGrid {
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows;  // L x (T+L-1)
    int pad_id = -1;

    int levels() const { return static_cast<int>(rows.rows()); }
    int slots() const { return static_cast<int>(rows.cols()); }
};

PaddedGrid delay(const MultiStreamTokens& m, int pad_id);
// Strips by position, never by value; misplaced pads are a format error.
MultiStreamTokens undelay(const PaddedGrid& padded);

// Tokens carried by laid-out slot `s` (0-based), as 1-based (level, step)
// pairs. The causal mask over these slots is the ground truth for every
// dependency claim.
std::vector<std::pair<int, int>> slot_tokens(const Layout& layout, int slot);
int laid_out_length(const Layout& layout);
int slot_of(const Layout& layout, int level, int step);

// Exact conditioning set of token (level, step): every token carried by a
// slot strictly before the target's slot. 1-based arguments.
std::set<std::pair<int, int>> dependency_set(const Layout& layout, int level, int step);

struct LayoutCost {
    int64_t sequence_length = 0;
    std::string cost_class;        // symbolic attention complexity
    int64_t attention_pairs = 0;   // concrete length^2 per layer
};
LayoutCost layout_cost(const Layout& layout);

}  // namespace motionlm
