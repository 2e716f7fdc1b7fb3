// SPDX-License-Identifier: Apache-2.0
#include "motionlm/stream_patterns.hpp"

namespace motionlm {

const char* layout_name(LayoutKind k) {
    switch (k) {
        case LayoutKind::Flatten: return "flatten";
        case LayoutKind::Parallel: return "parallel";
        case LayoutKind::Delay: return "delay";
    }
    return "?";
}

LayoutKind layout_from_name(const std::string& name) {
    if (name == "flatten") return LayoutKind::Flatten;
    if (name == "parallel") return LayoutKind::Parallel;
    if (name == "delay") return LayoutKind::Delay;
    throw ConfigError("unknown layout: " + name + " (expected flatten|parallel|delay)");
}

MultiStreamTokens MultiStreamTokens::from_grid(const TokenGrid& grid) {
    MultiStreamTokens m;
    m.streams = grid.transpose();
    return m;
}

TokenGrid MultiStreamTokens::to_grid() const {
    TokenGrid g = streams.transpose();
    return g;
}

std::vector<int> flatten(const MultiStreamTokens& m) {
    std::vector<int> out;
    out.reserve(static_cast<size_t>(m.levels()) * m.steps());
    for (int t = 0; t < m.steps(); ++t)
        for (int l = 0; l < m.levels(); ++l) out.push_back(m.streams(l, t));
    return out;
}

MultiStreamTokens unflatten(const std::vector<int>& flat, int levels) {
    if (levels < 1) throw FormatError("unflatten: levels must be >= 1");
    if (flat.size() % static_cast<size_t>(levels) != 0)
        throw FormatError("unflatten: length " + std::to_string(flat.size()) +
                          " is not divisible by L=" + std::to_string(levels));
    const int steps = static_cast<int>(flat.size()) / levels;
    MultiStreamTokens m;
    m.streams.resize(levels, steps);
    for (int t = 0; t < steps; ++t)
        for (int l = 0; l < levels; ++l) m.streams(l, t) = flat[static_cast<size_t>(t) * levels + l];
    return m;
}

PaddedGrid delay(const MultiStreamTokens& m, int pad_id) {
    const int levels = m.levels(), steps = m.steps();
    PaddedGrid out;
    out.pad_id = pad_id;
    out.rows.resize(levels, steps + levels - 1);
    for (int l = 0; l < levels; ++l) {
        for (int s = 0; s < l; ++s) out.rows(l, s) = pad_id;
        for (int t = 0; t < steps; ++t) out.rows(l, l + t) = m.streams(l, t);
        for (int s = l + steps; s < steps + levels - 1; ++s) out.rows(l, s) = pad_id;
    }
    return out;
}

MultiStreamTokens undelay(const PaddedGrid& padded) {
    const int levels = padded.levels();
    const int slots = padded.slots();
    const int steps = slots - levels + 1;
    if (steps < 1)
        throw FormatError("undelay: " + std::to_string(slots) + " slots cannot hold " +
                          std::to_string(levels) + " staggered streams");
    MultiStreamTokens m;
    m.streams.resize(levels, steps);
    for (int l = 0; l < levels; ++l)
        for (int s = 0; s < slots; ++s) {
            const bool should_pad = s < l || s >= l + steps;
            const bool is_pad = padded.rows(l, s) == padded.pad_id;
            if (should_pad != is_pad)
                throw FormatError("undelay: stream " + std::to_string(l + 1) + " slot " +
                                  std::to_string(s) + (is_pad ? " holds an unexpected pad"
                                                              : " is missing its pad"));
            if (!should_pad) m.streams(l, s - l) = padded.rows(l, s);
        }
    return m;
}

int laid_out_length(const Layout& layout) {
    switch (layout.kind) {
        case LayoutKind::Flatten: return layout.steps * layout.levels;
        case LayoutKind::Parallel: return layout.steps;
        case LayoutKind::Delay: return layout.steps + layout.levels - 1;
    }
    return 0;
}

std::vector<std::pair<int, int>> slot_tokens(const Layout& layout, int slot) {
    std::vector<std::pair<int, int>> out;
    switch (layout.kind) {
        case LayoutKind::Flatten:
            out.emplace_back(slot % layout.levels + 1, slot / layout.levels + 1);
            break;
        case LayoutKind::Parallel:
            for (int l = 1; l <= layout.levels; ++l) out.emplace_back(l, slot + 1);
            break;
        case LayoutKind::Delay:
            for (int l = 1; l <= layout.levels; ++l) {
                const int t = slot - l + 2;
                if (t >= 1 && t <= layout.steps) out.emplace_back(l, t);
            }
            break;
    }
    return out;
}

int slot_of(const Layout& layout, int level, int step) {
    if (level < 1 || level > layout.levels || step < 1 || step > layout.steps)
        throw IndexError("dependency query (" + std::to_string(level) + "," +
                         std::to_string(step) + ") outside L=" + std::to_string(layout.levels) +
                         ", T=" + std::to_string(layout.steps));
    switch (layout.kind) {
        case LayoutKind::Flatten: return (step - 1) * layout.levels + (level - 1);
        case LayoutKind::Parallel: return step - 1;
        case LayoutKind::Delay: return (step - 1) + (level - 1);
    }
    return 0;
}

std::set<std::pair<int, int>> dependency_set(const Layout& layout, int level, int step) {
    const int target_slot = slot_of(layout, level, step);
    std::set<std::pair<int, int>> out;
    // causal self-attention at the predicting position sees slots < target
    for (int s = 0; s < target_slot; ++s)
        for (auto& tok : slot_tokens(layout, s)) out.insert(tok);
    return out;
}

LayoutCost layout_cost(const Layout& layout) {
    LayoutCost out;
    out.sequence_length = laid_out_length(layout);
    switch (layout.kind) {
        case LayoutKind::Flatten: out.cost_class = "O(T^2*L^2)"; break;
        case LayoutKind::Parallel: out.cost_class = "O(T^2)"; break;
        case LayoutKind::Delay: out.cost_class = "O((T+L-1)^2)"; break;
    }
    out.attention_pairs = out.sequence_length * out.sequence_length;
    return out;
}

}  // namespace motionlm
