// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "motionlm/metrics.hpp"

namespace motionlm {

// Everything a run needs; presets fill it, a JSON config file overrides it.
struct AppConfig {
    SyntheticSpec corpus;
    int corpus_items = 360;
    TokenizerConfig tokenizer;
    BackboneConfig backbone;
    TowerVariant variant{VariantKind::MoE, 8, 16.0};
    StagePlan stage2;
    StagePlan stage3;
    uint64_t seed = 0;
    std::string preset = "desk";
};

// Minutes-scale sizes for tests and CI.
AppConfig desk_preset();
// The published hyperparameters (L=6, K=512, 263-dim frames, 400k-step
// schedules). A configuration preset only; not sized for desk runs.
AppConfig paper_preset();

AppConfig preset_by_name(const std::string& name);

// Applies overrides from a JSON file on top of the preset; unknown keys are
// a configuration error.
void apply_config_file(AppConfig& config, const std::string& path);
// Re-derives seed-dependent fields after --seed/config changes.
void reseed(AppConfig& config, uint64_t seed);

std::string config_to_json(const AppConfig& config);

}  // namespace motionlm
