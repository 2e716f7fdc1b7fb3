// SPDX-License-Identifier: Apache-2.0
#include "motionlm/config.hpp"

#include <fstream>

#include <json.hpp>

namespace motionlm {

using nlohmann::json;

AppConfig desk_preset() {
    AppConfig c;
    c.corpus = SyntheticSpec{};  // 64 frames x 8 features
    c.corpus_items = 1080;
    c.tokenizer.levels = 4;
    c.tokenizer.codebook_size = 32;
    c.tokenizer.latent_dim = 16;
    c.tokenizer.width = 24;
    c.tokenizer.downsample = 4;
    c.tokenizer.steps = 2000;
    c.tokenizer.batch_size = 8;
    c.tokenizer.lr = 1e-3;
    c.backbone.d_model = 64;
    c.backbone.d_ff = 128;
    c.backbone.n_heads = 4;
    c.backbone.n_layers = 2;
    c.backbone.layout = LayoutKind::Delay;
    c.stage2.stage = 2;
    c.stage2.steps = 2000;
    c.stage2.lr = 1e-3;
    c.stage2.batch_size = 8;
    c.stage3.stage = 3;
    c.stage3.steps = 2000;
    c.stage3.lr = 5e-4;
    c.stage3.batch_size = 8;
    c.preset = "desk";
    return c;
}

AppConfig paper_preset() {
    AppConfig c = desk_preset();
    c.corpus.feature_dim = 264;  // nearest even stand-in for the 263-dim representation
    c.tokenizer.levels = 6;
    c.tokenizer.codebook_size = 512;
    c.tokenizer.downsample = 4;
    c.tokenizer.crop_frames = 64;
    c.tokenizer.beta = 0.02;
    c.tokenizer.steps = 100000;
    c.tokenizer.batch_size = 128;
    c.tokenizer.lr = 2e-4;
    c.tokenizer.warmup = 1000;
    c.stage2.steps = 400000;
    c.stage2.lr = 1e-3;
    c.stage3.steps = 400000;
    c.stage3.lr = 5e-4;
    c.variant = TowerVariant{VariantKind::MoE, 8, 16.0};
    c.preset = "paper";
    return c;
}

AppConfig preset_by_name(const std::string& name) {
    if (name == "desk") return desk_preset();
    if (name == "paper") return paper_preset();
    throw ConfigError("unknown preset: " + name + " (expected desk|paper)");
}

void reseed(AppConfig& config, uint64_t seed) {
    config.seed = seed;
    config.corpus.seed = seed;
    config.tokenizer.seed = seed + 1;
    config.stage2.seed = seed + 2;
    config.stage3.seed = seed + 3;
}

namespace {

void apply_tokenizer(TokenizerConfig& t, const json& j) {
    for (auto& [key, value] : j.items()) {
        if (key == "levels") t.levels = value.get<int>();
        else if (key == "codebook_size") t.codebook_size = value.get<int>();
        else if (key == "latent_dim") t.latent_dim = value.get<int>();
        else if (key == "width") t.width = value.get<int>();
        else if (key == "downsample") t.downsample = value.get<int>();
        else if (key == "beta") t.beta = value.get<Real>();
        else if (key == "steps") t.steps = value.get<int>();
        else if (key == "batch_size") t.batch_size = value.get<int>();
        else if (key == "lr") t.lr = value.get<Real>();
        else if (key == "warmup") t.warmup = value.get<int>();
        else if (key == "ema_decay") t.ema_decay = value.get<Real>();
        else if (key == "dead_code_usage") t.dead_code_usage = value.get<Real>();
        else if (key == "crop_frames") t.crop_frames = value.get<int>();
        else if (key == "seed") t.seed = value.get<uint64_t>();
        else throw ConfigError("unknown tokenizer config key: " + key);
    }
}

void apply_backbone(BackboneConfig& b, const json& j) {
    for (auto& [key, value] : j.items()) {
        if (key == "d_model") b.d_model = value.get<int>();
        else if (key == "d_ff") b.d_ff = value.get<int>();
        else if (key == "n_heads") b.n_heads = value.get<int>();
        else if (key == "n_layers") b.n_layers = value.get<int>();
        else if (key == "max_positions") b.max_positions = value.get<int>();
        else if (key == "layout") b.layout = layout_from_name(value.get<std::string>());
        else if (key == "activation")
            b.act = value.get<std::string>() == "gelu" ? Activation::Gelu : Activation::Relu;
        else throw ConfigError("unknown backbone config key: " + key);
    }
}

void apply_plan(StagePlan& p, const json& j) {
    for (auto& [key, value] : j.items()) {
        if (key == "steps") p.steps = value.get<int>();
        else if (key == "lr") p.lr = value.get<Real>();
        else if (key == "weight_decay") p.weight_decay = value.get<Real>();
        else if (key == "warmup") p.warmup = value.get<int>();
        else if (key == "batch_size") p.batch_size = value.get<int>();
        else if (key == "seed") p.seed = value.get<uint64_t>();
        else if (key == "tasks") {
            p.tasks.clear();
            for (const auto& t : value) p.tasks.push_back(task_from_name(t.get<std::string>()));
        } else throw ConfigError("unknown stage config key: " + key);
    }
}

void apply_corpus(SyntheticSpec& s, const json& j) {
    for (auto& [key, value] : j.items()) {
        if (key == "frames") s.frames = value.get<int>();
        else if (key == "feature_dim") s.feature_dim = value.get<int>();
        else if (key == "frame_rate") s.frame_rate = value.get<Real>();
        else if (key == "seed") s.seed = value.get<uint64_t>();
        else if (key == "follow_lag_frames") s.follow_lag_frames = value.get<int>();
        else if (key == "bin_margin") s.bin_margin = value.get<Real>();
        else if (key == "noise_std") s.noise_std = value.get<Real>();
        else if (key == "noise_std_fine") s.noise_std_fine = value.get<Real>();
        else if (key == "spike_prob") s.spike_prob = value.get<Real>();
        else if (key == "noise_hold") s.noise_hold = value.get<int>();
        else throw ConfigError("unknown corpus config key: " + key);
    }
}

void apply_variant(TowerVariant& v, const json& j) {
    for (auto& [key, value] : j.items()) {
        if (key == "kind") v.kind = variant_from_name(value.get<std::string>());
        else if (key == "lora_rank") v.lora_rank = value.get<int>();
        else if (key == "lora_alpha") v.lora_alpha = value.get<Real>();
        else throw ConfigError("unknown variant config key: " + key);
    }
}

}  // namespace

void apply_config_file(AppConfig& config, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw ParseError(path + ": " + e.what());
    }
    for (auto& [key, value] : j.items()) {
        if (key == "tokenizer") apply_tokenizer(config.tokenizer, value);
        else if (key == "backbone") apply_backbone(config.backbone, value);
        else if (key == "stage2") apply_plan(config.stage2, value);
        else if (key == "stage3") apply_plan(config.stage3, value);
        else if (key == "corpus") apply_corpus(config.corpus, value);
        else if (key == "variant") apply_variant(config.variant, value);
        else if (key == "corpus_items") config.corpus_items = value.get<int>();
        else if (key == "seed") reseed(config, value.get<uint64_t>());
        else throw ConfigError("unknown config key: " + key);
    }
}

std::string config_to_json(const AppConfig& c) {
    json j;
    j["preset"] = c.preset;
    j["seed"] = c.seed;
    j["corpus_items"] = c.corpus_items;
    j["corpus"] = {{"frames", c.corpus.frames},
                   {"feature_dim", c.corpus.feature_dim},
                   {"frame_rate", c.corpus.frame_rate},
                   {"seed", c.corpus.seed}};
    j["tokenizer"] = {{"levels", c.tokenizer.levels},
                      {"codebook_size", c.tokenizer.codebook_size},
                      {"latent_dim", c.tokenizer.latent_dim},
                      {"width", c.tokenizer.width},
                      {"downsample", c.tokenizer.downsample},
                      {"beta", c.tokenizer.beta},
                      {"steps", c.tokenizer.steps},
                      {"batch_size", c.tokenizer.batch_size},
                      {"lr", c.tokenizer.lr},
                      {"seed", c.tokenizer.seed}};
    j["backbone"] = {{"d_model", c.backbone.d_model},
                     {"d_ff", c.backbone.d_ff},
                     {"n_heads", c.backbone.n_heads},
                     {"n_layers", c.backbone.n_layers},
                     {"layout", layout_name(c.backbone.layout)}};
    j["variant"] = {{"kind", variant_name(c.variant.kind)},
                    {"lora_rank", c.variant.lora_rank},
                    {"lora_alpha", c.variant.lora_alpha}};
    j["stage2"] = {{"steps", c.stage2.steps}, {"lr", c.stage2.lr},
                   {"batch_size", c.stage2.batch_size}, {"seed", c.stage2.seed}};
    j["stage3"] = {{"steps", c.stage3.steps}, {"lr", c.stage3.lr},
                   {"batch_size", c.stage3.batch_size}, {"seed", c.stage3.seed}};
    return j.dump(2);
}

}  // namespace motionlm
