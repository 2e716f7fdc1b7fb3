// SPDX-License-Identifier: Apache-2.0
//
// Umbrella CLI for the motion-language stack: corpus generation, tokenizer
// training, tokenization, the two LM training stages, generation/captioning,
// layout analysis, parameter accounting, and run reports.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "motionlm/config.hpp"

using namespace motionlm;
namespace fs = std::filesystem;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::string preset = "desk";
    uint64_t seed = 0;
    bool seed_given = false;
};

AppConfig resolve_config(const GlobalArgs& g) {
    AppConfig config = preset_by_name(g.preset);
    reseed(config, config.seed);
    if (!g.config_path.empty()) apply_config_file(config, g.config_path);
    if (g.seed_given) reseed(config, g.seed);
    return config;
}

void write_run_config(const AppConfig& config, const std::string& run_dir) {
    fs::create_directories(run_dir);
    std::ofstream f(fs::path(run_dir) / "config.json", std::ios::trunc);
    f << config_to_json(config) << "\n";
}

std::vector<CorpusItem> load_or_generate_corpus(const AppConfig& config, const std::string& dir) {
    if (!dir.empty()) return load_corpus(dir);
    return generate_corpus(config.corpus, config.corpus_items);
}

SamplingConfig sampling_from(const std::string& mode, Real temperature, int top_k, uint64_t seed) {
    SamplingConfig s;
    s.seed = seed;
    s.temperature = temperature;
    s.top_k = top_k;
    if (mode == "greedy") s.kind = SamplingConfig::Kind::Greedy;
    else if (mode == "temperature") s.kind = SamplingConfig::Kind::Temperature;
    else if (mode == "top-k") s.kind = SamplingConfig::Kind::TopK;
    else throw ConfigError("unknown sampling mode: " + mode);
    return s;
}

void save_generated_motions(const GenerateOutput& out, const TokenizerModel& tokenizer,
                            int frames, const std::string& path) {
    if (out.motion_grids.empty()) throw TrainingError("generation produced no motion span");
    if (out.motion_grids.size() == 1) {
        save_motion(path, detokenize(tokenizer, out.motion_grids[0], frames));
        std::cout << "wrote " << path << "\n";
        return;
    }
    const fs::path base(path);
    const fs::path stem = base.parent_path() / base.stem();
    const char suffix[2][3] = {"_a", "_b"};
    for (size_t i = 0; i < out.motion_grids.size() && i < 2; ++i) {
        const std::string p = stem.string() + suffix[i] + base.extension().string();
        save_motion(p, detokenize(tokenizer, out.motion_grids[i], frames));
        std::cout << "wrote " << p << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale motion-language modeling stack"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--config", g.config_path, "JSON config file overriding the preset");
    app.add_option("--preset", g.preset, "configuration preset")->check(CLI::IsMember({"desk", "paper"}));
    app.add_option("--seed", g.seed, "master seed")->each([&](const std::string&) { g.seed_given = true; });

    // gen-corpus
    auto* gen_corpus_cmd = app.add_subcommand("gen-corpus", "generate the synthetic corpus");
    std::string gc_out;
    int gc_items = 0;
    gen_corpus_cmd->add_option("--out", gc_out, "output directory")->required();
    gen_corpus_cmd->add_option("--items", gc_items, "item count (default from config)");

    // train-tokenizer
    auto* train_tok_cmd = app.add_subcommand("train-tokenizer", "stage 1: train the motion tokenizer");
    std::string tt_corpus, tt_out;
    train_tok_cmd->add_option("--corpus", tt_corpus, "corpus directory (default: generated)");
    train_tok_cmd->add_option("--out", tt_out, "tokenizer checkpoint path")->required();

    // tokenize / detokenize
    auto* tokenize_cmd = app.add_subcommand("tokenize", "motion file -> token file");
    std::string tk_tok, tk_motion, tk_out;
    tokenize_cmd->add_option("--tokenizer", tk_tok)->required();
    tokenize_cmd->add_option("--motion", tk_motion)->required();
    tokenize_cmd->add_option("--out", tk_out)->required();

    auto* detokenize_cmd = app.add_subcommand("detokenize", "token file -> motion file");
    std::string dt_tok, dt_tokens, dt_out;
    int dt_frames = -1;
    detokenize_cmd->add_option("--tokenizer", dt_tok)->required();
    detokenize_cmd->add_option("--tokens", dt_tokens)->required();
    detokenize_cmd->add_option("--out", dt_out)->required();
    detokenize_cmd->add_option("--frames", dt_frames, "trim to this many frames");

    // pretrain / finetune
    auto* pretrain_cmd = app.add_subcommand("pretrain", "stage 2: modality-alignment pretraining");
    std::string p2_corpus, p2_tok, p2_run = "run";
    pretrain_cmd->add_option("--corpus", p2_corpus, "corpus directory (default: generated)");
    pretrain_cmd->add_option("--tokenizer", p2_tok, "tokenizer checkpoint (default: train stage 1)");
    pretrain_cmd->add_option("--run-dir", p2_run, "output run directory");

    auto* finetune_cmd = app.add_subcommand("finetune", "stage 3: multitask instruction tuning");
    std::string p3_corpus, p3_tok, p3_model, p3_run = "run";
    finetune_cmd->add_option("--corpus", p3_corpus, "corpus directory (default: generated)");
    finetune_cmd->add_option("--tokenizer", p3_tok)->required();
    finetune_cmd->add_option("--model", p3_model, "stage-2 model checkpoint")->required();
    finetune_cmd->add_option("--run-dir", p3_run, "output run directory");

    // generate / caption
    auto* generate_cmd = app.add_subcommand("generate", "text (or motion+instruction) -> motion");
    std::string gn_model, gn_tok, gn_text, gn_task = "T2M", gn_motion, gn_out = "generated.motion";
    std::string gn_sampling = "greedy";
    Real gn_temp = 1.0;
    int gn_topk = 5;
    generate_cmd->add_option("--model", gn_model)->required();
    generate_cmd->add_option("--tokenizer", gn_tok)->required();
    generate_cmd->add_option("--text", gn_text, "prompt text (T2M/I-T2M) or edit instruction");
    generate_cmd->add_option("--task", gn_task, "T2M | I-T2M | Edit | M2M-predict | React");
    generate_cmd->add_option("--motion", gn_motion, "source motion file (Edit/M2M/React)");
    generate_cmd->add_option("--out", gn_out, "output motion file");
    generate_cmd->add_option("--sampling", gn_sampling, "greedy | top-k | temperature");
    generate_cmd->add_option("--temperature", gn_temp);
    generate_cmd->add_option("--top-k", gn_topk);

    auto* caption_cmd = app.add_subcommand("caption", "motion -> text");
    std::string cp_model, cp_tok, cp_motion, cp_motion_b, cp_task = "M2T";
    caption_cmd->add_option("--model", cp_model)->required();
    caption_cmd->add_option("--tokenizer", cp_tok)->required();
    caption_cmd->add_option("--motion", cp_motion)->required();
    caption_cmd->add_option("--motion-b", cp_motion_b, "second agent (I-M2T)");
    caption_cmd->add_option("--task", cp_task, "M2T | I-M2T");

    // analyze-pattern
    auto* analyze_cmd = app.add_subcommand("analyze-pattern", "layout lengths, cost, dependencies");
    int ap_steps = 4, ap_levels = 3;
    std::string ap_layout = "delay";
    analyze_cmd->add_option("--steps", ap_steps, "T");
    analyze_cmd->add_option("--levels", ap_levels, "L");
    analyze_cmd->add_option("--layout", ap_layout, "flatten | parallel | delay");

    // count-params
    auto* count_cmd = app.add_subcommand("count-params", "parameter and FLOP accounting per variant");
    int cpk = 48, cpf = 96, cph = 4, cpr = 8, cpn = 8;
    count_cmd->add_option("--d-model", cpk);
    count_cmd->add_option("--d-ff", cpf);
    count_cmd->add_option("--heads", cph);
    count_cmd->add_option("--rank", cpr);
    count_cmd->add_option("--tokens", cpn);

    // report
    auto* report_cmd = app.add_subcommand("report", "aggregate a run directory");
    std::string rp_run, rp_out;
    report_cmd->add_option("--run", rp_run)->required();
    report_cmd->add_option("--out", rp_out, "report output directory (default <run>-report)");

    CLI11_PARSE(app, argc, argv);

    try {
        AppConfig config = resolve_config(g);

        if (gen_corpus_cmd->parsed()) {
            const int n = gc_items > 0 ? gc_items : config.corpus_items;
            auto items = generate_corpus(config.corpus, n);
            save_corpus(gc_out, items);
            std::cout << "wrote " << items.size() << " items to " << gc_out << "\n";
        } else if (train_tok_cmd->parsed()) {
            auto corpus = load_or_generate_corpus(config, tt_corpus);
            TokenizerModel model = run_stage1(corpus, config.tokenizer, config.corpus.feature_dim);
            save_tokenizer(tt_out, model);
            auto motions = corpus_motions(corpus);
            std::cout << "tokenizer trained; reconstruction mse "
                      << reconstruction_mse(model, motions) << ", mpjpe "
                      << reconstruction_mpjpe(model, motions) << "\n"
                      << "wrote " << tt_out << "\n";
        } else if (tokenize_cmd->parsed()) {
            TokenizerModel model = load_tokenizer(tk_tok);
            TokenGrid grid = tokenize(model, load_motion(tk_motion));
            save_tokens(tk_out, grid, model.config.codebook_size);
            std::cout << "wrote " << grid.rows() << " x " << grid.cols() << " codes to " << tk_out
                      << "\n";
        } else if (detokenize_cmd->parsed()) {
            TokenizerModel model = load_tokenizer(dt_tok);
            TokenGrid grid = load_tokens(dt_tokens);
            save_motion(dt_out, detokenize(model, grid, dt_frames));
            std::cout << "wrote " << dt_out << "\n";
        } else if (pretrain_cmd->parsed()) {
            auto corpus = load_or_generate_corpus(config, p2_corpus);
            write_run_config(config, p2_run);
            MetricsLogger logger((fs::path(p2_run) / "metrics.jsonl").string());
            TokenizerModel tokenizer;
            if (p2_tok.empty()) {
                tokenizer = run_stage1(corpus, config.tokenizer, config.corpus.feature_dim, &logger);
                save_tokenizer((fs::path(p2_run) / "tokenizer.ckpt").string(), tokenizer);
            } else {
                tokenizer = load_tokenizer(p2_tok);
            }
            auto [train, heldout] = split_corpus(corpus);
            MotionLm model = run_stage2(train, tokenizer, config.backbone, config.variant,
                                        config.stage2, &logger);
            for (auto& [name, value] : evaluate_model(model, tokenizer, heldout, config.corpus,
                                                      config.seed))
                logger.log_metric(name, value);
            save_model((fs::path(p2_run) / "model_stage2.ckpt").string(), model);
            std::cout << "stage-2 model written to " << p2_run << "/model_stage2.ckpt\n";
        } else if (finetune_cmd->parsed()) {
            auto corpus = load_or_generate_corpus(config, p3_corpus);
            write_run_config(config, p3_run);
            MetricsLogger logger((fs::path(p3_run) / "metrics.jsonl").string());
            TokenizerModel tokenizer = load_tokenizer(p3_tok);
            MotionLm stage2 = load_model(p3_model);
            auto [train, heldout] = split_corpus(corpus);
            MotionLm model = run_stage3(train, tokenizer, stage2, config.stage3, &logger);
            for (auto& [name, value] : evaluate_model(model, tokenizer, heldout, config.corpus,
                                                      config.seed))
                logger.log_metric(name, value);
            save_model((fs::path(p3_run) / "model_stage3.ckpt").string(), model);
            std::cout << "stage-3 model written to " << p3_run << "/model_stage3.ckpt\n";
        } else if (generate_cmd->parsed()) {
            MotionLm model = load_model(gn_model);
            TokenizerModel tokenizer = load_tokenizer(gn_tok);
            TextGrammar grammar;
            CorpusItem item;
            item.task = task_from_name(gn_task);
            if (item.task == Task::Edit) {
                if (gn_motion.empty() || gn_text.empty())
                    throw ConfigError("Edit needs --motion and --text (the instruction)");
                item.motions.push_back(load_motion(gn_motion));
                item.edit_instruction = grammar.tokenize(gn_text);
                item.edit_kind = grammar.parse_edit(item.edit_instruction);
                if (item.edit_kind < 0) throw ConfigError("instruction names no known edit");
            } else if (item.task == Task::T2M || item.task == Task::IT2M) {
                if (gn_text.empty()) throw ConfigError("text-to-motion needs --text");
                item.text = grammar.tokenize(gn_text);
            } else if (item.task == Task::M2MPredict || item.task == Task::React ||
                       item.task == Task::M2MInbetween) {
                if (gn_motion.empty()) throw ConfigError(gn_task + " needs --motion");
                item.motions.push_back(load_motion(gn_motion));
            } else {
                throw ConfigError("generate does not serve task " + gn_task + "; use caption");
            }
            LaidSequence prompt = prompt_only(item, tokenizer, model.vocab, model.config.layout);
            TargetPlan plan = target_plan_for(item, tokenizer, config.corpus.frames);
            GenerateOutput out = generate(model, prompt, plan,
                                          sampling_from(gn_sampling, gn_temp, gn_topk, config.seed),
                                          2048);
            if (out.truncated) std::cout << "warning: generation truncated at max steps\n";
            const int frames = plan.steps_per_span * tokenizer.config.downsample;
            save_generated_motions(out, tokenizer, frames, gn_out);
        } else if (caption_cmd->parsed()) {
            MotionLm model = load_model(cp_model);
            TokenizerModel tokenizer = load_tokenizer(cp_tok);
            CorpusItem item;
            item.task = task_from_name(cp_task);
            if (item.task != Task::M2T && item.task != Task::IM2T)
                throw ConfigError("caption serves M2T / I-M2T");
            item.motions.push_back(load_motion(cp_motion));
            if (item.task == Task::IM2T) {
                if (cp_motion_b.empty()) throw ConfigError("I-M2T needs --motion-b");
                item.motions.push_back(load_motion(cp_motion_b));
            }
            LaidSequence prompt = prompt_only(item, tokenizer, model.vocab, model.config.layout);
            TargetPlan plan;
            plan.motion_target = false;
            GenerateOutput out = generate(model, prompt, plan, SamplingConfig{}, 64);
            TextGrammar grammar;
            std::vector<int> words;
            for (int id : out.text_ids)
                if (id < model.vocab.n_text) words.push_back(id);
            std::cout << grammar.to_string(words) << "\n";
        } else if (analyze_cmd->parsed()) {
            Layout layout{layout_from_name(ap_layout), ap_levels, ap_steps};
            LayoutCost cost = layout_cost(layout);
            std::cout << "layout " << ap_layout << " T=" << ap_steps << " L=" << ap_levels << "\n";
            std::cout << "length " << cost.sequence_length << "\n";
            std::cout << "cost_class " << cost.cost_class << "\n";
            std::cout << "attention_pairs " << cost.attention_pairs << "\n";
            for (int l = 1; l <= ap_levels; ++l)
                for (int t = 1; t <= ap_steps; ++t) {
                    std::cout << "dep l=" << l << " t=" << t << ":";
                    for (auto& [lam, tau] : dependency_set(layout, l, t))
                        std::cout << " (" << lam << "," << tau << ")";
                    std::cout << "\n";
                }
        } else if (count_cmd->parsed()) {
            BlockConfig bc{cpk, cpf, cph};
            std::cout << "variant      params     params(enum)  flops(N=" << cpn
                      << ")  flops(measured)\n";
            for (TowerVariant v : {TowerVariant{VariantKind::Prototype, cpr, 16.0},
                                   TowerVariant{VariantKind::LoRA, cpr, 16.0},
                                   TowerVariant{VariantKind::MoE, cpr, 16.0},
                                   TowerVariant{VariantKind::MIS, cpr, 16.0}}) {
                Rng rng(1);
                BlockParams base = make_prototype_block(bc, rng);
                BlockParams block = build_variant(base, bc, v, rng);
                std::printf("%-12s %-10lld %-13lld %-12lld %lld\n", variant_name(v.kind),
                            static_cast<long long>(param_count(bc, v)),
                            static_cast<long long>(enumerate_block_params(block, v)),
                            static_cast<long long>(flop_count(bc, v, cpn)),
                            static_cast<long long>(measure_block_flops(block, bc, v, cpn)));
            }
        } else if (report_cmd->parsed()) {
            const std::string out_dir = rp_out.empty() ? rp_run + "-report" : rp_out;
            MetricsReport r = report(rp_run, out_dir);
            std::cout << "report written to " << out_dir << " (" << r.values.size()
                      << " values, " << r.warnings.size() << " warnings)\n";
            for (const auto& w : r.warnings) std::cout << "warning: " << w << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
