// SPDX-License-Identifier: Apache-2.0
#include "motionlm/training.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "motionlm/optimizer.hpp"

namespace motionlm {

using nlohmann::json;

MetricsLogger::MetricsLogger(const std::string& path) : path_(path) {
    std::ofstream f(path_, std::ios::trunc);  // fresh log per run
    if (!f) throw ParseError("cannot open metrics log " + path_);
}

void MetricsLogger::log_training_step(int step, Real loss, Real lr, const NllResult& nll) {
    if (path_.empty()) return;
    json rec;
    rec["step"] = step;
    rec["loss"] = loss;
    rec["lr"] = lr;
    rec["nll"] = nll.mean();
    std::vector<Real> per_stream;
    for (size_t l = 0; l < nll.stream_sum.size(); ++l)
        per_stream.push_back(nll.stream_count[l] > 0 ? nll.stream_sum[l] / nll.stream_count[l] : 0.0);
    rec["nll_per_stream"] = per_stream;
    if (nll.text_count > 0) rec["nll_text"] = nll.text_sum / nll.text_count;
    std::ofstream f(path_, std::ios::app);
    f << rec.dump() << "\n";
}

void MetricsLogger::log_note(const std::string& note) {
    if (path_.empty()) return;
    json rec;
    rec["note"] = note;
    std::ofstream f(path_, std::ios::app);
    f << rec.dump() << "\n";
}

void MetricsLogger::log_metric(const std::string& name, Real value,
                               const std::vector<std::pair<std::string, Real>>& extra) {
    if (path_.empty()) return;
    json rec;
    rec["metric"] = name;
    rec["value"] = value;
    for (const auto& [k, v] : extra) rec[k] = v;
    std::ofstream f(path_, std::ios::app);
    f << rec.dump() << "\n";
}

Vocabulary vocabulary_for(const TokenizerModel& tokenizer) {
    TextGrammar grammar;
    return Vocabulary(grammar.size(), tokenizer.config.levels, tokenizer.config.codebook_size);
}

std::vector<LaidStep> motion_span_steps(const TokenGrid& grid, const Vocabulary& vocab,
                                        LayoutKind layout) {
    std::vector<LaidStep> out;
    const int t_len = static_cast<int>(grid.rows());
    const int levels = static_cast<int>(grid.cols());
    if (levels != vocab.levels)
        throw ShapeError("token grid has " + std::to_string(levels) + " streams, vocabulary L=" +
                         std::to_string(vocab.levels));
    switch (layout) {
        case LayoutKind::Flatten: {
            MultiStreamTokens m = MultiStreamTokens::from_grid(grid);
            for (int i = 0; i < t_len; ++i)
                for (int l = 0; l < levels; ++l)
                    out.push_back(LaidStep::single(vocab.motion_id(l + 1, m.streams(l, i))));
            break;
        }
        case LayoutKind::Parallel: {
            for (int t = 0; t < t_len; ++t) {
                std::vector<int> codes(levels);
                for (int l = 0; l < levels; ++l) codes[l] = grid(t, l);
                out.push_back(LaidStep::group(std::move(codes)));
            }
            break;
        }
        case LayoutKind::Delay: {
            PaddedGrid padded = delay(MultiStreamTokens::from_grid(grid), /*pad_id=*/-1);
            for (int s = 0; s < padded.slots(); ++s) {
                std::vector<int> codes(levels);
                for (int l = 0; l < levels; ++l)
                    codes[l] = padded.rows(l, s) == -1 ? vocab.codes : padded.rows(l, s);
                out.push_back(LaidStep::group(std::move(codes)));
            }
            break;
        }
    }
    return out;
}

namespace {

int predict_prefix_steps(int t_len) {
    // conditioning prefix: first ~20% of the sequence
    return std::max(1, static_cast<int>(std::lround(0.2 * t_len)));
}

int inbetween_edge_steps(int t_len) {
    // ~25% kept on each side; the masked middle spans ~50%
    return std::max(1, static_cast<int>(std::lround(0.25 * t_len)));
}

TokenGrid grid_rows(const TokenGrid& grid, int begin, int count) {
    TokenGrid out = grid.middleRows(begin, count);
    return out;
}

struct SpanPieces {
    std::vector<std::vector<LaidStep>> source_spans;  // motion spans and/or text runs
    std::vector<std::vector<LaidStep>> target_spans;
};

std::vector<LaidStep> text_steps(const std::vector<int>& ids) {
    std::vector<LaidStep> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(LaidStep::single(id));
    return out;
}

SpanPieces build_spans(const CorpusItem& item, const TokenizerModel& tokenizer,
                       const Vocabulary& vocab, LayoutKind layout, bool with_targets) {
    auto span = [&](const TokenGrid& g) { return motion_span_steps(g, vocab, layout); };
    auto tok = [&](const MotionSequence& m) { return tokenize(tokenizer, m); };
    SpanPieces p;
    switch (item.task) {
        case Task::T2M:
            p.source_spans = {text_steps(item.text)};
            if (with_targets) p.target_spans = {span(tok(item.motions.at(0)))};
            break;
        case Task::M2T:
            p.source_spans = {span(tok(item.motions.at(0)))};
            if (with_targets) p.target_spans = {text_steps(item.text)};
            break;
        case Task::IT2M:
            p.source_spans = {text_steps(item.text)};
            if (with_targets)
                p.target_spans = {span(tok(item.motions.at(0))), span(tok(item.motions.at(1)))};
            break;
        case Task::IM2T:
            p.source_spans = {span(tok(item.motions.at(0))), span(tok(item.motions.at(1)))};
            if (with_targets) p.target_spans = {text_steps(item.text)};
            break;
        case Task::M2MPredict: {
            TokenGrid g = tok(item.motions.at(0));
            const int prefix = predict_prefix_steps(static_cast<int>(g.rows()));
            p.source_spans = {span(grid_rows(g, 0, prefix))};
            if (with_targets)
                p.target_spans = {span(grid_rows(g, prefix, static_cast<int>(g.rows()) - prefix))};
            break;
        }
        case Task::M2MInbetween: {
            TokenGrid g = tok(item.motions.at(0));
            const int t_len = static_cast<int>(g.rows());
            const int edge = inbetween_edge_steps(t_len);
            if (2 * edge >= t_len)
                throw ConfigError("motion too short for in-between framing");
            p.source_spans = {span(grid_rows(g, 0, edge)), span(grid_rows(g, t_len - edge, edge))};
            if (with_targets) p.target_spans = {span(grid_rows(g, edge, t_len - 2 * edge))};
            break;
        }
        case Task::IM2M: {
            TokenGrid ga = tok(item.motions.at(0));
            TokenGrid gb = tok(item.motions.at(1));
            const int prefix = predict_prefix_steps(static_cast<int>(ga.rows()));
            p.source_spans = {span(grid_rows(ga, 0, prefix)), span(grid_rows(gb, 0, prefix))};
            if (with_targets)
                p.target_spans = {span(grid_rows(ga, prefix, static_cast<int>(ga.rows()) - prefix)),
                                  span(grid_rows(gb, prefix, static_cast<int>(gb.rows()) - prefix))};
            break;
        }
        case Task::React:
            p.source_spans = {span(tok(item.motions.at(0)))};
            if (with_targets) p.target_spans = {span(tok(item.motions.at(1)))};
            break;
        case Task::Edit: {
            if (item.edit_kind < 0) throw ConfigError("Edit item without an edit kind");
            p.source_spans = {span(tok(item.motions.at(0))), text_steps(item.edit_instruction)};
            if (with_targets) p.target_spans = {span(tok(edit_target(item)))};
            break;
        }
    }
    return p;
}

LaidSequence assemble(const CorpusItem& item, const Vocabulary& vocab, LayoutKind layout,
                      const SpanPieces& pieces, bool include_target) {
    LaidSequence seq;
    seq.layout = layout;
    seq.task = item.task;
    seq.steps.push_back(LaidStep::single(vocab.task_id(item.task)));
    for (size_t i = 0; i < pieces.source_spans.size(); ++i) {
        if (i > 0) seq.steps.push_back(LaidStep::single(vocab.sep_id()));
        for (const auto& s : pieces.source_spans[i]) seq.steps.push_back(s);
    }
    seq.steps.push_back(LaidStep::single(vocab.tgt_id()));
    const int target_begin = static_cast<int>(seq.steps.size());
    if (include_target) {
        for (size_t i = 0; i < pieces.target_spans.size(); ++i) {
            if (i > 0) seq.steps.push_back(LaidStep::single(vocab.sep_id()));
            for (const auto& s : pieces.target_spans[i]) seq.steps.push_back(s);
        }
        seq.steps.push_back(LaidStep::single(vocab.eos_id()));
    }
    seq.target_mask.assign(seq.steps.size(), false);
    for (int i = target_begin; i < static_cast<int>(seq.steps.size()); ++i) seq.target_mask[i] = true;
    return seq;
}

}  // namespace

LaidSequence format_prompt(const CorpusItem& item, const TokenizerModel& tokenizer,
                           const Vocabulary& vocab, LayoutKind layout) {
    return assemble(item, vocab, layout, build_spans(item, tokenizer, vocab, layout, true), true);
}

LaidSequence prompt_only(const CorpusItem& item, const TokenizerModel& tokenizer,
                         const Vocabulary& vocab, LayoutKind layout) {
    return assemble(item, vocab, layout, build_spans(item, tokenizer, vocab, layout, false), false);
}

TargetPlan target_plan_for(const CorpusItem& item, const TokenizerModel& tokenizer,
                           int fallback_frames) {
    TargetPlan plan;
    const int ratio = tokenizer.config.downsample;
    const int t_len = item.motions.empty()
                          ? (fallback_frames + ratio - 1) / ratio
                          : static_cast<int>(tokenize(tokenizer, item.motions.at(0)).rows());
    switch (item.task) {
        case Task::M2T:
        case Task::IM2T:
            plan.motion_target = false;
            break;
        case Task::T2M:
        case Task::React:
        case Task::Edit:
            plan.motion_target = true;
            plan.spans = 1;
            plan.steps_per_span = t_len;
            break;
        case Task::IT2M:
            plan.motion_target = true;
            plan.spans = 2;
            plan.steps_per_span = t_len;
            break;
        case Task::M2MPredict:
            plan.motion_target = true;
            plan.spans = 1;
            plan.steps_per_span = t_len - predict_prefix_steps(t_len);
            break;
        case Task::M2MInbetween:
            plan.motion_target = true;
            plan.spans = 1;
            plan.steps_per_span = t_len - 2 * inbetween_edge_steps(t_len);
            break;
        case Task::IM2M:
            plan.motion_target = true;
            plan.spans = 2;
            plan.steps_per_span = t_len - predict_prefix_steps(t_len);
            break;
    }
    return plan;
}

ParsedPrompt parse_prompt(const LaidSequence& seq, const Vocabulary& vocab) {
    if (seq.steps.empty() || seq.steps[0].is_group)
        throw ParseError("laid sequence does not start with a task token");
    const int first = seq.steps[0].id;
    const int task_base = vocab.task_id(static_cast<Task>(0));
    if (first < task_base || first >= task_base + kNumTasks)
        throw ParseError("laid sequence does not start with a task token");
    ParsedPrompt out;
    out.task = static_cast<Task>(first - task_base);
    for (int i = 1; i < seq.length(); ++i) {
        const LaidStep& s = seq.steps[i];
        if (s.is_group) continue;
        if (s.id == vocab.tgt_id() && out.target_begin < 0) out.target_begin = i + 1;
        else if (s.id == vocab.sep_id()) out.separators.push_back(i);
        else if (s.id == vocab.eos_id()) out.eos = i;
    }
    return out;
}

std::pair<std::vector<CorpusItem>, std::vector<CorpusItem>> split_corpus(
    const std::vector<CorpusItem>& corpus, int holdout_every) {
    std::vector<CorpusItem> train, heldout;
    for (size_t i = 0; i < corpus.size(); ++i) {
        if (holdout_every > 0 && i % holdout_every == 0) heldout.push_back(corpus[i]);
        else train.push_back(corpus[i]);
    }
    return {train, heldout};
}

TokenizerModel run_stage1(const std::vector<CorpusItem>& corpus, const TokenizerConfig& config,
                          int input_dim, MetricsLogger* logger) {
    TokenizerModel model = train_tokenizer(corpus, config, input_dim);
    if (!model.frozen) throw TrainingError("stage 1 must return a frozen tokenizer");
    if (logger) {
        auto motions = corpus_motions(corpus);
        logger->log_metric("stage1_reconstruction_mse", reconstruction_mse(model, motions));
        logger->log_metric("stage1_reconstruction_mpjpe", reconstruction_mpjpe(model, motions));
    }
    return model;
}

namespace {

std::vector<CorpusItem> filter_tasks(const std::vector<CorpusItem>& corpus,
                                     const std::vector<Task>& tasks) {
    std::vector<CorpusItem> out;
    for (const auto& item : corpus)
        for (Task t : tasks)
            if (item.task == t) { out.push_back(item); break; }
    return out;
}

MotionLm train_lm(MotionLm model, const std::vector<CorpusItem>& corpus,
                  const TokenizerModel& tokenizer, const StagePlan& plan,
                  const std::vector<Task>& tasks, MetricsLogger* logger) {
    std::vector<CorpusItem> pool = filter_tasks(corpus, tasks);
    if (pool.empty()) throw ConfigError("no corpus items match the stage's task set");
    std::vector<LaidSequence> formatted;
    formatted.reserve(pool.size());
    for (const auto& item : pool)
        formatted.push_back(format_prompt(item, tokenizer, model.vocab, model.config.layout));

    std::vector<Tensor> params;
    for (auto& [name, t] : model.named_parameters()) params.push_back(t);
    AdamW::Options opts;
    opts.lr = plan.lr;
    opts.weight_decay = plan.weight_decay;
    AdamW optimizer(params, opts);
    Rng rng(plan.seed);

    for (int step = 0; step < plan.steps; ++step) {
        std::vector<LaidSequence> batch;
        for (int b = 0; b < plan.batch_size; ++b)
            batch.push_back(formatted[rng.uniform_int(0, static_cast<int>(formatted.size()) - 1)]);
        Tape tape;
        NllResult nll = forward_nll(model, batch);
        const Real loss = nll.loss.item();
        if (!std::isfinite(loss))
            throw TrainingError("non-finite loss at step " + std::to_string(step));
        tape.backward(nll.loss);
        const Real lr_scale = cosine_lr_scale(step, plan.steps, plan.warmup);
        optimizer.step(lr_scale);
        optimizer.zero_grad();
        if (logger && (step % 25 == 0 || step + 1 == plan.steps))
            logger->log_training_step(step, loss, plan.lr * lr_scale, nll);
    }
    return model;
}

}  // namespace

MotionLm run_stage2(const std::vector<CorpusItem>& corpus, const TokenizerModel& tokenizer,
                    const BackboneConfig& config, const TowerVariant& variant,
                    const StagePlan& plan, MetricsLogger* logger) {
    if (!tokenizer.frozen) throw ConfigError("stage 2 requires a frozen stage-1 tokenizer");
    std::vector<Task> tasks(kStage2Tasks.begin(), kStage2Tasks.end());
    if (!plan.tasks.empty()) {
        for (Task t : plan.tasks) {
            bool ok = false;
            for (Task allowed : kStage2Tasks) ok = ok || t == allowed;
            if (!ok)
                throw ConfigError(std::string("stage 2 cannot train task ") + task_name(t));
        }
        tasks = plan.tasks;
    }
    Rng rng(plan.seed);
    MotionLm model = make_motion_lm(config, vocabulary_for(tokenizer), variant, rng);
    model = train_lm(std::move(model), corpus, tokenizer, plan, tasks, logger);
    model.stage = 2;
    return model;
}

MotionLm run_stage3(const std::vector<CorpusItem>& corpus, const TokenizerModel& tokenizer,
                    const MotionLm& stage2_model, const StagePlan& plan, MetricsLogger* logger) {
    if (stage2_model.stage != 2)
        throw ConfigError("stage 3 refuses a model without stage-2 metadata (stage=" +
                          std::to_string(stage2_model.stage) + ")");
    MotionLm model = clone_model(stage2_model);
    const bool has_tower = enable_task_tower(model);
    if (!has_tower && logger)
        logger->log_note("prototype variant has no motion tower; stage 3 runs without task routing");
    std::vector<Task> tasks = plan.tasks;
    if (tasks.empty())
        tasks = {Task::T2M, Task::M2T, Task::IT2M, Task::IM2T, Task::M2MPredict,
                 Task::M2MInbetween, Task::IM2M, Task::React, Task::Edit};
    model = train_lm(std::move(model), corpus, tokenizer, plan, tasks, logger);
    model.stage = 3;
    return model;
}

NllResult evaluate_nll(const MotionLm& model, const TokenizerModel& tokenizer,
                       const std::vector<CorpusItem>& items, LayoutKind layout) {
    std::vector<LaidSequence> batch;
    for (const auto& item : items)
        batch.push_back(format_prompt(item, tokenizer, model.vocab, layout));
    return forward_nll(model, batch);
}

}  // namespace motionlm
