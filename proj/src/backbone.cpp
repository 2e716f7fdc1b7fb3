// SPDX-License-Identifier: Apache-2.0
#include "motionlm/backbone.hpp"

#include <algorithm>
#include <cmath>

namespace motionlm {

namespace {

void validate_step(const MotionLm& model, const LaidStep& step) {
    const Vocabulary& v = model.vocab;
    if (step.is_group) {
        if (static_cast<int>(step.codes.size()) != v.levels)
            throw VocabError("motion group carries " + std::to_string(step.codes.size()) +
                             " codes, vocabulary has L=" + std::to_string(v.levels));
        for (int c : step.codes)
            if (c < 0 || c > v.codes)  // K is the pad row
                throw VocabError("group code " + std::to_string(c) + " outside [0," +
                                 std::to_string(v.codes) + "]");
    } else {
        v.decompose(step.id);  // throws on out-of-range ids
    }
}

bool step_is_motion(const MotionLm& model, const LaidStep& step) {
    return step.is_group || model.vocab.is_motion(step.id);
}

}  // namespace

NamedTensors MotionLm::named_parameters() const {
    NamedTensors out;
    out.emplace_back("text_embedding", text_embedding);
    for (size_t l = 0; l < stream_embedding.size(); ++l)
        out.emplace_back("stream_embedding." + std::to_string(l + 1), stream_embedding[l]);
    out.emplace_back("pos_embedding", pos_embedding);
    for (size_t i = 0; i < blocks.size(); ++i) {
        NamedTensors blk =
            block_named_parameters(blocks[i], variant, "blocks." + std::to_string(i));
        out.insert(out.end(), blk.begin(), blk.end());
    }
    out.emplace_back("final_ln", final_ln);
    out.emplace_back("text_head.w", text_head_w);
    out.emplace_back("text_head.b", text_head_b);
    for (size_t l = 0; l < motion_head_w.size(); ++l) {
        out.emplace_back("motion_head." + std::to_string(l + 1) + ".w", motion_head_w[l]);
        out.emplace_back("motion_head." + std::to_string(l + 1) + ".b", motion_head_b[l]);
    }
    return out;
}

MotionLm make_motion_lm(const BackboneConfig& config, const Vocabulary& vocab,
                        const TowerVariant& variant, Rng& rng) {
    if (config.d_model % config.n_heads != 0)
        throw ConfigError("d_model must be divisible by the head count");
    MotionLm m;
    m.config = config;
    m.vocab = vocab;
    m.variant = variant;
    m.text_embedding = Tensor::randn({vocab.text_span(), config.d_model}, rng, config.init_std, true);
    for (int l = 0; l < vocab.levels; ++l)
        m.stream_embedding.push_back(
            Tensor::randn({vocab.codes + 1, config.d_model}, rng, config.init_std, true));
    m.pos_embedding = Tensor::randn({config.max_positions, config.d_model}, rng, config.init_std, true);
    BlockConfig bc{config.d_model, config.d_ff, config.n_heads};
    for (int i = 0; i < config.n_layers; ++i) {
        BlockParams proto = make_prototype_block(bc, rng, config.init_std);
        m.blocks.push_back(build_variant(proto, bc, variant, rng));
    }
    m.final_ln = Tensor::from_flat({config.d_model}, Array::Constant(config.d_model, 1.0), true);
    // zero heads: an untrained model scores every token uniformly
    m.text_head_w = Tensor::zeros({config.d_model, vocab.text_span()}, true);
    m.text_head_b = Tensor::zeros({vocab.text_span()}, true);
    for (int l = 0; l < vocab.levels; ++l) {
        m.motion_head_w.push_back(Tensor::zeros({config.d_model, vocab.codes}, true));
        m.motion_head_b.push_back(Tensor::zeros({vocab.codes}, true));
    }
    return m;
}

bool enable_task_tower(MotionLm& model) {
    if (model.variant.kind == VariantKind::Prototype) return false;
    for (auto& block : model.blocks) add_task_tower(block, model.variant);
    model.task_tower = true;
    return true;
}

Route route_for_step(const MotionLm& model, const LaidStep& step, Task task) {
    if (!step_is_motion(model, step)) return Route::Text;
    if (model.task_tower && task_is_motion_to_motion(task)) return Route::MotionTask;
    return Route::MotionMain;
}

Tensor embed_step(const MotionLm& model, const LaidStep& step, int position) {
    validate_step(model, step);
    Tensor out = embedding_rows(model.pos_embedding, {position});
    if (step.is_group) {
        for (int l = 0; l < model.vocab.levels; ++l)
            out = add(out, embedding_rows(model.stream_embedding[l], {step.codes[l]}));
        return out;
    }
    const auto dec = model.vocab.decompose(step.id);
    if (dec.is_motion)
        return add(out, embedding_rows(model.stream_embedding[dec.level - 1], {dec.code}));
    return add(out, embedding_rows(model.text_embedding, {dec.code}));
}

namespace {

Tensor embed_sequence(const MotionLm& model, const LaidSequence& seq) {
    const int n = seq.length();
    if (n > model.config.max_positions)
        throw ConfigError("sequence of " + std::to_string(n) + " steps exceeds max_positions=" +
                          std::to_string(model.config.max_positions));
    std::vector<int> positions(n);
    for (int i = 0; i < n; ++i) positions[i] = i;
    Tensor x = embedding_rows(model.pos_embedding, positions);

    std::vector<int> text_pos, text_ids;
    std::vector<std::vector<int>> stream_pos(model.vocab.levels), stream_rows(model.vocab.levels);
    for (int i = 0; i < n; ++i) {
        const LaidStep& step = seq.steps[i];
        validate_step(model, step);
        if (step.is_group) {
            for (int l = 0; l < model.vocab.levels; ++l) {
                stream_pos[l].push_back(i);
                stream_rows[l].push_back(step.codes[l]);
            }
        } else {
            const auto dec = model.vocab.decompose(step.id);
            if (dec.is_motion) {
                stream_pos[dec.level - 1].push_back(i);
                stream_rows[dec.level - 1].push_back(dec.code);
            } else {
                text_pos.push_back(i);
                text_ids.push_back(dec.code);
            }
        }
    }
    if (!text_pos.empty())
        x = scatter_rows_add(x, embedding_rows(model.text_embedding, text_ids), text_pos);
    for (int l = 0; l < model.vocab.levels; ++l)
        if (!stream_pos[l].empty())
            x = scatter_rows_add(x, embedding_rows(model.stream_embedding[l], stream_rows[l]),
                                 stream_pos[l]);
    return x;
}

std::vector<Route> sequence_tags(const MotionLm& model, const LaidSequence& seq) {
    std::vector<Route> tags(seq.steps.size());
    for (size_t i = 0; i < seq.steps.size(); ++i)
        tags[i] = route_for_step(model, seq.steps[i], seq.task);
    return tags;
}

}  // namespace

Tensor backbone_hidden(const MotionLm& model, const LaidSequence& seq) {
    Tensor x = embed_sequence(model, seq);
    const auto tags = sequence_tags(model, seq);
    BlockConfig bc{model.config.d_model, model.config.d_ff, model.config.n_heads};
    for (const auto& block : model.blocks)
        x = routed_block_forward(x, tags, block, bc, model.variant, model.config.act);
    return rms_layer_norm(x, model.final_ln);
}

NllResult forward_nll(const MotionLm& model, const std::vector<LaidSequence>& batch) {
    NllResult out;
    out.stream_sum.assign(model.vocab.levels, 0.0);
    out.stream_count.assign(model.vocab.levels, 0);
    Tensor total_sum;
    auto accumulate = [&](Tensor ce_sum) {
        total_sum = total_sum.defined() ? add(total_sum, ce_sum) : ce_sum;
    };

    for (const auto& seq : batch) {
        if (seq.target_mask.size() != seq.steps.size())
            throw ShapeError("target mask length does not match the laid sequence");
        if (!seq.target_mask.empty() && seq.target_mask[0])
            throw ShapeError("step 0 cannot be a target: nothing precedes it");
        Tensor hidden = backbone_hidden(model, seq);

        std::vector<int> text_rows, text_targets;
        std::vector<std::vector<int>> stream_rows(model.vocab.levels), stream_targets(model.vocab.levels);
        for (int p = 0; p < seq.length(); ++p) {
            if (!seq.target_mask[p]) continue;
            const LaidStep& step = seq.steps[p];
            if (step.is_group) {
                for (int l = 0; l < model.vocab.levels; ++l) {
                    if (step.codes[l] == model.vocab.codes) continue;  // pad target: masked out
                    stream_rows[l].push_back(p - 1);
                    stream_targets[l].push_back(step.codes[l]);
                }
            } else {
                const auto dec = model.vocab.decompose(step.id);
                if (dec.is_motion) {
                    stream_rows[dec.level - 1].push_back(p - 1);
                    stream_targets[dec.level - 1].push_back(dec.code);
                } else {
                    text_rows.push_back(p - 1);
                    text_targets.push_back(dec.code);
                }
            }
        }

        if (!text_rows.empty()) {
            Tensor logits = add_rowwise(matmul(select_rows(hidden, text_rows), model.text_head_w),
                                        model.text_head_b);
            Tensor ce = cross_entropy_per_row(logits, text_targets);
            for (Eigen::Index i = 0; i < ce.value().size(); ++i) out.text_sum += ce.value()(i);
            out.text_count += static_cast<int64_t>(text_targets.size());
            accumulate(sum(ce));
        }
        for (int l = 0; l < model.vocab.levels; ++l) {
            if (stream_rows[l].empty()) continue;
            Tensor logits = add_rowwise(
                matmul(select_rows(hidden, stream_rows[l]), model.motion_head_w[l]),
                model.motion_head_b[l]);
            Tensor ce = cross_entropy_per_row(logits, stream_targets[l]);
            for (Eigen::Index i = 0; i < ce.value().size(); ++i) out.stream_sum[l] += ce.value()(i);
            out.stream_count[l] += static_cast<int64_t>(stream_targets[l].size());
            accumulate(sum(ce));
        }
    }

    out.count = out.text_count;
    for (int64_t c : out.stream_count) out.count += c;
    if (out.count == 0)
        throw TrainingError("fully masked batch: no target tokens contribute to the loss");
    out.loss = scale(total_sum, 1.0 / static_cast<Real>(out.count));
    out.total = out.text_sum;
    for (Real s : out.stream_sum) out.total += s;
    return out;
}

namespace {

int sample_from_logits(const Array& logits, const SamplingConfig& sampling, Rng& rng) {
    const int v = static_cast<int>(logits.size());
    auto argmax = [&]() {
        int best = 0;
        for (int i = 1; i < v; ++i)
            if (logits(i) > logits(best)) best = i;
        return best;
    };
    switch (sampling.kind) {
        case SamplingConfig::Kind::Greedy:
            return argmax();
        case SamplingConfig::Kind::Temperature: {
            if (sampling.temperature < 1e-6) return argmax();
            Array scaled = logits / sampling.temperature;
            const Real mx = scaled.maxCoeff();
            Array p = (scaled - mx).exp();
            p /= p.sum();
            Real u = rng.uniform();
            for (int i = 0; i < v; ++i) {
                u -= p(i);
                if (u <= 0) return i;
            }
            return v - 1;
        }
        case SamplingConfig::Kind::TopK: {
            const int k = std::max(1, std::min(sampling.top_k, v));
            std::vector<int> order(v);
            for (int i = 0; i < v; ++i) order[i] = i;
            std::partial_sort(order.begin(), order.begin() + k, order.end(),
                              [&](int a, int b) { return logits(a) > logits(b); });
            Array top(k);
            for (int i = 0; i < k; ++i) top(i) = logits(order[i]);
            const Real mx = top.maxCoeff();
            Array p = (top - mx).exp();
            p /= p.sum();
            Real u = rng.uniform();
            for (int i = 0; i < k; ++i) {
                u -= p(i);
                if (u <= 0) return order[i];
            }
            return order[k - 1];
        }
    }
    return argmax();
}

Array head_logits(const MotionLm& model, const Tensor& hidden, int row, const Tensor& w,
                  const Tensor& b) {
    Tensor logits = add_rowwise(matmul(select_rows(hidden, {row}), w), b);
    (void)model;
    return logits.value();
}

}  // namespace

GenerateOutput generate(const MotionLm& model, const LaidSequence& prompt, const TargetPlan& plan,
                        const SamplingConfig& sampling, int max_steps) {
    GenerateOutput out;
    out.sequence = prompt;
    out.sequence.target_mask.assign(prompt.steps.size(), false);
    Rng rng(sampling.seed);
    int budget = max_steps;

    auto forward_last = [&]() {
        Tensor hidden = backbone_hidden(model, out.sequence);
        return hidden;
    };
    auto append = [&](LaidStep step) {
        out.sequence.steps.push_back(std::move(step));
        out.sequence.target_mask.push_back(true);
    };

    if (!plan.motion_target) {
        while (budget-- > 0) {
            Tensor hidden = forward_last();
            Array logits = head_logits(model, hidden, out.sequence.length() - 1, model.text_head_w,
                                       model.text_head_b);
            const int id = sample_from_logits(logits, sampling, rng);
            if (id == model.vocab.eos_id()) return out;
            append(LaidStep::single(id));
            out.text_ids.push_back(id);
        }
        out.truncated = true;
        return out;
    }

    const int t_span = plan.steps_per_span;
    const int levels = model.vocab.levels;
    for (int span = 0; span < plan.spans; ++span) {
        if (span > 0) {
            if (budget-- <= 0) { out.truncated = true; return out; }
            append(LaidStep::single(model.vocab.sep_id()));
        }
        std::vector<LaidStep> span_steps;
        const int span_len = out.sequence.layout == LayoutKind::Flatten ? t_span * levels
                            : out.sequence.layout == LayoutKind::Delay  ? t_span + levels - 1
                                                                        : t_span;
        for (int s = 0; s < span_len; ++s) {
            if (budget-- <= 0) { out.truncated = true; return out; }
            Tensor hidden = forward_last();
            const int row = out.sequence.length() - 1;
            LaidStep step;
            switch (out.sequence.layout) {
                case LayoutKind::Flatten: {
                    const int l = s % levels;  // level-major within each timestep
                    Array logits =
                        head_logits(model, hidden, row, model.motion_head_w[l], model.motion_head_b[l]);
                    step = LaidStep::single(
                        model.vocab.motion_id(l + 1, sample_from_logits(logits, sampling, rng)));
                    break;
                }
                case LayoutKind::Parallel: {
                    std::vector<int> codes(levels);
                    for (int l = 0; l < levels; ++l) {
                        Array logits = head_logits(model, hidden, row, model.motion_head_w[l],
                                                   model.motion_head_b[l]);
                        codes[l] = sample_from_logits(logits, sampling, rng);
                    }
                    step = LaidStep::group(std::move(codes));
                    break;
                }
                case LayoutKind::Delay: {
                    std::vector<int> codes(levels, model.vocab.codes);  // pad row
                    for (int l = 0; l < levels; ++l) {
                        const int within = s - l;  // structurally forced pads outside [0, T)
                        if (within < 0 || within >= t_span) continue;
                        Array logits = head_logits(model, hidden, row, model.motion_head_w[l],
                                                   model.motion_head_b[l]);
                        codes[l] = sample_from_logits(logits, sampling, rng);
                    }
                    step = LaidStep::group(std::move(codes));
                    break;
                }
            }
            span_steps.push_back(step);
            append(std::move(step));
        }

        // collect the span into a T x L grid
        if (out.sequence.layout == LayoutKind::Flatten) {
            std::vector<int> flat;
            for (const auto& s : span_steps) flat.push_back(model.vocab.decompose(s.id).code);
            TokenGrid grid(t_span, levels);
            for (int t = 0; t < t_span; ++t)
                for (int l = 0; l < levels; ++l) grid(t, l) = flat[static_cast<size_t>(t) * levels + l];
            out.motion_grids.push_back(grid);
        } else if (out.sequence.layout == LayoutKind::Parallel) {
            TokenGrid grid(t_span, levels);
            for (int t = 0; t < t_span; ++t)
                for (int l = 0; l < levels; ++l) grid(t, l) = span_steps[t].codes[l];
            out.motion_grids.push_back(grid);
        } else {
            PaddedGrid padded;
            padded.pad_id = -1;  // rows hold raw codes in [0, K); -1 stays outside
            padded.rows.resize(levels, span_len);
            for (int s = 0; s < span_len; ++s)
                for (int l = 0; l < levels; ++l)
                    padded.rows(l, s) =
                        span_steps[s].codes[l] == model.vocab.codes ? -1 : span_steps[s].codes[l];
            out.motion_grids.push_back(undelay(padded).to_grid());
        }
    }
    if (budget-- <= 0) { out.truncated = true; return out; }
    append(LaidStep::single(model.vocab.eos_id()));
    return out;
}

std::set<std::pair<int, int>> jacobian_dependency_probe(MotionLm& model, LayoutKind kind,
                                                        int level, int step, int steps_total,
                                                        Real threshold) {
    const int levels = model.vocab.levels;
    if (steps_total > model.vocab.codes)
        throw ConfigError("probe needs steps <= K so each (level, step) owns an embedding row");
    if (model.motion_head_w[level - 1].value().abs().maxCoeff() == 0.0)
        throw ConfigError("probe requires non-zero head weights for the target stream");
    Layout layout{kind, levels, steps_total};
    const int target_slot = slot_of(layout, level, step);
    if (target_slot == 0) return {};

    // one private code per (stream, step): stream l uses code tau-1 at step tau
    LaidSequence seq;
    seq.layout = kind;
    seq.task = Task::T2M;
    const int n = laid_out_length(layout);
    for (int s = 0; s < n; ++s) {
        if (kind == LayoutKind::Flatten) {
            auto toks = slot_tokens(layout, s);
            seq.steps.push_back(LaidStep::single(model.vocab.motion_id(toks[0].first, toks[0].second - 1)));
        } else {
            std::vector<int> codes(levels, model.vocab.codes);
            for (auto& [lam, tau] : slot_tokens(layout, s)) codes[lam - 1] = tau - 1;
            seq.steps.push_back(LaidStep::group(std::move(codes)));
        }
    }
    seq.target_mask.assign(seq.steps.size(), false);

    for (auto& emb : model.stream_embedding) emb.zero_grad();
    {
        Tape tape;
        Tensor hidden = backbone_hidden(model, seq);
        Tensor logits = add_rowwise(matmul(select_rows(hidden, {target_slot - 1}),
                                           model.motion_head_w[level - 1]),
                                    model.motion_head_b[level - 1]);
        tape.backward(sum(logits));
    }

    std::set<std::pair<int, int>> influences;
    const int d = model.config.d_model;
    for (int lam = 1; lam <= levels; ++lam) {
        const Array g = model.stream_embedding[lam - 1].grad();
        for (int tau = 1; tau <= steps_total; ++tau) {
            Real mx = 0;
            for (int j = 0; j < d; ++j)
                mx = std::max(mx, std::abs(g(static_cast<int64_t>(tau - 1) * d + j)));
            if (mx > threshold) influences.insert({lam, tau});
        }
    }
    for (auto& emb : model.stream_embedding) emb.zero_grad();
    return influences;
}

MotionLm clone_model(const MotionLm& model) {
    Rng rng(0);
    MotionLm out = make_motion_lm(model.config, model.vocab, model.variant, rng);
    if (model.task_tower) enable_task_tower(out);
    out.stage = model.stage;
    NamedTensors src = model.named_parameters();
    NamedTensors dst = out.named_parameters();
    if (src.size() != dst.size()) throw std::logic_error("clone_model: parameter walk mismatch");
    for (size_t i = 0; i < src.size(); ++i) {
        if (src[i].first != dst[i].first)
            throw std::logic_error("clone_model: parameter order mismatch at " + src[i].first);
        dst[i].second.value() = src[i].second.value();
    }
    return out;
}

namespace {

Real meta_value(const NamedTensors& entries, const std::string& name) {
    for (const auto& [n, t] : entries)
        if (n == name) return t.value()(0);
    throw ParseError("model checkpoint is missing " + name);
}

}  // namespace

void save_model(const std::string& path, const MotionLm& model) {
    NamedTensors entries = model.named_parameters();
    auto scalar = [](Real v) { return Tensor::from_flat({1}, Array::Constant(1, v)); };
    entries.emplace_back("meta.d_model", scalar(model.config.d_model));
    entries.emplace_back("meta.d_ff", scalar(model.config.d_ff));
    entries.emplace_back("meta.n_heads", scalar(model.config.n_heads));
    entries.emplace_back("meta.n_layers", scalar(model.config.n_layers));
    entries.emplace_back("meta.max_positions", scalar(model.config.max_positions));
    entries.emplace_back("meta.act", scalar(model.config.act == Activation::Gelu ? 1.0 : 0.0));
    entries.emplace_back("meta.layout", scalar(static_cast<Real>(model.config.layout)));
    entries.emplace_back("meta.n_text", scalar(model.vocab.n_text));
    entries.emplace_back("meta.levels", scalar(model.vocab.levels));
    entries.emplace_back("meta.codes", scalar(model.vocab.codes));
    entries.emplace_back("meta.variant", scalar(static_cast<Real>(model.variant.kind)));
    entries.emplace_back("meta.lora_rank", scalar(model.variant.lora_rank));
    entries.emplace_back("meta.lora_alpha", scalar(model.variant.lora_alpha));
    entries.emplace_back("meta.task_tower", scalar(model.task_tower ? 1.0 : 0.0));
    entries.emplace_back("meta.stage", scalar(model.stage));
    save_checkpoint(path, entries);
}

MotionLm load_model(const std::string& path) {
    NamedTensors entries = load_checkpoint(path);
    BackboneConfig config;
    config.d_model = static_cast<int>(meta_value(entries, "meta.d_model"));
    config.d_ff = static_cast<int>(meta_value(entries, "meta.d_ff"));
    config.n_heads = static_cast<int>(meta_value(entries, "meta.n_heads"));
    config.n_layers = static_cast<int>(meta_value(entries, "meta.n_layers"));
    config.max_positions = static_cast<int>(meta_value(entries, "meta.max_positions"));
    config.act = meta_value(entries, "meta.act") > 0.5 ? Activation::Gelu : Activation::Relu;
    config.layout = static_cast<LayoutKind>(static_cast<int>(meta_value(entries, "meta.layout")));
    Vocabulary vocab(static_cast<int>(meta_value(entries, "meta.n_text")),
                     static_cast<int>(meta_value(entries, "meta.levels")),
                     static_cast<int>(meta_value(entries, "meta.codes")));
    TowerVariant variant;
    variant.kind = static_cast<VariantKind>(static_cast<int>(meta_value(entries, "meta.variant")));
    variant.lora_rank = static_cast<int>(meta_value(entries, "meta.lora_rank"));
    variant.lora_alpha = meta_value(entries, "meta.lora_alpha");

    Rng rng(0);
    MotionLm model = make_motion_lm(config, vocab, variant, rng);
    if (meta_value(entries, "meta.task_tower") > 0.5) enable_task_tower(model);
    model.stage = static_cast<int>(meta_value(entries, "meta.stage"));
    NamedTensors live = model.named_parameters();
    restore_into(entries, live);
    return model;
}

}  // namespace motionlm
