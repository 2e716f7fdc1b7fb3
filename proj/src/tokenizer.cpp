// SPDX-License-Identifier: Apache-2.0
#include "motionlm/tokenizer.hpp"

#include <algorithm>
#include <cmath>

#include "motionlm/optimizer.hpp"

namespace motionlm {

namespace {

int stages_for_ratio(int ratio) {
    if (ratio < 1) throw ConfigError("downsample ratio must be >= 1");
    int stages = 0, r = ratio;
    while (r > 1) {
        if (r % 2 != 0) throw ConfigError("downsample ratio must be 1 or a power of two");
        r /= 2;
        ++stages;
    }
    return stages;
}

ConvLayer make_conv(int c_in, int c_out, int k, int stride, int pad, bool activated, Rng& rng,
                    int upsample = 1) {
    ConvLayer layer;
    const Real stddev = std::sqrt(2.0 / (c_in * k));
    layer.w = Tensor::randn({c_out, c_in, k}, rng, stddev, true);
    layer.b = Tensor::zeros({c_out}, true);
    layer.stride = stride;
    layer.pad = pad;
    layer.upsample = upsample;
    layer.activated = activated;
    return layer;
}

Tensor run_stack(const std::vector<ConvLayer>& layers, Tensor x, Activation act) {
    for (const auto& layer : layers) {
        if (layer.upsample > 1) x = upsample_repeat(x, layer.upsample);
        x = conv1d(x, layer.w, layer.b, layer.stride, layer.pad);
        if (layer.activated) x = activation(x, act);
    }
    return x;
}

// [T, d] rows -> channel-major [d, T] tensor (constant leaf).
Tensor rows_to_ct(const RowMat& rows) {
    const int t = static_cast<int>(rows.rows()), d = static_cast<int>(rows.cols());
    Array v(static_cast<int64_t>(d) * t);
    for (int c = 0; c < d; ++c)
        for (int i = 0; i < t; ++i) v(static_cast<int64_t>(c) * t + i) = rows(i, c);
    return Tensor::from_flat({d, t}, std::move(v));
}

RowMat ct_values_to_rows(const Tensor& x) {
    const int d = x.dim(0), t = x.dim(1);
    RowMat rows(t, d);
    for (int c = 0; c < d; ++c)
        for (int i = 0; i < t; ++i) rows(i, c) = x.value()(static_cast<int64_t>(c) * t + i);
    return rows;
}

RowMat padded_frames(const MotionSequence& seq, int ratio) {
    const int t = seq.length();
    const int rem = t % ratio;
    if (rem == 0) return seq.frames;
    const int padded = t + (ratio - rem);
    RowMat out(padded, seq.feature_dim());
    out.topRows(t) = seq.frames;
    for (int i = t; i < padded; ++i) out.row(i) = seq.frames.row(t - 1);  // repeat last frame
    return out;
}

}  // namespace

NamedTensors TokenizerModel::named_parameters() const {
    NamedTensors out;
    for (size_t i = 0; i < encoder.size(); ++i) {
        out.emplace_back("enc." + std::to_string(i) + ".w", encoder[i].w);
        out.emplace_back("enc." + std::to_string(i) + ".b", encoder[i].b);
    }
    for (size_t i = 0; i < decoder.size(); ++i) {
        out.emplace_back("dec." + std::to_string(i) + ".w", decoder[i].w);
        out.emplace_back("dec." + std::to_string(i) + ".b", decoder[i].b);
    }
    return out;
}

NamedTensors TokenizerModel::named_state() const {
    NamedTensors out = named_parameters();
    for (int l = 0; l < rvq.levels(); ++l) {
        const auto& cb = rvq.codebooks[l];
        const int k = static_cast<int>(cb.embeddings.rows());
        Array emb(static_cast<int64_t>(k) * rvq.d), usage(k), sums(static_cast<int64_t>(k) * rvq.d);
        for (int i = 0; i < k; ++i) {
            usage(i) = cb.usage_ema(i);
            for (int j = 0; j < rvq.d; ++j) {
                emb(static_cast<int64_t>(i) * rvq.d + j) = cb.embeddings(i, j);
                sums(static_cast<int64_t>(i) * rvq.d + j) = cb.sum_ema(i, j);
            }
        }
        const std::string prefix = "rvq." + std::to_string(l + 1);
        out.emplace_back(prefix + ".embeddings", Tensor::from_flat({k, rvq.d}, std::move(emb)));
        out.emplace_back(prefix + ".usage", Tensor::from_flat({k}, std::move(usage)));
        out.emplace_back(prefix + ".sum", Tensor::from_flat({k, rvq.d}, std::move(sums)));
    }
    return out;
}

TokenizerModel make_tokenizer(const TokenizerConfig& config, int input_dim, Rng& rng) {
    if (config.levels < 1 || config.codebook_size < 1 || config.latent_dim < 1)
        throw ConfigError("tokenizer needs levels, codebook_size, latent_dim >= 1");
    const int stages = stages_for_ratio(config.downsample);
    TokenizerModel model;
    model.config = config;
    model.input_dim = input_dim;
    const int w = config.width;
    // Non-overlapping strided windows: each latent step owns exactly its
    // ratio-wide frame window, so one step's codes never leak into the next.
    model.encoder.push_back(make_conv(input_dim, w, 1, 1, 0, true, rng));
    for (int s = 0; s < stages; ++s) model.encoder.push_back(make_conv(w, w, 2, 2, 0, true, rng));
    model.encoder.push_back(make_conv(w, config.latent_dim, 1, 1, 0, false, rng));
    model.decoder.push_back(make_conv(config.latent_dim, w, 1, 1, 0, true, rng));
    for (int s = 0; s < stages; ++s)
        model.decoder.push_back(make_conv(w, w, 3, 1, 1, true, rng, /*upsample=*/2));
    model.decoder.push_back(make_conv(w, input_dim, 3, 1, 1, false, rng));
    model.rvq = make_rvq_stack(config.levels, config.codebook_size, config.latent_dim);
    return model;
}

Tensor encoder_forward(const TokenizerModel& model, const Tensor& x_ct) {
    return run_stack(model.encoder, x_ct, model.config.act);
}

Tensor decoder_forward(const TokenizerModel& model, const Tensor& z_ct) {
    return run_stack(model.decoder, z_ct, model.config.act);
}

RowMat encode(const TokenizerModel& model, const MotionSequence& seq) {
    if (seq.feature_dim() != model.input_dim)
        throw ShapeError("encode: motion has " + std::to_string(seq.feature_dim()) +
                         " features, model expects " + std::to_string(model.input_dim));
    const RowMat padded = padded_frames(seq, model.config.downsample);
    Tensor x = rows_to_ct(padded);
    Tensor z = encoder_forward(model, x);
    return ct_values_to_rows(z);
}

MotionSequence decode(const TokenizerModel& model, const RowMat& z, int target_frames) {
    Tensor zt = rows_to_ct(z);
    Tensor x = decoder_forward(model, zt);
    MotionSequence out;
    out.frames = ct_values_to_rows(x);
    if (target_frames >= 0) {
        if (target_frames > out.length())
            throw ShapeError("decode: cannot trim to " + std::to_string(target_frames) +
                             " frames, decoded only " + std::to_string(out.length()));
        out.frames = RowMat(out.frames.topRows(target_frames));
    }
    return out;
}

TokenGrid tokenize(const TokenizerModel& model, const MotionSequence& seq) {
    return quantize_sequence(encode(model, seq), model.rvq).codes;
}

MotionSequence detokenize(const TokenizerModel& model, const TokenGrid& codes, int target_frames) {
    return decode(model, dequantize(codes, model.rvq), target_frames);
}

TokenizerLoss tokenizer_loss(TokenizerModel& model, const MotionSequence& seq) {
    const int t_orig = seq.length();
    const RowMat padded = padded_frames(seq, model.config.downsample);
    Tensor x = rows_to_ct(padded);
    Tensor z = encoder_forward(model, x);  // [d, T]

    const RowMat z_rows = ct_values_to_rows(z);
    SequenceQuantization q = quantize_sequence(z_rows, model.rvq);

    // Cumulative quantized sums per level drive the commitment terms:
    // R^l - sg[R-hat^l] telescopes to Z - sum_{j<=l} R-hat^j.
    TokenizerLoss out;
    out.codes = q.codes;
    out.quant = q;
    Tensor commitment;
    RowMat cumulative = RowMat::Zero(z_rows.rows(), z_rows.cols());
    for (int l = 0; l < model.rvq.levels(); ++l) {
        cumulative += q.quantized[l];
        Tensor diff = sub(z, stop_gradient(rows_to_ct(cumulative)));
        Tensor term = mean(mul(diff, diff));
        commitment = l == 0 ? term : add(commitment, term);
    }

    // Straight-through: values follow the quantized sum, gradients pass to z.
    Tensor bridge = stop_gradient(sub(rows_to_ct(cumulative), z));
    Tensor z_st = add(z, bridge);
    Tensor xhat = decoder_forward(model, z_st);
    const int t_padded = xhat.dim(1);
    Tensor xhat_trim = t_padded == t_orig ? xhat : slice_cols(xhat, 0, t_orig);
    Tensor x_trim = t_padded == t_orig ? x : slice_cols(x, 0, t_orig);
    Tensor recon = mean(abs(sub(xhat_trim, x_trim)));

    out.loss = add(recon, scale(commitment, model.config.beta));
    out.reconstruction = recon.item();
    out.commitment = commitment.item();
    return out;
}

Real reconstruction_mse(const TokenizerModel& model, const std::vector<MotionSequence>& seqs) {
    Real total = 0;
    int64_t count = 0;
    for (const auto& seq : seqs) {
        MotionSequence rec = detokenize(model, tokenize(model, seq), seq.length());
        total += (rec.frames - seq.frames).squaredNorm();
        count += seq.frames.size();
    }
    return total / static_cast<Real>(count);
}

Real reconstruction_mpjpe(const TokenizerModel& model, const std::vector<MotionSequence>& seqs) {
    Real total = 0;
    int64_t count = 0;
    for (const auto& seq : seqs) {
        MotionSequence rec = detokenize(model, tokenize(model, seq), seq.length());
        const int joints = seq.feature_dim() / 2;
        for (int t = 0; t < seq.length(); ++t)
            for (int j = 0; j < joints; ++j) {
                const Real dx = rec.frames(t, 2 * j) - seq.frames(t, 2 * j);
                const Real dy = rec.frames(t, 2 * j + 1) - seq.frames(t, 2 * j + 1);
                total += std::sqrt(dx * dx + dy * dy);
                ++count;
            }
    }
    return total / static_cast<Real>(count);
}

std::vector<MotionSequence> corpus_motions(const std::vector<CorpusItem>& corpus) {
    std::vector<MotionSequence> out;
    for (const auto& item : corpus)
        for (const auto& m : item.motions) out.push_back(m);
    return out;
}

namespace {

void init_codebooks_from_latents(RVQStack& stack, const RowMat& latents, Rng& rng) {
    const int n = static_cast<int>(latents.rows());
    const int k = stack.codes_per_level();
    RowMat residual = latents;
    for (int l = 0; l < stack.levels(); ++l) {
        Codebook& cb = stack.codebooks[l];
        for (int c = 0; c < k; ++c) {
            const int pick = rng.uniform_int(0, n - 1);
            cb.embeddings.row(c) = residual.row(pick);
            cb.usage_ema(c) = 1.0;
            cb.sum_ema.row(c) = residual.row(pick);
        }
        for (int i = 0; i < n; ++i) {
            int best = 0;
            Real best_dist = (residual.row(i) - cb.embeddings.row(0)).squaredNorm();
            for (int c = 1; c < k; ++c) {
                const Real dist = (residual.row(i) - cb.embeddings.row(c)).squaredNorm();
                if (dist < best_dist) { best_dist = dist; best = c; }
            }
            residual.row(i) -= cb.embeddings.row(best);
        }
    }
}

void ema_update(RVQStack& stack, const std::vector<SequenceQuantization>& batch, Real decay,
                Real dead_usage, Rng& rng) {
    const int k = stack.codes_per_level();
    for (int l = 0; l < stack.levels(); ++l) {
        Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
        RowMat sums = RowMat::Zero(k, stack.d);
        std::vector<const RowMat*> pools;
        for (const auto& sq : batch) {
            pools.push_back(&sq.residuals[l]);
            for (int t = 0; t < sq.codes.rows(); ++t) {
                const int c = sq.codes(t, l);
                counts(c) += 1.0;
                sums.row(c) += sq.residuals[l].row(t);
            }
        }
        Codebook& cb = stack.codebooks[l];
        cb.usage_ema = decay * cb.usage_ema + (1.0 - decay) * counts;
        cb.sum_ema = decay * cb.sum_ema + (1.0 - decay) * sums;
        for (int c = 0; c < k; ++c) {
            if (cb.usage_ema(c) >= dead_usage) {
                cb.embeddings.row(c) = cb.sum_ema.row(c) / cb.usage_ema(c);
            } else {
                // dead code: restart at a random latent from this batch
                const auto* pool = pools[rng.uniform_int(0, static_cast<int>(pools.size()) - 1)];
                const int row = rng.uniform_int(0, static_cast<int>(pool->rows()) - 1);
                cb.embeddings.row(c) = pool->row(row);
                cb.usage_ema(c) = 1.0;
                cb.sum_ema.row(c) = pool->row(row);
            }
        }
    }
}

}  // namespace

TokenizerModel train_tokenizer(const std::vector<CorpusItem>& corpus,
                               const TokenizerConfig& config, int input_dim) {
    auto motions = corpus_motions(corpus);
    if (motions.empty()) throw ConfigError("train_tokenizer: empty corpus");
    Rng rng(config.seed);
    TokenizerModel model = make_tokenizer(config, input_dim, rng);

    auto crop_for_training = [&](const MotionSequence& seq, Rng& r) {
        const int len = std::min(config.crop_frames, seq.length());
        const int max_off = seq.length() - len;
        return crop(seq, len, max_off > 0 ? r.uniform_int(0, max_off) : 0);
    };

    // Codebooks start at latents of an untrained encoder over a seed batch.
    {
        RowMat latents;
        const int n_init = std::min<int>(config.batch_size, static_cast<int>(motions.size()));
        for (int i = 0; i < n_init; ++i) {
            RowMat z = encode(model, crop_for_training(motions[i], rng));
            const int base = static_cast<int>(latents.rows());
            latents.conservativeResize(base + z.rows(), model.config.latent_dim);
            latents.bottomRows(z.rows()) = z;
        }
        init_codebooks_from_latents(model.rvq, latents, rng);
    }

    std::vector<Tensor> params;
    for (auto& [name, t] : model.named_parameters()) params.push_back(t);
    AdamW::Options opts;
    opts.lr = config.lr;
    opts.weight_decay = config.weight_decay;
    AdamW optimizer(params, opts);

    for (int step = 0; step < config.steps; ++step) {
        Tape tape;
        Tensor total;
        std::vector<SequenceQuantization> batch_q;
        for (int b = 0; b < config.batch_size; ++b) {
            const auto& seq = motions[rng.uniform_int(0, static_cast<int>(motions.size()) - 1)];
            TokenizerLoss part = tokenizer_loss(model, crop_for_training(seq, rng));
            total = b == 0 ? part.loss : add(total, part.loss);
            batch_q.push_back(std::move(part.quant));
        }
        total = scale(total, 1.0 / config.batch_size);
        if (!std::isfinite(total.item()))
            throw TrainingError("tokenizer loss diverged (non-finite) at step " +
                                std::to_string(step));
        tape.backward(total);
        optimizer.step(cosine_lr_scale(step, config.steps, config.warmup));
        optimizer.zero_grad();
        ema_update(model.rvq, batch_q, config.ema_decay, config.dead_code_usage, rng);
    }
    model.frozen = true;
    return model;
}

namespace {

Real meta_real(const NamedTensors& entries, const std::string& name) {
    for (const auto& [n, t] : entries)
        if (n == name) return t.value()(0);
    throw ParseError("tokenizer checkpoint is missing " + name);
}

}  // namespace

void save_tokenizer(const std::string& path, const TokenizerModel& model) {
    NamedTensors entries = model.named_state();
    auto scalar = [](Real v) { return Tensor::from_flat({1}, Array::Constant(1, v)); };
    entries.emplace_back("meta.levels", scalar(model.config.levels));
    entries.emplace_back("meta.codebook_size", scalar(model.config.codebook_size));
    entries.emplace_back("meta.latent_dim", scalar(model.config.latent_dim));
    entries.emplace_back("meta.width", scalar(model.config.width));
    entries.emplace_back("meta.downsample", scalar(model.config.downsample));
    entries.emplace_back("meta.beta", scalar(model.config.beta));
    entries.emplace_back("meta.act", scalar(static_cast<Real>(model.config.act == Activation::Gelu)));
    entries.emplace_back("meta.input_dim", scalar(model.input_dim));
    entries.emplace_back("meta.frozen", scalar(model.frozen ? 1.0 : 0.0));
    save_checkpoint(path, entries);
}

TokenizerModel load_tokenizer(const std::string& path) {
    NamedTensors entries = load_checkpoint(path);
    TokenizerConfig config;
    config.levels = static_cast<int>(meta_real(entries, "meta.levels"));
    config.codebook_size = static_cast<int>(meta_real(entries, "meta.codebook_size"));
    config.latent_dim = static_cast<int>(meta_real(entries, "meta.latent_dim"));
    config.width = static_cast<int>(meta_real(entries, "meta.width"));
    config.downsample = static_cast<int>(meta_real(entries, "meta.downsample"));
    config.beta = meta_real(entries, "meta.beta");
    config.act = meta_real(entries, "meta.act") > 0.5 ? Activation::Gelu : Activation::Relu;
    const int input_dim = static_cast<int>(meta_real(entries, "meta.input_dim"));
    Rng rng(0);
    TokenizerModel model = make_tokenizer(config, input_dim, rng);
    NamedTensors live = model.named_parameters();
    restore_into(entries, live);
    for (int l = 0; l < model.rvq.levels(); ++l) {
        const std::string prefix = "rvq." + std::to_string(l + 1);
        NamedTensors cb_live = {
            {prefix + ".embeddings", Tensor::zeros({config.codebook_size, config.latent_dim})},
            {prefix + ".usage", Tensor::zeros({config.codebook_size})},
            {prefix + ".sum", Tensor::zeros({config.codebook_size, config.latent_dim})},
        };
        restore_into(entries, cb_live);
        auto& cb = model.rvq.codebooks[l];
        for (int i = 0; i < config.codebook_size; ++i) {
            cb.usage_ema(i) = cb_live[1].second.value()(i);
            for (int j = 0; j < config.latent_dim; ++j) {
                cb.embeddings(i, j) = cb_live[0].second.value()(static_cast<int64_t>(i) * config.latent_dim + j);
                cb.sum_ema(i, j) = cb_live[2].second.value()(static_cast<int64_t>(i) * config.latent_dim + j);
            }
        }
    }
    model.frozen = meta_real(entries, "meta.frozen") > 0.5;
    return model;
}

}  // namespace motionlm
