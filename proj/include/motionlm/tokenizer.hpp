// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "motionlm/checkpoint.hpp"
#include "motionlm/motion_data.hpp"
#include "motionlm/ops.hpp"
#include "motionlm/rvq.hpp"

namespace motionlm {

struct TokenizerConfig {
    int levels = 4;          // L
    int codebook_size = 32;  // K
    int latent_dim = 16;     // d
    int width = 24;          // conv channels
    int downsample = 4;      // T_o / T; 1 or a power of two
    Real beta = 0.02;        // commitment weight
    Activation act = Activation::Relu;

    // training
    int steps = 2000;
    int batch_size = 8;
    Real lr = 1e-3;
    int warmup = 100;
    Real weight_decay = 0.0;
    Real ema_decay = 0.99;
    Real dead_code_usage = 1.0;  // usage EMA below this resets the code
    int crop_frames = 64;
    uint64_t seed = 0;
};

struct ConvLayer {
    Tensor w;  // [C_out, C_in, k]
    Tensor b;  // [C_out]
    int stride = 1;
    int pad = 0;
    int upsample = 1;   // repeat factor applied before the conv
    bool activated = true;
};

// Conv encoder/decoder around an L-deep residual quantizer.
struct TokenizerModel {
    TokenizerConfig config;
    int input_dim = 8;  // d_o
    std::vector<ConvLayer> encoder;
    std::vector<ConvLayer> decoder;
    RVQStack rvq;
    bool frozen = false;

    NamedTensors named_parameters() const;  // conv weights only; codebooks are EMA-owned
    NamedTensors named_state() const;       // parameters plus codebook contents
    int downsample() const { return config.downsample; }
};

TokenizerModel make_tokenizer(const TokenizerConfig& config, int input_dim, Rng& rng);

// Differentiable conv pipelines over channel-major [C, T] tensors.
Tensor encoder_forward(const TokenizerModel& model, const Tensor& x_ct);
Tensor decoder_forward(const TokenizerModel& model, const Tensor& z_ct);

// Motion -> latent rows (T x d). Right-pads with the last frame when T_o is
// not a multiple of the downsample ratio.
RowMat encode(const TokenizerModel& model, const MotionSequence& seq);
// Latent rows -> motion, trimmed to target_frames (-1 keeps everything).
MotionSequence decode(const TokenizerModel& model, const RowMat& z, int target_frames = -1);

TokenGrid tokenize(const TokenizerModel& model, const MotionSequence& seq);
MotionSequence detokenize(const TokenizerModel& model, const TokenGrid& codes,
                          int target_frames = -1);

struct TokenizerLoss {
    Tensor loss;          // recon + beta * commitment
    Real reconstruction = 0;  // mean |X - X-hat|
    Real commitment = 0;
    TokenGrid codes;
    SequenceQuantization quant;
};

// L1 reconstruction plus the per-level commitment terms; the quantization
// step is bridged with a straight-through estimator and the codebook side
// is gradient-stopped.
TokenizerLoss tokenizer_loss(TokenizerModel& model, const MotionSequence& seq);

// Mean squared reconstruction error over a set of sequences.
Real reconstruction_mse(const TokenizerModel& model, const std::vector<MotionSequence>& seqs);
Real reconstruction_mpjpe(const TokenizerModel& model, const std::vector<MotionSequence>& seqs);

// Gradient descent on the conv stacks with EMA codebook updates and
// dead-code resets; returns a frozen model.
TokenizerModel train_tokenizer(const std::vector<CorpusItem>& corpus, const TokenizerConfig& config,
                               int input_dim);

std::vector<MotionSequence> corpus_motions(const std::vector<CorpusItem>& corpus);

void save_tokenizer(const std::string& path, const TokenizerModel& model);
TokenizerModel load_tokenizer(const std::string& path);

}  // namespace motionlm
