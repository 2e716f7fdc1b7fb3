// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "motionlm/grad_check.hpp"
#include "motionlm/tokenizer.hpp"

using namespace motionlm;
namespace fs = std::filesystem;

namespace {

RVQStack random_stack(int levels, int codes, int d, Rng& rng, Real stddev = 1.0) {
    RVQStack stack = make_rvq_stack(levels, codes, d);
    for (auto& cb : stack.codebooks)
        for (int i = 0; i < codes; ++i)
            for (int j = 0; j < d; ++j) cb.embeddings(i, j) = rng.normal(0.0, stddev);
    return stack;
}

// Independent brute-force pass: per level, scan all codes with an explicit
// distance loop; never calls quantize_vector.
Eigen::VectorXi brute_force_codes(const Eigen::VectorXd& z, const RVQStack& stack) {
    Eigen::VectorXi codes(stack.levels());
    Eigen::VectorXd r = z;
    for (int l = 0; l < stack.levels(); ++l) {
        const auto& emb = stack.codebooks[l].embeddings;
        int best = -1;
        Real best_dist = std::numeric_limits<Real>::infinity();
        for (int k = 0; k < emb.rows(); ++k) {
            Real dist = 0;
            for (int j = 0; j < stack.d; ++j) {
                const Real diff = r(j) - emb(k, j);
                dist += diff * diff;
            }
            if (dist < best_dist) { best_dist = dist; best = k; }
        }
        codes(l) = best;
        for (int j = 0; j < stack.d; ++j) r(j) -= emb(best, j);
    }
    return codes;
}

}  // namespace

TEST_CASE("zero-residual chain: exact codebook hit and zero embeddings downstream") {
    Rng rng(1);
    RVQStack stack = random_stack(3, 4, 2, rng);
    // plant a zero embedding at index 2 of levels 2..3
    stack.codebooks[1].embeddings.row(2).setZero();
    stack.codebooks[2].embeddings.row(2).setZero();
    const int k_star = 3;
    Eigen::VectorXd z = stack.codebooks[0].embeddings.row(k_star).transpose();

    QuantizeResult q = quantize_vector(z, stack);
    CHECK(q.codes(0) == k_star);
    CHECK(q.codes(1) == 2);
    CHECK(q.codes(2) == 2);
    for (int j = 0; j < 2; ++j) CHECK(q.final_residual(j) == 0.0);

    TokenGrid grid(1, 3);
    grid << q.codes(0), q.codes(1), q.codes(2);
    RowMat rec = dequantize(grid, stack);
    for (int j = 0; j < 2; ++j) CHECK(rec(0, j) == z(j));

    // re-quantizing the reconstruction returns the same codes
    QuantizeResult q2 = quantize_vector(rec.row(0).transpose(), stack);
    CHECK(q2.codes == q.codes);
}

TEST_CASE("two-level worked example matches the brute-force oracle") {
    RVQStack stack = make_rvq_stack(2, 2, 2);
    stack.codebooks[0].embeddings << 0, 0, 1, 0;
    stack.codebooks[1].embeddings << 0, 0, 0, 1;
    Eigen::VectorXd z(2);
    z << 0.9, 0.8;
    QuantizeResult q = quantize_vector(z, stack);
    CHECK(q.codes(0) == 1);
    CHECK(q.codes(1) == 1);
    TokenGrid grid(1, 2);
    grid << 1, 1;
    RowMat rec = dequantize(grid, stack);
    CHECK(rec(0, 0) == 1.0);
    CHECK(rec(0, 1) == 1.0);
    CHECK(brute_force_codes(z, stack) == q.codes);
}

TEST_CASE("argmin ties break to the lowest code index") {
    RVQStack stack = make_rvq_stack(1, 3, 2);
    stack.codebooks[0].embeddings << 1, 0, 1, 0, 0, 1;  // codes 0 and 1 identical
    Eigen::VectorXd z(2);
    z << 1, 0;
    CHECK(quantize_vector(z, stack).codes(0) == 0);
}

TEST_CASE("telescoping identity holds exactly; quantize matches brute force") {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const int levels = rng.uniform_int(1, 6);
        const int codes = rng.uniform_int(1, 32);
        const int d = rng.uniform_int(1, 8);
        RVQStack stack = random_stack(levels, codes, d, rng);
        Eigen::VectorXd z(d);
        for (int j = 0; j < d; ++j) z(j) = rng.normal(0, 2.0);

        QuantizeResult q = quantize_vector(z, stack);
        CHECK(brute_force_codes(z, stack) == q.codes);

        // independent sequential chain: r <- r - e^l(k^l), bitwise
        Eigen::VectorXd r = z;
        for (int l = 0; l < levels; ++l) {
            for (int j = 0; j < d; ++j) CHECK(q.residuals(l, j) == r(j));
            r -= stack.codebooks[l].embeddings.row(q.codes(l)).transpose();
        }
        for (int j = 0; j < d; ++j) CHECK(q.final_residual(j) == r(j));
    }
}

TEST_CASE("quantize_sequence: rows agree with independent per-vector calls") {
    Rng rng(3);
    RVQStack stack = random_stack(3, 8, 4, rng);
    RowMat z(5, 4);
    for (int t = 0; t < 5; ++t)
        for (int j = 0; j < 4; ++j) z(t, j) = rng.normal(0, 1.5);

    SequenceQuantization sq = quantize_sequence(z, stack);
    RowMat sum_quantized = RowMat::Zero(5, 4);
    for (int l = 0; l < 3; ++l) sum_quantized += sq.quantized[l];
    RowMat deq = dequantize(sq.codes, stack);
    for (int t = 0; t < 5; ++t)
        for (int j = 0; j < 4; ++j) CHECK(sum_quantized(t, j) == deq(t, j));

    for (int t = 0; t < 5; ++t) {
        QuantizeResult q = quantize_vector(z.row(t).transpose(), stack);
        for (int l = 0; l < 3; ++l) {
            CHECK(sq.codes(t, l) == q.codes(l));
            for (int j = 0; j < 4; ++j) CHECK(sq.residuals[l](t, j) == q.residuals(l, j));
        }
    }

    // T=1 reduces to quantize_vector
    SequenceQuantization one = quantize_sequence(z.topRows(1), stack);
    QuantizeResult q0 = quantize_vector(z.row(0).transpose(), stack);
    for (int l = 0; l < 3; ++l) CHECK(one.codes(0, l) == q0.codes(l));
}

TEST_CASE("dequantize edge cases") {
    Rng rng(4);
    RVQStack one = random_stack(1, 6, 3, rng);
    TokenGrid grid(2, 1);
    grid << 4, 1;
    RowMat deq = dequantize(grid, one);
    for (int j = 0; j < 3; ++j) {
        CHECK(deq(0, j) == one.codebooks[0].embeddings(4, j));
        CHECK(deq(1, j) == one.codebooks[0].embeddings(1, j));
    }

    RVQStack zeros = make_rvq_stack(2, 3, 3);
    TokenGrid g2(2, 2);
    g2 << 0, 1, 2, 2;
    CHECK(dequantize(g2, zeros).cwiseAbs().maxCoeff() == 0.0);

    TokenGrid bad(1, 1);
    bad << 6;
    CHECK_THROWS_AS(dequantize(bad, one), IndexError);
}

TEST_CASE("encode/decode shapes: ratio, padding, trim") {
    Rng rng(5);
    TokenizerConfig config;
    config.downsample = 4;
    config.latent_dim = 6;
    config.width = 12;
    TokenizerModel model = make_tokenizer(config, 8, rng);

    SyntheticSpec spec;
    auto items = generate_corpus(spec, 1);
    const auto& m = items[0].motions[0];  // 64 x 8
    RowMat z = encode(model, m);
    CHECK(z.rows() == 16);  // 64 / 4
    CHECK(z.cols() == 6);
    MotionSequence rec = decode(model, z, m.length());
    CHECK(rec.length() == m.length());
    CHECK(rec.feature_dim() == m.feature_dim());

    // non-divisible length: right-pad with the last frame, trim after decode
    MotionSequence shorter = crop(m, 30, 0);
    RowMat z2 = encode(model, shorter);
    CHECK(z2.rows() == 8);  // ceil(30/4)
    MotionSequence rec2 = detokenize(model, tokenize(model, shorter), 30);
    CHECK(rec2.length() == 30);
}

TEST_CASE("ratio-1 model with center-tap kernels is a per-frame linear map") {
    Rng rng(6);
    TokenizerConfig config;
    config.downsample = 1;
    config.latent_dim = 8;
    config.width = 8;
    TokenizerModel model = make_tokenizer(config, 8, rng);
    // zero all taps except the center; encoder becomes x -> M2 relu(M1 x)
    for (auto& layer : model.encoder) {
        auto& v = layer.w.value();
        const int cout = layer.w.dim(0), cin = layer.w.dim(1), k = layer.w.dim(2);
        for (int co = 0; co < cout; ++co)
            for (int ci = 0; ci < cin; ++ci)
                for (int j = 0; j < k; ++j)
                    if (j != k / 2) v(static_cast<int64_t>(co) * cin * k + ci * k + j) = 0.0;
    }
    SyntheticSpec spec;
    auto items = generate_corpus(spec, 1);
    MotionSequence m = crop(items[0].motions[0], 6, 0);
    RowMat z = encode(model, m);
    // per-frame: encoding frame t alone gives the same row
    for (int t = 0; t < 6; ++t) {
        MotionSequence single;
        single.frames = m.frames.middleRows(t, 1);
        RowMat zt = encode(model, single);
        for (int j = 0; j < 8; ++j) CHECK(zt(0, j) == doctest::Approx(z(t, j)).epsilon(1e-12));
    }
}

TEST_CASE("tokenizer loss: zero at perfect reconstruction, pure L1 at beta 0") {
    // Identity-by-construction model: ratio 1, encoder/decoder center taps
    // the identity, codebook level 1 holds the exact latents.
    TokenizerConfig config;
    config.downsample = 1;
    config.latent_dim = 4;
    config.width = 4;
    config.levels = 2;
    config.codebook_size = 8;
    Rng rng(7);
    TokenizerModel model = make_tokenizer(config, 4, rng);
    auto set_identity = [](std::vector<ConvLayer>& layers) {
        for (auto& layer : layers) {
            layer.w.value().setZero();
            layer.b.value().setZero();
            layer.activated = false;
            const int cout = layer.w.dim(0), cin = layer.w.dim(1), k = layer.w.dim(2);
            REQUIRE(cout == cin);
            for (int c = 0; c < cout; ++c)
                layer.w.value()(static_cast<int64_t>(c) * cin * k + c * k + k / 2) = 1.0;
        }
    };
    set_identity(model.encoder);
    set_identity(model.decoder);

    MotionSequence m;
    m.frames.resize(3, 4);
    m.frames << 1, 2, 3, 4, -1, 0.5, 2, -2, 0, 0, 1, 1;
    RowMat z = encode(model, m);
    for (int t = 0; t < 3; ++t)
        for (int j = 0; j < 4; ++j) REQUIRE(z(t, j) == m.frames(t, j));
    // codebook 1: exact latents; codebook 2: zero row at index 0
    for (int t = 0; t < 3; ++t) model.rvq.codebooks[0].embeddings.row(t) = z.row(t);
    for (int r = 3; r < 8; ++r) model.rvq.codebooks[0].embeddings.row(r).setConstant(99.0);
    model.rvq.codebooks[1].embeddings.setConstant(7.0);
    model.rvq.codebooks[1].embeddings.row(0).setZero();

    TokenizerLoss result = tokenizer_loss(model, m);
    CHECK(result.loss.item() == 0.0);
    CHECK(result.reconstruction == 0.0);
    CHECK(result.commitment == 0.0);

    // beta = 0: loss equals the naive mean absolute reconstruction error.
    Rng rng2(8);
    TokenizerConfig c2;
    c2.beta = 0.0;
    c2.downsample = 2;
    c2.width = 8;
    c2.latent_dim = 4;
    TokenizerModel m2 = make_tokenizer(c2, 4, rng2);
    for (auto& cb : m2.rvq.codebooks)
        for (int i = 0; i < cb.embeddings.rows(); ++i)
            for (int j = 0; j < cb.embeddings.cols(); ++j) cb.embeddings(i, j) = rng2.normal(0, 0.3);
    MotionSequence m3;
    m3.frames.resize(6, 4);
    for (int t = 0; t < 6; ++t)
        for (int j = 0; j < 4; ++j) m3.frames(t, j) = rng2.normal(0, 1);
    TokenizerLoss r2 = tokenizer_loss(m2, m3);
    MotionSequence rec = detokenize(m2, tokenize(m2, m3), 6);
    const Real l1 = (rec.frames - m3.frames).cwiseAbs().mean();
    CHECK(r2.loss.item() == doctest::Approx(l1).epsilon(1e-12));
}

TEST_CASE("commitment gradient never reaches codebook embeddings (2-code toy)") {
    // Commitment built from tensor-wrapped embeddings through stop_gradient:
    // z-side gradients match finite differences, embedding side is zero.
    Rng rng(9);
    Tensor z = Tensor::randn({3, 2}, rng, 1.0, true);
    Tensor emb = Tensor::randn({2, 2}, rng, 1.0, true);

    auto commitment = [&]() {
        // nearest code per row under the current embedding values
        std::vector<int> codes;
        for (int t = 0; t < 3; ++t) {
            Real d0 = 0, d1 = 0;
            for (int j = 0; j < 2; ++j) {
                d0 += std::pow(z.value()(t * 2 + j) - emb.value()(j), 2);
                d1 += std::pow(z.value()(t * 2 + j) - emb.value()(2 + j), 2);
            }
            codes.push_back(d0 <= d1 ? 0 : 1);
        }
        Tensor quantized = embedding_rows(emb, codes);
        Tensor diff = sub(z, stop_gradient(quantized));
        return mean(mul(diff, diff));
    };

    {
        Tape tape;
        Tensor loss = commitment();
        tape.backward(loss);
    }
    for (int i = 0; i < 4; ++i) CHECK(emb.grad()(i) == 0.0);
    for (int i = 0; i < 6; ++i) CHECK(z.grad()(i) != 0.0);
    CHECK(grad_check_multi(commitment, {z}) < 1e-6);
}

TEST_CASE("full tokenizer loss gradients reach the encoder and decoder") {
    Rng rng(10);
    TokenizerConfig config;
    config.downsample = 2;
    config.width = 6;
    config.latent_dim = 4;
    config.levels = 2;
    config.codebook_size = 4;
    TokenizerModel model = make_tokenizer(config, 4, rng);
    for (auto& cb : model.rvq.codebooks)
        for (int i = 0; i < cb.embeddings.rows(); ++i)
            for (int j = 0; j < cb.embeddings.cols(); ++j) cb.embeddings(i, j) = rng.normal(0, 0.2);
    MotionSequence m;
    m.frames.resize(8, 4);
    for (int t = 0; t < 8; ++t)
        for (int j = 0; j < 4; ++j) m.frames(t, j) = rng.normal(0, 1);
    Tape tape;
    TokenizerLoss result = tokenizer_loss(model, m);
    tape.backward(result.loss);
    Real enc_norm = 0, dec_norm = 0;
    for (const auto& layer : model.encoder) enc_norm += layer.w.grad().abs().sum();
    for (const auto& layer : model.decoder) dec_norm += layer.w.grad().abs().sum();
    CHECK(enc_norm > 0.0);  // straight-through passes decoder gradients to the encoder
    CHECK(dec_norm > 0.0);
}

TEST_CASE("encoder and decoder stacks pass finite-difference gradient checks") {
    Rng rng(11);
    TokenizerConfig config;
    config.downsample = 2;
    config.width = 4;
    config.latent_dim = 3;
    TokenizerModel model = make_tokenizer(config, 3, rng);
    Tensor x = Tensor::randn({3, 6}, rng, 1.0, false);
    Tensor cot = Tensor::randn({3, 6}, rng, 1.0, false);

    std::vector<Tensor> enc_params, dec_params;
    for (auto& l : model.encoder) { enc_params.push_back(l.w); enc_params.push_back(l.b); }
    for (auto& l : model.decoder) { dec_params.push_back(l.w); dec_params.push_back(l.b); }

    const Real enc_err = grad_check_multi([&] {
        Tensor z = encoder_forward(model, x);
        Rng r(12);
        return sum(mul(z, Tensor::randn(z.shape(), r, 1.0, false)));
    }, enc_params);
    CHECK(enc_err < 1e-4);

    Tensor zin = Tensor::randn({3, 3}, rng, 1.0, false);
    const Real dec_err = grad_check_multi([&] {
        Tensor out = decoder_forward(model, zin);
        Rng r(13);
        return sum(mul(out, Tensor::randn(out.shape(), r, 1.0, false)));
    }, dec_params);
    CHECK(dec_err < 1e-4);
}

TEST_CASE("token file round trip is bit-exact; truncation is a parse error") {
    Rng rng(14);
    TokenGrid grid(7, 3);
    for (int t = 0; t < 7; ++t)
        for (int l = 0; l < 3; ++l) grid(t, l) = rng.uniform_int(0, 31);
    const auto dir = fs::temp_directory_path() / "motionlm_tokens";
    fs::create_directories(dir);
    const std::string path = (dir / "grid.tokens").string();
    save_tokens(path, grid, 32);
    int k = 0;
    TokenGrid loaded = load_tokens(path, &k);
    CHECK(k == 32);
    REQUIRE(loaded.rows() == 7);
    REQUIRE(loaded.cols() == 3);
    for (int t = 0; t < 7; ++t)
        for (int l = 0; l < 3; ++l) CHECK(loaded(t, l) == grid(t, l));

    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    const std::string cut = (dir / "cut.tokens").string();
    {
        std::ofstream out(cut, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 3));
    }
    CHECK_THROWS_AS(load_tokens(cut), ParseError);
    fs::remove_all(dir);
}

TEST_CASE("training is deterministic and freezes the model") {
    SyntheticSpec spec;
    spec.seed = 40;
    auto corpus = generate_corpus(spec, 12);
    TokenizerConfig config;
    config.steps = 25;
    config.batch_size = 4;
    config.levels = 2;
    config.codebook_size = 8;
    config.latent_dim = 6;
    config.width = 8;
    config.seed = 77;
    TokenizerModel a = train_tokenizer(corpus, config, 8);
    TokenizerModel b = train_tokenizer(corpus, config, 8);
    CHECK(a.frozen);
    const auto dir = fs::temp_directory_path() / "motionlm_tok_det";
    fs::create_directories(dir);
    save_tokenizer((dir / "a.ckpt").string(), a);
    save_tokenizer((dir / "b.ckpt").string(), b);
    std::ifstream fa(dir / "a.ckpt", std::ios::binary), fb(dir / "b.ckpt", std::ios::binary);
    std::string ba(std::istreambuf_iterator<char>(fa), {});
    std::string bb(std::istreambuf_iterator<char>(fb), {});
    CHECK(ba == bb);

    // load round trip preserves behaviour
    TokenizerModel c = load_tokenizer((dir / "a.ckpt").string());
    auto ms = corpus_motions(corpus);
    CHECK(reconstruction_mse(c, ms) == reconstruction_mse(a, ms));
    fs::remove_all(dir);
}

TEST_CASE("2k-step training cuts reconstruction MSE below 25% of untrained") {
    SyntheticSpec spec;
    spec.seed = 50;
    spec.tasks = {Task::T2M};
    auto corpus = generate_corpus(spec, 200);
    TokenizerConfig config;
    config.seed = 51;
    config.steps = 2000;
    TokenizerModel untrained;
    {
        Rng rng(config.seed);
        untrained = make_tokenizer(config, 8, rng);
        // codebooks as training would seed them, but no gradient steps
        auto motions = corpus_motions(corpus);
        RowMat latents;
        for (int i = 0; i < config.batch_size; ++i) {
            RowMat z = encode(untrained, motions[i]);
            const int base = static_cast<int>(latents.rows());
            latents.conservativeResize(base + z.rows(), config.latent_dim);
            latents.bottomRows(z.rows()) = z;
        }
        // nearest-latent init mirrors train_tokenizer's seeding
        Rng r2(config.seed);
        for (auto& cb : untrained.rvq.codebooks)
            for (int c = 0; c < config.codebook_size; ++c)
                cb.embeddings.row(c) = latents.row(r2.uniform_int(0, static_cast<int>(latents.rows()) - 1));
    }
    TokenizerModel trained = train_tokenizer(corpus, config, 8);

    auto motions = corpus_motions(corpus);
    std::vector<MotionSequence> heldout(motions.begin(), motions.begin() + 40);
    const Real before = reconstruction_mse(untrained, heldout);
    const Real after = reconstruction_mse(trained, heldout);
    MESSAGE("mse before=", before, " after=", after);
    CHECK(after < 0.25 * before);
}
