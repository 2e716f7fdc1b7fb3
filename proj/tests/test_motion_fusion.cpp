// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "motionlm/fusion.hpp"
#include "motionlm/grad_check.hpp"

using namespace motionlm;

namespace {

std::vector<Route> mixed_tags(int n) {
    std::vector<Route> tags(n);
    for (int i = 0; i < n; ++i) tags[i] = i % 2 == 0 ? Route::Text : Route::MotionMain;
    return tags;
}

bool values_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (Eigen::Index i = 0; i < a.value().size(); ++i)
        if (a.value()(i) != b.value()(i)) return false;
    return true;
}

std::vector<Tensor> weights_of(const NamedTensors& named) {
    std::vector<Tensor> out;
    for (const auto& [name, t] : named) out.push_back(t);
    return out;
}

}  // namespace

TEST_CASE("LoRA at initialization is bit-level identical to Prototype") {
    BlockConfig config{8, 16, 2};
    Rng rng(1);
    BlockParams base = make_prototype_block(config, rng);
    TowerVariant lora{VariantKind::LoRA, 2, 16.0};
    Rng rng2(2);
    BlockParams adapted = build_variant(base, config, lora, rng2);

    Rng rx(3);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = rx.uniform_int(1, 7);
        Tensor x = Tensor::randn({n, 8}, rx, 1.0, false);
        Tensor proto_out = routed_block_forward(x, std::vector<Route>(n, Route::Text), base,
                                                config, TowerVariant{VariantKind::Prototype});
        Tensor lora_out = routed_block_forward(x, mixed_tags(n), adapted, config, lora);
        CHECK(values_equal(proto_out, lora_out));
    }
}

TEST_CASE("LoRA rejects rank >= d_model") {
    BlockConfig config{8, 16, 2};
    Rng rng(4);
    BlockParams base = make_prototype_block(config, rng);
    CHECK_THROWS_AS(build_variant(base, config, TowerVariant{VariantKind::LoRA, 8, 16.0}, rng),
                    ConfigError);
    CHECK_THROWS_AS(build_variant(base, config, TowerVariant{VariantKind::LoRA, 0, 16.0}, rng),
                    ConfigError);
}

TEST_CASE("MoE and MIS with cloned parameters reproduce Prototype exactly") {
    BlockConfig config{8, 16, 2};
    Rng rng(5);
    BlockParams base = make_prototype_block(config, rng);
    BlockParams moe = build_variant(base, config, TowerVariant{VariantKind::MoE}, rng);
    BlockParams mis = build_variant(base, config, TowerVariant{VariantKind::MIS}, rng);

    Rng rx(6);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = rx.uniform_int(1, 9);
        Tensor x = Tensor::randn({n, 8}, rx, 1.0, false);
        auto tags = mixed_tags(n);
        Tensor proto_out = routed_block_forward(x, tags, base, config,
                                                TowerVariant{VariantKind::Prototype});
        Tensor moe_out = routed_block_forward(x, tags, moe, config, TowerVariant{VariantKind::MoE});
        Tensor mis_out = routed_block_forward(x, tags, mis, config, TowerVariant{VariantKind::MIS});
        CHECK(values_equal(proto_out, moe_out));
        CHECK(values_equal(proto_out, mis_out));
    }
}

TEST_CASE("building twice from the same base gives identical parameter bytes") {
    BlockConfig config{8, 16, 2};
    Rng rng(7);
    BlockParams base = make_prototype_block(config, rng);
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "motionlm_fusion_det";
    fs::create_directories(dir);
    for (TowerVariant v : {TowerVariant{VariantKind::LoRA, 2, 16.0},
                           TowerVariant{VariantKind::MoE}, TowerVariant{VariantKind::MIS}}) {
        Rng ra(42), rb(42);
        BlockParams a = build_variant(base, config, v, ra);
        BlockParams b = build_variant(base, config, v, rb);
        save_checkpoint((dir / "a.ckpt").string(), block_named_parameters(a, v, "blk"));
        save_checkpoint((dir / "b.ckpt").string(), block_named_parameters(b, v, "blk"));
        std::ifstream fa(dir / "a.ckpt", std::ios::binary), fb(dir / "b.ckpt", std::ios::binary);
        std::string ba(std::istreambuf_iterator<char>(fa), {});
        std::string bb(std::istreambuf_iterator<char>(fb), {});
        CHECK(ba == bb);
    }
    fs::remove_all(dir);
}

TEST_CASE("all-text input ignores motion-side parameters exactly") {
    BlockConfig config{8, 16, 2};
    Rng rng(8);
    BlockParams base = make_prototype_block(config, rng);
    Rng rx(9);
    Tensor x = Tensor::randn({5, 8}, rx, 1.0, false);
    std::vector<Route> all_text(5, Route::Text);

    for (TowerVariant v : {TowerVariant{VariantKind::LoRA, 2, 16.0},
                           TowerVariant{VariantKind::MoE}, TowerVariant{VariantKind::MIS}}) {
        Rng rb(10);
        BlockParams block = build_variant(base, config, v, rb);
        Tensor before = routed_block_forward(x, all_text, block, config, v);
        // perturb every motion-side tensor
        const int m = static_cast<int>(Route::MotionMain);
        if (block.lora[m])
            for (int p = 0; p < 4; ++p) {
                block.lora[m]->proj[p].b.value().setConstant(3.7);
                block.lora[m]->proj[p].a.value().setConstant(-1.3);
            }
        if (block.ffn_expert[m]) {
            block.ffn_expert[m]->w1.value().setConstant(2.2);
            block.ffn_expert[m]->w2.value().setConstant(-0.4);
        }
        if (block.attn_tower[m]) {
            block.attn_tower[m]->wq.value().setConstant(1.1);
            block.attn_tower[m]->wo.value().setConstant(0.9);
            block.ln1_tower[m]->value().setConstant(5.0);
            block.ln2_tower[m]->value().setConstant(5.0);
        }
        Tensor after = routed_block_forward(x, all_text, block, config, v);
        CHECK(values_equal(before, after));
    }
}

TEST_CASE("MoE: text-expert perturbation leaves motion outputs of the block unchanged") {
    BlockConfig config{8, 16, 2};
    Rng rng(11);
    BlockParams base = make_prototype_block(config, rng);
    TowerVariant moe{VariantKind::MoE};
    BlockParams block = build_variant(base, config, moe, rng);
    Rng rx(12);
    Tensor x = Tensor::randn({6, 8}, rx, 1.0, false);
    auto tags = mixed_tags(6);
    Tensor before = routed_block_forward(x, tags, block, config, moe);
    block.ffn_expert[static_cast<int>(Route::Text)]->w1.value().setConstant(4.0);
    block.ffn_expert[static_cast<int>(Route::Text)]->b2.value().setConstant(-2.0);
    Tensor after = routed_block_forward(x, tags, block, config, moe);
    for (int i = 0; i < 6; ++i) {
        bool changed = false;
        for (int j = 0; j < 8; ++j)
            if (before.at(i, j) != after.at(i, j)) changed = true;
        if (tags[i] == Route::MotionMain) CHECK_FALSE(changed);
        else CHECK(changed);
    }
}

TEST_CASE("MIS: attention still mixes modalities (nonzero cross-influence)") {
    BlockConfig config{8, 16, 2};
    Rng rng(13);
    BlockParams base = make_prototype_block(config, rng, 0.3);
    TowerVariant mis{VariantKind::MIS};
    BlockParams block = build_variant(base, config, mis, rng);
    // decouple the towers so the test is not trivially prototype-equal
    block.attn_tower[static_cast<int>(Route::MotionMain)]->wq.value() *= 1.5;
    Rng rx(14);
    Tensor x = Tensor::randn({6, 8}, rx, 1.0, false);
    auto tags = mixed_tags(6);  // position 0 is text, position 1 motion, ...
    Tensor before = routed_block_forward(x, tags, block, config, mis);
    Tensor x2 = Tensor::from_flat(x.shape(), x.value());
    x2.value()(3) += 0.5;  // perturb a text-position value (row 0)
    Tensor after = routed_block_forward(x2, tags, block, config, mis);
    bool motion_changed = false;
    for (int j = 0; j < 8; ++j)
        if (before.at(5, j) != after.at(5, j)) motion_changed = true;  // row 5 is motion-tagged
    CHECK(motion_changed);
}

TEST_CASE("zero-initialized output projections make the block an identity map") {
    BlockConfig config{8, 16, 2};
    Rng rng(15);
    BlockParams base = make_prototype_block(config, rng);
    base.attn.wo.value().setZero();
    base.ffn.w2.value().setZero();
    Rng rx(16);
    Tensor x = Tensor::randn({4, 8}, rx, 1.0, false);
    Tensor out = routed_block_forward(x, std::vector<Route>(4, Route::Text), base, config,
                                      TowerVariant{VariantKind::Prototype});
    CHECK(values_equal(out, x));
}

TEST_CASE("single-position attention is a self-weighting of one") {
    BlockConfig config{8, 16, 2};
    Rng rng(17);
    BlockParams base = make_prototype_block(config, rng, 0.4);
    Rng rx(18);
    Tensor x = Tensor::randn({1, 8}, rx, 1.0, false);
    Tensor out = routed_block_forward(x, {Route::Text}, base, config,
                                      TowerVariant{VariantKind::Prototype});
    // expected: x + (LN(x) Wv) Wo + FFN(LN(x))
    Tensor a_in = rms_layer_norm(x, base.ln1);
    Tensor v = matmul(a_in, base.attn.wv);
    Tensor h = add(x, matmul(v, base.attn.wo));
    Tensor f_in = rms_layer_norm(x, base.ln2);
    Tensor ff = add_rowwise(matmul(relu(add_rowwise(matmul(f_in, base.ffn.w1), base.ffn.b1)),
                                   base.ffn.w2), base.ffn.b2);
    Tensor expected = add(h, ff);
    for (int j = 0; j < 8; ++j) CHECK(out.at(0, j) == doctest::Approx(expected.at(0, j)).epsilon(1e-14));
}

TEST_CASE("block forward passes finite-difference gradient checks per variant") {
    BlockConfig config{6, 10, 2};
    Rng rng(19);
    BlockParams base = make_prototype_block(config, rng, 0.3);
    Rng rx(20);
    Tensor x = Tensor::randn({4, 6}, rx, 1.0, true);
    auto tags = mixed_tags(4);

    for (TowerVariant v : {TowerVariant{VariantKind::Prototype},
                           TowerVariant{VariantKind::LoRA, 2, 16.0},
                           TowerVariant{VariantKind::MoE}, TowerVariant{VariantKind::MIS}}) {
        Rng rb(21);
        BlockParams block = build_variant(base, config, v, rb);
        // move the variant away from its prototype-equal start
        if (v.kind == VariantKind::LoRA) {
            const int m = static_cast<int>(Route::MotionMain);
            for (int p = 0; p < 4; ++p) {
                Rng rp(22 + p);
                block.lora[m]->proj[p].b = Tensor::randn({6, 2}, rp, 0.2, true);
            }
        }
        std::vector<Tensor> inputs = weights_of(block_named_parameters(block, v, "b"));
        inputs.push_back(x);
        const Real err = grad_check_multi([&] {
            Tensor out = routed_block_forward(x, tags, block, config, v);
            Rng rc(23);
            return sum(mul(out, Tensor::randn(out.shape(), rc, 1.0, false)));
        }, inputs);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("gradient isolation: all-motion batches leave text-side parameters untouched") {
    BlockConfig config{6, 10, 2};
    Rng rng(24);
    BlockParams base = make_prototype_block(config, rng, 0.3);
    Rng rx(25);
    Tensor x = Tensor::randn({5, 6}, rx, 1.0, false);
    std::vector<Route> all_motion(5, Route::MotionMain);

    for (TowerVariant v : {TowerVariant{VariantKind::LoRA, 2, 16.0},
                           TowerVariant{VariantKind::MoE}, TowerVariant{VariantKind::MIS}}) {
        Rng rb(26);
        BlockParams block = build_variant(base, config, v, rb);
        NamedTensors named = block_named_parameters(block, v, "b");
        {
            Tape tape;
            Tensor out = routed_block_forward(x, all_motion, block, config, v);
            tape.backward(sum(out));
        }
        const int t = static_cast<int>(Route::Text);
        if (v.kind == VariantKind::LoRA)
            for (int p = 0; p < 4; ++p) {
                CHECK(block.lora[t]->proj[p].a.grad().abs().maxCoeff() == 0.0);
                CHECK(block.lora[t]->proj[p].b.grad().abs().maxCoeff() == 0.0);
            }
        if (v.kind == VariantKind::MoE) {
            CHECK(block.ffn_expert[t]->w1.grad().abs().maxCoeff() == 0.0);
            CHECK(block.ffn_expert[t]->w2.grad().abs().maxCoeff() == 0.0);
            CHECK(block.ffn_expert[t]->b1.grad().abs().maxCoeff() == 0.0);
            CHECK(block.ffn_expert[t]->b2.grad().abs().maxCoeff() == 0.0);
        }
        if (v.kind == VariantKind::MIS) {
            CHECK(block.attn_tower[t]->wq.grad().abs().maxCoeff() == 0.0);
            CHECK(block.attn_tower[t]->wo.grad().abs().maxCoeff() == 0.0);
            CHECK(block.ffn_expert[t]->w1.grad().abs().maxCoeff() == 0.0);
            CHECK(block.ln1_tower[t]->grad().abs().maxCoeff() == 0.0);
            CHECK(block.ln2_tower[t]->grad().abs().maxCoeff() == 0.0);
        }
        for (auto& [name, tensor] : named) tensor.zero_grad();
    }
}

TEST_CASE("param_count worked examples and the MoE relative increase") {
    BlockConfig config{4, 8, 2};
    CHECK(param_count(config, TowerVariant{VariantKind::Prototype}) == 128);
    CHECK(param_count(config, TowerVariant{VariantKind::LoRA, 2, 16.0}) == 256);
    CHECK(param_count(config, TowerVariant{VariantKind::MoE}) == 192);
    CHECK(param_count(config, TowerVariant{VariantKind::MIS}) == 256);
    // relative increase d_f / (2 d_k + d_f)
    const Real base = static_cast<Real>(param_count(config, TowerVariant{VariantKind::Prototype}));
    const Real inc = (param_count(config, TowerVariant{VariantKind::MoE}) - base) / base;
    CHECK(inc == doctest::Approx(8.0 / (2 * 4 + 8)).epsilon(1e-12));
    // r = 0 degenerates the LoRA formula to the base count
    CHECK(param_count(config, TowerVariant{VariantKind::LoRA, 0, 16.0}) == 128);
}

TEST_CASE("flop_count worked examples and the zero-token limit") {
    BlockConfig config{4, 8, 2};
    CHECK(flop_count(config, TowerVariant{VariantKind::Prototype}, 2) == 576);
    CHECK(flop_count(config, TowerVariant{VariantKind::LoRA, 2, 16.0}, 2) == 832);
    CHECK(flop_count(config, TowerVariant{VariantKind::MoE}, 2) == 576);
    CHECK(flop_count(config, TowerVariant{VariantKind::MIS}, 2) == 576);
    CHECK(flop_count(config, TowerVariant{VariantKind::Prototype}, 0) == 0);
}

TEST_CASE("closed forms agree with enumeration and instrumented counting") {
    for (int d : {4, 8, 16})
        for (int df : {8, 16, 32})
            for (int r : {1, 2, 4}) {
                BlockConfig config{d, df, 2};
                Rng rng(31);
                BlockParams base = make_prototype_block(config, rng);
                for (TowerVariant v : {TowerVariant{VariantKind::Prototype},
                                       TowerVariant{VariantKind::LoRA, r, 16.0},
                                       TowerVariant{VariantKind::MoE},
                                       TowerVariant{VariantKind::MIS}}) {
                    Rng rb(32);
                    if (v.kind == VariantKind::LoRA && r >= d) {
                        // the r < d_k invariant forbids this grid cell
                        CHECK_THROWS_AS(build_variant(base, config, v, rb), ConfigError);
                        continue;
                    }
                    BlockParams block = build_variant(base, config, v, rb);
                    CHECK(enumerate_block_params(block, v) == param_count(config, v));
                    for (int n : {1, 2, 8})
                        CHECK(measure_block_flops(block, config, v, n) == flop_count(config, v, n));
                }
            }
}
