// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "motionlm/metrics.hpp"

using namespace motionlm;
namespace fs = std::filesystem;

namespace {

MotionSequence random_motion(int t, int d, Rng& rng) {
    MotionSequence m;
    m.frames.resize(t, d);
    for (int i = 0; i < t; ++i)
        for (int j = 0; j < d; ++j) m.frames(i, j) = rng.normal(0, 1);
    return m;
}

std::string file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("mpjpe: zero at identity, offset case, naive-loop oracle") {
    Rng rng(1);
    MotionSequence x = random_motion(9, 8, rng);
    CHECK(mpjpe(x, x) == 0.0);

    MotionSequence shifted = x;
    const Real delta = 0.37;
    for (int j = 0; j < 4; ++j) shifted.frames.col(2 * j).array() += delta;
    CHECK(mpjpe(x, shifted) == doctest::Approx(delta).epsilon(1e-12));

    MotionSequence y = random_motion(9, 8, rng);
    Real naive = 0;
    for (int t = 0; t < 9; ++t)
        for (int j = 0; j < 4; ++j)
            naive += std::sqrt(std::pow(y.frames(t, 2 * j) - x.frames(t, 2 * j), 2) +
                               std::pow(y.frames(t, 2 * j + 1) - x.frames(t, 2 * j + 1), 2));
    naive /= 9 * 4;
    CHECK(mpjpe(x, y) == doctest::Approx(naive).epsilon(1e-12));

    MotionSequence wrong = random_motion(5, 8, rng);
    CHECK_THROWS_AS(mpjpe(x, wrong), ShapeError);
}

TEST_CASE("ade/fde: identity, uniform offset, naive oracle") {
    Rng rng(2);
    MotionSequence x = random_motion(7, 8, rng);
    auto [ade0, fde0] = ade_fde(x, x);
    CHECK(ade0 == 0.0);
    CHECK(fde0 == 0.0);

    MotionSequence shifted = x;
    const Real delta = 0.81;
    for (int j = 0; j < 4; ++j) shifted.frames.col(2 * j).array() += delta;
    auto [ade1, fde1] = ade_fde(shifted, x);
    CHECK(ade1 == doctest::Approx(delta).epsilon(1e-12));
    CHECK(fde1 == doctest::Approx(delta).epsilon(1e-12));

    MotionSequence y = random_motion(7, 8, rng);
    Real naive_ade = 0, naive_fde = 0;
    for (int t = 0; t < 7; ++t) {
        Real frame = 0;
        for (int j = 0; j < 4; ++j)
            frame += std::sqrt(std::pow(y.frames(t, 2 * j) - x.frames(t, 2 * j), 2) +
                               std::pow(y.frames(t, 2 * j + 1) - x.frames(t, 2 * j + 1), 2));
        frame /= 4;
        naive_ade += frame;
        naive_fde = frame;
    }
    naive_ade /= 7;
    auto [ade2, fde2] = ade_fde(y, x);
    CHECK(ade2 == doctest::Approx(naive_ade).epsilon(1e-12));
    CHECK(fde2 == doctest::Approx(naive_fde).epsilon(1e-12));
}

TEST_CASE("per-stream NLL: ln K at zeroed heads, L entries, recombination identity") {
    SyntheticSpec spec;
    spec.seed = 3;
    auto corpus = generate_corpus(spec, 18);
    TokenizerConfig tc;
    tc.levels = 3;
    tc.codebook_size = 16;
    tc.latent_dim = 8;
    tc.width = 12;
    tc.steps = 60;
    tc.batch_size = 4;
    tc.seed = 4;
    auto tokenizer = run_stage1(corpus, tc, 8);
    BackboneConfig config;
    config.d_model = 16;
    config.d_ff = 32;
    config.n_heads = 2;
    config.n_layers = 1;
    config.layout = LayoutKind::Delay;
    Rng rng(5);
    MotionLm model = make_motion_lm(config, vocabulary_for(tokenizer), TowerVariant{}, rng);

    StreamNll nll = per_stream_nll(model, tokenizer, corpus, LayoutKind::Delay);
    REQUIRE(nll.per_stream.size() == 3);
    for (int l = 0; l < 3; ++l)
        CHECK(nll.per_stream[l] == doctest::Approx(std::log(16.0)).epsilon(0.02));

    // recombination: count-weighted average of the splits equals the total
    Real weighted = nll.text * nll.raw.text_count;
    int64_t count = nll.raw.text_count;
    for (int l = 0; l < 3; ++l) {
        weighted += nll.per_stream[l] * nll.raw.stream_count[l];
        count += nll.raw.stream_count[l];
    }
    CHECK(weighted / count == doctest::Approx(nll.raw.mean()).epsilon(1e-12));
}

TEST_CASE("report: empty dir warns, CSV bytes deterministic, run dir untouched") {
    const fs::path missing = fs::temp_directory_path() / "motionlm_no_such_run";
    fs::remove_all(missing);
    MetricsReport empty = build_report(missing.string());
    CHECK(!empty.warnings.empty());
    CHECK(empty.values.empty());

    const fs::path run = fs::temp_directory_path() / "motionlm_run";
    fs::remove_all(run);
    fs::create_directories(run);
    {
        std::ofstream f(run / "metrics.jsonl");
        f << R"({"metric":"stage1_reconstruction_mse","value":0.025})" << "\n";
        f << R"({"step":10,"loss":1.5,"lr":0.001,"nll":1.5,"nll_per_stream":[1.4,1.6]})" << "\n";
        f << "this line is not json\n";
        f << R"({"metric":"bad","value":null})" << "\n";
    }
    {
        std::ofstream f(run / "recon_vs_L.jsonl");
        f << R"({"L":1,"mse":0.5})" << "\n" << R"({"L":2,"mse":0.25})" << "\n"
          << R"({"L":4,"mse":0.125})" << "\n";
    }
    {
        std::ofstream f(run / "nll_by_layout.jsonl");
        f << R"({"layout":"delay","stream":2,"nll":1.25})" << "\n";
        f << R"({"layout":"parallel","stream":2,"nll":1.75})" << "\n";
    }
    { std::ofstream f(run / "config.json"); f << R"({"seed":42})"; }

    std::vector<std::string> before;
    for (auto& e : fs::recursive_directory_iterator(run)) before.push_back(e.path().string());
    std::sort(before.begin(), before.end());

    const fs::path out1 = fs::temp_directory_path() / "motionlm_report1";
    const fs::path out2 = fs::temp_directory_path() / "motionlm_report2";
    fs::remove_all(out1);
    fs::remove_all(out2);
    MetricsReport r1 = report(run.string(), out1.string());
    MetricsReport r2 = report(run.string(), out2.string());

    // curve points equal the raw log values
    REQUIRE(r1.recon_curve.size() == 3);
    CHECK(r1.recon_curve[0] == std::pair<Real, Real>{1.0, 0.5});
    CHECK(r1.recon_curve[2] == std::pair<Real, Real>{4.0, 0.125});
    CHECK(r1.values.at("stage1_reconstruction_mse") == 0.025);
    CHECK(r1.values.at("train/final_loss") == 1.5);
    CHECK(r1.values.at("nll_layout/delay/s2") == 1.25);
    CHECK(r1.metadata.at("seed") == "42");
    CHECK(r1.metadata.at("config_hash").size() == 40);
    (void)r2;

    CHECK(file_bytes(out1 / "report.csv") == file_bytes(out2 / "report.csv"));
    CHECK(fs::exists(out1 / "recon_vs_L.svg"));
    CHECK(fs::exists(out1 / "nll_by_layout.svg"));

    std::vector<std::string> after;
    for (auto& e : fs::recursive_directory_iterator(run)) after.push_back(e.path().string());
    std::sort(after.begin(), after.end());
    CHECK(before == after);  // report never mutates the run directory

    fs::remove_all(run);
    fs::remove_all(out1);
    fs::remove_all(out2);
}
