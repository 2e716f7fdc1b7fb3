// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "motionlm/motion_data.hpp"

using namespace motionlm;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
    fs::path p = fs::temp_directory_path() / (std::string("motionlm_") + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

bool same_frames(const MotionSequence& a, const MotionSequence& b) {
    if (a.length() != b.length() || a.feature_dim() != b.feature_dim()) return false;
    for (int t = 0; t < a.length(); ++t)
        for (int c = 0; c < a.feature_dim(); ++c)
            if (a.frames(t, c) != b.frames(t, c)) return false;
    return true;
}

}  // namespace

TEST_CASE("same seed produces identical corpora") {
    SyntheticSpec spec;
    spec.seed = 0;
    auto a = generate_corpus(spec, 27);
    auto b = generate_corpus(spec, 27);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].task == b[i].task);
        CHECK(a[i].text == b[i].text);
        CHECK(a[i].bins == b[i].bins);
        REQUIRE(a[i].motions.size() == b[i].motions.size());
        for (size_t m = 0; m < a[i].motions.size(); ++m)
            CHECK(same_frames(a[i].motions[m], b[i].motions[m]));
    }
    spec.seed = 1;
    auto c = generate_corpus(spec, 27);
    bool any_diff = false;
    for (size_t i = 0; i < a.size() && !any_diff; ++i)
        any_diff = !same_frames(a[i].motions[0], c[i].motions[0]);
    CHECK(any_diff);
}

TEST_CASE("item cardinality: interactive two motions, single-person one") {
    SyntheticSpec spec;
    auto items = generate_corpus(spec, 45);
    for (const auto& item : items) {
        if (task_is_interactive(item.task)) CHECK(item.motions.size() == 2);
        else CHECK(item.motions.size() == 1);
    }
}

TEST_CASE("edit targets equal the labeled transform applied elementwise") {
    SyntheticSpec spec;
    spec.seed = 7;
    spec.tasks = {Task::Edit};
    auto items = generate_corpus(spec, 12);
    for (const auto& item : items) {
        REQUIRE(item.edit_kind >= 0);
        MotionSequence target = edit_target(item);
        const auto kind = static_cast<EditKind>(item.edit_kind);
        for (int t = 0; t < target.length(); ++t)
            for (int c = 0; c < target.feature_dim(); ++c) {
                const Real src = item.motions[0].frames(t, c);
                Real expect = src;
                if (kind == EditKind::Larger) expect = src * 2.0;
                if (kind == EditKind::Smaller) expect = src * 0.5;
                if (kind == EditKind::Reversed) expect = -src;
                CHECK(target.frames(t, c) == expect);
            }
    }
}

TEST_CASE("text decodes back to the generating parameter bins") {
    SyntheticSpec spec;
    spec.seed = 3;
    auto items = generate_corpus(spec, 36);
    TextGrammar grammar;
    for (const auto& item : items) {
        MotionBins parsed = grammar.parse_bins(item.text);
        CHECK(parsed == item.bins);
        if (task_is_interactive(item.task))
            CHECK(grammar.parse_relation(item.text) == item.relation);
        else
            CHECK(grammar.parse_relation(item.text) == -1);
        if (item.task == Task::Edit)
            CHECK(grammar.parse_edit(item.edit_instruction) == item.edit_kind);
    }
}

TEST_CASE("relations derive agent B from agent A as labeled") {
    SyntheticSpec spec;
    spec.seed = 11;
    spec.tasks = {Task::React};
    auto items = generate_corpus(spec, 8);
    for (const auto& item : items) {
        const auto& a = item.motions[0];
        const auto& b = item.motions[1];
        if (item.relation == static_cast<int>(Relation::Mirrors)) {
            for (int t = 0; t < a.length(); ++t)
                for (int c = 0; c < a.feature_dim(); ++c)
                    CHECK(b.frames(t, c) == (c % 2 == 1 ? -a.frames(t, c) : a.frames(t, c)));
        } else {
            for (int t = 0; t < a.length(); ++t)
                CHECK(b.frames.row(t) == a.frames.row(std::max(0, t - spec.follow_lag_frames)));
        }
    }
}

TEST_CASE("empty parameter ranges are a configuration error") {
    SyntheticSpec spec;
    spec.amp_bins.clear();
    CHECK_THROWS_AS(generate_corpus(spec, 4), ConfigError);
    SyntheticSpec spec2;
    CHECK_THROWS_AS(generate_corpus(spec2, 0), ConfigError);
}

TEST_CASE("motion binary round trip is bit-exact; truncation is a parse error") {
    SyntheticSpec spec;
    spec.seed = 5;
    auto items = generate_corpus(spec, 1);
    const auto dir = temp_dir("motion_io");
    const std::string path = (dir / "a.motion").string();
    save_motion(path, items[0].motions[0]);
    MotionSequence loaded = load_motion(path);
    CHECK(same_frames(loaded, items[0].motions[0]));
    CHECK(loaded.frame_rate == items[0].motions[0].frame_rate);

    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    const std::string cut = (dir / "cut.motion").string();
    {
        std::ofstream out(cut, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 11));
    }
    try {
        load_motion(cut);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("corpus save/load round trip; empty index loads as empty list") {
    SyntheticSpec spec;
    spec.seed = 9;
    auto items = generate_corpus(spec, 18);
    const auto dir = temp_dir("corpus_io");
    save_corpus(dir.string(), items);
    auto loaded = load_corpus(dir.string());
    REQUIRE(loaded.size() == items.size());
    for (size_t i = 0; i < items.size(); ++i) {
        CHECK(loaded[i].task == items[i].task);
        CHECK(loaded[i].text == items[i].text);
        CHECK(loaded[i].edit_instruction == items[i].edit_instruction);
        CHECK(loaded[i].bins == items[i].bins);
        CHECK(loaded[i].relation == items[i].relation);
        REQUIRE(loaded[i].motions.size() == items[i].motions.size());
        for (size_t m = 0; m < items[i].motions.size(); ++m)
            CHECK(same_frames(loaded[i].motions[m], items[i].motions[m]));
    }

    const auto empty_dir = temp_dir("corpus_empty");
    { std::ofstream f(empty_dir / "items.jsonl"); }
    CHECK(load_corpus(empty_dir.string()).empty());

    // malformed line reports its position
    const auto bad_dir = temp_dir("corpus_bad");
    { std::ofstream f(bad_dir / "items.jsonl"); f << "{\"task\": oops\n"; }
    CHECK_THROWS_AS(load_corpus(bad_dir.string()), ParseError);
    fs::remove_all(dir);
    fs::remove_all(empty_dir);
    fs::remove_all(bad_dir);
}

TEST_CASE("crop: full length is identity, oversize is a range error") {
    SyntheticSpec spec;
    auto items = generate_corpus(spec, 1);
    const auto& m = items[0].motions[0];
    MotionSequence full = crop(m, m.length(), 0);
    CHECK(same_frames(full, m));
    MotionSequence window = crop(m, 10, 5);
    CHECK(window.length() == 10);
    CHECK(window.frames.row(0) == m.frames.row(5));
    CHECK_THROWS_AS(crop(m, m.length() + 1), std::out_of_range);
    CHECK_THROWS_AS(crop(m, 10, m.length() - 5), std::out_of_range);
}

TEST_CASE("normalize/denormalize round trips; constant features clamp std to 1") {
    SyntheticSpec spec;
    spec.seed = 13;
    auto items = generate_corpus(spec, 9);
    // plant a constant feature
    for (auto& item : items)
        for (auto& m : item.motions) m.frames.col(3).setConstant(0.75);
    FeatureStats stats = zscore_stats(items);
    CHECK(stats.std(3) == 1.0);
    MotionSequence n = normalize(items[0].motions[0], stats);
    MotionSequence back = denormalize(n, stats);
    for (int t = 0; t < back.length(); ++t)
        for (int c = 0; c < back.feature_dim(); ++c)
            CHECK(back.frames(t, c) == doctest::Approx(items[0].motions[0].frames(t, c)).epsilon(1e-9));
}

TEST_CASE("bin estimator recovers the generating bins on clean motions") {
    SyntheticSpec spec;
    spec.seed = 21;
    auto items = generate_corpus(spec, 27);
    for (const auto& item : items) {
        CHECK(estimate_bins(item.motions[0], spec) == item.bins);
        if (item.task == Task::Edit) {
            MotionBins expect = edited_bins(item.bins, static_cast<EditKind>(item.edit_kind), spec);
            CHECK(estimate_bins(edit_target(item), spec) == expect);
        }
    }
}
