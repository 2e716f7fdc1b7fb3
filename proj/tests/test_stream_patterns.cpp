// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "motionlm/stream_patterns.hpp"

using namespace motionlm;

namespace {

MultiStreamTokens random_tokens(int levels, int steps, Rng& rng, int vocab = 100) {
    MultiStreamTokens m;
    m.streams.resize(levels, steps);
    for (int l = 0; l < levels; ++l)
        for (int t = 0; t < steps; ++t) m.streams(l, t) = rng.uniform_int(0, vocab - 1);
    return m;
}

constexpr int kPad = 1000;  // outside the toy vocabulary below

}  // namespace

TEST_CASE("flatten ordering is level-major within each timestep") {
    MultiStreamTokens m;
    m.streams.resize(3, 2);
    // streams a, b, c
    m.streams << 10, 11, 20, 21, 30, 31;
    auto flat = flatten(m);
    CHECK(flat == std::vector<int>{10, 20, 30, 11, 21, 31});
    CHECK(unflatten(flat, 3) == m);
}

TEST_CASE("flatten with one stream is the identity") {
    Rng rng(1);
    MultiStreamTokens m = random_tokens(1, 9, rng);
    auto flat = flatten(m);
    for (int t = 0; t < 9; ++t) CHECK(flat[t] == m.streams(0, t));
    CHECK(unflatten(flat, 1) == m);
}

TEST_CASE("flatten/unflatten round trip on random grids; bad length rejected") {
    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const int levels = rng.uniform_int(1, 8);
        const int steps = rng.uniform_int(1, 16);
        MultiStreamTokens m = random_tokens(levels, steps, rng);
        CHECK(unflatten(flatten(m), levels) == m);
    }
    CHECK_THROWS_AS(unflatten({1, 2, 3, 4}, 3), FormatError);
}

TEST_CASE("delay staggers stream l by l-1 and pads to T+L-1") {
    Rng rng(3);
    MultiStreamTokens m = random_tokens(3, 4, rng);
    PaddedGrid padded = delay(m, kPad);
    REQUIRE(padded.slots() == 6);  // T + L - 1
    // stream 2 (row index 1): [pad, m2_1..m2_4, pad]
    CHECK(padded.rows(1, 0) == kPad);
    for (int t = 0; t < 4; ++t) CHECK(padded.rows(1, 1 + t) == m.streams(1, t));
    CHECK(padded.rows(1, 5) == kPad);
    // stream 1: no leading pad, two trailing
    CHECK(padded.rows(0, 4) == kPad);
    CHECK(padded.rows(0, 5) == kPad);
    // stream 3: two leading pads
    CHECK(padded.rows(2, 0) == kPad);
    CHECK(padded.rows(2, 1) == kPad);
    CHECK(undelay(padded) == m);
}

TEST_CASE("delay with one stream is the identity layout") {
    Rng rng(4);
    MultiStreamTokens m = random_tokens(1, 7, rng);
    PaddedGrid padded = delay(m, kPad);
    CHECK(padded.slots() == 7);
    for (int t = 0; t < 7; ++t) CHECK(padded.rows(0, t) == m.streams(0, t));
    CHECK(undelay(padded) == m);
}

TEST_CASE("undelay(delay(M)) == M on random grids") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const int levels = rng.uniform_int(1, 8);
        const int steps = rng.uniform_int(1, 16);
        MultiStreamTokens m = random_tokens(levels, steps, rng);
        CHECK(undelay(delay(m, kPad)) == m);
    }
}

TEST_CASE("undelay validates pad placement by position") {
    Rng rng(6);
    MultiStreamTokens m = random_tokens(3, 4, rng);
    PaddedGrid padded = delay(m, kPad);
    PaddedGrid moved = padded;
    moved.rows(2, 2) = kPad;  // pad inside the active window
    CHECK_THROWS_AS(undelay(moved), FormatError);
    PaddedGrid missing = padded;
    missing.rows(1, 0) = 5;  // real token where the stagger demands a pad
    CHECK_THROWS_AS(undelay(missing), FormatError);
}

namespace {

// Analytic conditioning sets straight from the three factorizations.
bool analytic_member(LayoutKind kind, int l, int t, int lam, int tau) {
    switch (kind) {
        case LayoutKind::Flatten: return tau < t || (tau == t && lam < l);
        case LayoutKind::Parallel: return tau < t;
        case LayoutKind::Delay: return lam + tau < l + t;
    }
    return false;
}

}  // namespace

TEST_CASE("dependency sets match the analytic factorizations on T<=6, L<=3") {
    for (LayoutKind kind : {LayoutKind::Flatten, LayoutKind::Parallel, LayoutKind::Delay})
        for (int levels = 1; levels <= 3; ++levels)
            for (int steps = 1; steps <= 6; ++steps) {
                Layout layout{kind, levels, steps};
                for (int l = 1; l <= levels; ++l)
                    for (int t = 1; t <= steps; ++t) {
                        auto dep = dependency_set(layout, l, t);
                        for (int lam = 1; lam <= levels; ++lam)
                            for (int tau = 1; tau <= steps; ++tau) {
                                const bool got = dep.count({lam, tau}) > 0;
                                CHECK(got == analytic_member(kind, l, t, lam, tau));
                            }
                    }
            }
}

TEST_CASE("spot checks from the factorizations") {
    Layout flatten3{LayoutKind::Flatten, 3, 4};
    auto dep = dependency_set(flatten3, 2, 1);
    CHECK(dep.count({1, 1}) == 1);
    CHECK(dep.count({3, 1}) == 0);

    Layout parallel{LayoutKind::Parallel, 3, 4};
    CHECK(dependency_set(parallel, 1, 1).empty());
    CHECK(dependency_set(parallel, 3, 1).empty());

    Layout delay3{LayoutKind::Delay, 3, 4};
    auto dd = dependency_set(delay3, 2, 3);
    CHECK(dd.count({1, 3}) == 1);
    CHECK(dd.count({2, 1}) == 1);
    CHECK(dd.count({2, 2}) == 1);
    CHECK(dd.count({3, 3}) == 0);

    CHECK_THROWS_AS(dependency_set(delay3, 4, 1), IndexError);
    CHECK_THROWS_AS(dependency_set(delay3, 1, 5), IndexError);
}

TEST_CASE("delay captures intra- and inter-stream dependencies; parallel lacks same-step") {
    for (int levels = 1; levels <= 3; ++levels)
        for (int steps = 1; steps <= 6; ++steps) {
            Layout delay_layout{LayoutKind::Delay, levels, steps};
            Layout parallel_layout{LayoutKind::Parallel, levels, steps};
            for (int l = 1; l <= levels; ++l)
                for (int t = 1; t <= steps; ++t) {
                    auto dep = dependency_set(delay_layout, l, t);
                    for (int tau = 1; tau < t; ++tau) CHECK(dep.count({l, tau}) == 1);
                    for (int lam = 1; lam < l; ++lam) CHECK(dep.count({lam, t}) == 1);
                    auto pdep = dependency_set(parallel_layout, l, t);
                    for (int lam = 1; lam <= levels; ++lam) CHECK(pdep.count({lam, t}) == 0);
                }
        }
}

TEST_CASE("layout cost table") {
    Layout f{LayoutKind::Flatten, 3, 4}, p{LayoutKind::Parallel, 3, 4}, d{LayoutKind::Delay, 3, 4};
    CHECK(layout_cost(f).sequence_length == 12);
    CHECK(layout_cost(p).sequence_length == 4);
    CHECK(layout_cost(d).sequence_length == 6);
    CHECK(layout_cost(f).cost_class == "O(T^2*L^2)");
    CHECK(layout_cost(p).cost_class == "O(T^2)");
    CHECK(layout_cost(d).cost_class == "O((T+L-1)^2)");
    CHECK(layout_cost(f).attention_pairs == 144);
    CHECK(layout_cost(d).attention_pairs == 36);

    for (int t = 1; t <= 8; ++t) {
        Layout f1{LayoutKind::Flatten, 1, t}, p1{LayoutKind::Parallel, 1, t}, d1{LayoutKind::Delay, 1, t};
        CHECK(layout_cost(f1).sequence_length == t);
        CHECK(layout_cost(p1).sequence_length == t);
        CHECK(layout_cost(d1).sequence_length == t);
    }
}
