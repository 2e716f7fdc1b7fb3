// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace motionlm {

// All numerics run in fp64. Finite-difference oracles in the test suite
// need the full mantissa; desk-scale models are cheap enough not to care.
using Real = double;
using Shape = std::vector<int>;

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};
struct IndexError : std::runtime_error {
    explicit IndexError(const std::string& msg) : std::runtime_error("index error: " + msg) {}
};
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error("parse error: " + msg) {}
};
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};
struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& msg) : std::runtime_error("training error: " + msg) {}
};
struct VocabError : std::runtime_error {
    explicit VocabError(const std::string& msg) : std::runtime_error("vocab error: " + msg) {}
};
struct RoutingError : std::runtime_error {
    explicit RoutingError(const std::string& msg) : std::runtime_error("routing error: " + msg) {}
};
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error("format error: " + msg) {}
};

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

// Deterministic RNG. std::mt19937_64 has a standard-mandated sequence, but
// the std distributions do not, so the value mappings are spelled out here.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    Real uniform() { return static_cast<Real>(gen_() >> 11) * 0x1.0p-53; }

    Real uniform(Real lo, Real hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(gen_() % span);
    }

    // Box-Muller, one draw per call.
    Real normal(Real mean = 0.0, Real stddev = 1.0) {
        Real u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const Real u2 = uniform();
        const Real z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
        return mean + stddev * z;
    }

    Rng fork() { return Rng(gen_()); }

private:
    std::mt19937_64 gen_;
};

}  // namespace motionlm
