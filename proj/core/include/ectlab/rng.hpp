#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace ectlab {

// Seeded generator whose full state (engine and the normal sampler's cached draw) can be
// serialized, so resumed runs continue the exact stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    // Uniform integer in [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
    }
    std::uint64_t next_u64() { return engine_(); }

    std::string state() const;
    void set_state(const std::string& state);

    friend bool operator==(const Rng& a, const Rng& b) { return a.state() == b.state(); }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_;
    std::uniform_real_distribution<double> uniform_;
};

// Deterministic 64-bit mixing for deriving per-item seeds from (seed, indices...).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace ectlab
