#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>

namespace stylecodec {

// Seeded random stream. Distributions are computed from raw engine output so
// streams are reproducible across standard library implementations, and the
// whole state round-trips through a string.
class Rng {
public:
    Rng() : engine_(0x5eedULL) {}
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n);
    int range(int lo, int hi_inclusive) {
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi_inclusive - lo + 1)));
    }

    // Standard normal via Box-Muller; no cached second value.
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    // Index drawn with probability proportional to weights.
    size_t categorical(std::span<const double> weights);

    // Independent child stream for a named purpose (mask, channel, noise, ...).
    Rng derive(std::string_view purpose) const;
    Rng derive(uint64_t index) const;

    std::string serialize() const;
    static Rng deserialize(const std::string& state);

    bool operator==(const Rng& other) const { return engine_ == other.engine_; }

private:
    std::mt19937_64 engine_;
};

uint64_t splitmix64(uint64_t x);
uint64_t hash_string(std::string_view s);

}  // namespace stylecodec
