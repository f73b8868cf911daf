#pragma once

#include <cstdint>
#include <string_view>

namespace taskadapt {

// Deterministic PRNG with portable output. The bounded/uniform draws below
// avoid std::uniform_*_distribution, whose output is implementation-defined
// and would break byte-reproducibility across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(splitmix(seed)) {}

    std::uint64_t next_u64() {
        // xorshift* variant seeded through splitmix; period and quality are
        // ample for simulation at this scale.
        std::uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545F4914F6CDD1DULL;
    }

    // Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::uint64_t bounded(std::uint64_t n) {
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Uniform double in [0, 1) with 53 bits of precision.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform double in [-a, a).
    double symmetric(double a) { return (2.0 * uniform01() - 1.0) * a; }

private:
    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        x = x ^ (x >> 31);
        return x == 0 ? 0x4D595DF4D0F33173ULL : x;
    }

    std::uint64_t state_;
};

// Stable 64-bit FNV-1a, used to derive per-task seeds from a master seed and
// role tags so parallel and serial execution see identical streams.
class SeedChain {
public:
    SeedChain& mix(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            byte(static_cast<unsigned char>(v >> (8 * i)));
        }
        return *this;
    }
    SeedChain& mix(std::string_view s) {
        for (unsigned char c : s) byte(c);
        byte(0xFF);  // separator so ("ab","c") != ("a","bc")
        return *this;
    }
    std::uint64_t value() const { return h_; }

private:
    void byte(unsigned char c) {
        h_ ^= c;
        h_ *= 0x100000001B3ULL;
    }
    std::uint64_t h_ = 0xCBF29CE484222325ULL;
};

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) {
    return SeedChain().mix(master).mix(tag).value();
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                 std::string_view a) {
    return SeedChain().mix(master).mix(tag).mix(a).value();
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                 std::string_view a, std::string_view b) {
    return SeedChain().mix(master).mix(tag).mix(a).mix(b).value();
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                 std::uint64_t index) {
    return SeedChain().mix(master).mix(tag).mix(index).value();
}

}  // namespace taskadapt
