#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace fsad {

// Counter-based 64-bit generator.
//
// A stream is identified by a 64-bit key. The i-th draw of a stream is
//   mix64(key + (i + 1) * 0x9E3779B97F4A7C15)
// where mix64 is the SplitMix64 finalizer. Child streams are derived with
//   child_key = mix64(key ^ mix64(fnv1a64(purpose) + index))
// so (run, episode, purpose) streams never share state and can be replayed
// from the key alone.
class Rng {
public:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

    Rng() = default;
    explicit Rng(std::uint64_t seed) : key_(mix64(seed)) {}

    static Rng from_state(std::uint64_t key, std::uint64_t counter) {
        Rng r;
        r.key_ = key;
        r.counter_ = counter;
        return r;
    }

    static constexpr std::uint64_t mix64(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    static constexpr std::uint64_t fnv1a64(std::string_view s) {
        std::uint64_t h = 0xCBF29CE484222325ULL;
        for (char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001B3ULL;
        }
        return h;
    }

    Rng split(std::string_view purpose, std::uint64_t index = 0) const {
        Rng r;
        r.key_ = mix64(key_ ^ mix64(fnv1a64(purpose) + index));
        return r;
    }

    std::uint64_t next_u64() {
        ++counter_;
        return mix64(key_ + counter_ * kGamma);
    }

    // Uniform integer in [0, n) by rejection: draws >= 2^64 - (2^64 mod n) are redrawn.
    std::uint64_t below(std::uint64_t n);

    // 53-bit uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, one value per call (two uniforms consumed).
    double normal();

    // First k entries of a partial Fisher-Yates shuffle of 0..n-1:
    // for i in [0, k): j = i + below(n - i); swap(a[i], a[j]).
    std::vector<std::size_t> choose(std::size_t n, std::size_t k);

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace fsad
