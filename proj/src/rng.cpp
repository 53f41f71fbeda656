#include "fsad/rng.hpp"

#include <cmath>
#include <numeric>
#include <utility>

#include "fsad/errors.hpp"

namespace fsad {

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) fail(ErrorKind::InvalidInput, "Rng::below(0)");
    // 2^64 mod n computed as (-n) mod n in unsigned arithmetic.
    const std::uint64_t rem = (0 - n) % n;
    const std::uint64_t limit = 0 - rem;  // == 2^64 - rem, wraps to 0 when rem == 0
    for (;;) {
        const std::uint64_t x = next_u64();
        if (rem == 0 || x < limit) return x % n;
    }
}

double Rng::normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::vector<std::size_t> Rng::choose(std::size_t n, std::size_t k) {
    if (k > n) fail(ErrorKind::InvalidInput, "cannot choose more items than available");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(below(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
}

}  // namespace fsad
