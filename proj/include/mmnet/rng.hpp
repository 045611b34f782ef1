#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace mmnet {

// Deterministic generator: xoshiro256** state seeded through splitmix64.
// The stream is a pure function of the seed, independent of platform and
// standard library. Child streams are keyed, so a stream derived for
// (epoch, batch) is the same no matter what else has been drawn.
class Rng {
public:
    static constexpr std::string_view algorithm = "xoshiro256ss-splitmix64";

    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t seed() const noexcept { return seed_; }

    // Independent child stream keyed by integers (layer id, epoch, index...).
    Rng derive(std::initializer_list<std::uint64_t> keys) const;
    // Same, keyed by a string tag followed by integers.
    Rng derive(std::string_view tag, std::initializer_list<std::uint64_t> keys = {}) const;

    std::uint64_t next_u64() noexcept;
    // Uniform in [0, 1) with 53 bits of resolution.
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    // Standard normal via Box-Muller; the second variate is cached.
    double normal() noexcept;
    // Uniform integer in [0, bound).
    std::uint64_t below(std::uint64_t bound) noexcept;
    bool bernoulli(double p) noexcept { return uniform() < p; }

private:
    std::uint64_t seed_;
    std::uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state) noexcept;

} // namespace mmnet
