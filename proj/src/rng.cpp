#include "mmnet/rng.hpp"

#include <cmath>
#include <numbers>

namespace mmnet {

namespace {

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept
{
    return (x << k) | (x >> (64 - k));
}

std::uint64_t mix(std::uint64_t h, std::uint64_t v) noexcept
{
    std::uint64_t s = h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
    return splitmix64(s);
}

} // namespace

std::uint64_t splitmix64(std::uint64_t& state) noexcept
{
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed)
{
    std::uint64_t sm = seed;
    for (auto& word : s_)
        word = splitmix64(sm);
}

Rng Rng::derive(std::initializer_list<std::uint64_t> keys) const
{
    std::uint64_t h = mix(seed_, keys.size());
    for (auto k : keys)
        h = mix(h, k);
    return Rng(h);
}

Rng Rng::derive(std::string_view tag, std::initializer_list<std::uint64_t> keys) const
{
    // FNV-1a over the tag, then fold in the integer keys.
    std::uint64_t t = 0xcbf29ce484222325ULL;
    for (unsigned char c : tag) {
        t ^= c;
        t *= 0x100000001b3ULL;
    }
    std::uint64_t h = mix(seed_ ^ 0x5bd1e995ULL, t);
    h = mix(h, keys.size());
    for (auto k : keys)
        h = mix(h, k);
    return Rng(h);
}

std::uint64_t Rng::next_u64() noexcept
{
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() noexcept
{
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() noexcept
{
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0)
        u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

std::uint64_t Rng::below(std::uint64_t bound) noexcept
{
    if (bound <= 1)
        return 0;
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % bound;
}

} // namespace mmnet
