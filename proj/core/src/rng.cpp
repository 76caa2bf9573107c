#include "hairseg/rng.hpp"

#include <cmath>
#include <numbers>

namespace hairseg {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

} // namespace

std::uint64_t RngState::next_u64() noexcept {
    const std::uint64_t v = mix64(seed_ + kGolden * (counter_ + 1));
    ++counter_;
    return v;
}

double RngState::next_uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RngState::next_range(std::uint64_t lo, std::uint64_t hi) noexcept {
    const std::uint64_t span = hi - lo + 1;
    // Multiply-shift mapping; span is tiny in all call sites so the bias of
    // not rejecting is far below anything observable here.
    const unsigned __int128 prod = static_cast<unsigned __int128>(next_u64()) * span;
    return lo + static_cast<std::uint64_t>(prod >> 64);
}

double RngState::next_normal() noexcept {
    // Box-Muller; u1 nudged away from zero so log() stays finite.
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1 + 1e-300));
    return r * std::cos(2.0 * std::numbers::pi * u2);
}

double RngState::next_trunc_normal(double stddev) noexcept {
    for (;;) {
        const double z = next_normal();
        if (std::abs(z) <= 2.0) return z * stddev;
    }
}

RngState RngState::derive(std::uint64_t stream_id) const noexcept {
    return RngState(mix64(seed_ ^ mix64(stream_id + kGolden)));
}

} // namespace hairseg
