#pragma once

#include <cstdint>
#include <string_view>

namespace hairseg {

// Counter-based deterministic generator. The state is two 64-bit words, so
// it serializes into checkpoints and resumes mid-stream: the same seed and
// the same call sequence always reproduce the same values.
//
// Each draw hashes (seed, counter) with the splitmix64 finalizer and
// advances the counter; there is no hidden state.
class RngState {
public:
    static constexpr std::uint32_t kAlgorithmId = 1; // splitmix64-counter
    static constexpr std::string_view kAlgorithmName = "splitmix64-counter";

    RngState() = default;
    explicit RngState(std::uint64_t seed, std::uint64_t counter = 0)
        : seed_(seed), counter_(counter) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t counter() const noexcept { return counter_; }

    std::uint64_t next_u64() noexcept;

    // Uniform in [0, 1), 53 random mantissa bits.
    double next_uniform() noexcept;

    // Uniform integer in [lo, hi] inclusive.
    std::uint64_t next_range(std::uint64_t lo, std::uint64_t hi) noexcept;

    // Standard normal via Box-Muller (two draws per value, no caching, so
    // the counter advances identically regardless of call pattern).
    double next_normal() noexcept;

    // Normal(0, std) rejected outside +/- 2 std.
    double next_trunc_normal(double stddev) noexcept;

    // Independent stream for a named substream (fold index, purpose tag...).
    // Derivation only mixes the seed; the derived stream starts at counter 0.
    RngState derive(std::uint64_t stream_id) const noexcept;

    bool operator==(const RngState&) const = default;

private:
    std::uint64_t seed_ = 0;
    std::uint64_t counter_ = 0;
};

} // namespace hairseg
