#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace glmperm {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
}

} // namespace detail

// Splittable random stream. The identity of a stream is (seed, stream_id);
// substreams are derived from that identity only, never from how many values
// the parent has produced, so a loop body that owns substream(i) sees the
// same numbers no matter which thread runs it.
//
// Satisfies UniformRandomBitGenerator (xoshiro256** core).
class RngStream {
public:
    using result_type = std::uint64_t;

    explicit RngStream(std::uint64_t seed = 0, std::uint64_t stream_id = 0) noexcept
        : seed_(seed), stream_id_(stream_id) {
        std::uint64_t s = detail::splitmix64(seed ^ detail::splitmix64(stream_id + 0x632BE59BD9B4E019ULL));
        for (auto& word : state_) {
            s = detail::splitmix64(s);
            word = s;
        }
        if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
    }

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }

    RngStream substream(std::uint64_t index) const noexcept {
        const std::uint64_t child =
            detail::splitmix64(detail::splitmix64(stream_id_) ^ detail::rotl(detail::splitmix64(index ^ 0xD1B54A32D192ED03ULL), 17));
        return RngStream(seed_, child);
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        const std::uint64_t result = detail::rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = detail::rotl(state_[3], 45);
        return result;
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    /// Uniform integer on [0, bound). Lemire's multiply-shift with rejection.
    std::uint64_t below(std::uint64_t bound) noexcept {
        if (bound <= 1) return 0;
        __uint128_t m = static_cast<__uint128_t>((*this)()) * bound;
        auto low = static_cast<std::uint64_t>(m);
        if (low < bound) {
            const std::uint64_t threshold = (0 - bound) % bound;
            while (low < threshold) {
                m = static_cast<__uint128_t>((*this)()) * bound;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    friend bool operator==(const RngStream& a, const RngStream& b) noexcept {
        return a.seed_ == b.seed_ && a.stream_id_ == b.stream_id_ && a.state_ == b.state_;
    }

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::array<std::uint64_t, 4> state_{};
};

inline RngStream rng_substream(const RngStream& parent, std::uint64_t index) noexcept {
    return parent.substream(index);
}

/// Fisher-Yates shuffle driven by RngStream::below, so permutations do not
/// depend on the standard library's distribution implementations.
template <class RandomIt>
void shuffle(RandomIt first, RandomIt last, RngStream& rng) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
        const auto j = rng.below(i);
        using std::swap;
        swap(first[i - 1], first[j]);
    }
}

} // namespace glmperm
