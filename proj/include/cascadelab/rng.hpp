// Copyright 2026 The cascadelab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace cascadelab {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept
{
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t mix64(std::uint64_t a, std::uint64_t b) noexcept
{
    std::uint64_t s = a ^ (b * 0xD1B54A32D192ED03ULL);
    std::uint64_t h = splitmix64(s);
    s ^= h + 0x632BE59BD9B4E019ULL;
    return splitmix64(s);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept
{
    return (x << k) | (x >> (64 - k));
}

} // namespace detail

/// A reproducible random stream identified by (seed, stream_id).
///
/// Backed by xoshiro256** whose state is derived from the pair through
/// splitmix64, so distinct stream ids give decorrelated sequences and a
/// replicate owning its own stream produces the same draws regardless of the
/// thread it runs on. Satisfies UniformRandomBitGenerator so the standard
/// distributions accept it.
class RngStream
{
  public:
    using result_type = std::uint64_t;

    RngStream(std::uint64_t seed, std::uint64_t stream_id) noexcept
        : seed_(seed), stream_id_(stream_id)
    {
        std::uint64_t sm = detail::mix64(seed, stream_id);
        for (auto& s : state_)
            s = detail::splitmix64(sm);
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept
    {
        return std::numeric_limits<result_type>::max();
    }

    result_type operator()() noexcept
    {
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

    /// Uniform draw on the open interval (0, 1).
    double uniform() noexcept
    {
        return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Uniform integer on {0, ..., n-1}; n must be positive.
    std::uint64_t below(std::uint64_t n) noexcept
    {
        // Lemire's nearly-divisionless method.
        unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                m = static_cast<unsigned __int128>((*this)()) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    /// Child stream for replicate `index`, keyed on this stream's identity
    /// (not on how far it has been consumed).
    RngStream substream(std::uint64_t index) const noexcept
    {
        return RngStream(seed_, detail::mix64(stream_id_ + 1, index));
    }

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }

  private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::array<std::uint64_t, 4> state_{};
};

} // namespace cascadelab
