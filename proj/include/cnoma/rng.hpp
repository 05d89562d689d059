#pragma once

#include <cstdint>
#include <limits>

namespace cnoma {

/// Reproducible random stream keyed by (seed, stream, substream).
///
/// Backed by xoshiro256** with a SplitMix64 key schedule, so a stream for
/// replicate r of experiment e under seed s is the same regardless of which
/// thread draws it or in what order replicates are scheduled. All samplers
/// are implemented here rather than through <random> distributions, whose
/// output is implementation-defined.
class RngStream {
public:
    using result_type = std::uint64_t;

    explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t substream = 0);

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
    result_type operator()() { return next_u64(); }

    std::uint64_t next_u64();

    /// Uniform on [0, 1) with 53 bits of resolution.
    double uniform();
    /// Uniform on (0, 1].
    double uniform_open_low();
    /// Uniform integer on [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n);

    double exponential(double rate);
    double normal();
    /// Gamma(shape, scale) via Marsaglia-Tsang.
    double gamma(double shape, double scale);

    /// Child stream; independent of this stream's current position.
    RngStream split(std::uint64_t id) const;

private:
    std::uint64_t key_;
    std::uint64_t s_[4];
};

} // namespace cnoma
