#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace uamsa {

// Counter-based PRNG built on Philox4x32-10 (Salmon et al., "Parallel random
// numbers: as easy as 1, 2, 3"). A draw is a pure function of
// (seed, stream, counter), so masks and noise can be generated in parallel
// and regenerated exactly. Streams occupy disjoint 2^64-sized counter
// subspaces: two streams with distinct ids never overlap, for any number of
// draws up to 2^64. Bit-compatibility across builds of this library is not
// promised; within one build the sequence is fixed.
namespace philox {

std::array<std::uint32_t, 4> block(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter);

// SplitMix64 finalizer, used for stream derivation and id hashing.
std::uint64_t mix64(std::uint64_t x);

} // namespace philox

class Rng {
public:
    Rng() : seed_(0), stream_(0) {}
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    // Child stream for a labelled sub-task (per sample, per pass, ...).
    // Distinct (stream, label) pairs map to distinct child ids except for
    // ~2^-64 hash collisions.
    Rng split(std::uint64_t label) const {
        return Rng(seed_, philox::mix64(philox::mix64(stream_) ^ (label + 0x9E3779B97F4A7C15ULL)));
    }

    // Stateless draws addressed by counter index.
    std::uint32_t bits32(std::uint64_t index) const {
        return philox::block(seed_, stream_, index >> 2)[index & 3];
    }
    // [0, 1) with 24 bits of mantissa.
    float uniform(std::uint64_t index) const {
        return static_cast<float>(bits32(index) >> 8) * 0x1.0p-24f;
    }
    float uniform(std::uint64_t index, float lo, float hi) const {
        return lo + (hi - lo) * uniform(index);
    }
    // Standard normal via Box-Muller over counters (2*index, 2*index+1).
    double normal(std::uint64_t index) const;

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
};

// Cursor over one stream: hands out aligned counter ranges so consecutive
// operations never reuse counters. Single-owner, like the tape.
class RngSequence {
public:
    explicit RngSequence(Rng rng) : rng_(rng), next_(0) {}

    const Rng& rng() const { return rng_; }

    // Reserve n draws; returns the base counter (multiple of 4).
    std::uint64_t reserve(std::uint64_t n) {
        const std::uint64_t base = next_;
        next_ += (n + 3) & ~std::uint64_t(3);
        return base;
    }

    float next_uniform() { return rng_.uniform(reserve(4)); }
    std::uint32_t next_bits() { return rng_.bits32(reserve(4)); }

private:
    Rng rng_;
    std::uint64_t next_;
};

// Stable 64-bit hash of a string mixed with a seed; used as a shuffle key so
// dataset splits depend only on (id, seed), not input order.
std::uint64_t hash_id(const std::string& id, std::uint64_t seed);

} // namespace uamsa
