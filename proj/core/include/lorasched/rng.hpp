// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace lorasched {

/// 64-bit FNV-1a. Used for config hashes and sub-seed derivation; stable across platforms.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

std::uint64_t splitmix64(std::uint64_t x);

/// Derive an independent stream seed from the run seed and a component name.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view component);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view component, std::uint64_t index);

/// mt19937_64 plus portable uniform/normal draws. std::normal_distribution is
/// implementation-defined, so reports would differ between standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    double normal();

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace lorasched
