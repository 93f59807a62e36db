#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace uraenas {

/// SplitMix64 finaliser; used to derive independent seeds from structured keys.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Folds a master seed and a list of integer tags into one stream seed.
/// Equal keys give equal seeds; the order of tags matters.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t h = mix64(master);
    for (auto t : tags) h = mix64(h ^ mix64(t + 0x632be59bd9b4e019ULL));
    return h;
}

/// Stream tags used throughout the library so that every random consumer
/// draws from its own reproducible stream.
enum class Stream : std::uint64_t {
    WeightInit = 1,
    ArchSample = 2,
    Shuffle = 3,
    LangevinNoise = 4,
    Synth = 5,
    Corrupt = 6,
    Sweep = 7,
    EvalArch = 8,
    ValBatch = 9,
};

/// Thin wrapper over mt19937_64 with the handful of draws the library needs.
class Rng {
public:
    using engine_type = std::mt19937_64;

    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}
    Rng(std::uint64_t master, std::initializer_list<std::uint64_t> tags)
        : engine_(derive_seed(master, tags)) {}

    /// Uniform on [0, 1).
    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

    /// Uniform on (0, 1); never returns zero, safe to take a log of.
    double uniform_open() {
        double u;
        do {
            u = uniform();
        } while (u <= 0.0);
        return u;
    }

    double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
    }

    engine_type& engine() noexcept { return engine_; }

private:
    engine_type engine_;
};

} // namespace uraenas
