#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace latgp {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

/// Seedable random stream with named, index-addressed substreams.
/// Substream identity is (root seed, tag, index), independent of the order
/// in which streams are created or consumed, so parallel draws stay
/// reproducible under any scheduling.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : seed_(seed) { reseed_engine(seed); }

    RandomStream substream(std::string_view tag, std::uint64_t index = 0) const {
        std::uint64_t s = seed_ ^ detail::fnv1a(tag);
        std::uint64_t mix = s + 0x632be59bd9b4e019ULL * (index + 1);
        detail::splitmix64(mix);
        return RandomStream(detail::splitmix64(mix));
    }

    double uniform() {
        return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
    }

    double normal(double mean = 0.0, double sd = 1.0) {
        return std::normal_distribution<double>(mean, sd)(engine_);
    }

    double gamma(double shape, double scale = 1.0) {
        return std::gamma_distribution<double>(shape, scale)(engine_);
    }

    /// b / Gamma(a): inverse-gamma with shape a and scale b.
    double inverse_gamma(double shape, double scale) {
        return scale / std::gamma_distribution<double>(shape, 1.0)(engine_);
    }

    void fill_normal(std::vector<double>& out) {
        std::normal_distribution<double> dist(0.0, 1.0);
        for (double& v : out) v = dist(engine_);
    }

    template <class Complex>
    void fill_complex_normal(std::vector<Complex>& out) {
        std::normal_distribution<double> dist(0.0, 1.0);
        for (auto& v : out) v = Complex{dist(engine_), dist(engine_)};
    }

    std::uint64_t seed() const { return seed_; }
    std::mt19937_64& engine() { return engine_; }

private:
    void reseed_engine(std::uint64_t seed) {
        std::uint64_t s = seed;
        std::seed_seq seq{detail::splitmix64(s), detail::splitmix64(s),
                          detail::splitmix64(s), detail::splitmix64(s)};
        engine_.seed(seq);
    }

    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

}  // namespace latgp
