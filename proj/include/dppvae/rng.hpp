#ifndef DPPVAE_RNG_HPP
#define DPPVAE_RNG_HPP

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace dppvae {

/// FNV-1a 64-bit, used for seed substreams and content hashes.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Deterministic pseudo-random stream. One global seed fans out into named
/// substreams so a change in one phase's consumption does not perturb others.
/// Sampling routines are implemented here (not via std distributions) so a
/// given seed produces the same draws on every standard-conforming platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    static Rng substream(std::uint64_t global_seed, std::string_view name);
    /// The substream seed derivation, usable wherever a plain seed is needed.
    static std::uint64_t mix_seed(std::uint64_t global_seed, std::string_view name);

    std::uint64_t bits() { return engine_(); }

    /// uniform in [0, 1)
    double uniform();
    /// uniform in [lo, hi)
    double uniform(double lo, double hi);
    /// standard normal via Box-Muller (pairs cached)
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }
    /// Poisson; Knuth multiplication for small means, normal tail for large
    long poisson(double mean);
    /// uniform integer in [0, n)
    std::size_t index(std::size_t n);

    /// Fisher-Yates shuffle
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    /// k distinct indices from [0, n), in draw order
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

    std::string state() const;
    void restore(const std::string& state);

private:
    std::mt19937_64 engine_;
    bool have_cached_normal_ = false;
    double cached_normal_ = 0.0;
};

}  // namespace dppvae

#endif
