#include "dppvae/rng.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "dppvae/errors.hpp"

namespace dppvae {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t Rng::mix_seed(std::uint64_t global_seed, std::string_view name) {
    std::uint64_t h = fnv1a64(name);
    // mix the global seed through the hash rather than xoring it in raw so
    // nearby seeds give unrelated streams
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((global_seed >> (8 * i)) & 0xff);
    return fnv1a64(std::string_view(buf, 8), h);
}

Rng Rng::substream(std::uint64_t global_seed, std::string_view name) {
    return Rng(mix_seed(global_seed, name));
}

double Rng::uniform() {
    // 53-bit mantissa from the top bits
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    if (have_cached_normal_) {
        have_cached_normal_ = false;
        return cached_normal_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    cached_normal_ = r * std::sin(a);
    have_cached_normal_ = true;
    return r * std::cos(a);
}

long Rng::poisson(double mean) {
    if (mean < 0.0 || !std::isfinite(mean)) throw InvalidParams("poisson mean must be >= 0");
    if (mean == 0.0) return 0;
    if (mean < 30.0) {
        const double limit = std::exp(-mean);
        long k = 0;
        double p = 1.0;
        do {
            ++k;
            p *= uniform();
        } while (p > limit);
        return k - 1;
    }
    // normal approximation with continuity correction; exact draws at these
    // means are irrelevant at the rates the simulator runs at
    const double x = std::floor(mean + std::sqrt(mean) * normal() + 0.5);
    return x < 0.0 ? 0 : static_cast<long>(x);
}

std::size_t Rng::index(std::size_t n) {
    if (n == 0) throw InvalidParams("index from empty range");
    // rejection sampling avoids modulo bias
    const std::uint64_t span = n;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t r = 0;
    do {
        r = engine_();
    } while (r >= limit);
    return static_cast<std::size_t>(r % span);
}

std::vector<std::size_t> Rng::sample_without_replacement(std::size_t n, std::size_t k) {
    if (k > n) throw InvalidParams("sample_without_replacement: k > n");
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + index(n - i);
        std::swap(pool[i], pool[j]);
        out.push_back(pool[i]);
    }
    return out;
}

std::string Rng::state() const {
    std::ostringstream os;
    os << engine_;
    os << " " << (have_cached_normal_ ? 1 : 0) << " ";
    os.precision(17);
    os << cached_normal_;
    return os.str();
}

void Rng::restore(const std::string& state) {
    std::istringstream is(state);
    is >> engine_;
    int flag = 0;
    is >> flag >> cached_normal_;
    have_cached_normal_ = flag != 0;
    if (!is) throw InvalidParams("bad rng state string");
}

}  // namespace dppvae
