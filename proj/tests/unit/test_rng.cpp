#include <doctest.h>

#include <cmath>

#include "dppvae/rng.hpp"

using namespace dppvae;

TEST_CASE("substreams: deterministic, name-sensitive") {
    Rng a = Rng::substream(42, "data");
    Rng b = Rng::substream(42, "data");
    Rng c = Rng::substream(42, "init");
    const double va = a.uniform();
    CHECK(va == b.uniform());
    CHECK(va != c.uniform());
}

TEST_CASE("normal: moments") {
    Rng rng(7);
    const int n = 200000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        s += v;
        s2 += v * v;
    }
    CHECK(std::fabs(s / n) < 0.01);
    CHECK(std::fabs(s2 / n - 1.0) < 0.02);
}

TEST_CASE("poisson: mean and variance near lambda") {
    Rng rng(11);
    for (double lambda : {0.3, 2.5, 8.0}) {
        const int n = 100000;
        double s = 0.0, s2 = 0.0;
        for (int i = 0; i < n; ++i) {
            const double v = static_cast<double>(rng.poisson(lambda));
            s += v;
            s2 += v * v;
        }
        const double mean = s / n;
        const double var = s2 / n - mean * mean;
        CHECK(std::fabs(mean - lambda) < 5.0 * std::sqrt(lambda / n));
        CHECK(std::fabs(var - lambda) / lambda < 0.05);
    }
    CHECK(rng.poisson(0.0) == 0);
}

TEST_CASE("state round trip resumes the stream") {
    Rng rng(13);
    rng.normal();
    const std::string saved = rng.state();
    const double next = rng.normal();
    Rng restored(0);
    restored.restore(saved);
    CHECK(restored.normal() == next);
}

TEST_CASE("sample_without_replacement: distinct, in range") {
    Rng rng(17);
    auto picks = rng.sample_without_replacement(10, 10);
    std::vector<bool> seen(10, false);
    for (std::size_t p : picks) {
        CHECK(p < 10);
        CHECK(!seen[p]);
        seen[p] = true;
    }
}
