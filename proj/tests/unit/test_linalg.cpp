#include <doctest.h>

#include <cmath>

#include "dppvae/errors.hpp"
#include "dppvae/linalg.hpp"
#include "dppvae/rng.hpp"
#include "oracles.hpp"

using namespace dppvae;

TEST_CASE("cholesky: identity") {
    auto f = cholesky(Matrix::identity(3));
    CHECK(f.jitter_applied == 0.0);
    CHECK(max_abs_diff(f.lower, Matrix::identity(3)) == 0.0);
}

TEST_CASE("cholesky: hand-checked 2x2") {
    auto a = Matrix::from_rows({{4, 2}, {2, 3}});
    auto f = cholesky(a);
    CHECK(f.lower(0, 0) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(f.lower(1, 0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(f.lower(1, 1) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
    CHECK(f.lower(0, 1) == 0.0);
}

TEST_CASE("cholesky: random SPD round trip") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        auto a = oracles::random_spd(8, rng);
        auto f = cholesky(a);
        auto back = matmul(f.lower, transpose(f.lower));
        CHECK(frobenius_norm(sub(back, a)) / frobenius_norm(a) < 1e-10);
        CHECK(f.jitter_applied == 0.0);
    }
}

TEST_CASE("cholesky: jitter recovers a singular matrix and is recorded") {
    // rank-1, exactly singular
    auto a = Matrix::from_rows({{1, 1}, {1, 1}});
    auto f = cholesky(a);
    CHECK(f.jitter_applied > 0.0);
    auto back = matmul(f.lower, transpose(f.lower));
    Matrix expect = a;
    expect(0, 0) += f.jitter_applied;
    expect(1, 1) += f.jitter_applied;
    CHECK(frobenius_norm(sub(back, expect)) / frobenius_norm(expect) < 1e-8);
}

TEST_CASE("cholesky: negative definite fails after retries") {
    auto a = Matrix::from_rows({{-1, 0}, {0, -1}});
    CHECK_THROWS_AS(cholesky(a), NotPositiveDefinite);
}

TEST_CASE("log_det_spd: identity and diagonal") {
    CHECK(log_det_spd(Matrix::identity(5)) == 0.0);
    auto d = Matrix::from_rows({{2, 0}, {0, 8}});
    CHECK(log_det_spd(d) == doctest::Approx(std::log(16.0)).epsilon(1e-12));
}

TEST_CASE("log_det_spd: matches cofactor-expansion determinant") {
    Rng rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        auto a = oracles::random_spd(6, rng);
        const double expect = std::log(oracles::cofactor_det(a));
        CHECK(log_det_spd(a) == doctest::Approx(expect).epsilon(1e-9));
    }
}

TEST_CASE("log_det_spd equals sum of log eigenvalues") {
    Rng rng(37);
    for (std::size_t n : {4u, 16u, 32u}) {
        auto a = oracles::random_spd(n, rng);
        auto eig = eigh(a);
        double s = 0.0;
        for (double v : eig.values) s += std::log(v);
        CHECK(log_det_spd(a) == doctest::Approx(s).epsilon(1e-8));
    }
}

TEST_CASE("eigh: diagonal and hand-checked 2x2") {
    auto d = eigh(Matrix::from_rows({{3, 0, 0}, {0, 1, 0}, {0, 0, 2}}));
    CHECK(d.values[0] == doctest::Approx(3.0));
    CHECK(d.values[1] == doctest::Approx(2.0));
    CHECK(d.values[2] == doctest::Approx(1.0));

    auto e = eigh(Matrix::from_rows({{2, 1}, {1, 2}}));
    CHECK(e.values[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(e.values[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("eigh: trace identity, orthonormality, residuals") {
    Rng rng(5);
    Matrix a = oracles::random_matrix(10, 10, rng);
    a = symmetrize(a);
    auto eig = eigh(a);

    double vsum = 0.0;
    for (double v : eig.values) vsum += v;
    CHECK(vsum == doctest::Approx(trace(a)).epsilon(1e-10));

    auto vtv = matmul(transpose(eig.vectors), eig.vectors);
    CHECK(max_abs_diff(vtv, Matrix::identity(10)) < 1e-8);

    const double scale_a = std::max(1.0, frobenius_norm(a));
    for (std::size_t i = 0; i < 10; ++i) {
        Matrix v(10, 1);
        for (std::size_t r = 0; r < 10; ++r) v(r, 0) = eig.vectors(r, i);
        auto av = matmul(a, v);
        auto lv = scale(v, eig.values[i]);
        CHECK(frobenius_norm(sub(av, lv)) / scale_a < 1e-6);
    }
}

TEST_CASE("pca: rank-1 line embedded in 5-D") {
    Rng rng(7);
    Matrix x(40, 5);
    std::vector<double> dir = {0.2, -0.4, 0.1, 0.8, -0.3};
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double t = rng.normal();
        for (std::size_t j = 0; j < 5; ++j) x(i, j) = 2.0 + t * dir[j];
    }
    auto model = pca_fit(x, 1);
    CHECK(model.explained_variance_ratio[0] == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("pca: isotropic cloud has roughly equal ratios") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        Rng rng(seed);
        Matrix x = oracles::random_matrix(4000, 3, rng);
        auto model = pca_fit(x, 3);
        for (double r : model.explained_variance_ratio)
            CHECK(std::fabs(r - 1.0 / 3.0) < 0.05);
    }
}

TEST_CASE("pca: projector properties") {
    Rng rng(9);
    Matrix x = oracles::random_matrix(30, 6, rng);
    auto model = pca_fit(x, 3);

    // P^T P = I
    auto ptp = matmul(transpose(model.components), model.components);
    CHECK(max_abs_diff(ptp, Matrix::identity(3)) < 1e-10);

    // reconstruct-then-project is idempotent
    auto y = model.transform(x);
    auto xr = model.inverse_transform(y);
    auto y2 = model.transform(xr);
    CHECK(max_abs_diff(y, y2) < 1e-10);

    // sign convention: largest-magnitude entry of each component positive
    for (std::size_t c = 0; c < 3; ++c) {
        double best = 0.0;
        for (std::size_t r = 0; r < 6; ++r)
            if (std::fabs(model.components(r, c)) > std::fabs(best))
                best = model.components(r, c);
        CHECK(best > 0.0);
    }
}

TEST_CASE("pca: collapsed covariance raises DegenerateInput") {
    Matrix x(10, 3, 1.5);  // all points identical
    CHECK_THROWS_AS(pca_fit(x, 1), DegenerateInput);
}
