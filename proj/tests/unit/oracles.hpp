#ifndef DPPVAE_TEST_ORACLES_HPP
#define DPPVAE_TEST_ORACLES_HPP

// Independent reference implementations used to pin expected values.
// Everything here is deliberately brute-force and kept apart from the
// library code paths it checks.

#include <algorithm>
#include <cmath>
#include <vector>

#include "dppvae/dpp.hpp"
#include "dppvae/matrix.hpp"
#include "dppvae/rng.hpp"

namespace oracles {

using dppvae::Matrix;

/// Determinant by cofactor expansion along the first row. O(n!) — keep n small.
inline double cofactor_det(const Matrix& a) {
    const std::size_t n = a.rows;
    if (n == 1) return a(0, 0);
    if (n == 2) return a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
    double det = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        Matrix minor(n - 1, n - 1);
        for (std::size_t r = 1; r < n; ++r) {
            std::size_t cc = 0;
            for (std::size_t c = 0; c < n; ++c) {
                if (c == j) continue;
                minor(r - 1, cc++) = a(r, c);
            }
        }
        const double sign = (j % 2 == 0) ? 1.0 : -1.0;
        det += sign * a(0, j) * cofactor_det(minor);
    }
    return det;
}

/// e_k by explicit sum over all k-subsets.
inline double brute_esp(const std::vector<double>& lambdas, std::size_t k) {
    const std::size_t m = lambdas.size();
    if (k == 0) return 1.0;
    if (k > m) return 0.0;
    double total = 0.0;
    std::vector<std::size_t> idx(k);
    for (std::size_t i = 0; i < k; ++i) idx[i] = i;
    for (;;) {
        double prod = 1.0;
        for (std::size_t i : idx) prod *= lambdas[i];
        total += prod;
        // next combination
        std::size_t i = k;
        while (i-- > 0) {
            if (idx[i] != i + m - k) {
                ++idx[i];
                for (std::size_t j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
                break;
            }
            if (i == 0) return total;
        }
    }
}

/// Nystrom discretization of T f(x) = int q(x) k(x,y) q(y) f(y) dy on a
/// uniform grid with trapezoid weights; returns the top-m matrix eigenvalues.
inline std::vector<double> nystrom_spectrum(const dppvae::KernelParams& params, std::size_t m,
                                            std::size_t nodes, double half_width) {
    const std::size_t n = nodes;
    std::vector<double> x(n), w(n);
    const double h = 2.0 * half_width / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = -half_width + h * static_cast<double>(i);
        w[i] = (i == 0 || i == n - 1) ? h / 2.0 : h;
    }
    Matrix k(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        const double qi = dppvae::quality(std::span<const double>(&x[i], 1), params);
        for (std::size_t j = 0; j < n; ++j) {
            const double qj = dppvae::quality(std::span<const double>(&x[j], 1), params);
            const double sim =
                dppvae::similarity(std::span<const double>(&x[i], 1),
                                   std::span<const double>(&x[j], 1), params);
            k(i, j) = std::sqrt(w[i]) * qi * sim * qj * std::sqrt(w[j]);
        }
    }
    auto eig = dppvae::eigh(k);
    eig.values.resize(std::min(m, eig.values.size()));
    return eig.values;
}

/// Random SPD matrix G^T G + I.
inline Matrix random_spd(std::size_t n, dppvae::Rng& rng) {
    Matrix g(n, n);
    for (double& v : g.data) v = rng.normal();
    Matrix a = dppvae::matmul(dppvae::transpose(g), g);
    for (std::size_t i = 0; i < n; ++i) a(i, i) += 1.0;
    return a;
}

inline Matrix random_matrix(std::size_t r, std::size_t c, dppvae::Rng& rng, double s = 1.0) {
    Matrix m(r, c);
    for (double& v : m.data) v = s * rng.normal();
    return m;
}

/// Scalar-loop kernel matrix straight from the q/k definitions.
inline Matrix naive_kernel_matrix(const Matrix& z, const dppvae::KernelParams& params) {
    const std::size_t b = z.rows;
    Matrix l(b, b);
    for (std::size_t i = 0; i < b; ++i) {
        const std::vector<double> zi = z.row_values(i);
        for (std::size_t j = 0; j < b; ++j) {
            const std::vector<double> zj = z.row_values(j);
            l(i, j) = dppvae::quality(zi, params) *
                      dppvae::similarity(zi, zj, params) * dppvae::quality(zj, params);
        }
    }
    return l;
}

}  // namespace oracles

#endif
