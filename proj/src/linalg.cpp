#include "dppvae/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>

#include "dppvae/errors.hpp"

namespace dppvae {

namespace {

// Plain lower Cholesky; nullopt on a non-positive pivot. Pivots below
// pivot_floor count as failures too: accepting a denormal pivot lets the
// later triangular solves compound 1/pivot across rows into overflow, so
// numerically rank-deficient matrices must take the jitter path instead.
std::optional<Matrix> try_cholesky(const Matrix& a, double jitter, double pivot_floor) {
    const std::size_t n = a.rows;
    Matrix low(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a(i, j);
            if (i == j) s += jitter;
            for (std::size_t k = 0; k < j; ++k) s -= low(i, k) * low(j, k);
            if (i == j) {
                if (!(s > pivot_floor) || !std::isfinite(s)) return std::nullopt;
                low(i, i) = std::sqrt(s);
            } else {
                low(i, j) = s / low(j, j);
            }
        }
    }
    return low;
}

}  // namespace

CholeskyFactor cholesky(const Matrix& a, const JitterPolicy& policy) {
    if (!a.is_square()) throw ShapeMismatch("cholesky: matrix not square");
    const Matrix sym = symmetrize(a);
    const std::size_t n = sym.rows;

    double mean_diag = 0.0, max_diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mean_diag += std::fabs(sym(i, i));
        max_diag = std::max(max_diag, std::fabs(sym(i, i)));
    }
    mean_diag = n ? mean_diag / static_cast<double>(n) : 0.0;
    if (mean_diag == 0.0) mean_diag = 1.0;

    double jitter = 0.0;
    for (int attempt = 0; attempt <= policy.max_retries; ++attempt) {
        const double pivot_floor = 1e-14 * (max_diag + jitter);
        if (auto low = try_cholesky(sym, jitter, pivot_floor)) return {std::move(*low), jitter};
        jitter = attempt == 0 ? policy.initial_scale * mean_diag : jitter * policy.growth;
    }
    throw NotPositiveDefinite("cholesky failed after " + std::to_string(policy.max_retries) +
                              " jitter retries (last jitter " + std::to_string(jitter / policy.growth) +
                              ")");
}

double log_det_spd(const Matrix& a, const JitterPolicy& policy) {
    const CholeskyFactor f = cholesky(a, policy);
    double s = 0.0;
    for (std::size_t i = 0; i < f.lower.rows; ++i) s += std::log(f.lower(i, i));
    return 2.0 * s;
}

Matrix solve_lower(const Matrix& lower, const Matrix& b) {
    if (lower.rows != b.rows) throw ShapeMismatch("solve_lower: dimension mismatch");
    const std::size_t n = lower.rows;
    Matrix x = b;
    for (std::size_t col = 0; col < b.cols; ++col) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = x(i, col);
            for (std::size_t k = 0; k < i; ++k) s -= lower(i, k) * x(k, col);
            x(i, col) = s / lower(i, i);
        }
    }
    return x;
}

Matrix solve_lower_transpose(const Matrix& lower, const Matrix& b) {
    if (lower.rows != b.rows) throw ShapeMismatch("solve_lower_transpose: dimension mismatch");
    const std::size_t n = lower.rows;
    Matrix x = b;
    for (std::size_t col = 0; col < b.cols; ++col) {
        for (std::size_t ii = n; ii-- > 0;) {
            double s = x(ii, col);
            for (std::size_t k = ii + 1; k < n; ++k) s -= lower(k, ii) * x(k, col);
            x(ii, col) = s / lower(ii, ii);
        }
    }
    return x;
}

Matrix spd_solve(const CholeskyFactor& f, const Matrix& b) {
    return solve_lower_transpose(f.lower, solve_lower(f.lower, b));
}

Matrix spd_inverse(const CholeskyFactor& f) {
    return spd_solve(f, Matrix::identity(f.lower.rows));
}

EigenDecomposition eigh(const Matrix& a) {
    if (!a.is_square()) throw ShapeMismatch("eigh: matrix not square");
    const std::size_t n = a.rows;
    Matrix w = symmetrize(a);
    Matrix v = Matrix::identity(n);

    const double norm = std::max(frobenius_norm(w), 1e-300);
    const double threshold = 1e-12 * norm;
    const int max_sweeps = 100;

    auto off_norm = [&]() {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) s += 2.0 * w(i, j) * w(i, j);
        return std::sqrt(s);
    };

    int sweep = 0;
    while (off_norm() > threshold) {
        if (++sweep > max_sweeps) throw NoConvergence("eigh: Jacobi did not converge in 100 sweeps");
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = w(p, q);
                if (std::fabs(apq) <= 1e-300) continue;
                const double tau = (w(q, q) - w(p, p)) / (2.0 * apq);
                double t;
                if (tau >= 0.0)
                    t = 1.0 / (tau + std::sqrt(1.0 + tau * tau));
                else
                    t = -1.0 / (-tau + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                // w <- J^T w J with J the (p,q) rotation
                for (std::size_t k = 0; k < n; ++k) {
                    const double wkp = w(k, p), wkq = w(k, q);
                    w(k, p) = c * wkp - s * wkq;
                    w(k, q) = s * wkp + c * wkq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double wpk = w(p, k), wqk = w(q, k);
                    w(p, k) = c * wpk - s * wqk;
                    w(q, k) = s * wpk + c * wqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return w(x, x) > w(y, y); });

    EigenDecomposition out;
    out.values.resize(n);
    out.vectors = Matrix(n, n);
    for (std::size_t c = 0; c < n; ++c) {
        out.values[c] = w(order[c], order[c]);
        for (std::size_t r = 0; r < n; ++r) out.vectors(r, c) = v(r, order[c]);
    }
    return out;
}

Matrix PCAModel::transform(const Matrix& x) const {
    if (x.cols != mean.cols) throw ShapeMismatch("PCAModel::transform: feature count mismatch");
    Matrix centered = x;
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < x.cols; ++j) centered(i, j) -= mean(0, j);
    return matmul(centered, components);
}

Matrix PCAModel::inverse_transform(const Matrix& y) const {
    Matrix x = matmul(y, transpose(components));
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < x.cols; ++j) x(i, j) += mean(0, j);
    return x;
}

PCAModel pca_fit(const Matrix& x, std::size_t n_components) {
    const std::size_t n = x.rows, d = x.cols;
    if (n_components == 0) throw InvalidParams("pca_fit: n_components must be >= 1");
    if (n < n_components || d < n_components)
        throw DegenerateInput("pca_fit: need samples and features >= n_components");

    PCAModel model;
    model.mean = Matrix(1, d);
    for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += x(i, j);
        model.mean(0, j) = s / static_cast<double>(n);
    }
    Matrix centered = x;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) centered(i, j) -= model.mean(0, j);

    const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
    Matrix cov = scale(matmul(transpose(centered), centered), 1.0 / denom);
    EigenDecomposition eig = eigh(cov);

    double total = 0.0;
    for (double v : eig.values) total += std::max(v, 0.0);
    if (!(eig.values[0] > 0.0) ||
        eig.values[n_components - 1] <= 1e-12 * std::max(eig.values[0], 0.0))
        throw DegenerateInput("pca_fit: covariance rank below n_components");

    model.components = Matrix(d, n_components);
    model.explained_variance.resize(n_components);
    model.explained_variance_ratio.resize(n_components);
    for (std::size_t c = 0; c < n_components; ++c) {
        model.explained_variance[c] = eig.values[c];
        model.explained_variance_ratio[c] = total > 0.0 ? eig.values[c] / total : 0.0;
        // sign convention: largest-magnitude entry positive, ties at the
        // lowest index
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t r = 0; r < d; ++r) {
            const double m = std::fabs(eig.vectors(r, c));
            if (m > best) {
                best = m;
                arg = r;
            }
        }
        const double sgn = eig.vectors(arg, c) < 0.0 ? -1.0 : 1.0;
        for (std::size_t r = 0; r < d; ++r) model.components(r, c) = sgn * eig.vectors(r, c);
    }
    return model;
}

}  // namespace dppvae
