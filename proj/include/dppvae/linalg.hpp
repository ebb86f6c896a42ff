#ifndef DPPVAE_LINALG_HPP
#define DPPVAE_LINALG_HPP

#include <cstddef>
#include <vector>

#include "dppvae/matrix.hpp"

namespace dppvae {

/// Bounded diagonal regularization for near-singular kernel matrices.
/// First attempt is jitter-free; retries add initial_scale * mean(diag),
/// growing by `growth` each time.
struct JitterPolicy {
    double initial_scale = 1e-6;
    double growth = 10.0;
    int max_retries = 3;
};

struct CholeskyFactor {
    Matrix lower;            // lower-triangular, strictly positive diagonal
    double jitter_applied = 0.0;
};

/// Lower Cholesky of a symmetric matrix. Input is symmetrized internally;
/// callers are expected to pass matrices symmetric to ~1e-10.
/// Throws NotPositiveDefinite once the jitter retries are exhausted.
CholeskyFactor cholesky(const Matrix& a, const JitterPolicy& policy = {});

/// log det of a symmetric positive definite matrix: 2 * sum(log diag(L)).
double log_det_spd(const Matrix& a, const JitterPolicy& policy = {});

/// Forward / back substitution with the factor's triangle.
Matrix solve_lower(const Matrix& lower, const Matrix& b);            // L x = b
Matrix solve_lower_transpose(const Matrix& lower, const Matrix& b);  // L^T x = b
Matrix spd_solve(const CholeskyFactor& f, const Matrix& b);          // (L L^T) x = b
Matrix spd_inverse(const CholeskyFactor& f);

struct EigenDecomposition {
    std::vector<double> values;  // sorted descending
    Matrix vectors;              // orthonormal columns, vectors.col(i) <-> values[i]
};

/// Symmetric eigendecomposition by cyclic Jacobi sweeps. Runs until the
/// off-diagonal Frobenius norm drops below 1e-12 of the matrix norm;
/// throws NoConvergence after 100 sweeps.
EigenDecomposition eigh(const Matrix& a);

struct PCAModel {
    Matrix mean;                                  // 1 x features
    Matrix components;                            // features x n_components, unit columns
    std::vector<double> explained_variance;       // per component
    std::vector<double> explained_variance_ratio; // fraction of total variance

    Matrix transform(const Matrix& x) const;          // (x - mean) * components
    Matrix inverse_transform(const Matrix& y) const;  // y * components^T + mean
};

/// PCA on samples x features. Components carry a fixed sign convention:
/// the largest-magnitude entry of each component is positive.
/// Throws DegenerateInput when the covariance rank is below n_components.
PCAModel pca_fit(const Matrix& x, std::size_t n_components);

}  // namespace dppvae

#endif
