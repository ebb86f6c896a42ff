#ifndef DPPVAE_DPP_HPP
#define DPPVAE_DPP_HPP

#include <cstddef>
#include <span>
#include <vector>

#include "dppvae/autodiff.hpp"
#include "dppvae/matrix.hpp"

namespace dppvae {

/// Hyperparameters of the quality/similarity kernel
///   L(x,y) = q(x) k(x,y) q(y)
///   q(x)   = sqrt(alpha) prod_d (pi rho_d)^{-1/2} exp(-x_d^2 / (2 rho_d))
///   k(x,y) = prod_d exp(-(x_d - y_d)^2 / (2 sigma_d))
struct KernelParams {
    double alpha = 1.0;
    std::vector<double> rho;    // per-dimension quality widths
    std::vector<double> sigma;  // per-dimension similarity widths

    std::size_t dim() const { return rho.size(); }
    void validate() const;  // InvalidParams on non-positive/non-finite values

    static KernelParams isotropic(double alpha, double rho, double sigma, std::size_t dim);
};

double quality(std::span<const double> x, const KernelParams& params);
double similarity(std::span<const double> x, std::span<const double> y,
                  const KernelParams& params);

/// B x B kernel matrix of a latent batch (B x D), assembled from tape ops so
/// gradients flow back to z. Exactly symmetric with diagonal q(z_n)^2.
Node build_kernel_matrix(Tape& tape, Node z, const KernelParams& params);

/// Spectrum of the integral operator T f(x) = int q(x) k(x,y) q(y) f(y) dy.
/// Eigenvalues factorize over dimensions and decay geometrically per
/// coordinate of the multi-index n (1-based):
///   lambda_n = alpha * prod_d lead_d * decay_d^(n_d - 1)
/// with, per dimension (a = 1/(2 rho), b = 1/(2 sigma), c = sqrt(a^2+2ab),
/// s = a+b+c):
///   decay_d = b/s
///   lead_d  = (pi rho_d)^{-1/2} * sqrt(2a/s)
/// The (pi rho_d)^{-1/2} factor is the Lebesgue normalization of the
/// operator; the Nystrom check in the test suite pins it.
struct Spectrum {
    std::vector<double> eigenvalues;            // sorted descending, ties by multi-index
    std::vector<std::vector<int>> multi_indices;  // 1-based lattice coordinates
    std::vector<double> beta;   // per-dim (1 + 2/gamma)^{1/4}
    std::vector<double> gamma;  // per-dim sigma/rho
    std::vector<double> lead;   // per-dim first factor
    std::vector<double> decay;  // per-dim geometric ratio, in (0,1)
    double operator_trace = 0.0;  // closed form: alpha * prod lead_d / (1 - decay_d)
};

/// m largest eigenvalues via best-first search over the multi-index lattice.
Spectrum continuous_spectrum(const KernelParams& params, std::size_t m);

/// Enumerate until the spectral tail falls below tail_rel * trace, capped at
/// max_terms eigenvalues.
Spectrum truncate_spectrum(const KernelParams& params, double tail_rel = 1e-3,
                           std::size_t max_terms = 10000);

/// log e_j(lambda_{1:M}) for j = 0..k, computed by the standard DP recursion
/// carried in log space (log e_0 = 0; entries -inf where e_j = 0).
struct ESPTable {
    std::vector<double> log_values;  // size k+1
    std::size_t m_used = 0;
    std::size_t k = 0;
};

ESPTable esp(std::span<const double> log_lambdas, std::size_t k);

/// Truncation bounds on the infinite-spectrum normalizer e_k(lambda_{1:inf}):
///   e_k(lambda_{1:M}) <= e_k(lambda_{1:inf})
///                     <= sum_{j=0}^k tail^j / j! * e_{k-j}(lambda_{1:M})
/// with tail = trace - sum_{n<=M} lambda_n. Log-space throughout.
struct NormalizerBound {
    double log_lower = 0.0;
    double log_upper = 0.0;
    std::size_t m_used = 0;
};

NormalizerBound normalizer_bounds(const Spectrum& spectrum, std::size_t k);

/// Upper-bound normalizer for cardinality k under the default truncation
/// rule. This is the value the training loss subtracts.
double log_normalizer_upper(const KernelParams& params, std::size_t k,
                            double tail_rel = 1e-3, std::size_t max_terms = 10000);

/// log density of the batch under the cardinality-B prior:
///   logdet L_Z - log_normalizer
/// as a differentiable scalar (gradient flows to z).
Node dpp_log_prior(Tape& tape, Node z, const KernelParams& params, double log_normalizer);

/// log(sum(exp(v))) guarded against empty / all -inf input.
double log_sum_exp(std::span<const double> v);

}  // namespace dppvae

#endif
