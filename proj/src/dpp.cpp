#include "dppvae/dpp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <set>
#include <string>

#include "dppvae/errors.hpp"

namespace dppvae {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kPi = 3.14159265358979323846;

struct PerDim {
    double lead;   // first eigen-factor, n_d = 1
    double decay;  // geometric ratio in (0,1)
    double beta;
    double gamma;
};

PerDim per_dim_factors(double rho, double sigma) {
    const double a = 1.0 / (2.0 * rho);
    const double b = 1.0 / (2.0 * sigma);
    const double c = std::sqrt(a * a + 2.0 * a * b);
    const double s = a + b + c;
    PerDim p;
    p.decay = b / s;
    p.lead = std::sqrt(2.0 * a / s) / std::sqrt(kPi * rho);
    p.gamma = sigma / rho;
    p.beta = std::pow(1.0 + 2.0 / p.gamma, 0.25);
    return p;
}

}  // namespace

void KernelParams::validate() const {
    if (rho.size() != sigma.size() || rho.empty())
        throw InvalidParams("kernel params need matching non-empty rho/sigma");
    if (!(alpha > 0.0) || !std::isfinite(alpha))
        throw InvalidParams("alpha must be positive and finite");
    for (double r : rho)
        if (!(r > 0.0) || !std::isfinite(r)) throw InvalidParams("rho entries must be positive");
    for (double s : sigma)
        if (!(s > 0.0) || !std::isfinite(s)) throw InvalidParams("sigma entries must be positive");
}

KernelParams KernelParams::isotropic(double alpha, double rho, double sigma, std::size_t dim) {
    KernelParams p;
    p.alpha = alpha;
    p.rho.assign(dim, rho);
    p.sigma.assign(dim, sigma);
    p.validate();
    return p;
}

double quality(std::span<const double> x, const KernelParams& params) {
    if (x.size() != params.dim()) throw ShapeMismatch("quality: point dimension mismatch");
    double log_q = 0.5 * std::log(params.alpha);
    for (std::size_t d = 0; d < x.size(); ++d)
        log_q += -0.5 * std::log(kPi * params.rho[d]) - x[d] * x[d] / (2.0 * params.rho[d]);
    return std::exp(log_q);
}

double similarity(std::span<const double> x, std::span<const double> y,
                  const KernelParams& params) {
    if (x.size() != params.dim() || y.size() != params.dim())
        throw ShapeMismatch("similarity: point dimension mismatch");
    double e = 0.0;
    for (std::size_t d = 0; d < x.size(); ++d) {
        const double diff = x[d] - y[d];
        e -= diff * diff / (2.0 * params.sigma[d]);
    }
    return std::exp(e);
}

namespace {

// log L_nm as a tape node; exp of it is the kernel matrix proper.
Node log_kernel_matrix(Tape& tape, Node z, const KernelParams& params) {
    params.validate();
    const Matrix& zv = z.value();
    const std::size_t batch = zv.rows, dim = zv.cols;
    if (dim != params.dim()) throw ShapeMismatch("build_kernel_matrix: latent dim mismatch");
    if (batch < 1) throw ShapeMismatch("build_kernel_matrix: empty batch");

    // log L_nm = log q_n + log q_m - sum_d (z_nd - z_md)^2 / (2 sigma_d);
    // the weighted squared distance expands through row norms and a Gram
    // product so everything stays in matrix ops the tape can differentiate.
    std::vector<double> inv_two_rho(dim), inv_sqrt_sigma(dim);
    for (std::size_t d = 0; d < dim; ++d) {
        inv_two_rho[d] = 1.0 / (2.0 * params.rho[d]);
        inv_sqrt_sigma[d] = 1.0 / std::sqrt(params.sigma[d]);
    }
    double log_q0 = 0.5 * std::log(params.alpha);
    for (std::size_t d = 0; d < dim; ++d) log_q0 -= 0.5 * std::log(kPi * params.rho[d]);

    Node rho_row = tape.constant(Matrix::row_vector(inv_two_rho));
    Node log_q = add(scale(row_sums(mul(square(z), broadcast_row(rho_row, batch))), -1.0),
                     tape.constant(Matrix(batch, 1, log_q0)));

    Node sig_row = tape.constant(Matrix::row_vector(inv_sqrt_sigma));
    Node u = mul(z, broadcast_row(sig_row, batch));   // scaled coordinates
    Node gram = matmul(u, transpose(u));
    Node sq_norms = row_sums(square(u));              // B x 1

    Node ones_row = tape.constant(Matrix(1, batch, 1.0));
    Node norms_as_rows = matmul(sq_norms, ones_row);            // r_n over columns
    Node norms_as_cols = transpose(norms_as_rows);              // r_m over rows
    Node wdist = scale(add(norms_as_rows, norms_as_cols) - scale(gram, 2.0), 0.5);

    Node logq_rows = matmul(log_q, ones_row);
    Node logq_cols = transpose(logq_rows);
    return sub(add(logq_rows, logq_cols), wdist);
}

}  // namespace

Node build_kernel_matrix(Tape& tape, Node z, const KernelParams& params) {
    return exp(log_kernel_matrix(tape, z, params));
}

Spectrum continuous_spectrum(const KernelParams& params, std::size_t m) {
    params.validate();
    if (m < 1) throw InvalidParams("continuous_spectrum: m must be >= 1");
    const std::size_t dim = params.dim();

    Spectrum sp;
    sp.beta.resize(dim);
    sp.gamma.resize(dim);
    sp.lead.resize(dim);
    sp.decay.resize(dim);
    std::vector<double> log_lead(dim), log_decay(dim);
    double log_alpha = std::log(params.alpha);
    double log_first = log_alpha;
    sp.operator_trace = params.alpha;
    for (std::size_t d = 0; d < dim; ++d) {
        const PerDim p = per_dim_factors(params.rho[d], params.sigma[d]);
        sp.beta[d] = p.beta;
        sp.gamma[d] = p.gamma;
        sp.lead[d] = p.lead;
        sp.decay[d] = p.decay;
        log_lead[d] = std::log(p.lead);
        log_decay[d] = std::log(p.decay);
        log_first += log_lead[d];
        sp.operator_trace *= p.lead / (1.0 - p.decay);  // per-dim geometric series
    }

    auto log_lambda = [&](const std::vector<int>& n) {
        double v = log_first;
        for (std::size_t d = 0; d < dim; ++d) v += (n[d] - 1) * log_decay[d];
        return v;
    };

    // Best-first lattice walk: pop the largest eigenvalue, push the D
    // successors that increment one coordinate. Ordering key is
    // (-log lambda, multi-index) so value ties break lexicographically.
    using Entry = std::pair<double, std::vector<int>>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> frontier;
    std::set<std::vector<int>> seen;
    std::vector<int> start(dim, 1);
    frontier.emplace(-log_lambda(start), start);
    seen.insert(start);

    while (!frontier.empty() && sp.eigenvalues.size() < m) {
        auto [neg_ll, idx] = frontier.top();
        frontier.pop();
        sp.eigenvalues.push_back(std::exp(-neg_ll));
        sp.multi_indices.push_back(idx);
        for (std::size_t d = 0; d < dim; ++d) {
            std::vector<int> nxt = idx;
            ++nxt[d];
            if (seen.insert(nxt).second) frontier.emplace(-log_lambda(nxt), nxt);
        }
    }
    return sp;
}

Spectrum truncate_spectrum(const KernelParams& params, double tail_rel, std::size_t max_terms) {
    // Growing enumeration until the tail target is hit; the work is
    // dominated by the final pass.
    std::size_t m = 64;
    for (;;) {
        m = std::min(m, max_terms);
        Spectrum sp = continuous_spectrum(params, m);
        double sum = 0.0;
        for (std::size_t i = 0; i < sp.eigenvalues.size(); ++i) {
            sum += sp.eigenvalues[i];
            if (sp.operator_trace - sum < tail_rel * sp.operator_trace) {
                sp.eigenvalues.resize(i + 1);
                sp.multi_indices.resize(i + 1);
                return sp;
            }
        }
        if (m >= max_terms) return sp;
        m *= 4;
    }
}

ESPTable esp(std::span<const double> log_lambdas, std::size_t k) {
    ESPTable table;
    table.k = k;
    table.m_used = log_lambdas.size();
    table.log_values.assign(k + 1, kNegInf);
    table.log_values[0] = 0.0;
    for (std::size_t n = 0; n < log_lambdas.size(); ++n) {
        const double ll = log_lambdas[n];
        const std::size_t top = std::min(n + 1, k);
        for (std::size_t j = top; j >= 1; --j) {
            const double with = ll + table.log_values[j - 1];
            const double without = table.log_values[j];
            if (without == kNegInf)
                table.log_values[j] = with;
            else if (with == kNegInf)
                table.log_values[j] = without;
            else {
                const double hi = std::max(with, without);
                table.log_values[j] = hi + std::log1p(std::exp(std::min(with, without) - hi));
            }
        }
    }
    return table;
}

double log_sum_exp(std::span<const double> v) {
    double hi = kNegInf;
    for (double x : v) hi = std::max(hi, x);
    if (hi == kNegInf) return kNegInf;
    double s = 0.0;
    for (double x : v) s += std::exp(x - hi);
    return hi + std::log(s);
}

NormalizerBound normalizer_bounds(const Spectrum& spectrum, std::size_t k) {
    double sum = 0.0;
    std::vector<double> log_lams(spectrum.eigenvalues.size());
    for (std::size_t i = 0; i < spectrum.eigenvalues.size(); ++i) {
        sum += spectrum.eigenvalues[i];
        log_lams[i] = std::log(spectrum.eigenvalues[i]);
    }
    double tail = spectrum.operator_trace - sum;
    if (tail < -1e-12 * std::max(spectrum.operator_trace, 1.0))
        throw NegativeTail("partial eigenvalue sum exceeds the operator trace by " +
                           std::to_string(-tail));
    tail = std::max(tail, 0.0);
    const double log_tail = tail > 0.0 ? std::log(tail) : kNegInf;

    const ESPTable table = esp(log_lams, k);
    NormalizerBound out;
    out.m_used = spectrum.eigenvalues.size();
    out.log_lower = table.log_values[k];

    std::vector<double> terms;
    terms.reserve(k + 1);
    for (std::size_t j = 0; j <= k; ++j) {
        const double le = table.log_values[k - j];
        if (le == kNegInf) continue;
        if (j > 0 && log_tail == kNegInf) continue;
        const double lt = j > 0 ? static_cast<double>(j) * log_tail : 0.0;
        terms.push_back(lt - std::lgamma(static_cast<double>(j) + 1.0) + le);
    }
    out.log_upper = log_sum_exp(terms);
    return out;
}

double log_normalizer_upper(const KernelParams& params, std::size_t k, double tail_rel,
                            std::size_t max_terms) {
    const Spectrum sp = truncate_spectrum(params, tail_rel, max_terms);
    return normalizer_bounds(sp, k).log_upper;
}

Node dpp_log_prior(Tape& tape, Node z, const KernelParams& params, double log_normalizer) {
    // logdet L = B*c + logdet(e^{-c} L) with c the largest log-diagonal: an
    // exact identity (the two c-dependent terms cancel in the gradient) that
    // keeps the factored matrix at unit scale, so collapsing batches hit the
    // jitter path instead of underflowing the Cholesky.
    Node log_kernel = log_kernel_matrix(tape, z, params);
    const Matrix& lk = log_kernel.value();
    const std::size_t batch = lk.rows;
    double shift = lk(0, 0);
    for (std::size_t i = 1; i < batch; ++i) shift = std::max(shift, lk(i, i));
    Node scaled = exp(sub(log_kernel, tape.constant(Matrix(batch, batch, shift))));
    Node ld = add(logdet_spd(scaled),
                  tape.constant(Matrix(1, 1, static_cast<double>(batch) * shift)));
    return sub(ld, tape.constant(Matrix(1, 1, log_normalizer)));
}

}  // namespace dppvae
