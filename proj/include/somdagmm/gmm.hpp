#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "errors.hpp"
#include "matrix.hpp"

namespace somdagmm {

/// Mixture parameters estimated from a batch of soft memberships.
struct GmmParams {
    std::vector<double> phi;     // K mixture probabilities
    Matrix mu;                   // K × D
    std::vector<Matrix> sigma;   // K matrices, D × D

    std::size_t components() const noexcept { return phi.size(); }
    std::size_t dim() const noexcept { return mu.cols(); }
};

/// A component whose total membership falls below this is degenerate.
inline constexpr double kDegenerateMass = 1e-12;

/// Batch GMM estimation from memberships `gamma` (N × K) and latents `z`
/// (N × D). Degenerate components get the batch mean and eps·I.
inline GmmParams estimate_gmm(const Matrix& gamma, const Matrix& z, double eps = 1e-6) {
    const std::size_t n = gamma.rows(), k = gamma.cols(), d = z.cols();
    if (n == 0) throw InvalidArgument("estimate_gmm: empty batch");
    if (z.rows() != n) throw DimensionMismatch("estimate_gmm: gamma and z row counts differ");
    if (k == 0) throw InvalidArgument("estimate_gmm: no components");

    GmmParams g;
    g.phi.assign(k, 0.0);
    g.mu = Matrix(k, d);
    g.sigma.assign(k, Matrix(d, d));

    std::vector<double> batch_mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < d; ++a) batch_mean[a] += z(i, a);
    for (double& v : batch_mean) v /= static_cast<double>(n);

    std::vector<double> diff(d);
    for (std::size_t c = 0; c < k; ++c) {
        double mass = 0.0;
        for (std::size_t i = 0; i < n; ++i) mass += gamma(i, c);
        g.phi[c] = mass / static_cast<double>(n);
        if (mass < kDegenerateMass) {
            for (std::size_t a = 0; a < d; ++a) {
                g.mu(c, a) = batch_mean[a];
                g.sigma[c](a, a) = eps;
            }
            continue;
        }
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t a = 0; a < d; ++a) g.mu(c, a) += gamma(i, c) * z(i, a);
        for (std::size_t a = 0; a < d; ++a) g.mu(c, a) /= mass;

        Matrix& s = g.sigma[c];
        for (std::size_t i = 0; i < n; ++i) {
            const double w = gamma(i, c);
            for (std::size_t a = 0; a < d; ++a) diff[a] = z(i, a) - g.mu(c, a);
            for (std::size_t a = 0; a < d; ++a)
                for (std::size_t b = 0; b <= a; ++b) s(a, b) += w * diff[a] * diff[b];
        }
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b <= a; ++b) {
                s(a, b) /= mass;
                s(b, a) = s(a, b);
            }
    }
    return g;
}

/// Adjoints of estimate_gmm's inputs given adjoints of its outputs.
/// `g_sigma[k]` may be any D×D matrix; only its symmetric part matters.
inline void estimate_gmm_backward(const Matrix& gamma, const Matrix& z, const GmmParams& g,
                                  std::span<const double> g_phi, const Matrix& g_mu,
                                  const std::vector<Matrix>& g_sigma, Matrix& g_gamma, Matrix& g_z) {
    const std::size_t n = gamma.rows(), k = gamma.cols(), d = z.cols();
    const double inv_n = 1.0 / static_cast<double>(n);
    std::vector<double> diff(d), gs_diff(d);
    for (std::size_t c = 0; c < k; ++c) {
        double mass = 0.0;
        for (std::size_t i = 0; i < n; ++i) mass += gamma(i, c);
        for (std::size_t i = 0; i < n; ++i) g_gamma(i, c) += g_phi[c] * inv_n;
        if (mass < kDegenerateMass) {
            // mu is the batch mean, sigma is constant.
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t a = 0; a < d; ++a) g_z(i, a) += g_mu(c, a) * inv_n;
            continue;
        }
        Matrix gs(d, d);
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b)
                gs(a, b) = 0.5 * (g_sigma[c](a, b) + g_sigma[c](b, a));
        double gs_dot_sigma = 0.0;
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) gs_dot_sigma += gs(a, b) * g.sigma[c](a, b);

        for (std::size_t i = 0; i < n; ++i) {
            const double w = gamma(i, c);
            for (std::size_t a = 0; a < d; ++a) diff[a] = z(i, a) - g.mu(c, a);
            double quad = 0.0, mu_term = 0.0;
            for (std::size_t a = 0; a < d; ++a) {
                double v = 0.0;
                for (std::size_t b = 0; b < d; ++b) v += gs(a, b) * diff[b];
                gs_diff[a] = v;
                quad += diff[a] * v;
                mu_term += g_mu(c, a) * diff[a];
            }
            g_gamma(i, c) += (mu_term + quad - gs_dot_sigma) / mass;
            const double scale = w / mass;
            for (std::size_t a = 0; a < d; ++a)
                g_z(i, a) += scale * (g_mu(c, a) + 2.0 * gs_diff[a]);
        }
    }
}

/// Cached Cholesky factors of Σ_k + eps·I for repeated energy evaluation.
class GmmScorer {
public:
    GmmScorer(const GmmParams& g, double eps) : gmm_(&g), eps_(eps) {
        const std::size_t k = g.components(), d = g.dim();
        if (g.mu.rows() != k || g.sigma.size() != k)
            throw DimensionMismatch("GmmScorer: inconsistent component counts");
        bool any_mass = false;
        for (double p : g.phi) {
            if (!(p >= 0.0)) throw InvalidArgument("GmmScorer: negative mixture probability");
            any_mass = any_mass || p > 0.0;
        }
        if (!any_mass) throw InvalidArgument("energy: invalid gmm, all mixture probabilities are zero");
        const double log_2pi = std::log(2.0 * std::numbers::pi);
        factors_.reserve(k);
        log_norm_.reserve(k);
        for (std::size_t c = 0; c < k; ++c) {
            const Matrix& s = g.sigma[c];
            if (s.rows() != d || s.cols() != d) throw DimensionMismatch("GmmScorer: covariance shape");
            Matrix sym(d, d);
            for (std::size_t a = 0; a < d; ++a)
                for (std::size_t b = 0; b < d; ++b) sym(a, b) = 0.5 * (s(a, b) + s(b, a));
            factors_.push_back(regularized_cholesky(sym, eps, c));
            log_norm_.push_back(-0.5 * (static_cast<double>(d) * log_2pi + cholesky_log_det(factors_.back())));
        }
    }

    const GmmParams& gmm() const noexcept { return *gmm_; }
    double eps() const noexcept { return eps_; }
    const Matrix& factor(std::size_t c) const { return factors_[c]; }

    /// log N(z | μ_k, Σ_k + eps·I) for every component.
    std::vector<double> component_log_densities(std::span<const double> z) const {
        const std::size_t k = gmm_->components(), d = gmm_->dim();
        if (z.size() != d)
            throw DimensionMismatch("energy: z has dimension " + std::to_string(z.size()) +
                                    ", gmm has " + std::to_string(d));
        std::vector<double> out(k), diff(d);
        for (std::size_t c = 0; c < k; ++c) {
            for (std::size_t a = 0; a < d; ++a) diff[a] = z[a] - gmm_->mu(c, a);
            forward_substitute(factors_[c], diff);
            out[c] = log_norm_[c] - 0.5 * squared_norm(diff);
        }
        return out;
    }

    double energy(std::span<const double> z) const {
        auto terms = component_log_densities(z);
        for (std::size_t c = 0; c < terms.size(); ++c)
            terms[c] += gmm_->phi[c] > 0.0 ? std::log(gmm_->phi[c])
                                            : -std::numeric_limits<double>::infinity();
        return -log_sum_exp(terms);
    }

private:
    const GmmParams* gmm_;
    double eps_;
    std::vector<Matrix> factors_;
    std::vector<double> log_norm_;
};

/// Sample energy: negative log-likelihood of z under the (eps-regularized) GMM.
inline double energy(std::span<const double> z, const GmmParams& g, double eps) {
    return GmmScorer(g, eps).energy(z);
}

/// Energies for every row of z (N × D).
inline std::vector<double> energies(const Matrix& z, const GmmParams& g, double eps) {
    const GmmScorer scorer(g, eps);
    std::vector<double> out(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) out[i] = scorer.energy(z.row(i));
    return out;
}

/// Adjoints of Σ_i g_e[i]·E(z_i) with respect to z, phi, mu and sigma,
/// accumulated into the given outputs.
inline void energies_backward(const Matrix& z, const GmmParams& g, double eps, std::span<const double> g_e,
                              Matrix& g_z, std::vector<double>& g_phi, Matrix& g_mu,
                              std::vector<Matrix>& g_sigma) {
    const GmmScorer scorer(g, eps);
    const std::size_t k = g.components(), d = g.dim();
    std::vector<Matrix> inverses;
    inverses.reserve(k);
    for (std::size_t c = 0; c < k; ++c) inverses.push_back(cholesky_inverse(scorer.factor(c)));

    std::vector<double> diff(d);
    for (std::size_t i = 0; i < z.rows(); ++i) {
        if (g_e[i] == 0.0) continue;
        const auto log_dens = scorer.component_log_densities(z.row(i));
        std::vector<double> terms(k);
        for (std::size_t c = 0; c < k; ++c)
            terms[c] = log_dens[c] + (g.phi[c] > 0.0 ? std::log(g.phi[c])
                                                      : -std::numeric_limits<double>::infinity());
        const double lse = log_sum_exp(terms);
        for (std::size_t c = 0; c < k; ++c) {
            // ∂E/∂φ_k = -N_k / Σ_j φ_j N_j, finite even when φ_k = 0.
            g_phi[c] -= g_e[i] * std::exp(log_dens[c] - lse);
            const double w = std::exp(terms[c] - lse);
            if (w == 0.0) continue;
            for (std::size_t a = 0; a < d; ++a) diff[a] = z(i, a) - g.mu(c, a);
            const auto alpha = cholesky_solve(scorer.factor(c), diff);
            const double s = g_e[i] * w;
            for (std::size_t a = 0; a < d; ++a) {
                g_z(i, a) += s * alpha[a];
                g_mu(c, a) -= s * alpha[a];
            }
            const Matrix& inv = inverses[c];
            for (std::size_t a = 0; a < d; ++a)
                for (std::size_t b = 0; b < d; ++b)
                    g_sigma[c](a, b) += 0.5 * s * (inv(a, b) - alpha[a] * alpha[b]);
        }
    }
}

/// Covariance penalty: Σ_k Σ_j 1 / (Σ_k[j][j] + eps).
inline double cov_penalty(const GmmParams& g, double eps = 0.0) {
    double p = 0.0;
    for (std::size_t c = 0; c < g.sigma.size(); ++c) {
        const Matrix& s = g.sigma[c];
        for (std::size_t j = 0; j < s.rows(); ++j) {
            const double diag = s(j, j) + eps;
            if (diag == 0.0)
                throw SingularMatrix("cov_penalty: zero covariance diagonal overflows", c);
            p += 1.0 / diag;
        }
    }
    if (!std::isfinite(p)) throw SingularMatrix("cov_penalty: overflow", 0);
    return p;
}

inline void cov_penalty_backward(const GmmParams& g, double eps, double g_p, std::vector<Matrix>& g_sigma) {
    for (std::size_t c = 0; c < g.sigma.size(); ++c) {
        const Matrix& s = g.sigma[c];
        for (std::size_t j = 0; j < s.rows(); ++j) {
            const double diag = s(j, j) + eps;
            g_sigma[c](j, j) -= g_p / (diag * diag);
        }
    }
}

}  // namespace somdagmm
