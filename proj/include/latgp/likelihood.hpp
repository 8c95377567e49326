#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "latgp/bccb.hpp"
#include "latgp/covariance.hpp"
#include "latgp/errors.hpp"
#include "latgp/rng.hpp"

namespace latgp {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Complete-data loglikelihood on the embedding lattice, dropping the
/// (N/2) log 2*pi constant:
///   -(N/2) log sigma2 - (1/2) sum log lambda_i - quad / (2 sigma2).
inline double complete_loglik(const FieldVector& z, const ParamSet& p,
                              const EigenSpectrum& spec) {
    if (static_cast<int>(z.size()) != spec.size())
        throw DimensionError("complete_loglik: field length mismatch");
    spec.require_positive();
    FieldVector centered(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) centered[i] = z[i] - p.mu;
    const double quad = inv_quad_form(spec, centered);
    const double N = static_cast<double>(spec.size());
    return -0.5 * N * std::log(p.sigma2) - 0.5 * logdet(spec) -
           quad / (2.0 * p.sigma2);
}

/// Sufficient statistics of the conjugate (mu, sigma2) update given the
/// correlation parameters.
struct KernelParts {
    double logdet_C = 0.0;
    double ones_quad = 0.0;  // 1' C^{-1} 1
    double S2 = 0.0;         // generalized sum of squares at mu_hat
    double mu_hat = 0.0;     // = sample mean, theta-free for BCCB matrices
    int N = 0;
};

inline KernelParts kernel_parts(const FieldVector& z, const EigenSpectrum& spec) {
    if (static_cast<int>(z.size()) != spec.size())
        throw DimensionError("kernel_parts: field length mismatch");
    spec.require_positive();
    KernelParts parts;
    parts.N = spec.size();
    parts.mu_hat = std::accumulate(z.begin(), z.end(), 0.0) / z.size();
    FieldVector centered(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) centered[i] = z[i] - parts.mu_hat;
    parts.S2 = inv_quad_form(spec, centered);
    parts.logdet_C = logdet(spec);
    parts.ones_quad = inv_quad_ones(spec);
    return parts;
}

/// Priors: proper long-tailed density on the range, uniform on the shape
/// over its support, uniform on the noise ratio when it is sampled, and
/// the Jeffreys factor on (mu, sigma2) handled inside the conjugate draw.
struct PriorSpec {
    CorrFamily family = CorrFamily::powered_exponential;
    bool c_free = false;
    double shape_max() const {
        return family == CorrFamily::powered_exponential ? 2.0 : 50.0;
    }
    double c_max = 10.0;
};

inline double log_prior(const ParamSet& p, const PriorSpec& prior) {
    if (!(p.lambda > 0.0)) return kNegInf;
    double lp = std::log(0.5) - 2.0 * std::log1p(0.5 * p.lambda);
    if (!(p.shape > 0.0 && p.shape <= prior.shape_max())) return kNegInf;
    lp -= std::log(prior.shape_max());
    if (prior.c_free) {
        if (!(p.c >= 0.0 && p.c <= prior.c_max)) return kNegInf;
        lp -= std::log(prior.c_max);
    } else if (p.c < 0.0) {
        return kNegInf;
    }
    return lp;
}

/// Marginal log-kernel of the correlation parameters given the complete
/// field, with (mu, sigma2) integrated out under the conjugate prior:
///   -1/2 log|C| - 1/2 log(1'C^{-1}1) - (N-1)/2 log S^2 + log prior.
/// Out-of-support or indefinite-embedding proposals return -inf so callers
/// can reject them outright.
struct ThetaKernel {
    double log_kernel = kNegInf;
    bool valid = false;
    EigenSpectrum spec;
    KernelParts parts;
};

inline ThetaKernel theta_log_kernel(const ParamSet& p, const FieldVector& z,
                                    const EmbeddingSpec& emb,
                                    const CorrelationModel& model,
                                    const PriorSpec& prior) {
    ThetaKernel out;
    const double lp = log_prior(p, prior);
    if (lp == kNegInf) return out;
    out.spec = eigenvalues(base_vector(emb, model, p), emb);
    if (!out.spec.positive()) return out;
    out.parts = kernel_parts(z, out.spec);
    out.log_kernel = -0.5 * out.parts.logdet_C - 0.5 * std::log(out.parts.ones_quad) -
                     0.5 * (out.parts.N - 1) * std::log(out.parts.S2) + lp;
    out.valid = true;
    return out;
}

/// Conjugate block draw: sigma2 from its inverse-gamma full conditional,
/// then mu normal given sigma2.
inline std::pair<double, double> draw_sigma2_mu(const KernelParts& parts,
                                                RandomStream& rng) {
    const double sigma2 = rng.inverse_gamma(0.5 * (parts.N - 1), 0.5 * parts.S2);
    const double mu = rng.normal(parts.mu_hat, std::sqrt(sigma2 / parts.ones_quad));
    return {sigma2, mu};
}

inline std::pair<double, double> draw_sigma2_mu(const FieldVector& z,
                                                const EigenSpectrum& spec,
                                                RandomStream& rng) {
    return draw_sigma2_mu(kernel_parts(z, spec), rng);
}

/// Exact Gaussian loglikelihood of the observed data under the raw
/// (unperiodized) correlation, constants included. O(n^3); this is the
/// estimation target the embedding approximates, and the shared yardstick
/// for comparing estimates across methods.
inline double dense_loglik(const FieldVector& z_o,
                           const std::vector<std::pair<double, double>>& coords,
                           const ParamSet& p, CorrFamily family,
                           std::size_t dense_guard = 12000) {
    const std::size_t n = z_o.size();
    if (n != coords.size()) throw DimensionError("dense_loglik: coords length mismatch");
    if (n > dense_guard)
        throw ConfigError("dense_loglik: n exceeds the dense-solver guard");
    Eigen::MatrixXd corr(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            const double h = std::hypot(coords[i].first - coords[j].first,
                                        coords[i].second - coords[j].second);
            const double v = raw_corr(family, h, p);
            corr(i, j) = v;
            corr(j, i) = v;
        }
    }
    Eigen::LLT<Eigen::MatrixXd> llt(corr);
    if (llt.info() != Eigen::Success)
        throw NotPositiveDefiniteError("dense correlation matrix is not positive definite");
    Eigen::VectorXd resid(n);
    for (std::size_t i = 0; i < n; ++i) resid[i] = z_o[i] - p.mu;
    const double quad = resid.dot(llt.solve(resid));
    const double half_logdet =
        llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double nn = static_cast<double>(n);
    return -0.5 * nn * std::log(2.0 * M_PI * p.sigma2) - half_logdet -
           quad / (2.0 * p.sigma2);
}

/// Monte Carlo profile objective for the correlation parameters: both the
/// mean and the variance are maximized out analytically, the expected sum
/// of squares estimated by averaging over conditional simulations.
struct ProfileQp {
    double Qp = kNegInf;
    double sigma2_hat = 0.0;
    double mu_hat = 0.0;
    bool valid = false;
};

/// theta-independent compression of the E-step draws: the mean power
/// spectrum of the centered fields. Any Qp(theta) evaluation then costs one
/// base-vector transform plus an O(N) sum.
class QpEvaluator {
public:
    QpEvaluator(const std::vector<FieldVector>& sims, const FieldVector& mu_tilde,
                const EmbeddingSpec& emb, const CorrelationModel& model)
        : emb_(emb), model_(model) {
        if (sims.empty()) throw ConfigError("QpEvaluator: needs at least one simulation");
        const std::size_t N = sims.front().size();
        if (mu_tilde.size() != N)
            throw DimensionError("QpEvaluator: conditional-mean length mismatch");
        mu_hat_ = std::accumulate(mu_tilde.begin(), mu_tilde.end(), 0.0) / N;
        mean_power_.assign(N, 0.0);
        auto fft = fft_plan(emb.N1, emb.N2);
        ComplexField buf(N);
        for (const FieldVector& sim : sims) {
            if (sim.size() != N) throw DimensionError("QpEvaluator: field length mismatch");
            for (std::size_t k = 0; k < N; ++k) buf[k] = sim[k] - mu_hat_;
            fft->forward(buf);
            for (std::size_t k = 0; k < N; ++k) mean_power_[k] += std::norm(buf[k]);
        }
        const double scale = 1.0 / (static_cast<double>(sims.size()) * N);
        for (double& v : mean_power_) v *= scale;
    }

    double mu_hat() const { return mu_hat_; }

    ProfileQp eval(const ParamSet& p_theta) const {
        ProfileQp out;
        out.mu_hat = mu_hat_;
        EigenSpectrum spec = eigenvalues(base_vector(emb_, model_, p_theta), emb_);
        if (!spec.positive()) return out;
        double S2 = 0.0;
        for (std::size_t k = 0; k < mean_power_.size(); ++k)
            S2 += mean_power_[k] / spec.values[k];
        const double N = static_cast<double>(spec.size());
        out.sigma2_hat = S2 / N;
        out.Qp = -0.5 * N * std::log(out.sigma2_hat) - 0.5 * logdet(spec);
        out.valid = true;
        return out;
    }

private:
    EmbeddingSpec emb_;
    CorrelationModel model_;
    double mu_hat_ = 0.0;
    std::vector<double> mean_power_;
};

inline ProfileQp profile_Qp(const ParamSet& p_theta, const std::vector<FieldVector>& sims,
                            const FieldVector& mu_tilde, const EmbeddingSpec& emb,
                            const CorrelationModel& model) {
    ProfileQp out;
    if (sims.empty()) throw ConfigError("profile_Qp: needs at least one simulation");
    const std::size_t N = sims.front().size();
    out.mu_hat = std::accumulate(mu_tilde.begin(), mu_tilde.end(), 0.0) / N;
    EigenSpectrum spec = eigenvalues(base_vector(emb, model, p_theta), emb);
    if (!spec.positive()) return out;
    double S2_sum = 0.0;
    FieldVector centered(N);
    for (const FieldVector& sim : sims) {
        for (std::size_t k = 0; k < N; ++k) centered[k] = sim[k] - out.mu_hat;
        S2_sum += inv_quad_form(spec, centered);
    }
    const double S2 = S2_sum / sims.size();
    out.sigma2_hat = S2 / static_cast<double>(N);
    out.Qp = -0.5 * static_cast<double>(N) * std::log(out.sigma2_hat) -
             0.5 * logdet(spec);
    out.valid = true;
    return out;
}

}  // namespace latgp
