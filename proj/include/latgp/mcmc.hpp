#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "latgp/bccb.hpp"
#include "latgp/covariance.hpp"
#include "latgp/errors.hpp"
#include "latgp/lattice.hpp"
#include "latgp/likelihood.hpp"
#include "latgp/optimize.hpp"
#include "latgp/rng.hpp"
#include "latgp/simulate.hpp"
#include "latgp/solver.hpp"

namespace latgp {

/// Which correlation parameters are estimated. Fixed components keep their
/// initial values through every update.
struct FitFlags {
    bool lambda_free = true;
    bool shape_free = true;
    bool c_free = false;
    /// Bounded shapes propose/optimize on a logit scale by default; turning
    /// this off falls back to a pure lognormal step with prior rejection
    /// above the support.
    bool logit_shape = true;

    ThetaSpace space(CorrFamily family) const {
        return ThetaSpace::build(family, lambda_free, shape_free, c_free, logit_shape);
    }
};

enum class PrecondKind { vecchia, inv_block, none };

struct McmcConfig {
    int iterations = 2500;
    int burn_in = 500;
    double target_accept = 0.35;
    std::vector<double> proposal_sds;  // per free coordinate; empty = 0.15 each
    PcgConfig pcg{1e-5, 0};
    std::uint64_t seed = 1;
    FitFlags fit;
    PrecondKind precond = PrecondKind::vecchia;
    int pred_size = 4;
    int cond_size = 52;
    /// Rebuild the preconditioner when the range drifts this far (relative)
    /// from the value it was built at; any s.p.d. preconditioner keeps the
    /// solves exact, freshness only affects iteration counts.
    double precond_refresh_rel = 0.25;
    int snapshots = 3;
    std::optional<ParamSet> init;
};

struct ParamDraw {
    double mu = 0.0;
    double sigma2 = 0.0;
    double lambda = 0.0;
    double shape = 0.0;
    double c = 0.0;
    bool accepted = false;
    int pcg_iters = 0;
};

struct Chain {
    std::vector<ParamDraw> draws;  // post burn-in
    double accept_rate = 0.0;
    FieldVector field_mean;  // posterior mean of the imputed field
    FieldVector field_sd;    // posterior sd (exactly 0 at observed sites)
    std::vector<FieldVector> field_snapshots;
    long total_pcg_iters = 0;
    int solver_warnings = 0;
    double wall_seconds = 0.0;
};

/// Method-of-moments starting point: sample mean and variance plus a range
/// read off the lag-1 empirical correlation of adjacent observed sites.
inline ParamSet initial_params(const FieldVector& z_o, const ObservationMask& mask,
                               const EmbeddingSpec& emb, CorrFamily family,
                               double c_init) {
    if (mask.n < 3) throw InitializationError("need at least 3 observations");
    double mean = 0.0;
    for (double v : z_o) mean += v;
    mean /= mask.n;
    double var = 0.0;
    for (double v : z_o) var += (v - mean) * (v - mean);
    var /= (mask.n - 1);
    if (!(var > 0.0)) throw InitializationError("observed data are constant");

    const int n1 = emb.base.n1, n2 = emb.base.n2;
    std::vector<double> val(static_cast<std::size_t>(n1) * n2, 0.0);
    std::vector<char> obs(static_cast<std::size_t>(n1) * n2, 0);
    for (int i = 0; i < mask.n; ++i) {
        const int r = mask.observed[i] / emb.N2, c = mask.observed[i] % emb.N2;
        val[r * n2 + c] = z_o[i];
        obs[r * n2 + c] = 1;
    }
    double acc = 0.0;
    long pairs = 0;
    for (int i = 0; i < n1; ++i)
        for (int j = 0; j < n2; ++j) {
            if (!obs[i * n2 + j]) continue;
            if (j + 1 < n2 && obs[i * n2 + j + 1]) {
                acc += (val[i * n2 + j] - mean) * (val[i * n2 + j + 1] - mean);
                ++pairs;
            }
            if (i + 1 < n1 && obs[(i + 1) * n2 + j]) {
                acc += (val[i * n2 + j] - mean) * (val[(i + 1) * n2 + j] - mean);
                ++pairs;
            }
        }
    double rho1 = pairs > 0 ? (acc / pairs) / var : 0.5;
    rho1 = std::clamp(rho1, 0.02, 0.98);
    ParamSet p;
    p.mu = mean;
    p.c = c_init;
    p.sigma2 = var / (1.0 + c_init);
    p.lambda = -emb.delta() / std::log(rho1);
    p.shape = family == CorrFamily::powered_exponential ? 1.0 : 0.5;
    return p;
}

/// Robbins-Monro step on a global log proposal scale, drifting the realized
/// acceptance toward the target. Applied during burn-in only.
inline double adapt_log_scale(double log_scale, bool accepted, int step, double target) {
    const double gamma = 1.0 / std::pow(step + 1.0, 0.6);
    return log_scale + gamma * ((accepted ? 1.0 : 0.0) - target);
}

/// Replays an acceptance history through the Robbins-Monro recursion and
/// returns the rescaled proposal deviations.
inline std::vector<double> adapt_proposal(const std::vector<char>& history,
                                          double target, std::vector<double> sds) {
    double ls = 0.0;
    for (std::size_t t = 0; t < history.size(); ++t)
        ls = adapt_log_scale(ls, history[t] != 0, static_cast<int>(t), target);
    for (double& s : sds) s *= std::exp(ls);
    return sds;
}

struct BlockUpdate {
    ParamSet params;
    bool accepted = false;
    EigenSpectrum spec;  // spectrum at the (possibly new) correlation params
};

/// Metropolis-Hastings block update of all parameters given the complete
/// field: propose the correlation parameters in transformed coordinates,
/// accept against the marginal kernel, then refresh (sigma2, mu) from their
/// closed-form conditionals.
inline BlockUpdate param_block_update(const FieldVector& z, const ParamSet& curr,
                                      double kernel_curr, const ThetaSpace& ts,
                                      const std::vector<double>& sds, double log_scale,
                                      const EmbeddingSpec& emb,
                                      const CorrelationModel& model,
                                      const PriorSpec& prior, RandomStream& rng) {
    std::vector<double> x = ts.to_vec(curr);
    const double scale = std::exp(log_scale);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += scale * sds[i] * rng.normal();
    ParamSet proposal = ts.from_vec(x, curr);

    ThetaKernel kern = theta_log_kernel(proposal, z, emb, model, prior);
    BlockUpdate out;
    out.params = curr;
    if (kern.valid) {
        const double log_accept = kern.log_kernel - kernel_curr +
                                  ts.log_jacobian(curr) - ts.log_jacobian(proposal);
        if (std::log(rng.uniform()) < log_accept) {
            auto [sigma2, mu] = draw_sigma2_mu(kern.parts, rng);
            out.params = proposal;
            out.params.sigma2 = sigma2;
            out.params.mu = mu;
            out.accepted = true;
            out.spec = std::move(kern.spec);
        }
    }
    return out;
}

/// Two-sample mean comparison between an early and a late chain segment,
/// standardized with batch-means variance estimates.
inline double geweke_z(const std::vector<double>& series, double first_frac = 0.1,
                       double last_frac = 0.5) {
    const std::size_t n = series.size();
    if (n < 40) throw ConfigError("geweke_z: series too short");
    auto segment_stats = [&](std::size_t begin, std::size_t end) {
        const std::size_t len = end - begin;
        const std::size_t nb = std::max<std::size_t>(4, std::size_t(std::sqrt(double(len))));
        const std::size_t bs = len / nb;
        double mean = 0.0;
        for (std::size_t i = begin; i < end; ++i) mean += series[i];
        mean /= len;
        double var_batch = 0.0;
        for (std::size_t b = 0; b < nb; ++b) {
            double bm = 0.0;
            for (std::size_t i = 0; i < bs; ++i) bm += series[begin + b * bs + i];
            bm /= bs;
            var_batch += (bm - mean) * (bm - mean);
        }
        var_batch /= (nb - 1);
        return std::pair<double, double>{mean, var_batch / nb};  // mean, var of mean
    };
    auto [m1, v1] = segment_stats(0, std::size_t(first_frac * n));
    auto [m2, v2] = segment_stats(n - std::size_t(last_frac * n), n);
    return (m1 - m2) / std::sqrt(v1 + v2);
}

/// Two-block Gibbs sampler: conditional-simulation imputation of the
/// unobserved lattice alternating with the parameter block update.
inline Chain gibbs_run(const FieldVector& z_o, const ObservationMask& mask,
                       const EmbeddingSpec& emb, const CorrelationModel& model,
                       const PriorSpec& prior, const McmcConfig& cfg) {
    const auto t_start = std::chrono::steady_clock::now();
    if (cfg.burn_in >= cfg.iterations)
        throw ConfigError("burn_in must be smaller than iterations");

    ParamSet params = cfg.init ? *cfg.init
                               : initial_params(z_o, mask, emb, model.family,
                                                cfg.init ? cfg.init->c : 0.01);
    EigenSpectrum spec = eigenvalues(base_vector(emb, model, params), emb);
    if (!spec.positive())
        throw InitializationError("initial parameters give an indefinite embedding");

    const ThetaSpace ts = cfg.fit.space(model.family);
    std::vector<double> sds = cfg.proposal_sds;
    if (sds.empty()) sds.assign(ts.dim(), 0.15);
    if (sds.size() != ts.dim())
        throw ConfigError("proposal_sds size does not match the free parameter count");

    RandomStream root(cfg.seed);
    RandomStream impute_rng = root.substream("impute");
    RandomStream update_rng = root.substream("update");

    const int N = emb.size();
    Chain chain;
    chain.field_mean.assign(N, 0.0);
    chain.field_sd.assign(N, 0.0);
    FieldVector welford_m2(N, 0.0);

    VecchiaPrecond vecchia;
    double vecchia_lambda = 0.0;
    auto refresh_precond = [&] {
        if (cfg.precond == PrecondKind::vecchia && !mask.fully_observed()) {
            vecchia = build_vecchia(mask, emb, model, params, cfg.pred_size,
                                    cfg.cond_size);
            vecchia_lambda = params.lambda;
        }
    };
    refresh_precond();
    auto apply_precond = [&](const FieldVector& x) -> FieldVector {
        switch (cfg.precond) {
            case PrecondKind::vecchia: return vecchia_apply(vecchia, x);
            case PrecondKind::inv_block: return InvBlockPrecond(spec, mask)(x);
            case PrecondKind::none: return x;
        }
        return x;
    };

    FieldVector z(N, 0.0);
    for (int i = 0; i < mask.n; ++i) z[mask.observed[i]] = z_o[i];

    double log_scale = 0.0;
    int kept_accepts = 0;
    const int kept_total = cfg.iterations - cfg.burn_in;
    std::vector<int> snapshot_at;
    for (int s = 0; s < cfg.snapshots; ++s)
        snapshot_at.push_back(cfg.burn_in + ((s + 1) * kept_total) / (cfg.snapshots + 1));

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        // 1. impute the unobserved sites given the current parameters
        int pcg_iters = 0;
        if (!mask.fully_observed()) {
            if (cfg.precond == PrecondKind::vecchia &&
                std::fabs(params.lambda - vecchia_lambda) >
                    cfg.precond_refresh_rel * vecchia_lambda)
                refresh_precond();
            auto draw = conditional_draw(z_o, mask, spec, params, apply_precond,
                                         cfg.pcg, impute_rng);
            if (!draw.converged) {
                ++chain.solver_warnings;
                refresh_precond();
                draw = conditional_draw(z_o, mask, spec, params, apply_precond,
                                        cfg.pcg, impute_rng);
                if (!draw.converged) ++chain.solver_warnings;
            }
            pcg_iters = draw.solver_iters;
            for (std::size_t i = 0; i < mask.unobserved.size(); ++i)
                z[mask.unobserved[i]] = draw.z_u[i];
        }
        chain.total_pcg_iters += pcg_iters;

        // 2. parameter block
        auto parts = kernel_parts(z, spec);
        const double kernel_curr = -0.5 * parts.logdet_C -
                                   0.5 * std::log(parts.ones_quad) -
                                   0.5 * (parts.N - 1) * std::log(parts.S2) +
                                   log_prior(params, prior);
        auto update = param_block_update(z, params, kernel_curr, ts, sds, log_scale,
                                         emb, model, prior, update_rng);
        if (update.accepted) {
            params = update.params;
            spec = std::move(update.spec);
        }
        // on rejection (mu, sigma2, theta) all stay put

        if (iter < cfg.burn_in) {
            log_scale = adapt_log_scale(log_scale, update.accepted, iter,
                                        cfg.target_accept);
        } else {
            const std::size_t k = chain.draws.size() + 1;
            chain.draws.push_back({params.mu, params.sigma2, params.lambda,
                                   params.shape, params.c, update.accepted, pcg_iters});
            kept_accepts += update.accepted ? 1 : 0;
            for (int i = 0; i < N; ++i) {
                const double delta = z[i] - chain.field_mean[i];
                chain.field_mean[i] += delta / k;
                welford_m2[i] += delta * (z[i] - chain.field_mean[i]);
            }
            for (int s : snapshot_at)
                if (iter == s) chain.field_snapshots.push_back(z);
        }
    }

    const std::size_t kept = chain.draws.size();
    chain.accept_rate = kept > 0 ? double(kept_accepts) / kept : 0.0;
    for (int i = 0; i < N; ++i)
        chain.field_sd[i] = kept > 1 ? std::sqrt(welford_m2[i] / (kept - 1)) : 0.0;
    chain.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
            .count();
    return chain;
}

}  // namespace latgp
