#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <optional>
#include <vector>

#include "latgp/bccb.hpp"
#include "latgp/covariance.hpp"
#include "latgp/errors.hpp"
#include "latgp/lattice.hpp"
#include "latgp/likelihood.hpp"
#include "latgp/mcmc.hpp"
#include "latgp/optimize.hpp"
#include "latgp/parallel.hpp"
#include "latgp/rng.hpp"
#include "latgp/simulate.hpp"
#include "latgp/solver.hpp"

namespace latgp {

struct EmConfig {
    int M = 400;
    int max_em_iters = 60;
    double tol = 1e-3;        // max relative parameter change
    int tol_consecutive = 3;  // required consecutive small-change iterations
    PcgConfig pcg{1e-5, 0};
    std::uint64_t seed = 1;
    FitFlags fit{true, false, false, true};  // study default: range only
    int pred_size = 4;
    int cond_size = 52;
    NelderMeadConfig nm{400, 1e-6, 1e-9, 0.25};
    int threads = 1;
    std::optional<ParamSet> init;
};

struct EmIterate {
    ParamSet params;
    double Qp = 0.0;
    double seconds = 0.0;
    long pcg_iters = 0;
};

struct EmPath {
    std::vector<EmIterate> iterates;
    bool converged = false;
    double wall_seconds = 0.0;

    const ParamSet& estimate() const { return iterates.back().params; }
};

struct EStepDraws {
    std::vector<FieldVector> sims;
    FieldVector mu_tilde;
    long pcg_iters = 0;
};

/// E-step: M conditional simulations of the complete field at the current
/// parameters plus the exact conditional mean. Draws are organized in
/// pairs (one coloring serves two fields) and each pair owns an indexed
/// substream, so any thread count reproduces the same fields.
template <class ApplyM>
EStepDraws e_step(const FieldVector& z_o, const ObservationMask& mask,
                  const EigenSpectrum& spec, const ParamSet& params,
                  const ApplyM& apply_Minv, const EmConfig& cfg,
                  const RandomStream& iter_root) {
    EStepDraws out;
    out.sims.assign(cfg.M, FieldVector());
    const int pairs = (cfg.M + 1) / 2;
    std::vector<long> iters(pairs, 0);
    parallel_for(pairs, cfg.threads, [&](std::size_t k) {
        RandomStream rng = iter_root.substream("pair", k);
        ConditionalSimulator sim(z_o, mask, spec, params, apply_Minv, cfg.pcg);
        for (int half = 0; half < 2; ++half) {
            const int idx = 2 * static_cast<int>(k) + half;
            if (idx >= cfg.M) break;
            int it = 0;
            out.sims[idx] = sim.draw_complete(rng, &it);
            iters[k] += it;
            if (!sim.last_converged())
                throw Error("E-step draw " + std::to_string(idx) +
                            " did not reach the solver tolerance");
        }
    });
    for (long it : iters) out.pcg_iters += it;

    int mean_iters = 0;
    out.mu_tilde =
        conditional_mean(z_o, mask, spec, params, apply_Minv, cfg.pcg, &mean_iters);
    out.pcg_iters += mean_iters;
    return out;
}

/// Monte Carlo EM with the profile M-step: the mean and variance maximized
/// in closed form, the free correlation parameters by simplex search on the
/// Monte Carlo profile objective.
inline EmPath mcem_run(const FieldVector& z_o, const ObservationMask& mask,
                       const EmbeddingSpec& emb, const CorrelationModel& model,
                       const EmConfig& cfg) {
    const auto t_start = std::chrono::steady_clock::now();
    ParamSet params = cfg.init ? *cfg.init
                               : initial_params(z_o, mask, emb, model.family,
                                                cfg.init ? cfg.init->c : 0.0);
    EigenSpectrum spec = eigenvalues(base_vector(emb, model, params), emb);
    if (!spec.positive())
        throw InitializationError("initial parameters give an indefinite embedding");

    const ThetaSpace ts = cfg.fit.space(model.family);
    RandomStream root(cfg.seed);

    EmPath path;
    int small_changes = 0;
    for (int t = 0; t < cfg.max_em_iters; ++t) {
        const auto t_iter = std::chrono::steady_clock::now();

        VecchiaPrecond pre;
        if (!mask.fully_observed())
            pre = build_vecchia(mask, emb, model, params, cfg.pred_size, cfg.cond_size);
        auto apply_Minv = [&](const FieldVector& x) { return vecchia_apply(pre, x); };
        EStepDraws draws =
            e_step(z_o, mask, spec, params, apply_Minv, cfg, root.substream("estep", t));

        QpEvaluator evaluator(draws.sims, draws.mu_tilde, emb, model);
        ParamSet next = params;
        next.mu = evaluator.mu_hat();
        double qp_at_next;
        if (ts.dim() > 0) {
            auto objective = [&](const std::vector<double>& x) {
                return evaluator.eval(ts.from_vec(x, params)).Qp;
            };
            auto nm = nelder_mead(objective, ts.to_vec(params), cfg.nm);
            next = ts.from_vec(nm.x, next);
            auto prof = evaluator.eval(next);
            next.sigma2 = prof.sigma2_hat;
            qp_at_next = prof.Qp;
        } else {
            auto prof = evaluator.eval(next);
            next.sigma2 = prof.sigma2_hat;
            qp_at_next = prof.Qp;
        }
        if (!std::isfinite(qp_at_next))
            throw OptimizerFailedError("profile objective not finite at the M-step optimum");

        // relative change; the mean is measured against the field scale
        // since its true value may be zero
        double change = 0.0;
        auto rel = [](double now, double before, double floor) {
            return std::fabs(now - before) / std::max(std::fabs(before), floor);
        };
        change = std::max(change, rel(next.mu, params.mu, std::sqrt(next.sigma2)));
        change = std::max(change, rel(next.sigma2, params.sigma2, 1e-12));
        change = std::max(change, rel(next.lambda, params.lambda, 1e-12));
        if (cfg.fit.shape_free) change = std::max(change, rel(next.shape, params.shape, 1e-12));
        if (cfg.fit.c_free) change = std::max(change, rel(next.c, params.c, 1e-3));

        params = next;
        spec = eigenvalues(base_vector(emb, model, params), emb);
        path.iterates.push_back(
            {params, qp_at_next,
             std::chrono::duration<double>(std::chrono::steady_clock::now() - t_iter)
                 .count(),
             draws.pcg_iters});

        small_changes = change < cfg.tol ? small_changes + 1 : 0;
        if (small_changes >= cfg.tol_consecutive) {
            path.converged = true;
            break;
        }
    }
    path.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
            .count();
    return path;
}

}  // namespace latgp
