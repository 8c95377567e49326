#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "latgp/covariance.hpp"
#include "latgp/errors.hpp"

namespace latgp {

struct NelderMeadConfig {
    int max_evals = 2000;
    double x_tol = 1e-7;   // simplex diameter
    double f_tol = 1e-10;  // function spread
    double init_step = 0.25;
};

struct NelderMeadResult {
    std::vector<double> x;
    double fx = 0.0;
    int evals = 0;
    bool converged = false;
};

/// Simplex maximization with the standard reflection / expansion /
/// contraction / shrink moves. -inf objective values are legal and push the
/// simplex back into the feasible region. A degenerate run is restarted
/// once from a perturbed best vertex.
template <class Fn>
NelderMeadResult nelder_mead(Fn&& f, const std::vector<double>& x0,
                             const NelderMeadConfig& cfg = {}) {
    const std::size_t dim = x0.size();
    if (dim == 0) throw ConfigError("nelder_mead: empty start point");

    int evals = 0;
    auto eval = [&](const std::vector<double>& x) {
        ++evals;
        return f(x);
    };

    const double f0 = eval(x0);
    if (!std::isfinite(f0))
        throw OptimizerFailedError("nelder_mead: objective not finite at start");

    auto run = [&](std::vector<double> start, double fstart) {
        std::vector<std::vector<double>> xs(dim + 1, start);
        std::vector<double> fs(dim + 1, fstart);
        for (std::size_t i = 0; i < dim; ++i) {
            xs[i + 1][i] += (start[i] != 0.0 ? cfg.init_step * std::fabs(start[i])
                                             : cfg.init_step);
            if (xs[i + 1][i] == start[i]) xs[i + 1][i] += cfg.init_step;
            fs[i + 1] = eval(xs[i + 1]);
        }
        auto order = [&] {
            std::vector<std::size_t> idx(dim + 1);
            std::iota(idx.begin(), idx.end(), 0);
            std::stable_sort(idx.begin(), idx.end(),
                             [&](std::size_t a, std::size_t b) { return fs[a] > fs[b]; });
            std::vector<std::vector<double>> xs2(dim + 1);
            std::vector<double> fs2(dim + 1);
            for (std::size_t k = 0; k <= dim; ++k) {
                xs2[k] = xs[idx[k]];
                fs2[k] = fs[idx[k]];
            }
            xs.swap(xs2);
            fs.swap(fs2);
        };
        order();

        bool converged = false;
        while (evals < cfg.max_evals) {
            double diam = 0.0;
            for (std::size_t k = 1; k <= dim; ++k)
                for (std::size_t i = 0; i < dim; ++i)
                    diam = std::max(diam, std::fabs(xs[k][i] - xs[0][i]));
            const double spread = std::isfinite(fs[dim]) ? fs[0] - fs[dim]
                                                         : std::numeric_limits<double>::max();
            // both criteria: a tight function spread alone can be a simplex
            // straddling the optimum
            if (diam < cfg.x_tol && spread < cfg.f_tol) {
                converged = true;
                break;
            }

            std::vector<double> centroid(dim, 0.0);
            for (std::size_t k = 0; k < dim; ++k)
                for (std::size_t i = 0; i < dim; ++i) centroid[i] += xs[k][i] / dim;

            auto along = [&](double t) {
                std::vector<double> x(dim);
                for (std::size_t i = 0; i < dim; ++i)
                    x[i] = centroid[i] + t * (centroid[i] - xs[dim][i]);
                return x;
            };

            std::vector<double> xr = along(1.0);
            const double fr = eval(xr);
            if (fr > fs[0]) {
                std::vector<double> xe = along(2.0);
                const double fe = eval(xe);
                if (fe > fr) {
                    xs[dim] = std::move(xe);
                    fs[dim] = fe;
                } else {
                    xs[dim] = std::move(xr);
                    fs[dim] = fr;
                }
            } else if (fr > fs[dim - 1]) {
                xs[dim] = std::move(xr);
                fs[dim] = fr;
            } else {
                const bool outside = fr > fs[dim];
                std::vector<double> xc = along(outside ? 0.5 : -0.5);
                const double fc = eval(xc);
                if ((outside && fc >= fr) || (!outside && fc > fs[dim])) {
                    xs[dim] = std::move(xc);
                    fs[dim] = fc;
                } else {
                    for (std::size_t k = 1; k <= dim; ++k) {
                        for (std::size_t i = 0; i < dim; ++i)
                            xs[k][i] = xs[0][i] + 0.5 * (xs[k][i] - xs[0][i]);
                        fs[k] = eval(xs[k]);
                    }
                }
            }
            order();
        }

        NelderMeadResult res;
        res.x = xs[0];
        res.fx = fs[0];
        res.converged = converged;
        return res;
    };

    NelderMeadResult res = run(x0, f0);
    if (!res.converged || !std::isfinite(res.fx)) {
        std::vector<double> restart = res.x;
        for (std::size_t i = 0; i < dim; ++i)
            restart[i] += 0.1 * cfg.init_step * (i % 2 == 0 ? 1.0 : -1.0) *
                          (std::fabs(restart[i]) + 1.0);
        const double frs = eval(restart);
        if (std::isfinite(frs)) {
            NelderMeadResult second = run(restart, frs);
            if (second.fx > res.fx) res = second;
        }
        if (!std::isfinite(res.fx))
            throw OptimizerFailedError("nelder_mead: no finite optimum found");
    }
    res.evals = evals;
    return res;
}

/// Bijections between the free correlation parameters and unconstrained
/// optimization / proposal coordinates. Strictly positive parameters map
/// through log; bounded ones optionally through a scaled logit.
struct ThetaSpace {
    enum class Field { lambda, shape, c };
    enum class Transform { log_xf, logit_xf };
    struct Comp {
        Field field;
        Transform xf;
        double upper = 0.0;  // logit scale bound
    };
    std::vector<Comp> comps;

    static ThetaSpace build(CorrFamily family, bool lambda_free, bool shape_free,
                            bool c_free, bool logit_for_bounded_shape = true) {
        ThetaSpace ts;
        if (lambda_free) ts.comps.push_back({Field::lambda, Transform::log_xf, 0.0});
        if (shape_free) {
            if (family == CorrFamily::powered_exponential && logit_for_bounded_shape)
                ts.comps.push_back({Field::shape, Transform::logit_xf, 2.0});
            else
                ts.comps.push_back({Field::shape, Transform::log_xf, 0.0});
        }
        if (c_free) ts.comps.push_back({Field::c, Transform::log_xf, 0.0});
        return ts;
    }

    std::size_t dim() const { return comps.size(); }

    static double get(const ParamSet& p, Field f) {
        switch (f) {
            case Field::lambda: return p.lambda;
            case Field::shape: return p.shape;
            case Field::c: return p.c;
        }
        return 0.0;
    }

    static void set(ParamSet& p, Field f, double v) {
        switch (f) {
            case Field::lambda: p.lambda = v; break;
            case Field::shape: p.shape = v; break;
            case Field::c: p.c = v; break;
        }
    }

    std::vector<double> to_vec(const ParamSet& p) const {
        std::vector<double> x(comps.size());
        for (std::size_t i = 0; i < comps.size(); ++i) {
            const double v = get(p, comps[i].field);
            if (comps[i].xf == Transform::log_xf) {
                x[i] = std::log(v);
            } else {
                const double u = std::clamp(v / comps[i].upper, 1e-12, 1.0 - 1e-12);
                x[i] = std::log(u / (1.0 - u));
            }
        }
        return x;
    }

    ParamSet from_vec(const std::vector<double>& x, ParamSet base) const {
        if (x.size() != comps.size())
            throw DimensionError("ThetaSpace: coordinate count mismatch");
        for (std::size_t i = 0; i < comps.size(); ++i) {
            double v;
            if (comps[i].xf == Transform::log_xf) {
                v = std::exp(x[i]);
            } else {
                v = comps[i].upper / (1.0 + std::exp(-x[i]));
            }
            set(base, comps[i].field, v);
        }
        return base;
    }

    /// log |dx/dtheta|; enters Metropolis ratios for proposals made in the
    /// transformed coordinates.
    double log_jacobian(const ParamSet& p) const {
        double lj = 0.0;
        for (const Comp& comp : comps) {
            const double v = get(p, comp.field);
            if (comp.xf == Transform::log_xf) {
                lj -= std::log(v);
            } else {
                lj += std::log(comp.upper) - std::log(v) - std::log(comp.upper - v);
            }
        }
        return lj;
    }
};

}  // namespace latgp
