#pragma once

#include <gsl/gsl_errno.h>
#include <gsl/gsl_sf_bessel.h>
#include <gsl/gsl_sf_gamma.h>

#include <cmath>
#include <limits>
#include <vector>

#include "latgp/errors.hpp"
#include "latgp/lattice.hpp"

namespace latgp {

namespace detail {
// GSL must report through status codes, not the aborting default handler.
inline const bool gsl_handler_off = [] { gsl_set_error_handler_off(); return true; }();
}  // namespace detail

/// Mean/covariance parameters. `shape` is the powered-exponential exponent
/// alpha in (0,2] or the Matern smoothness nu > 0 depending on the model
/// family; `c` is the noise-to-signal ratio (nugget tau^2 = c * sigma2).
struct ParamSet {
    double mu = 0.0;
    double sigma2 = 1.0;
    double lambda = 1.0;
    double shape = 1.0;
    double c = 0.0;
};

enum class CorrFamily { powered_exponential, matern };

/// Correlation family plus optional cutoff modification. Distances are
/// normalized by `dist_unit` before the cutoff branches apply, so the
/// splice point sits at physical distance dist_unit and the plateau starts
/// at cutoff_r * dist_unit. cutoff_r == 0 means no modification.
struct CorrelationModel {
    CorrFamily family = CorrFamily::powered_exponential;
    double cutoff_r = 0.0;
    double dist_unit = 1.0;

    bool has_cutoff() const { return cutoff_r != 0.0; }
};

namespace detail {

inline void check_powexp(const ParamSet& p) {
    if (!(p.lambda > 0.0)) throw std::domain_error("range lambda must be positive");
    if (!(p.shape > 0.0 && p.shape <= 2.0))
        throw std::domain_error("powered-exponential shape must lie in (0, 2]");
    if (p.c < 0.0) throw std::domain_error("noise ratio c must be nonnegative");
}

inline void check_matern(const ParamSet& p) {
    if (!(p.lambda > 0.0)) throw std::domain_error("range lambda must be positive");
    if (!(p.shape > 0.0)) throw std::domain_error("Matern smoothness must be positive");
    if (p.c < 0.0) throw std::domain_error("noise ratio c must be nonnegative");
}

/// log K_nu(x) for x > 0; order is symmetrized. Underflow maps to -inf.
inline double log_bessel_k(double nu, double x) {
    gsl_sf_result res;
    const int status = gsl_sf_bessel_lnKnu_e(std::fabs(nu), x, &res);
    if (status == GSL_EUNDRFLW) return -std::numeric_limits<double>::infinity();
    if (status != GSL_SUCCESS) throw Error("Bessel lnK evaluation failed");
    return res.val;
}

/// Smooth part of the correlation (no nugget); value 1 at h = 0.
inline double phi_smooth(CorrFamily family, double h, const ParamSet& p) {
    if (h == 0.0) return 1.0;
    const double x = h / p.lambda;
    if (family == CorrFamily::powered_exponential) return std::exp(-std::pow(x, p.shape));
    const double nu = p.shape;
    // Evaluated in log space: (h/lambda)^nu K_nu(h/lambda) / (2^{nu-1} Gamma(nu))
    // can overflow intermediates even though the result lies in (0, 1).
    const double lk = log_bessel_k(nu, x);
    if (std::isinf(lk) && lk < 0) return 0.0;
    const double lv = nu * std::log(x) + lk - (nu - 1.0) * M_LN2 - std::lgamma(nu);
    return std::exp(lv);
}

/// d/dh of the smooth correlation part.
inline double phi_smooth_deriv(CorrFamily family, double h, const ParamSet& p) {
    const double x = h / p.lambda;
    if (family == CorrFamily::powered_exponential) {
        const double a = p.shape;
        return -(a / h) * std::pow(x, a) * std::exp(-std::pow(x, a));
    }
    // (x^nu K_nu(x))' = -x^nu K_{nu-1}(x)
    const double nu = p.shape;
    const double lk = log_bessel_k(nu - 1.0, x);
    if (std::isinf(lk) && lk < 0) return 0.0;
    const double lv = nu * std::log(x) + lk - (nu - 1.0) * M_LN2 - std::lgamma(nu);
    return -std::exp(lv) / p.lambda;
}

}  // namespace detail

inline double powexp_corr(double h, const ParamSet& p) {
    detail::check_powexp(p);
    if (h < 0.0) throw std::domain_error("distance must be nonnegative");
    const double v = detail::phi_smooth(CorrFamily::powered_exponential, h, p);
    return h == 0.0 ? v + p.c : v;
}

inline double matern_corr(double h, const ParamSet& p) {
    detail::check_matern(p);
    if (h < 0.0) throw std::domain_error("distance must be nonnegative");
    const double v = detail::phi_smooth(CorrFamily::matern, h, p);
    return h == 0.0 ? v + p.c : v;
}

/// Raw (unmodified) correlation including the nugget at h = 0.
inline double raw_corr(CorrFamily family, double h, const ParamSet& p) {
    return family == CorrFamily::powered_exponential ? powexp_corr(h, p)
                                                     : matern_corr(h, p);
}

/// Quadratic-splice coefficients: rho(u) = a + b (u - r)^2 on [1, r) and
/// the constant a beyond, in normalized distance u = h / dist_unit.
/// Continuity and differentiability at u = 1 determine both (which also
/// forces rho'(r) = 0 by the quadratic form):
///   b = -phi'(1) / (2 (r - 1)),   a = phi(1) - b (r - 1)^2.
struct CutoffCoeffs {
    double a = 0.0;
    double b = 0.0;
};

inline CutoffCoeffs cutoff_coeffs(const CorrelationModel& model, const ParamSet& p) {
    const double r = model.cutoff_r;
    if (!(r > 1.0)) throw ConfigError("cutoff radius must exceed 1 in normalized units");
    ParamSet pn = p;
    pn.lambda = p.lambda / model.dist_unit;  // work in normalized distance
    const double phi1 = detail::phi_smooth(model.family, 1.0, pn);
    const double dphi1 = detail::phi_smooth_deriv(model.family, 1.0, pn);
    const double b = -dphi1 / (2.0 * (r - 1.0));
    const double a = phi1 - b * (r - 1.0) * (r - 1.0);
    return {a, b};
}

/// Correlation after the cutoff modification (identity when the model has
/// none). The nugget applies only at h = 0 exactly.
inline double modified_corr(const CorrelationModel& model, double h, const ParamSet& p) {
    if (model.family == CorrFamily::powered_exponential)
        detail::check_powexp(p);
    else
        detail::check_matern(p);
    if (h < 0.0) throw std::domain_error("distance must be nonnegative");
    if (!model.has_cutoff()) {
        const double v = detail::phi_smooth(model.family, h, p);
        return h == 0.0 ? v + p.c : v;
    }
    const double u = h / model.dist_unit;
    if (u < 1.0) {
        const double v = detail::phi_smooth(model.family, h, p);
        return h == 0.0 ? v + p.c : v;
    }
    const CutoffCoeffs cc = cutoff_coeffs(model, p);
    if (u < model.cutoff_r) {
        const double d = u - model.cutoff_r;
        return cc.a + cc.b * d * d;
    }
    return cc.a;
}

/// Cutoff model bound to an embedding: normalized by the base diameter, so
/// the splice point sits exactly at the maximum within-domain distance and
/// the observed block of the periodized matrix reproduces the raw model.
inline CorrelationModel cutoff_model(CorrFamily family, const EmbeddingSpec& emb) {
    const double r_norm = emb.r / emb.dist_unit;
    if (!(r_norm > 1.0))
        throw ConfigError(
            "cutoff radius must exceed the base diameter; increase r_factor");
    return CorrelationModel{family, r_norm, emb.dist_unit};
}

inline CorrelationModel plain_model(CorrFamily family) {
    return CorrelationModel{family, 0.0, 1.0};
}

/// First column of the embedding correlation matrix: the modified
/// correlation evaluated at torus wrap distances, lexicographic order.
/// Exploits the two-fold reflection symmetry so each distinct distance is
/// evaluated once.
inline std::vector<double> base_vector(const EmbeddingSpec& emb,
                                       const CorrelationModel& model,
                                       const ParamSet& p) {
    const int N1 = emb.N1, N2 = emb.N2;
    std::vector<double> c(static_cast<std::size_t>(N1) * N2);
    const double delta = emb.delta();
    for (int i = 0; i <= N1 / 2; ++i) {
        for (int j = 0; j <= N2 / 2; ++j) {
            const double h = std::hypot(i * delta, j * delta);
            const double v = modified_corr(model, h, p);
            const int mi = (N1 - i) % N1;
            const int mj = (N2 - j) % N2;
            c[static_cast<std::size_t>(i) * N2 + j] = v;
            c[static_cast<std::size_t>(mi) * N2 + j] = v;
            c[static_cast<std::size_t>(i) * N2 + mj] = v;
            c[static_cast<std::size_t>(mi) * N2 + mj] = v;
        }
    }
    return c;
}

}  // namespace latgp
