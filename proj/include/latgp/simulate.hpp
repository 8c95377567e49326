#pragma once

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "latgp/bccb.hpp"
#include "latgp/covariance.hpp"
#include "latgp/errors.hpp"
#include "latgp/lattice.hpp"
#include "latgp/rng.hpp"
#include "latgp/solver.hpp"

namespace latgp {

/// Two independent draws from N(mu 1, sigma2 C) obtained from one complex
/// noise vector: the colored field's real and imaginary parts.
inline std::pair<FieldVector, FieldVector> unconditional_pair(const EigenSpectrum& spec,
                                                              const ParamSet& p,
                                                              RandomStream& rng) {
    spec.require_nonnegative();
    ComplexField eps(spec.size());
    rng.fill_complex_normal(eps);
    ComplexField z = color(spec, eps);
    const double sigma = std::sqrt(p.sigma2);
    FieldVector z1(z.size()), z2(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) {
        z1[k] = p.mu + sigma * z[k].real();
        z2[k] = p.mu + sigma * z[k].imag();
    }
    return {std::move(z1), std::move(z2)};
}

struct ConditionalDraw {
    FieldVector z_u;
    int solver_iters = 0;
    double residual = 0.0;
    bool converged = true;
};

namespace detail {

/// Kriging-correction core shared by conditional draws and means: solves
/// the observed-block correlation system and spreads the correction to the
/// unobserved sites. sigma2 cancels between the two correlation blocks, so
/// the solve runs on the correlation matrix regardless of scale.
template <class ApplyM>
ConditionalDraw substitution_correct(const FieldVector& target_o,
                                     const FieldVector& reference,
                                     const ObservationMask& mask,
                                     const EigenSpectrum& spec, ApplyM&& apply_Minv,
                                     const PcgConfig& cfg) {
    ConditionalDraw out;
    if (mask.fully_observed()) return out;
    FieldVector eta(mask.n);
    for (int i = 0; i < mask.n; ++i) eta[i] = target_o[i] - reference[mask.observed[i]];
    ObservedBlockOp coo(spec, mask);
    PcgResult sol = pcg_solve(coo, apply_Minv, eta, cfg);
    out.solver_iters = sol.iters;
    out.residual = sol.rel_residual;
    out.converged = sol.converged;
    PartitionedProduct prod = partitioned_matvec(spec, mask, sol.x);
    out.z_u.resize(mask.unobserved.size());
    for (std::size_t i = 0; i < out.z_u.size(); ++i)
        out.z_u[i] = reference[mask.unobserved[i]] + prod.unobserved[i];
    return out;
}

}  // namespace detail

/// Exact conditional simulation at the unobserved sites: an unconditional
/// draw plus the kriging correction of its observed-site residual.
template <class ApplyM>
ConditionalDraw conditional_draw(const FieldVector& z_o, const ObservationMask& mask,
                                 const EigenSpectrum& spec, const ParamSet& p,
                                 ApplyM&& apply_Minv, const PcgConfig& cfg,
                                 RandomStream& rng) {
    if (static_cast<int>(z_o.size()) != mask.n)
        throw DimensionError("conditional_draw: observed vector length mismatch");
    if (mask.fully_observed()) return {};
    auto [sim, spare] = unconditional_pair(spec, p, rng);
    (void)spare;
    return detail::substitution_correct(z_o, sim, mask, spec, apply_Minv, cfg);
}

/// E(Z | Z_o): full-length field equal to the data at observed sites and
/// the kriging mean elsewhere. One solve.
template <class ApplyM>
FieldVector conditional_mean(const FieldVector& z_o, const ObservationMask& mask,
                             const EigenSpectrum& spec, const ParamSet& p,
                             ApplyM&& apply_Minv, const PcgConfig& cfg,
                             int* iters_out = nullptr) {
    if (static_cast<int>(z_o.size()) != mask.n)
        throw DimensionError("conditional_mean: observed vector length mismatch");
    FieldVector mean(spec.size(), p.mu);
    ConditionalDraw corr = detail::substitution_correct(
        z_o, mean, mask, spec, apply_Minv, cfg);
    if (iters_out) *iters_out = corr.solver_iters;
    FieldVector out(spec.size());
    for (int i = 0; i < mask.n; ++i) out[mask.observed[i]] = z_o[i];
    for (std::size_t i = 0; i < mask.unobserved.size(); ++i)
        out[mask.unobserved[i]] = mask.fully_observed() ? 0.0 : corr.z_u[i];
    return out;
}

/// Repeated conditional draws at fixed parameters. Each unconditional pair
/// serves two draws, halving the coloring FFTs; the spare field is banked
/// between calls.
template <class ApplyM>
class ConditionalSimulator {
public:
    ConditionalSimulator(const FieldVector& z_o, const ObservationMask& mask,
                         const EigenSpectrum& spec, const ParamSet& p,
                         ApplyM apply_Minv, PcgConfig cfg)
        : z_o_(&z_o), mask_(&mask), spec_(&spec), p_(p),
          apply_Minv_(std::move(apply_Minv)), cfg_(cfg) {}

    /// Complete embedding field: data at observed slots, a fresh
    /// conditional draw at unobserved slots.
    FieldVector draw_complete(RandomStream& rng, int* iters_out = nullptr) {
        FieldVector sim;
        if (banked_) {
            sim = std::move(*banked_);
            banked_.reset();
        } else {
            auto [first, second] = unconditional_pair(*spec_, p_, rng);
            sim = std::move(first);
            banked_ = std::move(second);
        }
        ConditionalDraw d = detail::substitution_correct(*z_o_, sim, *mask_, *spec_,
                                                         apply_Minv_, cfg_);
        if (iters_out) *iters_out = d.solver_iters;
        last_converged_ = d.converged;
        FieldVector out(spec_->size());
        for (int i = 0; i < mask_->n; ++i) out[mask_->observed[i]] = (*z_o_)[i];
        for (std::size_t i = 0; i < mask_->unobserved.size(); ++i)
            out[mask_->unobserved[i]] = d.z_u[i];
        return out;
    }

    bool last_converged() const { return last_converged_; }

private:
    const FieldVector* z_o_;
    const ObservationMask* mask_;
    const EigenSpectrum* spec_;
    ParamSet p_;
    ApplyM apply_Minv_;
    PcgConfig cfg_;
    std::optional<FieldVector> banked_;
    bool last_converged_ = true;
};

}  // namespace latgp
