#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <complex>
#include <mutex>
#include <string>
#include <vector>

#include "latgp/bccb.hpp"
#include "latgp/covariance.hpp"
#include "latgp/em.hpp"
#include "latgp/errors.hpp"
#include "latgp/lattice.hpp"
#include "latgp/likelihood.hpp"
#include "latgp/optimize.hpp"
#include "latgp/parallel.hpp"
#include "latgp/rng.hpp"
#include "latgp/solver.hpp"

namespace latgp {

struct EstimateRecord {
    std::string method;
    ParamSet params;
    double loglik_at_estimate = 0.0;  // dense exact loglik, shared yardstick
    double wall_seconds = 0.0;
    int replicate_id = -1;
    bool ok = true;
    std::string error;
};

inline std::vector<std::pair<double, double>> observed_coords(
    const ObservationMask& mask, const EmbeddingSpec& emb) {
    std::vector<std::pair<double, double>> coords;
    coords.reserve(mask.n);
    for (int idx : mask.observed)
        coords.emplace_back((idx / emb.N2) * emb.delta(), (idx % emb.N2) * emb.delta());
    return coords;
}

/// Exact simulation of the raw-correlation model at arbitrary coordinates
/// by dense Cholesky; the data generator for desk-scale studies. The
/// factor can be reused across replicates.
inline Eigen::MatrixXd dense_chol_factor(
    const std::vector<std::pair<double, double>>& coords, const ParamSet& p,
    CorrFamily family) {
    const std::size_t n = coords.size();
    Eigen::MatrixXd corr(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) {
            const double h = std::hypot(coords[i].first - coords[j].first,
                                        coords[i].second - coords[j].second);
            const double v = raw_corr(family, h, p);
            corr(i, j) = v;
            corr(j, i) = v;
        }
    Eigen::LLT<Eigen::MatrixXd> llt(corr);
    if (llt.info() != Eigen::Success)
        throw NotPositiveDefiniteError("dense simulation covariance not positive definite");
    return llt.matrixL();
}

inline FieldVector dense_simulate(const Eigen::MatrixXd& chol_L, const ParamSet& p,
                                  RandomStream& rng) {
    const int n = static_cast<int>(chol_L.rows());
    Eigen::VectorXd eps(n);
    for (int i = 0; i < n; ++i) eps[i] = rng.normal();
    Eigen::VectorXd z = p.mu * Eigen::VectorXd::Ones(n) +
                        std::sqrt(p.sigma2) * (chol_L * eps);
    return FieldVector(z.data(), z.data() + n);
}

/// Profile loglikelihood of the raw dense model: the mean by generalized
/// least squares, the variance by its closed-form maximizer.
struct DenseProfile {
    double value = kNegInf;
    double mu = 0.0;
    double sigma2 = 0.0;
};

inline DenseProfile dense_profile_loglik(
    const FieldVector& z_o, const std::vector<std::pair<double, double>>& coords,
    const ParamSet& p_theta, CorrFamily family) {
    const std::size_t n = z_o.size();
    Eigen::MatrixXd corr(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) {
            const double h = std::hypot(coords[i].first - coords[j].first,
                                        coords[i].second - coords[j].second);
            const double v = raw_corr(family, h, p_theta);
            corr(i, j) = v;
            corr(j, i) = v;
        }
    Eigen::LLT<Eigen::MatrixXd> llt(corr);
    if (llt.info() != Eigen::Success) return {};
    Eigen::Map<const Eigen::VectorXd> ze(z_o.data(), n);
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    Eigen::VectorXd Ci_z = llt.solve(ze);
    Eigen::VectorXd Ci_1 = llt.solve(ones);
    DenseProfile out;
    out.mu = ones.dot(Ci_z) / ones.dot(Ci_1);
    const double S2 = (ze - out.mu * ones).dot(Ci_z - out.mu * Ci_1);
    out.sigma2 = S2 / n;
    const double half_logdet =
        llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    out.value = -0.5 * n * std::log(out.sigma2) - half_logdet;
    return out;
}

/// Maximum likelihood under the exact dense model, feasible for small n.
inline EstimateRecord exact_mle(const FieldVector& z_o,
                                const std::vector<std::pair<double, double>>& coords,
                                CorrFamily family, const FitFlags& fit,
                                const ParamSet& start,
                                const NelderMeadConfig& nm_cfg = {400, 1e-7, 1e-10, 0.25},
                                std::size_t dense_guard = 12000) {
    const auto t0 = std::chrono::steady_clock::now();
    if (z_o.size() < 3) throw ConfigError("exact_mle requires at least 3 observations");
    if (z_o.size() > dense_guard)
        throw ConfigError("exact_mle: n exceeds the dense-solver guard");
    const ThetaSpace ts = fit.space(family);
    EstimateRecord rec;
    rec.method = "exact";
    ParamSet best = start;
    if (ts.dim() > 0) {
        auto objective = [&](const std::vector<double>& x) {
            return dense_profile_loglik(z_o, coords, ts.from_vec(x, start), family).value;
        };
        auto nm = nelder_mead(objective, ts.to_vec(start), nm_cfg);
        best = ts.from_vec(nm.x, start);
    }
    DenseProfile prof = dense_profile_loglik(z_o, coords, best, family);
    if (!std::isfinite(prof.value))
        throw NotPositiveDefiniteError("exact_mle: optimum not positive definite");
    best.mu = prof.mu;
    best.sigma2 = prof.sigma2;
    rec.params = best;
    rec.loglik_at_estimate = dense_loglik(z_o, coords, best, family, dense_guard);
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

/// Composite loglikelihood over ordered prediction/conditioning blocks:
/// sum of conditional Gaussian logdensities, constants included so the
/// single-block case reproduces the dense loglikelihood exactly.
inline double composite_loglik(const FieldVector& z_o, const VecchiaPrecond& blocks,
                               const ParamSet& p) {
    if (static_cast<int>(z_o.size()) != blocks.n)
        throw DimensionError("composite_loglik: observed length mismatch");
    double acc = 0.0;
    Eigen::VectorXd ra, rb;
    for (const VecchiaBlock& block : blocks.blocks) {
        const VecchiaGeometry& geo = blocks.geoms[block.geom];
        const int nj = static_cast<int>(block.pred.size());
        const int mj = static_cast<int>(block.cond.size());
        ra.resize(nj);
        for (int i = 0; i < nj; ++i) ra[i] = z_o[block.pred[i]] - p.mu;
        if (mj > 0) {
            rb.resize(mj);
            for (int i = 0; i < mj; ++i) rb[i] = z_o[block.cond[i]] - p.mu;
            ra.noalias() -= geo.K * rb;
        }
        const double quad = ra.dot(geo.Vinv * ra);
        acc += -0.5 * nj * std::log(2.0 * M_PI * p.sigma2) - 0.5 * geo.logdetV -
               quad / (2.0 * p.sigma2);
    }
    return acc;
}

/// Mean and variance profiled out of the composite objective: GLS mean over
/// the block residual operators, then the closed-form variance.
struct CompositeProfile {
    double value = kNegInf;
    double mu = 0.0;
    double sigma2 = 0.0;
};

inline CompositeProfile composite_profile(const FieldVector& z_o,
                                          const VecchiaPrecond& blocks) {
    const int n = blocks.n;
    // L z and L 1 accumulated blockwise
    double zVz = 0.0, zV1 = 0.0, oneV1 = 0.0, logdet = 0.0;
    Eigen::VectorXd za, zb, oa, ob;
    for (const VecchiaBlock& block : blocks.blocks) {
        const VecchiaGeometry& geo = blocks.geoms[block.geom];
        const int nj = static_cast<int>(block.pred.size());
        const int mj = static_cast<int>(block.cond.size());
        za.resize(nj);
        oa = Eigen::VectorXd::Ones(nj);
        for (int i = 0; i < nj; ++i) za[i] = z_o[block.pred[i]];
        if (mj > 0) {
            zb.resize(mj);
            ob = Eigen::VectorXd::Ones(mj);
            for (int i = 0; i < mj; ++i) zb[i] = z_o[block.cond[i]];
            za.noalias() -= geo.K * zb;
            oa.noalias() -= geo.K * ob;
        }
        Eigen::VectorXd Vz = geo.Vinv * za;
        Eigen::VectorXd Vo = geo.Vinv * oa;
        zVz += za.dot(Vz);
        zV1 += oa.dot(Vz);
        oneV1 += oa.dot(Vo);
        logdet += geo.logdetV;
    }
    CompositeProfile out;
    out.mu = zV1 / oneV1;
    const double S2 = zVz - 2.0 * out.mu * zV1 + out.mu * out.mu * oneV1;
    out.sigma2 = S2 / n;
    out.value = -0.5 * n * std::log(out.sigma2) - 0.5 * logdet;
    return out;
}

/// Composite-likelihood MLE with prediction quads and nearest-neighbor
/// conditioning sets over the raw correlation.
inline EstimateRecord composite_mle(const FieldVector& z_o, const ObservationMask& mask,
                                    const EmbeddingSpec& emb, CorrFamily family,
                                    const FitFlags& fit, const ParamSet& start,
                                    int pred_size = 4, int cond_size = 52,
                                    const NelderMeadConfig& nm_cfg = {400, 1e-7, 1e-10,
                                                                      0.25}) {
    const auto t0 = std::chrono::steady_clock::now();
    const ThetaSpace ts = fit.space(family);
    EstimateRecord rec;
    rec.method = "composite";
    auto profile_at = [&](const ParamSet& p_theta) {
        auto blocks = build_composite_blocks(mask, emb, family, p_theta, pred_size,
                                             cond_size);
        return composite_profile(z_o, blocks);
    };
    ParamSet best = start;
    if (ts.dim() > 0) {
        auto objective = [&](const std::vector<double>& x) {
            return profile_at(ts.from_vec(x, start)).value;
        };
        auto nm = nelder_mead(objective, ts.to_vec(start), nm_cfg);
        best = ts.from_vec(nm.x, start);
    }
    CompositeProfile prof = profile_at(best);
    best.mu = prof.mu;
    best.sigma2 = prof.sigma2;
    rec.params = best;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

/// Isotropic spectral density of the raw correlation family in two
/// dimensions (nugget excluded).
inline double spectral_density(CorrFamily family, double omega_norm2,
                               const ParamSet& p) {
    const double l2 = p.lambda * p.lambda;
    if (family == CorrFamily::powered_exponential) {
        if (p.shape != 1.0)
            throw ConfigError("spectral density available for shape 1 (exponential) only");
        return l2 / (2.0 * M_PI * std::pow(1.0 + l2 * omega_norm2, 1.5));
    }
    const double nu = p.shape;
    return std::exp(std::lgamma(nu + 1.0) - std::lgamma(nu)) / M_PI * l2 /
           std::pow(1.0 + l2 * omega_norm2, nu + 1.0);
}

/// Whittle frequency-domain loglikelihood on a complete base lattice:
///   -1/2 sum over nonzero Fourier frequencies of log f + I/f,
/// with the periodogram of the demeaned data. The zero frequency is
/// dropped, which absorbs the unknown mean. The model spectrum is the
/// plug-in continuous density (alias_wraps = 0), the classical form whose
/// sill and range estimates carry the well-documented negative bias;
/// alias_wraps > 0 folds the spectrum over that many wraps instead.
class WhittleEvaluator {
public:
    WhittleEvaluator(const FieldVector& z, const LatticeSpec& lattice, int alias_wraps = 0)
        : n1_(lattice.n1), n2_(lattice.n2), delta_(lattice.delta),
          wraps_(alias_wraps) {
        if (static_cast<int>(z.size()) != n1_ * n2_)
            throw IncompleteLatticeError(
                "whittle likelihood requires the complete base lattice");
        double mean = 0.0;
        for (double v : z) mean += v;
        mean /= z.size();
        ComplexField buf(z.size());
        for (std::size_t k = 0; k < z.size(); ++k) buf[k] = z[k] - mean;
        auto fft = fft_plan(n1_, n2_);
        fft->forward(buf);
        const double scale =
            delta_ * delta_ / (std::pow(2.0 * M_PI, 2) * double(n1_) * double(n2_));
        periodogram_.resize(z.size());
        for (std::size_t k = 0; k < z.size(); ++k)
            periodogram_[k] = scale * std::norm(buf[k]);
        mu_hat_ = mean;
    }

    double mu_hat() const { return mu_hat_; }

    double loglik(const ParamSet& p, CorrFamily family) const {
        double acc = 0.0;
        for (int k1 = 0; k1 < n1_; ++k1) {
            for (int k2 = 0; k2 < n2_; ++k2) {
                if (k1 == 0 && k2 == 0) continue;
                const double f = aliased_spectrum(k1, k2, p, family);
                acc += std::log(f) + periodogram_[k1 * n2_ + k2] / f;
            }
        }
        return -0.5 * acc;
    }

    /// Variance profiled out at fixed correlation shape: f = sigma2 * g.
    double profile_loglik(const ParamSet& p_theta, CorrFamily family,
                          double* sigma2_out = nullptr) const {
        ParamSet unit = p_theta;
        unit.sigma2 = 1.0;
        double ratio = 0.0, logsum = 0.0;
        const int total = n1_ * n2_ - 1;
        for (int k1 = 0; k1 < n1_; ++k1) {
            for (int k2 = 0; k2 < n2_; ++k2) {
                if (k1 == 0 && k2 == 0) continue;
                const double g = aliased_spectrum(k1, k2, unit, family);
                ratio += periodogram_[k1 * n2_ + k2] / g;
                logsum += std::log(g);
            }
        }
        const double sigma2 = ratio / total;
        if (sigma2_out) *sigma2_out = sigma2;
        return -0.5 * (logsum + total * std::log(sigma2) + total);
    }

private:
    double aliased_spectrum(int k1, int k2, const ParamSet& p, CorrFamily family) const {
        // signed frequency in (-pi/delta, pi/delta]
        const int s1 = k1 > n1_ / 2 ? k1 - n1_ : k1;
        const int s2 = k2 > n2_ / 2 ? k2 - n2_ : k2;
        const double w1 = 2.0 * M_PI * s1 / (n1_ * delta_);
        const double w2 = 2.0 * M_PI * s2 / (n2_ * delta_);
        const double wrap = 2.0 * M_PI / delta_;
        double f = 0.0;
        for (int a1 = -wraps_; a1 <= wraps_; ++a1)
            for (int a2 = -wraps_; a2 <= wraps_; ++a2) {
                const double u1 = w1 + a1 * wrap;
                const double u2 = w2 + a2 * wrap;
                f += spectral_density(family, u1 * u1 + u2 * u2, p);
            }
        f *= p.sigma2;
        // microscale noise is flat over the Nyquist square
        f += p.c * p.sigma2 * delta_ * delta_ / std::pow(2.0 * M_PI, 2);
        return f;
    }

    int n1_, n2_;
    double delta_;
    int wraps_;
    double mu_hat_ = 0.0;
    std::vector<double> periodogram_;
};

inline double whittle_loglik(const FieldVector& z_complete, const LatticeSpec& lattice,
                             const ParamSet& p, CorrFamily family) {
    return WhittleEvaluator(z_complete, lattice).loglik(p, family);
}

inline EstimateRecord whittle_mle(const FieldVector& z_complete,
                                  const LatticeSpec& lattice, CorrFamily family,
                                  const FitFlags& fit, const ParamSet& start,
                                  const NelderMeadConfig& nm_cfg = {400, 1e-7, 1e-10,
                                                                    0.25}) {
    const auto t0 = std::chrono::steady_clock::now();
    WhittleEvaluator ev(z_complete, lattice);
    const ThetaSpace ts = fit.space(family);
    EstimateRecord rec;
    rec.method = "whittle";
    ParamSet best = start;
    if (ts.dim() > 0) {
        auto objective = [&](const std::vector<double>& x) {
            return ev.profile_loglik(ts.from_vec(x, start), family);
        };
        auto nm = nelder_mead(objective, ts.to_vec(start), nm_cfg);
        best = ts.from_vec(nm.x, start);
    }
    double sigma2 = best.sigma2;
    ev.profile_loglik(best, family, &sigma2);
    best.sigma2 = sigma2;
    best.mu = ev.mu_hat();
    rec.params = best;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

/// Root-mean-square comparison study across sampling designs: the exact
/// MLE against the truth (RMSE) and each approximate method against the
/// exact MLE (RMSD), reported per parameter.
struct StudyRow {
    std::string design;
    std::string param;
    double R_star = 0.0;
    double R_em = 0.0;
    double R_cl = 0.0;
    double R_whittle = 0.0;  // NaN when the design is incomplete
};

struct StudyConfig {
    int n1 = 32;
    double s = 1.0 / std::sqrt(2.0);
    double r_factor = 1.5;
    int n_reps = 50;
    ParamSet truth{0.0, 2.0, 0.141, 1.0, 0.0};
    EmConfig em;
    int cl_cond_size = 52;
    int threads = 1;
    std::uint64_t seed = 20240601;
    bool run_em = true;
    bool run_cl = true;
    bool run_whittle = true;
};

struct StudyReplicate {
    int replicate_id;
    std::string design;
    EstimateRecord exact, em, cl, whittle;
};

struct StudyResult {
    std::vector<StudyRow> rows;
    std::vector<StudyReplicate> replicates;
};

inline StudyResult rmsd_study(const std::vector<DesignSpec>& designs,
                              const StudyConfig& cfg) {
    auto base = build_lattice(cfg.n1, cfg.n1, cfg.s);
    auto emb = build_embedding(base, cfg.r_factor);
    CorrelationModel model = cutoff_model(CorrFamily::powered_exponential, emb);
    const FitFlags fit{true, false, false, true};  // range only; shape and noise fixed

    auto complete_mask = make_mask(emb, DesignSpec::complete());
    auto all_coords = observed_coords(complete_mask, emb);
    Eigen::MatrixXd chol_L = dense_chol_factor(all_coords, cfg.truth, model.family);

    StudyResult result;
    std::mutex result_mutex;

    for (const DesignSpec& design : designs) {
        const bool whittle_ok =
            cfg.run_whittle && design.kind == DesignSpec::Kind::complete;
        std::vector<StudyReplicate> reps(cfg.n_reps);
        parallel_for(cfg.n_reps, cfg.threads, [&](std::size_t r) {
            RandomStream rng =
                RandomStream(cfg.seed).substream(design.tag(), r);
            StudyReplicate rep;
            rep.replicate_id = static_cast<int>(r);
            rep.design = design.tag();

            // full-lattice field from the raw model, then the design's mask
            FieldVector full = dense_simulate(chol_L, cfg.truth, rng);
            auto mask = make_mask(emb, design, rng.substream("mask"));
            FieldVector z_o(mask.n);
            auto coords = observed_coords(mask, emb);
            for (int i = 0; i < mask.n; ++i) {
                const int row = mask.observed[i] / emb.N2;
                const int col = mask.observed[i] % emb.N2;
                z_o[i] = full[row * base.n2 + col];
            }

            ParamSet start = initial_params(z_o, mask, emb, model.family, cfg.truth.c);
            start.shape = cfg.truth.shape;
            start.c = cfg.truth.c;

            rep.exact = exact_mle(z_o, coords, model.family, fit, start);
            if (cfg.run_em) {
                EmConfig em_cfg = cfg.em;
                em_cfg.fit = fit;
                em_cfg.seed = rng.substream("em").seed();
                em_cfg.init = start;
                auto path = mcem_run(z_o, mask, emb, model, em_cfg);
                rep.em.method = "em";
                rep.em.params = path.estimate();
                rep.em.wall_seconds = path.wall_seconds;
            }
            if (cfg.run_cl)
                rep.cl = composite_mle(z_o, mask, emb, model.family, fit, start, 4,
                                       cfg.cl_cond_size);
            if (whittle_ok)
                rep.whittle = whittle_mle(z_o, base, model.family, fit, start);

            std::lock_guard<std::mutex> lock(result_mutex);
            reps[r] = std::move(rep);
        });

        auto rms = [&](auto&& get) {
            double acc = 0.0;
            for (const auto& rep : reps) {
                const double d = get(rep);
                acc += d * d;
            }
            return std::sqrt(acc / reps.size());
        };
        auto param_of = [](const ParamSet& p, int which) {
            return which == 0 ? p.sigma2 : which == 1 ? p.lambda : p.mu;
        };
        const char* names[3] = {"sigma2", "lambda", "mu"};
        const double truth_vals[3] = {cfg.truth.sigma2, cfg.truth.lambda, cfg.truth.mu};
        for (int which = 0; which < 3; ++which) {
            StudyRow row;
            row.design = design.tag();
            row.param = names[which];
            row.R_star = rms([&](const StudyReplicate& rep) {
                return param_of(rep.exact.params, which) - truth_vals[which];
            });
            row.R_em = cfg.run_em ? rms([&](const StudyReplicate& rep) {
                return param_of(rep.em.params, which) -
                       param_of(rep.exact.params, which);
            }) : std::numeric_limits<double>::quiet_NaN();
            row.R_cl = cfg.run_cl ? rms([&](const StudyReplicate& rep) {
                return param_of(rep.cl.params, which) -
                       param_of(rep.exact.params, which);
            }) : std::numeric_limits<double>::quiet_NaN();
            row.R_whittle =
                whittle_ok ? rms([&](const StudyReplicate& rep) {
                    return param_of(rep.whittle.params, which) -
                           param_of(rep.exact.params, which);
                }) : std::numeric_limits<double>::quiet_NaN();
            result.rows.push_back(row);
        }
        for (auto& rep : reps) result.replicates.push_back(std::move(rep));
    }
    return result;
}

}  // namespace latgp
