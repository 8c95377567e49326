#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <utility>
#include <vector>

#include "latgp/bccb.hpp"
#include "latgp/covariance.hpp"
#include "latgp/errors.hpp"
#include "latgp/lattice.hpp"

namespace latgp {

struct PcgConfig {
    double tolerance = 1e-5;
    int max_iters = 0;  // 0: defaults to system size
};

struct PcgResult {
    FieldVector x;
    int iters = 0;
    double rel_residual = 0.0;
    bool converged = false;
    std::vector<double> residual_trace;
};

namespace detail {

inline double dot(const FieldVector& a, const FieldVector& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double norm2(const FieldVector& a) { return std::sqrt(dot(a, a)); }

}  // namespace detail

/// Preconditioned conjugate gradient for s.p.d. operators. Starts from
/// x0 = M^{-1} b and stops when |r_k| / |r_0| < tolerance. Returns the best
/// iterate with converged = false if the cap is reached.
template <class ApplyA, class ApplyM>
PcgResult pcg_solve(ApplyA&& apply_A, ApplyM&& apply_Minv, const FieldVector& b,
                    const PcgConfig& cfg) {
    if (!(cfg.tolerance > 0.0 && cfg.tolerance < 1.0))
        throw ConfigError("pcg tolerance must lie in (0, 1)");
    const std::size_t n = b.size();
    const int max_iters = cfg.max_iters > 0 ? cfg.max_iters : static_cast<int>(n);

    PcgResult res;
    res.x = apply_Minv(b);
    FieldVector Ax = apply_A(res.x);
    FieldVector r(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - Ax[i];
    const double r0_norm = detail::norm2(r);
    res.residual_trace.push_back(r0_norm > 0 ? 1.0 : 0.0);
    if (r0_norm == 0.0) {
        res.converged = true;
        return res;
    }
    FieldVector z = apply_Minv(r);
    FieldVector p = z;
    double rz = detail::dot(r, z);
    for (int k = 0; k < max_iters; ++k) {
        FieldVector Ap = apply_A(p);
        const double pAp = detail::dot(p, Ap);
        if (!(pAp > 0.0))
            throw BreakdownZeroCurvatureError("pcg: operator not positive definite");
        const double alpha = rz / pAp;
        for (std::size_t i = 0; i < n; ++i) {
            res.x[i] += alpha * p[i];
            r[i] -= alpha * Ap[i];
        }
        res.iters = k + 1;
        const double rel = detail::norm2(r) / r0_norm;
        res.residual_trace.push_back(rel);
        if (rel < cfg.tolerance) {
            res.converged = true;
            res.rel_residual = rel;
            return res;
        }
        z = apply_Minv(r);
        const double rz_next = detail::dot(r, z);
        const double beta = rz_next / rz;
        rz = rz_next;
        for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
    }
    res.rel_residual = res.residual_trace.back();
    res.converged = false;
    return res;
}

/// One conditional-regression block of the composite-likelihood precision:
/// a prediction set of up to pred_size observed sites regressed on the
/// cond set of previously ordered neighbors. Identical geometries share
/// one record.
struct VecchiaGeometry {
    Eigen::MatrixXd K;     // regression coefficients, n_j x m_j
    Eigen::MatrixXd Vinv;  // residual precision, n_j x n_j
    double logdetV = 0.0;
    int uses = 0;
};

struct VecchiaBlock {
    std::vector<int> pred;  // positions in the observed ordering
    std::vector<int> cond;
    int geom = -1;
};

struct VecchiaPrecond {
    std::vector<VecchiaBlock> blocks;
    std::vector<VecchiaGeometry> geoms;
    int n = 0;
    int pred_size = 4;
    int cond_size = 0;
};

namespace detail {

/// Greedy 2x2 quads over the base lattice in lexicographic cell order;
/// incomplete quads near boundaries or missing regions shrink to 1-3 sites.
/// Conditioning sets are the cond_size nearest previously emitted observed
/// sites by plain Euclidean distance, ties broken by lower linear index.
template <class CovFn>
VecchiaPrecond build_blocks(const ObservationMask& mask, const EmbeddingSpec& emb,
                            CovFn&& cov, int pred_size, int cond_size) {
    if (pred_size != 1 && pred_size != 4)
        throw ConfigError("prediction sets support size 1 (singletons) or 4 (quads)");
    if (cond_size < 0) throw ConfigError("conditioning size must be nonnegative");

    const int n1 = emb.base.n1, n2 = emb.base.n2;
    std::vector<int> obs_pos(static_cast<std::size_t>(emb.size()), -1);
    for (int i = 0; i < mask.n; ++i) obs_pos[mask.observed[i]] = i;

    std::vector<char> observed(static_cast<std::size_t>(n1) * n2, 0);
    for (int idx : mask.observed) {
        const int i = idx / emb.N2, j = idx % emb.N2;
        if (i >= n1 || j >= n2)
            throw DimensionError(
                "block construction requires observed sites inside the base footprint");
        observed[i * n2 + j] = 1;
    }

    VecchiaPrecond pre;
    pre.n = mask.n;
    pre.pred_size = pred_size;
    pre.cond_size = cond_size;

    std::vector<char> prev(static_cast<std::size_t>(n1) * n2, 0);
    int prev_count = 0;
    std::map<std::vector<int>, int> geom_index;

    struct Site {
        int i, j;
    };
    const int quad = (pred_size == 4) ? 2 : 1;  // only 2x2 or singleton tiling

    auto search_neighbors = [&](int ai, int aj) {
        std::vector<std::pair<long, int>> found;  // (squared site distance, base idx)
        if (prev_count == 0 || cond_size == 0) return found;
        const int max_rad = std::max(n1, n2);
        long kth = -1;
        for (int rad = 1; rad <= max_rad; ++rad) {
            const int ilo = std::max(0, ai - rad), ihi = std::min(n1 - 1, ai + rad);
            const int jlo = std::max(0, aj - rad), jhi = std::min(n2 - 1, aj + rad);
            auto visit = [&](int i, int j) {
                if (!prev[i * n2 + j]) return;
                const long di = i - ai, dj = j - aj;
                found.emplace_back(di * di + dj * dj, i * n2 + j);
            };
            for (int j = jlo; j <= jhi; ++j) {
                if (ai - rad >= 0) visit(ai - rad, j);
                if (ai + rad <= n1 - 1) visit(ai + rad, j);
            }
            for (int i = std::max(ilo, ai - rad + 1); i <= std::min(ihi, ai + rad - 1); ++i) {
                if (aj - rad >= 0) visit(i, aj - rad);
                if (aj + rad <= n2 - 1) visit(i, aj + rad);
            }
            if (static_cast<int>(found.size()) >= cond_size) {
                std::nth_element(found.begin(), found.begin() + (cond_size - 1),
                                 found.end());
                kth = found[cond_size - 1].first;
                const long next_min = static_cast<long>(rad + 1) * (rad + 1);
                if (next_min > kth) break;
            }
            if (static_cast<int>(found.size()) >= prev_count) break;
        }
        std::sort(found.begin(), found.end());
        if (static_cast<int>(found.size()) > cond_size) found.resize(cond_size);
        return found;
    };

    for (int a = 0; a < n1; a += quad) {
        for (int b = 0; b < n2; b += quad) {
            std::vector<Site> sites;
            for (int di = 0; di < quad; ++di)
                for (int dj = 0; dj < quad; ++dj) {
                    const int i = a + di, j = b + dj;
                    if (i < n1 && j < n2 && observed[i * n2 + j]) sites.push_back({i, j});
                }
            if (sites.empty()) continue;

            const int ai = sites.front().i, aj = sites.front().j;
            auto neighbors = search_neighbors(ai, aj);

            VecchiaBlock block;
            std::vector<int> signature;
            signature.reserve(2 * (sites.size() + neighbors.size()) + 1);
            std::vector<int> emb_idx;
            for (const Site& s : sites) {
                block.pred.push_back(obs_pos[emb.index(s.i, s.j)]);
                emb_idx.push_back(emb.index(s.i, s.j));
                signature.push_back(s.i - ai);
                signature.push_back(s.j - aj);
            }
            signature.push_back(INT32_MIN);  // separates prediction from conditioning
            for (const auto& [d2, bidx] : neighbors) {
                const int i = bidx / n2, j = bidx % n2;
                block.cond.push_back(obs_pos[emb.index(i, j)]);
                emb_idx.push_back(emb.index(i, j));
                signature.push_back(i - ai);
                signature.push_back(j - aj);
            }

            auto [it, inserted] = geom_index.try_emplace(
                std::move(signature), static_cast<int>(pre.geoms.size()));
            if (inserted) {
                const int nj = static_cast<int>(block.pred.size());
                const int mj = static_cast<int>(block.cond.size());
                Eigen::MatrixXd full(nj + mj, nj + mj);
                for (int p = 0; p < nj + mj; ++p)
                    for (int q = 0; q <= p; ++q) {
                        const double v = cov(emb_idx[p], emb_idx[q]);
                        full(p, q) = v;
                        full(q, p) = v;
                    }
                VecchiaGeometry geo;
                Eigen::MatrixXd V;
                if (mj > 0) {
                    Eigen::MatrixXd Sbb = full.bottomRightCorner(mj, mj);
                    Eigen::MatrixXd Sab = full.topRightCorner(nj, mj);
                    Eigen::LLT<Eigen::MatrixXd> llt(Sbb);
                    if (llt.info() != Eigen::Success) {
                        Sbb.diagonal().array() += 1e-10 * Sbb.diagonal().mean();
                        llt.compute(Sbb);
                        if (llt.info() != Eigen::Success)
                            throw SingularConditioningSetError(
                                "conditioning covariance is numerically singular");
                    }
                    geo.K = llt.solve(Sab.transpose()).transpose();
                    V = full.topLeftCorner(nj, nj) - geo.K * Sab.transpose();
                    V = 0.5 * (V + V.transpose()).eval();
                } else {
                    geo.K.resize(nj, 0);
                    V = full;
                }
                Eigen::LLT<Eigen::MatrixXd> lltV(V);
                if (lltV.info() != Eigen::Success)
                    throw SingularConditioningSetError(
                        "residual covariance is numerically singular");
                geo.logdetV =
                    2.0 * lltV.matrixL().toDenseMatrix().diagonal().array().log().sum();
                geo.Vinv = lltV.solve(Eigen::MatrixXd::Identity(nj, nj));
                pre.geoms.push_back(std::move(geo));
            }
            block.geom = it->second;
            pre.geoms[block.geom].uses++;
            pre.blocks.push_back(std::move(block));

            for (const Site& s : sites) {
                prev[s.i * n2 + s.j] = 1;
                ++prev_count;
            }
        }
    }
    return pre;
}

}  // namespace detail

/// Precision approximation used as PCG preconditioner: covariance entries
/// come from the same periodized correlation as the embedding matrix, so
/// the operator approximates the inverse of its observed block.
inline VecchiaPrecond build_vecchia(const ObservationMask& mask, const EmbeddingSpec& emb,
                                    const CorrelationModel& model, const ParamSet& p,
                                    int pred_size = 4, int cond_size = 52) {
    auto cov = [&](int idx_a, int idx_b) {
        return modified_corr(model, wrap_distance(emb, idx_a, idx_b), p);
    };
    return detail::build_blocks(mask, emb, cov, pred_size, cond_size);
}

/// Same block structure over the raw (unperiodized) correlation at plain
/// distances; used by the composite-likelihood estimator.
inline VecchiaPrecond build_composite_blocks(const ObservationMask& mask,
                                             const EmbeddingSpec& emb,
                                             CorrFamily family, const ParamSet& p,
                                             int pred_size = 4, int cond_size = 52) {
    const double delta = emb.delta();
    auto cov = [&](int idx_a, int idx_b) {
        const int ia = idx_a / emb.N2, ja = idx_a % emb.N2;
        const int ib = idx_b / emb.N2, jb = idx_b % emb.N2;
        const double h = std::hypot((ia - ib) * delta, (ja - jb) * delta);
        return raw_corr(family, h, p);
    };
    return detail::build_blocks(mask, emb, cov, pred_size, cond_size);
}

/// w = sum_j L_j' V_j^{-1} L_j x with L_j = [I, -K_j] over (pred, cond).
inline FieldVector vecchia_apply(const VecchiaPrecond& pre, const FieldVector& x) {
    if (static_cast<int>(x.size()) != pre.n)
        throw DimensionError("vecchia_apply: vector length mismatch");
    FieldVector w(x.size(), 0.0);
    Eigen::VectorXd xa, xb, u;
    for (const VecchiaBlock& block : pre.blocks) {
        const VecchiaGeometry& geo = pre.geoms[block.geom];
        const int nj = static_cast<int>(block.pred.size());
        const int mj = static_cast<int>(block.cond.size());
        xa.resize(nj);
        for (int i = 0; i < nj; ++i) xa[i] = x[block.pred[i]];
        if (mj > 0) {
            xb.resize(mj);
            for (int i = 0; i < mj; ++i) xb[i] = x[block.cond[i]];
            xa.noalias() -= geo.K * xb;
        }
        u.noalias() = geo.Vinv * xa;
        for (int i = 0; i < nj; ++i) w[block.pred[i]] += u[i];
        if (mj > 0) {
            Eigen::VectorXd back = geo.K.transpose() * u;
            for (int i = 0; i < mj; ++i) w[block.cond[i]] -= back[i];
        }
    }
    return w;
}

/// Observed block of the complete-data precision matrix, applied through
/// two FFTs with inverse-eigenvalue scaling.
class InvBlockPrecond {
public:
    InvBlockPrecond(const EigenSpectrum& spec, const ObservationMask& mask)
        : spec_(&spec), mask_(&mask) {
        spec.require_positive();
    }

    FieldVector operator()(const FieldVector& x_o) const {
        if (static_cast<int>(x_o.size()) != mask_->n)
            throw DimensionError("inv_block_precond: observed length mismatch");
        ComplexField z(spec_->size(), 0.0);
        for (int i = 0; i < mask_->n; ++i) z[mask_->observed[i]] = x_o[i];
        spec_->fft->forward(z);
        for (std::size_t k = 0; k < z.size(); ++k) z[k] /= spec_->values[k];
        spec_->fft->inverse(z);
        FieldVector out(mask_->n);
        for (int i = 0; i < mask_->n; ++i) out[i] = z[mask_->observed[i]].real();
        return out;
    }

private:
    const EigenSpectrum* spec_;
    const ObservationMask* mask_;
};

/// C_oo x via zero padding; the per-iteration operator inside PCG.
class ObservedBlockOp {
public:
    ObservedBlockOp(const EigenSpectrum& spec, const ObservationMask& mask)
        : spec_(&spec), mask_(&mask) {}

    FieldVector operator()(const FieldVector& x_o) const {
        if (static_cast<int>(x_o.size()) != mask_->n)
            throw DimensionError("observed_block_op: observed length mismatch");
        ComplexField z(spec_->size(), 0.0);
        for (int i = 0; i < mask_->n; ++i) z[mask_->observed[i]] = x_o[i];
        spec_->fft->forward(z);
        for (std::size_t k = 0; k < z.size(); ++k) z[k] *= spec_->values[k];
        spec_->fft->inverse(z);
        FieldVector out(mask_->n);
        for (int i = 0; i < mask_->n; ++i) out[i] = z[mask_->observed[i]].real();
        return out;
    }

private:
    const EigenSpectrum* spec_;
    const ObservationMask* mask_;
};

}  // namespace latgp
