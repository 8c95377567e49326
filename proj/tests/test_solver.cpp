#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "latgp/bccb.hpp"
#include "latgp/covariance.hpp"
#include "latgp/lattice.hpp"
#include "latgp/rng.hpp"
#include "latgp/simulate.hpp"
#include "latgp/solver.hpp"
#include "oracles.hpp"

using namespace latgp;

namespace {

const auto identity_precond = [](const FieldVector& x) { return x; };

/// Dense reassembly of sum_j L_j' V_j^{-1} L_j from the block sets, with
/// the conditional moments recomputed straight from the dense covariance.
Eigen::MatrixXd dense_precision(const VecchiaPrecond& pre, const Eigen::MatrixXd& Cobs) {
    const int n = pre.n;
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
    for (const auto& block : pre.blocks) {
        const int nj = static_cast<int>(block.pred.size());
        const int mj = static_cast<int>(block.cond.size());
        Eigen::MatrixXd L = Eigen::MatrixXd::Zero(nj, n);
        Eigen::MatrixXd V;
        if (mj > 0) {
            Eigen::MatrixXd Sbb(mj, mj), Sab(nj, mj), Saa(nj, nj);
            for (int i = 0; i < mj; ++i)
                for (int j = 0; j < mj; ++j) Sbb(i, j) = Cobs(block.cond[i], block.cond[j]);
            for (int i = 0; i < nj; ++i)
                for (int j = 0; j < mj; ++j) Sab(i, j) = Cobs(block.pred[i], block.cond[j]);
            for (int i = 0; i < nj; ++i)
                for (int j = 0; j < nj; ++j) Saa(i, j) = Cobs(block.pred[i], block.pred[j]);
            Eigen::MatrixXd K = Sab * Sbb.inverse();
            V = Saa - K * Sab.transpose();
            for (int i = 0; i < nj; ++i) L(i, block.pred[i]) = 1.0;
            for (int i = 0; i < nj; ++i)
                for (int j = 0; j < mj; ++j) L(i, block.cond[j]) -= K(i, j);
        } else {
            V.resize(nj, nj);
            for (int i = 0; i < nj; ++i)
                for (int j = 0; j < nj; ++j) V(i, j) = Cobs(block.pred[i], block.pred[j]);
            for (int i = 0; i < nj; ++i) L(i, block.pred[i]) = 1.0;
        }
        M += L.transpose() * V.inverse() * L;
    }
    return M;
}

}  // namespace

TEST_CASE("pcg on the identity system") {
    FieldVector b{1.0, -2.0, 3.0, 0.5};
    auto result = pcg_solve(identity_precond, identity_precond, b, PcgConfig{1e-10, 0});
    CHECK(result.converged);
    CHECK(result.iters <= 1);
    for (int i = 0; i < 4; ++i) CHECK(result.x[i] == Catch::Approx(b[i]).margin(1e-14));
}

TEST_CASE("pcg matches a dense factorization") {
    RandomStream rng(21);
    const int n = 20;
    Eigen::MatrixXd A0(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) A0(i, j) = rng.normal();
    Eigen::MatrixXd A = A0 * A0.transpose() + 0.5 * Eigen::MatrixXd::Identity(n, n);
    FieldVector b(n);
    rng.fill_normal(b);

    auto apply_A = [&](const FieldVector& x) {
        Eigen::Map<const Eigen::VectorXd> xe(x.data(), n);
        Eigen::VectorXd ye = A * xe;
        return FieldVector(ye.data(), ye.data() + n);
    };
    // rounding makes CG need more than n sweeps on this conditioning
    auto result = pcg_solve(apply_A, identity_precond, b, PcgConfig{1e-8, 400});
    CHECK(result.converged);

    Eigen::Map<const Eigen::VectorXd> be(b.data(), n);
    Eigen::VectorXd exact = A.llt().solve(be);
    for (int i = 0; i < n; ++i)
        CHECK(result.x[i] == Catch::Approx(exact[i]).epsilon(1e-6).margin(1e-8));
}

TEST_CASE("pcg detects indefinite operators") {
    auto negate = [](const FieldVector& x) {
        FieldVector y(x);
        for (double& v : y) v = -v;
        return y;
    };
    FieldVector b{1.0, 2.0};
    CHECK_THROWS_AS(pcg_solve(negate, identity_precond, b, PcgConfig{1e-8, 0}),
                    BreakdownZeroCurvatureError);
}

TEST_CASE("pcg flags non-convergence and returns the best iterate") {
    RandomStream rng(33);
    const int n = 30;
    Eigen::MatrixXd A0(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) A0(i, j) = rng.normal();
    Eigen::MatrixXd A = A0 * A0.transpose() + 1e-4 * Eigen::MatrixXd::Identity(n, n);
    FieldVector b(n);
    rng.fill_normal(b);
    auto apply_A = [&](const FieldVector& x) {
        Eigen::Map<const Eigen::VectorXd> xe(x.data(), n);
        Eigen::VectorXd ye = A * xe;
        return FieldVector(ye.data(), ye.data() + n);
    };
    auto result = pcg_solve(apply_A, identity_precond, b, PcgConfig{1e-12, 2});
    CHECK_FALSE(result.converged);
    CHECK(result.iters == 2);
    CHECK(result.rel_residual > 0.0);
}

TEST_CASE("vecchia block construction") {
    auto emb = build_embedding(build_lattice(32, 32, 0.7071), 1.5);
    CorrelationModel model = cutoff_model(CorrFamily::powered_exponential, emb);
    ParamSet p{0.0, 1.0, 0.10, 1.0, 0.01};
    auto mask = make_mask(emb, DesignSpec::complete());
    auto pre = build_vecchia(mask, emb, model, p, 4, 18);

    SECTION("first block is marginal, sizes are bounded") {
        CHECK(pre.blocks.front().cond.empty());
        std::set<int> seen;
        for (const auto& block : pre.blocks) {
            CHECK(block.pred.size() >= 1);
            CHECK(block.pred.size() <= 4);
            CHECK(block.cond.size() <= 18);
            for (int pos : block.pred) {
                CHECK(seen.count(pos) == 0);
                seen.insert(pos);
            }
            // conditioning only on previously ordered sites
            for (int pos : block.cond) CHECK(seen.count(pos) == 1);
        }
        CHECK(static_cast<int>(seen.size()) == mask.n);
    }

    SECTION("interior geometry is shared through the cache") {
        CHECK(pre.blocks.size() == 256);
        CHECK(pre.geoms.size() * 4 < pre.blocks.size());
        int max_uses = 0;
        for (const auto& g : pre.geoms) max_uses = std::max(max_uses, g.uses);
        CHECK(max_uses > 100);  // the repeated interior stencil
    }
}

TEST_CASE("vecchia_apply matches the dense block assembly") {
    auto base = build_lattice(4, 4, 1.0);
    auto emb = build_embedding(base, 1.0);
    CorrelationModel model{CorrFamily::powered_exponential, 0.0, 1.0};
    ParamSet p{0.0, 1.0, 1.3, 1.0, 0.05};
    auto mask = make_mask(emb, DesignSpec::random(0.35), RandomStream(4));
    REQUIRE(mask.n >= 9);

    auto pre = build_vecchia(mask, emb, model, p, 4, 5);
    auto dense = oracle::dense_corr(emb, model, p);
    auto Cobs = oracle::submatrix(dense, mask.observed, mask.observed);
    Eigen::MatrixXd M = dense_precision(pre, Cobs);

    RandomStream rng(8);
    FieldVector zero(mask.n, 0.0);
    auto wz = vecchia_apply(pre, zero);
    for (double v : wz) CHECK(v == 0.0);

    for (int t = 0; t < 5; ++t) {
        FieldVector x(mask.n);
        rng.fill_normal(x);
        auto w = vecchia_apply(pre, x);
        Eigen::Map<const Eigen::VectorXd> xe(x.data(), mask.n);
        Eigen::VectorXd we = M * xe;
        for (int i = 0; i < mask.n; ++i)
            CHECK(w[i] == Catch::Approx(we[i]).epsilon(1e-10).margin(1e-10));
    }

    SECTION("operator symmetry and positivity") {
        for (int t = 0; t < 5; ++t) {
            FieldVector x(mask.n), y(mask.n);
            rng.fill_normal(x);
            rng.fill_normal(y);
            const double xy = detail::dot(x, vecchia_apply(pre, y));
            const double yx = detail::dot(y, vecchia_apply(pre, x));
            CHECK(xy == Catch::Approx(yx).epsilon(1e-10).margin(1e-12));
            CHECK(detail::dot(x, vecchia_apply(pre, x)) > 0.0);
        }
    }
}

TEST_CASE("inverse-block preconditioner") {
    auto base = build_lattice(3, 3, 1.0);
    auto emb = build_embedding(base, 1.0);
    CorrelationModel model{CorrFamily::powered_exponential, 0.0, 1.0};
    ParamSet p{0.0, 1.0, 0.8, 1.0, 0.02};
    auto spec = eigenvalues(base_vector(emb, model, p), emb);
    auto dense = oracle::dense_corr(emb, model, p);
    RandomStream rng(17);

    SECTION("complete observation gives the exact inverse") {
        ObservationMask full;
        full.n = emb.size();
        for (int k = 0; k < emb.size(); ++k) full.observed.push_back(k);
        InvBlockPrecond M(spec, full);
        FieldVector x(emb.size());
        rng.fill_normal(x);
        auto y = M(x);
        Eigen::Map<const Eigen::VectorXd> xe(x.data(), x.size());
        Eigen::VectorXd ye = dense.llt().solve(xe);
        for (int i = 0; i < emb.size(); ++i)
            CHECK(y[i] == Catch::Approx(ye[i]).epsilon(1e-9).margin(1e-11));
    }

    SECTION("partial observation matches the dense principal block") {
        auto mask = make_mask(emb, DesignSpec::random(0.4), RandomStream(5));
        REQUIRE(!mask.unobserved.empty());
        REQUIRE(mask.n >= 2);
        InvBlockPrecond M(spec, mask);
        Eigen::MatrixXd inv = dense.inverse();
        Eigen::MatrixXd inv_oo = oracle::submatrix(inv, mask.observed, mask.observed);
        for (int t = 0; t < 5; ++t) {
            FieldVector x(mask.n);
            rng.fill_normal(x);
            auto y = M(x);
            Eigen::Map<const Eigen::VectorXd> xe(x.data(), mask.n);
            Eigen::VectorXd ye = inv_oo * xe;
            for (int i = 0; i < mask.n; ++i)
                CHECK(y[i] == Catch::Approx(ye[i]).epsilon(1e-10).margin(1e-11));
            CHECK(detail::dot(x, y) > 0.0);
        }
    }
}

TEST_CASE("preconditioned and plain solves agree; vecchia converges faster") {
    auto emb = build_embedding(build_lattice(32, 32, 0.7071), 1.5);
    CorrelationModel model = cutoff_model(CorrFamily::powered_exponential, emb);
    ParamSet p{10.0, 4.0, 0.10, 1.0, 0.01};
    auto spec = eigenvalues(base_vector(emb, model, p), emb);
    REQUIRE(spec.positive());
    auto mask = make_mask(emb, DesignSpec::complete());

    RandomStream rng(99);
    auto [field, spare] = unconditional_pair(spec, p, rng);
    (void)spare;
    auto [tilde, spare2] = unconditional_pair(spec, p, rng);
    (void)spare2;
    FieldVector data(mask.n);
    for (int i = 0; i < mask.n; ++i)
        data[i] = field[mask.observed[i]] - tilde[mask.observed[i]];

    ObservedBlockOp coo(spec, mask);
    auto pre = build_vecchia(mask, emb, model, p, 4, 52);
    auto apply_vecchia = [&](const FieldVector& x) { return vecchia_apply(pre, x); };

    PcgConfig cfg{1e-5, 0};
    auto plain = pcg_solve(coo, identity_precond, data, cfg);
    auto precond = pcg_solve(coo, apply_vecchia, data, cfg);
    CHECK(plain.converged);
    CHECK(precond.converged);
    CHECK(precond.iters < plain.iters);
    // reference scale: around five iterations on this grid
    CHECK(precond.iters <= 10);
    CHECK(precond.iters >= 2);

    // both solve the same system
    double diff = 0.0, scale = 0.0;
    for (int i = 0; i < mask.n; ++i) {
        diff = std::max(diff, std::fabs(plain.x[i] - precond.x[i]));
        scale = std::max(scale, std::fabs(precond.x[i]));
    }
    CHECK(diff <= 1e-3 * scale);
}
