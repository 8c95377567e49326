#include <catch2/catch_amalgamated.hpp>

#include <cmath>

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
}

TEST_CASE("unconditional_pair moments") {
    auto emb = build_embedding(build_lattice(4, 4, 1.0), 1.0);  // 8x8 torus
    CorrelationModel model{CorrFamily::powered_exponential, 0.0, 1.0};
    ParamSet p{3.0, 2.5, 0.4, 1.0, 0.0};
    auto spec = eigenvalues(base_vector(emb, model, p), emb);
    REQUIRE(spec.positive());

    SECTION("degenerate variance collapses to the mean") {
        ParamSet p0 = p;
        p0.sigma2 = 0.0;
        RandomStream rng(1);
        auto [z1, z2] = unconditional_pair(spec, p0, rng);
        for (double v : z1) CHECK(v == Catch::Approx(p.mu).margin(1e-12));
        for (double v : z2) CHECK(v == Catch::Approx(p.mu).margin(1e-12));
    }

    SECTION("sample mean, lag-1 correlation, and pair independence") {
        RandomStream rng(2);
        const int pairs = 5000;
        const int N = emb.size();
        double mean_acc = 0.0;
        double cov01 = 0.0, var0 = 0.0, var1 = 0.0;  // neighboring sites 0 and 1
        double cross = 0.0;                           // between the two pair fields
        for (int m = 0; m < pairs; ++m) {
            auto [z1, z2] = unconditional_pair(spec, p, rng);
            mean_acc += z1[0] + z2[0];
            cov01 += (z1[0] - p.mu) * (z1[1] - p.mu);
            var0 += (z1[0] - p.mu) * (z1[0] - p.mu);
            var1 += (z1[1] - p.mu) * (z1[1] - p.mu);
            cross += (z1[0] - p.mu) * (z2[0] - p.mu);
            (void)N;
        }
        const int M = 2 * pairs;
        const double mean = mean_acc / M;
        CHECK(std::fabs(mean - p.mu) <= 4.0 * std::sqrt(p.sigma2 / M));

        const double corr01 = cov01 / std::sqrt(var0 * var1);
        const double expected = modified_corr(model, emb.delta(), p);
        CHECK(std::fabs(corr01 - expected) <= 4.0 / std::sqrt(double(pairs)));

        const double cross_corr = cross / pairs / p.sigma2;
        CHECK(std::fabs(cross_corr) <= 4.0 / std::sqrt(double(pairs)));
    }
}

TEST_CASE("conditional_draw with nothing unobserved") {
    auto emb = build_embedding(build_lattice(2, 2, 1.0), 1.0);
    CorrelationModel model{CorrFamily::powered_exponential, 0.0, 1.0};
    ParamSet p{0.0, 1.0, 0.5, 1.0, 0.01};
    auto spec = eigenvalues(base_vector(emb, model, p), emb);
    ObservationMask full;
    full.n = emb.size();
    for (int k = 0; k < emb.size(); ++k) full.observed.push_back(k);

    FieldVector z_o(emb.size(), 1.0);
    RandomStream rng(3);
    auto draw = conditional_draw(z_o, full, spec, p, identity_precond,
                                 PcgConfig{1e-8, 0}, rng);
    CHECK(draw.z_u.empty());
    CHECK(draw.solver_iters == 0);
    CHECK(draw.converged);
}

TEST_CASE("conditional_draw reproduces its own field on zero residual") {
    auto emb = build_embedding(build_lattice(4, 4, 1.0), 1.0);
    CorrelationModel model{CorrFamily::powered_exponential, 0.0, 1.0};
    ParamSet p{1.0, 2.0, 0.4, 1.0, 0.0};
    auto spec = eigenvalues(base_vector(emb, model, p), emb);
    auto mask = make_mask(emb, DesignSpec::complete());

    RandomStream rng_a(77);
    auto [field, spare] = unconditional_pair(spec, p, rng_a);
    (void)spare;
    FieldVector z_o(mask.n);
    for (int i = 0; i < mask.n; ++i) z_o[i] = field[mask.observed[i]];

    RandomStream rng_b(77);  // same stream: the internal draw equals `field`
    auto draw = conditional_draw(z_o, mask, spec, p, identity_precond,
                                 PcgConfig{1e-10, 0}, rng_b);
    CHECK(draw.solver_iters == 0);  // eta is exactly zero
    for (std::size_t i = 0; i < mask.unobserved.size(); ++i)
        CHECK(draw.z_u[i] == Catch::Approx(field[mask.unobserved[i]]).margin(1e-12));
}

TEST_CASE("conditional draws follow the dense conditional law") {
    // 6x6 base in an 8x8 torus: wrapping is active and the law must still hold.
    auto base = build_lattice(6, 6, 1.0);
    EmbeddingSpec emb{8, 8, 4.0 * base.delta, 1.0, base};
    CorrelationModel model{CorrFamily::powered_exponential, 0.0, 1.0};
    ParamSet p{2.0, 1.5, 0.22, 1.0, 0.01};
    auto spec = eigenvalues(base_vector(emb, model, p), emb);
    REQUIRE(spec.positive());
    auto mask = make_mask(emb, DesignSpec::disk(0.2));
    REQUIRE(!mask.unobserved.empty());

    // observed data drawn from the same model
    RandomStream rng(5);
    auto [truth, spare0] = unconditional_pair(spec, p, rng);
    (void)spare0;
    FieldVector z_o(mask.n);
    for (int i = 0; i < mask.n; ++i) z_o[i] = truth[mask.observed[i]];

    auto dense = oracle::dense_corr(emb, model, p);
    auto moments = oracle::conditional_moments(dense, mask, z_o, p.mu, p.sigma2);

    const int M = 5000;
    std::vector<Eigen::VectorXd> draws;
    draws.reserve(M);
    ConditionalSimulator sim(z_o, mask, spec, p, identity_precond, PcgConfig{1e-9, 0});
    RandomStream draw_rng(6);
    const int nu = static_cast<int>(mask.unobserved.size());
    for (int m = 0; m < M; ++m) {
        auto field = sim.draw_complete(draw_rng);
        Eigen::VectorXd zu(nu);
        for (int i = 0; i < nu; ++i) zu[i] = field[mask.unobserved[i]];
        draws.push_back(zu);
        // observed slots reproduce the data exactly
        for (int i = 0; i < mask.n; ++i) CHECK(field[mask.observed[i]] == z_o[i]);
    }
    auto mom = oracle::sample_moments(draws);
    for (int i = 0; i < nu; ++i) {
        const double se = std::sqrt(moments.cov(i, i) / M);
        CHECK(std::fabs(mom.mean[i] - moments.mean[i]) <= 4.0 * se);
    }
    for (int i = 0; i < nu; ++i)
        for (int j = 0; j < nu; ++j) {
            const double se = std::sqrt((moments.cov(i, i) * moments.cov(j, j) +
                                         moments.cov(i, j) * moments.cov(i, j)) / M);
            CHECK(std::fabs(mom.cov(i, j) - moments.cov(i, j)) <= 4.0 * se);
        }
}

TEST_CASE("conditional_mean") {
    auto emb = build_embedding(build_lattice(4, 4, 1.0), 1.0);
    CorrelationModel model{CorrFamily::powered_exponential, 0.0, 1.0};
    ParamSet p{1.5, 2.0, 0.4, 1.0, 0.02};
    auto spec = eigenvalues(base_vector(emb, model, p), emb);
    auto mask = make_mask(emb, DesignSpec::random(0.3), RandomStream(9));
    REQUIRE(!mask.unobserved.empty());

    SECTION("prior mean is a fixed point") {
        FieldVector z_o(mask.n, p.mu);
        auto mean = conditional_mean(z_o, mask, spec, p, identity_precond,
                                     PcgConfig{1e-10, 0});
        for (double v : mean) CHECK(v == Catch::Approx(p.mu).margin(1e-9));
    }

    SECTION("matches the dense kriging formula") {
        RandomStream rng(10);
        FieldVector z_o(mask.n);
        for (double& v : z_o) v = p.mu + rng.normal();
        auto mean = conditional_mean(z_o, mask, spec, p, identity_precond,
                                     PcgConfig{1e-8, 0});
        auto dense = oracle::dense_corr(emb, model, p);
        auto moments = oracle::conditional_moments(dense, mask, z_o, p.mu, p.sigma2);
        for (int i = 0; i < mask.n; ++i) CHECK(mean[mask.observed[i]] == z_o[i]);
        for (std::size_t i = 0; i < mask.unobserved.size(); ++i)
            CHECK(mean[mask.unobserved[i]] ==
                  Catch::Approx(moments.mean[i]).margin(1e-6));
    }
}
