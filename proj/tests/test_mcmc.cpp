#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "latgp/mcmc.hpp"
#include "oracles.hpp"

using namespace latgp;

TEST_CASE("proposal adaptation direction") {
    std::vector<double> sds{0.2, 0.2};
    std::vector<char> all_accept(200, 1);
    auto inflated = adapt_proposal(all_accept, 0.35, sds);
    CHECK(inflated[0] > sds[0]);
    CHECK(inflated[1] > sds[1]);

    std::vector<char> all_reject(200, 0);
    auto shrunk = adapt_proposal(all_reject, 0.35, sds);
    CHECK(shrunk[0] < sds[0]);
    CHECK(shrunk[1] < sds[1]);
}

TEST_CASE("zero-step proposals always accept") {
    auto base = build_lattice(2, 2, 1.0);
    EmbeddingSpec emb{3, 3, 1.5, 1.0, base};
    CorrelationModel model{CorrFamily::powered_exponential, 0.0, 1.0};
    PriorSpec prior{CorrFamily::powered_exponential, false};
    ParamSet p{0.2, 1.0, 0.6, 1.0, 0.0};
    RandomStream rng(55);
    FieldVector z(9);
    for (double& v : z) v = 0.2 + rng.normal();

    auto kern = theta_log_kernel(p, z, emb, model, prior);
    REQUIRE(kern.valid);
    const ThetaSpace ts = FitFlags{true, true, false, true}.space(model.family);
    std::vector<double> zero_sds(ts.dim(), 0.0);
    for (int t = 0; t < 20; ++t) {
        auto update = param_block_update(z, p, kern.log_kernel, ts, zero_sds, 0.0,
                                         emb, model, prior, rng);
        CHECK(update.accepted);
        CHECK(update.params.lambda == p.lambda);
        CHECK(update.params.shape == p.shape);
    }
}

TEST_CASE("block update leaves the stationary kernel invariant") {
    // fixed complete field on a tiny torus; the long-run histogram of the
    // range draws must match the marginal kernel computed on a grid
    auto base = build_lattice(2, 2, 1.0);
    EmbeddingSpec emb{4, 4, 2.0, 1.0, base};
    CorrelationModel model{CorrFamily::powered_exponential, 0.0, 1.0};
    PriorSpec prior{CorrFamily::powered_exponential, false};
    RandomStream data_rng(7);
    FieldVector z(emb.size());
    for (double& v : z) v = 0.5 + 0.8 * data_rng.normal();

    const FitFlags fit{true, false, false, true};  // range only
    const ThetaSpace ts = fit.space(model.family);
    std::vector<double> sds{0.6};

    ParamSet p{0.0, 1.0, 0.5, 1.0, 0.0};
    auto kern = theta_log_kernel(p, z, emb, model, prior);
    REQUIRE(kern.valid);
    double kernel_curr = kern.log_kernel;

    RandomStream rng(1234);
    const int steps = 60000;
    std::vector<double> lambdas;
    lambdas.reserve(steps);
    for (int t = 0; t < steps; ++t) {
        auto update = param_block_update(z, p, kernel_curr, ts, sds, 0.0, emb, model,
                                         prior, rng);
        if (update.accepted) {
            p = update.params;
            kernel_curr =
                theta_log_kernel(p, z, emb, model, prior).log_kernel;
        }
        lambdas.push_back(p.lambda);
    }

    // theoretical marginal on a fine grid (trapezoid-normalized)
    const int G = 1200;
    const double lo = 1e-3, hi = 12.0;
    std::vector<double> grid(G), dens(G);
    for (int g = 0; g < G; ++g) {
        grid[g] = lo * std::pow(hi / lo, g / double(G - 1));
        ParamSet pg = p;
        pg.lambda = grid[g];
        dens[g] = theta_log_kernel(pg, z, emb, model, prior).log_kernel;
    }
    const double peak = *std::max_element(dens.begin(), dens.end());
    double mass = 0.0;
    std::vector<double> cdf(G, 0.0);
    for (int g = 1; g < G; ++g) {
        const double cell = 0.5 * (std::exp(dens[g] - peak) + std::exp(dens[g - 1] - peak)) *
                            (grid[g] - grid[g - 1]);
        mass += cell;
        cdf[g] = mass;
    }
    for (double& v : cdf) v /= mass;

    // chi-square over decile bins of the theoretical law
    const int bins = 10;
    std::vector<double> edges(bins + 1);
    edges[0] = 0.0;
    edges[bins] = 1e9;
    for (int b = 1; b < bins; ++b) {
        const double target = b / double(bins);
        const auto it = std::lower_bound(cdf.begin(), cdf.end(), target);
        edges[b] = grid[std::distance(cdf.begin(), it)];
    }
    std::vector<int> counts(bins, 0);
    const int burn = 2000;
    for (int t = burn; t < steps; ++t) {
        const double l = lambdas[t];
        const int b = static_cast<int>(
            std::distance(edges.begin(),
                          std::upper_bound(edges.begin(), edges.end(), l)) - 1);
        counts[std::clamp(b, 0, bins - 1)]++;
    }
    const double kept = steps - burn;
    double chi2 = 0.0;
    for (int b = 0; b < bins; ++b) {
        const double expected = kept / bins;
        chi2 += (counts[b] - expected) * (counts[b] - expected) / expected;
    }
    // autocorrelated draws inflate the statistic; the gate is set at the
    // scale where a wrong kernel fails by orders of magnitude
    CHECK(chi2 / bins < 25.0);
}

TEST_CASE("geweke diagnostic") {
    RandomStream rng(3);
    std::vector<double> flat(4000);
    for (double& v : flat) v = rng.normal();
    CHECK(std::fabs(geweke_z(flat)) < 3.0);

    std::vector<double> trending(4000);
    for (std::size_t i = 0; i < trending.size(); ++i)
        trending[i] = 0.001 * i + rng.normal();
    CHECK(std::fabs(geweke_z(trending)) > 3.0);
}

TEST_CASE("gibbs_run on a small complete lattice") {
    auto base = build_lattice(16, 16, 1.0 / std::sqrt(2.0));
    auto emb = build_embedding(base, 1.5);
    CorrelationModel model = cutoff_model(CorrFamily::powered_exponential, emb);
    PriorSpec prior{CorrFamily::powered_exponential, false};
    ParamSet truth{10.0, 4.0, 0.10, 1.0, 0.01};

    auto spec = eigenvalues(base_vector(emb, model, truth), emb);
    REQUIRE(spec.positive());
    auto mask = make_mask(emb, DesignSpec::complete());
    RandomStream rng(2024);
    auto [field, spare] = unconditional_pair(spec, truth, rng);
    (void)spare;
    FieldVector z_o(mask.n);
    for (int i = 0; i < mask.n; ++i) z_o[i] = field[mask.observed[i]];

    McmcConfig cfg;
    cfg.iterations = 500;
    cfg.burn_in = 200;
    cfg.seed = 11;
    cfg.fit = FitFlags{true, true, false, true};
    cfg.init = truth;

    auto chain = gibbs_run(z_o, mask, emb, model, prior, cfg);
    REQUIRE(chain.draws.size() == 300);
    CHECK(chain.accept_rate > 0.05);
    CHECK(chain.accept_rate < 0.80);
    CHECK(chain.total_pcg_iters > 0);
    CHECK(chain.field_snapshots.size() == 3);

    // no posterior uncertainty at the observation sites
    for (int i = 0; i < mask.n; ++i) {
        CHECK(chain.field_sd[mask.observed[i]] == 0.0);
        CHECK(chain.field_mean[mask.observed[i]] ==
              Catch::Approx(z_o[i]).margin(1e-12));
    }
    // and strictly positive uncertainty in the embedding ring
    double ring_sd = 0.0;
    for (std::size_t i = 0; i < mask.unobserved.size(); ++i)
        ring_sd = std::max(ring_sd, chain.field_sd[mask.unobserved[i]]);
    CHECK(ring_sd > 0.1);

    // draws wander around plausible values
    double mean_sigma2 = 0.0;
    for (const auto& d : chain.draws) mean_sigma2 += d.sigma2;
    mean_sigma2 /= chain.draws.size();
    CHECK(mean_sigma2 > 0.5);
    CHECK(mean_sigma2 < 40.0);
}

TEST_CASE("gibbs_run skips the solver when everything is observed") {
    auto base = build_lattice(2, 2, 1.0);
    EmbeddingSpec emb{4, 4, 2.0, 1.0, base};
    CorrelationModel model{CorrFamily::powered_exponential, 0.0, 1.0};
    PriorSpec prior{CorrFamily::powered_exponential, false};

    ObservationMask full;
    full.n = emb.size();
    for (int k = 0; k < emb.size(); ++k) full.observed.push_back(k);
    full.design_tag = "full";

    RandomStream rng(5);
    FieldVector z_o(emb.size());
    for (double& v : z_o) v = 1.0 + rng.normal();

    McmcConfig cfg;
    cfg.iterations = 60;
    cfg.burn_in = 20;
    cfg.seed = 3;
    cfg.fit = FitFlags{true, false, false, true};
    cfg.init = ParamSet{1.0, 1.0, 0.4, 1.0, 0.0};
    cfg.precond = PrecondKind::none;

    auto chain = gibbs_run(z_o, full, emb, model, prior, cfg);
    CHECK(chain.total_pcg_iters == 0);
    for (const auto& d : chain.draws) CHECK(d.pcg_iters == 0);
}

TEST_CASE("gibbs_run rejects an indefinite start") {
    auto base = build_lattice(2, 2, 2.0);
    auto emb = build_embedding(base, 1.0);
    CorrelationModel model{CorrFamily::powered_exponential, 0.0, 1.0};
    PriorSpec prior{CorrFamily::powered_exponential, false};
    auto mask = make_mask(emb, DesignSpec::complete());
    FieldVector z_o(mask.n, 0.0);
    z_o[0] = 1.0;
    z_o[1] = -0.5;
    z_o[2] = 0.25;

    McmcConfig cfg;
    cfg.iterations = 10;
    cfg.burn_in = 2;
    cfg.init = ParamSet{0.0, 1.0, 2.0, 2.0, 0.0};  // indefinite squared exponential
    CHECK_THROWS_AS(gibbs_run(z_o, mask, emb, model, prior, cfg), InitializationError);
}

TEST_CASE("posterior spread shrinks with lattice density except for the mean",
          "[slow]") {
    const ParamSet truth{10.0, 4.0, 0.10, 1.0, 0.01};

    auto run_once = [&](int n1) {
        auto base = build_lattice(n1, n1, 1.0 / std::sqrt(2.0));
        auto emb = build_embedding(base, 1.5);
        CorrelationModel model = cutoff_model(CorrFamily::powered_exponential, emb);
        PriorSpec prior{model.family, false};
        auto spec = eigenvalues(base_vector(emb, model, truth), emb);
        REQUIRE(spec.positive());
        auto mask = make_mask(emb, DesignSpec::complete());
        RandomStream rng = RandomStream(5150).substream("data", n1);
        auto [field, spare] = unconditional_pair(spec, truth, rng);
        (void)spare;
        FieldVector z_o(mask.n);
        for (int i = 0; i < mask.n; ++i) z_o[i] = field[mask.observed[i]];

        McmcConfig cfg;
        cfg.iterations = 1000;
        cfg.burn_in = 250;
        cfg.seed = 5151 + n1;
        cfg.fit = FitFlags{true, true, false, true};
        cfg.init = truth;
        auto chain = gibbs_run(z_o, mask, emb, model, prior, cfg);

        auto sd = [&](auto&& get) {
            double mean = 0.0;
            for (const auto& d : chain.draws) mean += get(d);
            mean /= chain.draws.size();
            double var = 0.0;
            for (const auto& d : chain.draws) var += std::pow(get(d) - mean, 2);
            return std::sqrt(var / (chain.draws.size() - 1));
        };
        struct Out {
            double mu, sigma2, lambda, shape;
        };
        return Out{sd([](const ParamDraw& d) { return d.mu; }),
                   sd([](const ParamDraw& d) { return d.sigma2; }),
                   sd([](const ParamDraw& d) { return d.lambda; }),
                   sd([](const ParamDraw& d) { return d.shape; })};
    };

    auto coarse = run_once(32);
    auto fine = run_once(64);
    CHECK(fine.sigma2 < coarse.sigma2);
    CHECK(fine.lambda < coarse.lambda);
    CHECK(fine.shape < coarse.shape);
    // the mean keeps its spread under infill: bounded by the domain, not n
    CHECK(fine.mu > 0.4 * coarse.mu);
}

TEST_CASE("gibbs_run with a matern model and sampled noise ratio") {
    auto base = build_lattice(12, 12, 1.0 / std::sqrt(2.0));
    auto emb = build_embedding(base, 1.5);
    CorrelationModel model = cutoff_model(CorrFamily::matern, emb);
    PriorSpec prior{CorrFamily::matern, true};
    ParamSet truth{5.0, 1.5, 0.12, 0.8, 0.05};
    auto spec = eigenvalues(base_vector(emb, model, truth), emb);
    REQUIRE(spec.positive());
    auto mask = make_mask(emb, DesignSpec::random(0.1), RandomStream(61));
    RandomStream rng(62);
    auto [field, spare] = unconditional_pair(spec, truth, rng);
    (void)spare;
    FieldVector z_o(mask.n);
    for (int i = 0; i < mask.n; ++i) z_o[i] = field[mask.observed[i]];

    McmcConfig cfg;
    cfg.iterations = 150;
    cfg.burn_in = 50;
    cfg.seed = 63;
    cfg.fit = FitFlags{true, true, true, true};  // lambda, nu, c all sampled
    cfg.cond_size = 12;
    cfg.init = truth;
    auto chain = gibbs_run(z_o, mask, emb, model, prior, cfg);
    REQUIRE(chain.draws.size() == 100);
    for (const auto& d : chain.draws) {
        CHECK(d.shape > 0.0);
        CHECK(d.shape <= 50.0);
        CHECK(d.c >= 0.0);
        CHECK(d.c <= 10.0);
        CHECK(std::isfinite(d.sigma2));
    }
}
