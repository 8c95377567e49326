// latgp command-line harness: simulation and parameter estimation for
// Gaussian random fields on (incomplete) lattices.
//
// Every run is driven by a JSON config (strictly validated: unknown keys
// are rejected) and writes its artifacts plus a manifest.json that is
// sufficient to reproduce the run bit for bit.
//
// Exit codes: 0 success, 2 config/validation error, 3 numerical failure,
// 4 I/O error.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>

#include "latgp/baselines.hpp"
#include "latgp/bccb.hpp"
#include "latgp/covariance.hpp"
#include "latgp/em.hpp"
#include "latgp/errors.hpp"
#include "latgp/grid_io.hpp"
#include "latgp/lattice.hpp"
#include "latgp/likelihood.hpp"
#include "latgp/mcmc.hpp"
#include "latgp/simulate.hpp"
#include "latgp/solver.hpp"
#include "latgp/version.hpp"

using nlohmann::json;
namespace fs = std::filesystem;
using namespace latgp;

namespace {

struct CliOptions {
    std::string config_path;
    std::string out_dir;
    std::string command;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 1;
    bool verbose = false;
};

void require_keys(const json& obj, const std::string& where,
                  const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (!allowed.count(key))
            throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

template <class T>
T get_or(const json& obj, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("key '" + key + "' has the wrong type");
    }
}

template <class T>
T need(const json& obj, const std::string& key, const std::string& where) {
    if (!obj.contains(key)) throw ConfigError("missing key '" + key + "' in " + where);
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("key '" + key + "' in " + where + " has the wrong type");
    }
}

CorrFamily parse_family(const std::string& name) {
    if (name == "powered_exponential" || name == "powexp") 
        return CorrFamily::powered_exponential;
    if (name == "matern") return CorrFamily::matern;
    throw ConfigError("unknown correlation family '" + name + "'");
}

ParamSet parse_params(const json& model) {
    require_keys(model, "model",
                 {"family", "mu", "sigma2", "lambda", "shape", "c", "cutoff"});
    ParamSet p;
    p.mu = get_or(model, "mu", 0.0);
    p.sigma2 = get_or(model, "sigma2", 1.0);
    p.lambda = need<double>(model, "lambda", "model");
    p.shape = get_or(model, "shape", 1.0);
    p.c = get_or(model, "c", 0.0);
    return p;
}

DesignSpec parse_design(const json& cfg) {
    if (!cfg.contains("design")) return DesignSpec::complete();
    const json& d = cfg.at("design");
    require_keys(d, "design", {"kind", "p", "mask_path"});
    const std::string kind = need<std::string>(d, "kind", "design");
    if (kind == "complete") return DesignSpec::complete();
    if (kind == "random") return DesignSpec::random(need<double>(d, "p", "design"));
    if (kind == "disk") return DesignSpec::disk(need<double>(d, "p", "design"));
    if (kind == "file") {
        DesignSpec spec;
        spec.kind = DesignSpec::Kind::file;
        return spec;
    }
    throw ConfigError("unknown design kind '" + kind + "'");
}

FitFlags parse_fit(const json& cfg, CorrFamily family) {
    FitFlags flags;
    flags.shape_free = false;
    flags.c_free = false;
    if (cfg.contains("fit")) {
        const json& f = cfg.at("fit");
        require_keys(f, "fit", {"lambda", "shape", "c", "logit_shape"});
        flags.lambda_free = get_or(f, "lambda", true);
        flags.shape_free = get_or(f, "shape", false);
        flags.c_free = get_or(f, "c", false);
        flags.logit_shape = get_or(f, "logit_shape", true);
    }
    (void)family;
    return flags;
}

PcgConfig parse_pcg(const json& cfg) {
    PcgConfig pcg;
    if (cfg.contains("pcg")) {
        const json& p = cfg.at("pcg");
        require_keys(p, "pcg", {"tolerance", "max_iters"});
        pcg.tolerance = get_or(p, "tolerance", 1e-5);
        pcg.max_iters = get_or(p, "max_iters", 0);
    }
    return pcg;
}

json params_to_json(const ParamSet& p) {
    return json{{"mu", p.mu},     {"sigma2", p.sigma2}, {"lambda", p.lambda},
                {"shape", p.shape}, {"c", p.c}};
}

ParamSet params_from_json(const json& j, const std::string& where) {
    require_keys(j, where, {"mu", "sigma2", "lambda", "shape", "c"});
    ParamSet p;
    p.mu = get_or(j, "mu", 0.0);
    p.sigma2 = get_or(j, "sigma2", 1.0);
    p.lambda = need<double>(j, "lambda", where);
    p.shape = get_or(j, "shape", 1.0);
    p.c = get_or(j, "c", 0.0);
    return p;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_manifest(const fs::path& out_dir, const std::string& command,
                    const json& config, std::uint64_t seed, double wall_seconds,
                    const json& extra = json::object()) {
    json manifest;
    manifest["command"] = command;
    manifest["config"] = config;
    manifest["seed"] = seed;
    manifest["version"] = kVersion;
    manifest["wall_seconds"] = wall_seconds;
    for (const auto& [k, v] : extra.items()) manifest[k] = v;
    std::ofstream out(out_dir / "manifest.json");
    if (!out) throw IoError("cannot write manifest.json");
    out << manifest.dump(2) << '\n';
}

struct LoadedData {
    LatticeSpec lattice;
    EmbeddingSpec emb;
    CorrelationModel model;
    ObservationMask mask;
    FieldVector z_o;
};

LoadedData load_fit_input(const json& cfg, CorrFamily family) {
    const json& io = cfg.at("io");
    require_keys(io, "io", {"input", "out"});
    const std::string input = need<std::string>(io, "input", "io");
    GridData grid = ingest_grid(input);

    double r_factor = 1.5;
    bool use_cutoff = true;
    if (cfg.contains("lattice")) {
        const json& lat = cfg.at("lattice");
        require_keys(lat, "lattice", {"n1", "n2", "s", "r_factor"});
        r_factor = get_or(lat, "r_factor", 1.5);
    }
    if (cfg.contains("model")) use_cutoff = get_or(cfg.at("model"), "cutoff", true);

    LoadedData data;
    data.lattice = grid.lattice;
    data.emb = build_embedding(grid.lattice, r_factor);
    data.model = use_cutoff ? cutoff_model(family, data.emb) : plain_model(family);
    auto [z_o, mask] = grid_to_observations(grid, data.emb);
    data.z_o = std::move(z_o);
    data.mask = std::move(mask);
    return data;
}

void write_estimate(const fs::path& out_dir, const EstimateRecord& rec) {
    json out;
    out["method"] = rec.method;
    out["params"] = params_to_json(rec.params);
    out["loglik_at_estimate"] = rec.loglik_at_estimate;
    out["wall_seconds"] = rec.wall_seconds;
    std::ofstream f(out_dir / "estimate.json");
    if (!f) throw IoError("cannot write estimate.json");
    f << out.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// subcommands

int run_simulate(const json& cfg, const CliOptions& opts, const fs::path& out_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    const json& lat = cfg.at("lattice");
    require_keys(lat, "lattice", {"n1", "n2", "s", "r_factor"});
    auto lattice = build_lattice(need<int>(lat, "n1", "lattice"),
                                 need<int>(lat, "n2", "lattice"),
                                 need<double>(lat, "s", "lattice"));
    auto emb = build_embedding(lattice, get_or(lat, "r_factor", 1.5));
    const json& model_cfg = cfg.at("model");
    ParamSet params = parse_params(model_cfg);
    CorrFamily family = parse_family(need<std::string>(model_cfg, "family", "model"));
    CorrelationModel model = get_or(model_cfg, "cutoff", true)
                                 ? cutoff_model(family, emb)
                                 : plain_model(family);

    auto spec = eigenvalues(base_vector(emb, model, params), emb);
    if (!spec.positive())
        throw NegativeEigenvalueError(spec.min_eig);

    RandomStream root(opts.seed);
    auto mask = make_mask(emb, parse_design(cfg), root.substream("mask"));
    RandomStream sim_rng = root.substream("simulate");
    auto [field, spare] = unconditional_pair(spec, params, sim_rng);
    (void)spare;

    // base-lattice view with the design's missing cells as NaN
    std::vector<double> grid(lattice.size(), std::numeric_limits<double>::quiet_NaN());
    for (int idx : mask.observed) {
        const int i = idx / emb.N2, j = idx % emb.N2;
        grid[i * lattice.n2 + j] = field[idx];
    }
    json sidecar;
    sidecar["provenance"] = json{{"tool", "latgp simulate"},
                                 {"seed", opts.seed},
                                 {"params", params_to_json(params)},
                                 {"design", mask.design_tag}};
    write_grid((out_dir / "field.csv").string(), lattice, grid, sidecar);
    save_mask(mask, emb, (out_dir / "mask.txt").string());

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(out_dir, "simulate", cfg, opts.seed, wall,
                   json{{"n_observed", mask.n}, {"min_eigenvalue", spec.min_eig}});
    if (opts.verbose)
        std::fprintf(stderr, "simulate: %d observed of %d sites, min eig %.3g\n",
                     mask.n, emb.size(), spec.min_eig);
    return 0;
}

int run_fit_mcmc(const json& cfg, const CliOptions& opts, const fs::path& out_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    const json& model_cfg = cfg.at("model");
    CorrFamily family = parse_family(need<std::string>(model_cfg, "family", "model"));
    LoadedData data = load_fit_input(cfg, family);

    McmcConfig mc;
    mc.seed = opts.seed;
    mc.fit = parse_fit(cfg, family);
    mc.pcg = parse_pcg(cfg);
    if (cfg.contains("mcmc")) {
        const json& m = cfg.at("mcmc");
        require_keys(m, "mcmc",
                     {"iterations", "burn_in", "target_accept", "proposal_sds",
                      "cond_size", "pred_size", "preconditioner", "snapshots"});
        mc.iterations = get_or(m, "iterations", 2500);
        mc.burn_in = get_or(m, "burn_in", 500);
        mc.target_accept = get_or(m, "target_accept", 0.35);
        mc.cond_size = get_or(m, "cond_size", 52);
        mc.pred_size = get_or(m, "pred_size", 4);
        mc.snapshots = get_or(m, "snapshots", 3);
        if (m.contains("proposal_sds"))
            mc.proposal_sds = m.at("proposal_sds").get<std::vector<double>>();
        const std::string pk = get_or<std::string>(m, "preconditioner", "vecchia");
        mc.precond = pk == "vecchia"     ? PrecondKind::vecchia
                     : pk == "inv_block" ? PrecondKind::inv_block
                     : pk == "none"      ? PrecondKind::none
                                         : throw ConfigError("unknown preconditioner '" + pk + "'");
    }
    if (cfg.contains("init"))
        mc.init = params_from_json(cfg.at("init"), "init");
    else {
        ParamSet start = initial_params(data.z_o, data.mask, data.emb, family,
                                        parse_params(model_cfg).c);
        start.shape = parse_params(model_cfg).shape;
        mc.init = start;
    }

    PriorSpec prior{family, mc.fit.c_free};
    Chain chain = gibbs_run(data.z_o, data.mask, data.emb, data.model, prior, mc);

    std::ofstream csv(out_dir / "chain.csv");
    if (!csv) throw IoError("cannot write chain.csv");
    csv << "iter,mu,sigma2,lambda,shape,c,accepted,pcg_iters\n";
    for (std::size_t k = 0; k < chain.draws.size(); ++k) {
        const auto& d = chain.draws[k];
        csv << (mc.burn_in + static_cast<int>(k) + 1) << ',' << fmt(d.mu) << ','
            << fmt(d.sigma2) << ',' << fmt(d.lambda) << ',' << fmt(d.shape) << ','
            << fmt(d.c) << ',' << (d.accepted ? 1 : 0) << ',' << d.pcg_iters << '\n';
    }
    csv.close();

    // posterior field summaries restricted to the base lattice
    auto base_view = [&](const FieldVector& field) {
        std::vector<double> grid(data.lattice.size());
        for (int i = 0; i < data.lattice.n1; ++i)
            for (int j = 0; j < data.lattice.n2; ++j)
                grid[i * data.lattice.n2 + j] = field[data.emb.index(i, j)];
        return grid;
    };
    write_grid((out_dir / "field_mean.csv").string(), data.lattice,
               base_view(chain.field_mean));
    write_grid((out_dir / "field_sd.csv").string(), data.lattice,
               base_view(chain.field_sd));
    for (std::size_t s = 0; s < chain.field_snapshots.size(); ++s)
        write_grid((out_dir / ("field_draw_" + std::to_string(s) + ".csv")).string(),
                   data.lattice, base_view(chain.field_snapshots[s]));

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(out_dir, "fit-mcmc", cfg, opts.seed, wall,
                   json{{"accept_rate", chain.accept_rate},
                        {"total_pcg_iters", chain.total_pcg_iters},
                        {"solver_warnings", chain.solver_warnings},
                        {"kept_draws", chain.draws.size()}});
    if (opts.verbose)
        std::fprintf(stderr, "fit-mcmc: accept %.2f, pcg total %ld\n",
                     chain.accept_rate, chain.total_pcg_iters);
    return 0;
}

int run_fit_em(const json& cfg, const CliOptions& opts, const fs::path& out_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    const json& model_cfg = cfg.at("model");
    CorrFamily family = parse_family(need<std::string>(model_cfg, "family", "model"));
    LoadedData data = load_fit_input(cfg, family);

    EmConfig em;
    em.seed = opts.seed;
    em.threads = opts.threads;
    em.fit = parse_fit(cfg, family);
    em.pcg = parse_pcg(cfg);
    if (cfg.contains("em")) {
        const json& e = cfg.at("em");
        require_keys(e, "em", {"M", "max_iters", "tol", "cond_size", "pred_size"});
        em.M = get_or(e, "M", 400);
        em.max_em_iters = get_or(e, "max_iters", 60);
        em.tol = get_or(e, "tol", 1e-3);
        em.cond_size = get_or(e, "cond_size", 52);
        em.pred_size = get_or(e, "pred_size", 4);
    }
    if (cfg.contains("init"))
        em.init = params_from_json(cfg.at("init"), "init");
    else {
        ParamSet start = initial_params(data.z_o, data.mask, data.emb, family,
                                        parse_params(model_cfg).c);
        start.shape = parse_params(model_cfg).shape;
        em.init = start;
    }

    EmPath path = mcem_run(data.z_o, data.mask, data.emb, data.model, em);

    std::ofstream csv(out_dir / "empath.csv");
    if (!csv) throw IoError("cannot write empath.csv");
    csv << "iter,mu,sigma2,lambda,shape,Qp,pcg_total,seconds\n";
    for (std::size_t t = 0; t < path.iterates.size(); ++t) {
        const auto& it = path.iterates[t];
        csv << (t + 1) << ',' << fmt(it.params.mu) << ',' << fmt(it.params.sigma2)
            << ',' << fmt(it.params.lambda) << ',' << fmt(it.params.shape) << ','
            << fmt(it.Qp) << ',' << it.pcg_iters << ',' << fmt(it.seconds) << '\n';
    }
    csv.close();

    EstimateRecord rec;
    rec.method = "em";
    rec.params = path.estimate();
    rec.wall_seconds = path.wall_seconds;
    if (data.mask.n <= 12000)
        rec.loglik_at_estimate = dense_loglik(
            data.z_o, observed_coords(data.mask, data.emb), rec.params, family);
    else
        rec.loglik_at_estimate = std::numeric_limits<double>::quiet_NaN();
    write_estimate(out_dir, rec);

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(out_dir, "fit-em", cfg, opts.seed, wall,
                   json{{"converged", path.converged},
                        {"iterations", path.iterates.size()}});
    return 0;
}

int run_fit_generic(const json& cfg, const CliOptions& opts, const fs::path& out_dir,
                    const std::string& method) {
    const auto t0 = std::chrono::steady_clock::now();
    const json& model_cfg = cfg.at("model");
    CorrFamily family = parse_family(need<std::string>(model_cfg, "family", "model"));
    LoadedData data = load_fit_input(cfg, family);
    FitFlags fit = parse_fit(cfg, family);

    ParamSet start;
    if (cfg.contains("init")) {
        start = params_from_json(cfg.at("init"), "init");
    } else {
        start = initial_params(data.z_o, data.mask, data.emb, family,
                               parse_params(model_cfg).c);
        start.shape = parse_params(model_cfg).shape;
    }

    EstimateRecord rec;
    if (method == "fit-exact") {
        const std::size_t guard = get_or<std::size_t>(cfg, "dense_guard", 12000);
        rec = exact_mle(data.z_o, observed_coords(data.mask, data.emb), family, fit,
                        start, {400, 1e-7, 1e-10, 0.25}, guard);
    } else if (method == "fit-cl") {
        int cond = 52;
        if (cfg.contains("cl")) {
            require_keys(cfg.at("cl"), "cl", {"cond_size"});
            cond = get_or(cfg.at("cl"), "cond_size", 52);
        }
        rec = composite_mle(data.z_o, data.mask, data.emb, family, fit, start, 4, cond);
        if (data.mask.n <= 12000)
            rec.loglik_at_estimate = dense_loglik(
                data.z_o, observed_coords(data.mask, data.emb), rec.params, family);
    } else {  // fit-whittle
        if (data.mask.n != data.lattice.size())
            throw IncompleteLatticeError(
                "the spectral fit requires a complete base lattice");
        rec = whittle_mle(data.z_o, data.lattice, family, fit, start);
        if (data.mask.n <= 12000)
            rec.loglik_at_estimate = dense_loglik(
                data.z_o, observed_coords(data.mask, data.emb), rec.params, family);
    }
    write_estimate(out_dir, rec);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(out_dir, method, cfg, opts.seed, wall);
    return 0;
}

int run_benchmark_pcg(const json& cfg, const CliOptions& opts, const fs::path& out_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    const json& b = cfg.at("benchmark");
    require_keys(b, "benchmark",
                 {"sizes", "designs", "preconditioners", "cond_sizes", "solves", "s",
                  "r_factor"});
    const auto sizes = need<std::vector<int>>(b, "sizes", "benchmark");
    const auto design_names = get_or<std::vector<std::string>>(
        b, "designs", {"complete", "random10", "disk10"});
    const auto precond_names = get_or<std::vector<std::string>>(
        b, "preconditioners", {"vecchia"});
    const auto cond_sizes = get_or<std::vector<int>>(b, "cond_sizes", {52});
    const int solves = get_or(b, "solves", 3);
    const double s = get_or(b, "s", 1.0 / std::sqrt(2.0));
    const double r_factor = get_or(b, "r_factor", 1.5);
    const ParamSet params = parse_params(cfg.at("model"));
    const CorrFamily family =
        parse_family(need<std::string>(cfg.at("model"), "family", "model"));

    auto parse_bench_design = [](const std::string& name) {
        if (name == "complete") return DesignSpec::complete();
        if (name == "random10") return DesignSpec::random(0.10);
        if (name == "disk10") return DesignSpec::disk(0.10);
        throw ConfigError("unknown benchmark design '" + name + "'");
    };

    std::ofstream csv(out_dir / "benchmark.csv");
    if (!csv) throw IoError("cannot write benchmark.csv");
    csv << "lattice_size,design,preconditioner,cond_size,iterations,wall_seconds\n";

    RandomStream root(opts.seed);
    for (int n1 : sizes) {
        auto lattice = build_lattice(n1, n1, s);
        auto emb = build_embedding(lattice, r_factor);
        CorrelationModel model = cutoff_model(family, emb);
        auto spec = eigenvalues(base_vector(emb, model, params), emb);
        if (!spec.positive()) throw NegativeEigenvalueError(spec.min_eig);
        for (const std::string& dname : design_names) {
            auto mask = make_mask(emb, parse_bench_design(dname),
                                  root.substream("mask-" + dname, n1));
            RandomStream data_rng = root.substream("data-" + dname, n1);
            auto [field, spare] = unconditional_pair(spec, params, data_rng);
            (void)spare;
            FieldVector z_o(mask.n);
            for (int i = 0; i < mask.n; ++i) z_o[i] = field[mask.observed[i]];

            for (const std::string& pname : precond_names) {
                for (int cond : cond_sizes) {
                    if (pname != "vecchia" && cond != cond_sizes.front()) continue;
                    VecchiaPrecond pre;
                    if (pname == "vecchia")
                        pre = build_vecchia(mask, emb, model, params, 4, cond);
                    auto apply_precond = [&](const FieldVector& x) -> FieldVector {
                        if (pname == "vecchia") return vecchia_apply(pre, x);
                        if (pname == "inv_block") return InvBlockPrecond(spec, mask)(x);
                        if (pname == "none") return x;
                        throw ConfigError("unknown preconditioner '" + pname + "'");
                    };
                    PcgConfig pcg = parse_pcg(cfg);
                    double iters = 0.0, wall = 0.0;
                    RandomStream draw_rng =
                        root.substream("bench-" + dname + "-" + pname, n1);
                    for (int k = 0; k < solves; ++k) {
                        const auto t1 = std::chrono::steady_clock::now();
                        auto draw = conditional_draw(z_o, mask, spec, params,
                                                     apply_precond, pcg, draw_rng);
                        wall += std::chrono::duration<double>(
                                    std::chrono::steady_clock::now() - t1)
                                    .count();
                        iters += draw.solver_iters;
                    }
                    csv << n1 << ',' << dname << ',' << pname << ','
                        << (pname == "vecchia" ? cond : 0) << ','
                        << fmt(iters / solves) << ',' << fmt(wall / solves) << '\n';
                }
            }
        }
    }
    csv.close();
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(out_dir, "benchmark-pcg", cfg, opts.seed, wall);
    return 0;
}

int run_rmsd_study(const json& cfg, const CliOptions& opts, const fs::path& out_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    const json& st = cfg.at("study");
    require_keys(st, "study",
                 {"n1", "s", "r_factor", "n_reps", "designs", "truth", "M",
                  "cl_cond_size", "methods"});
    StudyConfig sc;
    sc.n1 = get_or(st, "n1", 32);
    sc.s = get_or(st, "s", 1.0 / std::sqrt(2.0));
    sc.r_factor = get_or(st, "r_factor", 1.5);
    sc.n_reps = get_or(st, "n_reps", 50);
    sc.threads = opts.threads;
    sc.seed = opts.seed;
    if (st.contains("truth")) sc.truth = params_from_json(st.at("truth"), "truth");
    sc.em.M = get_or(st, "M", 400);
    sc.em.threads = 1;  // replicates already run in parallel
    sc.cl_cond_size = get_or(st, "cl_cond_size", 52);
    if (st.contains("methods")) {
        const auto methods = st.at("methods").get<std::vector<std::string>>();
        sc.run_em = std::count(methods.begin(), methods.end(), "em") > 0;
        sc.run_cl = std::count(methods.begin(), methods.end(), "composite") > 0;
        sc.run_whittle = std::count(methods.begin(), methods.end(), "whittle") > 0;
    }

    std::vector<DesignSpec> designs;
    if (st.contains("designs")) {
        for (const auto& d : st.at("designs")) {
            require_keys(d, "study.designs[]", {"kind", "p"});
            const std::string kind = need<std::string>(d, "kind", "study.designs[]");
            if (kind == "complete")
                designs.push_back(DesignSpec::complete());
            else if (kind == "random")
                designs.push_back(DesignSpec::random(need<double>(d, "p", "design")));
            else if (kind == "disk")
                designs.push_back(DesignSpec::disk(need<double>(d, "p", "design")));
            else
                throw ConfigError("unknown study design '" + kind + "'");
        }
    } else {
        designs = {DesignSpec::complete()};
    }

    StudyResult result = rmsd_study(designs, sc);

    std::ofstream csv(out_dir / "study.csv");
    if (!csv) throw IoError("cannot write study.csv");
    csv << "design,param,R_star,R_em,R_cl,R_whittle\n";
    for (const auto& row : result.rows) {
        csv << row.design << ',' << row.param << ',' << fmt(1000.0 * row.R_star) << ','
            << fmt(1000.0 * row.R_em) << ',' << fmt(1000.0 * row.R_cl) << ','
            << fmt(1000.0 * row.R_whittle) << '\n';
    }
    csv.close();

    std::ofstream reps(out_dir / "replicates.csv");
    if (!reps) throw IoError("cannot write replicates.csv");
    reps << "design,replicate,method,mu,sigma2,lambda,loglik,wall_seconds\n";
    auto emit = [&](const StudyReplicate& rep, const EstimateRecord& rec) {
        if (rec.method.empty()) return;
        reps << rep.design << ',' << rep.replicate_id << ',' << rec.method << ','
             << fmt(rec.params.mu) << ',' << fmt(rec.params.sigma2) << ','
             << fmt(rec.params.lambda) << ',' << fmt(rec.loglik_at_estimate) << ','
             << fmt(rec.wall_seconds) << '\n';
    };
    for (const auto& rep : result.replicates) {
        emit(rep, rep.exact);
        emit(rep, rep.em);
        emit(rep, rep.cl);
        emit(rep, rep.whittle);
    }
    reps.close();

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(out_dir, "rmsd-study", cfg, opts.seed, wall,
                   json{{"replicates", sc.n_reps}});
    return 0;
}

int dispatch(const json& cfg, const CliOptions& opts) {
    static const std::set<std::string> commands{
        "simulate",   "fit-mcmc",     "fit-em",     "fit-cl",
        "fit-whittle", "fit-exact",   "benchmark-pcg", "rmsd-study"};
    require_keys(cfg, "config",
                 {"command", "seed", "threads", "model", "lattice", "design", "fit",
                  "mcmc", "em", "pcg", "cl", "study", "benchmark", "io", "init",
                  "dense_guard"});
    std::string command = get_or<std::string>(cfg, "command", "");
    if (!opts.command.empty()) {
        if (!command.empty() && command != opts.command)
            throw ConfigError("config command '" + command +
                              "' conflicts with CLI command '" + opts.command + "'");
        command = opts.command;
    }
    if (!commands.count(command))
        throw ConfigError("unknown or missing command '" + command + "'");

    fs::path out_dir = opts.out_dir;
    if (out_dir.empty() && cfg.contains("io"))
        out_dir = get_or<std::string>(cfg.at("io"), "out", "");
    if (out_dir.empty()) throw ConfigError("no output directory (io.out or --out)");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir.string());

    if (command == "simulate") return run_simulate(cfg, opts, out_dir);
    if (command == "fit-mcmc") return run_fit_mcmc(cfg, opts, out_dir);
    if (command == "fit-em") return run_fit_em(cfg, opts, out_dir);
    if (command == "benchmark-pcg") return run_benchmark_pcg(cfg, opts, out_dir);
    if (command == "rmsd-study") return run_rmsd_study(cfg, opts, out_dir);
    return run_fit_generic(cfg, opts, out_dir, command);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gaussian random field estimation on incomplete lattices"};
    CliOptions opts;
    app.add_option("command", opts.command,
                   "simulate | fit-mcmc | fit-em | fit-cl | fit-whittle | fit-exact | "
                   "benchmark-pcg | rmsd-study");
    app.add_option("--config", opts.config_path, "JSON run configuration")->required();
    auto* seed_opt = app.add_option("--seed", opts.seed, "override the config seed");
    app.add_option("--threads", opts.threads, "worker threads for parallel sections");
    app.add_option("--out", opts.out_dir, "output directory (overrides io.out)");
    app.add_flag("--verbose", opts.verbose, "progress output on stderr");
    CLI11_PARSE(app, argc, argv);
    opts.seed_set = seed_opt->count() > 0;

    try {
        std::ifstream in(opts.config_path);
        if (!in) throw IoError("cannot open config: " + opts.config_path);
        json cfg;
        try {
            in >> cfg;
        } catch (const json::exception& e) {
            throw ConfigError("config is not valid JSON: " + std::string(e.what()));
        }
        if (!opts.seed_set) opts.seed = get_or<std::uint64_t>(cfg, "seed", 1);
        if (cfg.contains("threads") && opts.threads == 1)
            opts.threads = cfg.at("threads").get<int>();
        return dispatch(cfg, opts);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 4;
    } catch (const std::domain_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
