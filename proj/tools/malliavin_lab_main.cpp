// Command-line front end. Every data-producing subcommand writes into
// <out>/<command>-<confighash>-s<seed>/ a manifest.json plus CSV files
// whose bytes depend only on the configuration, the seed, and the
// binary version -- never on thread count or wall-clock time.
//
// Exit codes: 0 ok, 1 unexpected error, 2 bad configuration or usage,
// 3 more than 1% of paths excluded, 4 an analysis verdict failed.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mlab/config.hpp"
#include "mlab/io.hpp"
#include "mlab/malliavin.hpp"
#include "mlab/model.hpp"
#include "mlab/sim.hpp"
#include "mlab/truncation.hpp"

#ifndef MLAB_VERSION
#define MLAB_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

struct CliOptions {
    std::string config_path;
    std::string out_root = "runs";
    long long seed = -1;    // < 0 keeps the config value
    long long paths = -1;
    long long steps = -1;
    std::string scheme;
    int workers = 0;
    long long level = 0;    // truncation level; 0 runs the raw model
};

mlab::ExperimentConfig effective_config(const CliOptions& o) {
    mlab::ExperimentConfig cfg = o.config_path.empty()
                                     ? mlab::ExperimentConfig{}
                                     : mlab::ExperimentConfig::load(o.config_path);
    if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
    if (o.paths > 0) cfg.paths = o.paths;
    if (o.steps > 0) cfg.steps = o.steps;
    if (!o.scheme.empty()) cfg.scheme = o.scheme;
    cfg.validate();
    return cfg;
}

struct RunContext {
    fs::path dir;
    ordered_json manifest;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    RunContext(const mlab::ExperimentConfig& cfg, const std::string& command,
               const std::string& out_root) {
        dir = fs::path(out_root) / cfg.run_dir_name(command);
        fs::create_directories(dir);
        manifest["version"] = MLAB_VERSION;
        manifest["command"] = command;
        ordered_json c;
        for (const auto& [k, v] : cfg.canonical_entries()) c[k] = v;
        manifest["config"] = c;
        manifest["seed"] = cfg.seed;
        manifest["started"] = mlab::now_utc_iso();
    }

    void finish(std::int64_t explosions, std::int64_t excluded) {
        double el =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        manifest["elapsed_s"] = el;
        manifest["explosions"] = explosions;
        manifest["excluded_paths"] = excluded;
        mlab::write_text((dir / "manifest.json").string(), manifest.dump(2) + "\n");
        std::cout << "wrote " << (dir / "manifest.json").string() << "\n";
    }
};

double resolve_xi(const mlab::ExperimentConfig& cfg, const mlab::SdeModel& m) {
    if (cfg.xi > 0.0) return cfg.xi;
    return mlab::check_growth(m, 5, cfg.R).xi;
}

std::unique_ptr<mlab::Dynamics> make_dynamics(const mlab::SdeModel& m,
                                              const mlab::ExperimentConfig& cfg,
                                              long long level) {
    if (level > 0)
        return std::make_unique<mlab::TruncatedDynamics>(m, resolve_xi(cfg, m),
                                                         static_cast<int>(level));
    return std::make_unique<mlab::RawDynamics>(m);
}

int exit_for_exclusions(std::int64_t excluded, std::int64_t paths) {
    return excluded * 100 > paths ? 3 : 0;
}

int cmd_check(const CliOptions& o) {
    auto cfg = effective_config(o);
    mlab::SdeModel model = cfg.make_model();
    mlab::HypothesisReport rep =
        mlab::run_hypothesis_checks(model, cfg.p_list, 5, cfg.R);
    nlohmann::json j = mlab::to_json(rep);
    for (const auto& b : rep.bounds) {
        if (b.p == 1 && b.pass) {
            try {
                mlab::MomentEnvelope env = mlab::moment_envelope(model, b, rep.k1);
                j["envelope"] = {{"alpha_prime", env.alpha_prime},
                                 {"beta_prime", env.beta_prime},
                                 {"at_T", env.at(cfg.T)}};
            } catch (const std::invalid_argument&) {
                // beta' <= 0: no finite envelope; the report stays as is
            }
            break;
        }
    }
    std::cout << j.dump(2) << "\n";
    RunContext rc(cfg, "check", o.out_root);
    mlab::write_text((rc.dir / "hypothesis.json").string(), j.dump(2) + "\n");
    rc.finish(0, 0);
    return rep.pass ? 0 : 4;
}

int cmd_hormander(const CliOptions& o) {
    auto cfg = effective_config(o);
    mlab::SdeModel model = cfg.make_model();
    mlab::HormanderResult h = mlab::hormander_check(model);
    ordered_json j;
    j["pass"] = h.pass;
    j["witness_order"] = h.witness_order;
    j["witness_value"] = h.witness_value;
    j["witness"] = h.witness;
    std::cout << j.dump(2) << "\n";
    RunContext rc(cfg, "hormander", o.out_root);
    mlab::write_text((rc.dir / "hormander.json").string(), j.dump(2) + "\n");
    rc.finish(0, 0);
    return h.pass ? 0 : 4;
}

int cmd_simulate(const CliOptions& o) {
    auto cfg = effective_config(o);
    mlab::SdeModel model = cfg.make_model();
    auto dyn = make_dynamics(model, cfg, o.level);
    mlab::SimConfig sc = cfg.make_sim_config();
    sc.workers = o.workers;

    RunContext rc(cfg, "simulate", o.out_root);
    rc.manifest["scheme"] = mlab::scheme_name(sc.scheme);
    rc.manifest["level"] = o.level;

    std::vector<std::int64_t> t_idx{0};
    for (std::int64_t i = 1; i <= cfg.time_points; ++i)
        t_idx.push_back(cfg.steps * i / cfg.time_points);
    const std::size_t cols = t_idx.size();
    const std::int64_t paths = cfg.paths;

    std::vector<double> xs(static_cast<std::size_t>(paths) * cols);
    std::vector<double> zs(xs.size()), csv(xs.size()), ls(xs.size());
    std::vector<std::uint8_t> ok(paths, 0), expl(paths, 0);

    mlab::parallel_paths<mlab::PathBundle>(paths, sc.workers,
                                           [&](std::int64_t p, mlab::PathBundle& ws) {
        mlab::simulate_path(*dyn, sc, p, ws);
        if (ws.exploded) {
            expl[p] = 1;
            return;
        }
        if (ws.degenerate_z) return;
        ok[p] = 1;
        for (std::size_t i = 0; i < cols; ++i) {
            std::size_t at = static_cast<std::size_t>(p) * cols + i;
            std::int64_t k = t_idx[i];
            xs[at] = ws.X[k];
            zs[at] = ws.Z[k];
            csv[at] = ws.C[k];
            ls[at] = ws.Z[k] * ws.Z[k] * ws.C[k];
        }
    });

    std::int64_t explosions = 0, usable = 0;
    for (std::int64_t p = 0; p < paths; ++p) {
        if (expl[p]) ++explosions;
        if (ok[p]) ++usable;
    }
    std::int64_t excluded = paths - usable;

    std::vector<std::vector<double>> rows;
    std::vector<double> col;
    col.reserve(usable);
    const double T = model.T;
    for (std::size_t i = 0; i < cols; ++i) {
        std::vector<double> row{T * static_cast<double>(t_idx[i]) /
                                static_cast<double>(cfg.steps)};
        for (const std::vector<double>* src : {&xs, &zs, &csv, &ls}) {
            col.clear();
            for (std::int64_t p = 0; p < paths; ++p)
                if (ok[p]) col.push_back((*src)[static_cast<std::size_t>(p) * cols + i]);
            mlab::Estimate e = mlab::estimate_mean(col);
            row.push_back(e.mean);
            row.push_back(e.se);
        }
        rows.push_back(std::move(row));
    }
    mlab::write_csv((rc.dir / "paths.csv").string(),
                    {"t", "x_mean", "x_se", "z_mean", "z_se", "c_mean", "c_se",
                     "lambda_mean", "lambda_se"},
                    rows);
    rc.finish(explosions, excluded);
    std::cout << "paths: " << paths << "  excluded: " << excluded << "\n";
    return exit_for_exclusions(excluded, paths);
}

int cmd_moments(const CliOptions& o) {
    auto cfg = effective_config(o);
    mlab::SdeModel model = cfg.make_model();
    mlab::SimConfig sc = cfg.make_sim_config();
    sc.workers = o.workers;

    RunContext rc(cfg, "moments", o.out_root);
    rc.manifest["scheme"] = mlab::scheme_name(sc.scheme);

    std::vector<mlab::MomentRow> all;
    std::int64_t total_explosions = 0, worst = 0;
    auto run_level = [&](const mlab::Dynamics& dyn, const std::string& name) {
        auto rows = mlab::run_moments(dyn, sc, cfg.p_list, name,
                                      static_cast<int>(cfg.time_points));
        if (!rows.empty()) {
            total_explosions += rows.front().explosions;
            worst = std::max(worst, rows.front().explosions);
        }
        for (auto& r : rows) all.push_back(std::move(r));
    };

    mlab::RawDynamics raw(model);
    run_level(raw, "raw");
    const double xi = resolve_xi(cfg, model);
    for (auto n : cfg.levels) {
        mlab::TruncatedDynamics td(model, xi, static_cast<int>(n));
        run_level(td, std::to_string(n));
    }

    std::vector<std::vector<double>> rows;
    for (const auto& r : all) {
        double lv = r.level == "raw" ? 0.0 : std::stod(r.level);
        rows.push_back({lv, r.t, static_cast<double>(r.p), r.est.mean, r.est.se,
                        static_cast<double>(r.explosions)});
    }
    mlab::write_csv((rc.dir / "moments.csv").string(),
                    {"level", "t", "p", "mean", "stderr", "explosions"}, rows);
    rc.finish(total_explosions, total_explosions);
    return exit_for_exclusions(worst, cfg.paths);
}

int cmd_convergence(const CliOptions& o) {
    auto cfg = effective_config(o);
    mlab::SdeModel model = cfg.make_model();
    mlab::SimConfig sc = cfg.make_sim_config();
    sc.workers = o.workers;

    RunContext rc(cfg, "convergence", o.out_root);
    rc.manifest["scheme"] = mlab::scheme_name(sc.scheme);

    std::vector<int> levels;
    for (auto n : cfg.levels) levels.push_back(static_cast<int>(n));
    const int ref = 4 * levels.back();
    rc.manifest["reference_level"] = ref;
    const double xi = resolve_xi(cfg, model);
    rc.manifest["xi"] = xi;

    auto conv = mlab::run_level_convergence(model, xi, levels, ref, sc);
    std::vector<std::vector<double>> rows;
    for (const auto& r : conv)
        rows.push_back({static_cast<double>(r.n), static_cast<double>(r.ref),
                        r.mean_sq_diff.mean, r.mean_sq_diff.se,
                        static_cast<double>(r.excluded)});
    mlab::write_csv((rc.dir / "convergence.csv").string(),
                    {"n", "ref", "mean_sq_diff", "se", "excluded"}, rows);
    std::int64_t excluded = conv.empty() ? 0 : conv.front().excluded;
    rc.finish(excluded, excluded);
    return exit_for_exclusions(excluded, cfg.paths);
}

int cmd_nondeg(const CliOptions& o) {
    auto cfg = effective_config(o);
    mlab::SdeModel model = cfg.make_model();
    auto dyn = make_dynamics(model, cfg, o.level);
    mlab::SimConfig sc = cfg.make_sim_config();
    sc.workers = o.workers;

    mlab::HormanderResult h = mlab::hormander_check(model);
    if (!h.pass)
        std::cerr << "warning: no nondegeneracy witness at x0; the tail table may be "
                     "meaningless\n";

    RunContext rc(cfg, "nondeg", o.out_root);
    rc.manifest["scheme"] = mlab::scheme_name(sc.scheme);
    rc.manifest["level"] = o.level;
    rc.manifest["hormander_pass"] = h.pass;

    mlab::MalliavinRun run = mlab::run_malliavin(*dyn, sc);
    auto tail = mlab::nondegeneracy_tail(run, cfg.eps_list, cfg.p_list);
    std::vector<std::vector<double>> rows;
    for (const auto& r : tail)
        rows.push_back({r.eps, static_cast<double>(r.p), r.p_hat, r.ci_lo, r.ci_hi,
                        r.bound});
    mlab::write_csv((rc.dir / "nondeg.csv").string(),
                    {"eps", "p", "p_hat", "ci_lo", "ci_hi", "bound"}, rows);
    rc.manifest["degenerate"] = run.degenerate;
    rc.manifest["localized_out"] = run.localized_out;
    rc.finish(run.explosions, run.excluded());
    return exit_for_exclusions(run.excluded(), cfg.paths);
}

int cmd_density(const CliOptions& o) {
    auto cfg = effective_config(o);
    mlab::SdeModel model = cfg.make_model();
    auto dyn = make_dynamics(model, cfg, o.level);
    mlab::SimConfig sc = cfg.make_sim_config();
    sc.workers = o.workers;

    RunContext rc(cfg, "density", o.out_root);
    rc.manifest["scheme"] = mlab::scheme_name(sc.scheme);
    rc.manifest["level"] = o.level;

    mlab::MalliavinRun run = mlab::run_malliavin(*dyn, sc);
    mlab::DensityEstimate de = mlab::density_estimate(run, cfg.x_grid());
    std::vector<std::vector<double>> rows;
    for (const auto& r : de.rows)
        rows.push_back({r.x, r.ibp, r.ibp_se, r.kde, r.kde_se});
    mlab::write_csv((rc.dir / "density.csv").string(),
                    {"x", "ibp", "ibp_se", "kde", "kde_se"}, rows);
    rc.manifest["bandwidth"] = de.bandwidth;
    rc.manifest["mass_ibp"] = de.mass_ibp;
    rc.manifest["mass_kde"] = de.mass_kde;
    rc.manifest["degenerate"] = run.degenerate;
    rc.manifest["localized_out"] = run.localized_out;
    rc.finish(run.explosions, run.excluded());
    std::cout << "mass_ibp: " << mlab::format_g17(de.mass_ibp)
              << "  mass_kde: " << mlab::format_g17(de.mass_kde) << "\n";
    return exit_for_exclusions(run.excluded(), cfg.paths);
}

int cmd_audit(const CliOptions& o) {
    auto cfg = effective_config(o);
    mlab::SdeModel model = cfg.make_model();
    mlab::RawDynamics dyn(model);
    mlab::LyapunovAudit audit = mlab::lyapunov_audit(dyn, cfg.q, cfg.M, cfg.R);
    ordered_json j;
    j["q"] = audit.q;
    j["M"] = audit.M;
    j["R"] = audit.R;
    j["c_min"] = audit.c_min;
    j["c_min_double_R"] = audit.c_min_double;
    j["worst_x"] = audit.worst_x;
    j["worst_y"] = audit.worst_y;
    j["stable"] = audit.stable;
    std::cout << j.dump(2) << "\n";
    RunContext rc(cfg, "audit-lyapunov", o.out_root);
    mlab::write_text((rc.dir / "audit.json").string(), j.dump(2) + "\n");
    rc.finish(0, 0);
    return audit.stable ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
    CliOptions o;
    CLI::App app{"Derivative-process laboratory for scalar SDEs"};
    app.require_subcommand(1);

    auto add_common = [&](CLI::App* sub, bool with_level) {
        sub->add_option("--config", o.config_path,
                        "configuration file (key = value lines or a JSON object)")
            ->check(CLI::ExistingFile);
        sub->add_option("--out", o.out_root, "output root directory (default: runs)");
        sub->add_option("--seed", o.seed, "seed override");
        sub->add_option("--paths", o.paths, "path-count override");
        sub->add_option("--steps", o.steps, "step-count override");
        sub->add_option("--scheme", o.scheme,
                        "scheme override: explicit-euler | tamed-euler | "
                        "drift-implicit-euler");
        sub->add_option("--workers", o.workers,
                        "worker threads (0 = MALLIAVIN_LAB_THREADS or hardware count)");
        if (with_level)
            sub->add_option("--level", o.level, "truncation level (0 = raw model)");
    };

    CLI::App* c_check =
        app.add_subcommand("check", "grid verification of the coefficient hypotheses");
    add_common(c_check, false);
    CLI::App* c_horm =
        app.add_subcommand("hormander", "nondegeneracy witness at the starting point");
    add_common(c_horm, false);
    CLI::App* c_sim =
        app.add_subcommand("simulate", "path statistics for X, Z, C and the covariance");
    add_common(c_sim, true);
    CLI::App* c_mom =
        app.add_subcommand("moments", "moment table for the raw and truncated models");
    add_common(c_mom, false);
    CLI::App* c_conv = app.add_subcommand(
        "convergence", "coupled strong error across truncation levels");
    add_common(c_conv, false);
    CLI::App* c_nondeg = app.add_subcommand(
        "nondeg", "small-ball tail table for the Malliavin covariance");
    add_common(c_nondeg, true);
    CLI::App* c_dens = app.add_subcommand(
        "density", "terminal density by integration by parts and by kernel");
    add_common(c_dens, true);
    CLI::App* c_audit = app.add_subcommand(
        "audit-lyapunov", "generator audit of the pair Lyapunov function");
    add_common(c_audit, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(c_check)) return cmd_check(o);
        if (app.got_subcommand(c_horm)) return cmd_hormander(o);
        if (app.got_subcommand(c_sim)) return cmd_simulate(o);
        if (app.got_subcommand(c_mom)) return cmd_moments(o);
        if (app.got_subcommand(c_conv)) return cmd_convergence(o);
        if (app.got_subcommand(c_nondeg)) return cmd_nondeg(o);
        if (app.got_subcommand(c_dens)) return cmd_density(o);
        if (app.got_subcommand(c_audit)) return cmd_audit(o);
    } catch (const mlab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const mlab::ParseError& e) {
        std::cerr << "expression error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
