#pragma once

// Path simulator for dX = (b + f)(X) dt + sigma(X) dW together with the
// linearized co-processes the estimators need:
//   Z     first variation, dZ = (b+f)'(X) Z dt + sigma'(X) Z dW, Z_0 = 1
//   D_rX  launched at sigma(X_r), advanced by the same linear recursion
//   D_rZ  launched at sigma'(X_r) Z_r with the mixed second-order sources
//   C     running quadrature of (sigma(X_s)/Z_s)^2
// Z and D_rX share the identical per-step multiplier, so the discrete flow
// identity D_rX_t = Z_t Z_r^{-1} sigma(X_r) holds to rounding by
// construction. Every random draw is keyed by (seed, path, step), so
// results are independent of the worker count.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <limits>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mlab/model.hpp"
#include "mlab/rng.hpp"
#include "mlab/stats.hpp"
#include "mlab/truncation.hpp"

namespace mlab {

enum class Scheme { ExplicitEuler, TamedEuler, DriftImplicitEuler };

inline std::string scheme_name(Scheme s) {
    switch (s) {
        case Scheme::ExplicitEuler: return "explicit-euler";
        case Scheme::TamedEuler: return "tamed-euler";
        case Scheme::DriftImplicitEuler: return "drift-implicit-euler";
    }
    throw std::logic_error("bad scheme");
}

inline Scheme scheme_from_name(const std::string& s) {
    if (s == "explicit-euler") return Scheme::ExplicitEuler;
    if (s == "tamed-euler") return Scheme::TamedEuler;
    if (s == "drift-implicit-euler") return Scheme::DriftImplicitEuler;
    throw std::invalid_argument("unknown scheme '" + s + "'");
}

constexpr double kExplosionThreshold = 1e15;
constexpr double kLocalizationFloor = 1e-12;

struct CoeffEval {
    double B = 0.0;     // b + f (possibly truncated b)
    double B1 = 0.0;    // (b + f)'
    double B2 = 0.0;    // (b + f)''
    double sig = 0.0;   // sigma (possibly truncated)
    double sig1 = 0.0;  // sigma'
    double sig2 = 0.0;  // sigma''
};

class Dynamics {
public:
    virtual ~Dynamics() = default;
    virtual CoeffEval eval(double x) const = 0;
    // Untruncated sigma' for generator budgets.
    virtual double raw_sigma_prime(double x) const = 0;
    virtual double plateau() const { return std::numeric_limits<double>::infinity(); }
    virtual const SdeModel& base() const = 0;
};

class RawDynamics final : public Dynamics {
    SdeModel model_;
    CompiledExpr b_[3], f_[3], s_[3];

public:
    explicit RawDynamics(SdeModel m) : model_(std::move(m)) {
        Expr bb = model_.b, ff = model_.f, ss = model_.sigma;
        for (int j = 0; j < 3; ++j) {
            b_[j] = CompiledExpr(bb);
            f_[j] = CompiledExpr(ff);
            s_[j] = CompiledExpr(ss);
            bb = bb.derivative();
            ff = ff.derivative();
            ss = ss.derivative();
        }
    }

    CoeffEval eval(double x) const override {
        CoeffEval c;
        c.B = b_[0](x) + f_[0](x);
        c.B1 = b_[1](x) + f_[1](x);
        c.B2 = b_[2](x) + f_[2](x);
        c.sig = s_[0](x);
        c.sig1 = s_[1](x);
        c.sig2 = s_[2](x);
        return c;
    }
    double raw_sigma_prime(double x) const override { return s_[1](x); }
    const SdeModel& base() const override { return model_; }
};

class TruncatedDynamics final : public Dynamics {
    TruncatedModel tm_;

public:
    explicit TruncatedDynamics(TruncatedModel tm) : tm_(std::move(tm)) {}
    TruncatedDynamics(const SdeModel& m, double xi, int n) : tm_(truncate(m, xi, n)) {}

    CoeffEval eval(double x) const override {
        CoeffEval c;
        c.B = tm_.b_n(x) + tm_.f_val(x);
        c.B1 = tm_.b_n_prime(x) + tm_.f_prime(x);
        c.B2 = tm_.b_n_second(x) + tm_.f_second(x);
        c.sig = tm_.sigma_n(x);
        c.sig1 = tm_.sigma_n_prime(x);
        c.sig2 = tm_.sigma_n_second(x);
        return c;
    }
    double raw_sigma_prime(double x) const override { return tm_.sigma_raw_prime(x); }
    double plateau() const override { return tm_.scheme().plateau(); }
    const SdeModel& base() const override { return tm_.base(); }
    const TruncatedModel& truncated() const { return tm_; }
};

struct SimConfig {
    std::int64_t steps = 1000;
    std::int64_t paths = 10000;
    std::uint64_t seed = 42;
    Scheme scheme = Scheme::TamedEuler;
    std::vector<std::int64_t> r_grid;  // launch step indices, strictly increasing
    int workers = 0;                   // 0: resolve from MALLIAVIN_LAB_THREADS
    bool record_derivative_paths = false;

    double dt(double T) const { return T / static_cast<double>(steps); }
};

// m equispaced launch indices covering [0, steps], endpoints included.
inline std::vector<std::int64_t> make_r_grid(std::int64_t steps, std::int64_t m) {
    if (m < 2 || steps < 1) throw std::invalid_argument("r grid needs m >= 2, steps >= 1");
    m = std::min(m, steps + 1);
    std::vector<std::int64_t> out;
    out.reserve(m);
    for (std::int64_t j = 0; j < m; ++j) {
        std::int64_t idx = (j * steps + (m - 1) / 2) / (m - 1);
        if (out.empty() || idx > out.back()) out.push_back(idx);
    }
    if (out.back() != steps) out.push_back(steps);
    return out;
}

struct PathBundle {
    std::vector<double> X, Z, C, a;  // size steps+1; a_k = sigma(X_k)/Z_k
    std::vector<double> dW;          // size steps
    std::vector<std::int64_t> r_grid;
    std::vector<double> dxT, dzT, dcT;       // terminal D_rX_T, D_rZ_T, D_rC_T
    std::vector<std::vector<double>> DX, DZ; // full rows when recording
    std::int64_t tau_index = -1;  // first step with |X| above the plateau
    bool exploded = false;
    std::int64_t explode_step = -1;
    bool degenerate_z = false;
    std::int64_t degenerate_step = -1;
    std::int64_t steps = 0;
    double dt = 0.0;

    bool usable() const { return !exploded && !degenerate_z; }
};

namespace detail {

inline double newton_implicit_step(const Dynamics& dyn, double rhs, double guess, double dt,
                                   std::int64_t path, std::int64_t step) {
    double y = guess;
    for (int it = 0; it < 50; ++it) {
        CoeffEval c = dyn.eval(y);
        double F = y - c.B * dt - rhs;
        if (std::fabs(F) <= 1e-12 * std::max(1.0, std::fabs(y))) return y;
        double Fp = 1.0 - c.B1 * dt;
        if (Fp == 0.0) break;
        y -= F / Fp;
        if (!std::isfinite(y)) break;
    }
    CoeffEval c = dyn.eval(y);
    if (std::fabs(y - c.B * dt - rhs) <= 1e-9 * std::max(1.0, std::fabs(y))) return y;
    throw std::runtime_error("implicit step failed to converge (path " + std::to_string(path) +
                             ", step " + std::to_string(step) + ")");
}

}  // namespace detail

inline void simulate_path(const Dynamics& dyn, const SimConfig& cfg, std::int64_t path,
                          PathBundle& out) {
    const double T = dyn.base().T;
    const std::int64_t steps = cfg.steps;
    const double dt = cfg.dt(T);
    const double sqdt = std::sqrt(dt);
    const double x0 = dyn.base().x0;
    const double plateau = dyn.plateau();

    out.steps = steps;
    out.dt = dt;
    out.r_grid = cfg.r_grid;
    out.X.assign(steps + 1, 0.0);
    out.Z.assign(steps + 1, 0.0);
    out.C.assign(steps + 1, 0.0);
    out.a.assign(steps + 1, 0.0);
    out.dW.assign(steps, 0.0);
    const std::size_t nr = cfg.r_grid.size();
    out.dxT.assign(nr, 0.0);
    out.dzT.assign(nr, 0.0);
    out.dcT.assign(nr, 0.0);
    if (cfg.record_derivative_paths) {
        out.DX.assign(nr, std::vector<double>(steps + 1, 0.0));
        out.DZ.assign(nr, std::vector<double>(steps + 1, 0.0));
    } else {
        out.DX.clear();
        out.DZ.clear();
    }
    out.tau_index = -1;
    out.exploded = false;
    out.explode_step = -1;
    out.degenerate_z = false;
    out.degenerate_step = -1;

    out.X[0] = x0;
    out.Z[0] = 1.0;
    if (std::fabs(x0) > plateau) out.tau_index = 0;

    std::vector<double>& dx = out.dxT;  // running values, terminal after the loop
    std::vector<double>& dz = out.dzT;
    std::vector<double>& dc = out.dcT;
    std::vector<double> gprev(nr, 0.0);  // last D_r of the C integrand
    std::size_t next_launch = 0;
    bool frozen = false;  // Z hit zero: stop the Malliavin accumulators
    double hprev = 0.0;

    for (std::int64_t k = 0; k <= steps; ++k) {
        CoeffEval ce = dyn.eval(out.X[k]);
        double zk = out.Z[k];

        if (!frozen) {
            // trapezoid accumulation of C and the D_r C integrands
            double hk = 0.0, ak = 0.0;
            if (zk != 0.0) {
                ak = ce.sig / zk;
                hk = ak * ak;
            }
            out.a[k] = ak;
            if (k > 0) out.C[k] = out.C[k - 1] + 0.5 * (hprev + hk) * dt;
            hprev = hk;

            while (next_launch < nr && cfg.r_grid[next_launch] == k) {
                dx[next_launch] = ce.sig;
                dz[next_launch] = ce.sig1 * zk;
                if (cfg.record_derivative_paths) {
                    out.DX[next_launch][k] = dx[next_launch];
                    out.DZ[next_launch][k] = dz[next_launch];
                }
                ++next_launch;
            }
            for (std::size_t j = 0; j < next_launch; ++j) {
                double g = 0.0;
                if (zk != 0.0) g = 2.0 * ak * (ce.sig1 * dx[j] - ak * dz[j]) / zk;
                if (k > cfg.r_grid[j]) dc[j] += 0.5 * (gprev[j] + g) * dt;
                gprev[j] = g;
            }
        }

        if (k == steps) break;

        double dW = sqdt * normal_draw(cfg.seed, static_cast<std::uint64_t>(path),
                                       static_cast<std::uint64_t>(k));
        out.dW[k] = dW;

        double xnext = 0.0;
        double mult = 1.0;
        switch (cfg.scheme) {
            case Scheme::ExplicitEuler:
                xnext = out.X[k] + ce.B * dt + ce.sig * dW;
                mult = 1.0 + ce.B1 * dt + ce.sig1 * dW;
                break;
            case Scheme::TamedEuler:
                xnext = out.X[k] + ce.B * dt / (1.0 + std::fabs(ce.B) * dt) + ce.sig * dW;
                mult = 1.0 + ce.B1 * dt / (1.0 + std::fabs(ce.B1) * dt) + ce.sig1 * dW;
                break;
            case Scheme::DriftImplicitEuler: {
                double rhs = out.X[k] + ce.sig * dW;
                xnext = detail::newton_implicit_step(dyn, rhs, out.X[k], dt, path, k);
                double denom = 1.0 - dyn.eval(xnext).B1 * dt;
                if (denom <= 0.0) {
                    mult = 0.0;  // forces the degeneracy flag below
                } else {
                    mult = (1.0 + ce.sig1 * dW) / denom;
                }
                break;
            }
        }

        if (!std::isfinite(xnext) || std::fabs(xnext) > kExplosionThreshold) {
            out.exploded = true;
            out.explode_step = k + 1;
            for (std::int64_t j = k + 1; j <= steps; ++j) {
                out.X[j] = out.X[k];
                out.Z[j] = out.Z[k];
                out.C[j] = out.C[k];
                out.a[j] = out.a[k];
            }
            return;
        }

        out.X[k + 1] = xnext;
        if (out.tau_index < 0 && std::fabs(xnext) > plateau) out.tau_index = k + 1;

        if (!frozen) {
            double znext = zk * mult;
            if (!(znext > 0.0) || !std::isfinite(znext)) {
                out.degenerate_z = true;
                out.degenerate_step = k + 1;
                frozen = true;
                out.Z[k + 1] = znext;
            } else {
                for (std::size_t j = 0; j < next_launch; ++j) {
                    double src = (ce.B2 * dt + ce.sig2 * dW) * dx[j] * zk;
                    dz[j] = dz[j] * mult + src;
                    dx[j] *= mult;
                    if (cfg.record_derivative_paths) {
                        out.DX[j][k + 1] = dx[j];
                        out.DZ[j][k + 1] = dz[j];
                    }
                }
                out.Z[k + 1] = znext;
            }
        } else {
            out.Z[k + 1] = out.Z[k];
        }
        if (frozen) {
            out.C[k + 1] = out.C[k];
            out.a[k + 1] = out.a[k];
        }
    }
}

// Worker count: explicit request, else MALLIAVIN_LAB_THREADS, else the
// hardware count. The count never changes results, only wall time.
inline int resolve_workers(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("MALLIAVIN_LAB_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end && *end == '\0' && v >= 1 && v <= 1024) return static_cast<int>(v);
        throw std::invalid_argument("MALLIAVIN_LAB_THREADS must be an integer >= 1");
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(std::min(hw, 8u));
}

// Runs fn(path, workspace) for every path index. Workspaces are
// per-worker; output must be keyed by path index so ordering never
// matters.
template <class Workspace, class Fn>
void parallel_paths(std::int64_t paths, int workers, Fn&& fn) {
    workers = resolve_workers(workers);
    if (workers <= 1 || paths < 2) {
        Workspace ws;
        for (std::int64_t p = 0; p < paths; ++p) fn(p, ws);
        return;
    }
    constexpr std::int64_t kChunk = 64;
    std::atomic<std::int64_t> next{0};
    std::mutex err_mutex;
    std::exception_ptr first_error;
    auto worker = [&]() {
        Workspace ws;
        for (;;) {
            std::int64_t begin = next.fetch_add(kChunk);
            if (begin >= paths) return;
            std::int64_t end = std::min(begin + kChunk, paths);
            try {
                for (std::int64_t p = begin; p < end; ++p) fn(p, ws);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

struct MomentRow {
    std::string level;  // "raw" or the truncation level n
    double t = 0.0;     // -1 marks the running-sup row
    int p = 2;
    Estimate est;
    std::int64_t explosions = 0;
};

// E|X_t|^p on an equispaced time subgrid plus E sup_t |X_t|^p. Exploded
// paths are excluded from the estimates and counted.
inline std::vector<MomentRow> run_moments(const Dynamics& dyn, const SimConfig& cfg,
                                          const std::vector<int>& p_list,
                                          const std::string& level_name, int time_points = 8) {
    if (time_points < 1) throw std::invalid_argument("time_points >= 1");
    const double T = dyn.base().T;
    std::vector<std::int64_t> t_idx;
    for (int i = 1; i <= time_points; ++i)
        t_idx.push_back(cfg.steps * i / time_points);

    const std::int64_t paths = cfg.paths;
    std::vector<double> xs(static_cast<std::size_t>(paths) * t_idx.size());
    std::vector<double> sup(paths);
    std::vector<std::uint8_t> ok(paths, 0);

    parallel_paths<PathBundle>(paths, cfg.workers, [&](std::int64_t p, PathBundle& ws) {
        simulate_path(dyn, cfg, p, ws);
        if (ws.exploded) return;
        ok[p] = 1;
        double s = std::fabs(ws.X[0]);
        for (double v : ws.X) s = std::max(s, std::fabs(v));
        sup[p] = s;
        for (std::size_t i = 0; i < t_idx.size(); ++i)
            xs[static_cast<std::size_t>(p) * t_idx.size() + i] = ws.X[t_idx[i]];
    });

    std::int64_t explosions = 0;
    for (auto f : ok)
        if (!f) ++explosions;

    std::vector<MomentRow> rows;
    std::vector<double> vals;
    vals.reserve(paths);
    for (std::size_t i = 0; i < t_idx.size(); ++i) {
        for (int p : p_list) {
            vals.clear();
            for (std::int64_t pa = 0; pa < paths; ++pa) {
                if (!ok[pa]) continue;
                vals.push_back(std::pow(std::fabs(xs[static_cast<std::size_t>(pa) * t_idx.size() + i]),
                                        p));
            }
            MomentRow row;
            row.level = level_name;
            row.t = T * static_cast<double>(t_idx[i]) / static_cast<double>(cfg.steps);
            row.p = p;
            row.est = estimate_mean(vals);
            row.explosions = explosions;
            rows.push_back(std::move(row));
        }
    }
    for (int p : p_list) {
        vals.clear();
        for (std::int64_t pa = 0; pa < paths; ++pa)
            if (ok[pa]) vals.push_back(std::pow(sup[pa], p));
        MomentRow row;
        row.level = level_name;
        row.t = -1.0;
        row.p = p;
        row.est = estimate_mean(vals);
        row.explosions = explosions;
        rows.push_back(std::move(row));
    }
    return rows;
}

struct ConvergenceRow {
    int n = 0;
    int ref = 0;
    Estimate mean_sq_diff;
    std::int64_t excluded = 0;
};

// Coupled strong error across truncation levels: same Brownian increments
// per path at every level, so plateau agreement is exact until first exit.
inline std::vector<ConvergenceRow> run_level_convergence(const SdeModel& m, double xi,
                                                         const std::vector<int>& levels, int refN,
                                                         const SimConfig& cfg) {
    std::vector<std::unique_ptr<TruncatedDynamics>> dyns;
    for (int n : levels) dyns.push_back(std::make_unique<TruncatedDynamics>(m, xi, n));
    TruncatedDynamics ref(m, xi, refN);

    const std::int64_t paths = cfg.paths;
    std::vector<double> diffs(static_cast<std::size_t>(paths) * levels.size());
    std::vector<std::uint8_t> ok(paths, 0);

    struct WS {
        PathBundle level_bundle, ref_bundle;
    };
    parallel_paths<WS>(paths, cfg.workers, [&](std::int64_t p, WS& ws) {
        simulate_path(ref, cfg, p, ws.ref_bundle);
        if (ws.ref_bundle.exploded) return;
        double xref = ws.ref_bundle.X.back();
        for (std::size_t li = 0; li < dyns.size(); ++li) {
            simulate_path(*dyns[li], cfg, p, ws.level_bundle);
            if (ws.level_bundle.exploded) return;
            double d = ws.level_bundle.X.back() - xref;
            diffs[static_cast<std::size_t>(p) * levels.size() + li] = d * d;
        }
        ok[p] = 1;
    });

    std::int64_t excluded = 0;
    for (auto f : ok)
        if (!f) ++excluded;

    std::vector<ConvergenceRow> rows;
    std::vector<double> vals;
    vals.reserve(paths);
    for (std::size_t li = 0; li < levels.size(); ++li) {
        vals.clear();
        for (std::int64_t p = 0; p < paths; ++p)
            if (ok[p]) vals.push_back(diffs[static_cast<std::size_t>(p) * levels.size() + li]);
        ConvergenceRow row;
        row.n = levels[li];
        row.ref = refN;
        row.mean_sq_diff = estimate_mean(vals);
        row.excluded = excluded;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace mlab
