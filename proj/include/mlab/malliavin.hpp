#pragma once

// Estimators built on the simulated derivative processes:
//   - Malliavin covariance Lambda_T = Z_T^2 C_T per path
//   - small-ball tail tables P(Lambda <= eps) with Wilson intervals
//   - integration-by-parts density weights
//       a_r = sigma(X_r)/Z_r,  <DX_T, a> = Z_T C_T,  G = 1/(Z_T C_T),
//       H = G Int a_r dW_r + Int G^2 (D_rZ_T C_T + Z_T D_rC_T) a_r dr,
//       p(x) = E[ 1_{X_T > x} H ]
//   - kernel density cross-check
//   - the pair generator applied to V_q(x,y) = x^{4q} + x^{2q} y^{2q}
//     + y^{2q} + M, both as one expression and term by term.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlab/model.hpp"
#include "mlab/sim.hpp"
#include "mlab/stats.hpp"

namespace mlab {

struct CovarianceSample {
    double lambda = 0.0;
    double z_T = 0.0;
    double c_T = 0.0;
    bool usable = false;
};

inline CovarianceSample covariance(const PathBundle& b) {
    CovarianceSample s;
    s.z_T = b.Z.back();
    s.c_T = b.C.back();
    s.lambda = s.z_T * s.z_T * s.c_T;
    s.usable = b.usable();
    return s;
}

// The same covariance through the exponential form of the inverse flow,
// kept as a separate computation route: the Z in C's integrand is
// rebuilt as exp(Int (B' - sigma'^2/2) ds + Int sigma' dW) from the
// stored path, then C integrates exp(-2 log Z_r) sigma^2(X_r).
inline CovarianceSample covariance_expform(const Dynamics& dyn, const PathBundle& b) {
    CovarianceSample s;
    s.usable = b.usable();
    const double dt = b.dt;
    CompensatedSum logz;   // log Z_r accumulated with left-point sums
    CompensatedSum c;
    double prev_integrand = 0.0;
    for (std::int64_t k = 0; k <= b.steps; ++k) {
        double integrand = std::exp(-2.0 * logz.value());
        CoeffEval ce = dyn.eval(b.X[k]);
        integrand *= ce.sig * ce.sig;
        if (k > 0) c.add(0.5 * (prev_integrand + integrand) * dt);
        prev_integrand = integrand;
        if (k < b.steps) {
            logz.add((ce.B1 - 0.5 * ce.sig1 * ce.sig1) * dt + ce.sig1 * b.dW[k]);
        }
    }
    s.c_T = c.value();
    s.z_T = std::exp(logz.value());
    s.lambda = s.z_T * s.z_T * s.c_T;
    return s;
}

// IBP weight for the terminal density; excluded paths report usable =
// false with the reason counted by the caller.
struct IbpWeight {
    double H = 0.0;
    double zc = 0.0;  // Z_T C_T, the localization quantity
    bool usable = false;
};

inline IbpWeight ibp_weight(const PathBundle& b) {
    IbpWeight w;
    if (!b.usable()) return w;
    const double zT = b.Z.back();
    const double cT = b.C.back();
    w.zc = zT * cT;
    if (!(std::fabs(w.zc) > kLocalizationFloor)) return w;
    const double G = 1.0 / w.zc;

    CompensatedSum ito;
    for (std::int64_t k = 0; k < b.steps; ++k) ito.add(b.a[k] * b.dW[k]);

    // trapezoid over the launch grid in r
    CompensatedSum corr;
    const auto& rg = b.r_grid;
    if (rg.size() >= 2) {
        std::vector<double> integrand(rg.size());
        for (std::size_t j = 0; j < rg.size(); ++j) {
            double dlog = b.dzT[j] * cT + zT * b.dcT[j];
            integrand[j] = G * G * dlog * b.a[rg[j]];
        }
        for (std::size_t j = 0; j + 1 < rg.size(); ++j) {
            double dr = b.dt * static_cast<double>(rg[j + 1] - rg[j]);
            corr.add(0.5 * (integrand[j] + integrand[j + 1]) * dr);
        }
    }
    w.H = G * ito.value() + corr.value();
    w.usable = true;
    return w;
}

struct MalliavinRun {
    std::vector<double> x_T;      // per path
    std::vector<double> z_T;
    std::vector<double> lambda;
    std::vector<double> weight;   // IBP H
    std::vector<std::uint8_t> usable;
    std::int64_t explosions = 0;
    std::int64_t degenerate = 0;
    std::int64_t localized_out = 0;

    std::int64_t excluded() const { return explosions + degenerate + localized_out; }
};

inline MalliavinRun run_malliavin(const Dynamics& dyn, const SimConfig& cfg) {
    MalliavinRun run;
    const std::int64_t paths = cfg.paths;
    run.x_T.assign(paths, 0.0);
    run.z_T.assign(paths, 0.0);
    run.lambda.assign(paths, 0.0);
    run.weight.assign(paths, 0.0);
    run.usable.assign(paths, 0);
    std::vector<std::uint8_t> reason(paths, 0);  // 1 explode, 2 degenerate, 3 localized

    parallel_paths<PathBundle>(paths, cfg.workers, [&](std::int64_t p, PathBundle& ws) {
        simulate_path(dyn, cfg, p, ws);
        if (ws.exploded) {
            reason[p] = 1;
            return;
        }
        if (ws.degenerate_z) {
            reason[p] = 2;
            return;
        }
        CovarianceSample cov = covariance(ws);
        IbpWeight w = ibp_weight(ws);
        if (!w.usable) {
            reason[p] = 3;
            return;
        }
        run.x_T[p] = ws.X.back();
        run.z_T[p] = ws.Z.back();
        run.lambda[p] = cov.lambda;
        run.weight[p] = w.H;
        run.usable[p] = 1;
    });

    for (std::int64_t p = 0; p < paths; ++p) {
        switch (reason[p]) {
            case 1: ++run.explosions; break;
            case 2: ++run.degenerate; break;
            case 3: ++run.localized_out; break;
            default: break;
        }
    }
    return run;
}

struct TailRow {
    double eps = 0.0;
    int p = 2;
    double p_hat = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    double bound = 0.0;  // eps^p (1 + l_p) with l_p = mean |Z_T|^p
};

// Empirical small-ball table for the covariance, one row per (eps, p).
inline std::vector<TailRow> nondegeneracy_tail(const MalliavinRun& run,
                                               const std::vector<double>& eps_list,
                                               const std::vector<int>& p_list) {
    std::int64_t n = 0;
    for (auto u : run.usable)
        if (u) ++n;
    if (n == 0) throw std::runtime_error("no usable paths for the tail table");

    std::vector<TailRow> rows;
    for (int p : p_list) {
        std::vector<double> zp;
        zp.reserve(n);
        for (std::size_t i = 0; i < run.usable.size(); ++i)
            if (run.usable[i]) zp.push_back(std::pow(std::fabs(run.z_T[i]), p));
        double l_p = estimate_mean(zp).mean;
        for (double eps : eps_list) {
            std::int64_t hits = 0;
            for (std::size_t i = 0; i < run.usable.size(); ++i)
                if (run.usable[i] && run.lambda[i] <= eps) ++hits;
            WilsonInterval w = wilson_score(hits, n);
            TailRow row;
            row.eps = eps;
            row.p = p;
            row.p_hat = w.p_hat;
            row.ci_lo = w.lo;
            row.ci_hi = w.hi;
            row.bound = std::pow(eps, p) * (1.0 + l_p);
            rows.push_back(row);
        }
    }
    return rows;
}

struct DensityRow {
    double x = 0.0;
    double ibp = 0.0;
    double ibp_se = 0.0;
    double kde = 0.0;
    double kde_se = 0.0;
};

struct DensityEstimate {
    std::vector<DensityRow> rows;
    double mass_ibp = 0.0;
    double mass_kde = 0.0;
    double bandwidth = 0.0;
};

// p(x) = E[1_{X_T > x} H] pointwise, with the kernel estimate alongside.
inline DensityEstimate density_estimate(const MalliavinRun& run, const std::vector<double>& grid) {
    if (grid.size() < 2) throw std::invalid_argument("density grid needs >= 2 points");
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (!(grid[i] > grid[i - 1]))
            throw std::invalid_argument("density grid must be strictly increasing");

    std::vector<double> samples;
    samples.reserve(run.x_T.size());
    for (std::size_t i = 0; i < run.x_T.size(); ++i)
        if (run.usable[i]) samples.push_back(run.x_T[i]);
    if (samples.size() < 2) throw std::runtime_error("not enough usable paths for a density");

    DensityEstimate out;
    out.bandwidth = silverman_bandwidth(samples);

    std::vector<double> terms;
    terms.reserve(samples.size());
    for (double x : grid) {
        DensityRow row;
        row.x = x;
        terms.clear();
        for (std::size_t i = 0; i < run.x_T.size(); ++i) {
            if (!run.usable[i]) continue;
            terms.push_back(run.x_T[i] > x ? run.weight[i] : 0.0);
        }
        Estimate e = estimate_mean(terms);
        row.ibp = e.mean;
        row.ibp_se = e.se;
        KdePoint k = kde_at(samples, x, out.bandwidth);
        row.kde = k.value;
        row.kde_se = k.se;
        out.rows.push_back(row);
    }

    std::vector<double> xs(grid.begin(), grid.end());
    std::vector<double> ibp_vals, kde_vals;
    for (const auto& r : out.rows) {
        ibp_vals.push_back(r.ibp);
        kde_vals.push_back(r.kde);
    }
    out.mass_ibp = trapezoid_mass(xs, ibp_vals);
    out.mass_kde = trapezoid_mass(xs, kde_vals);
    return out;
}

// ---- pair generator and Lyapunov audit ----------------------------------

struct VPartials {
    double V = 0.0, Vx = 0.0, Vy = 0.0, Vxx = 0.0, Vxy = 0.0, Vyy = 0.0;
};

// V_q(x, y) = x^{4q} + x^{2q} y^{2q} + y^{2q} + M
inline VPartials lyapunov_V(int q, double M, double x, double y) {
    if (q < 1) throw std::invalid_argument("lyapunov_V needs q >= 1");
    const double qq = static_cast<double>(q);
    const double x2q = Expr::powi(x, 2 * q);
    const double x2qm1 = Expr::powi(x, 2 * q - 1);
    const double x2qm2 = Expr::powi(x, 2 * q - 2);
    const double x4q = x2q * x2q;
    const double x4qm1 = Expr::powi(x, 4 * q - 1);
    const double x4qm2 = Expr::powi(x, 4 * q - 2);
    const double y2q = Expr::powi(y, 2 * q);
    const double y2qm1 = Expr::powi(y, 2 * q - 1);
    const double y2qm2 = Expr::powi(y, 2 * q - 2);
    VPartials v;
    v.V = x4q + x2q * y2q + y2q + M;
    v.Vx = 4.0 * qq * x4qm1 + 2.0 * qq * x2qm1 * y2q;
    v.Vy = 2.0 * qq * x2q * y2qm1 + 2.0 * qq * y2qm1;
    v.Vxx = 4.0 * qq * (4.0 * qq - 1.0) * x4qm2 + 2.0 * qq * (2.0 * qq - 1.0) * x2qm2 * y2q;
    v.Vxy = 4.0 * qq * qq * x2qm1 * y2qm1;
    v.Vyy = 2.0 * qq * (2.0 * qq - 1.0) * y2qm2 * (x2q + 1.0);
    return v;
}

// Generator of the pair (X, D_rX) applied to given partials at (x, y).
inline double generator_apply_partials(const CoeffEval& c, const VPartials& v, double y) {
    return v.Vx * c.B + v.Vy * c.B1 * y + 0.5 * v.Vxx * c.sig * c.sig +
           v.Vxy * c.sig * c.sig1 * y + 0.5 * v.Vyy * c.sig1 * c.sig1 * y * y;
}

inline double generator_apply(const Dynamics& dyn, int q, double M, double x, double y) {
    return generator_apply_partials(dyn.eval(x), lyapunov_V(q, M, x, y), y);
}

// Term-by-term expansion of the same quantity; an independent algebraic
// route used to cross-check generator_apply.
struct GeneratorTerms {
    double I1 = 0.0, I2 = 0.0, I3 = 0.0, I4 = 0.0;
    double total() const { return I1 + I2 + I3 + I4; }
};

inline GeneratorTerms generator_terms(const Dynamics& dyn, int q, double x, double y) {
    const CoeffEval c = dyn.eval(x);
    const double qq = static_cast<double>(q);
    const double x2q = Expr::powi(x, 2 * q);
    const double x2qm1 = Expr::powi(x, 2 * q - 1);
    const double x2qm2 = Expr::powi(x, 2 * q - 2);
    const double x4qm2 = Expr::powi(x, 4 * q - 2);
    const double y2q = Expr::powi(y, 2 * q);
    GeneratorTerms t;
    t.I1 = 4.0 * qq * x4qm2 * (x * c.B + (4.0 * qq - 1.0) / 2.0 * c.sig * c.sig);
    t.I2 = 2.0 * qq * y2q * x2qm2 * (x * c.B + (2.0 * qq - 1.0) / 2.0 * c.sig * c.sig);
    t.I3 = 2.0 * qq * y2q *
           (2.0 * qq * x2qm1 * c.sig * c.sig1 +
            (2.0 * qq - 1.0) / 2.0 * c.sig1 * c.sig1 * (x2q + 1.0));
    t.I4 = 2.0 * qq * y2q * c.B1 * (x2q + 1.0);
    return t;
}

struct LyapunovAudit {
    int q = 1;
    double M = 1.0;
    double R = 10.0;
    double c_min = 0.0;         // max over grid of (LV - budget) / V at radius R
    double c_min_double = 0.0;  // same at radius 2R
    double worst_x = 0.0;
    double worst_y = 0.0;
    bool stable = false;        // within 5% under radius doubling
};

namespace detail {

// Log-spaced audit points: 0 and +-2^(j/points_per_octave) up to R,
// starting at 2^-10. Doubling R extends the set without moving existing
// points, and doubling the density keeps every existing point while
// inserting midpoints, so interior maxima are preserved exactly.
inline std::vector<double> audit_axis(double R, int points_per_octave = 16) {
    std::vector<double> out{0.0};
    for (int j = -10 * points_per_octave;; ++j) {
        double v = std::pow(2.0, static_cast<double>(j) / points_per_octave);
        if (v > R) break;
        out.push_back(v);
        out.push_back(-v);
    }
    return out;
}

}  // namespace detail

// c_q_min = max over the grid of (L V_q - 2q(2q-1) y^{2q} sigma'(x)^2) / V_q,
// with the raw sigma' in the budget. Stability under radius doubling is
// the pass signal; a growing max flags a Lyapunov-incompatible model.
inline LyapunovAudit lyapunov_audit(const Dynamics& dyn, int q, double M, double R = 10.0,
                                    int points_per_octave = 16) {
    if (M <= 0.0) throw std::invalid_argument("lyapunov_audit needs M > 0");
    if (points_per_octave < 1) throw std::invalid_argument("points_per_octave must be >= 1");
    LyapunovAudit audit;
    audit.q = q;
    audit.M = M;
    audit.R = R;

    auto scan = [&](double radius, double* wx, double* wy) {
        double best = -std::numeric_limits<double>::infinity();
        auto xs = detail::audit_axis(radius, points_per_octave);
        auto ys = detail::audit_axis(radius, points_per_octave);
        for (double x : xs) {
            const CoeffEval c = dyn.eval(x);
            const double sraw = dyn.raw_sigma_prime(x);
            for (double y : ys) {
                VPartials v = lyapunov_V(q, M, x, y);
                double budget = 2.0 * q * (2.0 * q - 1.0) * Expr::powi(y, 2 * q) * sraw * sraw;
                double ratio = (generator_apply_partials(c, v, y) - budget) / v.V;
                if (ratio > best) {
                    best = ratio;
                    if (wx) *wx = x;
                    if (wy) *wy = y;
                }
            }
        }
        return best;
    };

    audit.c_min = scan(R, &audit.worst_x, &audit.worst_y);
    audit.c_min_double = scan(2.0 * R, nullptr, nullptr);
    double scale = std::max(std::fabs(audit.c_min), std::fabs(audit.c_min_double));
    audit.stable = std::isfinite(audit.c_min) && std::isfinite(audit.c_min_double) &&
                   std::fabs(audit.c_min_double - audit.c_min) <= 0.05 * scale + 1e-9;
    return audit;
}

}  // namespace mlab
