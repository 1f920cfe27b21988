#pragma once

// Scalar SDE model dX = (b(X) + f(X)) dt + sigma(X) dW with checkers for
// the structural conditions the estimators rely on: one-sided drift
// monotonicity, a radial moment bound, polynomial growth of coefficient
// derivatives, and the pointwise ellipticity/bracket condition at x0.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlab/expr.hpp"

namespace mlab {

struct SdeModel {
    Expr b;
    Expr f;
    Expr sigma;
    double x0 = 0.0;
    double T = 1.0;
    // Optional user-declared growth exponents q_j for non-polynomial
    // coefficients, keyed by derivative order j.
    std::map<int, double> growth_exponents;

    static SdeModel from_strings(const std::string& b_src, const std::string& f_src,
                                 const std::string& sigma_src, double x0, double T,
                                 std::map<int, double> growth = {}) {
        SdeModel m;
        m.b = parse_expr(b_src);
        m.f = parse_expr(f_src);
        m.sigma = parse_expr(sigma_src);
        m.x0 = x0;
        m.T = T;
        m.growth_exponents = std::move(growth);
        return m;
    }

    Expr total_drift() const { return Expr::add(b, f); }
};

namespace detail {

// Symmetric grid max of fn over [-R, R]; skips isolated domain errors.
template <class Fn>
double grid_max(Fn&& fn, double R, int points) {
    if (points < 3 || R <= 0.0) throw std::invalid_argument("grid_max needs R > 0, points >= 3");
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < points; ++i) {
        double x = -R + 2.0 * R * static_cast<double>(i) / static_cast<double>(points - 1);
        try {
            best = std::max(best, fn(x));
        } catch (const DomainError&) {
        }
    }
    return best;
}

inline bool stable(double v1, double v2, double rel_tol = 0.01, double abs_tol = 1e-9) {
    double scale = std::max(std::fabs(v1), std::fabs(v2));
    return std::fabs(v2 - v1) <= rel_tol * scale + abs_tol;
}

// Golden-section refinement of a 1-d maximum around grid point x with
// spacing h.
template <class Fn>
double refine_max(Fn&& fn, double x, double h) {
    double lo = x - h, hi = x + h;
    const double gr = 0.6180339887498949;
    double a = hi - gr * (hi - lo), b = lo + gr * (hi - lo);
    double fa = fn(a), fb = fn(b);
    for (int it = 0; it < 160 && hi - lo > 1e-13 * std::max(1.0, std::fabs(x)); ++it) {
        if (fa < fb) {
            lo = a;
            a = b;
            fa = fb;
            b = lo + gr * (hi - lo);
            fb = fn(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - gr * (hi - lo);
            fa = fn(a);
        }
    }
    return std::max(fn(0.5 * (lo + hi)), std::max(fa, fb));
}

template <class Fn>
double scan_max(Fn&& fn, double R, int points) {
    double best = -std::numeric_limits<double>::infinity();
    double best_x = 0.0;
    double h = 2.0 * R / static_cast<double>(points - 1);
    for (int i = 0; i < points; ++i) {
        double x = -R + h * static_cast<double>(i);
        double v;
        try {
            v = fn(x);
        } catch (const DomainError&) {
            continue;
        }
        if (v > best) {
            best = v;
            best_x = x;
        }
    }
    return std::max(best, refine_max(fn, best_x, h));
}

// A polynomial is bounded above on R iff it is constant or has even
// degree with a negative leading coefficient.
inline bool poly_bounded_above(const std::vector<double>& coefs) {
    int deg = 0;
    for (int i = static_cast<int>(coefs.size()) - 1; i >= 0; --i)
        if (coefs[i] != 0.0) {
            deg = i;
            break;
        }
    if (deg == 0) return true;
    return deg % 2 == 0 && coefs[deg] < 0.0;
}

// Cauchy bound: all real roots of the polynomial lie inside this radius.
inline double poly_root_bound(const std::vector<double>& coefs) {
    int deg = 0;
    for (int i = static_cast<int>(coefs.size()) - 1; i >= 0; --i)
        if (coefs[i] != 0.0) {
            deg = i;
            break;
        }
    if (deg == 0) return 1.0;
    double m = 0.0;
    for (int i = 0; i < deg; ++i) m = std::max(m, std::fabs(coefs[i] / coefs[deg]));
    return 1.0 + m;
}

inline std::vector<double> poly_derivative(const std::vector<double>& coefs) {
    if (coefs.size() <= 1) return {0.0};
    std::vector<double> out(coefs.size() - 1);
    for (std::size_t i = 1; i < coefs.size(); ++i)
        out[i - 1] = coefs[i] * static_cast<double>(i);
    return out;
}

}  // namespace detail

struct MonotoneResult {
    double K_best = 0.0;    // at radius R
    double K_double = 0.0;  // at radius 2R
    bool pass = false;
    bool K_nonneg = false;  // informational; a negative K still passes if stable
};

// K_best = -max b'(x) over [-R, R]; passes when the value is insensitive
// to doubling R.
inline MonotoneResult check_monotone(const SdeModel& m, double R = 10.0, int points = 20001) {
    CompiledExpr b1(m.b.derivative());
    MonotoneResult out;
    out.K_best = -detail::grid_max([&](double x) { return b1(x); }, R, points);
    out.K_double = -detail::grid_max([&](double x) { return b1(x); }, 2.0 * R, points);
    out.pass = std::isfinite(out.K_best) && detail::stable(out.K_best, out.K_double);
    out.K_nonneg = out.K_best >= 0.0;
    return out;
}

struct BoundResult {
    int p = 1;
    double alpha = 0.0;
    double beta = 0.0;
    double alpha_double = 0.0;  // alpha recomputed at 2R (grid path only)
    bool pass = false;
    bool beta_neg1_ok = false;  // probe: does beta = -1 already work
    bool global = false;        // decided via polynomial degree, not grid stability
};

namespace detail {

struct BoundProbe {
    bool ok = false;
    double alpha = 0.0;
    double alpha_double = 0.0;
    bool global = false;
};

// g(a) = a b(a) + (12p-1) sigma^2(a) + (4p-1) (a sigma'(a))^2, tested
// against alpha + beta a^2. Polynomial coefficients give the global
// boundedness answer; otherwise grid stability under R doubling decides.
inline BoundProbe probe_beta(const SdeModel& m, int p, double beta, double R, int points) {
    Expr a = Expr::variable();
    Expr g = Expr::add(
        Expr::mul(a, m.b),
        Expr::add(Expr::mul(Expr::constant(12.0 * p - 1.0), Expr::pow(m.sigma, 2)),
                  Expr::mul(Expr::constant(4.0 * p - 1.0),
                            Expr::pow(Expr::mul(a, m.sigma.derivative()), 2))));
    Expr h = Expr::sub(g, Expr::mul(Expr::constant(beta), Expr::pow(a, 2)));
    BoundProbe out;
    CompiledExpr hc(h);
    if (auto coefs = h.poly_coefficients()) {
        out.global = true;
        if (!poly_bounded_above(*coefs)) return out;
        double radius = poly_root_bound(poly_derivative(*coefs));
        out.alpha = std::max(scan_max([&](double x) { return hc(x); }, radius, 4001), hc(0.0));
        out.alpha_double = out.alpha;
        out.ok = true;
        return out;
    }
    out.alpha = scan_max([&](double x) { return hc(x); }, R, points);
    out.alpha_double = scan_max([&](double x) { return hc(x); }, 2.0 * R, points);
    out.ok = std::isfinite(out.alpha) && stable(out.alpha, out.alpha_double);
    return out;
}

}  // namespace detail

// Searches beta over {0} then a doubling ladder up to 2^10; prefers the
// smallest alpha achieved at beta = 0. beta = -1 is probed for the report.
inline BoundResult check_bound(const SdeModel& m, int p, double R = 10.0, int points = 8001) {
    if (p < 1) throw std::invalid_argument("check_bound needs p >= 1");
    BoundResult out;
    out.p = p;
    auto neg = detail::probe_beta(m, p, -1.0, R, points);
    out.beta_neg1_ok = neg.ok;
    std::vector<double> ladder{0.0, 1.0, 2.0};
    for (double v = 4.0; v <= 1024.0; v *= 2.0) ladder.push_back(v);
    for (double beta : ladder) {
        auto probe = detail::probe_beta(m, p, beta, R, points);
        if (probe.ok) {
            out.beta = beta;
            out.alpha = probe.alpha;
            out.alpha_double = probe.alpha_double;
            out.global = probe.global;
            out.pass = true;
            return out;
        }
    }
    out.pass = false;
    return out;
}

struct GrowthRow {
    int j = 0;
    double q = 0.0;
    double lambda = 0.0;
    bool q_exact = false;  // exact polynomial degree vs user-declared
};

struct GrowthResult {
    std::vector<GrowthRow> rows;
    double xi = 0.0;  // max q_j over 1 <= j <= j_max
    bool pass = false;
};

// q_j is the exact polynomial degree of |b^(j)| + |sigma^(j)| when both
// are polynomial; otherwise the user-declared exponent is required.
inline GrowthResult check_growth(const SdeModel& m, int j_max = 5, double R = 10.0,
                                 int points = 8001) {
    if (j_max < 1) throw std::invalid_argument("check_growth needs j_max >= 1");
    GrowthResult out;
    Expr bj = m.b, sj = m.sigma;
    for (int j = 0; j <= j_max; ++j) {
        if (j > 0) {
            bj = bj.derivative();
            sj = sj.derivative();
        }
        GrowthRow row;
        row.j = j;
        auto db = bj.poly_degree();
        auto ds = sj.poly_degree();
        if (db && ds) {
            row.q = static_cast<double>(std::max(*db, *ds));
            row.q_exact = true;
        } else {
            auto it = m.growth_exponents.find(j);
            if (it == m.growth_exponents.end())
                throw std::invalid_argument(
                    "coefficient derivative of order " + std::to_string(j) +
                    " is not polynomial; declare growth_exponents for it");
            row.q = it->second;
            row.q_exact = false;
        }
        CompiledExpr bc(bj), sc(sj);
        double q = row.q;
        row.lambda = detail::grid_max(
            [&](double x) {
                return (std::fabs(bc(x)) + std::fabs(sc(x))) / (1.0 + std::pow(std::fabs(x), q));
            },
            R, points);
        if (j >= 1) out.xi = std::max(out.xi, row.q);
        out.rows.push_back(row);
    }
    out.pass = true;
    return out;
}

struct HormanderResult {
    bool pass = false;
    // 0: sigma(x0) itself is nonzero; n >= 1: first order with
    // sigma^(n)(x0) * (b+f)(x0) nonzero; -1: nothing found up to n_max.
    int witness_order = -1;
    double witness_value = 0.0;
    std::string witness;
};

inline HormanderResult hormander_check(const SdeModel& m, int n_max = 8, double tol = 1e-12) {
    HormanderResult out;
    double s0 = m.sigma.eval(m.x0);
    if (std::fabs(s0) > tol) {
        out.pass = true;
        out.witness_order = 0;
        out.witness_value = s0;
        out.witness = "sigma(x0) != 0";
        return out;
    }
    double drift0 = m.b.eval(m.x0) + m.f.eval(m.x0);
    Expr sn = m.sigma;
    for (int n = 1; n <= n_max; ++n) {
        sn = sn.derivative();
        double v = sn.eval(m.x0) * drift0;
        if (std::fabs(v) > tol) {
            out.pass = true;
            out.witness_order = n;
            out.witness_value = v;
            out.witness = "sigma^(" + std::to_string(n) + ")(x0) * drift(x0) != 0";
            return out;
        }
    }
    out.pass = false;
    out.witness = "no nonzero bracket up to order " + std::to_string(n_max);
    return out;
}

struct HypothesisReport {
    MonotoneResult monotone;
    std::vector<BoundResult> bounds;
    GrowthResult growth;
    double k1 = 0.0;       // Lipschitz constant of f (grid sup of |f'|)
    bool f_pass = false;   // sup |f^(j)| stable for j = 1..3
    double R = 0.0;
    int grid_points = 0;
    bool pass = false;
};

inline HypothesisReport run_hypothesis_checks(const SdeModel& m, const std::vector<int>& p_list,
                                              int j_max = 5, double R = 10.0, int points = 8001) {
    HypothesisReport rep;
    rep.R = R;
    rep.grid_points = points;
    rep.monotone = check_monotone(m, R, std::max(points, 20001));
    for (int p : p_list) rep.bounds.push_back(check_bound(m, p, R, points));
    rep.growth = check_growth(m, j_max, R, points);

    rep.f_pass = true;
    Expr fj = m.f;
    for (int j = 1; j <= 3; ++j) {
        fj = fj.derivative();
        CompiledExpr fc(fj);
        double s1 = detail::grid_max([&](double x) { return std::fabs(fc(x)); }, R, points);
        double s2 = detail::grid_max([&](double x) { return std::fabs(fc(x)); }, 2.0 * R, points);
        if (j == 1) rep.k1 = s1;
        if (!detail::stable(s1, s2)) rep.f_pass = false;
    }

    rep.pass = rep.monotone.pass && rep.growth.pass && rep.f_pass;
    for (const auto& b : rep.bounds) rep.pass = rep.pass && b.pass;
    return rep;
}

inline nlohmann::json to_json(const HypothesisReport& rep) {
    nlohmann::json j;
    j["K_best"] = rep.monotone.K_best;
    j["K_double_R"] = rep.monotone.K_double;
    j["K_nonneg"] = rep.monotone.K_nonneg;
    j["monotone_pass"] = rep.monotone.pass;
    j["k1"] = rep.k1;
    j["f_pass"] = rep.f_pass;
    j["bounds"] = nlohmann::json::array();
    for (const auto& b : rep.bounds) {
        j["bounds"].push_back({{"p", b.p},
                               {"alpha", b.alpha},
                               {"beta", b.beta},
                               {"alpha_double_R", b.alpha_double},
                               {"pass", b.pass},
                               {"beta_neg1_ok", b.beta_neg1_ok},
                               {"global", b.global}});
    }
    j["growth"] = nlohmann::json::array();
    for (const auto& g : rep.growth.rows) {
        j["growth"].push_back(
            {{"j", g.j}, {"q", g.q}, {"lambda", g.lambda}, {"q_exact", g.q_exact}});
    }
    j["xi"] = rep.growth.xi;
    j["R"] = rep.R;
    j["grid_points"] = rep.grid_points;
    j["pass"] = rep.pass;
    return j;
}

// Second-moment envelope from the bound constants at p = 1:
//   beta' = 2 beta + 2 k1^2 + 1,  alpha' = 2 (alpha + f(0)^2),
//   E X_t^2 <= (x0^2 + alpha'/beta') exp(3 beta' t).
struct MomentEnvelope {
    double alpha_prime = 0.0;
    double beta_prime = 0.0;
    double x0 = 0.0;

    double at(double t) const {
        return (x0 * x0 + alpha_prime / beta_prime) * std::exp(3.0 * beta_prime * t);
    }
};

inline MomentEnvelope moment_envelope(const SdeModel& m, const BoundResult& p1, double k1) {
    if (p1.p != 1) throw std::invalid_argument("moment_envelope expects the p = 1 bound row");
    MomentEnvelope env;
    double f0 = m.f.eval(0.0);
    env.beta_prime = 2.0 * p1.beta + 2.0 * k1 * k1 + 1.0;
    env.alpha_prime = 2.0 * (p1.alpha + f0 * f0);
    env.x0 = m.x0;
    if (env.beta_prime <= 0.0)
        throw std::invalid_argument("moment envelope needs beta' > 0; use beta >= 0");
    return env;
}

}  // namespace mlab
