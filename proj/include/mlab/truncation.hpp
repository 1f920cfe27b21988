#pragma once

// Smooth cutoff family phi_n: identically 1 on |x| <= n^xi, identically 0
// outside |x| <= 2 n^xi, built by mollifying an indicator with the
// standard bump exp(-1/(1-t^2)). In one dimension the convolution
// collapses to a difference of shifted bump CDFs:
//   phi_n(x) = Psi((x+r)/eps) - Psi((x-r)/eps),
// with eps = n^xi / 2 and r = n^xi + eps, which keeps the support inside
// the doubled ball. Truncated coefficients are b_n = phi_n b and
// sigma_n = phi_n sigma; f is left untouched.

#include <array>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "mlab/model.hpp"

namespace mlab {

namespace detail {

template <class Fn>
double adaptive_simpson_rec(Fn&& fn, double a, double b, double fa, double fm, double fb,
                            double whole, double tol, int depth) {
    double m = 0.5 * (a + b);
    double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    double flm = fn(lm), frm = fn(rm);
    double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    double delta = left + right - whole;
    if (depth <= 0 || std::fabs(delta) <= 15.0 * tol)
        return left + right + delta / 15.0;
    return adaptive_simpson_rec(fn, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           adaptive_simpson_rec(fn, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

template <class Fn>
double adaptive_simpson(Fn&& fn, double a, double b, double tol) {
    double fa = fn(a), fb = fn(b), fm = fn(0.5 * (a + b));
    double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return adaptive_simpson_rec(fn, a, b, fa, fm, fb, whole, tol, 48);
}

}  // namespace detail

// Normalized bump on (-1, 1) with its cumulative Psi. Psi is tabulated on
// 4096 nodes by adaptive quadrature and evaluated with cubic Hermite
// interpolation using the exact slopes Psi' = psi.
class Bump {
    static constexpr int kNodes = 4096;
    double norm_ = 0.0;
    std::vector<double> cum_;

    static double raw(double t) {
        if (std::fabs(t) >= 1.0) return 0.0;
        return std::exp(-1.0 / (1.0 - t * t));
    }

    Bump() {
        double total = detail::adaptive_simpson([](double t) { return raw(t); }, -1.0, 1.0, 1e-14);
        norm_ = 1.0 / total;
        cum_.resize(kNodes);
        cum_[0] = 0.0;
        double h = 2.0 / (kNodes - 1);
        for (int i = 1; i < kNodes; ++i) {
            double a = -1.0 + h * (i - 1);
            double b = -1.0 + h * i;
            cum_[i] = cum_[i - 1] +
                      norm_ * detail::adaptive_simpson([](double t) { return raw(t); }, a, b,
                                                       1e-14);
        }
        // the table must end at exactly 1 for the clamped tails to join up
        double scale = 1.0 / cum_.back();
        for (double& v : cum_) v *= scale;
    }

public:
    static const Bump& instance() {
        static const Bump bump;
        return bump;
    }

    double psi(double t) const { return norm_ * raw(t); }

    double psi_prime(double t) const {
        if (std::fabs(t) >= 1.0) return 0.0;
        double u = 1.0 - t * t;
        return psi(t) * (-2.0 * t / (u * u));
    }

    double max_value() const { return psi(0.0); }

    // Cumulative of psi, clamped to {0, 1} outside [-1, 1].
    double cdf(double u) const {
        if (u <= -1.0) return 0.0;
        if (u >= 1.0) return 1.0;
        double h = 2.0 / (kNodes - 1);
        double pos = (u + 1.0) / h;
        int i = std::min(static_cast<int>(pos), kNodes - 2);
        double s = pos - i;
        double t0 = -1.0 + h * i;
        double y0 = cum_[i], y1 = cum_[i + 1];
        double d0 = h * psi(t0), d1 = h * psi(t0 + h);
        double s2 = s * s, s3 = s2 * s;
        return (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * d0 +
               (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * d1;
    }
};

class CutoffScheme {
    double xi_ = 0.0;
    int n_ = 1;
    double plateau_ = 1.0;  // n^xi
    double eps_ = 0.5;
    double r_ = 1.5;

public:
    CutoffScheme(double xi, int n) : xi_(xi), n_(n) {
        if (n < 1) throw std::invalid_argument("cutoff level n must be >= 1");
        if (xi < 0.0) throw std::invalid_argument("cutoff exponent xi must be >= 0");
        plateau_ = std::pow(static_cast<double>(n), xi);
        eps_ = plateau_ / 2.0;
        r_ = plateau_ + eps_;
    }

    double xi() const { return xi_; }
    int level() const { return n_; }
    double plateau() const { return plateau_; }
    double eps() const { return eps_; }
    double support() const { return 2.0 * plateau_; }

    // Exactly 1 on the plateau and exactly 0 outside the support, so
    // truncated and raw dynamics agree bitwise until the first exit.
    // Evaluation canonicalizes on |x| to make the evenness bitwise.
    double value(double x) const {
        double ax = std::fabs(x);
        if (ax <= plateau_) return 1.0;
        if (ax >= support()) return 0.0;
        const Bump& bump = Bump::instance();
        return bump.cdf((ax + r_) / eps_) - bump.cdf((ax - r_) / eps_);
    }

    double derivative(double x, int order = 1) const {
        double ax = std::fabs(x);
        if (ax <= plateau_ || ax >= support()) return 0.0;
        const Bump& bump = Bump::instance();
        if (order == 1) {
            double d = (bump.psi((ax + r_) / eps_) - bump.psi((ax - r_) / eps_)) / eps_;
            return x < 0.0 ? -d : d;  // odd
        }
        if (order == 2)
            return (bump.psi_prime((ax + r_) / eps_) - bump.psi_prime((ax - r_) / eps_)) /
                   (eps_ * eps_);  // even
        throw std::invalid_argument("cutoff derivative order must be 1 or 2");
    }

    // Supremum bound for |phi'|: ||psi||_inf / eps.
    double derivative_sup_bound() const { return Bump::instance().max_value() / eps_; }
};

// Coefficients of the truncated equation and their first two derivatives.
class TruncatedModel {
    SdeModel base_;
    CutoffScheme scheme_;
    CompiledExpr b_[3], f_[3], s_[3];

public:
    TruncatedModel(SdeModel base, CutoffScheme scheme)
        : base_(std::move(base)), scheme_(scheme) {
        Expr bb = base_.b, ff = base_.f, ss = base_.sigma;
        for (int j = 0; j < 3; ++j) {
            b_[j] = CompiledExpr(bb);
            f_[j] = CompiledExpr(ff);
            s_[j] = CompiledExpr(ss);
            bb = bb.derivative();
            ff = ff.derivative();
            ss = ss.derivative();
        }
    }

    const SdeModel& base() const { return base_; }
    const CutoffScheme& scheme() const { return scheme_; }

    double b_n(double x) const {
        double phi = scheme_.value(x);
        return phi == 0.0 ? 0.0 : phi * b_[0](x);
    }
    double sigma_n(double x) const {
        double phi = scheme_.value(x);
        return phi == 0.0 ? 0.0 : phi * s_[0](x);
    }
    double b_n_prime(double x) const {
        double phi = scheme_.value(x);
        double dphi = scheme_.derivative(x, 1);
        if (phi == 0.0 && dphi == 0.0) return 0.0;
        return dphi * b_[0](x) + phi * b_[1](x);
    }
    double sigma_n_prime(double x) const {
        double phi = scheme_.value(x);
        double dphi = scheme_.derivative(x, 1);
        if (phi == 0.0 && dphi == 0.0) return 0.0;
        return dphi * s_[0](x) + phi * s_[1](x);
    }
    double b_n_second(double x) const {
        double phi = scheme_.value(x);
        double d1 = scheme_.derivative(x, 1);
        double d2 = scheme_.derivative(x, 2);
        if (phi == 0.0 && d1 == 0.0 && d2 == 0.0) return 0.0;
        return d2 * b_[0](x) + 2.0 * d1 * b_[1](x) + phi * b_[2](x);
    }
    double sigma_n_second(double x) const {
        double phi = scheme_.value(x);
        double d1 = scheme_.derivative(x, 1);
        double d2 = scheme_.derivative(x, 2);
        if (phi == 0.0 && d1 == 0.0 && d2 == 0.0) return 0.0;
        return d2 * s_[0](x) + 2.0 * d1 * s_[1](x) + phi * s_[2](x);
    }

    double f_val(double x) const { return f_[0](x); }
    double f_prime(double x) const { return f_[1](x); }
    double f_second(double x) const { return f_[2](x); }
    double sigma_raw(double x) const { return s_[0](x); }
    double sigma_raw_prime(double x) const { return s_[1](x); }
};

inline TruncatedModel truncate(const SdeModel& m, double xi, int n) {
    return TruncatedModel(m, CutoffScheme(xi, n));
}

struct CutoffBoundRow {
    int n = 0;
    double sup_dphi = 0.0;          // sup |phi_n'|
    double sup_b_dphi = 0.0;        // sup |b phi_n'|
    double sup_sigma_dphi = 0.0;    // sup |sigma phi_n'|
    double sup_bn_prime = 0.0;      // sup b_n' (signed, one-sided)
    double sup_excess_sigma = 0.0;  // sup (sigma_n')^2 - 2 (sigma')^2
};

struct CutoffBoundReport {
    std::vector<CutoffBoundRow> rows;
    // Per quantity: true when the sups for the upper half of the n range
    // stay within 10% of the lower half, i.e. no systematic growth in n.
    bool dphi_stable = false;
    bool b_dphi_stable = false;
    bool sigma_dphi_stable = false;
    bool bn_prime_stable = false;
    bool excess_sigma_stable = false;
    bool pass = false;
};

// Grid sweep of the cutoff-dependent sups over n = 1..n_max. Each sweep
// covers the full support of phi_n plus margin.
inline CutoffBoundReport verify_cutoff_bounds(const SdeModel& m, double xi, int n_max,
                                              int points = 20001) {
    if (n_max < 1) throw std::invalid_argument("verify_cutoff_bounds needs n_max >= 1");
    CutoffBoundReport rep;
    CompiledExpr b(m.b), sig(m.sigma), sig1(m.sigma.derivative());
    for (int n = 1; n <= n_max; ++n) {
        TruncatedModel tm = truncate(m, xi, n);
        const CutoffScheme& sch = tm.scheme();
        double R = sch.support() * 1.05;
        CutoffBoundRow row;
        row.n = n;
        row.sup_dphi = detail::grid_max(
            [&](double x) { return std::fabs(sch.derivative(x, 1)); }, R, points);
        row.sup_b_dphi = detail::grid_max(
            [&](double x) { return std::fabs(b(x) * sch.derivative(x, 1)); }, R, points);
        row.sup_sigma_dphi = detail::grid_max(
            [&](double x) { return std::fabs(sig(x) * sch.derivative(x, 1)); }, R, points);
        row.sup_bn_prime =
            detail::grid_max([&](double x) { return tm.b_n_prime(x); }, R, points);
        row.sup_excess_sigma = detail::grid_max(
            [&](double x) {
                double sn = tm.sigma_n_prime(x);
                double sr = sig1(x);
                return sn * sn - 2.0 * sr * sr;
            },
            R, points);
        rep.rows.push_back(row);
    }

    auto stable_in_n = [&](auto member) {
        double lo = -std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        std::size_t half = (rep.rows.size() + 1) / 2;
        for (std::size_t i = 0; i < rep.rows.size(); ++i) {
            double v = rep.rows[i].*member;
            if (i < half) lo = std::max(lo, v);
            else hi = std::max(hi, v);
        }
        if (rep.rows.size() < 2) return true;
        return hi <= 1.10 * std::max(lo, 0.0) + 1e-9;
    };
    rep.dphi_stable = stable_in_n(&CutoffBoundRow::sup_dphi);
    rep.b_dphi_stable = stable_in_n(&CutoffBoundRow::sup_b_dphi);
    rep.sigma_dphi_stable = stable_in_n(&CutoffBoundRow::sup_sigma_dphi);
    rep.bn_prime_stable = stable_in_n(&CutoffBoundRow::sup_bn_prime);
    rep.excess_sigma_stable = stable_in_n(&CutoffBoundRow::sup_excess_sigma);
    rep.pass = rep.dphi_stable && rep.b_dphi_stable && rep.sigma_dphi_stable &&
               rep.bn_prime_stable && rep.excess_sigma_stable;
    return rep;
}

}  // namespace mlab
