#pragma once

// Deterministic reductions and the handful of estimator statistics the
// lab needs. All sums are Neumaier-compensated and taken in a fixed
// order, so estimates are bitwise reproducible.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace mlab {

class CompensatedSum {
    double sum_ = 0.0;
    double comp_ = 0.0;

public:
    void add(double v) {
        double t = sum_ + v;
        if (std::fabs(sum_) >= std::fabs(v))
            comp_ += (sum_ - t) + v;
        else
            comp_ += (v - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }
};

inline double compensated_total(std::span<const double> xs) {
    CompensatedSum s;
    for (double v : xs) s.add(v);
    return s.value();
}

// Sample mean with standard error of the mean.
struct Estimate {
    std::int64_t count = 0;
    double mean = 0.0;
    double se = 0.0;

    double half_width95() const { return 1.959963984540054 * se; }
};

inline Estimate estimate_mean(std::span<const double> xs) {
    Estimate e;
    e.count = static_cast<std::int64_t>(xs.size());
    if (xs.empty()) return e;
    e.mean = compensated_total(xs) / static_cast<double>(xs.size());
    if (xs.size() < 2) return e;
    CompensatedSum ss;
    for (double v : xs) {
        double d = v - e.mean;
        ss.add(d * d);
    }
    double var = ss.value() / static_cast<double>(xs.size() - 1);
    e.se = std::sqrt(std::max(0.0, var) / static_cast<double>(xs.size()));
    return e;
}

struct WilsonInterval {
    double p_hat = 0.0;
    double lo = 0.0;
    double hi = 0.0;

    double half_width() const { return (hi - lo) / 2.0; }
};

inline WilsonInterval wilson_score(std::int64_t successes, std::int64_t n, double z = 1.959963984540054) {
    if (n <= 0) throw std::invalid_argument("wilson_score needs n > 0");
    double nn = static_cast<double>(n);
    double p = static_cast<double>(successes) / nn;
    double z2 = z * z;
    double denom = 1.0 + z2 / nn;
    double center = (p + z2 / (2.0 * nn)) / denom;
    double half = z * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / denom;
    WilsonInterval w;
    w.p_hat = p;
    w.lo = std::max(0.0, center - half);
    w.hi = std::min(1.0, center + half);
    return w;
}

inline double sample_quantile(std::vector<double> xs, double q) {
    if (xs.empty()) throw std::invalid_argument("quantile of empty sample");
    std::sort(xs.begin(), xs.end());
    double pos = q * static_cast<double>(xs.size() - 1);
    std::size_t lo = static_cast<std::size_t>(pos);
    std::size_t hi = std::min(lo + 1, xs.size() - 1);
    double frac = pos - static_cast<double>(lo);
    return xs[lo] * (1.0 - frac) + xs[hi] * frac;
}

// Silverman bandwidth: 0.9 * min(sd, IQR/1.34) * n^(-1/5).
inline double silverman_bandwidth(std::span<const double> xs) {
    if (xs.size() < 2) throw std::invalid_argument("bandwidth needs >= 2 samples");
    Estimate e = estimate_mean(xs);
    double sd = e.se * std::sqrt(static_cast<double>(xs.size()));
    std::vector<double> copy(xs.begin(), xs.end());
    double iqr = sample_quantile(copy, 0.75) - sample_quantile(std::move(copy), 0.25);
    double spread = sd;
    if (iqr > 0.0) spread = std::min(spread, iqr / 1.34);
    if (spread <= 0.0) spread = std::max(sd, 1e-12);
    return 0.9 * spread * std::pow(static_cast<double>(xs.size()), -0.2);
}

inline double gaussian_kernel(double u) {
    return 0.3989422804014327 * std::exp(-0.5 * u * u);
}

struct KdePoint {
    double value = 0.0;
    double se = 0.0;
};

// Kernel density estimate at x with per-point standard error taken over
// the per-sample kernel contributions.
inline KdePoint kde_at(std::span<const double> samples, double x, double bandwidth) {
    if (samples.empty() || bandwidth <= 0.0)
        throw std::invalid_argument("kde needs samples and a positive bandwidth");
    double n = static_cast<double>(samples.size());
    CompensatedSum s, s2;
    for (double v : samples) {
        double k = gaussian_kernel((x - v) / bandwidth) / bandwidth;
        s.add(k);
        s2.add(k * k);
    }
    KdePoint out;
    out.value = s.value() / n;
    if (samples.size() > 1) {
        double var = (s2.value() / n - out.value * out.value) * n / (n - 1.0);
        out.se = std::sqrt(std::max(0.0, var) / n);
    }
    return out;
}

// Trapezoid mass of tabulated values over a strictly increasing grid.
inline double trapezoid_mass(std::span<const double> grid, std::span<const double> values) {
    if (grid.size() != values.size() || grid.size() < 2)
        throw std::invalid_argument("trapezoid_mass needs matching grids, length >= 2");
    CompensatedSum s;
    for (std::size_t i = 0; i + 1 < grid.size(); ++i)
        s.add(0.5 * (values[i] + values[i + 1]) * (grid[i + 1] - grid[i]));
    return s.value();
}

}  // namespace mlab
