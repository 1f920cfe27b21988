// Counter-based RNG and the statistics helpers. Numerical pins were
// computed independently (normal quantiles, Wilson intervals).

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include "mlab/rng.hpp"
#include "mlab/stats.hpp"

using namespace mlab;

TEST_CASE("draws are a pure function of (seed, path, step)") {
    CHECK(normal_draw(42, 7, 13) == normal_draw(42, 7, 13));
    CHECK(normal_draw(42, 7, 13) != normal_draw(42, 7, 14));
    CHECK(normal_draw(42, 8, 13) != normal_draw(42, 7, 13));
    CHECK(normal_draw(43, 7, 13) != normal_draw(42, 7, 13));
}

TEST_CASE("uniform draws stay strictly inside (0, 1)") {
    for (std::uint64_t i = 0; i < 20000; ++i) {
        double u = uniform_draw(1, i, i * 31 + 7);
        REQUIRE(u > 0.0);
        REQUIRE(u < 1.0);
    }
}

TEST_CASE("normal draws have the right first moments") {
    const std::int64_t n = 200000;
    CompensatedSum s1, s2, s3;
    for (std::int64_t i = 0; i < n; ++i) {
        double z = normal_draw(2024, i, 0);
        s1.add(z);
        s2.add(z * z);
        s3.add(z * z * z);
    }
    double mean = s1.value() / n;
    double var = s2.value() / n;
    double skew = s3.value() / n;
    CHECK(std::fabs(mean) < 0.01);
    CHECK(std::fabs(var - 1.0) < 0.02);
    CHECK(std::fabs(skew) < 0.03);
}

TEST_CASE("consecutive steps along one path are uncorrelated") {
    const std::int64_t n = 100000;
    CompensatedSum prod;
    for (std::int64_t i = 0; i < n; ++i)
        prod.add(normal_draw(5, 3, i) * normal_draw(5, 3, i + 1));
    CHECK(std::fabs(prod.value() / n) < 0.02);
}

TEST_CASE("inverse normal CDF hits reference quantiles") {
    CHECK(inverse_normal_cdf(0.5) == 0.0);
    CHECK_THAT(inverse_normal_cdf(0.975),
               Catch::Matchers::WithinAbs(1.9599639845400536, 1e-12));
    CHECK_THAT(inverse_normal_cdf(0.8413447460685429), Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK_THAT(inverse_normal_cdf(0.9772498680518208), Catch::Matchers::WithinAbs(2.0, 1e-12));
    CHECK_THAT(inverse_normal_cdf(0.0013498980316300933),
               Catch::Matchers::WithinAbs(-3.0, 1e-12));
    CHECK_THAT(inverse_normal_cdf(1e-10),
               Catch::Matchers::WithinAbs(-6.361340902404056, 1e-9));
    // symmetry
    for (double u : {0.31, 0.047, 0.6}) {
        CHECK_THAT(inverse_normal_cdf(u) + inverse_normal_cdf(1.0 - u),
                   Catch::Matchers::WithinAbs(0.0, 1e-13));
    }
    CHECK_THROWS_AS(inverse_normal_cdf(0.0), std::invalid_argument);
    CHECK_THROWS_AS(inverse_normal_cdf(1.0), std::invalid_argument);
    CHECK_THROWS_AS(inverse_normal_cdf(-0.5), std::invalid_argument);
}

TEST_CASE("compensated summation recovers cancelled small terms") {
    CompensatedSum s;
    s.add(1e16);
    for (int i = 0; i < 1000; ++i) s.add(1.0);
    s.add(-1e16);
    CHECK(s.value() == 1000.0);

    std::vector<double> xs{1e16, 1.0, 1.0, -1e16, 1.0};
    CHECK(compensated_total(xs) == 3.0);
}

TEST_CASE("mean estimates and confidence half-widths") {
    std::vector<double> xs{1.0, 2.0, 3.0, 4.0};
    Estimate e = estimate_mean(xs);
    CHECK(e.count == 4);
    CHECK(e.mean == 2.5);
    // sample sd = sqrt(5/3), se = sd / 2
    CHECK_THAT(e.se, Catch::Matchers::WithinRel(std::sqrt(5.0 / 3.0) / 2.0, 1e-14));
    CHECK_THAT(e.half_width95(), Catch::Matchers::WithinRel(1.959963984540054 * e.se, 1e-14));

    CHECK(estimate_mean(std::vector<double>{}).count == 0);
    CHECK(estimate_mean(std::vector<double>{7.0}).se == 0.0);
}

TEST_CASE("Wilson score interval matches reference values") {
    WilsonInterval w = wilson_score(5, 100);
    CHECK_THAT(w.p_hat, Catch::Matchers::WithinAbs(0.05, 1e-15));
    CHECK_THAT(w.lo, Catch::Matchers::WithinAbs(0.02154367915436796, 1e-12));
    CHECK_THAT(w.hi, Catch::Matchers::WithinAbs(0.11175046923191913, 1e-12));

    WilsonInterval z = wilson_score(0, 1000);
    CHECK(z.p_hat == 0.0);
    CHECK(z.lo >= 0.0);
    CHECK_THAT(z.hi, Catch::Matchers::WithinAbs(0.0038267584855551234, 1e-12));

    WilsonInterval one = wilson_score(1000, 1000);
    CHECK(one.hi <= 1.0 + 1e-15);
    CHECK_THAT(one.lo, Catch::Matchers::WithinAbs(0.996173241514445, 1e-12));
}

TEST_CASE("sample quantiles interpolate linearly") {
    std::vector<double> xs{5.0, 1.0, 4.0, 2.0, 3.0};
    CHECK(sample_quantile(xs, 0.0) == 1.0);
    CHECK(sample_quantile(xs, 1.0) == 5.0);
    CHECK(sample_quantile(xs, 0.5) == 3.0);
    CHECK(sample_quantile(xs, 0.25) == 2.0);
    CHECK(sample_quantile(xs, 0.125) == 1.5);
}

TEST_CASE("bandwidth scales linearly with the data") {
    std::vector<double> xs, ys;
    for (int i = 0; i < 500; ++i) {
        double v = inverse_normal_cdf((i + 0.5) / 500.0);
        xs.push_back(v);
        ys.push_back(3.0 * v);
    }
    double bx = silverman_bandwidth(xs);
    double by = silverman_bandwidth(ys);
    CHECK(bx > 0.0);
    CHECK_THAT(by, Catch::Matchers::WithinRel(3.0 * bx, 1e-12));
}

TEST_CASE("kernel density integrates to one on a normal sample") {
    std::vector<double> xs;
    for (int i = 0; i < 2000; ++i) xs.push_back(inverse_normal_cdf((i + 0.5) / 2000.0));
    double h = silverman_bandwidth(xs);
    std::vector<double> grid, vals;
    for (int i = 0; i <= 200; ++i) {
        double x = -6.0 + 12.0 * i / 200.0;
        grid.push_back(x);
        vals.push_back(kde_at(xs, x, h).value);
    }
    CHECK_THAT(trapezoid_mass(grid, vals), Catch::Matchers::WithinAbs(1.0, 1e-3));
    // peak near the standard normal peak
    double mid = kde_at(xs, 0.0, h).value;
    CHECK_THAT(mid, Catch::Matchers::WithinAbs(0.3989422804014327, 0.02));
    CHECK(kde_at(xs, 0.0, h).se >= 0.0);
}

TEST_CASE("trapezoid mass of a parabola") {
    std::vector<double> grid, vals;
    for (int i = 0; i <= 100; ++i) {
        double x = i / 100.0;
        grid.push_back(x);
        vals.push_back(x * x);
    }
    CHECK_THAT(trapezoid_mass(grid, vals), Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-4));
    CHECK_THROWS_AS(trapezoid_mass(std::vector<double>{0.0}, std::vector<double>{1.0}),
                    std::invalid_argument);
}
