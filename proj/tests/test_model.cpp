// Coefficient hypothesis checkers. Oracles: hand-maximized bound
// constants (the quintic/quadratic pair maximizes -a^6 + 23a^4 at
// a^2 = 46/3 giving 48668/27), exact polynomial degrees, and direct
// re-evaluation of the verified inequalities at fresh random points.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "mlab/model.hpp"

using namespace mlab;

namespace {
SdeModel make(const std::string& b, const std::string& f, const std::string& s,
              double x0 = 0.0, double T = 1.0) {
    return SdeModel::from_strings(b, f, s, x0, T);
}
}  // namespace

TEST_CASE("semi-monotonicity constant for linear drift") {
    auto r = check_monotone(make("-x", "0", "1"));
    CHECK(r.K_best == 1.0);
    CHECK(r.pass);
    CHECK(r.K_nonneg);
}

TEST_CASE("semi-monotonicity constant for quintic drift") {
    auto r = check_monotone(make("-x^5", "0", "x^2"));
    CHECK(r.K_best == 0.0);
    CHECK(r.pass);
}

TEST_CASE("drift with growing derivative fails the stability check") {
    auto r = check_monotone(make("x^2", "0", "1"), 10.0);
    CHECK_THAT(r.K_best, Catch::Matchers::WithinRel(-20.0, 1e-6));
    CHECK_THAT(r.K_double, Catch::Matchers::WithinRel(-40.0, 1e-6));
    CHECK_FALSE(r.pass);
}

TEST_CASE("monotonicity constant satisfies the pairwise definition") {
    for (auto* src : {"-x", "-x^5", "-x^5 + x"}) {
        SdeModel m = make(src, "0", "1");
        auto r = check_monotone(m);
        std::mt19937_64 gen(99);
        std::uniform_real_distribution<double> u(-10.0, 10.0);
        for (int i = 0; i < 1000; ++i) {
            double x = u(gen), y = u(gen);
            double lhs = (m.b.eval(y) - m.b.eval(x)) * (y - x);
            REQUIRE(lhs <= -r.K_best * (y - x) * (y - x) + 1e-9);
        }
    }
}

TEST_CASE("bound constants for the quintic/quadratic pair") {
    auto r = check_bound(make("-x^5", "0", "x^2"), 1);
    CHECK(r.pass);
    CHECK(r.beta == 0.0);
    CHECK_THAT(r.alpha, Catch::Matchers::WithinRel(48668.0 / 27.0, 1e-6));
    CHECK(r.global);

    // independent brute-force maximization of a*b(a) + 11 s^2 + 3 (a s')^2
    double best = -1e300;
    for (int i = 0; i <= 400000; ++i) {
        double a = -20.0 + 40.0 * i / 400000.0;
        double g = a * (-std::pow(a, 5)) + 11.0 * std::pow(a, 4) + 3.0 * 4.0 * std::pow(a, 4);
        best = std::max(best, g);
    }
    CHECK_THAT(r.alpha, Catch::Matchers::WithinRel(best, 1e-4));
}

TEST_CASE("bound constants for unit diffusion with linear drift") {
    auto r = check_bound(make("-x", "0", "1"), 1);
    CHECK(r.pass);
    CHECK(r.beta == 0.0);
    CHECK_THAT(r.alpha, Catch::Matchers::WithinAbs(11.0, 1e-9));
    CHECK(r.beta_neg1_ok);  // g(a) + a^2 = 11 stays bounded
}

TEST_CASE("cubic blow-up drift fails every bound in the ladder") {
    auto r = check_bound(make("x^3", "0", "1"), 1);
    CHECK_FALSE(r.pass);
}

TEST_CASE("bound inequality re-verified at fresh points") {
    SdeModel m = make("-x^5", "0", "x^2");
    for (int p : {1, 2, 3}) {
        auto r = check_bound(m, p);
        REQUIRE(r.pass);
        CompiledExpr b(m.b), s(m.sigma), s1(m.sigma.derivative());
        std::mt19937_64 gen(2026);
        std::uniform_real_distribution<double> u(-10.0, 10.0);
        for (int i = 0; i < 10000; ++i) {
            double a = u(gen);
            double g = a * b(a) + (12.0 * p - 1.0) * s(a) * s(a) +
                       (4.0 * p - 1.0) * a * s1(a) * a * s1(a);
            REQUIRE(g <= r.alpha + r.beta * a * a + 1e-9);
        }
    }
}

TEST_CASE("growth table for polynomial coefficients is exact") {
    auto g = check_growth(make("-x^5", "0", "x^2"));
    REQUIRE(g.rows.size() >= 2);
    CHECK(g.rows[0].j == 0);
    CHECK(g.rows[0].q == 5.0);
    CHECK(g.rows[0].q_exact);
    CHECK(g.rows[1].q == 4.0);
    CHECK(g.xi == 4.0);
    CHECK(g.pass);

    auto lin = check_growth(make("-x", "0", "1"));
    CHECK(lin.rows[0].q == 1.0);
    CHECK(lin.rows[2].q == 0.0);
    for (const auto& row : lin.rows) CHECK(row.q_exact);

    auto zero = check_growth(make("0", "0", "0"));
    for (const auto& row : zero.rows) CHECK(row.lambda == 0.0);
}

TEST_CASE("non-polynomial coefficients need declared growth exponents") {
    CHECK_THROWS_AS(check_growth(make("-x + sin(x)", "0", "1/(1+x^2)")),
                    std::invalid_argument);
    SdeModel m = SdeModel::from_strings("-x + sin(x)", "0", "1/(1+x^2)", 0.0, 1.0,
                                        {{0, 1.0}, {1, 1.0}, {2, 1.0}, {3, 1.0},
                                         {4, 1.0}, {5, 1.0}});
    auto g = check_growth(m);
    CHECK(g.pass);
    CHECK(g.xi == 1.0);
}

TEST_CASE("nondegeneracy witness cases") {
    auto constant = hormander_check(make("-x", "0", "1"));
    CHECK(constant.pass);
    CHECK(constant.witness_order == 0);

    // sigma and total drift both vanish at the start point
    auto dead = hormander_check(make("-x^5", "0", "x^2", 0.0));
    CHECK_FALSE(dead.pass);

    // constant forcing revives it through the second derivative
    auto revived = hormander_check(make("-x^5", "1", "x^2", 0.0));
    CHECK(revived.pass);
    CHECK(revived.witness_order == 2);
}

TEST_CASE("nondegeneracy verdict ignores diffusion scaling") {
    for (auto* s : {"x^2", "3*x^2", "-x^2"}) {
        auto a = hormander_check(make("-x^5", "1", s, 0.0));
        CHECK(a.pass);
        CHECK(a.witness_order == 2);
    }
}

TEST_CASE("full hypothesis report on the standard models") {
    auto rep = run_hypothesis_checks(make("-x^5", "0", "x^2"), {1, 2});
    CHECK(rep.pass);
    CHECK(rep.k1 == 0.0);
    CHECK(rep.f_pass);
    auto j = to_json(rep);
    CHECK(j["pass"].get<bool>());
    CHECK(j["bounds"].size() == 2);
    CHECK(j["xi"].get<double>() == 4.0);

    auto bad = run_hypothesis_checks(make("x^3", "0", "1"), {1});
    CHECK_FALSE(bad.pass);
}

TEST_CASE("second-moment envelope from the p = 1 constants") {
    SdeModel m = make("-x", "0", "1", 1.0);
    auto b1 = check_bound(m, 1);
    REQUIRE(b1.pass);
    MomentEnvelope env = moment_envelope(m, b1, 0.0);
    CHECK(env.beta_prime == 1.0);
    CHECK(env.alpha_prime == 22.0);
    CHECK_THAT(env.at(1.0), Catch::Matchers::WithinRel(461.9673492333164, 1e-12));
    CHECK_THROWS_AS(moment_envelope(m, check_bound(m, 2), 0.0), std::invalid_argument);
}

TEST_CASE("Lipschitz constant of the bounded drift part") {
    auto rep = run_hypothesis_checks(make("-x", "sin(x)", "1"), {1});
    CHECK_THAT(rep.k1, Catch::Matchers::WithinAbs(1.0, 1e-6));
    CHECK(rep.f_pass);
}
