#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ecr/error.hpp"
#include "ecr/loss_engine.hpp"
#include "moment_tuples.hpp"
#include "test_support.hpp"

using namespace ecr;
using ecr::test::rel_err;

namespace {

ObligorTerms base_terms() { return {75.0, 100.0, 0.17, 0.35, 1.0}; }

PortfolioSpec one(const ObligorTerms& t) { return PortfolioSpec::homogeneous(1, t); }

double var999(const PortfolioSpec& p, double c, double N, int points = 1000) {
    const auto d = avg_loss_density(uniform_loss_grid(points), p, {p.K(), c, N});
    return var_etl_from_density(d, 0.999).var;
}

}  // namespace

TEST_SUITE("loss_engine") {
    TEST_CASE("moment ordering holds on random tuples") {
        for (const auto& t : test::random_moment_tuples(300, 7)) {
            const double m0 = moment_closed_form(0, t.z, t.u, t.terms, t.model);
            const double m1 = moment_closed_form(1, t.z, t.u, t.terms, t.model);
            const double m2 = moment_closed_form(2, t.z, t.u, t.terms, t.model);
            CHECK(m0 >= 0.0);
            CHECK(m0 <= 1.0);
            CHECK(m1 >= 0.0);
            CHECK(m1 <= m0 + 1e-15);
            CHECK(m2 <= m1 + 1e-15);
            CHECK(m2 - m1 * m1 >= -1e-12);
        }
    }

    TEST_CASE("closed-form moments match quadrature of the defining integral") {
        double worst = 0.0;
        for (const auto& t : test::random_moment_tuples(40, 99)) {
            const PortfolioSpec p = one(t.terms);
            for (int j = 0; j <= 2; ++j) {
                const double a = moment_closed_form(j, t.z, t.u, t.terms, t.model);
                const double b = moment_numeric(j, 0, t.z, t.u, p, t.model);
                if (a == 0.0 && b == 0.0) continue;
                worst = std::max(worst, rel_err(a, b));
            }
        }
        CHECK(worst < 1e-8);
    }

    TEST_CASE("no defaults possible: all moments vanish") {
        const ObligorTerms t{1.0, 100.0, 0.05, 0.2, 1.0};
        const CorrelationModel m{1, 0.3, 5.0};
        CHECK(moment_closed_form(0, 5.0, 0.0, t, m) < 1e-100);
        CHECK(moment_closed_form(1, 5.0, 0.0, t, m) < 1e-100);
    }

    TEST_CASE("first moment tends to the default probability as V0/F -> 0") {
        const ObligorTerms t{1e12, 1.0, 0.05, 0.2, 1.0};
        const CorrelationModel m{1, 0.3, 5.0};
        const double m0 = moment_closed_form(0, 4.0, 0.1, t, m);
        CHECK(m0 == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(moment_closed_form(1, 4.0, 0.1, t, m) == doctest::Approx(m0).epsilon(1e-9));
    }

    TEST_CASE("u derivative of m1 matches central differences") {
        for (const auto& t : test::random_moment_tuples(50, 3)) {
            if (t.model.c < 0.05) continue;
            const double h = 1e-6;
            const double fd = (moment_closed_form(1, t.z, t.u + h, t.terms, t.model) -
                               moment_closed_form(1, t.z, t.u - h, t.terms, t.model)) /
                              (2 * h);
            const double d = moment1_u_derivative(t.z, t.u, t.terms, t.model);
            if (std::abs(d) < 1e-8) continue;
            CHECK(rel_err(d, fd) < 1e-6);
        }
    }

    TEST_CASE("portfolio moments") {
        const CorrelationModel m{25, 0.3, 5.0};
        const ObligorTerms t = base_terms();
        const double m1 = moment_closed_form(1, 4.0, -0.2, t, m);
        const double m2 = moment_closed_form(2, 4.0, -0.2, t, m);
        const BigM hom = big_M(4.0, -0.2, PortfolioSpec::homogeneous(25, t), m);
        CHECK(hom.M1 == doctest::Approx(m1).epsilon(1e-13));
        CHECK(hom.M2 == doctest::Approx((m2 - m1 * m1) / 25).epsilon(1e-12));

        const BigM single = big_M(4.0, -0.2, one(t), {1, 0.3, 5.0});
        CHECK(single.M2 == doctest::Approx(m2 - m1 * m1).epsilon(1e-12));

        // heterogeneous weights and volatilities, summed independently
        PortfolioSpec p;
        for (int k = 0; k < 10; ++k) {
            p.F.push_back(50.0 + 5.0 * k);
            p.V0.push_back(100.0);
            p.mu.push_back(0.1);
            p.rho.push_back(0.1 + 0.4 * (k % 5) / 4.0);
        }
        const CorrelationModel m10{10, 0.3, 5.0};
        const double total = std::accumulate(p.F.begin(), p.F.end(), 0.0);
        double M1 = 0.0, M2 = 0.0;
        for (int k = 0; k < 10; ++k) {
            const double f = p.F[k] / total;
            const double a = moment_closed_form(1, 3.0, 0.4, p.obligor(k), m10);
            const double b = moment_closed_form(2, 3.0, 0.4, p.obligor(k), m10);
            M1 += f * a;
            M2 += f * f * (b - a * a);
        }
        const BigM het = big_M(3.0, 0.4, p, m10);
        CHECK(het.M1 == doctest::Approx(M1).epsilon(1e-13));
        CHECK(het.M2 == doctest::Approx(M2).epsilon(1e-12));
    }

    TEST_CASE("limit root solves m1(z, u0) = L") {
        const ObligorTerms t = base_terms();
        const CorrelationModel m{1, 0.28, 6.0};
        for (double L : {0.01, 0.1, 0.3}) {
            const auto r = solve_limit_root(L, 6.0, t, m);
            REQUIRE(r);
            CHECK(moment_closed_form(1, 6.0, r->u0, t, m) == doctest::Approx(L).epsilon(1e-10));
            CHECK(r->derivative == doctest::Approx(moment1_u_derivative(6.0, r->u0, t, m)).epsilon(1e-12));
        }
    }

    TEST_CASE("density normalization and degenerate portfolios") {
        const auto d = avg_loss_density(uniform_loss_grid(), PortfolioSpec::homogeneous(10, base_terms()),
                                        {10, 0.28, 6.0});
        CHECK(d.total_mass() == doctest::Approx(1.0).epsilon(5e-3));
        CHECK(d.normalized());
        for (double v : d.values) CHECK(v >= 0.0);

        // face value far below the asset value: everything sits at L = 0
        const auto safe = avg_loss_density(uniform_loss_grid(200), PortfolioSpec::homogeneous(10, {1.0, 100.0, 0.0, 0.2, 1.0}),
                                           {10, 0.3, 5.0});
        CHECK(safe.mass_below + safe.point_masses()[0] == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(var_etl_from_density(safe, 0.999).var == 0.0);
    }

    TEST_CASE("relabelling obligors leaves the density unchanged") {
        PortfolioSpec p;
        for (int k = 0; k < 6; ++k) {
            p.F.push_back(60.0 + 4.0 * k);
            p.V0.push_back(100.0);
            p.mu.push_back(0.05 * k);
            p.rho.push_back(0.15 + 0.05 * k);
        }
        PortfolioSpec q = p;
        std::reverse(q.F.begin(), q.F.end());
        std::reverse(q.V0.begin(), q.V0.end());
        std::reverse(q.mu.begin(), q.mu.end());
        std::reverse(q.rho.begin(), q.rho.end());
        const auto grid = uniform_loss_grid(300);
        const auto a = avg_loss_density(grid, p, {6, 0.3, 5.0});
        const auto b = avg_loss_density(grid, q, {6, 0.3, 5.0});
        double worst = 0.0;
        for (std::size_t i = 0; i < grid.size(); ++i)
            if (a.values[i] > 1e-8) worst = std::max(worst, rel_err(b.values[i], a.values[i]));
        CHECK(worst < 1e-9);
    }

    TEST_CASE("tail orderings in c and N") {
        const PortfolioSpec p = PortfolioSpec::homogeneous(10, base_terms());
        CHECK(var999(p, 0.4, 6.0) > var999(p, 0.1, 6.0));
        CHECK(var999(p, 0.28, 3.0) > var999(p, 0.28, 20.0));
    }

    TEST_CASE("thread count does not change the density") {
        const auto grid = uniform_loss_grid(400);
        const PortfolioSpec p = PortfolioSpec::homogeneous(10, base_terms());
        QuadratureConfig q1, q3;
        q1.threads = 1;
        q3.threads = 3;
        const auto a = avg_loss_density(grid, p, {10, 0.28, 6.0}, q1);
        const auto b = avg_loss_density(grid, p, {10, 0.28, 6.0}, q3);
        CHECK(a.values == b.values);
        CHECK(a.cell_mass == b.cell_mass);
    }

    TEST_CASE("fixed tensor rule agrees with the adaptive scheme") {
        const PortfolioSpec p = PortfolioSpec::homogeneous(10, base_terms());
        QuadratureConfig fixed;
        fixed.scheme = QuadratureScheme::gauss_laguerre_hermite;
        const auto grid = uniform_loss_grid(1000);
        const auto a = avg_loss_density(grid, p, {10, 0.28, 6.0});
        const auto b = avg_loss_density(grid, p, {10, 0.28, 6.0}, fixed);
        CHECK(b.total_mass() == doctest::Approx(1.0).epsilon(5e-3));
        CHECK(var_etl_from_density(b, 0.99).var == doctest::Approx(var_etl_from_density(a, 0.99).var).epsilon(0.02));
    }

    TEST_CASE("limit density for zero correlation collapses to a point") {
        const ObligorTerms t = base_terms();
        const auto d = avg_loss_density_limit(uniform_loss_grid(500), t, {1, 0.0, 6.0});
        CHECK(d.total_mass() == doctest::Approx(1.0).epsilon(1e-6));
        const auto lim = avg_loss_density_limit(uniform_loss_grid(1000), t, {1, 0.28, 6.0});
        CHECK(lim.total_mass() == doctest::Approx(1.0).epsilon(1e-6));
        const auto fin = avg_loss_density(uniform_loss_grid(1000), PortfolioSpec::homogeneous(100, t), {100, 0.28, 6.0});
        CHECK(var_etl_from_density(lim, 0.99).var == doctest::Approx(var_etl_from_density(fin, 0.99).var).epsilon(0.03));
    }

    TEST_CASE("VaR and ETL from tabulated densities") {
        LossDensity uni;
        uni.grid = uniform_loss_grid(1001);
        uni.values.assign(1001, 1.0);
        const RiskPair r = var_etl_from_density(uni, 0.99);
        CHECK(r.var == doctest::Approx(0.99).epsilon(1e-12));
        CHECK(r.etl == doctest::Approx(0.995).epsilon(5e-4));

        LossDensity point;
        point.grid = uniform_loss_grid(11);
        point.values.assign(11, 0.0);
        point.cell_mass.assign(11, 0.0);
        point.cell_mass[2] = 1.0;
        point.values[2] = 10.0;
        for (double a : {0.5, 0.99, 0.999}) {
            const RiskPair p = var_etl_from_density(point, a);
            CHECK(p.var == doctest::Approx(0.2));
            CHECK(p.etl == doctest::Approx(0.2));
        }

        LossDensity cut = uni;
        cut.mass_above = 0.01;
        CHECK_THROWS_WITH_AS(var_etl_from_density(cut, 0.995), doctest::Contains("0.98999999999999999"), Error);
        CHECK_THROWS_AS(var_etl_from_density(uni, 1.0), Error);
    }

    TEST_CASE("density CSV round trip is bit exact") {
        test::TempDir dir("density");
        const auto d = avg_loss_density(uniform_loss_grid(300), PortfolioSpec::homogeneous(10, base_terms()),
                                        {10, 0.28, 4.2});
        write_loss_density_csv(d, dir.file("d.csv"));
        const auto back = read_loss_density_csv(dir.file("d.csv"));
        CHECK(back.grid == d.grid);
        CHECK(back.values == d.values);
        CHECK(back.mass_below == d.mass_below);
        CHECK(back.meta("N") == "4.2000000000000002");
        CHECK(back.meta("K") == "10");
        write_loss_density_csv(back, dir.file("e.csv"));
        const auto again = read_loss_density_csv(dir.file("e.csv"));
        CHECK(again.values == back.values);
        // without cell masses the tail quantiles come from trapezoid sums
        CHECK(var_etl_from_density(back, 0.999).var ==
              doctest::Approx(var_etl_from_density(d, 0.999).var).epsilon(0.02));
    }

    TEST_CASE("input validation") {
        CHECK_THROWS_AS(uniform_loss_grid(1), Error);
        CHECK_THROWS_AS(uniform_loss_grid(10, 0.5, 0.2), Error);
        CHECK_THROWS_AS(avg_loss_density({0.2, 0.1}, PortfolioSpec::homogeneous(2, base_terms()), {2, 0.3, 5.0}), Error);
        CHECK_THROWS_AS(PortfolioSpec::homogeneous(0, base_terms()), Error);
        CHECK_THROWS_AS(PortfolioSpec::homogeneous(3, {75.0, 100.0, 0.1, -0.2, 1.0}), Error);
        CHECK_THROWS_AS(moment_closed_form(3, 1.0, 0.0, base_terms(), {1, 0.3, 5.0}), Error);
        CHECK_THROWS_AS(parse_quadrature_scheme("simpson"), Error);
    }
}
