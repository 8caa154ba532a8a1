// Acceptance checks, one PASS/FAIL line per criterion. Exit status is
// nonzero when a criterion fails that was not listed with --expect-fail.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "ecr/commands.hpp"
#include "ecr/error.hpp"
#include "moment_tuples.hpp"
#include "test_support.hpp"

using namespace ecr;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

const ObligorTerms kFig5{75.0, 100.0, 0.17, 0.35, 1.0};

Outcome moment_oracle() {
    const auto start = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (const auto& t : test::random_moment_tuples(100, 2024)) {
        const PortfolioSpec one = PortfolioSpec::homogeneous(1, t.terms);
        for (int j = 0; j <= 2; ++j) {
            const double closed = moment_closed_form(j, t.z, t.u, t.terms, t.model);
            const double numeric = moment_numeric(j, 0, t.z, t.u, one, t.model);
            if (closed == 0.0 && numeric == 0.0) continue;
            worst = std::max(worst, test::rel_err(closed, numeric));
        }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {worst < 1e-8 && secs < 10.0, "max rel err " + fmt("%.2e", worst) + ", " + fmt("%.1f s", secs)};
}

Outcome analytic_vs_mc() {
    const auto start = std::chrono::steady_clock::now();
    const CorrelationModel m{100, 0.28, 6.0};
    const PortfolioSpec p = PortfolioSpec::homogeneous(100, kFig5);
    const LossDensity d = avg_loss_density(uniform_loss_grid(), p, m);
    SimConfig cfg;
    cfg.realizations = 1'000'000;
    cfg.seed = 2;
    cfg.N = 6;
    cfg.c = 0.28;
    cfg.portfolio = p;
    const LossSample s = run_simulation(cfg);
    const QuantileComparison q = compare_quantiles(s, d, {0.95, 0.99});
    const double mass_err = std::abs(d.total_mass() - 1.0);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    bool ok = mass_err < 5e-3 && secs < 300.0;
    std::string detail;
    for (std::size_t i = 0; i < q.alphas.size(); ++i) {
        ok = ok && std::abs(q.rel[i]) < 0.05;
        detail += "q" + fmt("%g", q.alphas[i]) + " mc/analytic " + fmt("%.4f", q.mc[i]) + "/" + fmt("%.4f", q.analytic[i]) +
                  " (" + fmt("%+.2f%%", 100.0 * q.rel[i]) + "), ";
    }
    return {ok, detail + "mass error " + fmt("%.1e", mass_err) + ", " + fmt("%.0f s", secs)};
}

Outcome limit_law() {
    const CorrelationModel m{1000, 0.28, 6.0};
    const auto grid = uniform_loss_grid();
    const LossDensity finite = avg_loss_density(grid, PortfolioSpec::homogeneous(1000, kFig5), m);
    const LossDensity limit = avg_loss_density_limit(grid, kFig5, m);
    // compare cell averages; the first cell holds the no-default spike
    const auto a = finite.point_masses(), b = limit.point_masses();
    const double h = grid[1] - grid[0];
    double sup = 0.0, where = 0.0;
    for (std::size_t i = 1; i + 1 < grid.size(); ++i) {
        const double fa = a[i] / h, fb = b[i] / h;
        if (std::max(fa, fb) <= 1e-4) continue;
        const double r = std::abs(fa - fb) / fb;
        if (r > sup) {
            sup = r;
            where = grid[i];
        }
    }
    std::vector<double> var;
    for (int K : {10, 100}) {
        const CorrelationModel mk{K, 0.28, 6.0};
        var.push_back(var_etl_from_density(avg_loss_density(grid, PortfolioSpec::homogeneous(K, kFig5), mk), 0.999).var);
    }
    var.push_back(var_etl_from_density(limit, 0.999).var);
    const bool monotone = var[0] > var[1] && var[1] > var[2];
    return {sup < 0.02 && monotone, "sup rel diff " + fmt("%.2f%%", 100.0 * sup) + " at L=" + fmt("%.4f", where) +
                                        ", VaR0.999 K=10/100/inf " + fmt("%.4f", var[0]) + "/" + fmt("%.4f", var[1]) +
                                        "/" + fmt("%.4f", var[2])};
}

Outcome fluctuation_effect() {
    const auto start = std::chrono::steady_clock::now();
    bool ok = true;
    std::string detail;
    for (double c : {0.2, 0.3, 0.4}) {
        SimConfig cfg;
        cfg.realizations = 1'000'000;
        cfg.seed = 6;
        cfg.N = 5;
        cfg.c = c;
        cfg.portfolio = PortfolioSpec::homogeneous(500, {75.0, 100.0, 0.15, 0.25, 1.0});
        const double fluct = sample_var_etl(run_simulation(cfg), 0.999).var;
        cfg.N = SimConfig::kStationary;
        const double stat = sample_var_etl(run_simulation(cfg), 0.999).var;
        const double under = 100.0 * (fluct - stat) / fluct;
        ok = ok && under >= 35.0 && under <= 55.0;
        detail += "c=" + fmt("%g", c) + " " + fmt("%.1f%%", under) + ", ";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {ok && secs < 900.0, detail + fmt("%.0f s", secs)};
}

Outcome variance_identity_check() {
    const int K = 50, n = 100'000;
    SimConfig cfg;
    cfg.N = 5;
    cfg.c = 0.3;
    cfg.portfolio = PortfolioSpec::homogeneous(K, kFig5);
    const AssetSampler sampler(cfg);
    std::mt19937_64 rng(5);
    Eigen::VectorXd x(K);
    std::vector<double> q(n);
    for (double& v : q) {
        sampler.draw_shocks(rng, x);
        v = x.squaredNorm();
    }
    double mean = 0.0;
    for (double v : q) mean += v / n;
    double m2 = 0.0, m4 = 0.0;
    for (double v : q) {
        const double d = (v - mean) * (v - mean);
        m2 += d / n;
        m4 += d * d / n;
    }
    const double var = m2 * n / (n - 1.0);
    const double se = std::sqrt((m4 - m2 * m2) / n);
    const double expect = variance_identity(K, 0.3, 5.0);
    const double N_hat = invert_variance_identity(K, 0.3, var);
    const double z = (var - expect) / se;
    return {std::abs(z) < 3.0 && N_hat >= 4.0 && N_hat <= 6.0,
            "sample " + fmt("%.1f", var) + " vs " + fmt("%.1f", expect) + " (" + fmt("%+.2f", z) + " se), N=" +
                fmt("%.2f", N_hat)};
}

Outcome calibration_round_trip() {
    const int K = 100;
    SyntheticPanelSpec s;
    s.M = 5000;
    s.N = 5;
    s.correlation = block_correlation(K, 1, 0.3, 0.3);
    s.seed = 3;
    for (int k = 0; k < K; ++k) {
        s.sigma.push_back(0.01 + 0.02 * k / (K - 1));
        s.mu.push_back(0.0004);
    }
    test::TempDir dir("accept");
    FitOptions opt;
    opt.prices = dir.file("prices.csv");
    export_prices(synthetic_price_panel(s), opt.prices);
    const FitReport r = run_fit(opt);
    const bool ok = std::abs(r.c - 0.3) <= 0.03 && std::abs(r.ls_emp.N_hat - 5.0) <= 1.0 &&
                    std::abs(r.cvm_emp.N_hat - 5.0) <= 1.0 && r.N_hom() <= r.N_emp();
    return {ok, "c=" + fmt("%.3f", r.c) + ", N ls/cvm " + fmt("%.1f", r.ls_emp.N_hat) + "/" + fmt("%.1f", r.cvm_emp.N_hat) +
                    ", N_hom " + fmt("%.1f", r.N_hom()) + " vs N_emp " + fmt("%.1f", r.N_emp())};
}

Outcome monotonicity() {
    const auto grid = uniform_loss_grid();
    bool ok = true;
    std::string detail = "c:";
    double prev = -1.0;
    for (double c : {0.1, 0.2, 0.3, 0.4}) {
        const double v = var_etl_from_density(
            avg_loss_density(grid, PortfolioSpec::homogeneous(100, {75.0, 100.0, 0.013, 0.1, 1.0}), {100, c, 4.2}),
            0.999).var;
        ok = ok && v > prev;
        prev = v;
        detail += " " + fmt("%.4f", v);
    }
    detail += "; N:";
    prev = 2.0;
    for (double N : {3.0, 5.0, 10.0, 40.0}) {
        const double v = var_etl_from_density(
            avg_loss_density(grid, PortfolioSpec::homogeneous(500, {75.0, 100.0, 0.015, 0.25, 1.0}), {500, 0.2, N}),
            0.999).var;
        ok = ok && v < prev;
        prev = v;
        detail += " " + fmt("%.4f", v);
    }
    return {ok, detail};
}

double mean_abs(const std::vector<std::optional<double>>& row) {
    double s = 0.0;
    for (const auto& v : row) s += std::abs(v.value_or(0.0));
    return s / static_cast<double>(row.size());
}

// Synthetic sector panel run through the same files and steps as the CLI:
// prices -> fit -> three simulated risk tables -> deviation tables.
Outcome deviation_structure() {
    const int K = 50;
    SyntheticPanelSpec s;
    s.M = 3000;
    s.N = 5;
    s.correlation = block_correlation(K, 5, 0.75, 0.15);
    s.seed = 9;
    std::mt19937_64 g(5);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int k = 0; k < K; ++k) {
        s.sigma.push_back(0.05 + 0.12 * U(g));
        s.mu.push_back(0.005 + 0.015 * U(g));
    }
    test::TempDir dir("accept");
    FitOptions opt;
    opt.prices = dir.file("prices.csv");
    export_prices(synthetic_price_panel(s), opt.prices);
    const FitReport fit = run_fit(opt);

    auto table = [&](CorrelationChoice c, VolatilityChoice v, const std::string& name) {
        SimConfig cfg = calibrated_sim_config(fit, c, v, 1.0);
        cfg.realizations = 200'000;
        cfg.seed = 21;
        const std::string path = dir.file(name);
        write_csv_table(risk_table_csv(mc_risk_table(cfg)), path);
        return path;
    };
    const std::string base = table(CorrelationChoice::empirical, VolatilityChoice::empirical, "base.csv");
    const std::string hom_avg = table(CorrelationChoice::homogeneous, VolatilityChoice::average, "hom_avg.csv");
    const std::string hom_emp = table(CorrelationChoice::homogeneous, VolatilityChoice::empirical, "hom_emp.csv");
    const DeviationTable t3 = compare_risk_files(base, hom_avg);
    const DeviationTable t4 = compare_risk_files(base, hom_emp);

    // homogeneous vols: underestimation at the lowest leverage, shrinking towards 0.90
    bool ok = true;
    for (std::size_t a = 0; a < t3.alphas.size(); ++a)
        ok = ok && t3.var[0][a].value_or(0.0) < 0.0 && t3.etl[0][a].value_or(0.0) < 0.0;
    std::vector<double> shrink;
    for (std::size_t i = 0; i < t3.leverages.size(); ++i) {
        shrink.push_back(0.5 * (mean_abs(t3.var[i]) + mean_abs(t3.etl[i])));
        if (i > 0) ok = ok && shrink[i] < shrink[i - 1];
    }
    // empirical vols: no entry below -10 points and a table mean above -2.5
    double lowest = 1e9, sum = 0.0;
    int count = 0;
    for (const auto* block : {&t4.var, &t4.etl})
        for (const auto& row : *block)
            for (const auto& v : row) {
                lowest = std::min(lowest, v.value_or(0.0));
                sum += v.value_or(0.0);
                ++count;
            }
    ok = ok && lowest >= -10.0 && sum / count > -2.5;
    return {ok, "hom-vol mean |d| by leverage " + fmt("%.1f", shrink[0]) + "/" + fmt("%.1f", shrink[1]) + "/" +
                    fmt("%.1f", shrink[2]) + "/" + fmt("%.1f", shrink[3]) + ", emp-vol min " + fmt("%.1f", lowest) +
                    " mean " + fmt("%.1f", sum / count) + ", N_emp " + fmt("%.1f", fit.N_emp()) + " N_hom " +
                    fmt("%.1f", fit.N_hom())};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    std::vector<int> only, expect_fail;
    app.add_option("--only", only, "criteria to run (default all)")->delimiter(',');
    app.add_option("--expect-fail", expect_fail, "criteria known to fail")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
        {1, moment_oracle},       {2, analytic_vs_mc},          {3, limit_law},
        {4, fluctuation_effect},  {5, variance_identity_check}, {6, calibration_round_trip},
        {7, monotonicity},        {8, deviation_structure},
    };
    const std::set<int> selected(only.begin(), only.end()), expected(expect_fail.begin(), expect_fail.end());
    int unexpected = 0;
    for (const auto& [id, run] : criteria) {
        if (!selected.empty() && !selected.count(id)) continue;
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const bool known = expected.count(id) > 0;
        if (!o.pass && !known) ++unexpected;
        std::printf("criterion %d: %s  %s%s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(),
                    !o.pass && known ? "  [known failure]" : "");
        std::fflush(stdout);
    }
    return unexpected == 0 ? 0 : 1;
}
