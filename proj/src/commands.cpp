#include "ecr/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "ecr/error.hpp"

namespace ecr {

namespace {

template <class F>
auto stage(const char* name, F&& body) -> decltype(body()) {
    try {
        return body();
    } catch (const Error& e) {
        throw Error(e.kind(), std::string(name) + ": " + e.what());
    }
}

std::string fit_line(const char* key, const NFit& f) {
    std::ostringstream os;
    os << key << "=" << format_double(f.N_hat) << "\n";
    os << key << "_diagnostic=" << format_double(f.diagnostic) << "\n";
    if (f.boundary) os << key << "_boundary=true\n";
    return os.str();
}

int rounded_N(double N) { return std::max(1, static_cast<int>(std::lround(N))); }

}  // namespace

std::string to_string(FitMode m) { return m == FitMode::empirical ? "empirical" : "homogeneous"; }

FitMode parse_fit_mode(const std::string& name) {
    if (name == "empirical") return FitMode::empirical;
    if (name == "homogeneous") return FitMode::homogeneous;
    fail(ErrorKind::validation, "unknown fit mode '" + name + "'");
}

FitReport run_fit(const FitOptions& opt) {
    require(opt.dt >= 1, "return interval must be at least one day");
    FitReport rep;
    rep.mode = opt.mode;
    rep.dt = opt.dt;

    IngestResult in = stage("ingest", [&] { return ingest_prices(opt.prices, opt.missing_threshold); });
    rep.tickers = in.panel.tickers;
    rep.dropped = in.dropped;
    rep.dropped_days = in.dropped_days;
    rep.days = in.panel.M();

    const ReturnPanel r = stage("returns", [&] { return compute_returns(in.panel, opt.dt); });
    rep.returns = r.length();

    const CovarianceEstimate est = stage("covariance", [&] { return estimate_covariance(r, opt.unit_days); });
    const CorrelationModel hom = stage("covariance", [&] { return homogeneous_summary(est.covariance); });
    rep.c = hom.c;
    rep.mu = est.mu;
    rep.sigma = est.rho;
    rep.correlation = est.covariance.correlation_matrix();
    for (int k = 0; k < rep.K(); ++k) {
        rep.mu_bar += est.mu[k] / rep.K();
        rep.sigma_bar += est.rho[k] / rep.K();
    }

    const CovarianceSpec hom_cov = CovarianceSpec::homogeneous(est.covariance.sigma(), hom.c);
    std::vector<double> x_emp = stage("rotate", [&] { return rotate_scale_returns(r, est.covariance); });
    std::vector<double> x_hom = stage("rotate", [&] { return rotate_scale_returns(r, hom_cov); });

    rep.ls_emp = stage("fit-least-squares", [&] { return fit_N_least_squares(x_emp); });
    rep.ls_hom = stage("fit-least-squares", [&] { return fit_N_least_squares(x_hom); });
    rep.cvm_emp = stage("fit-cramer-von-mises", [&] { return fit_N_cramer_von_mises(x_emp); });
    rep.cvm_hom = stage("fit-cramer-von-mises", [&] { return fit_N_cramer_von_mises(x_hom); });

    try {
        rep.variance_identity = estimate_N_variance_identity(r, hom.c);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::validation) throw Error(e.kind(), std::string("variance-identity: ") + e.what());
        rep.variance_identity_note = e.what();
    }

    rep.sample = opt.mode == FitMode::empirical ? std::move(x_emp) : std::move(x_hom);
    return rep;
}

std::string fit_summary_text(const FitReport& r) {
    std::ostringstream os;
    os << "mode=" << to_string(r.mode) << "\n";
    os << "K=" << r.K() << "\n";
    os << "days=" << r.days << "\n";
    os << "returns=" << r.returns << "\n";
    os << "dt=" << r.dt << "\n";
    os << "dropped_tickers=" << r.dropped.size() << "\n";
    os << "dropped_days=" << r.dropped_days << "\n";
    os << "c=" << format_double(r.c) << "\n";
    os << "sigma_bar=" << format_double(r.sigma_bar) << "\n";
    os << "mu_bar=" << format_double(r.mu_bar) << "\n";
    os << "N_hat=" << format_double(r.N_hat()) << "\n";
    os << fit_line("N_emp_ls", r.ls_emp) << fit_line("N_emp_cvm", r.cvm_emp);
    os << fit_line("N_hom_ls", r.ls_hom) << fit_line("N_hom_cvm", r.cvm_hom);
    if (r.variance_identity)
        os << fit_line("N_variance_identity", *r.variance_identity);
    else
        os << "N_variance_identity=none\nN_variance_identity_note=" << r.variance_identity_note << "\n";
    return os.str();
}

CsvTable fit_parameters_csv(const FitReport& r) {
    CsvTable t;
    t.metadata = {{"dt", std::to_string(r.dt)}, {"mode", to_string(r.mode)}, {"estimator", "cramer_von_mises"}};
    t.columns = {"K", "N_hom", "N_emp", "sigma_bar", "mu_bar", "c"};
    t.rows.push_back({static_cast<double>(r.K()), r.N_hom(), r.N_emp(), r.sigma_bar, r.mu_bar, r.c});
    return t;
}

LossDensity run_loss_density(const LossDensityOptions& opt) {
    const auto grid = uniform_loss_grid(opt.grid_points, opt.grid_lo, opt.grid_hi);
    if (opt.limit) {
        require(!opt.portfolio, "limit mode needs a homogeneous portfolio");
        return avg_loss_density_limit(grid, opt.terms, {1, opt.c, opt.N}, opt.quadrature);
    }
    const PortfolioSpec p = opt.portfolio ? *opt.portfolio : PortfolioSpec::homogeneous(opt.K, opt.terms);
    return avg_loss_density(grid, p, {p.K(), opt.c, opt.N}, opt.quadrature);
}

RiskBlock density_risk(const LossDensity& d, const std::vector<double>& alphas) {
    RiskBlock b;
    for (double a : alphas) {
        const RiskPair rp = var_etl_from_density(d, a);
        b.push_back({a, rp.var, rp.etl});
    }
    return b;
}

RiskBlock sample_risk(const LossSample& s, const std::vector<double>& alphas) {
    RiskBlock b;
    for (double a : alphas) {
        const SampleRisk sr = sample_var_etl(s, a);
        b.push_back({a, sr.var, sr.etl});
    }
    return b;
}

std::string risk_block_text(const RiskBlock& b) {
    std::ostringstream os;
    char line[96];
    for (const RiskRow& r : b) {
        std::snprintf(line, sizeof line, "alpha=%g VaR=%.6g ETL=%.6g\n", r.alpha, r.var, r.etl);
        os << line;
    }
    return os.str();
}

CsvTable risk_block_csv(const RiskBlock& b) {
    CsvTable t;
    t.columns = {"alpha", "var", "etl"};
    for (const RiskRow& r : b) t.rows.push_back({r.alpha, r.var, r.etl});
    return t;
}

QuantileComparison compare_quantiles(const LossSample& s, const LossDensity& d, const std::vector<double>& alphas) {
    QuantileComparison q;
    for (double a : alphas) {
        const double mc = sample_var_etl(s, a).var;
        const double an = var_etl_from_density(d, a).var;
        q.alphas.push_back(a);
        q.mc.push_back(mc);
        q.analytic.push_back(an);
        q.rel.push_back(an > 0.0 ? (mc - an) / an : std::nan(""));
    }
    return q;
}

CsvTable quantile_comparison_csv(const QuantileComparison& q) {
    CsvTable t;
    t.columns = {"alpha", "mc", "analytic", "rel"};
    for (std::size_t i = 0; i < q.alphas.size(); ++i) t.rows.push_back({q.alphas[i], q.mc[i], q.analytic[i], q.rel[i]});
    return t;
}

PortfolioSpec read_portfolio_csv(const std::string& path, double T) {
    const CsvTable t = read_csv_table(path);
    auto column = [&](const std::string& name) {
        const auto it = std::find(t.columns.begin(), t.columns.end(), name);
        if (it == t.columns.end()) fail(ErrorKind::parse, path + ": missing column '" + name + "'");
        return static_cast<std::size_t>(it - t.columns.begin());
    };
    const std::size_t iF = column("F"), iV = column("V0"), im = column("mu"), ir = column("rho");
    PortfolioSpec p;
    p.T = T;
    for (const auto& row : t.rows) {
        p.F.push_back(row[iF]);
        p.V0.push_back(row[iV]);
        p.mu.push_back(row[im]);
        p.rho.push_back(row[ir]);
    }
    require(p.K() >= 1, path + ": no obligors");
    p.validate();
    return p;
}

RiskTable analytic_risk_table(const LossDensityOptions& opt, const std::vector<double>& leverages,
                              const std::vector<double>& alphas) {
    RiskTable t{leverages, alphas, {}, {}};
    for (double lev : leverages) {
        require(lev > 0.0, "leverage must be positive");
        LossDensityOptions o = opt;
        o.terms.F = lev * o.terms.V0;
        if (o.portfolio)
            for (int k = 0; k < o.portfolio->K(); ++k) o.portfolio->F[k] = lev * o.portfolio->V0[k];
        const LossDensity d = run_loss_density(o);
        std::vector<double> var, etl;
        for (double a : alphas) {
            const RiskPair rp = var_etl_from_density(d, a);
            var.push_back(rp.var);
            etl.push_back(rp.etl);
        }
        t.var.push_back(std::move(var));
        t.etl.push_back(std::move(etl));
    }
    return t;
}

SimConfig calibrated_sim_config(const FitReport& fit, CorrelationChoice corr, VolatilityChoice vol, double T) {
    require(fit.K() >= 1, "fit has no assets");
    SimConfig cfg;
    if (corr == CorrelationChoice::empirical) {
        cfg.correlation = fit.correlation;
        cfg.N = rounded_N(fit.N_emp());
    } else {
        cfg.c = fit.c;
        cfg.N = rounded_N(fit.N_hom());
    }
    if (vol == VolatilityChoice::average) {
        cfg.portfolio = PortfolioSpec::homogeneous(fit.K(), ObligorTerms{75.0, 100.0, fit.mu_bar, fit.sigma_bar, T});
    } else {
        PortfolioSpec p;
        p.T = T;
        for (int k = 0; k < fit.K(); ++k) {
            p.F.push_back(75.0);
            p.V0.push_back(100.0);
            p.mu.push_back(fit.mu[k]);
            p.rho.push_back(fit.sigma[k]);
        }
        cfg.portfolio = std::move(p);
    }
    return cfg;
}

DeviationTable compare_risk_files(const std::string& base, const std::string& variant) {
    const RiskTable a = risk_table_from_csv(read_csv_table(base));
    const RiskTable b = risk_table_from_csv(read_csv_table(variant));
    return relative_deviation_report(a, b);
}

}  // namespace ecr
