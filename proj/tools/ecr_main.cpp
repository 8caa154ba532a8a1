// ecr: credit portfolio losses under fluctuating asset correlations.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <new>
#include <optional>
#include <string>
#include <vector>

#include "ecr/commands.hpp"
#include "ecr/error.hpp"
#include "json_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

struct Globals {
    std::string out = ".";
    int threads = 0;
};

struct PortfolioArgs {
    int K = 100;
    double c = 0.3;
    double N = 5.0;
    ecr::ObligorTerms terms;
    std::string portfolio;

    void add(CLI::App* app) {
        app->add_option("--K", K, "number of obligors")->check(CLI::PositiveNumber);
        app->add_option("--c", c, "average correlation level");
        app->add_option("--F", terms.F, "face value");
        app->add_option("--V0", terms.V0, "initial asset value");
        app->add_option("--mu", terms.mu, "drift per time unit");
        app->add_option("--rho", terms.rho, "volatility per sqrt(time unit)");
        app->add_option("--T", terms.T, "maturity in time units");
        app->add_option("--portfolio", portfolio, "CSV with columns F,V0,mu,rho (overrides the homogeneous terms)");
    }

    std::optional<ecr::PortfolioSpec> spec() const {
        if (portfolio.empty()) return std::nullopt;
        return ecr::read_portfolio_csv(portfolio, terms.T);
    }
};

struct QuadArgs {
    std::string scheme = "adaptive";
    int z_nodes = 64;
    int u_nodes = 64;

    void add(CLI::App* app) {
        app->add_option("--scheme", scheme, "adaptive or gauss_laguerre_hermite")
            ->check(CLI::IsMember({"adaptive", "gauss_laguerre_hermite"}));
        app->add_option("--z-nodes", z_nodes, "Laguerre nodes in z (initial count when adaptive)");
        app->add_option("--u-nodes", u_nodes, "Hermite nodes in u (fixed scheme only)");
    }

    ecr::QuadratureConfig config(int threads) const {
        ecr::QuadratureConfig q;
        q.scheme = ecr::parse_quadrature_scheme(scheme);
        q.z_nodes = z_nodes;
        q.u_nodes = u_nodes;
        q.threads = threads;
        return q;
    }
};

class Run {
public:
    Run(std::string command, const Globals& g) : command_(std::move(command)), dir_(g.out) {
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec) ecr::fail(ecr::ErrorKind::io, "cannot create output directory " + dir_.string() + ": " + ec.message());
    }

    std::string path(const std::string& name) {
        outputs_.push_back(name);
        return (dir_ / name).string();
    }

    void write_text(const std::string& name, const std::string& text) {
        std::ofstream f(path(name));
        if (!f) ecr::fail(ecr::ErrorKind::io, "cannot write " + (dir_ / name).string());
        f << text;
    }

    void write_manifest(const json& parameters) {
        json m;
        m["program"] = "ecr";
        m["command"] = command_;
        m["parameters"] = parameters;
        m["outputs"] = outputs_;
        std::ofstream f(dir_ / "manifest.json");
        if (!f) ecr::fail(ecr::ErrorKind::io, "cannot write manifest in " + dir_.string());
        f << m.dump(2) << "\n";
    }

private:
    std::string command_;
    fs::path dir_;
    std::vector<std::string> outputs_;
};

json typed(const std::string& s) {
    if (s == "true") return true;
    if (s == "false") return false;
    try {
        std::size_t used = 0;
        const long long i = std::stoll(s, &used);
        if (used == s.size()) return i;
    } catch (const std::exception&) {
    }
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    return s;
}

// Every option of the app (and the active subcommand) with its resolved value.
json resolved_parameters(const CLI::App& app, const CLI::App& sub) {
    json p = json::object();
    auto add = [&](const CLI::App& a) {
        for (const CLI::Option* opt : a.get_options()) {
            if (opt->get_lnames().empty()) continue;
            const std::string name = opt->get_lnames().front();
            if (name == "help" || name == "config") continue;
            if (opt->get_expected_min() == 0) {
                p[name] = opt->as<bool>();
                continue;
            }
            std::vector<std::string> values = opt->count() > 0 ? opt->results() : std::vector<std::string>{};
            if (values.empty() && !opt->get_default_str().empty()) {
                std::string d = opt->get_default_str();
                if (d.size() >= 2 && d.front() == '[' && d.back() == ']') {
                    values = CLI::detail::split(d.substr(1, d.size() - 2), ',');
                    for (auto& v : values) v = CLI::detail::trim_copy(v);
                } else {
                    values.push_back(d);
                }
            }
            if (opt->get_items_expected_max() > 1) {
                json arr = json::array();
                for (const auto& v : values) arr.push_back(typed(v));
                p[name] = arr;
            } else {
                p[name] = values.empty() ? json(nullptr) : typed(values.front());
            }
        }
    };
    add(app);
    add(sub);
    return p;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Credit portfolio losses under fluctuating asset correlations"};
    app.name("ecr");
    app.option_defaults()->always_capture_default();
    app.config_formatter(std::make_shared<ecr::cli::JsonConfig>());
    app.set_config("--config", "", "JSON config file; command-line flags take precedence");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("-o,--out", g.out, "output directory")->envname("ECR_OUTPUT_DIR");
    app.add_option("--threads", g.threads, "worker cap, 0 = all cores; never changes results")
        ->check(CLI::NonNegativeNumber);

    // ingest
    auto* ingest = app.add_subcommand("ingest", "clean a price file and report dropped tickers and days");
    std::string ingest_prices;
    double ingest_threshold = 0.10;
    ingest->add_option("--prices", ingest_prices, "CSV: date,<ticker>,...")->required();
    ingest->add_option("--missing-threshold", ingest_threshold, "drop tickers missing on more than this share of days");

    // fit
    auto* fit = app.add_subcommand("fit", "estimate c and N from a price file");
    ecr::FitOptions fit_opt;
    std::string fit_mode = "empirical";
    bool fit_export = false;
    fit->add_option("--prices", fit_opt.prices, "CSV: date,<ticker>,...")->required();
    fit->add_option("--dt", fit_opt.dt, "return interval in trading days")->check(CLI::PositiveNumber);
    fit->add_option("--mode", fit_mode, "covariance used for the headline N")
        ->check(CLI::IsMember({"empirical", "homogeneous"}));
    fit->add_option("--missing-threshold", fit_opt.missing_threshold, "ingest threshold");
    fit->add_option("--unit-days", fit_opt.unit_days, "trading days per time unit of mu and sigma");
    fit->add_flag("--export-sample", fit_export, "write the standardized returns");

    // loss-density
    auto* dens = app.add_subcommand("loss-density", "average loss density and its VaR/ETL");
    PortfolioArgs dens_pf;
    QuadArgs dens_q;
    bool dens_limit = false;
    int dens_points = 2000;
    double dens_lo = 0.0, dens_hi = 1.0;
    std::vector<double> dens_alphas = ecr::kReportAlphas;
    dens_pf.add(dens);
    dens_q.add(dens);
    dens->add_option("--N", dens_pf.N, "fluctuation strength (> 0)");
    dens->add_flag("--limit", dens_limit, "K -> infinity limit");
    dens->add_option("--grid-points", dens_points, "loss grid size");
    dens->add_option("--grid-lo", dens_lo, "lowest grid loss");
    dens->add_option("--grid-hi", dens_hi, "highest grid loss");
    dens->add_option("--alphas", dens_alphas, "confidence levels")->delimiter(',');

    // simulate
    auto* sim = app.add_subcommand("simulate", "Monte-Carlo portfolio losses");
    PortfolioArgs sim_pf;
    ecr::SimConfig sim_cfg;
    bool sim_stationary = false, sim_losses = false;
    int sim_N = 5;
    std::string sim_compare;
    std::vector<double> sim_alphas = ecr::kReportAlphas;
    sim_pf.add(sim);
    sim->add_option("--N", sim_N, "integer fluctuation strength")->check(CLI::PositiveNumber);
    sim->add_flag("--stationary", sim_stationary, "no correlation fluctuations (N -> infinity)");
    sim->add_option("--realizations", sim_cfg.realizations, "number of draws")->check(CLI::PositiveNumber);
    sim->add_option("--seed", sim_cfg.seed, "random seed");
    sim->add_option("--bins", sim_cfg.histogram_bins, "histogram bins on [0, 1]")->check(CLI::PositiveNumber);
    sim->add_option("--keep-cap", sim_cfg.keep_cap, "above this many draws keep only histogram and tail");
    sim->add_flag("--unscaled-eigenvalues", sim_cfg.unscaled_eigenvalues,
                  "mix with U Lambda instead of U Lambda^(1/2); sampled covariance becomes C^2");
    sim->add_flag("--write-losses", sim_losses, "also write every simulated loss");
    sim->add_option("--compare", sim_compare, "analytic loss-density CSV to compare quantiles against");
    sim->add_option("--alphas", sim_alphas, "confidence levels")->delimiter(',');

    // risk-report
    auto* risk = app.add_subcommand("risk-report", "VaR/ETL table over leverages, or a risk block for a density file");
    PortfolioArgs risk_pf;
    QuadArgs risk_q;
    std::string risk_engine = "analytic", risk_density, risk_prices, risk_corr = "empirical", risk_vol = "empirical";
    int risk_dt = 1;
    double risk_unit_days = 1.0;
    long long risk_realizations = 1'000'000;
    std::uint64_t risk_seed = 1;
    bool risk_stationary = false;
    std::vector<double> risk_levs = ecr::kReportLeverages, risk_alphas = ecr::kReportAlphas;
    risk_pf.add(risk);
    risk_q.add(risk);
    risk->add_option("--N", risk_pf.N, "fluctuation strength (rounded for mc)");
    risk->add_option("--engine", risk_engine, "analytic, limit or mc")
        ->check(CLI::IsMember({"analytic", "limit", "mc"}));
    risk->add_option("--density", risk_density, "read a loss-density CSV instead of computing a table");
    risk->add_option("--prices", risk_prices, "calibrate the mc portfolio from this price file");
    risk->add_option("--correlation", risk_corr, "with --prices: empirical matrix or homogeneous level")
        ->check(CLI::IsMember({"empirical", "homogeneous"}));
    risk->add_option("--volatility", risk_vol, "with --prices: per-asset or averaged drift and volatility")
        ->check(CLI::IsMember({"empirical", "average"}));
    risk->add_option("--dt", risk_dt, "with --prices: return interval in trading days")->check(CLI::PositiveNumber);
    risk->add_option("--unit-days", risk_unit_days, "with --prices: trading days per time unit");
    risk->add_option("--realizations", risk_realizations, "mc draws per leverage")->check(CLI::PositiveNumber);
    risk->add_option("--seed", risk_seed, "mc seed, shared by all leverages");
    risk->add_flag("--stationary", risk_stationary, "mc without correlation fluctuations");
    risk->add_option("--leverages", risk_levs, "F/V0 rows")->delimiter(',');
    risk->add_option("--alphas", risk_alphas, "confidence levels")->delimiter(',');

    // compare
    auto* cmp = app.add_subcommand("compare", "relative deviation of two risk tables");
    std::string cmp_base, cmp_variant;
    cmp->add_option("--base", cmp_base, "reference risk_table.csv")->required();
    cmp->add_option("--variant", cmp_variant, "risk_table.csv to compare")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitValidation;
    }

    CLI::App* active = app.get_subcommands().front();
    try {
        Run run(active->get_name(), g);

        if (active == ingest) {
            const ecr::IngestResult r = ecr::ingest_prices(ingest_prices, ingest_threshold);
            ecr::export_prices(r.panel, run.path("prices_clean.csv"));
            std::string report = "K=" + std::to_string(r.panel.K()) + "\ndays=" + std::to_string(r.panel.M()) +
                                 "\ndropped_days=" + std::to_string(r.dropped_days) + "\ndropped_tickers=";
            for (std::size_t i = 0; i < r.dropped.size(); ++i) report += (i ? "," : "") + r.dropped[i];
            report += "\n";
            run.write_text("ingest_report.txt", report);
            std::cout << report;
        } else if (active == fit) {
            fit_opt.mode = ecr::parse_fit_mode(fit_mode);
            const ecr::FitReport r = ecr::run_fit(fit_opt);
            const std::string text = ecr::fit_summary_text(r);
            run.write_text("fit_summary.txt", text);
            ecr::write_csv_table(ecr::fit_parameters_csv(r), run.path("fit_parameters.csv"));
            if (fit_export) {
                ecr::CsvTable t;
                t.columns = {"x"};
                for (double x : r.sample) t.rows.push_back({x});
                ecr::write_csv_table(t, run.path("standardized_sample.csv"));
            }
            std::cout << text;
        } else if (active == dens) {
            ecr::LossDensityOptions o;
            o.terms = dens_pf.terms;
            o.K = dens_pf.K;
            o.c = dens_pf.c;
            o.N = dens_pf.N;
            o.limit = dens_limit;
            o.grid_points = dens_points;
            o.grid_lo = dens_lo;
            o.grid_hi = dens_hi;
            o.quadrature = dens_q.config(g.threads);
            o.portfolio = dens_pf.spec();
            const ecr::LossDensity d = ecr::run_loss_density(o);
            ecr::write_loss_density_csv(d, run.path("loss_density.csv"));
            const ecr::RiskBlock b = ecr::density_risk(d, dens_alphas);
            ecr::write_csv_table(ecr::risk_block_csv(b), run.path("risk.csv"));
            std::cout << ecr::risk_block_text(b);
            if (d.flagged > 0) std::cerr << "note: " << d.flagged << " point-mass substitutions in the quadrature\n";
        } else if (active == sim) {
            sim_cfg.N = sim_stationary ? ecr::SimConfig::kStationary : sim_N;
            sim_cfg.c = sim_pf.c;
            sim_cfg.threads = g.threads;
            if (auto p = sim_pf.spec())
                sim_cfg.portfolio = *p;
            else
                sim_cfg.portfolio = ecr::PortfolioSpec::homogeneous(sim_pf.K, sim_pf.terms);
            const ecr::LossSample s = ecr::run_simulation(sim_cfg);
            ecr::write_histogram_csv(s, run.path("loss_histogram.csv"));
            if (sim_losses) {
                if (s.streamed()) ecr::fail(ecr::ErrorKind::validation,
                                            "--write-losses needs realizations <= --keep-cap");
                ecr::CsvTable t;
                t.metadata = s.config;
                t.columns = {"loss"};
                for (double l : s.losses) t.rows.push_back({l});
                ecr::write_csv_table(t, run.path("losses.csv"));
            }
            const ecr::RiskBlock b = ecr::sample_risk(s, sim_alphas);
            ecr::CsvTable rt = ecr::risk_block_csv(b);
            rt.metadata = s.config;
            ecr::write_csv_table(rt, run.path("risk.csv"));
            std::cout << ecr::risk_block_text(b);
            if (!sim_compare.empty()) {
                const ecr::LossDensity d = ecr::read_loss_density_csv(sim_compare);
                const ecr::QuantileComparison q = ecr::compare_quantiles(s, d);
                ecr::write_csv_table(ecr::quantile_comparison_csv(q), run.path("comparison.csv"));
                for (std::size_t i = 0; i < q.alphas.size(); ++i)
                    std::printf("compare alpha=%g mc=%.6g analytic=%.6g rel=%+.4f\n", q.alphas[i], q.mc[i],
                                q.analytic[i], q.rel[i]);
            }
        } else if (active == risk) {
            if (!risk_density.empty()) {
                const ecr::RiskBlock b = ecr::density_risk(ecr::read_loss_density_csv(risk_density), risk_alphas);
                ecr::write_csv_table(ecr::risk_block_csv(b), run.path("risk.csv"));
                std::cout << ecr::risk_block_text(b);
            } else {
                ecr::RiskTable t;
                if (risk_engine == "mc") {
                    ecr::SimConfig cfg;
                    if (!risk_prices.empty()) {
                        ecr::FitOptions fo;
                        fo.prices = risk_prices;
                        fo.dt = risk_dt;
                        fo.unit_days = risk_unit_days;
                        const ecr::FitReport fr = ecr::run_fit(fo);
                        cfg = ecr::calibrated_sim_config(
                            fr, risk_corr == "empirical" ? ecr::CorrelationChoice::empirical
                                                         : ecr::CorrelationChoice::homogeneous,
                            risk_vol == "empirical" ? ecr::VolatilityChoice::empirical : ecr::VolatilityChoice::average,
                            risk_pf.terms.T);
                    } else {
                        cfg.c = risk_pf.c;
                        cfg.N = static_cast<int>(std::lround(risk_pf.N));
                        if (auto p = risk_pf.spec())
                            cfg.portfolio = *p;
                        else
                            cfg.portfolio = ecr::PortfolioSpec::homogeneous(risk_pf.K, risk_pf.terms);
                    }
                    if (risk_stationary) cfg.N = ecr::SimConfig::kStationary;
                    cfg.realizations = risk_realizations;
                    cfg.seed = risk_seed;
                    cfg.threads = g.threads;
                    t = ecr::mc_risk_table(cfg, risk_levs, risk_alphas);
                } else {
                    ecr::LossDensityOptions o;
                    o.terms = risk_pf.terms;
                    o.K = risk_pf.K;
                    o.c = risk_pf.c;
                    o.N = risk_pf.N;
                    o.limit = risk_engine == "limit";
                    o.quadrature = risk_q.config(g.threads);
                    o.portfolio = risk_pf.spec();
                    t = ecr::analytic_risk_table(o, risk_levs, risk_alphas);
                }
                ecr::CsvTable csv = ecr::risk_table_csv(t);
                csv.metadata.emplace_back("engine", risk_engine);
                ecr::write_csv_table(csv, run.path("risk_table.csv"));
                for (std::size_t i = 0; i < t.leverages.size(); ++i)
                    for (std::size_t j = 0; j < t.alphas.size(); ++j)
                        std::printf("leverage=%g alpha=%g VaR=%.6g ETL=%.6g\n", t.leverages[i], t.alphas[j],
                                    t.var[i][j], t.etl[i][j]);
            }
        } else if (active == cmp) {
            const ecr::DeviationTable d = ecr::compare_risk_files(cmp_base, cmp_variant);
            ecr::write_csv_table(ecr::deviation_csv(d), run.path("deviation.csv"));
            const std::string text = ecr::format_deviation_text(d);
            run.write_text("deviation.txt", text);
            std::cout << text;
        }

        run.write_manifest(resolved_parameters(app, *active));
    } catch (const ecr::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.kind() == ecr::ErrorKind::numerical ? kExitNumerical : kExitValidation;
    } catch (const std::bad_alloc&) {
        std::cerr << "error: out of memory; lower --keep-cap or --realizations\n";
        return kExitNumerical;
    }
    return kExitOk;
}
