#pragma once

// The operations behind each CLI subcommand, as plain functions of their
// options so tests can drive the same pipeline without a process boundary.

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "ecr/csv_table.hpp"
#include "ecr/loss_engine.hpp"
#include "ecr/market_data.hpp"
#include "ecr/mc_sim.hpp"

namespace ecr {

enum class FitMode { empirical, homogeneous };
std::string to_string(FitMode m);
FitMode parse_fit_mode(const std::string& name);

struct FitOptions {
    std::string prices;
    int dt = 1;
    FitMode mode = FitMode::empirical;
    double missing_threshold = 0.10;
    double unit_days = 1.0;  // time unit of the reported mu and sigma
};

/// Fit results for both covariance choices; `mode` picks the headline N.
struct FitReport {
    FitMode mode = FitMode::empirical;
    std::vector<std::string> tickers;
    std::vector<std::string> dropped;
    int dropped_days = 0;
    int days = 0;
    int returns = 0;
    int dt = 1;

    double c = 0.0;
    double sigma_bar = 0.0;
    double mu_bar = 0.0;
    std::vector<double> mu;
    std::vector<double> sigma;
    Eigen::MatrixXd correlation;

    NFit ls_emp, cvm_emp, ls_hom, cvm_hom;
    std::optional<NFit> variance_identity;
    std::string variance_identity_note;  // why the identity gave no N
    std::vector<double> sample;          // standardized returns for `mode`

    int K() const { return static_cast<int>(tickers.size()); }
    double N_emp() const { return cvm_emp.N_hat; }
    double N_hom() const { return cvm_hom.N_hat; }
    double N_hat() const { return mode == FitMode::empirical ? N_emp() : N_hom(); }
};

/// ingest -> returns -> covariance -> rotate/scale -> N estimators. Errors
/// keep their kind and are prefixed with the failing stage.
FitReport run_fit(const FitOptions& opt);
std::string fit_summary_text(const FitReport& r);
/// One row: K, N_hom, N_emp, sigma_bar, mu_bar, c.
CsvTable fit_parameters_csv(const FitReport& r);

struct LossDensityOptions {
    ObligorTerms terms;
    int K = 100;
    bool limit = false;
    double c = 0.3;
    double N = 5.0;
    int grid_points = 2000;
    double grid_lo = 0.0;
    double grid_hi = 1.0;
    QuadratureConfig quadrature;
    /// Heterogeneous obligors; overrides terms and K for finite mode.
    std::optional<PortfolioSpec> portfolio;
};

LossDensity run_loss_density(const LossDensityOptions& opt);

struct RiskRow {
    double alpha = 0.0;
    double var = 0.0;
    double etl = 0.0;
};
using RiskBlock = std::vector<RiskRow>;

RiskBlock density_risk(const LossDensity& d, const std::vector<double>& alphas = kReportAlphas);
RiskBlock sample_risk(const LossSample& s, const std::vector<double>& alphas = kReportAlphas);
std::string risk_block_text(const RiskBlock& b);
CsvTable risk_block_csv(const RiskBlock& b);

/// Simulated against analytic quantiles; rel = (mc - analytic)/analytic.
struct QuantileComparison {
    std::vector<double> alphas;
    std::vector<double> mc;
    std::vector<double> analytic;
    std::vector<double> rel;
};
QuantileComparison compare_quantiles(const LossSample& s, const LossDensity& d,
                                     const std::vector<double>& alphas = {0.95, 0.99, 0.995, 0.999});
CsvTable quantile_comparison_csv(const QuantileComparison& q);

/// Portfolio columns F,V0,mu,rho; T comes from the caller.
PortfolioSpec read_portfolio_csv(const std::string& path, double T);

/// Analytic risk table: every leverage sets F = leverage * V0.
RiskTable analytic_risk_table(const LossDensityOptions& opt, const std::vector<double>& leverages = kReportLeverages,
                              const std::vector<double>& alphas = kReportAlphas);

enum class CorrelationChoice { empirical, homogeneous };
enum class VolatilityChoice { empirical, average };

/// Simulation config from a fit. Empirical correlations run with the
/// rounded N_emp, the homogeneous level with the rounded N_hom; average
/// volatility replaces every obligor's drift and volatility by the means.
SimConfig calibrated_sim_config(const FitReport& fit, CorrelationChoice corr, VolatilityChoice vol, double T);

DeviationTable compare_risk_files(const std::string& base, const std::string& variant);

}  // namespace ecr
