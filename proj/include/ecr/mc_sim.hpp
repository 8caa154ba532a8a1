#pragma once

// Monte-Carlo simulation of asset values at maturity under fluctuating
// correlations, the resulting portfolio losses, and risk numbers taken
// from the empirical loss distribution.
//
// Given a chi-square variable z with N degrees of freedom the log-returns
// are normal with covariance (z/N) Sigma T, so a draw needs N + K standard
// normals regardless of how the K x N mixing matrix is written.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ecr/csv_table.hpp"
#include "ecr/loss_engine.hpp"

namespace ecr {

struct SimConfig {
    static constexpr int kStationary = 0;  // N marker: no fluctuations (N -> inf)

    long long realizations = 1'000'000;
    std::uint64_t seed = 1;
    int N = 5;
    double c = 0.0;                             // homogeneous correlation level
    std::optional<Eigen::MatrixXd> correlation;  // explicit matrix, overrides c
    PortfolioSpec portfolio;
    /// Mix with U Lambda instead of U Lambda^{1/2}. The sampled covariance
    /// is then C^2 rather than C; kept only to reproduce that convention.
    bool unscaled_eigenvalues = false;
    int histogram_bins = 10'000;
    /// Above this many realizations only the histogram and the tail
    /// reservoir are kept.
    long long keep_cap = 20'000'000;
    int threads = 0;

    bool stationary() const { return N == kStationary; }
    void validate() const;
    Eigen::MatrixXd correlation_matrix() const;
    /// Parameters echoed into output headers.
    Metadata describe() const;
};

/// Precomputed mixing transform and per-asset constants for one config.
class AssetSampler {
public:
    explicit AssetSampler(const SimConfig& cfg);

    int K() const { return static_cast<int>(log_v0_.size()); }
    /// Standardized log-return shocks x with covariance C (or C^2), already
    /// multiplied by the fluctuation factor sqrt(z/N).
    void draw_shocks(std::mt19937_64& rng, Eigen::Ref<Eigen::VectorXd> x) const;
    /// ln V_k(T) for the shocks x.
    double log_value(int k, double x) const { return log_v0_[k] + drift_[k] + scale_[k] * x; }
    double log_face(int k) const { return log_f_[k]; }
    double weight(int k) const { return weights_[k]; }

private:
    int N_ = 0;
    bool homogeneous_ = false;
    double diag_ = 1.0;    // homogeneous: coefficient on the idiosyncratic normal
    double common_ = 0.0;  // homogeneous: coefficient on the mean of the normals
    Eigen::MatrixXd mix_;
    std::vector<double> log_v0_, log_f_, drift_, scale_, weights_;
};

/// One draw of V(T) for every asset; all entries strictly positive.
Eigen::VectorXd draw_asset_values(std::mt19937_64& rng, const AssetSampler& sampler);

/// sum_k f_k (F_k - V_k)/F_k on defaulted obligors, in [0, 1].
double portfolio_loss(const Eigen::VectorXd& V, const PortfolioSpec& p);

struct Histogram {
    double lo = 0.0;
    double hi = 1.0;
    std::vector<long long> counts;

    double width() const { return (hi - lo) / static_cast<double>(counts.size()); }
    void add(double x);
};

struct LossSample {
    long long realizations = 0;
    std::vector<double> losses;  // in draw order; empty when streamed
    std::vector<double> tail;    // largest ~0.5% of losses, descending
    Histogram histogram;
    Metadata config;

    bool streamed() const { return losses.empty() && realizations > 0; }
};

/// Deterministic in (seed, config): realizations are split into fixed-size
/// chunks and each chunk draws from its own generator keyed by
/// (seed, chunk index), so the thread count never changes the output.
LossSample run_simulation(const SimConfig& cfg);

struct SampleRisk {
    double var = 0.0;
    double etl = 0.0;
    bool thin_tail = false;  // fewer than 100 samples beyond the quantile
    bool from_histogram = false;
};

/// VaR is the order statistic at floor((n-1) alpha) of the sorted sample,
/// ETL the mean of all samples >= VaR. Streamed samples answer from the
/// tail reservoir and fall back to the histogram below its coverage.
SampleRisk sample_var_etl(const LossSample& s, double alpha);
SampleRisk sample_var_etl(std::vector<double> losses, double alpha);

/// Histogram as a density on bin centres; reads back as a LossDensity.
LossDensity histogram_density(const LossSample& s);
void write_histogram_csv(const LossSample& s, const std::string& path);

/// VaR and ETL over leverage rows F/V0 and confidence columns alpha.
struct RiskTable {
    std::vector<double> leverages;
    std::vector<double> alphas;
    std::vector<std::vector<double>> var;  // [leverage][alpha]
    std::vector<std::vector<double>> etl;
};

struct DeviationTable {
    std::vector<double> leverages;
    std::vector<double> alphas;
    std::vector<std::vector<std::optional<double>>> var;  // percent; nullopt when base = 0
    std::vector<std::vector<std::optional<double>>> etl;
};

/// Percentages rounded to the nearest half point.
double round_half_point(double percent);

/// delta = (variant - base)/base * 100, rounded to half points.
DeviationTable relative_deviation_report(const RiskTable& base, const RiskTable& variant);

inline const std::vector<double> kReportAlphas = {0.99, 0.995, 0.999};
inline const std::vector<double> kReportLeverages = {0.75, 0.80, 0.85, 0.90};

/// Simulated risk table: for every leverage all face values are set to
/// leverage * V0 and the same seed is reused, so rows share their draws.
RiskTable mc_risk_table(const SimConfig& cfg, const std::vector<double>& leverages = kReportLeverages,
                        const std::vector<double>& alphas = kReportAlphas);

std::string format_deviation_text(const DeviationTable& t);
CsvTable deviation_csv(const DeviationTable& t);

CsvTable risk_table_csv(const RiskTable& t);
RiskTable risk_table_from_csv(const CsvTable& table);

}  // namespace ecr
