#pragma once

// Calibration from price histories: returns, covariance and drift
// estimates, the homogeneous correlation level, standardized samples and
// three estimators of the fluctuation strength N.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ecr/ensemble_dist.hpp"

namespace ecr {

struct PricePanel {
    std::vector<std::string> tickers;
    std::vector<std::string> dates;  // ISO-8601, strictly ascending
    Eigen::MatrixXd prices;          // K x M

    int K() const { return static_cast<int>(tickers.size()); }
    int M() const { return static_cast<int>(dates.size()); }
};

struct IngestResult {
    PricePanel panel;
    std::vector<std::string> dropped;  // tickers over the missing-data threshold
    int dropped_days = 0;              // days removed because a kept ticker had no price
};

/// Reads `date,<ticker>,...` CSV. Empty, "NA" and "nan" fields are missing.
/// Tickers missing on more than `missing_threshold` of the days are
/// dropped; remaining days with any gap are removed.
IngestResult ingest_prices(const std::string& path, double missing_threshold = 0.10);
void export_prices(const PricePanel& panel, const std::string& path);

struct ReturnPanel {
    std::vector<std::string> tickers;
    Eigen::MatrixXd returns;  // K x (M - interval)
    int interval = 1;         // trading days

    int K() const { return static_cast<int>(returns.rows()); }
    int length() const { return static_cast<int>(returns.cols()); }
};

/// r_k(t) = (S_k(t + dt) - S_k(t)) / S_k(t) for every t.
ReturnPanel compute_returns(const PricePanel& p, int dt);

struct PairwiseSample {
    std::vector<double> values;
    int windows = 0;
    long long skipped_pairs = 0;
};

/// Every pair of assets in every non-overlapping window: demean, rotate
/// into the eigenbasis of the pair's 2 x 2 sample covariance and divide by
/// the square root of the eigenvalue. Pairs with a singular covariance are
/// skipped and counted.
PairwiseSample windowed_pairwise_aggregate(const ReturnPanel& r, int window = 25, int threads = 0);

struct CovarianceEstimate {
    CovarianceSpec covariance;  // per return interval
    std::vector<double> mu;     // mean return per time unit
    std::vector<double> rho;    // volatility per sqrt(time unit)
    std::vector<double> mean;   // mean return per interval
};

/// Sample covariance with divisor M - 1. `unit_days` sets the time unit of
/// mu and rho (1 = trading day, 20 = month, 252 = year).
CovarianceEstimate estimate_covariance(const ReturnPanel& r, double unit_days = 1.0);

/// c = mean off-diagonal correlation. N is left at 0 (unset).
CorrelationModel homogeneous_summary(const CovarianceSpec& cov);

/// Demeaned returns rotated into the eigenbasis of the covariance and
/// divided by sqrt(eigenvalue), pooled over assets and time.
std::vector<double> rotate_scale_returns(const ReturnPanel& r, const CovarianceSpec& cov);

enum class FitMethod { least_squares, cramer_von_mises, variance_identity };
std::string to_string(FitMethod m);

struct NFit {
    double N_hat = 0.0;
    FitMethod method = FitMethod::least_squares;
    double diagnostic = 0.0;  // residual, W^2 or sample variance of x
    bool boundary = false;    // optimum sits on the edge of the candidate grid
};

/// Integers 1..50; the scan refines in steps of 0.1 around the best one.
std::vector<double> default_N_grid();

/// Freedman-Diaconis histogram, squared log-density error over bins holding
/// at least 10 samples.
NFit fit_N_least_squares(const std::vector<double>& sample, const std::vector<double>& grid = default_N_grid());

/// CDF of the rotated-scaled marginal, tabulated once per N on 4096 points
/// by integrating the density.
class RotatedScaledCdf {
public:
    explicit RotatedScaledCdf(double N);
    double operator()(double x) const;

private:
    std::vector<double> x_, F_, g_;
};

/// W^2 = 1/(12n) + sum_i (F(x_(i)) - (2i - 1)/(2n))^2.
double cramer_von_mises_statistic(std::vector<double> sample, const RotatedScaledCdf& cdf);
inline constexpr double kCramerVonMises5 = 0.461;

NFit fit_N_cramer_von_mises(const std::vector<double>& sample, const std::vector<double>& grid = default_N_grid());

/// Var(x) = 4(1/2 + c^2) K^2/N + 2c^2 K^2 + 4(1 - c^2) K/N + 2(1 - c^2) K
/// for x = r^T r of unit-variance returns.
double variance_identity(int K, double c, double N);
/// Closed-form inverse of variance_identity; throws when no N > 0 fits.
double invert_variance_identity(int K, double c, double variance);
/// Standardizes each asset to unit variance, then inverts the identity
/// with the sample variance of x.
NFit estimate_N_variance_identity(const ReturnPanel& r, double c);

/// Synthetic prices from the ensemble model: per step, returns are
/// mu + sqrt(z/N) diag(sigma) C^{1/2} g with z ~ chi^2_N (N = 0: z/N = 1).
struct SyntheticPanelSpec {
    int M = 1000;  // price days
    int N = 5;
    Eigen::MatrixXd correlation;
    std::vector<double> mu;     // per step
    std::vector<double> sigma;  // per step
    std::uint64_t seed = 1;
    double start_price = 100.0;
};
PricePanel synthetic_price_panel(const SyntheticPanelSpec& spec);

/// Equicorrelated blocks: `within` inside a block, `across` between blocks.
Eigen::MatrixXd block_correlation(int K, int blocks, double within, double across);

}  // namespace ecr
