#pragma once

// Ensemble-averaged return densities and the algebra of the homogeneous
// correlation matrix C = (1 - c) I + c e e^T.
//
// Averaging a multivariate normal over Wishart-distributed covariances
// with shape N gives a normal scale mixture: given z ~ chi^2_N the return
// vector is N(0, (z/N) Sigma). Every density below is a closed form of
// that mixture.

#include <Eigen/Dense>

#include <variant>
#include <vector>

namespace ecr {

/// Homogeneous correlation level c, fluctuation strength N, dimension K.
struct CorrelationModel {
    int K = 1;
    double c = 0.0;
    double N = 1.0;

    /// Throws unless K >= 1, N > 0 and C is positive definite.
    void validate() const;
    /// True when N is a positive integer (required by the simulator).
    bool integer_N() const;
    Eigen::MatrixXd matrix() const;
};

/// Sigma = diag(sigma) C diag(sigma), with C either homogeneous or explicit.
class CovarianceSpec {
public:
    static CovarianceSpec homogeneous(std::vector<double> sigma, double c);
    static CovarianceSpec explicit_matrix(std::vector<double> sigma, Eigen::MatrixXd correlation);

    int dimension() const { return static_cast<int>(sigma_.size()); }
    const std::vector<double>& sigma() const { return sigma_; }
    bool is_homogeneous() const { return std::holds_alternative<double>(correlation_); }
    /// Average correlation level; only meaningful for homogeneous specs.
    double level() const { return std::get<double>(correlation_); }

    Eigen::MatrixXd correlation_matrix() const;
    Eigen::MatrixXd covariance_matrix() const;

private:
    CovarianceSpec(std::vector<double> sigma, std::variant<double, Eigen::MatrixXd> correlation)
        : sigma_(std::move(sigma)), correlation_(std::move(correlation)) {}

    std::vector<double> sigma_;
    std::variant<double, Eigen::MatrixXd> correlation_;
};

struct Spectrum {
    Eigen::VectorXd eigenvalues;   // largest first
    Eigen::MatrixXd eigenvectors;  // column i belongs to eigenvalues(i)
};

/// Exact spectrum of the homogeneous matrix: 1 + (K-1)c on e/sqrt(K),
/// 1 - c on a Helmert basis of the complement.
Spectrum homogeneous_correlation_spectrum(const CorrelationModel& model);

/// Result of a density evaluation. `clamped` is set when the density is
/// singular at the requested point and the value at the nearest
/// representable argument was returned instead.
struct DensityPoint {
    double value = 0.0;
    bool clamped = false;
};

/// Wishart-averaged multivariate return density <g>(r | Sigma, N), a
/// Bessel-K function of the Mahalanobis norm. Evaluated in log space.
DensityPoint avg_return_density(const Eigen::VectorXd& r, const CovarianceSpec& cov, double N);

/// Univariate marginal of rotated and eigenvalue-scaled returns. Even in
/// r_tilde. For N <= 1 the density diverges at 0 and +inf is returned there.
double rotated_scaled_density(double r_tilde, double N);

/// Correlated normal density with covariance Sigma (the N -> inf limit).
double multivariate_normal_density(const Eigen::VectorXd& r, const CovarianceSpec& cov);

}  // namespace ecr
