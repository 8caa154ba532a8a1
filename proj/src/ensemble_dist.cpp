#include "ecr/ensemble_dist.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "ecr/error.hpp"
#include "ecr/special.hpp"

namespace ecr {

namespace {

constexpr double kSymmetryTol = 1e-12;
const double kLog2 = std::log(2.0);
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

// Mahalanobis form and log-determinant of Sigma.
struct Quadratic {
    double form = 0.0;
    double log_det = 0.0;
};

Quadratic quadratic_form(const Eigen::VectorXd& r, const CovarianceSpec& cov) {
    const int K = cov.dimension();
    require(r.size() == K, "return vector dimension does not match covariance");
    require(r.allFinite(), "return vector must be finite");
    const auto& sigma = cov.sigma();
    Quadratic q;
    if (cov.is_homogeneous()) {
        const double c = cov.level();
        const double top = 1.0 + (K - 1) * c;
        double sum = 0.0, sumsq = 0.0, log_sigma = 0.0;
        for (int k = 0; k < K; ++k) {
            const double y = r(k) / sigma[k];
            sum += y;
            sumsq += y * y;
            log_sigma += std::log(sigma[k]);
        }
        // C^{-1} = (I - c/(1+(K-1)c) e e^T) / (1 - c)
        q.form = std::max(0.0, (sumsq - c / top * sum * sum) / (1.0 - c));
        q.log_det = 2.0 * log_sigma + (K - 1) * std::log1p(-c) + std::log(top);
        return q;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cov.covariance_matrix());
    if (llt.info() != Eigen::Success) fail(ErrorKind::numerical, "covariance matrix is not invertible");
    const Eigen::MatrixXd& L = llt.matrixL();
    const double min_pivot = L.diagonal().minCoeff();
    const double max_pivot = L.diagonal().maxCoeff();
    if (!(min_pivot > 1e-12 * max_pivot)) fail(ErrorKind::numerical, "covariance matrix is not invertible");
    const Eigen::VectorXd w = llt.matrixL().solve(r);
    q.form = w.squaredNorm();
    q.log_det = 2.0 * L.diagonal().array().log().sum();
    return q;
}

}  // namespace

void CorrelationModel::validate() const {
    require(K >= 1, "CorrelationModel: K must be positive");
    require(N > 0.0 && std::isfinite(N), "CorrelationModel: N must be positive");
    require(c < 1.0, "CorrelationModel: c must be below 1");
    require(K == 1 || 1.0 + (K - 1) * c > 0.0,
            "CorrelationModel: c must exceed -1/(K-1) for a positive definite matrix");
}

bool CorrelationModel::integer_N() const { return N >= 1.0 && N == std::floor(N); }

Eigen::MatrixXd CorrelationModel::matrix() const {
    Eigen::MatrixXd C = Eigen::MatrixXd::Constant(K, K, c);
    C.diagonal().setOnes();
    return C;
}

CovarianceSpec CovarianceSpec::homogeneous(std::vector<double> sigma, double c) {
    require(!sigma.empty(), "CovarianceSpec: sigma must not be empty");
    for (double s : sigma) require(s > 0.0 && std::isfinite(s), "CovarianceSpec: sigma must be positive");
    CorrelationModel{static_cast<int>(sigma.size()), c, 1.0}.validate();
    return CovarianceSpec(std::move(sigma), c);
}

CovarianceSpec CovarianceSpec::explicit_matrix(std::vector<double> sigma, Eigen::MatrixXd correlation) {
    require(!sigma.empty(), "CovarianceSpec: sigma must not be empty");
    for (double s : sigma) require(s > 0.0 && std::isfinite(s), "CovarianceSpec: sigma must be positive");
    const auto K = static_cast<Eigen::Index>(sigma.size());
    require(correlation.rows() == K && correlation.cols() == K, "CovarianceSpec: correlation must be K x K");
    for (Eigen::Index i = 0; i < K; ++i) {
        require(correlation(i, i) == 1.0, "CovarianceSpec: correlation diagonal must be exactly 1");
        for (Eigen::Index j = 0; j < i; ++j)
            require(std::abs(correlation(i, j) - correlation(j, i)) <= kSymmetryTol,
                    "CovarianceSpec: correlation must be symmetric");
    }
    correlation = 0.5 * (correlation + correlation.transpose()).eval();
    return CovarianceSpec(std::move(sigma), std::move(correlation));
}

Eigen::MatrixXd CovarianceSpec::correlation_matrix() const {
    if (is_homogeneous()) return CorrelationModel{dimension(), level(), 1.0}.matrix();
    return std::get<Eigen::MatrixXd>(correlation_);
}

Eigen::MatrixXd CovarianceSpec::covariance_matrix() const {
    const Eigen::Map<const Eigen::VectorXd> s(sigma_.data(), dimension());
    return s.asDiagonal() * correlation_matrix() * s.asDiagonal();
}

Spectrum homogeneous_correlation_spectrum(const CorrelationModel& model) {
    model.validate();
    const int K = model.K;
    Spectrum out;
    out.eigenvalues = Eigen::VectorXd::Constant(K, 1.0 - model.c);
    out.eigenvalues(0) = 1.0 + (K - 1) * model.c;
    out.eigenvectors = Eigen::MatrixXd::Zero(K, K);
    out.eigenvectors.col(0).setConstant(1.0 / std::sqrt(static_cast<double>(K)));
    // Helmert basis: column j has j ones followed by -j, scaled to unit norm.
    for (int j = 1; j < K; ++j) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(j) * (j + 1));
        out.eigenvectors.col(j).head(j).setConstant(scale);
        out.eigenvectors(j, j) = -j * scale;
    }
    return out;
}

DensityPoint avg_return_density(const Eigen::VectorXd& r, const CovarianceSpec& cov, double N) {
    require(N > 0.0 && std::isfinite(N), "avg_return_density: N must be positive");
    const int K = cov.dimension();
    const Quadratic q = quadratic_form(r, cov);
    const double nu = 0.5 * (K - N);
    const double log_prefactor = 0.5 * K * std::log(N) - 0.5 * (N - 2.0) * kLog2 - std::lgamma(0.5 * N) -
                                 0.5 * (K * kLog2Pi + q.log_det);
    DensityPoint out;
    double x = std::sqrt(N * q.form);
    if (x <= 0.0 || !std::isfinite(std::log(x))) {
        if (nu < 0.0) {
            // K_nu(x) / x^nu -> Gamma(|nu|) 2^{|nu|-1} as x -> 0
            out.value = std::exp(log_prefactor + std::lgamma(-nu) + (-nu - 1.0) * kLog2);
            return out;
        }
        x = std::numeric_limits<double>::min();
        out.clamped = true;
    }
    out.value = std::exp(log_prefactor + log_bessel_k(nu, x) - nu * std::log(x));
    return out;
}

double rotated_scaled_density(double r_tilde, double N) {
    require(N > 0.0 && std::isfinite(N), "rotated_scaled_density: N must be positive");
    require(std::isfinite(r_tilde), "rotated_scaled_density: argument must be finite");
    const double nu = 0.5 * (N - 1.0);
    const double log_prefactor =
        0.5 * (1.0 - N) * kLog2 + 0.5 * std::log(N) - 0.5 * std::log(std::numbers::pi) - std::lgamma(0.5 * N);
    const double x = std::sqrt(N) * std::abs(r_tilde);
    if (x == 0.0) {
        if (nu <= 0.0) return std::numeric_limits<double>::infinity();
        return std::exp(log_prefactor + std::lgamma(nu) + (nu - 1.0) * kLog2);
    }
    return std::exp(log_prefactor + nu * std::log(x) + log_bessel_k(nu, x));
}

double multivariate_normal_density(const Eigen::VectorXd& r, const CovarianceSpec& cov) {
    const int K = cov.dimension();
    Quadratic q;
    try {
        q = quadratic_form(r, cov);
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::numerical) fail(ErrorKind::validation, "covariance is not positive definite");
        throw;
    }
    return std::exp(-0.5 * q.form - 0.5 * (K * kLog2Pi + q.log_det));
}

}  // namespace ecr
