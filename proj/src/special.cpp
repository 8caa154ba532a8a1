#include "ecr/special.hpp"

#include <boost/math/special_functions/bessel.hpp>
#include <boost/math/special_functions/erf.hpp>

#include <cmath>
#include <limits>
#include <numbers>

#include "ecr/error.hpp"

namespace ecr {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

// Debye uniform expansion of K_nu(nu z), four terms.
double log_bessel_k_debye(double nu, double x) {
    const double z = x / nu;
    const double root = std::sqrt(1.0 + z * z);
    const double eta = root + std::log(z / (1.0 + root));
    const double t = 1.0 / root;
    const double t2 = t * t;
    const double u1 = t * (3.0 - 5.0 * t2) / 24.0;
    const double u2 = t2 * (81.0 - 462.0 * t2 + 385.0 * t2 * t2) / 1152.0;
    const double u3 = t * t2 *
                      (30375.0 - 369603.0 * t2 + 765765.0 * t2 * t2 - 425425.0 * t2 * t2 * t2) /
                      414720.0;
    const double series = 1.0 - u1 / nu + u2 / (nu * nu) - u3 / (nu * nu * nu);
    return 0.5 * std::log(std::numbers::pi / (2.0 * nu)) - nu * eta - 0.5 * std::log(root) +
           std::log(series);
}

// Hankel expansion for large argument.
double log_bessel_k_large_x(double nu, double x) {
    const double mu = 4.0 * nu * nu;
    double term = 1.0;
    double sum = 1.0;
    for (int k = 1; k < 12; ++k) {
        const double odd = 2.0 * k - 1.0;
        term *= (mu - odd * odd) / (k * 8.0 * x);
        sum += term;
        if (std::abs(term) < 1e-17 * std::abs(sum)) break;
    }
    return 0.5 * std::log(std::numbers::pi / (2.0 * x)) - x + std::log(sum);
}

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

double log_normal_cdf(double x) {
    if (x > -30.0) return std::log(normal_cdf(x));
    // Mills ratio asymptotics: Phi(x) ~ phi(x)/|x| (1 - 1/x^2 + 3/x^4 - 15/x^6)
    const double inv2 = 1.0 / (x * x);
    const double series = 1.0 - inv2 + 3.0 * inv2 * inv2 - 15.0 * inv2 * inv2 * inv2;
    return -0.5 * x * x - 0.5 * std::log(2.0 * std::numbers::pi) - std::log(-x) + std::log(series);
}

double bessel_k(double nu, double x) {
    require(x > 0.0, "bessel_k: argument must be positive");
    return boost::math::cyl_bessel_k(std::abs(nu), x);
}

double log_bessel_k(double nu, double x) {
    require(x > 0.0, "log_bessel_k: argument must be positive");
    nu = std::abs(nu);
    if (x > 600.0) return 4.0 * nu * nu < x ? log_bessel_k_large_x(nu, x) : log_bessel_k_debye(nu, x);
    if (nu >= 1000.0) return log_bessel_k_debye(nu, x);
    double value = std::numeric_limits<double>::infinity();
    try {
        value = boost::math::cyl_bessel_k(nu, x);
    } catch (const std::overflow_error&) {
    }
    if (std::isfinite(value) && value > 1e-290) return std::log(value);
    if (nu >= 10.0) return log_bessel_k_debye(nu, x);
    if (x < 1e-3) {
        // leading small-argument behaviour
        if (nu == 0.0) return std::log(-std::log(0.5 * x) - std::numbers::egamma);
        return std::lgamma(nu) - std::log(2.0) - nu * std::log(0.5 * x);
    }
    fail(ErrorKind::numerical, "log_bessel_k: no accurate evaluation for this (nu, x)");
}

}  // namespace ecr
