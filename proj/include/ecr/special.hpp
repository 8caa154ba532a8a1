#pragma once

// Scalar special functions shared by the density and loss code.

namespace ecr {

/// Standard normal CDF, Phi(x) = 1/2 + erf(x / sqrt 2) / 2.
double normal_cdf(double x);

/// log Phi(x), accurate far into the lower tail where Phi underflows.
double log_normal_cdf(double x);

/// Standard normal density.
double normal_pdf(double x);

/// Modified Bessel function of the second kind K_nu(x) for real nu, x > 0.
double bessel_k(double nu, double x);

/// log K_nu(x). Falls back to asymptotic forms where K_nu itself
/// overflows (large order, small argument) or underflows (large argument).
double log_bessel_k(double nu, double x);

}  // namespace ecr
