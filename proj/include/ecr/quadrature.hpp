#pragma once

#include <functional>
#include <vector>

namespace ecr {

/// Nodes and weights of an interpolatory rule. Weights already carry
/// the rule's weight function, so sum_i w_i f(x_i) ~ integral w(x) f(x).
struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

/// Generalized Gauss-Laguerre rule for weight t^alpha e^{-t} on (0, inf), alpha > -1.
QuadratureRule gauss_laguerre(int n, double alpha);

/// Gauss-Hermite rule for weight e^{-t^2} on the real line.
QuadratureRule gauss_hermite(int n);

/// Gauss-Legendre rule on [-1, 1].
QuadratureRule gauss_legendre(int n);

/// Globally adaptive Gauss-Kronrod (15 point) on a finite interval.
struct AdaptiveResult {
    double value = 0.0;
    double error = 0.0;
};
AdaptiveResult integrate_adaptive(const std::function<double(double)>& f, double a, double b,
                                  double rel_tol = 1e-12, int max_depth = 18);

}  // namespace ecr
