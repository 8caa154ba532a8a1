#include "ecr/quadrature.hpp"

#include <Eigen/Eigenvalues>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <limits>
#include <queue>
#include <numbers>

#include "ecr/error.hpp"

namespace ecr {

namespace {

// Golub-Welsch: nodes are the eigenvalues of the Jacobi matrix of the
// orthogonal polynomial family; weights are mu0 times the squared first
// component of each normalized eigenvector.
QuadratureRule golub_welsch(const Eigen::VectorXd& diag, const Eigen::VectorXd& offdiag, double mu0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
    solver.computeFromTridiagonal(diag, offdiag, Eigen::ComputeEigenvectors);
    if (solver.info() != Eigen::Success) fail(ErrorKind::numerical, "Golub-Welsch eigensolve failed");
    const auto n = diag.size();
    QuadratureRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        rule.nodes[i] = solver.eigenvalues()(i);
        const double v0 = solver.eigenvectors()(0, i);
        rule.weights[i] = mu0 * v0 * v0;
    }
    return rule;
}

}  // namespace

QuadratureRule gauss_laguerre(int n, double alpha) {
    require(n >= 1, "gauss_laguerre: n must be positive");
    require(alpha > -1.0, "gauss_laguerre: alpha must exceed -1");
    Eigen::VectorXd diag(n), off(n > 1 ? n - 1 : 0);
    for (int i = 0; i < n; ++i) diag(i) = 2.0 * i + alpha + 1.0;
    for (int i = 1; i < n; ++i) off(i - 1) = std::sqrt(i * (i + alpha));
    return golub_welsch(diag, off, std::exp(std::lgamma(alpha + 1.0)));
}

QuadratureRule gauss_hermite(int n) {
    require(n >= 1, "gauss_hermite: n must be positive");
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n), off(n > 1 ? n - 1 : 0);
    for (int i = 1; i < n; ++i) off(i - 1) = std::sqrt(0.5 * i);
    return golub_welsch(diag, off, std::sqrt(std::numbers::pi));
}

QuadratureRule gauss_legendre(int n) {
    require(n >= 1, "gauss_legendre: n must be positive");
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n), off(n > 1 ? n - 1 : 0);
    for (int i = 1; i < n; ++i) off(i - 1) = i / std::sqrt(4.0 * i * i - 1.0);
    return golub_welsch(diag, off, 2.0);
}

AdaptiveResult integrate_adaptive(const std::function<double(double)>& f, double a, double b,
                                  double rel_tol, int max_depth) {
    AdaptiveResult out;
    if (a == b) return out;
    // Global bisection of the interval with the largest |K15 - G7|. The Boost
    // driver compares an unscaled error against a scaled tolerance, so only
    // its nodes and weights are used here.
    using GK = boost::math::quadrature::gauss_kronrod<double, 15>;
    using G7 = boost::math::quadrature::gauss<double, 7>;
    const auto& xk = GK::abscissa();
    const auto& wk = GK::weights();
    const auto& wg = G7::weights();

    struct Piece {
        double lo, hi, value, error, l1;
        bool operator<(const Piece& o) const { return error < o.error; }
    };
    auto rule = [&](double lo, double hi) {
        const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
        const double fc = f(mid);
        double k = wk[0] * fc, g = wg[0] * fc, l1 = wk[0] * std::abs(fc);
        for (std::size_t i = 1; i < xk.size(); ++i) {
            const double f1 = f(mid - half * xk[i]), f2 = f(mid + half * xk[i]);
            k += wk[i] * (f1 + f2);
            l1 += wk[i] * (std::abs(f1) + std::abs(f2));
            if (i % 2 == 0) g += wg[i / 2] * (f1 + f2);
        }
        return Piece{lo, hi, half * k, std::abs(half * (k - g)), std::abs(half) * l1};
    };

    std::priority_queue<Piece> heap;
    heap.push(rule(a, b));
    double value = heap.top().value, error = heap.top().error, l1 = heap.top().l1;
    const std::size_t max_pieces = std::size_t{1} << std::min(max_depth, 14);
    while (heap.size() < max_pieces) {
        const double target = std::max(rel_tol * std::abs(value), 50.0 * std::numeric_limits<double>::epsilon() * l1);
        if (error <= target) break;
        const Piece worst = heap.top();
        const double mid = 0.5 * (worst.lo + worst.hi);
        if (mid <= std::min(worst.lo, worst.hi) || mid >= std::max(worst.lo, worst.hi)) break;
        heap.pop();
        const Piece left = rule(worst.lo, mid), right = rule(mid, worst.hi);
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        l1 += left.l1 + right.l1 - worst.l1;
        heap.push(left);
        heap.push(right);
    }
    // re-sum to drop the drift of the running totals
    value = error = 0.0;
    while (!heap.empty()) {
        value += heap.top().value;
        error += heap.top().error;
        heap.pop();
    }
    out.value = value;
    out.error = error;
    return out;
}

}  // namespace ecr
