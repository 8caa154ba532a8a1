#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "ecr/ensemble_dist.hpp"
#include "ecr/loss_engine.hpp"

namespace ecr::test {

struct MomentTuple {
    double z, u;
    ObligorTerms terms;
    CorrelationModel model;
};

/// Random (z, u, F/V0, mu, rho, T, c, N) draws; z and u are taken from
/// the bulk of their weights so the moments are not all 0 or 1.
inline std::vector<MomentTuple> random_moment_tuples(int count, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::vector<MomentTuple> out;
    for (int i = 0; i < count; ++i) {
        MomentTuple t;
        t.model.K = 1;
        t.model.N = 1.0 + 49.0 * U(rng);
        t.model.c = 0.9 * U(rng);
        std::chi_squared_distribution<double> chi(t.model.N);
        t.z = chi(rng);
        t.u = std::normal_distribution<double>(0.0, 2.0 / std::sqrt(t.model.N))(rng);
        t.terms.V0 = 100.0;
        t.terms.F = 100.0 * (0.5 + 0.45 * U(rng));
        t.terms.mu = -0.1 + 0.4 * U(rng);
        t.terms.rho = 0.05 + 0.45 * U(rng);
        t.terms.T = 0.05 + 1.95 * U(rng);
        out.push_back(t);
    }
    return out;
}

}  // namespace ecr::test
