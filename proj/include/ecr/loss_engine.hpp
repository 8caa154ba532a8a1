#pragma once

// Average loss distribution of a Merton credit portfolio whose asset
// correlations fluctuate around a homogeneous level c with strength N.
//
// Conditional on the chi-square variable z and the common factor u, each
// obligor's normalized loss has moments m_jk(z, u); the portfolio loss is
// approximated as normal with mean M1 and variance M2, and the density is
// the (z, u) average of that normal. For K -> inf the normal collapses to
// a point mass at m1(z, u).

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ecr/csv_table.hpp"
#include "ecr/ensemble_dist.hpp"

namespace ecr {

/// Contract and asset terms of a single obligor, plus maturity. A
/// homogeneous portfolio is K copies of one of these.
struct ObligorTerms {
    double F = 75.0;    // face value
    double V0 = 100.0;  // initial asset value
    double mu = 0.0;    // drift, 1/time
    double rho = 0.2;   // volatility, 1/sqrt(time)
    double T = 1.0;     // maturity

    void validate() const;
};

struct PortfolioSpec {
    std::vector<double> F;
    std::vector<double> V0;
    std::vector<double> mu;
    std::vector<double> rho;
    double T = 1.0;

    static PortfolioSpec homogeneous(int K, const ObligorTerms& terms);

    int K() const { return static_cast<int>(F.size()); }
    void validate() const;
    /// Face-value weights f_k = F_k / sum F, renormalized to sum to one.
    std::vector<double> weights() const;
    ObligorTerms obligor(int k) const { return {F[k], V0[k], mu[k], rho[k], T}; }
    /// True when every obligor carries identical terms.
    bool is_homogeneous() const;
};

enum class QuadratureScheme {
    gauss_laguerre_hermite,  // fixed tensor rule in (z, u)
    adaptive,                // Laguerre in z, graded Gauss-Legendre panels in u, z-node doubling
};

struct QuadratureConfig {
    int z_nodes = 64;
    int u_nodes = 64;
    double z_cutoff = 1e4;  // nodes with z beyond this are dropped
    double u_cutoff = 8.0;  // u range in units of the factor standard deviation 1/sqrt(N)
    QuadratureScheme scheme = QuadratureScheme::adaptive;
    int threads = 0;  // 0 = hardware concurrency; never changes results

    void validate() const;
};

std::string to_string(QuadratureScheme scheme);
QuadratureScheme parse_quadrature_scheme(const std::string& name);

/// Tabulated loss density on an ascending grid in [0, 1].
struct LossDensity {
    std::vector<double> grid;
    std::vector<double> values;
    double mass_below = 0.0;  // probability below grid.front()
    double mass_above = 0.0;  // probability above grid.back()
    int flagged = 0;          // point-mass substitutions during evaluation
    /// Probability of each point's cell (edges at the midpoints between
    /// points) when the evaluator knows it exactly; empty otherwise.
    std::vector<double> cell_mass;
    Metadata metadata;

    /// Mass carried by each grid point: cell_mass when present, otherwise
    /// trapezoid weight times density.
    std::vector<double> point_masses() const;
    double grid_mass() const;
    double total_mass() const { return mass_below + grid_mass() + mass_above; }
    /// Grid integral plus the reported off-grid mass stays within [0.98, 1.02]
    /// and values are nonnegative.
    bool normalized() const;
    std::string meta(const std::string& key) const;
};

/// Uniform grid of `points` losses on [lo, hi].
std::vector<double> uniform_loss_grid(int points = 2000, double lo = 0.0, double hi = 1.0);

/// Integration bound (ln(F/V0) - (mu - rho^2/2) T) / sqrt(z).
double hat_F(const ObligorTerms& terms, double z);
double hat_F(int k, double z, const PortfolioSpec& p);

/// j-th conditional loss moment of obligor k by adaptive quadrature of
/// its defining integral. Throws ErrorKind::numerical if the quadrature
/// misses its tolerance.
double moment_numeric(int j, int k, double z, double u, const PortfolioSpec& p, const CorrelationModel& m);

/// Closed forms for m_0, m_1, m_2 in terms of Phi, exponentials in log space.
double moment_closed_form(int j, double z, double u, const ObligorTerms& terms, const CorrelationModel& m);

/// d m_1 / d u, which equals sqrt(c T z) rho (m_0 - m_1).
double moment1_u_derivative(double z, double u, const ObligorTerms& terms, const CorrelationModel& m);

struct BigM {
    double M1 = 0.0;
    double M2 = 0.0;
};

/// M1 = sum f_k m_1k, M2 = sum f_k^2 (m_2k - m_1k^2).
BigM big_M(double z, double u, const PortfolioSpec& p, const CorrelationModel& m);

/// Average loss density for a finite portfolio.
LossDensity avg_loss_density(const std::vector<double>& grid, const PortfolioSpec& p, const CorrelationModel& m,
                             const QuadratureConfig& q = {});

/// K -> inf limit density of a homogeneous portfolio.
LossDensity avg_loss_density_limit(const std::vector<double>& grid, const ObligorTerms& terms,
                                   const CorrelationModel& m, const QuadratureConfig& q = {});

/// Root u0 of m1(z, u0) = L for c in (0, 1); nullopt when L is not attainable.
struct LimitRoot {
    double u0 = 0.0;
    double derivative = 0.0;  // d m1 / du at u0
};
std::optional<LimitRoot> solve_limit_root(double L, double z, const ObligorTerms& terms, const CorrelationModel& m);

struct RiskPair {
    double var = 0.0;
    double etl = 0.0;
};

/// VaR is the smallest grid loss whose cumulative mass reaches alpha, with
/// the cumulative mass taken as one minus the mass above the point; ETL is
/// the mean loss over the grid points at or above VaR.
RiskPair var_etl_from_density(const LossDensity& d, double alpha);

/// `# key=value` header lines, then `L,density` rows at 17 significant digits.
void write_loss_density_csv(const LossDensity& d, const std::string& path);
LossDensity read_loss_density_csv(const std::string& path);

}  // namespace ecr
