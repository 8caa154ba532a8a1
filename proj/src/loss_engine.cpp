#include "ecr/loss_engine.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "ecr/error.hpp"
#include "ecr/parallel.hpp"
#include "ecr/quadrature.hpp"
#include "ecr/special.hpp"

namespace ecr {

namespace {

constexpr double kTiny = 1e-300;
const double kInvSqrt2Pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);

struct Moments {
    double m0 = 0.0;
    double m1 = 0.0;
    double m2 = 0.0;
    double x1 = 0.0;  // m0 - m1, the mass-weighted asset/face ratio
};

// Per-obligor constants of the closed-form moments for a fixed model.
struct ObligorKernel {
    double log_v_over_f = 0.0;
    double drift = 0.0;          // (mu - rho^2/2) T
    double threshold = 0.0;      // ln(F/V0) - drift
    double s = 0.0;              // sqrt(T (1-c) rho^2 / N)
    double shift_scale = 0.0;    // sqrt(c T) rho

    ObligorKernel(const ObligorTerms& t, const CorrelationModel& m) {
        log_v_over_f = std::log(t.V0 / t.F);
        drift = (t.mu - 0.5 * t.rho * t.rho) * t.T;
        threshold = -log_v_over_f - drift;
        s = std::sqrt(t.T * (1.0 - m.c) * t.rho * t.rho / m.N);
        shift_scale = std::sqrt(m.c * t.T) * t.rho;
    }

    Moments at(double z, double u) const {
        const double sqrt_z = std::sqrt(z);
        const double shift = shift_scale * u;
        const double arg0 = (threshold / sqrt_z + shift) / s;
        if (arg0 < -10.0) return far_tail(arg0, sqrt_z * s);
        Moments out;
        out.m0 = normal_cdf(arg0);
        const double lx1 =
            log_v_over_f + drift - sqrt_z * shift + 0.5 * z * s * s + log_normal_cdf(arg0 - sqrt_z * s);
        const double lx2 = 2.0 * (log_v_over_f + drift - sqrt_z * shift) + 2.0 * z * s * s +
                           log_normal_cdf(arg0 - 2.0 * sqrt_z * s);
        out.x1 = std::exp(lx1);
        const double x2 = std::exp(lx2);
        out.m1 = out.m0 - out.x1;
        out.m2 = out.m0 - 2.0 * out.x1 + x2;
        return out;
    }

    double m1_slope(double z, const Moments& mo) const { return shift_scale * std::sqrt(z) * mo.x1; }

    // Default deep in the lower tail: m0 - x1 and m0 - 2 x1 + x2 cancel. With
    // t = a - x the moments are phi(a) int_0^inf (1 - e^{-sigma t})^j e^{-y t - t^2/2} dt,
    // y = -a; expanding e^{-t^2/2} leaves (2m)!/y^{2m+1} type terms whose
    // differences in y are formed with expm1.
    static Moments far_tail(double a, double sigma) {
        const double y = -a;
        const double l1 = std::log1p(sigma / y), l2 = std::log1p(2.0 * sigma / y);
        double c = 1.0 / y, s0 = 0.0, s1 = 0.0, s2 = 0.0;
        for (int m = 0; m < 200; ++m) {
            const double n = 2.0 * m + 1.0;
            const double e1 = std::expm1(-n * l1), e2 = std::expm1(-n * l2);
            s0 += c;
            s1 -= c * e1;
            s2 += c * (e2 - 2.0 * e1);
            if (std::abs(c) < 1e-18 * s0) break;
            c *= -n / (y * y);
        }
        const double phi = normal_pdf(a);
        Moments out;
        out.m0 = normal_cdf(a);
        out.m1 = phi * s1;
        out.m2 = phi * s2;
        out.x1 = out.m0 - out.m1;
        return out;
    }
};

struct MixtureState {
    double M1 = 0.0;
    double M2 = 0.0;
    double slope = 0.0;  // dM1/du
};

// Portfolio-level evaluation of (M1, M2, dM1/du); collapses to one
// obligor evaluation when the portfolio is homogeneous.
class PortfolioKernel {
public:
    PortfolioKernel(const PortfolioSpec& p, const CorrelationModel& m) : weights_(p.weights()) {
        homogeneous_ = p.is_homogeneous();
        const int count = homogeneous_ ? 1 : p.K();
        for (int k = 0; k < count; ++k) obligors_.emplace_back(p.obligor(k), m);
        inv_k_ = 1.0 / p.K();
    }

    MixtureState at(double z, double u) const {
        MixtureState st;
        if (homogeneous_) {
            const Moments mo = obligors_[0].at(z, u);
            st.M1 = mo.m1;
            st.M2 = std::max(0.0, mo.m2 - mo.m1 * mo.m1) * inv_k_;
            st.slope = obligors_[0].m1_slope(z, mo);
            return st;
        }
        for (std::size_t k = 0; k < obligors_.size(); ++k) {
            const Moments mo = obligors_[k].at(z, u);
            const double f = weights_[k];
            st.M1 += f * mo.m1;
            st.M2 += f * f * std::max(0.0, mo.m2 - mo.m1 * mo.m1);
            st.slope += f * obligors_[k].m1_slope(z, mo);
        }
        return st;
    }

private:
    std::vector<double> weights_;
    std::vector<ObligorKernel> obligors_;
    bool homogeneous_ = false;
    double inv_k_ = 1.0;
};

struct ZNode {
    double z = 0.0;
    double weight = 0.0;
};

// chi^2_N nodes: z = 2t under the generalized Laguerre weight t^{N/2-1} e^{-t}.
std::vector<ZNode> chi_square_nodes(int n, double N, double cutoff) {
    const QuadratureRule rule = gauss_laguerre(n, 0.5 * N - 1.0);
    const double norm = std::exp(std::lgamma(0.5 * N));
    std::vector<ZNode> nodes;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
        const double z = 2.0 * rule.nodes[i];
        if (z > cutoff) continue;
        nodes.push_back({z, rule.weights[i] / norm});
    }
    return nodes;
}

double factor_density(double u, double N) { return std::sqrt(N) * kInvSqrt2Pi * std::exp(-0.5 * N * u * u); }

double gaussian(double x, double mean, double var) {
    const double d = x - mean;
    return std::exp(-0.5 * d * d / var) * kInvSqrt2Pi / std::sqrt(var);
}

struct FactorNode {
    double weight = 0.0;  // z weight * factor density * trapezoid width in u
    double M1 = 0.0;
    double M2 = 0.0;
};

// Tabulates the u-integrand of one z node. Panel breakpoints are graded so
// that M1 moves by at most half the local kernel width sqrt(M2)
// across a panel; each panel carries a 3-point Gauss-Legendre rule, so one
// table resolves every L at once.
struct FactorTable {
    std::vector<FactorNode> nodes;  // M1 nondecreasing
    double max_sd = 0.0;
};

FactorTable factor_table(const PortfolioKernel& pk, const ZNode& zn, double N, double U) {
    static const double kGl[3] = {-std::sqrt(0.6), 0.0, std::sqrt(0.6)};
    static const double kGw[3] = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
    const double coarse = 0.5 / std::sqrt(N);
    const double fine = 1e-7 * U;
    FactorTable table;
    double u = -U;
    while (u < U) {
        const MixtureState st = pk.at(zn.z, u);
        const double width = (st.slope > 0.0 && st.M2 > 0.0) ? std::sqrt(st.M2) / st.slope : coarse;
        const double next = std::min(U, u + std::clamp(0.5 * width, fine, coarse));
        const double mid = 0.5 * (u + next), half = 0.5 * (next - u);
        for (int j = 0; j < 3; ++j) {
            const double x = mid + half * kGl[j];
            const MixtureState at = pk.at(zn.z, x);
            table.nodes.push_back({zn.weight * factor_density(x, N) * half * kGw[j], at.M1, at.M2});
            table.max_sd = std::max(table.max_sd, std::sqrt(at.M2));
        }
        u = next;
        if (table.nodes.size() > 6000000) fail(ErrorKind::numerical, "factor table exceeded its node budget");
    }
    return table;
}

// Root of m1(z, u) = L inside [a, b] with f(a) <= 0 <= f(b): bisection
// alternated with secant steps, to 1e-12 in u.
LimitRoot bracketed_root(const ObligorKernel& kernel, double z, double L, double a, double b, double fa, double fb) {
    if (fa == 0.0) b = a;
    if (fb == 0.0) a = b;
    for (int it = 0; it < 400 && b - a > 1e-12; ++it) {
        double x = 0.5 * (a + b);
        if (it % 2 == 1 && fb != fa) {
            const double secant = b - fb * (b - a) / (fb - fa);
            if (secant > a && secant < b) x = secant;
        }
        const double fx = kernel.at(z, x).m1 - L;
        if (fx == 0.0) {
            a = b = x;
            break;
        }
        if (fx < 0.0) {
            a = x;
            fa = fx;
        } else {
            b = x;
            fb = fx;
        }
    }
    LimitRoot root;
    root.u0 = 0.5 * (a + b);
    root.derivative = kernel.m1_slope(z, kernel.at(z, root.u0));
    return root;
}

void check_grid(const std::vector<double>& grid) {
    require(grid.size() >= 2, "loss grid needs at least two points");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        require(grid[i] >= 0.0 && grid[i] <= 1.0, "loss grid must lie in [0, 1]");
        if (i) require(grid[i] > grid[i - 1], "loss grid must be strictly ascending");
    }
}

void check_loss_model(const CorrelationModel& m) {
    m.validate();
    require(m.c >= 0.0 && m.c < 1.0, "loss engine requires c in [0, 1)");
}

Metadata base_metadata(const PortfolioSpec& p, const CorrelationModel& m, const QuadratureConfig& q,
                       const std::string& mode) {
    Metadata md;
    md.emplace_back("mode", mode);
    md.emplace_back("K", std::to_string(p.K()));
    md.emplace_back("c", format_double(m.c));
    md.emplace_back("N", format_double(m.N));
    if (p.is_homogeneous()) {
        md.emplace_back("F", format_double(p.F[0]));
        md.emplace_back("V0", format_double(p.V0[0]));
        md.emplace_back("mu", format_double(p.mu[0]));
        md.emplace_back("rho", format_double(p.rho[0]));
    } else {
        md.emplace_back("portfolio", "heterogeneous");
    }
    md.emplace_back("T", format_double(p.T));
    md.emplace_back("scheme", to_string(q.scheme));
    md.emplace_back("u_nodes", std::to_string(q.u_nodes));
    md.emplace_back("z_cutoff", format_double(q.z_cutoff));
    md.emplace_back("u_cutoff", format_double(q.u_cutoff));
    return md;
}

void finish_metadata(LossDensity& d, int z_nodes) {
    d.metadata.emplace_back("z_nodes", std::to_string(z_nodes));
    d.metadata.emplace_back("mass_below", format_double(d.mass_below));
    d.metadata.emplace_back("mass_above", format_double(d.mass_above));
    d.metadata.emplace_back("flagged", std::to_string(d.flagged));
}

// Drops a point mass onto the nearest grid point, scaled by that point's
// trapezoid weight so the grid mass grows by exactly `mass`.
void deposit_point_mass(LossDensity& d, const std::vector<double>& point_width, double at, double mass) {
    const auto& g = d.grid;
    if (at < g.front()) {
        d.mass_below += mass;
        return;
    }
    if (at > g.back()) {
        d.mass_above += mass;
        return;
    }
    const auto it = std::lower_bound(g.begin(), g.end(), at);
    std::size_t i = static_cast<std::size_t>(it - g.begin());
    if (i > 0 && (i == g.size() || at - g[i - 1] < g[i] - at)) --i;
    d.values[i] += mass / point_width[i];
    d.cell_mass[i] += mass;
}

std::vector<double> trapezoid_widths(const std::vector<double>& g) {
    std::vector<double> w(g.size(), 0.0);
    for (std::size_t i = 0; i + 1 < g.size(); ++i) {
        const double h = 0.5 * (g[i + 1] - g[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    return w;
}

std::vector<double> cell_edges(const std::vector<double>& g) {
    std::vector<double> edges(g.size() + 1);
    edges.front() = g.front();
    edges.back() = g.back();
    for (std::size_t i = 1; i < g.size(); ++i) edges[i] = 0.5 * (g[i - 1] + g[i]);
    return edges;
}

// P(a < X < b) for standard normal X, taken from the nearer tail.
double normal_interval(double a, double b) {
    if (a > 0.0) return normal_cdf(-a) - normal_cdf(-b);
    return normal_cdf(b) - normal_cdf(a);
}

// Adds the normal mixture sum_n w_n N(L; M1_n, M2_n) to the grid. Components
// narrower than the grid spacing are integrated over each point's
// trapezoid cell instead of being sampled, so mass is conserved.
void accumulate_mixture(LossDensity& d, const std::vector<FactorTable>& tables, int threads) {
    const auto& grid = d.grid;
    const auto widths = trapezoid_widths(grid);
    double spacing = 0.0;
    for (std::size_t i = 0; i + 1 < grid.size(); ++i) spacing = std::max(spacing, grid[i + 1] - grid[i]);
    const double narrow = 2.0 * spacing;
    const auto edges = cell_edges(grid);

    for (const FactorTable& table : tables) {
        for (const FactorNode& n : table.nodes) {
            if (n.M2 <= kTiny) {
                deposit_point_mass(d, widths, n.M1, n.weight);
                ++d.flagged;
                continue;
            }
            const double sd = std::sqrt(n.M2);
            d.mass_below += n.weight * normal_cdf((grid.front() - n.M1) / sd);
            d.mass_above += n.weight * normal_cdf((n.M1 - grid.back()) / sd);
            if (sd >= narrow) continue;
            auto first = std::upper_bound(edges.begin(), edges.end(), n.M1 - 10.0 * sd);
            std::size_t i = first == edges.begin() ? 0 : static_cast<std::size_t>(first - edges.begin()) - 1;
            for (; i < grid.size() && edges[i] <= n.M1 + 10.0 * sd; ++i) {
                const double mass = n.weight * normal_interval((edges[i] - n.M1) / sd, (edges[i + 1] - n.M1) / sd);
                d.values[i] += mass / widths[i];
                d.cell_mass[i] += mass;
            }
        }
    }
    // Wide components: sampled density at the points, and survival
    // probabilities at the cell edges (nodes above the window count whole).
    std::vector<std::vector<double>> above_weight(tables.size());
    for (std::size_t t = 0; t < tables.size(); ++t) {
        const auto& nodes = tables[t].nodes;
        auto& acc = above_weight[t];
        acc.assign(nodes.size() + 1, 0.0);
        for (std::size_t k = nodes.size(); k-- > 0;)
            acc[k] = acc[k + 1] + (nodes[k].M2 >= narrow * narrow ? nodes[k].weight : 0.0);
    }
    auto window = [&](const FactorTable& table, double L) {
        const double reach = 10.0 * table.max_sd;
        auto by_mean = [](const FactorNode& n, double v) { return n.M1 < v; };
        const auto lo = std::lower_bound(table.nodes.begin(), table.nodes.end(), L - reach, by_mean);
        const auto hi = std::lower_bound(lo, table.nodes.end(), std::nextafter(L + reach, 2.0), by_mean);
        return std::pair{lo, hi};
    };
    std::vector<double> survival(edges.size());
    parallel_for(edges.size(), threads, [&](std::size_t j) {
        double sum = 0.0;
        for (std::size_t t = 0; t < tables.size(); ++t) {
            const auto [lo, hi] = window(tables[t], edges[j]);
            for (auto it = lo; it != hi; ++it)
                if (it->M2 >= narrow * narrow) sum += it->weight * normal_cdf((it->M1 - edges[j]) / std::sqrt(it->M2));
            sum += above_weight[t][static_cast<std::size_t>(hi - tables[t].nodes.begin())];
        }
        survival[j] = sum;
    });
    parallel_for(grid.size(), threads, [&](std::size_t i) {
        double sum = 0.0;
        for (const FactorTable& table : tables) {
            const auto [lo, hi] = window(table, grid[i]);
            for (auto it = lo; it != hi; ++it)
                if (it->M2 >= narrow * narrow) sum += it->weight * gaussian(grid[i], it->M1, it->M2);
        }
        d.values[i] += sum;
        d.cell_mass[i] += survival[i] - survival[i + 1];
    });
}

LossDensity finite_density(const std::vector<double>& grid, const PortfolioKernel& pk,
                           const std::vector<ZNode>& znodes, const CorrelationModel& m, const QuadratureConfig& q) {
    std::vector<FactorTable> tables(znodes.size());
    if (m.c == 0.0) {
        // u-free integrand: one node per z
        for (std::size_t i = 0; i < znodes.size(); ++i) {
            const MixtureState st = pk.at(znodes[i].z, 0.0);
            tables[i].nodes.push_back({znodes[i].weight, st.M1, st.M2});
            tables[i].max_sd = std::sqrt(st.M2);
        }
    } else if (q.scheme == QuadratureScheme::gauss_laguerre_hermite) {
        const QuadratureRule gh = gauss_hermite(q.u_nodes);
        const double scale = std::sqrt(2.0 / m.N);
        for (std::size_t i = 0; i < znodes.size(); ++i) {
            for (std::size_t j = 0; j < gh.nodes.size(); ++j) {
                const MixtureState st = pk.at(znodes[i].z, scale * gh.nodes[j]);
                const double w = znodes[i].weight * gh.weights[j] / std::sqrt(std::numbers::pi);
                tables[i].nodes.push_back({w, st.M1, st.M2});
                tables[i].max_sd = std::max(tables[i].max_sd, std::sqrt(st.M2));
            }
        }
    } else {
        const double U = q.u_cutoff / std::sqrt(m.N);
        parallel_for(znodes.size(), q.threads, [&](std::size_t i) { tables[i] = factor_table(pk, znodes[i], m.N, U); });
    }
    LossDensity d;
    d.grid = grid;
    d.values.assign(grid.size(), 0.0);
    d.cell_mass.assign(grid.size(), 0.0);
    accumulate_mixture(d, tables, q.threads);
    return d;
}

// Quantile with linear interpolation inside the grid cell; finer than the
// grid-snapped VaR, used only to judge quadrature convergence.
std::optional<double> smooth_quantile(const LossDensity& d, double alpha) {
    const auto masses = d.point_masses();
    double run = d.mass_below;
    for (std::size_t i = 0; i < masses.size(); ++i) {
        const double next = run + masses[i];
        if (next >= alpha) {
            const double frac = masses[i] > 0.0 ? (alpha - run) / masses[i] : 0.0;
            const double lo = i > 0 ? 0.5 * (d.grid[i - 1] + d.grid[i]) : d.grid[i];
            const double hi = i + 1 < d.grid.size() ? 0.5 * (d.grid[i] + d.grid[i + 1]) : d.grid[i];
            return lo + frac * (hi - lo);
        }
        run = next;
    }
    return std::nullopt;
}

// Relative shift of the 0.999 quantile between two refinements, or the
// relative sup-norm change when that tail is not resolvable on the grid.
double refinement_change(const LossDensity& coarse, const LossDensity& fine) {
    const auto a = smooth_quantile(coarse, 0.999);
    const auto b = smooth_quantile(fine, 0.999);
    if (a && b) return std::abs(*a - *b) / std::max(*b, 1e-300);
    double peak = 0.0, diff = 0.0;
    for (std::size_t i = 0; i < fine.values.size(); ++i) {
        peak = std::max(peak, fine.values[i]);
        diff = std::max(diff, std::abs(fine.values[i] - coarse.values[i]));
    }
    return diff / std::max(peak, 1e-300);
}

template <class Evaluate>
LossDensity with_refinement(const QuadratureConfig& q, Evaluate&& evaluate, int* nodes_used) {
    int n = q.z_nodes;
    LossDensity d = evaluate(n);
    if (q.scheme == QuadratureScheme::adaptive) {
        for (int round = 0; round < 3; ++round) {
            LossDensity finer = evaluate(2 * n);
            const double change = refinement_change(d, finer);
            d = std::move(finer);
            n *= 2;
            if (change < 1e-3) break;
        }
    }
    *nodes_used = n;
    return d;
}

}  // namespace

void ObligorTerms::validate() const {
    require(F > 0.0 && std::isfinite(F), "face value F must be positive");
    require(V0 > 0.0 && std::isfinite(V0), "initial asset value V0 must be positive");
    require(std::isfinite(mu), "drift mu must be finite");
    require(rho > 0.0 && std::isfinite(rho), "volatility rho must be positive");
    require(T > 0.0 && std::isfinite(T), "maturity T must be positive");
}

PortfolioSpec PortfolioSpec::homogeneous(int K, const ObligorTerms& terms) {
    require(K >= 1, "portfolio size K must be positive");
    terms.validate();
    PortfolioSpec p;
    p.F.assign(K, terms.F);
    p.V0.assign(K, terms.V0);
    p.mu.assign(K, terms.mu);
    p.rho.assign(K, terms.rho);
    p.T = terms.T;
    return p;
}

void PortfolioSpec::validate() const {
    require(!F.empty(), "portfolio must contain at least one obligor");
    require(V0.size() == F.size() && mu.size() == F.size() && rho.size() == F.size(),
            "portfolio vectors must all have length K");
    for (int k = 0; k < K(); ++k) obligor(k).validate();
}

std::vector<double> PortfolioSpec::weights() const {
    double total = 0.0;
    for (double f : F) total += f;
    std::vector<double> w(F.size());
    for (std::size_t k = 0; k < F.size(); ++k) w[k] = F[k] / total;
    double sum = 0.0;
    for (double x : w) sum += x;
    for (double& x : w) x /= sum;
    return w;
}

bool PortfolioSpec::is_homogeneous() const {
    for (int k = 1; k < K(); ++k)
        if (F[k] != F[0] || V0[k] != V0[0] || mu[k] != mu[0] || rho[k] != rho[0]) return false;
    return true;
}

void QuadratureConfig::validate() const {
    require(z_nodes >= 8 && u_nodes >= 8, "quadrature node counts must be at least 8");
    require(z_cutoff > 0.0 && u_cutoff > 0.0, "quadrature cutoffs must be positive");
}

std::string to_string(QuadratureScheme scheme) {
    return scheme == QuadratureScheme::adaptive ? "adaptive" : "gauss_laguerre_hermite";
}

QuadratureScheme parse_quadrature_scheme(const std::string& name) {
    if (name == "adaptive") return QuadratureScheme::adaptive;
    if (name == "gauss_laguerre_hermite") return QuadratureScheme::gauss_laguerre_hermite;
    fail(ErrorKind::validation, "unknown quadrature scheme '" + name + "'");
}

std::vector<double> LossDensity::point_masses() const {
    if (cell_mass.size() == grid.size()) return cell_mass;
    const auto w = trapezoid_widths(grid);
    std::vector<double> out(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) out[i] = w[i] * values[i];
    return out;
}

double LossDensity::grid_mass() const {
    double sum = 0.0;
    for (double m : point_masses()) sum += m;
    return sum;
}

bool LossDensity::normalized() const {
    for (double v : values)
        if (!(v >= 0.0)) return false;
    const double mass = total_mass();
    return mass >= 0.98 && mass <= 1.02;
}

std::string LossDensity::meta(const std::string& key) const {
    for (const auto& [k, v] : metadata)
        if (k == key) return v;
    return {};
}

std::vector<double> uniform_loss_grid(int points, double lo, double hi) {
    require(points >= 2, "loss grid needs at least two points");
    require(lo >= 0.0 && hi <= 1.0 && lo < hi, "loss grid bounds must satisfy 0 <= lo < hi <= 1");
    std::vector<double> g(points);
    for (int i = 0; i < points; ++i) g[i] = lo + (hi - lo) * i / (points - 1);
    g.back() = hi;
    return g;
}

double hat_F(const ObligorTerms& t, double z) {
    require(z > 0.0, "hat_F: z must be positive");
    return (std::log(t.F / t.V0) - (t.mu - 0.5 * t.rho * t.rho) * t.T) / std::sqrt(z);
}

double hat_F(int k, double z, const PortfolioSpec& p) {
    require(k >= 0 && k < p.K(), "hat_F: obligor index out of range");
    return hat_F(p.obligor(k), z);
}

double moment_numeric(int j, int k, double z, double u, const PortfolioSpec& p, const CorrelationModel& m) {
    require(j >= 0 && j <= 2, "moment order must be 0, 1 or 2");
    require(k >= 0 && k < p.K(), "obligor index out of range");
    require(z > 0.0, "z must be positive");
    check_loss_model(m);
    const ObligorTerms t = p.obligor(k);
    t.validate();
    const double upper = hat_F(t, z);
    const double mean = -std::sqrt(m.c * t.T) * u * t.rho;
    const double sd = std::sqrt(t.T * (1.0 - m.c) * t.rho * t.rho / m.N);
    const double drift = (t.mu - 0.5 * t.rho * t.rho) * t.T;
    const double ratio = t.V0 / t.F;
    const double sqrt_z = std::sqrt(z);
    // integrate over the standardized variable x = (V_hat - mean) / sd
    const double x_max = std::min((upper - mean) / sd, 40.0);
    if (x_max <= -40.0) return 0.0;
    auto integrand = [&](double x) {
        const double v = mean + sd * x;
        const double loss = 1.0 - ratio * std::exp(sqrt_z * v + drift);
        return std::pow(loss, j) * normal_pdf(x);
    };
    std::vector<double> cuts{-40.0};
    for (double b : {-8.0, -3.0, 0.0, 3.0, 8.0})
        if (b > -40.0 && b < x_max) cuts.push_back(b);
    cuts.push_back(x_max);
    double value = 0.0, error = 0.0, l1 = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        const AdaptiveResult r = integrate_adaptive(integrand, cuts[i], cuts[i + 1], 1e-14, 20);
        value += r.value;
        error += r.error;
        l1 += std::abs(r.value);
    }
    if (error > 1e-10 * std::max(l1, 1e-300) && error > 1e-300)
        fail(ErrorKind::numerical, "moment quadrature did not converge; error estimate " + format_double(error));
    return value;
}

double moment_closed_form(int j, double z, double u, const ObligorTerms& terms, const CorrelationModel& m) {
    require(j >= 0 && j <= 2, "moment order must be 0, 1 or 2");
    require(z > 0.0, "z must be positive");
    check_loss_model(m);
    terms.validate();
    const Moments mo = ObligorKernel(terms, m).at(z, u);
    return j == 0 ? mo.m0 : (j == 1 ? mo.m1 : mo.m2);
}

double moment1_u_derivative(double z, double u, const ObligorTerms& terms, const CorrelationModel& m) {
    require(z > 0.0, "z must be positive");
    check_loss_model(m);
    terms.validate();
    const ObligorKernel kernel(terms, m);
    return kernel.m1_slope(z, kernel.at(z, u));
}

BigM big_M(double z, double u, const PortfolioSpec& p, const CorrelationModel& m) {
    require(z > 0.0, "z must be positive");
    p.validate();
    check_loss_model(m);
    const MixtureState st = PortfolioKernel(p, m).at(z, u);
    return {st.M1, st.M2};
}

LossDensity avg_loss_density(const std::vector<double>& grid, const PortfolioSpec& p, const CorrelationModel& m,
                             const QuadratureConfig& q) {
    check_grid(grid);
    p.validate();
    check_loss_model(m);
    q.validate();
    const PortfolioKernel pk(p, m);
    int used = q.z_nodes;
    LossDensity d = with_refinement(
        q,
        [&](int n) {
            const auto znodes = chi_square_nodes(n, m.N, q.z_cutoff);
            return finite_density(grid, pk, znodes, m, q);
        },
        &used);
    d.metadata = base_metadata(p, m, q, "finite");
    finish_metadata(d, used);
    return d;
}

std::optional<LimitRoot> solve_limit_root(double L, double z, const ObligorTerms& terms, const CorrelationModel& m) {
    check_loss_model(m);
    require(m.c > 0.0, "limit root requires c > 0");
    require(z > 0.0, "z must be positive");
    if (!(L > 0.0 && L < 1.0)) return std::nullopt;
    const ObligorKernel kernel(terms, m);
    double bound = 10.0 / std::sqrt(m.N);
    double fa = kernel.at(z, -bound).m1 - L;
    double fb = kernel.at(z, bound).m1 - L;
    for (int i = 0; i < 60 && !(fa <= 0.0 && fb >= 0.0); ++i) {
        bound *= 2.0;
        fa = kernel.at(z, -bound).m1 - L;
        fb = kernel.at(z, bound).m1 - L;
    }
    if (!(fa <= 0.0 && fb >= 0.0)) return std::nullopt;
    return bracketed_root(kernel, z, L, -bound, bound, fa, fb);
}

namespace {

// m1(z, .) on a fixed u grid, used to bracket roots. Also verifies that
// m1 is nondecreasing in u so the root u0(L, z) is unique.
struct LimitTable {
    std::vector<double> u;
    std::vector<double> m1;
};

LimitTable limit_table(const ObligorKernel& kernel, double z, double N) {
    const double bound = 10.0 / std::sqrt(N);
    constexpr int kPoints = 257;
    LimitTable t;
    t.u.resize(kPoints);
    t.m1.resize(kPoints);
    for (int i = 0; i < kPoints; ++i) {
        t.u[i] = -bound + 2.0 * bound * i / (kPoints - 1);
        t.m1[i] = kernel.at(z, t.u[i]).m1;
        if (i > 0 && t.m1[i] < t.m1[i - 1] - 1e-13)
            fail(ErrorKind::numerical, "m1(z, u) is not monotone in u; the root u0(L, z) is not unique");
    }
    return t;
}

LossDensity limit_density_uncorrelated(const std::vector<double>& grid, const ObligorTerms& t,
                                       const CorrelationModel& m) {
    // c = 0: L = m1(z) is deterministic given z and increasing in z.
    const ObligorKernel kernel(t, m);
    const boost::math::chi_squared_distribution<double> chi(m.N);
    auto m1 = [&](double z) { return kernel.at(z, 0.0).m1; };
    const double z_lo = 1e-10;
    const double z_hi = boost::math::quantile(boost::math::complement(chi, 1e-16));
    auto root = [&](double L) -> std::optional<double> {
        if (!(L > m1(z_lo) && L < m1(z_hi))) return std::nullopt;
        double a = z_lo, b = z_hi;
        for (int it = 0; it < 200 && b - a > 1e-13 * b; ++it) {
            const double x = 0.5 * (a + b);
            (m1(x) < L ? a : b) = x;
        }
        return 0.5 * (a + b);
    };
    LossDensity d;
    d.grid = grid;
    d.values.assign(grid.size(), 0.0);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto z0 = root(grid[i]);
        if (!z0) continue;
        const double h = 1e-6 * *z0;
        const double slope = (m1(*z0 + h) - m1(*z0 - h)) / (2.0 * h);
        if (slope <= kTiny) {
            ++d.flagged;
            continue;
        }
        d.values[i] = boost::math::pdf(chi, *z0) / slope;
    }
    auto cdf_at = [&](double L) {
        if (L <= m1(z_lo)) return 0.0;
        if (L >= m1(z_hi)) return 1.0;
        return boost::math::cdf(chi, *root(L));
    };
    d.mass_below = cdf_at(grid.front());
    d.mass_above = 1.0 - cdf_at(grid.back());
    const auto edges = cell_edges(grid);
    d.cell_mass.resize(grid.size());
    double lower = d.mass_below;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double upper = cdf_at(edges[i + 1]);
        d.cell_mass[i] = upper - lower;
        lower = upper;
    }
    return d;
}

LossDensity limit_density_correlated(const std::vector<double>& grid, const ObligorTerms& t,
                                     const CorrelationModel& m, const std::vector<ZNode>& znodes, int threads) {
    const ObligorKernel kernel(t, m);
    std::vector<LimitTable> tables(znodes.size());
    parallel_for(znodes.size(), threads, [&](std::size_t j) { tables[j] = limit_table(kernel, znodes[j].z, m.N); });
    auto root_at = [&](double L, std::size_t j) -> std::optional<LimitRoot> {
        const LimitTable& tab = tables[j];
        if (!(L > 0.0 && L < 1.0)) return std::nullopt;
        if (L < tab.m1.front() || L > tab.m1.back()) return solve_limit_root(L, znodes[j].z, t, m);
        auto hi = static_cast<std::size_t>(std::lower_bound(tab.m1.begin(), tab.m1.end(), L) - tab.m1.begin());
        const std::size_t lo = hi == 0 ? 0 : hi - 1;
        return bracketed_root(kernel, znodes[j].z, L, tab.u[lo], tab.u[hi], tab.m1[lo] - L, tab.m1[hi] - L);
    };
    LossDensity d;
    d.grid = grid;
    d.values.assign(grid.size(), 0.0);
    std::vector<int> flags(grid.size(), 0);
    parallel_for(grid.size(), threads, [&](std::size_t i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < znodes.size(); ++j) {
            const auto root = root_at(grid[i], j);
            if (!root) continue;
            if (root->derivative < kTiny) {
                ++flags[i];
                continue;
            }
            sum += znodes[j].weight * factor_density(root->u0, m.N) / root->derivative;
        }
        d.values[i] = sum;
    });
    for (int f : flags) d.flagged += f;
    // P(m1 < L) = P(u < u0(L)), summed over z
    const double sqrt_n = std::sqrt(m.N);
    auto cdf_at = [&](double L) {
        if (L <= 0.0) return 0.0;
        if (L >= 1.0) return 1.0;
        double sum = 0.0;
        for (std::size_t j = 0; j < znodes.size(); ++j) {
            const auto root = root_at(L, j);
            if (root) {
                sum += znodes[j].weight * normal_cdf(sqrt_n * root->u0);
            } else if (kernel.at(znodes[j].z, 0.0).m1 < L) {
                sum += znodes[j].weight;
            }
        }
        return sum;
    };
    const auto edges = cell_edges(grid);
    std::vector<double> cdf(edges.size());
    parallel_for(edges.size(), threads, [&](std::size_t i) { cdf[i] = cdf_at(edges[i]); });
    d.mass_below = cdf.front();
    d.mass_above = 1.0 - cdf.back();
    d.cell_mass.resize(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) d.cell_mass[i] = cdf[i + 1] - cdf[i];
    // the limit law is singular at L = 0; report the first cell's mean density there
    if (grid.front() <= 0.0) d.values[0] = d.cell_mass[0] / (edges[1] - edges[0]);
    return d;
}

}  // namespace

LossDensity avg_loss_density_limit(const std::vector<double>& grid, const ObligorTerms& terms,
                                   const CorrelationModel& m, const QuadratureConfig& q) {
    check_grid(grid);
    terms.validate();
    check_loss_model(m);
    q.validate();
    int used = q.z_nodes;
    LossDensity d;
    if (m.c == 0.0) {
        d = limit_density_uncorrelated(grid, terms, m);
    } else {
        d = with_refinement(
            q,
            [&](int n) {
                return limit_density_correlated(grid, terms, m, chi_square_nodes(n, m.N, q.z_cutoff), q.threads);
            },
            &used);
    }
    CorrelationModel meta_model = m;
    d.metadata = base_metadata(PortfolioSpec::homogeneous(1, terms), meta_model, q, "limit");
    d.metadata[1].second = "inf";
    finish_metadata(d, used);
    return d;
}

RiskPair var_etl_from_density(const LossDensity& d, double alpha) {
    require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    require(d.grid.size() == d.values.size() && !d.grid.empty(), "loss density grid and values differ in length");
    const auto masses = d.point_masses();
    // Accumulated from the top so that integration error near the spike at
    // small losses cannot shift the tail quantiles.
    std::vector<double> cdf(masses.size());
    double above = d.mass_above;
    for (std::size_t i = masses.size(); i-- > 0;) {
        cdf[i] = 1.0 - above;
        above += masses[i];
    }
    if (cdf.back() < alpha - 1e-12)
        fail(ErrorKind::validation, "alpha " + format_double(alpha) + " exceeds the maximum resolvable level " +
                                        format_double(cdf.back()) + " of this density");
    std::size_t idx = 0;
    while (cdf[idx] < alpha - 1e-12) ++idx;
    double tail_mass = 0.0, tail_moment = 0.0;
    for (std::size_t i = idx; i < masses.size(); ++i) {
        tail_mass += masses[i];
        tail_moment += masses[i] * d.grid[i];
    }
    RiskPair out;
    out.var = d.grid[idx];
    out.etl = tail_mass > 0.0 ? std::max(out.var, tail_moment / tail_mass) : out.var;
    return out;
}

void write_loss_density_csv(const LossDensity& d, const std::string& path) {
    CsvTable table;
    table.metadata = d.metadata;
    table.columns = {"L", "density"};
    table.rows.reserve(d.grid.size());
    for (std::size_t i = 0; i < d.grid.size(); ++i) table.rows.push_back({d.grid[i], d.values[i]});
    write_csv_table(table, path);
}

LossDensity read_loss_density_csv(const std::string& path) {
    const CsvTable table = read_csv_table(path);
    if (table.columns.size() != 2 || table.columns[0] != "L" || table.columns[1] != "density")
        fail(ErrorKind::parse, path + ": expected columns L,density");
    LossDensity d;
    d.metadata = table.metadata;
    for (const auto& row : table.rows) {
        d.grid.push_back(row[0]);
        d.values.push_back(row[1]);
    }
    auto number = [&](const std::string& key) {
        const std::string v = table.meta(key);
        return v.empty() ? 0.0 : std::stod(v);
    };
    d.mass_below = number("mass_below");
    d.mass_above = number("mass_above");
    d.flagged = static_cast<int>(number("flagged"));
    // histogram bins carry their full width; the trapezoid would halve the end bins
    if (table.meta("grid") == "bin_centres" && d.grid.size() >= 2) {
        const double width = (d.grid.back() - d.grid.front()) / static_cast<double>(d.grid.size() - 1);
        for (double v : d.values) d.cell_mass.push_back(v * width);
    }
    return d;
}

}  // namespace ecr
