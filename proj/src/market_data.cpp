#include "ecr/market_data.hpp"

#include <Eigen/Eigenvalues>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "ecr/csv_table.hpp"
#include "ecr/error.hpp"
#include "ecr/parallel.hpp"
#include "ecr/quadrature.hpp"

namespace ecr {

namespace {

std::string trim(std::string s) {
    const auto issp = [](unsigned char ch) { return std::isspace(ch) != 0; };
    while (!s.empty() && issp(static_cast<unsigned char>(s.back()))) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && issp(static_cast<unsigned char>(s[i]))) ++i;
    return s.substr(i);
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(trim(field));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

bool iso_date(const std::string& s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
    int y = 0;
    unsigned m = 0, d = 0;
    auto ok = [&](int from, int len, auto& out) {
        const auto r = std::from_chars(s.data() + from, s.data() + from + len, out);
        return r.ec == std::errc() && r.ptr == s.data() + from + len;
    };
    if (!ok(0, 4, y) || !ok(5, 2, m) || !ok(8, 2, d)) return false;
    return std::chrono::year_month_day{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}}.ok();
}

bool missing_field(const std::string& s) { return s.empty() || s == "NA" || s == "nan" || s == "NaN"; }

double quantile_sorted(const std::vector<double>& sorted, double p) {
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto i = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i);
    if (i + 1 >= sorted.size()) return sorted.back();
    return sorted[i] + frac * (sorted[i + 1] - sorted[i]);
}

void check_sample(const std::vector<double>& sample) {
    require(sample.size() >= 1000, "N fit needs at least 1000 standardized values");
    for (double x : sample) require(std::isfinite(x), "standardized sample contains a non-finite value");
}

template <class Objective>
NFit scan_grid(const std::vector<double>& grid, FitMethod method, Objective&& objective) {
    require(!grid.empty(), "N grid is empty");
    for (double n : grid) require(n > 0.0 && std::isfinite(n), "N grid values must be positive");
    const double lo = *std::min_element(grid.begin(), grid.end());
    const double hi = *std::max_element(grid.begin(), grid.end());
    NFit best;
    best.method = method;
    best.diagnostic = std::numeric_limits<double>::infinity();
    auto visit = [&](double N) {
        const double v = objective(N);
        if (v < best.diagnostic) {
            best.diagnostic = v;
            best.N_hat = N;
        }
    };
    for (double N : grid) visit(N);
    const double centre = best.N_hat;
    for (int i = -9; i <= 9; ++i) {
        const double N = centre + 0.1 * i;
        if (i != 0 && N >= lo && N <= hi) visit(N);
    }
    if (!std::isfinite(best.diagnostic)) fail(ErrorKind::numerical, "N fit objective is not finite on the grid");
    best.boundary = best.N_hat <= lo + 1e-12 || best.N_hat >= hi - 1e-12;
    return best;
}

}  // namespace

IngestResult ingest_prices(const std::string& path, double missing_threshold) {
    require(missing_threshold >= 0.0 && missing_threshold < 1.0, "missing-data threshold must lie in [0, 1)");
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open price file '" + path + "'");
    std::string line;
    int line_no = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (!trim(line).empty()) {
            header = split(line);
            break;
        }
    }
    if (header.empty()) fail(ErrorKind::parse, path + ": empty file");
    if (header[0] != "date" || header.size() < 2)
        fail(ErrorKind::parse, path + ": header must be 'date' followed by at least one ticker");
    const std::size_t K = header.size() - 1;
    std::vector<std::string> dates;
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split(line);
        const std::string where = path + ":" + std::to_string(line_no) + ": ";
        if (fields.size() != header.size())
            fail(ErrorKind::parse, where + "expected " + std::to_string(header.size()) + " fields, found " +
                                       std::to_string(fields.size()));
        if (!iso_date(fields[0])) fail(ErrorKind::parse, where + "'" + fields[0] + "' is not an ISO-8601 date");
        if (!dates.empty() && fields[0] <= dates.back())
            fail(ErrorKind::non_monotone_dates, where + "date " + fields[0] + " does not follow " + dates.back());
        std::vector<double> row(K);
        for (std::size_t k = 0; k < K; ++k) {
            const std::string& f = fields[k + 1];
            if (missing_field(f)) {
                row[k] = std::numeric_limits<double>::quiet_NaN();
                continue;
            }
            double v = 0.0;
            const auto r = std::from_chars(f.data(), f.data() + f.size(), v);
            if (r.ec != std::errc() || r.ptr != f.data() + f.size())
                fail(ErrorKind::parse, where + "cannot parse '" + f + "' for " + header[k + 1]);
            if (!(v > 0.0) || !std::isfinite(v))
                fail(ErrorKind::non_positive_price,
                     where + "price " + f + " for " + header[k + 1] + " on " + fields[0] + " is not positive");
            row[k] = v;
        }
        dates.push_back(fields[0]);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) fail(ErrorKind::parse, path + ": no price rows");

    IngestResult out;
    std::vector<std::size_t> kept;
    for (std::size_t k = 0; k < K; ++k) {
        std::size_t missing = 0;
        for (const auto& row : rows) missing += std::isnan(row[k]) ? 1 : 0;
        if (static_cast<double>(missing) > missing_threshold * static_cast<double>(rows.size())) {
            out.dropped.push_back(header[k + 1]);
        } else {
            kept.push_back(k);
        }
    }
    std::vector<std::size_t> days;
    for (std::size_t t = 0; t < rows.size(); ++t) {
        bool complete = true;
        for (std::size_t k : kept) complete = complete && !std::isnan(rows[t][k]);
        if (complete) days.push_back(t);
    }
    out.dropped_days = static_cast<int>(rows.size() - days.size());
    PricePanel& p = out.panel;
    for (std::size_t k : kept) p.tickers.push_back(header[k + 1]);
    p.prices.resize(static_cast<Eigen::Index>(kept.size()), static_cast<Eigen::Index>(days.size()));
    for (std::size_t j = 0; j < days.size(); ++j) {
        p.dates.push_back(dates[days[j]]);
        for (std::size_t i = 0; i < kept.size(); ++i)
            p.prices(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[days[j]][kept[i]];
    }
    return out;
}

void export_prices(const PricePanel& panel, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::io, "cannot write price file '" + path + "'");
    out << "date";
    for (const auto& t : panel.tickers) out << ',' << t;
    out << '\n';
    for (int j = 0; j < panel.M(); ++j) {
        out << panel.dates[j];
        for (int k = 0; k < panel.K(); ++k) out << ',' << format_double(panel.prices(k, j));
        out << '\n';
    }
    if (!out) fail(ErrorKind::io, "failed writing price file '" + path + "'");
}

ReturnPanel compute_returns(const PricePanel& p, int dt) {
    require(dt >= 1, "return interval must be a positive number of days");
    require(dt < p.M(), "return interval " + std::to_string(dt) + " needs more than " + std::to_string(dt) +
                            " price days, panel has " + std::to_string(p.M()));
    ReturnPanel r;
    r.tickers = p.tickers;
    r.interval = dt;
    const int len = p.M() - dt;
    r.returns = (p.prices.rightCols(len) - p.prices.leftCols(len)).cwiseQuotient(p.prices.leftCols(len));
    return r;
}

PairwiseSample windowed_pairwise_aggregate(const ReturnPanel& r, int window, int threads) {
    require(window >= 2, "window must hold at least two returns");
    require(r.length() >= window, "return panel is shorter than one window");
    require(r.K() >= 2, "pairwise aggregation needs at least two assets");
    const int windows = r.length() / window;
    const int K = r.K();
    std::vector<std::vector<double>> parts(static_cast<std::size_t>(windows));
    std::vector<long long> skipped(static_cast<std::size_t>(windows), 0);
    parallel_for(static_cast<std::size_t>(windows), threads, [&](std::size_t w) {
        const Eigen::MatrixXd block = r.returns.middleCols(static_cast<Eigen::Index>(w) * window, window);
        const Eigen::MatrixXd centred = block.colwise() - block.rowwise().mean();
        auto& out = parts[w];
        for (int k = 0; k < K; ++k) {
            for (int l = k + 1; l < K; ++l) {
                const auto x = centred.row(k);
                const auto y = centred.row(l);
                const double a = x.squaredNorm() / (window - 1);
                const double d = y.squaredNorm() / (window - 1);
                const double b = x.dot(y) / (window - 1);
                const double mid = 0.5 * (a + d);
                const double rad = std::hypot(0.5 * (a - d), b);
                const double big = mid + rad;
                const double small = mid - rad;
                if (!(big > 0.0) || !(small > 1e-12 * big)) {
                    ++skipped[w];
                    continue;
                }
                // eigenvector of the larger eigenvalue; the other is its rotation by 90 degrees
                double vx = b, vy = big - a;
                if (std::hypot(vx, vy) < 1e-300) {
                    vx = a >= d ? 1.0 : 0.0;
                    vy = a >= d ? 0.0 : 1.0;
                }
                const double norm = std::hypot(vx, vy);
                vx /= norm;
                vy /= norm;
                const double s_big = 1.0 / std::sqrt(big), s_small = 1.0 / std::sqrt(small);
                for (int t = 0; t < window; ++t) {
                    out.push_back((vx * x[t] + vy * y[t]) * s_big);
                    out.push_back((-vy * x[t] + vx * y[t]) * s_small);
                }
            }
        }
    });
    PairwiseSample s;
    s.windows = windows;
    for (std::size_t w = 0; w < parts.size(); ++w) {
        s.values.insert(s.values.end(), parts[w].begin(), parts[w].end());
        s.skipped_pairs += skipped[w];
    }
    return s;
}

CovarianceEstimate estimate_covariance(const ReturnPanel& r, double unit_days) {
    require(r.length() >= 2, "covariance needs at least two return observations");
    require(unit_days > 0.0, "time unit must be positive");
    const int K = r.K();
    const Eigen::VectorXd mean = r.returns.rowwise().mean();
    const Eigen::MatrixXd centred = r.returns.colwise() - mean;
    const Eigen::MatrixXd S = centred * centred.transpose() / (r.length() - 1);
    std::vector<double> sd(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        if (!(S(k, k) > 0.0)) fail(ErrorKind::validation, "asset " + r.tickers[k] + " has zero return variance");
        sd[k] = std::sqrt(S(k, k));
    }
    Eigen::MatrixXd C(K, K);
    for (int i = 0; i < K; ++i) {
        for (int j = 0; j < K; ++j) C(i, j) = i == j ? 1.0 : S(i, j) / (sd[i] * sd[j]);
    }
    C = 0.5 * (C + C.transpose()).eval();
    const double per_unit = r.interval / unit_days;
    CovarianceEstimate est{CovarianceSpec::explicit_matrix(sd, C), {}, {}, {}};
    for (int k = 0; k < K; ++k) {
        est.mu.push_back(mean[k] / per_unit);
        est.rho.push_back(sd[k] / std::sqrt(per_unit));
        est.mean.push_back(mean[k]);
    }
    return est;
}

CorrelationModel homogeneous_summary(const CovarianceSpec& cov) {
    const int K = cov.dimension();
    require(K >= 2, "homogeneous summary needs at least two assets");
    if (cov.is_homogeneous()) return {K, cov.level(), 0.0};
    const Eigen::MatrixXd C = cov.correlation_matrix();
    const double off = C.sum() - C.trace();
    return {K, off / (static_cast<double>(K) * (K - 1)), 0.0};
}

std::vector<double> rotate_scale_returns(const ReturnPanel& r, const CovarianceSpec& cov) {
    require(cov.dimension() == r.K(), "covariance and return panel differ in dimension");
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov.covariance_matrix());
    if (eig.info() != Eigen::Success) fail(ErrorKind::numerical, "eigendecomposition of the covariance failed");
    const Eigen::VectorXd lambda = eig.eigenvalues();
    if (!(lambda.minCoeff() > 1e-14 * lambda.maxCoeff()))
        fail(ErrorKind::validation, "covariance is not positive definite");
    const Eigen::MatrixXd centred = r.returns.colwise() - r.returns.rowwise().mean();
    const Eigen::MatrixXd rotated =
        lambda.cwiseSqrt().cwiseInverse().asDiagonal() * (eig.eigenvectors().transpose() * centred);
    return {rotated.data(), rotated.data() + rotated.size()};
}

std::string to_string(FitMethod m) {
    switch (m) {
        case FitMethod::least_squares: return "least_squares";
        case FitMethod::cramer_von_mises: return "cramer_von_mises";
        case FitMethod::variance_identity: return "variance_identity";
    }
    return "unknown";
}

std::vector<double> default_N_grid() {
    std::vector<double> g;
    for (int n = 1; n <= 50; ++n) g.push_back(n);
    return g;
}

NFit fit_N_least_squares(const std::vector<double>& sample, const std::vector<double>& grid) {
    check_sample(sample);
    std::vector<double> sorted = sample;
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    const double lo = sorted.front(), hi = sorted.back();
    if (!(iqr > 0.0) || !(hi > lo)) fail(ErrorKind::validation, "degenerate histogram: sample has no spread");
    double h = 2.0 * iqr / std::cbrt(n);
    constexpr double kMaxBins = 20000;
    constexpr double kMinCount = 10;  // sparser bins bias the log error toward heavy tails
    if ((hi - lo) / h > kMaxBins) h = (hi - lo) / kMaxBins;
    const auto bins = static_cast<std::size_t>(std::ceil((hi - lo) / h));
    std::vector<double> counts(std::max<std::size_t>(bins, 1), 0.0);
    for (double x : sorted) counts[std::min(counts.size() - 1, static_cast<std::size_t>((x - lo) / h))] += 1.0;
    std::vector<std::pair<double, double>> points;  // bin centre, log density
    for (std::size_t i = 0; i < counts.size(); ++i)
        if (counts[i] >= kMinCount) points.emplace_back(lo + (static_cast<double>(i) + 0.5) * h, std::log(counts[i] / (n * h)));
    if (points.size() < 3) fail(ErrorKind::validation, "degenerate histogram: fewer than three occupied bins");
    return scan_grid(grid, FitMethod::least_squares, [&](double N) {
        double sum = 0.0;
        for (const auto& [x, logp] : points) {
            const double e = logp - std::log(rotated_scaled_density(x, N));
            sum += e * e;
        }
        return sum;
    });
}

RotatedScaledCdf::RotatedScaledCdf(double N) {
    require(N > 0.0 && std::isfinite(N), "N must be positive");
    constexpr int kPoints = 4096;
    static const QuadratureRule gl = gauss_legendre(8);
    const double X = std::max(10.0, 45.0 / std::sqrt(N));
    auto g = [N](double x) { return rotated_scaled_density(x, N); };
    x_.resize(kPoints);
    F_.resize(kPoints);
    g_.resize(kPoints);
    for (int i = 0; i < kPoints; ++i) {
        const double s = static_cast<double>(i) / (kPoints - 1);
        x_[i] = X * s * s;
        g_[i] = i > 0 ? g(x_[i]) : 0.0;
    }
    // F_ holds the mass of [0, x]; the first panel may carry an integrable singularity
    boost::math::quadrature::tanh_sinh<double> ts;
    F_[0] = 0.0;
    F_[1] = ts.integrate(g, 0.0, x_[1]);
    for (int i = 2; i < kPoints; ++i) {
        const double mid = 0.5 * (x_[i] + x_[i - 1]), half = 0.5 * (x_[i] - x_[i - 1]);
        double sum = 0.0;
        for (std::size_t j = 0; j < gl.nodes.size(); ++j) sum += gl.weights[j] * g(mid + half * gl.nodes[j]);
        F_[i] = F_[i - 1] + half * sum;
    }
    const double total = F_.back();
    for (double& f : F_) f = 0.5 + 0.5 * f / total;
    for (double& d : g_) d *= 0.5 / total;
}

double RotatedScaledCdf::operator()(double x) const {
    const double a = std::abs(x);
    double upper;
    if (a >= x_.back()) {
        upper = 1.0;
    } else {
        const auto it = std::upper_bound(x_.begin(), x_.end(), a);
        const auto i = static_cast<std::size_t>(it - x_.begin()) - 1;
        const double h = x_[i + 1] - x_[i];
        const double t = (a - x_[i]) / h;
        if (i == 0) {
            upper = F_[0] + t * (F_[1] - F_[0]);
        } else {
            // cubic Hermite with the density as slope
            const double g0 = g_[i], g1 = g_[i + 1];
            const double t2 = t * t, t3 = t2 * t;
            upper = (2 * t3 - 3 * t2 + 1) * F_[i] + (t3 - 2 * t2 + t) * h * g0 + (-2 * t3 + 3 * t2) * F_[i + 1] +
                    (t3 - t2) * h * g1;
        }
    }
    return x >= 0.0 ? upper : 1.0 - upper;
}

double cramer_von_mises_statistic(std::vector<double> sample, const RotatedScaledCdf& cdf) {
    require(!sample.empty(), "Cramer-von Mises statistic needs a sample");
    std::sort(sample.begin(), sample.end());
    const double n = static_cast<double>(sample.size());
    double w2 = 1.0 / (12.0 * n);
    for (std::size_t i = 0; i < sample.size(); ++i) {
        const double e = cdf(sample[i]) - (2.0 * static_cast<double>(i) + 1.0) / (2.0 * n);
        w2 += e * e;
    }
    return w2;
}

NFit fit_N_cramer_von_mises(const std::vector<double>& sample, const std::vector<double>& grid) {
    check_sample(sample);
    std::vector<double> sorted = sample;
    std::sort(sorted.begin(), sorted.end());
    return scan_grid(grid, FitMethod::cramer_von_mises,
                     [&](double N) { return cramer_von_mises_statistic(sorted, RotatedScaledCdf(N)); });
}

double variance_identity(int K, double c, double N) {
    require(K >= 1 && N > 0.0, "variance identity needs K >= 1 and N > 0");
    const double k = K, c2 = c * c;
    return 4.0 * (0.5 + c2) * k * k / N + 2.0 * c2 * k * k + 4.0 * (1.0 - c2) * k / N + 2.0 * (1.0 - c2) * k;
}

double invert_variance_identity(int K, double c, double variance) {
    require(K >= 1, "variance identity needs K >= 1");
    require(c >= 0.0 && c < 1.0, "variance identity needs c in [0, 1)");
    const double k = K, c2 = c * c;
    const double A = 2.0 * c2 * k * k + 2.0 * (1.0 - c2) * k;
    const double B = 4.0 * (0.5 + c2) * k * k + 4.0 * (1.0 - c2) * k;
    if (!(variance > A))
        fail(ErrorKind::validation, "sample variance " + format_double(variance) +
                                        " is below the N -> inf value " + format_double(A) +
                                        "; no N > 0 is consistent with the model");
    return B / (variance - A);
}

NFit estimate_N_variance_identity(const ReturnPanel& r, double c) {
    require(r.length() >= 3, "variance identity needs at least three observations");
    const Eigen::VectorXd mean = r.returns.rowwise().mean();
    Eigen::MatrixXd z = r.returns.colwise() - mean;
    for (int k = 0; k < r.K(); ++k) {
        const double sd = std::sqrt(z.row(k).squaredNorm() / (r.length() - 1));
        if (!(sd > 0.0)) fail(ErrorKind::validation, "asset " + r.tickers[k] + " has zero return variance");
        z.row(k) /= sd;
    }
    const Eigen::VectorXd x = z.colwise().squaredNorm().transpose();
    const double xbar = x.mean();
    const double var = (x.array() - xbar).square().sum() / (x.size() - 1);
    NFit fit;
    fit.method = FitMethod::variance_identity;
    fit.diagnostic = var;
    fit.N_hat = invert_variance_identity(r.K(), c, var);
    return fit;
}

PricePanel synthetic_price_panel(const SyntheticPanelSpec& spec) {
    const auto K = static_cast<int>(spec.mu.size());
    require(K >= 1 && static_cast<int>(spec.sigma.size()) == K, "mu and sigma must have one entry per asset");
    require(spec.correlation.rows() == K && spec.correlation.cols() == K, "correlation must be K x K");
    require(spec.M >= 2 && spec.N >= 0 && spec.start_price > 0.0, "invalid synthetic panel parameters");
    const Eigen::LLT<Eigen::MatrixXd> llt(spec.correlation);
    if (llt.info() != Eigen::Success) fail(ErrorKind::validation, "correlation matrix is not positive definite");
    const Eigen::MatrixXd L = llt.matrixL();
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal;
    PricePanel p;
    for (int k = 0; k < K; ++k) p.tickers.push_back("S" + std::to_string(k + 1));
    p.prices.resize(K, spec.M);
    p.prices.col(0).setConstant(spec.start_price);
    Eigen::VectorXd g(K);
    for (int t = 1; t < spec.M; ++t) {
        double factor = 1.0;
        if (spec.N > 0) {
            double z = 0.0;
            for (int j = 0; j < spec.N; ++j) {
                const double n = normal(rng);
                z += n * n;
            }
            factor = std::sqrt(z / spec.N);
        }
        for (int k = 0; k < K; ++k) g[k] = normal(rng);
        const Eigen::VectorXd shock = L * g;
        for (int k = 0; k < K; ++k) {
            const double r = std::max(spec.mu[k] + factor * spec.sigma[k] * shock[k], -0.99);
            p.prices(k, t) = p.prices(k, t - 1) * (1.0 + r);
        }
    }
    // business-day calendar from 2000-01-03
    using namespace std::chrono;
    sys_days day = year{2000} / January / 3;
    for (int t = 0; t < spec.M; ++t) {
        while (weekday{day} == Saturday || weekday{day} == Sunday) day += days{1};
        const year_month_day ymd{day};
        char buf[16];
        std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                      static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
        p.dates.emplace_back(buf);
        day += days{1};
    }
    return p;
}

Eigen::MatrixXd block_correlation(int K, int blocks, double within, double across) {
    require(K >= 1 && blocks >= 1 && blocks <= K, "block correlation needs 1 <= blocks <= K");
    Eigen::MatrixXd C(K, K);
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j)
            C(i, j) = i == j ? 1.0 : (i * blocks / K == j * blocks / K ? within : across);
    return C;
}

}  // namespace ecr
