#include "ecr/mc_sim.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <queue>
#include <sstream>

#include "ecr/error.hpp"
#include "ecr/parallel.hpp"

namespace ecr {

namespace {

constexpr long long kChunk = 8192;

std::mt19937_64 chunk_generator(std::uint64_t seed, std::uint64_t chunk) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(chunk), static_cast<std::uint32_t>(chunk >> 32)};
    return std::mt19937_64(seq);
}

std::size_t reservoir_size(long long n) { return static_cast<std::size_t>(std::ceil(0.005 * n)) + 1; }

// Keeps the largest `capacity` values seen.
class TopK {
public:
    explicit TopK(std::size_t capacity) : capacity_(capacity) {}

    void push(double x) {
        if (heap_.size() < capacity_) {
            heap_.push(x);
        } else if (x > heap_.top()) {
            heap_.pop();
            heap_.push(x);
        }
    }

    std::vector<double> take() {
        std::vector<double> out;
        out.reserve(heap_.size());
        while (!heap_.empty()) {
            out.push_back(heap_.top());
            heap_.pop();
        }
        return out;
    }

private:
    std::size_t capacity_;
    std::priority_queue<double, std::vector<double>, std::greater<double>> heap_;
};

std::size_t order_index(std::size_t n, double alpha) {
    const double pos = static_cast<double>(n - 1) * alpha;
    return std::min(n - 1, static_cast<std::size_t>(std::floor(pos + 1e-9)));
}

}  // namespace

void SimConfig::validate() const {
    require(realizations >= 1, "realizations must be at least 1");
    require(N >= 0, "N must be a positive integer, or 0 for the stationary variant");
    require(histogram_bins >= 1, "histogram needs at least one bin");
    require(keep_cap >= 1, "keep cap must be positive");
    portfolio.validate();
    if (correlation) {
        require(correlation->rows() == portfolio.K() && correlation->cols() == portfolio.K(),
                "correlation matrix must be K x K");
    } else {
        CorrelationModel{portfolio.K(), c, 1.0}.validate();
    }
}

Eigen::MatrixXd SimConfig::correlation_matrix() const {
    if (correlation) return *correlation;
    return CorrelationModel{portfolio.K(), c, 1.0}.matrix();
}

Metadata SimConfig::describe() const {
    Metadata md;
    md.emplace_back("mode", "simulation");
    md.emplace_back("realizations", std::to_string(realizations));
    md.emplace_back("seed", std::to_string(seed));
    md.emplace_back("N", stationary() ? "inf" : std::to_string(N));
    md.emplace_back("c", correlation ? "explicit" : format_double(c));
    md.emplace_back("K", std::to_string(portfolio.K()));
    if (portfolio.is_homogeneous()) {
        md.emplace_back("F", format_double(portfolio.F[0]));
        md.emplace_back("V0", format_double(portfolio.V0[0]));
        md.emplace_back("mu", format_double(portfolio.mu[0]));
        md.emplace_back("rho", format_double(portfolio.rho[0]));
    } else {
        md.emplace_back("portfolio", "heterogeneous");
    }
    md.emplace_back("T", format_double(portfolio.T));
    md.emplace_back("transform", unscaled_eigenvalues ? "lambda" : "sqrt_lambda");
    md.emplace_back("bins", std::to_string(histogram_bins));
    return md;
}

AssetSampler::AssetSampler(const SimConfig& cfg) : N_(cfg.N) {
    cfg.validate();
    const PortfolioSpec& p = cfg.portfolio;
    const int K = p.K();
    if (cfg.correlation) {
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(*cfg.correlation);
        if (eig.info() != Eigen::Success) fail(ErrorKind::numerical, "eigendecomposition of the correlation matrix failed");
        const Eigen::VectorXd lambda = eig.eigenvalues();
        if (lambda.minCoeff() <= 1e-12 * std::max(1.0, lambda.maxCoeff()))
            fail(ErrorKind::validation, "correlation matrix is not positive definite");
        const Eigen::VectorXd scale = cfg.unscaled_eigenvalues ? lambda : lambda.cwiseSqrt();
        mix_ = eig.eigenvectors() * scale.asDiagonal();
    } else {
        // C = (1-c)(I - P) + lambda_1 P with P = e e^T / K; any square root
        // of the form U f(Lambda) acts on white noise like f applied to C.
        homogeneous_ = true;
        const double rest = 1.0 - cfg.c;
        const double top = 1.0 + (K - 1) * cfg.c;
        if (cfg.unscaled_eigenvalues) {
            diag_ = rest;
            common_ = top - rest;
        } else {
            diag_ = std::sqrt(rest);
            common_ = std::sqrt(top) - std::sqrt(rest);
        }
    }
    const auto w = p.weights();
    for (int k = 0; k < K; ++k) {
        log_v0_.push_back(std::log(p.V0[k]));
        log_f_.push_back(std::log(p.F[k]));
        drift_.push_back((p.mu[k] - 0.5 * p.rho[k] * p.rho[k]) * p.T);
        scale_.push_back(p.rho[k] * std::sqrt(p.T));
        weights_.push_back(w[k]);
    }
}

void AssetSampler::draw_shocks(std::mt19937_64& rng, Eigen::Ref<Eigen::VectorXd> x) const {
    std::normal_distribution<double> normal;
    double factor = 1.0;
    if (N_ != SimConfig::kStationary) {
        // the K x N normal matrix times an N-vector n is sqrt(|n|^2) times K white normals
        double z = 0.0;
        for (int j = 0; j < N_; ++j) {
            const double n = normal(rng);
            z += n * n;
        }
        factor = std::sqrt(z / N_);
    }
    const int K = this->K();
    if (homogeneous_) {
        double sum = 0.0;
        for (int k = 0; k < K; ++k) {
            x[k] = normal(rng);
            sum += x[k];
        }
        const double shared = common_ * sum / K;
        for (int k = 0; k < K; ++k) x[k] = factor * (diag_ * x[k] + shared);
        return;
    }
    Eigen::VectorXd g(K);
    for (int k = 0; k < K; ++k) g[k] = normal(rng);
    x.noalias() = factor * (mix_ * g);
}

Eigen::VectorXd draw_asset_values(std::mt19937_64& rng, const AssetSampler& sampler) {
    Eigen::VectorXd x(sampler.K());
    sampler.draw_shocks(rng, x);
    for (int k = 0; k < sampler.K(); ++k) x[k] = std::exp(sampler.log_value(k, x[k]));
    return x;
}

double portfolio_loss(const Eigen::VectorXd& V, const PortfolioSpec& p) {
    require(V.size() == p.K(), "asset vector and portfolio differ in size");
    const auto w = p.weights();
    double loss = 0.0;
    for (int k = 0; k < p.K(); ++k) {
        require(V[k] >= 0.0, "asset values must be nonnegative");
        if (V[k] < p.F[k]) loss += w[k] * (p.F[k] - V[k]) / p.F[k];
    }
    return std::clamp(loss, 0.0, 1.0);
}

void Histogram::add(double x) {
    const auto bins = static_cast<long long>(counts.size());
    auto i = static_cast<long long>((x - lo) / (hi - lo) * static_cast<double>(bins));
    counts[static_cast<std::size_t>(std::clamp(i, 0LL, bins - 1))] += 1;
}

LossSample run_simulation(const SimConfig& cfg) {
    const AssetSampler sampler(cfg);
    const long long n = cfg.realizations;
    const bool keep = n <= cfg.keep_cap;
    const auto chunks = static_cast<std::size_t>((n + kChunk - 1) / kChunk);
    const std::size_t capacity = reservoir_size(n);

    LossSample out;
    out.realizations = n;
    out.config = cfg.describe();
    out.histogram.counts.assign(static_cast<std::size_t>(cfg.histogram_bins), 0);
    if (keep) out.losses.resize(static_cast<std::size_t>(n));

    const int workers = static_cast<int>(std::min<std::size_t>(resolve_threads(cfg.threads), chunks));
    std::vector<Histogram> histograms(static_cast<std::size_t>(workers), out.histogram);
    std::vector<std::vector<double>> tails(static_cast<std::size_t>(workers));

    parallel_blocks(chunks, workers, [&](std::size_t worker, std::size_t begin, std::size_t end) {
        Histogram& hist = histograms[worker];
        TopK top(capacity);
        Eigen::VectorXd x(sampler.K());
        for (std::size_t chunk = begin; chunk < end; ++chunk) {
            auto rng = chunk_generator(cfg.seed, chunk);
            const long long first = static_cast<long long>(chunk) * kChunk;
            const long long last = std::min(n, first + kChunk);
            for (long long r = first; r < last; ++r) {
                sampler.draw_shocks(rng, x);
                double loss = 0.0;
                for (int k = 0; k < sampler.K(); ++k) {
                    const double gap = sampler.log_value(k, x[k]) - sampler.log_face(k);
                    if (gap < 0.0) loss -= sampler.weight(k) * std::expm1(gap);
                }
                loss = std::clamp(loss, 0.0, 1.0);
                if (keep) out.losses[static_cast<std::size_t>(r)] = loss;
                hist.add(loss);
                top.push(loss);
            }
        }
        tails[worker] = top.take();
    });

    for (const Histogram& h : histograms)
        for (std::size_t i = 0; i < h.counts.size(); ++i) out.histogram.counts[i] += h.counts[i];
    for (const auto& t : tails) out.tail.insert(out.tail.end(), t.begin(), t.end());
    std::sort(out.tail.begin(), out.tail.end(), std::greater<double>());
    if (out.tail.size() > capacity) out.tail.resize(capacity);
    return out;
}

SampleRisk sample_var_etl(std::vector<double> losses, double alpha) {
    require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    require(!losses.empty(), "loss sample is empty");
    const std::size_t n = losses.size();
    const std::size_t idx = order_index(n, alpha);
    std::nth_element(losses.begin(), losses.begin() + static_cast<std::ptrdiff_t>(idx), losses.end());
    SampleRisk out;
    out.var = losses[idx];
    double sum = 0.0;
    std::size_t count = 0;
    for (double x : losses) {
        if (x >= out.var) {
            sum += x;
            ++count;
        }
    }
    out.etl = sum / static_cast<double>(count);
    out.thin_tail = (1.0 - alpha) * static_cast<double>(n) < 100.0;
    return out;
}

SampleRisk sample_var_etl(const LossSample& s, double alpha) {
    require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    if (!s.streamed()) return sample_var_etl(s.losses, alpha);
    const auto n = static_cast<std::size_t>(s.realizations);
    const std::size_t idx = order_index(n, alpha);
    const std::size_t from_top = n - 1 - idx;
    SampleRisk out;
    out.thin_tail = (1.0 - alpha) * static_cast<double>(n) < 100.0;
    if (from_top < s.tail.size()) {
        out.var = s.tail[from_top];
        double sum = 0.0;
        std::size_t count = 0;
        for (double x : s.tail) {
            if (x < out.var) break;
            sum += x;
            ++count;
        }
        out.etl = sum / static_cast<double>(count);
        return out;
    }
    // below the reservoir: interpolate inside the histogram bin holding rank idx
    out.from_histogram = true;
    const Histogram& h = s.histogram;
    long long seen = 0;
    std::size_t bin = 0;
    for (; bin < h.counts.size(); ++bin) {
        if (seen + h.counts[bin] > static_cast<long long>(idx)) break;
        seen += h.counts[bin];
    }
    const double frac = (static_cast<double>(idx - static_cast<std::size_t>(seen)) + 0.5) /
                        static_cast<double>(std::max(1LL, h.counts[bin]));
    out.var = h.lo + (static_cast<double>(bin) + frac) * h.width();
    double sum = 0.0, count = 0.0;
    for (std::size_t i = bin; i < h.counts.size(); ++i) {
        sum += (h.lo + (static_cast<double>(i) + 0.5) * h.width()) * static_cast<double>(h.counts[i]);
        count += static_cast<double>(h.counts[i]);
    }
    out.etl = std::max(out.var, sum / count);
    return out;
}

LossDensity histogram_density(const LossSample& s) {
    const Histogram& h = s.histogram;
    LossDensity d;
    d.metadata = s.config;
    d.metadata.emplace_back("grid", "bin_centres");
    const double n = static_cast<double>(s.realizations);
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        d.grid.push_back(h.lo + (static_cast<double>(i) + 0.5) * h.width());
        d.values.push_back(static_cast<double>(h.counts[i]) / (n * h.width()));
        d.cell_mass.push_back(static_cast<double>(h.counts[i]) / n);
    }
    return d;
}

void write_histogram_csv(const LossSample& s, const std::string& path) {
    write_loss_density_csv(histogram_density(s), path);
}

RiskTable mc_risk_table(const SimConfig& cfg, const std::vector<double>& leverages,
                        const std::vector<double>& alphas) {
    RiskTable t;
    t.leverages = leverages;
    t.alphas = alphas;
    for (double lev : leverages) {
        require(lev > 0.0, "leverage must be positive");
        SimConfig run = cfg;
        for (int k = 0; k < run.portfolio.K(); ++k) run.portfolio.F[k] = lev * run.portfolio.V0[k];
        const LossSample s = run_simulation(run);
        std::vector<double> var, etl;
        for (double a : alphas) {
            const SampleRisk r = sample_var_etl(s, a);
            var.push_back(r.var);
            etl.push_back(r.etl);
        }
        t.var.push_back(var);
        t.etl.push_back(etl);
    }
    return t;
}

double round_half_point(double percent) { return std::round(2.0 * percent) / 2.0; }

DeviationTable relative_deviation_report(const RiskTable& base, const RiskTable& variant) {
    if (base.leverages != variant.leverages) fail(ErrorKind::validation, "risk tables use different leverage grids");
    if (base.alphas != variant.alphas) fail(ErrorKind::validation, "risk tables use different alpha grids");
    DeviationTable out;
    out.leverages = base.leverages;
    out.alphas = base.alphas;
    auto delta = [](double b, double v) -> std::optional<double> {
        if (b == 0.0) return std::nullopt;
        return round_half_point((v - b) / b * 100.0);
    };
    for (std::size_t i = 0; i < base.leverages.size(); ++i) {
        out.var.emplace_back();
        out.etl.emplace_back();
        for (std::size_t j = 0; j < base.alphas.size(); ++j) {
            out.var[i].push_back(delta(base.var[i][j], variant.var[i][j]));
            out.etl[i].push_back(delta(base.etl[i][j], variant.etl[i][j]));
        }
    }
    return out;
}

std::string format_deviation_text(const DeviationTable& t) {
    auto alpha_label = [](double a) {
        std::ostringstream s;
        s.setf(std::ios::fixed);
        s.precision(1);
        s << 100.0 * a;
        return s.str();
    };
    auto cell = [](const std::optional<double>& v) {
        if (!v) return std::string("n/a");
        std::ostringstream s;
        s.setf(std::ios::fixed);
        s.precision(1);
        s << (*v == 0.0 ? 0.0 : *v);
        return s.str();
    };
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> head{"F/V0"};
    for (double a : t.alphas) head.push_back("dVaR" + alpha_label(a));
    for (double a : t.alphas) head.push_back("dETL" + alpha_label(a));
    rows.push_back(head);
    for (std::size_t i = 0; i < t.leverages.size(); ++i) {
        std::ostringstream lev;
        lev.setf(std::ios::fixed);
        lev.precision(2);
        lev << t.leverages[i];
        std::vector<std::string> row{lev.str()};
        for (const auto& v : t.var[i]) row.push_back(cell(v));
        for (const auto& v : t.etl[i]) row.push_back(cell(v));
        rows.push_back(row);
    }
    std::vector<std::size_t> width(head.size(), 0);
    for (const auto& r : rows)
        for (std::size_t j = 0; j < r.size(); ++j) width[j] = std::max(width[j], r[j].size());
    std::ostringstream out;
    for (const auto& r : rows) {
        for (std::size_t j = 0; j < r.size(); ++j) {
            if (j) out << "  ";
            out << std::string(width[j] - r[j].size(), ' ') << r[j];
        }
        out << '\n';
    }
    return out.str();
}

CsvTable deviation_csv(const DeviationTable& t) {
    CsvTable table;
    table.metadata.emplace_back("table", "relative_deviation_percent");
    table.columns = {"leverage", "alpha", "delta_var", "delta_etl"};
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t i = 0; i < t.leverages.size(); ++i)
        for (std::size_t j = 0; j < t.alphas.size(); ++j)
            table.rows.push_back({t.leverages[i], t.alphas[j], t.var[i][j].value_or(nan), t.etl[i][j].value_or(nan)});
    return table;
}

CsvTable risk_table_csv(const RiskTable& t) {
    CsvTable table;
    table.columns = {"leverage", "alpha", "var", "etl"};
    for (std::size_t i = 0; i < t.leverages.size(); ++i)
        for (std::size_t j = 0; j < t.alphas.size(); ++j)
            table.rows.push_back({t.leverages[i], t.alphas[j], t.var[i][j], t.etl[i][j]});
    return table;
}

RiskTable risk_table_from_csv(const CsvTable& table) {
    if (table.columns != std::vector<std::string>{"leverage", "alpha", "var", "etl"})
        fail(ErrorKind::parse, "risk table needs columns leverage,alpha,var,etl");
    RiskTable t;
    for (const auto& row : table.rows) {
        if (std::find(t.leverages.begin(), t.leverages.end(), row[0]) == t.leverages.end())
            t.leverages.push_back(row[0]);
        if (std::find(t.alphas.begin(), t.alphas.end(), row[1]) == t.alphas.end()) t.alphas.push_back(row[1]);
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    t.var.assign(t.leverages.size(), std::vector<double>(t.alphas.size(), nan));
    t.etl = t.var;
    for (const auto& row : table.rows) {
        const auto i = static_cast<std::size_t>(std::find(t.leverages.begin(), t.leverages.end(), row[0]) -
                                                t.leverages.begin());
        const auto j =
            static_cast<std::size_t>(std::find(t.alphas.begin(), t.alphas.end(), row[1]) - t.alphas.begin());
        t.var[i][j] = row[2];
        t.etl[i][j] = row[3];
    }
    for (const auto& r : t.var)
        for (double v : r)
            if (std::isnan(v)) fail(ErrorKind::parse, "risk table is missing a (leverage, alpha) entry");
    return t;
}

}  // namespace ecr
