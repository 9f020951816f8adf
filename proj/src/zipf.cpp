#include "sparsealloc/zipf.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "sparsealloc/errors.hpp"

namespace sparsealloc {

std::size_t FeatureBudgets::total() const {
    return std::accumulate(m.begin(), m.end(), std::size_t{0});
}

FeatureBudgets compute_feature_budgets(const BudgetRequest& req) {
    if (!(req.expected_k > 0.0) || !std::isfinite(req.expected_k)) {
        throw InvalidArgument("expected features per token must be positive and finite");
    }
    if (req.features == 0 || req.batch == 0 || req.m_max == 0) {
        throw InvalidArgument("feature count, batch size and m_max must be positive");
    }
    if (!(req.alpha > 0.0) || !std::isfinite(req.alpha)) throw InvalidArgument("zipf alpha must be > 0");
    if (!(req.beta > -1.0) || !std::isfinite(req.beta)) throw InvalidArgument("zipf beta must be > -1");

    const double num_interactions = static_cast<double>(req.batch) * req.expected_k;
    double zipf_sum = 0.0;
    for (std::size_t i = 1; i <= req.features; ++i) {
        zipf_sum += 1.0 / std::pow(static_cast<double>(i) + req.beta, req.alpha);
    }
    const double n_approx = num_interactions / zipf_sum;

    FeatureBudgets out;
    out.m.resize(req.features);
    for (std::size_t i = 1; i <= req.features; ++i) {
        const double raw = std::floor(n_approx / std::pow(static_cast<double>(i) + req.beta, req.alpha));
        std::size_t m = raw >= static_cast<double>(req.m_max) ? req.m_max : static_cast<std::size_t>(raw);
        if (req.floor_at_one && m == 0) {
            m = 1;
            ++out.clamped_to_one;
        }
        out.m[i - 1] = m;
    }
    return out;
}

std::vector<std::size_t> budgets_by_feature(const FeatureBudgets& budgets, std::span<const std::size_t> ranks) {
    if (ranks.size() != budgets.m.size()) {
        throw ShapeError("rank vector length " + std::to_string(ranks.size()) + " does not match " +
                         std::to_string(budgets.m.size()) + " budgets");
    }
    std::vector<std::size_t> out(ranks.size());
    for (std::size_t f = 0; f < ranks.size(); ++f) {
        if (ranks[f] < 1 || ranks[f] > ranks.size()) throw InvalidArgument("rank out of range");
        out[f] = budgets.m[ranks[f] - 1];
    }
    return out;
}

double zipf_predict(const ZipfParams& params, std::size_t rank) {
    if (rank < 1) throw InvalidArgument("zipf rank must be >= 1");
    return params.scale / std::pow(static_cast<double>(rank) + params.beta, params.alpha);
}

std::vector<std::size_t> ranks_by_density(std::span<const double> densities) {
    std::vector<std::size_t> order(densities.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return densities[a] > densities[b]; });
    std::vector<std::size_t> ranks(densities.size());
    for (std::size_t r = 0; r < order.size(); ++r) ranks[order[r]] = r + 1;
    return ranks;
}

namespace {

struct LineFit {
    double log_scale = 0.0;
    double alpha = 0.0;
    double sse = 0.0;
};

// y = log density at ranks 1..n, sorted descending.
LineFit fit_at_beta(const std::vector<double>& y, double beta, std::optional<double> fix_alpha) {
    const std::size_t n = y.size();
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = std::log(static_cast<double>(i + 1) + beta);
    LineFit fit;
    if (fix_alpha) {
        fit.alpha = *fix_alpha;
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += y[i] + fit.alpha * x[i];
        fit.log_scale = acc / static_cast<double>(n);
    } else {
        const double xm = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
        const double ym = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
        double sxy = 0.0, sxx = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sxy += (x[i] - xm) * (y[i] - ym);
            sxx += (x[i] - xm) * (x[i] - xm);
        }
        const double slope = sxy / sxx;
        fit.alpha = -slope;
        fit.log_scale = ym - slope * xm;
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double r = y[i] - (fit.log_scale - fit.alpha * x[i]);
        fit.sse += r * r;
    }
    return fit;
}

}  // namespace

ZipfFit fit_zipf(std::span<const double> densities, std::optional<double> fix_alpha) {
    if (fix_alpha && !(*fix_alpha > 0.0)) throw InvalidArgument("fixed zipf alpha must be > 0");
    std::vector<double> positive;
    for (std::size_t i = 0; i < densities.size(); ++i) {
        const double d = densities[i];
        if (!std::isfinite(d)) throw NumericError("density " + std::to_string(i) + " is not finite");
        if (d < 0.0) throw InvalidArgument("density " + std::to_string(i) + " is negative");
        if (d > 0.0) positive.push_back(d);
    }
    if (positive.size() < 3) {
        throw InsufficientDataError("zipf fit needs at least 3 positive densities, got " +
                                    std::to_string(positive.size()));
    }
    std::sort(positive.begin(), positive.end(), std::greater<>());
    std::vector<double> y(positive.size());
    std::transform(positive.begin(), positive.end(), y.begin(), [](double d) { return std::log(d); });

    constexpr int kPasses = 3;
    constexpr int kPoints = 100;
    double lo = 0.0, hi = 50.0;
    double best_beta = lo;
    for (int pass = 0; pass < kPasses; ++pass) {
        const double step = (hi - lo) / (kPoints - 1);
        int best_i = 0;
        double best_sse = std::numeric_limits<double>::infinity();
        for (int i = 0; i < kPoints; ++i) {
            const double sse = fit_at_beta(y, lo + step * i, fix_alpha).sse;
            if (sse < best_sse) {
                best_sse = sse;
                best_i = i;
            }
        }
        best_beta = lo + step * best_i;
        const double new_lo = lo + step * std::max(best_i - 1, 0);
        const double new_hi = lo + step * std::min(best_i + 1, kPoints - 1);
        lo = new_lo;
        hi = new_hi;
    }

    // Golden-section polish inside the last bracket.
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
    double fc = fit_at_beta(y, c, fix_alpha).sse, fd = fit_at_beta(y, d, fix_alpha).sse;
    for (int it = 0; it < 200 && (b - a) > 1e-13; ++it) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = fit_at_beta(y, c, fix_alpha).sse;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = fit_at_beta(y, d, fix_alpha).sse;
        }
    }
    const double polished = 0.5 * (a + b);
    if (fit_at_beta(y, polished, fix_alpha).sse <= fit_at_beta(y, best_beta, fix_alpha).sse) {
        best_beta = polished;
    }

    const LineFit line = fit_at_beta(y, best_beta, fix_alpha);
    if (!(line.alpha > 0.0)) {
        throw InsufficientDataError("densities show no decay with rank; zipf exponent would be non-positive");
    }

    ZipfFit fit;
    fit.params = ZipfParams{line.alpha, best_beta, std::exp(line.log_scale)};
    const double ym = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    double sst = 0.0;
    for (double v : y) sst += (v - ym) * (v - ym);
    fit.r_squared = sst > 0.0 ? 1.0 - line.sse / sst : (line.sse == 0.0 ? 1.0 : 0.0);
    fit.points_used = positive.size();
    fit.predicted.resize(densities.size());
    for (std::size_t r = 1; r <= densities.size(); ++r) fit.predicted[r - 1] = zipf_predict(fit.params, r);
    return fit;
}

DyingPartition classify_dying(std::span<const double> densities, const ZipfFit& fit) {
    const std::size_t F = densities.size();
    const auto ranks = ranks_by_density(densities);
    const std::size_t cutoff = (3 * F + 3) / 4;  // ceil(0.75 F)
    DyingPartition out;
    for (std::size_t f = 0; f < F; ++f) {
        const std::size_t r = ranks[f];
        const bool bottom_quarter = r > cutoff;
        if (bottom_quarter && densities[f] < 0.6 * zipf_predict(fit.params, r)) {
            out.dying.push_back(f);
        } else {
            out.healthy.push_back(f);
        }
    }
    return out;
}

void write_density_csv(const std::filesystem::path& path, std::span<const double> densities) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    std::vector<double> sorted(densities.begin(), densities.end());
    std::stable_sort(sorted.begin(), sorted.end(), std::greater<>());
    os << "rank,density\n";
    os.precision(17);
    for (std::size_t r = 0; r < sorted.size(); ++r) os << (r + 1) << ',' << sorted[r] << '\n';
    if (!os) throw IoError("failed writing " + path.string());
}

std::vector<double> read_density_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open density file " + path.string());
    std::string line;
    if (!std::getline(is, line)) throw FormatError(FormatFault::BadHeader, path.string() + ": empty density file");
    line.erase(std::remove_if(line.begin(), line.end(), [](unsigned char ch) { return std::isspace(ch); }),
               line.end());
    if (line != "rank,density") {
        throw FormatError(FormatFault::BadHeader, path.string() + ": expected header 'rank,density'");
    }
    std::vector<double> out;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream row(line);
        std::string rank_s, dens_s;
        if (!std::getline(row, rank_s, ',') || !std::getline(row, dens_s)) {
            throw FormatError(FormatFault::BadHeader, path.string() + ":" + std::to_string(lineno) + ": malformed row");
        }
        try {
            out.push_back(std::stod(dens_s));
        } catch (const std::exception&) {
            throw FormatError(FormatFault::BadHeader, path.string() + ":" + std::to_string(lineno) + ": bad density");
        }
    }
    return out;
}

}  // namespace sparsealloc
