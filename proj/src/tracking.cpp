#include "sparsealloc/tracking.hpp"

#include <string>

#include "sparsealloc/errors.hpp"
#include "sparsealloc/zipf.hpp"

namespace sparsealloc {

FeatureDensityStats::FeatureDensityStats(std::size_t features, std::uint64_t window)
    : fire_counts(features, 0), last_fired_at(features, 0), window_length(window) {
    if (window == 0) throw InvalidArgument("density window must be at least one token");
}

void update_density(FeatureDensityStats& stats, const SparsityMask& mask) {
    if (mask.features() != stats.features()) {
        throw ShapeError("mask has " + std::to_string(mask.features()) + " features, stats track " +
                         std::to_string(stats.features()));
    }
    if (stats.window_tokens >= stats.window_length) {
        stats.previous_counts = stats.fire_counts;
        stats.previous_tokens = stats.window_tokens;
        std::fill(stats.fire_counts.begin(), stats.fire_counts.end(), 0);
        stats.window_tokens = 0;
    }
    const std::uint64_t base = stats.tokens_seen_total;
    for (Eigen::Index t = 0; t < mask.selected.rows(); ++t) {
        const std::uint64_t token_index = base + static_cast<std::uint64_t>(t) + 1;
        for (Eigen::Index f = 0; f < mask.selected.cols(); ++f) {
            if (mask.selected(t, f)) {
                ++stats.fire_counts[f];
                stats.last_fired_at[f] = token_index;
            }
        }
    }
    stats.window_tokens += mask.tokens();
    stats.tokens_seen_total += mask.tokens();
}

std::vector<std::size_t> detect_dead(const FeatureDensityStats& stats, std::uint64_t dead_threshold_tokens) {
    if (dead_threshold_tokens < 1) throw InvalidArgument("dead threshold must be >= 1 token");
    std::vector<std::size_t> dead;
    for (std::size_t f = 0; f < stats.features(); ++f) {
        if (stats.tokens_seen_total - stats.last_fired_at[f] >= dead_threshold_tokens) dead.push_back(f);
    }
    return dead;
}

std::vector<std::size_t> features_per_token(const SparsityMask& mask) {
    return mask.row_sums();
}

std::map<std::size_t, std::size_t> histogram(const std::vector<std::size_t>& counts) {
    std::map<std::size_t, std::size_t> h;
    for (auto c : counts) ++h[c];
    return h;
}

std::vector<std::size_t> density_ranks(const FeatureDensityStats& stats) {
    if (stats.window_tokens == 0) throw InvalidArgument("density ranks requested on an empty window");
    std::vector<double> counts(stats.fire_counts.begin(), stats.fire_counts.end());
    return ranks_by_density(counts);
}

std::vector<double> density_snapshot(const FeatureDensityStats& stats) {
    const bool use_previous = stats.previous_tokens > 0 && stats.window_tokens < stats.window_length;
    const auto& counts = use_previous ? stats.previous_counts : stats.fire_counts;
    const std::uint64_t tokens = use_previous ? stats.previous_tokens : stats.window_tokens;
    std::vector<double> out(counts.size(), 0.0);
    if (tokens == 0) return out;
    for (std::size_t f = 0; f < counts.size(); ++f) out[f] = static_cast<double>(counts[f]) / static_cast<double>(tokens);
    return out;
}

}  // namespace sparsealloc
