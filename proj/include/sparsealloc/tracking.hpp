#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <vector>

#include "sparsealloc/sparsifiers.hpp"

namespace sparsealloc {

// Per-feature firing counts over a tumbling window of `window_length` tokens.
// Token indices are 1-based; last_fired_at == 0 means "never fired".
struct FeatureDensityStats {
    std::vector<std::uint64_t> fire_counts;
    std::uint64_t window_tokens = 0;
    std::uint64_t tokens_seen_total = 0;
    std::vector<std::uint64_t> last_fired_at;
    std::uint64_t window_length = 100000;

    // Most recently completed window, kept for density estimates right after a roll-over.
    std::vector<std::uint64_t> previous_counts;
    std::uint64_t previous_tokens = 0;

    FeatureDensityStats() = default;
    FeatureDensityStats(std::size_t features, std::uint64_t window_length);

    std::size_t features() const { return fire_counts.size(); }
};

struct FeatureHealth {
    std::vector<std::size_t> dead;
    std::vector<std::size_t> dying;
    std::vector<std::size_t> ranks;  // 1-based rank of each feature
};

void update_density(FeatureDensityStats& stats, const SparsityMask& mask);

std::vector<std::size_t> detect_dead(const FeatureDensityStats& stats, std::uint64_t dead_threshold_tokens);

// Number of selected features on each token.
std::vector<std::size_t> features_per_token(const SparsityMask& mask);

// features-per-token value -> number of tokens
std::map<std::size_t, std::size_t> histogram(const std::vector<std::size_t>& counts);

// Ranks of the current window's counts. Throws InvalidArgument if the window is empty.
std::vector<std::size_t> density_ranks(const FeatureDensityStats& stats);

// Firing fractions from the last completed window, or the current one if none completed yet.
std::vector<double> density_snapshot(const FeatureDensityStats& stats);

}  // namespace sparsealloc
