#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace sparsealloc {

// density(rank) = scale / (rank + beta)^alpha
struct ZipfParams {
    double alpha = 1.0;
    double beta = 0.0;
    double scale = 1.0;
};

// Per-rank token budgets: m[0] belongs to the densest feature.
struct FeatureBudgets {
    std::vector<std::size_t> m;
    std::size_t clamped_to_one = 0;  // ranks whose floored budget was raised to 1

    std::size_t total() const;
};

struct BudgetRequest {
    double expected_k = 1.0;  // features per token
    std::size_t features = 1;
    std::size_t batch = 1;
    double beta = 0.0;
    double alpha = 1.0;
    std::size_t m_max = std::numeric_limits<std::size_t>::max();
    bool floor_at_one = true;
};

FeatureBudgets compute_feature_budgets(const BudgetRequest& req);

// Maps rank-indexed budgets onto feature columns; ranks[f] is the 1-based density rank of feature f.
std::vector<std::size_t> budgets_by_feature(const FeatureBudgets& budgets, std::span<const std::size_t> ranks);

double zipf_predict(const ZipfParams& params, std::size_t rank);

struct ZipfFit {
    ZipfParams params;
    double r_squared = 0.0;          // in log-log space
    std::vector<double> predicted;   // predicted density for ranks 1..n
    std::size_t points_used = 0;     // strictly positive densities that entered the fit
};

// Least squares of log(density) against log(C) - alpha*log(rank + beta). beta is searched on
// [0, 50]; for each candidate (C, alpha) is closed-form. fix_alpha pins the exponent.
ZipfFit fit_zipf(std::span<const double> densities, std::optional<double> fix_alpha = std::nullopt);

struct DyingPartition {
    std::vector<std::size_t> healthy;
    std::vector<std::size_t> dying;
};

// Dying = rank in the bottom quarter (positions ceil(0.75F)+1..F) and density < 0.6 x predicted.
DyingPartition classify_dying(std::span<const double> densities, const ZipfFit& fit);

// 1-based descending-density ranks; ties go to the lower feature index.
std::vector<std::size_t> ranks_by_density(std::span<const double> densities);

// CSV with header "rank,density"; rows ordered by rank.
void write_density_csv(const std::filesystem::path& path, std::span<const double> densities);
std::vector<double> read_density_csv(const std::filesystem::path& path);

}  // namespace sparsealloc
