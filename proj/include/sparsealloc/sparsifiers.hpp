#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "sparsealloc/types.hpp"

namespace sparsealloc {

// Pre-activation token x feature affinities (B x F).
struct AffinityMatrix {
    Matrix values;

    AffinityMatrix() = default;
    // Throws ShapeError on an empty matrix, NumericError on non-finite entries.
    explicit AffinityMatrix(Matrix v);

    std::size_t tokens() const { return static_cast<std::size_t>(values.rows()); }
    std::size_t features() const { return static_cast<std::size_t>(values.cols()); }
};

// Binary token x feature selection; entry (t, f) = 1 means feature f fires on token t.
struct SparsityMask {
    MaskMatrix selected;

    std::size_t tokens() const { return static_cast<std::size_t>(selected.rows()); }
    std::size_t features() const { return static_cast<std::size_t>(selected.cols()); }
    std::size_t nnz() const;
    std::vector<std::size_t> row_sums() const;
    std::vector<std::size_t> col_sums() const;
    // Selected feature indices of each token, ascending.
    std::vector<std::vector<std::size_t>> row_entries() const;

    bool operator==(const SparsityMask& other) const { return selected == other.selected; }
};

enum class Criterion { ByValue, ByMagnitude };

struct TokenChoice {
    std::size_t k = 1;
};

// budgets[f] is the number of tokens feature column f must select.
struct FeatureChoice {
    std::vector<std::size_t> budgets;
};

struct MutualChoice {
    std::size_t total_budget = 1;
};

struct ReluBaseline {};

// Streaming-inference gate: feature f fires where its affinity exceeds thresholds[f].
struct ThresholdGate {
    std::vector<double> thresholds;
};

using AllocationRule = std::variant<TokenChoice, FeatureChoice, MutualChoice, ReluBaseline, ThresholdGate>;

// Ties between equal keys always go to the lowest (flattened) index.
struct AllocationPolicy {
    AllocationRule rule = TokenChoice{};
    Criterion criterion = Criterion::ByValue;
    bool rectify = true;
};

std::string policy_name(const AllocationPolicy& policy);
std::string criterion_name(Criterion c);
Criterion parse_criterion(const std::string& name);

// Indices of the k best entries under `criterion`, best first.
// Throws BudgetError(ExceedsDomain) if k > values.size().
std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k, Criterion criterion);

SparsityMask build_mask(const AffinityMatrix& z_pre, const AllocationPolicy& policy);

// mask (.) z_pre, optionally clamping negative survivors to zero.
Matrix apply_mask(const AffinityMatrix& z_pre, const SparsityMask& mask, bool rectify);

}  // namespace sparsealloc
