#include "sparsealloc/sparsifiers.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "sparsealloc/errors.hpp"

namespace sparsealloc {

namespace {

inline double key_of(double v, Criterion c) {
    return c == Criterion::ByMagnitude ? std::abs(v) : v;
}

// Strict total order: larger key first, then lower index.
struct Ranker {
    const double* keys;
    bool operator()(std::size_t a, std::size_t b) const {
        if (keys[a] != keys[b]) return keys[a] > keys[b];
        return a < b;
    }
};

// Calls emit(i) for each of the k best of keys[0..n) under the strict order above, in
// ascending index order. The k-th best key is found on a plain copy, then ties at that key
// are resolved towards the lowest index.
template <typename Emit>
void select_best(const double* keys, std::size_t n, std::size_t k, std::vector<double>& scratch, Emit emit) {
    if (k == 0) return;
    if (k >= n) {
        for (std::size_t i = 0; i < n; ++i) emit(i);
        return;
    }
    scratch.assign(keys, keys + n);
    std::nth_element(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k - 1), scratch.end(),
                     std::greater<>());
    const double cutoff = scratch[k - 1];
    std::size_t above = 0;
    for (std::size_t i = 0; i < n; ++i) above += keys[i] > cutoff;
    std::size_t ties_left = k - above;
    for (std::size_t i = 0; i < n; ++i) {
        if (keys[i] > cutoff) {
            emit(i);
        } else if (keys[i] == cutoff && ties_left > 0) {
            emit(i);
            --ties_left;
        }
    }
}

}  // namespace

AffinityMatrix::AffinityMatrix(Matrix v) : values(std::move(v)) {
    if (values.rows() < 1 || values.cols() < 1) {
        throw ShapeError("affinity matrix must have at least one token and one feature");
    }
    for (Eigen::Index t = 0; t < values.rows(); ++t) {
        for (Eigen::Index f = 0; f < values.cols(); ++f) {
            if (!std::isfinite(values(t, f))) {
                throw NumericError("non-finite affinity at token " + std::to_string(t) + ", feature " +
                                   std::to_string(f));
            }
        }
    }
}

std::size_t SparsityMask::nnz() const {
    std::size_t n = 0;
    const auto* p = selected.data();
    for (Eigen::Index i = 0; i < selected.size(); ++i) n += p[i];
    return n;
}

std::vector<std::size_t> SparsityMask::row_sums() const {
    std::vector<std::size_t> sums(tokens(), 0);
    for (Eigen::Index t = 0; t < selected.rows(); ++t) {
        for (Eigen::Index f = 0; f < selected.cols(); ++f) sums[t] += selected(t, f);
    }
    return sums;
}

std::vector<std::size_t> SparsityMask::col_sums() const {
    std::vector<std::size_t> sums(features(), 0);
    for (Eigen::Index t = 0; t < selected.rows(); ++t) {
        for (Eigen::Index f = 0; f < selected.cols(); ++f) sums[f] += selected(t, f);
    }
    return sums;
}

std::vector<std::vector<std::size_t>> SparsityMask::row_entries() const {
    std::vector<std::vector<std::size_t>> rows(tokens());
    for (Eigen::Index t = 0; t < selected.rows(); ++t) {
        for (Eigen::Index f = 0; f < selected.cols(); ++f) {
            if (selected(t, f)) rows[t].push_back(static_cast<std::size_t>(f));
        }
    }
    return rows;
}

std::string criterion_name(Criterion c) {
    return c == Criterion::ByMagnitude ? "magnitude" : "value";
}

Criterion parse_criterion(const std::string& name) {
    if (name == "value") return Criterion::ByValue;
    if (name == "magnitude") return Criterion::ByMagnitude;
    throw InvalidArgument("unknown selection criterion '" + name + "' (expected value|magnitude)");
}

std::string policy_name(const AllocationPolicy& policy) {
    struct Visitor {
        std::string operator()(const TokenChoice&) const { return "token_choice"; }
        std::string operator()(const FeatureChoice&) const { return "feature_choice"; }
        std::string operator()(const MutualChoice&) const { return "mutual_choice"; }
        std::string operator()(const ReluBaseline&) const { return "relu"; }
        std::string operator()(const ThresholdGate&) const { return "threshold_gate"; }
    };
    return std::visit(Visitor{}, policy.rule);
}

std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k, Criterion criterion) {
    if (k > values.size()) {
        throw BudgetError(BudgetFault::ExceedsDomain, "top-k budget " + std::to_string(k) +
                                                          " exceeds domain of size " +
                                                          std::to_string(values.size()));
    }
    std::vector<double> keys(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) throw NumericError("top_k_indices: non-finite value at " + std::to_string(i));
        keys[i] = key_of(values[i], criterion);
    }
    std::vector<std::size_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), Ranker{keys.data()});
    idx.resize(k);
    return idx;
}

namespace {

SparsityMask token_choice_mask(const Matrix& z, std::size_t k, Criterion c) {
    const std::size_t B = static_cast<std::size_t>(z.rows());
    const std::size_t F = static_cast<std::size_t>(z.cols());
    if (k > F) {
        throw BudgetError(BudgetFault::ExceedsDomain,
                          "token choice k=" + std::to_string(k) + " exceeds feature count " + std::to_string(F));
    }
    SparsityMask mask{MaskMatrix::Zero(z.rows(), z.cols())};
    std::vector<double> keys(F), scratch;
    for (std::size_t t = 0; t < B; ++t) {
        for (std::size_t f = 0; f < F; ++f) keys[f] = key_of(z(t, f), c);
        select_best(keys.data(), F, k, scratch, [&](std::size_t f) { mask.selected(t, f) = 1; });
    }
    return mask;
}

SparsityMask feature_choice_mask(const Matrix& z, const std::vector<std::size_t>& budgets, Criterion c) {
    const std::size_t B = static_cast<std::size_t>(z.rows());
    const std::size_t F = static_cast<std::size_t>(z.cols());
    if (budgets.size() != F) {
        throw ShapeError("feature choice budgets have length " + std::to_string(budgets.size()) +
                         " but there are " + std::to_string(F) + " features");
    }
    for (std::size_t f = 0; f < F; ++f) {
        if (budgets[f] > B) {
            throw BudgetError(BudgetFault::Infeasible,
                              "feature " + std::to_string(f) + " has budget " + std::to_string(budgets[f]) +
                                  " but the batch holds only " + std::to_string(B) + " tokens");
        }
    }
    SparsityMask mask{MaskMatrix::Zero(z.rows(), z.cols())};
    std::vector<double> keys(B), scratch;
    for (std::size_t f = 0; f < F; ++f) {
        const std::size_t m = budgets[f];
        if (m == 0) continue;
        for (std::size_t t = 0; t < B; ++t) keys[t] = key_of(z(t, f), c);
        select_best(keys.data(), B, m, scratch, [&](std::size_t t) { mask.selected(t, f) = 1; });
    }
    return mask;
}

SparsityMask mutual_choice_mask(const Matrix& z, std::size_t total, Criterion c) {
    const std::size_t n = static_cast<std::size_t>(z.size());
    if (total > n) {
        throw BudgetError(BudgetFault::ExceedsDomain, "mutual choice budget " + std::to_string(total) +
                                                          " exceeds B*F = " + std::to_string(n));
    }
    std::vector<double> keys(n);
    const double* data = z.data();
    for (std::size_t i = 0; i < n; ++i) keys[i] = key_of(data[i], c);
    SparsityMask mask{MaskMatrix::Zero(z.rows(), z.cols())};
    auto* out = mask.selected.data();
    std::vector<double> scratch;
    select_best(keys.data(), n, total, scratch, [&](std::size_t i) { out[i] = 1; });
    return mask;
}

}  // namespace

SparsityMask build_mask(const AffinityMatrix& z_pre, const AllocationPolicy& policy) {
    const Matrix& z = z_pre.values;
    struct Visitor {
        const Matrix& z;
        Criterion c;
        SparsityMask operator()(const TokenChoice& p) const { return token_choice_mask(z, p.k, c); }
        SparsityMask operator()(const FeatureChoice& p) const { return feature_choice_mask(z, p.budgets, c); }
        SparsityMask operator()(const MutualChoice& p) const { return mutual_choice_mask(z, p.total_budget, c); }
        SparsityMask operator()(const ReluBaseline&) const {
            return SparsityMask{(z.array() > 0.0).cast<std::uint8_t>().matrix()};
        }
        SparsityMask operator()(const ThresholdGate& p) const {
            if (p.thresholds.size() != static_cast<std::size_t>(z.cols())) {
                throw ShapeError("threshold table has " + std::to_string(p.thresholds.size()) +
                                 " entries but there are " + std::to_string(z.cols()) + " features");
            }
            SparsityMask mask{MaskMatrix::Zero(z.rows(), z.cols())};
            for (Eigen::Index t = 0; t < z.rows(); ++t) {
                for (Eigen::Index f = 0; f < z.cols(); ++f) {
                    mask.selected(t, f) = z(t, f) > p.thresholds[static_cast<std::size_t>(f)] ? 1 : 0;
                }
            }
            return mask;
        }
    };
    return std::visit(Visitor{z, policy.criterion}, policy.rule);
}

Matrix apply_mask(const AffinityMatrix& z_pre, const SparsityMask& mask, bool rectify) {
    if (mask.selected.rows() != z_pre.values.rows() || mask.selected.cols() != z_pre.values.cols()) {
        throw ShapeError("mask shape " + std::to_string(mask.selected.rows()) + "x" +
                         std::to_string(mask.selected.cols()) + " does not match affinities " +
                         std::to_string(z_pre.values.rows()) + "x" + std::to_string(z_pre.values.cols()));
    }
    Matrix out = Matrix::Zero(z_pre.values.rows(), z_pre.values.cols());
    const auto* m = mask.selected.data();
    const double* z = z_pre.values.data();
    double* o = out.data();
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        if (!m[i]) continue;
        o[i] = (rectify && z[i] < 0.0) ? 0.0 : z[i];
    }
    return out;
}

}  // namespace sparsealloc
