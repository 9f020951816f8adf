#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sparsealloc/sae_model.hpp"

namespace sparsealloc {

struct L0Fvu {
    double mean_l0 = 0.0;        // selected entries per token
    double mean_nonzero = 0.0;   // nonzero codes per token (differs from mean_l0 when rectification zeroes a pick)
    double mse = 0.0;
    // Fraction of variance unexplained: sum |e|^2 / sum |x - mean(x)|^2 over the evaluation set.
    double fvu = 0.0;
};

// Streaming form of l0_and_fvu for evaluation sets too large to keep every trace.
class FvuAccumulator {
public:
    void add(const ForwardTrace& trace);
    std::size_t tokens() const { return tokens_; }
    // Throws NumericError if the evaluated inputs have zero variance.
    L0Fvu result() const;

private:
    std::size_t tokens_ = 0;
    double selected_ = 0.0;
    double nonzeros_ = 0.0;
    double residual_sq_ = 0.0;
    double input_sq_ = 0.0;
    Vector input_sum_;
};

L0Fvu l0_and_fvu(std::span<const ForwardTrace> traces);

// Mean over true dictionary rows of the best cosine similarity with any learned row, clamped at 0.
double recovery_score(const Matrix& w_dec, const Matrix& truth_dictionary);

using ProgressivePoint = std::pair<std::size_t, double>;

// Keep each token's k' largest-magnitude activations, decode and record the MSE.
std::vector<ProgressivePoint> progressive_curve(const SaeParams& params, const Matrix& x,
                                                const AllocationPolicy& policy, std::span<const std::size_t> k_values);

// Same, from an existing trace.
std::vector<ProgressivePoint> progressive_curve(const SaeParams& params, const ForwardTrace& trace,
                                                std::span<const std::size_t> k_values);

struct EvalReport {
    double mean_l0 = 0.0;
    double mean_nonzero = 0.0;
    double mse = 0.0;
    double fvu = 0.0;
    std::size_t dead_count = 0;
    std::size_t dying_count = 0;
    std::optional<double> recovery_score;
    std::map<std::size_t, std::size_t> fpt_histogram;
    std::vector<ProgressivePoint> progressive_curve;
    std::size_t eval_tokens = 0;
    std::string policy;
    // Mean features per token on flagged "easy" rows vs all other rows, when flags are known.
    std::optional<double> easy_rows_mean_fpt;
    std::optional<double> other_rows_mean_fpt;
};

nlohmann::json to_json(const EvalReport& report);

// Contiguous batches of `batch` rows; a trailing partial batch is dropped unless it is the only one.
std::vector<Matrix> split_batches(const Matrix& x, std::size_t batch);

}  // namespace sparsealloc
