#include "sparsealloc/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sparsealloc/errors.hpp"
#include "sparsealloc/losses.hpp"

namespace sparsealloc {

void FvuAccumulator::add(const ForwardTrace& trace) {
    if (input_sum_.size() == 0) input_sum_ = Vector::Zero(trace.x_in.cols());
    if (trace.x_in.cols() != input_sum_.size()) throw ShapeError("traces disagree on d_model");
    tokens_ += trace.tokens();
    selected_ += static_cast<double>(trace.mask.nnz());
    nonzeros_ += static_cast<double>((trace.z.array() != 0.0).count());
    residual_sq_ += trace.e.squaredNorm();
    input_sq_ += trace.x_in.squaredNorm();
    input_sum_ += trace.x_in.colwise().sum().transpose();
}

L0Fvu FvuAccumulator::result() const {
    if (tokens_ == 0) throw InvalidArgument("evaluation needs at least one trace");
    const double n = static_cast<double>(tokens_);
    const double variance = input_sq_ - input_sum_.squaredNorm() / n;
    if (!(variance > 1e-12 * std::max(1.0, input_sq_))) {
        throw NumericError("evaluation inputs have zero variance; FVU is undefined");
    }
    return L0Fvu{selected_ / n, nonzeros_ / n, residual_sq_ / n, residual_sq_ / variance};
}

L0Fvu l0_and_fvu(std::span<const ForwardTrace> traces) {
    FvuAccumulator acc;
    for (const auto& t : traces) acc.add(t);
    return acc.result();
}

double recovery_score(const Matrix& w_dec, const Matrix& truth_dictionary) {
    if (w_dec.cols() != truth_dictionary.cols()) throw ShapeError("decoder and true dictionary differ in d_model");
    if (truth_dictionary.rows() == 0) return 0.0;
    Matrix learned = w_dec;
    for (Eigen::Index i = 0; i < learned.rows(); ++i) {
        const double n = learned.row(i).norm();
        if (n > 0.0) learned.row(i) /= n;
    }
    Matrix truth = truth_dictionary;
    for (Eigen::Index i = 0; i < truth.rows(); ++i) {
        const double n = truth.row(i).norm();
        if (n > 0.0) truth.row(i) /= n;
    }
    const Matrix cos = truth * learned.transpose();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < cos.rows(); ++i) acc += std::max(0.0, cos.row(i).maxCoeff());
    return acc / static_cast<double>(truth.rows());
}

std::vector<ProgressivePoint> progressive_curve(const SaeParams& params, const ForwardTrace& trace,
                                                std::span<const std::size_t> k_values) {
    if (!std::is_sorted(k_values.begin(), k_values.end())) throw InvalidArgument("k values must be ascending");
    const Eigen::Index B = trace.z.rows();
    // Per token, the nonzero features ordered by decreasing magnitude (ties: lower index).
    std::vector<std::vector<std::size_t>> order(static_cast<std::size_t>(B));
    for (Eigen::Index t = 0; t < B; ++t) {
        auto& o = order[static_cast<std::size_t>(t)];
        for (Eigen::Index f = 0; f < trace.z.cols(); ++f) {
            if (trace.z(t, f) != 0.0) o.push_back(static_cast<std::size_t>(f));
        }
        std::stable_sort(o.begin(), o.end(), [&](std::size_t a, std::size_t b) {
            return std::abs(trace.z(t, a)) > std::abs(trace.z(t, b));
        });
    }
    std::vector<ProgressivePoint> curve;
    curve.reserve(k_values.size());
    Matrix z_trunc = Matrix::Zero(trace.z.rows(), trace.z.cols());
    for (std::size_t k : k_values) {
        z_trunc.setZero();
        for (Eigen::Index t = 0; t < B; ++t) {
            const auto& o = order[static_cast<std::size_t>(t)];
            const std::size_t keep = std::min(k, o.size());
            for (std::size_t j = 0; j < keep; ++j) z_trunc(t, o[j]) = trace.z(t, o[j]);
        }
        // decode() sums in feature-index order, so the untruncated code reproduces forward() exactly.
        const Matrix residual = trace.x_in - decode(params, z_trunc);
        curve.emplace_back(k, B > 0 ? residual.squaredNorm() / static_cast<double>(B) : 0.0);
    }
    return curve;
}

std::vector<ProgressivePoint> progressive_curve(const SaeParams& params, const Matrix& x,
                                                const AllocationPolicy& policy, std::span<const std::size_t> k_values) {
    return progressive_curve(params, forward(params, x, policy), k_values);
}

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json j;
    j["policy"] = r.policy;
    j["eval_tokens"] = r.eval_tokens;
    j["mean_l0"] = r.mean_l0;
    j["mean_nonzero"] = r.mean_nonzero;
    j["mse"] = r.mse;
    j["fvu"] = r.fvu;
    j["fvu_note"] = "fraction of variance unexplained; reported in place of downstream loss recovered";
    j["dead_count"] = r.dead_count;
    j["dying_count"] = r.dying_count;
    j["recovery_score"] = r.recovery_score ? nlohmann::json(*r.recovery_score) : nlohmann::json(nullptr);
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& [k, n] : r.fpt_histogram) hist.push_back({{"features", k}, {"tokens", n}});
    j["fpt_histogram"] = hist;
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& [k, mse] : r.progressive_curve) curve.push_back({{"k", k}, {"mse", mse}});
    j["progressive_curve"] = curve;
    if (r.easy_rows_mean_fpt) j["easy_rows_mean_fpt"] = *r.easy_rows_mean_fpt;
    if (r.other_rows_mean_fpt) j["other_rows_mean_fpt"] = *r.other_rows_mean_fpt;
    return j;
}

std::vector<Matrix> split_batches(const Matrix& x, std::size_t batch) {
    if (batch == 0) throw InvalidArgument("batch size must be positive");
    const auto n = static_cast<std::size_t>(x.rows());
    std::vector<Matrix> out;
    if (n == 0) return out;
    if (n < batch) {
        out.push_back(x);
        return out;
    }
    for (std::size_t begin = 0; begin + batch <= n; begin += batch) {
        out.push_back(x.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(batch)));
    }
    return out;
}

}  // namespace sparsealloc
