#include "sparsealloc/sae_model.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "sparsealloc/errors.hpp"

namespace sparsealloc {

SaeParams SaeParams::zeros(std::size_t features, std::size_t d_model) {
    const auto F = static_cast<Eigen::Index>(features);
    const auto N = static_cast<Eigen::Index>(d_model);
    return SaeParams{Matrix::Zero(F, N), Vector::Zero(F), Matrix::Zero(F, N), Vector::Zero(N)};
}

SaeParams SaeParams::initialize(std::size_t features, std::size_t d_model, std::uint64_t seed) {
    if (features == 0 || d_model == 0) throw InvalidArgument("SAE dimensions must be positive");
    SaeParams p = zeros(features, d_model);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index f = 0; f < p.w_dec.rows(); ++f) {
        double norm = 0.0;
        while (norm == 0.0) {
            for (Eigen::Index j = 0; j < p.w_dec.cols(); ++j) p.w_dec(f, j) = normal(rng);
            norm = p.w_dec.row(f).norm();
        }
        p.w_dec.row(f) /= norm;
    }
    p.w_enc = 0.1 * p.w_dec;
    return p;
}

Gradients Gradients::zeros_like(const SaeParams& p) {
    return Gradients{Matrix::Zero(p.w_enc.rows(), p.w_enc.cols()), Vector::Zero(p.b_enc.size()),
                     Matrix::Zero(p.w_dec.rows(), p.w_dec.cols()), Vector::Zero(p.b_pre.size())};
}

double Gradients::squared_norm() const {
    return w_enc.squaredNorm() + b_enc.squaredNorm() + w_dec.squaredNorm() + b_pre.squaredNorm();
}

double Gradients::global_norm() const { return std::sqrt(squared_norm()); }

bool Gradients::all_finite() const {
    return w_enc.allFinite() && b_enc.allFinite() && w_dec.allFinite() && b_pre.allFinite();
}

Gradients& Gradients::operator+=(const Gradients& other) {
    w_enc += other.w_enc;
    b_enc += other.b_enc;
    w_dec += other.w_dec;
    b_pre += other.b_pre;
    return *this;
}

Gradients& Gradients::operator*=(double s) {
    w_enc *= s;
    b_enc *= s;
    w_dec *= s;
    b_pre *= s;
    return *this;
}

Matrix preprocess(const Matrix& x_raw) {
    if (x_raw.cols() < 2) throw ShapeError("preprocessing needs d_model >= 2");
    Matrix out = x_raw;
    for (Eigen::Index t = 0; t < out.rows(); ++t) {
        auto row = out.row(t);
        if (!row.allFinite()) throw NumericError("row " + std::to_string(t) + " contains non-finite values");
        const double scale = std::max(1.0, row.cwiseAbs().maxCoeff());
        row.array() -= row.mean();
        const double norm = row.norm();
        if (norm <= 1e-12 * scale) {
            throw DegenerateError("row " + std::to_string(t) + " is constant (zero vector after centering)");
        }
        row /= norm;
    }
    return out;
}

Matrix decode(const SaeParams& params, const Matrix& z) {
    Matrix x_hat = params.b_pre.transpose().replicate(z.rows(), 1);
    for (Eigen::Index t = 0; t < z.rows(); ++t) {
        for (Eigen::Index f = 0; f < z.cols(); ++f) {
            const double a = z(t, f);
            if (a != 0.0) x_hat.row(t).noalias() += a * params.w_dec.row(f);
        }
    }
    return x_hat;
}

ForwardTrace forward(const SaeParams& params, const Matrix& x, const AllocationPolicy& policy) {
    if (static_cast<std::size_t>(x.cols()) != params.d_model()) {
        throw ShapeError("input has " + std::to_string(x.cols()) + " columns, model expects " +
                         std::to_string(params.d_model()));
    }
    ForwardTrace tr;
    tr.x_in = x;
    tr.rectify = policy.rectify;
    const Matrix centred = x.rowwise() - params.b_pre.transpose();
    Matrix z_pre(x.rows(), params.w_enc.rows());
    z_pre.noalias() = centred * params.w_enc.transpose();
    z_pre.rowwise() += params.b_enc.transpose();
    AffinityMatrix affinities(std::move(z_pre));
    tr.mask = build_mask(affinities, policy);
    tr.z = apply_mask(affinities, tr.mask, policy.rectify);
    tr.z_pre = std::move(affinities.values);
    tr.x_hat = decode(params, tr.z);
    if (!tr.x_hat.allFinite()) {
        for (Eigen::Index t = 0; t < tr.x_hat.rows(); ++t) {
            if (!tr.x_hat.row(t).allFinite()) {
                throw NumericError("non-finite reconstruction for token " + std::to_string(t));
            }
        }
    }
    tr.e = tr.x_in - tr.x_hat;
    return tr;
}

void renormalize_decoder(SaeParams& params) {
    for (Eigen::Index f = 0; f < params.w_dec.rows(); ++f) {
        const double norm = params.w_dec.row(f).norm();
        if (!(norm > 0.0) || !std::isfinite(norm)) {
            throw DegenerateError("decoder row " + std::to_string(f) + " has zero or non-finite norm");
        }
        params.w_dec.row(f) /= norm;
    }
}

void project_decoder_grads(Gradients& grads, const SaeParams& params) {
    for (Eigen::Index f = 0; f < params.w_dec.rows(); ++f) {
        const auto row = params.w_dec.row(f);
        const double n2 = row.squaredNorm();
        if (!(n2 > 0.0)) throw DegenerateError("decoder row " + std::to_string(f) + " is zero");
        const double along = grads.w_dec.row(f).dot(row) / n2;
        grads.w_dec.row(f) -= along * row;
    }
}

ThresholdTable calibrate_thresholds(const SaeParams& params, const AllocationPolicy& policy,
                                    std::span<const Matrix> calibration_batches) {
    if (calibration_batches.empty()) throw InvalidArgument("threshold calibration needs at least one batch");
    if (!std::holds_alternative<FeatureChoice>(policy.rule) && !std::holds_alternative<MutualChoice>(policy.rule)) {
        throw InvalidArgument("thresholds are calibrated from a batch-mode policy (feature or mutual choice)");
    }
    ThresholdTable table{std::vector<double>(params.features(), std::numeric_limits<double>::infinity())};
    for (const Matrix& batch : calibration_batches) {
        const ForwardTrace tr = forward(params, batch, policy);
        for (Eigen::Index t = 0; t < tr.z.rows(); ++t) {
            for (Eigen::Index f = 0; f < tr.z.cols(); ++f) {
                const double a = tr.z(t, f);
                if (a > 0.0 && a < table.theta[f]) table.theta[f] = a;
            }
        }
    }
    // The gate is strict, so step just below the smallest calibrated activation.
    for (double& theta : table.theta) {
        if (std::isfinite(theta)) theta = std::nextafter(theta, -std::numeric_limits<double>::infinity());
    }
    return table;
}

ForwardTrace forward_streaming(const SaeParams& params, const Matrix& x, const ThresholdTable& thresholds,
                               bool rectify) {
    AllocationPolicy gate{ThresholdGate{thresholds.theta}, Criterion::ByValue, rectify};
    return forward(params, x, gate);
}

}  // namespace sparsealloc
