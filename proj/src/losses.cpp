#include "sparsealloc/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "sparsealloc/errors.hpp"

namespace sparsealloc {

double mse_loss(const ForwardTrace& trace) {
    if (trace.e.rows() == 0) return 0.0;
    return trace.e.squaredNorm() / static_cast<double>(trace.e.rows());
}

double l1_loss(const Matrix& z) {
    if (z.rows() == 0) return 0.0;
    return z.cwiseAbs().sum() / static_cast<double>(z.rows());
}

AuxReconstruction aux_reconstruct(const ForwardTrace& trace, const SaeParams& params,
                                  const std::vector<std::size_t>& feature_set, std::size_t k_aux,
                                  bool decode_bias) {
    const Eigen::Index B = trace.z_pre.rows();
    const Eigen::Index N = trace.e.cols();
    AuxReconstruction out;
    out.selected.resize(static_cast<std::size_t>(B));
    out.e_hat = Matrix::Zero(B, N);
    if (feature_set.empty() || k_aux == 0) {
        out.residual = trace.e;
        out.loss = 0.0;
        return out;
    }
    for (std::size_t f : feature_set) {
        if (f >= params.features()) throw InvalidArgument("aux feature index " + std::to_string(f) + " out of range");
    }
    out.truncated = k_aux > feature_set.size();
    out.k_used = std::min(k_aux, feature_set.size());

    std::vector<std::size_t> order(feature_set.size());
    for (Eigen::Index t = 0; t < B; ++t) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        auto better = [&](std::size_t a, std::size_t b) {
            const double va = trace.z_pre(t, feature_set[a]);
            const double vb = trace.z_pre(t, feature_set[b]);
            if (va != vb) return va > vb;
            return feature_set[a] < feature_set[b];
        };
        if (out.k_used < order.size()) {
            std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(out.k_used - 1), order.end(),
                             better);
        }
        auto& sel = out.selected[static_cast<std::size_t>(t)];
        for (std::size_t j = 0; j < out.k_used; ++j) {
            const std::size_t f = feature_set[order[j]];
            const double a = std::max(trace.z_pre(t, f), 0.0);
            sel.push_back({f, a});
            if (a != 0.0) out.e_hat.row(t).noalias() += a * params.w_dec.row(f);
        }
        if (decode_bias) out.e_hat.row(t) += params.b_pre.transpose();
    }
    out.residual = trace.e - out.e_hat;
    out.loss = out.residual.squaredNorm() / static_cast<double>(B);
    return out;
}

double aux_recon_loss(const ForwardTrace& trace, const SaeParams& params,
                      const std::vector<std::size_t>& feature_set, std::size_t k_aux) {
    return aux_reconstruct(trace, params, feature_set, k_aux).loss;
}

namespace {

Matrix normalized_rows(const Matrix& w, Vector& norms) {
    norms.resize(w.rows());
    Matrix out = w;
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        norms(i) = w.row(i).norm();
        if (!(norms(i) > 0.0)) throw DegenerateError("decoder row " + std::to_string(i) + " is zero");
        out.row(i) /= norms(i);
    }
    return out;
}

// Index of the largest |G_ij| with j != i; ties go to the lowest j.
Eigen::Index off_diagonal_argmax(const Matrix& gram, Eigen::Index i) {
    Eigen::Index best = -1;
    double best_val = -1.0;
    for (Eigen::Index j = 0; j < gram.cols(); ++j) {
        if (j == i) continue;
        const double v = std::abs(gram(i, j));
        if (v > best_val) {
            best_val = v;
            best = j;
        }
    }
    return best;
}

}  // namespace

NfmValues nfm_losses(const Matrix& w_dec) {
    Vector norms;
    const Matrix w_hat = normalized_rows(w_dec, norms);
    Matrix gram = w_hat * w_hat.transpose();
    gram.diagonal().setZero();
    NfmValues out;
    out.nfm = gram.norm();
    const Eigen::Index F = gram.rows();
    if (F > 1) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < F; ++i) acc += std::abs(gram(i, off_diagonal_argmax(gram, i)));
        out.nfm_inf = acc / static_cast<double>(F);
    }
    return out;
}

Matrix nfm_gradient(const Matrix& w_dec, double lambda_nfm, double lambda_nfm_inf) {
    Matrix grad = Matrix::Zero(w_dec.rows(), w_dec.cols());
    if (lambda_nfm == 0.0 && lambda_nfm_inf == 0.0) return grad;
    Vector norms;
    const Matrix w_hat = normalized_rows(w_dec, norms);
    Matrix gram = w_hat * w_hat.transpose();
    gram.diagonal().setZero();
    const Eigen::Index F = gram.rows();

    Matrix d_gram = Matrix::Zero(F, F);
    const double fro = gram.norm();
    if (lambda_nfm != 0.0 && fro > 0.0) d_gram += (lambda_nfm / fro) * gram;
    if (lambda_nfm_inf != 0.0 && F > 1) {
        const double w = lambda_nfm_inf / static_cast<double>(F);
        for (Eigen::Index i = 0; i < F; ++i) {
            const Eigen::Index j = off_diagonal_argmax(gram, i);
            const double g = gram(i, j);
            d_gram(i, j) += g > 0.0 ? w : (g < 0.0 ? -w : 0.0);
        }
    }
    // G = W_hat W_hat^T  =>  dL/dW_hat = (dG + dG^T) W_hat
    const Matrix d_hat = (d_gram + d_gram.transpose()) * w_hat;
    for (Eigen::Index i = 0; i < F; ++i) {
        const double along = d_hat.row(i).dot(w_hat.row(i));
        grad.row(i) = (d_hat.row(i) - along * w_hat.row(i)) / norms(i);
    }
    return grad;
}

PhaseWeights apply_phase_rule(const LossWeights& weights, Phase phase) {
    PhaseWeights out{weights, false};
    if (phase == Phase::FeatureChoiceFinetune) {
        out.overridden = weights.lambda_aux_k != 0.0 || weights.lambda_aux_zipf != 0.0;
        out.weights.lambda_aux_k = 0.0;
        out.weights.lambda_aux_zipf = 0.0;
    }
    return out;
}

LossReport total_loss(const ForwardTrace& trace, const SaeParams& params, const LossWeights& weights,
                      const AuxSets& aux_sets, Phase phase) {
    const PhaseWeights pw = apply_phase_rule(weights, phase);
    const LossWeights& w = pw.weights;
    LossReport r;
    r.aux_weights_overridden = pw.overridden;
    r.mse = mse_loss(trace);
    r.l1 = l1_loss(trace.z);
    if (w.lambda_aux_k != 0.0) {
        r.aux_k = aux_reconstruct(trace, params, aux_sets.dead, w.k_aux, w.aux_decode_bias).loss;
    }
    if (w.lambda_aux_zipf != 0.0) {
        r.aux_zipf = aux_reconstruct(trace, params, aux_sets.dying, w.k_aux, w.aux_decode_bias).loss;
    }
    if (w.lambda_nfm != 0.0 || w.lambda_nfm_inf != 0.0) {
        const NfmValues n = nfm_losses(params.w_dec);
        r.nfm = n.nfm;
        r.nfm_inf = n.nfm_inf;
    }
    r.weighted_l1 = w.lambda_sparsity * r.l1;
    r.weighted_aux_k = w.lambda_aux_k * r.aux_k;
    r.weighted_aux_zipf = w.lambda_aux_zipf * r.aux_zipf;
    r.weighted_nfm = w.lambda_nfm * r.nfm;
    r.weighted_nfm_inf = w.lambda_nfm_inf * r.nfm_inf;
    r.total = r.mse + r.weighted_l1 + r.weighted_aux_k + r.weighted_aux_zipf + r.weighted_nfm + r.weighted_nfm_inf;
    return r;
}

}  // namespace sparsealloc
