// Hand-derived gradients of total_loss. The selection mask (and each auxiliary top-k
// selection) is held fixed; gradients reach z_pre only through selected entries.

#include <cmath>

#include "sparsealloc/errors.hpp"
#include "sparsealloc/losses.hpp"
#include "sparsealloc/sae_model.hpp"

namespace sparsealloc {

namespace {

// Pushes one auxiliary reconstruction term into the running gradients.
void accumulate_aux(const ForwardTrace& trace, const SaeParams& params, const std::vector<std::size_t>& set,
                    double lambda, const LossWeights& w, Matrix& g_xhat, Matrix& d_zpre, Gradients& g) {
    if (lambda == 0.0 || set.empty() || w.k_aux == 0) return;
    const AuxReconstruction aux = aux_reconstruct(trace, params, set, w.k_aux, w.aux_decode_bias);
    const double scale = 2.0 * lambda / static_cast<double>(trace.tokens());
    // L = lambda/B * sum |e - e_hat|^2 with e = x - x_hat:
    //   dL/dx_hat = -scale * r, dL/de_hat = -scale * r
    g_xhat.noalias() -= scale * aux.residual;
    for (Eigen::Index t = 0; t < aux.residual.rows(); ++t) {
        const auto g_ehat = (-scale * aux.residual.row(t)).eval();
        for (const AuxSelection& s : aux.selected[static_cast<std::size_t>(t)]) {
            const auto f = static_cast<Eigen::Index>(s.feature);
            if (s.activation != 0.0) g.w_dec.row(f).noalias() += s.activation * g_ehat;
            if (trace.z_pre(t, f) > 0.0) d_zpre(t, f) += g_ehat.dot(params.w_dec.row(f));
        }
        if (w.aux_decode_bias) g.b_pre.noalias() += g_ehat.transpose();
    }
}

}  // namespace

Gradients backward(const SaeParams& params, const ForwardTrace& trace, const LossWeights& weights,
                   const AuxSets& aux_sets) {
    const Eigen::Index B = trace.x_in.rows();
    const Eigen::Index F = trace.z_pre.cols();
    Gradients g = Gradients::zeros_like(params);
    if (B == 0) return g;
    const double inv_b = 1.0 / static_cast<double>(B);

    // dMSE/dx_hat
    Matrix g_xhat = (-2.0 * inv_b) * trace.e;
    Matrix d_zpre = Matrix::Zero(B, F);

    accumulate_aux(trace, params, aux_sets.dead, weights.lambda_aux_k, weights, g_xhat, d_zpre, g);
    accumulate_aux(trace, params, aux_sets.dying, weights.lambda_aux_zipf, weights, g_xhat, d_zpre, g);

    // x_hat = z W_dec + b_pre
    g.b_pre.noalias() += g_xhat.colwise().sum().transpose();
    const double l1_scale = weights.lambda_sparsity * inv_b;
    for (Eigen::Index t = 0; t < B; ++t) {
        for (Eigen::Index f = 0; f < F; ++f) {
            if (!trace.mask.selected(t, f)) continue;
            const double z = trace.z(t, f);
            if (z != 0.0) g.w_dec.row(f).noalias() += z * g_xhat.row(t);
            const bool passes = !trace.rectify || trace.z_pre(t, f) > 0.0;
            if (!passes) continue;
            double dz = g_xhat.row(t).dot(params.w_dec.row(f));
            if (l1_scale != 0.0 && z != 0.0) dz += z > 0.0 ? l1_scale : -l1_scale;
            d_zpre(t, f) += dz;
        }
    }

    // z_pre = (x - b_pre) W_enc^T + b_enc
    g.b_enc = d_zpre.colwise().sum().transpose();
    Vector d_bpre_from_enc = Vector::Zero(params.d_model());
    for (Eigen::Index t = 0; t < B; ++t) {
        const auto xc = (trace.x_in.row(t) - params.b_pre.transpose()).eval();
        for (Eigen::Index f = 0; f < F; ++f) {
            const double d = d_zpre(t, f);
            if (d == 0.0) continue;
            g.w_enc.row(f).noalias() += d * xc;
            d_bpre_from_enc.noalias() += d * params.w_enc.row(f).transpose();
        }
    }
    g.b_pre -= d_bpre_from_enc;

    if (weights.lambda_nfm != 0.0 || weights.lambda_nfm_inf != 0.0) {
        g.w_dec += nfm_gradient(params.w_dec, weights.lambda_nfm, weights.lambda_nfm_inf);
    }
    if (!g.all_finite()) throw NumericError("non-finite gradient");
    return g;
}

}  // namespace sparsealloc
