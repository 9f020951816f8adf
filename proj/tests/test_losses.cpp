#include <doctest.h>

#include <cmath>
#include <set>

#include "sparsealloc/errors.hpp"
#include "sparsealloc/losses.hpp"

using namespace sparsealloc;

namespace {

ForwardTrace trace_with_residual(const Matrix& e) {
    ForwardTrace tr;
    tr.x_in = e;
    tr.x_hat = Matrix::Zero(e.rows(), e.cols());
    tr.e = e;
    tr.z_pre = Matrix::Zero(e.rows(), 1);
    tr.z = tr.z_pre;
    tr.mask = SparsityMask{MaskMatrix::Zero(e.rows(), 1)};
    return tr;
}

// One token, N=2, F=3. Feature 2 is outside the mask with affinity 2.
struct AuxToy {
    SaeParams params = SaeParams::zeros(3, 2);
    ForwardTrace trace;

    explicit AuxToy(double d0, double d1) {
        params.w_dec << 1, 0, 0, 1, d0, d1;
        Matrix e(1, 2);
        e << 1, 0;
        trace = trace_with_residual(e);
        trace.z_pre = Matrix::Zero(1, 3);
        trace.z_pre(0, 2) = 2.0;
        trace.z = Matrix::Zero(1, 3);
        trace.mask = SparsityMask{MaskMatrix::Zero(1, 3)};
    }
};

}  // namespace

TEST_CASE("mean squared error sums over d_model and averages over tokens") {
    Matrix e(2, 2);
    e << 1, 0, 0, 0;
    CHECK(mse_loss(trace_with_residual(e)) == 0.5);
    CHECK(mse_loss(trace_with_residual(Matrix::Zero(3, 4))) == 0.0);
    Matrix f(1, 2);
    f << 3, 4;
    CHECK(mse_loss(trace_with_residual(f)) == 25.0);
}

TEST_CASE("l1 of the codes") {
    Matrix z(1, 3);
    z << 1, -2, 0;
    CHECK(l1_loss(z) == 3.0);
    CHECK(l1_loss(Matrix::Zero(4, 5)) == 0.0);
}

TEST_CASE("auxiliary reconstruction toy cases") {
    AuxToy aligned(0.5, 0.0);
    CHECK(aux_recon_loss(aligned.trace, aligned.params, {}, 1) == 0.0);
    const AuxReconstruction a = aux_reconstruct(aligned.trace, aligned.params, {2}, 1);
    CHECK(a.e_hat(0, 0) == 1.0);
    CHECK(a.e_hat(0, 1) == 0.0);
    CHECK(a.loss == 0.0);

    AuxToy crossed(0.0, 1.0);
    const AuxReconstruction b = aux_reconstruct(crossed.trace, crossed.params, {2}, 1);
    CHECK(b.e_hat(0, 0) == 0.0);
    CHECK(b.e_hat(0, 1) == 2.0);
    CHECK(b.loss == 5.0);
}

TEST_CASE("aux reconstruction uses the whole set when k_aux exceeds it") {
    AuxToy toy(0.5, 0.0);
    const AuxReconstruction r = aux_reconstruct(toy.trace, toy.params, {0, 2}, 5);
    CHECK(r.truncated);
    CHECK(r.k_used == 2);
    REQUIRE(r.selected.size() == 1);
    CHECK(r.selected[0].size() == 2);
    const std::set<std::size_t> picked{r.selected[0][0].feature, r.selected[0][1].feature};
    CHECK(picked == std::set<std::size_t>{0, 2});
    CHECK(r.loss == 0.0);                  // feature 0 has affinity 0 and contributes nothing
}

TEST_CASE("aux reconstruction with the decoder bias added") {
    AuxToy toy(0.5, 0.0);
    toy.params.b_pre << 0.0, 1.0;
    const AuxReconstruction with_bias = aux_reconstruct(toy.trace, toy.params, {2}, 1, true);
    CHECK(with_bias.e_hat(0, 1) == 1.0);
    CHECK(with_bias.loss == 1.0);
    CHECK(aux_reconstruct(toy.trace, toy.params, {2}, 1, false).loss == 0.0);
}

TEST_CASE("NFM values on small dictionaries") {
    const NfmValues ortho = nfm_losses(Matrix::Identity(2, 2));
    CHECK(ortho.nfm == 0.0);
    CHECK(ortho.nfm_inf == 0.0);

    Matrix w(2, 2);
    const double h = std::sqrt(2.0) / 2.0;
    w << 1, 0, h, h;
    const NfmValues v = nfm_losses(w);
    CHECK(v.nfm == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(v.nfm_inf == doctest::Approx(h).epsilon(1e-12));

    Matrix dup(2, 2);
    dup << 0.6, 0.8, 0.6, 0.8;
    CHECK(nfm_losses(dup).nfm_inf == doctest::Approx(1.0).epsilon(1e-12));

    // nfm_inf averages each row's worst alignment: rows 0 and 1 see 1, row 2 sees 0.6.
    Matrix three(3, 2);
    three << 0.6, 0.8, 0.6, 0.8, 1, 0;
    CHECK(nfm_losses(three).nfm_inf == doctest::Approx(2.6 / 3.0).epsilon(1e-12));

    Matrix zero_row = Matrix::Identity(2, 2);
    zero_row.row(1).setZero();
    CHECK_THROWS(nfm_losses(zero_row));
}

TEST_CASE("NFM gradient matches central differences") {
    Matrix w(4, 3);
    w << 1, 0.2, -0.3, 0.4, 1, 0.1, -0.5, 0.3, 0.9, 0.7, -0.6, 0.2;
    const double ln = 0.3, li = 0.7;
    auto value = [&](const Matrix& m) {
        const NfmValues v = nfm_losses(m);
        return ln * v.nfm + li * v.nfm_inf;
    };
    const Matrix g = nfm_gradient(w, ln, li);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        Matrix p = w, m = w;
        p.data()[i] += h;
        m.data()[i] -= h;
        const double numeric = (value(p) - value(m)) / (2 * h);
        CHECK(g.data()[i] == doctest::Approx(numeric).epsilon(1e-6).scale(1.0));
    }
}

TEST_CASE("total loss combines the weighted terms") {
    Matrix e(2, 2);
    e << 1, 0, 0, 0;
    ForwardTrace tr = trace_with_residual(e);
    SaeParams p = SaeParams::zeros(1, 2);
    p.w_dec << 1, 0;
    LossWeights none;
    none.lambda_aux_k = none.lambda_aux_zipf = none.lambda_nfm = none.lambda_nfm_inf = 0.0;
    CHECK(total_loss(tr, p, none, AuxSets{}).total == 0.5);

    // mse 0.5 and aux_k 0.64: e = [sqrt(0.5), 0], aux reconstruction leaves a residual of length 0.8.
    AuxToy half(0.0, 0.0);
    half.trace.e(0, 0) = std::sqrt(0.5);
    half.params.w_dec(2, 0) = (std::sqrt(0.5) - 0.8) / 2.0;
    LossWeights aux_k_only = none;
    aux_k_only.lambda_aux_k = 1.0 / 32.0;
    aux_k_only.k_aux = 1;
    const LossReport mixed = total_loss(half.trace, half.params, aux_k_only, AuxSets{{2}, {}});
    CHECK(mixed.mse == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(mixed.aux_k == doctest::Approx(0.64).epsilon(1e-14));
    CHECK(mixed.total == doctest::Approx(0.52).epsilon(1e-14));

    AuxToy toy(0.0, 0.8);  // aux residual [1, -1.6], |r|^2 = 3.56
    LossWeights aux_only = none;
    aux_only.lambda_aux_k = 1.0 / 32.0;
    aux_only.k_aux = 1;
    const LossReport r = total_loss(toy.trace, toy.params, aux_only, AuxSets{{2}, {}});
    CHECK(r.mse == 1.0);
    CHECK(r.aux_k == doctest::Approx(3.56));
    CHECK(r.weighted_aux_k == doctest::Approx(3.56 / 32.0));
    CHECK(r.total == doctest::Approx(1.0 + 3.56 / 32.0));
    CHECK(r.aux_zipf == 0.0);
}

TEST_CASE("feature-choice fine-tuning forces auxiliary weights to zero") {
    LossWeights w;
    w.lambda_aux_k = 0.5;
    w.lambda_aux_zipf = 0.25;
    const PhaseWeights primary = apply_phase_rule(w, Phase::Primary);
    CHECK_FALSE(primary.overridden);
    CHECK(primary.weights.lambda_aux_k == 0.5);

    const PhaseWeights fc = apply_phase_rule(w, Phase::FeatureChoiceFinetune);
    CHECK(fc.overridden);
    CHECK(fc.weights.lambda_aux_k == 0.0);
    CHECK(fc.weights.lambda_aux_zipf == 0.0);
    CHECK(fc.weights.lambda_nfm == w.lambda_nfm);

    AuxToy toy(0.0, 1.0);
    const LossReport r = total_loss(toy.trace, toy.params, w, AuxSets{{2}, {2}}, Phase::FeatureChoiceFinetune);
    CHECK(r.aux_weights_overridden);
    CHECK(r.weighted_aux_k == 0.0);
    CHECK(r.weighted_aux_zipf == 0.0);

    LossWeights already_zero = w;
    already_zero.lambda_aux_k = already_zero.lambda_aux_zipf = 0.0;
    CHECK_FALSE(apply_phase_rule(already_zero, Phase::FeatureChoiceFinetune).overridden);
}
