// Reference oracles shared by the unit tests and the acceptance suite.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "sparsealloc/losses.hpp"
#include "sparsealloc/sae_model.hpp"
#include "sparsealloc/sparsifiers.hpp"

namespace support {

using namespace sparsealloc;

inline double criterion_key(double v, Criterion c) { return c == Criterion::ByMagnitude ? std::abs(v) : v; }

// Full sort (key descending, index ascending), keep the first k.
inline std::vector<std::size_t> sorted_prefix(const std::vector<double>& vals, std::size_t k, Criterion c) {
    std::vector<std::size_t> idx(vals.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const double ka = criterion_key(vals[a], c), kb = criterion_key(vals[b], c);
        return ka != kb ? ka > kb : a < b;
    });
    idx.resize(k);
    return idx;
}

inline MaskMatrix oracle_token_choice(const Matrix& z, std::size_t k, Criterion c) {
    MaskMatrix m = MaskMatrix::Zero(z.rows(), z.cols());
    for (Eigen::Index t = 0; t < z.rows(); ++t) {
        std::vector<double> row(z.row(t).data(), z.row(t).data() + z.cols());
        for (std::size_t f : sorted_prefix(row, k, c)) m(t, static_cast<Eigen::Index>(f)) = 1;
    }
    return m;
}

inline MaskMatrix oracle_feature_choice(const Matrix& z, const std::vector<std::size_t>& budgets, Criterion c) {
    MaskMatrix m = MaskMatrix::Zero(z.rows(), z.cols());
    for (Eigen::Index f = 0; f < z.cols(); ++f) {
        std::vector<double> col(static_cast<std::size_t>(z.rows()));
        for (Eigen::Index t = 0; t < z.rows(); ++t) col[static_cast<std::size_t>(t)] = z(t, f);
        for (std::size_t t : sorted_prefix(col, budgets[static_cast<std::size_t>(f)], c)) {
            m(static_cast<Eigen::Index>(t), f) = 1;
        }
    }
    return m;
}

inline MaskMatrix oracle_mutual_choice(const Matrix& z, std::size_t total, Criterion c) {
    MaskMatrix m = MaskMatrix::Zero(z.rows(), z.cols());
    std::vector<double> flat(z.data(), z.data() + z.size());
    for (std::size_t i : sorted_prefix(flat, total, c)) m.data()[i] = 1;
    return m;
}

enum class GradPolicy { TokenChoice, FeatureChoice, MutualChoice };

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;  // coordinates whose perturbation crossed a selection boundary
};

// Every discrete choice the loss makes: the mask, which selected affinities pass the
// rectifier, and each auxiliary top-k pick with its rectifier state.
inline std::vector<std::int64_t> decision_signature(const ForwardTrace& tr, const SaeParams& p, const AuxSets& aux,
                                                    const LossWeights& w) {
    std::vector<std::int64_t> sig;
    for (Eigen::Index i = 0; i < tr.mask.selected.size(); ++i) {
        sig.push_back(tr.mask.selected.data()[i]);
        if (tr.mask.selected.data()[i]) sig.push_back(tr.z_pre.data()[i] > 0.0);
    }
    for (const auto* set : {&aux.dead, &aux.dying}) {
        const AuxReconstruction r = aux_reconstruct(tr, p, *set, w.k_aux, w.aux_decode_bias);
        for (const auto& picks : r.selected) {
            for (const auto& s : picks) {
                sig.push_back(static_cast<std::int64_t>(s.feature));
                sig.push_back(s.activation > 0.0);
            }
        }
    }
    return sig;
}

// Analytic gradient vs central differences (h = 1e-5) with every loss term switched on.
// N=8, F=16, B=4.
inline GradCheckResult gradient_check(std::uint64_t seed, GradPolicy kind) {
    constexpr std::size_t N = 8, F = 16, B = 4;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;

    SaeParams p = SaeParams::initialize(F, N, seed + 1000);
    for (Eigen::Index i = 0; i < p.w_enc.size(); ++i) p.w_enc.data()[i] = 0.5 * normal(rng);
    for (Eigen::Index i = 0; i < p.b_enc.size(); ++i) p.b_enc(i) = 0.1 * normal(rng);
    for (Eigen::Index i = 0; i < p.b_pre.size(); ++i) p.b_pre(i) = 0.1 * normal(rng);
    Matrix raw(B, N);
    for (Eigen::Index i = 0; i < raw.size(); ++i) raw.data()[i] = normal(rng);
    const Matrix x = preprocess(raw);

    AllocationPolicy policy;
    switch (kind) {
    case GradPolicy::TokenChoice: policy.rule = TokenChoice{3}; break;
    case GradPolicy::MutualChoice: policy.rule = MutualChoice{12}; break;
    case GradPolicy::FeatureChoice: {
        std::vector<std::size_t> budgets(F);
        for (auto& m : budgets) m = std::uniform_int_distribution<std::size_t>(1, 2)(rng);
        policy.rule = FeatureChoice{budgets};
        break;
    }
    }

    LossWeights w;
    w.lambda_sparsity = 0.05;
    w.lambda_aux_k = 0.5;
    w.lambda_aux_zipf = 0.25;
    w.lambda_nfm = 0.1;
    w.lambda_nfm_inf = 0.2;
    w.k_aux = 2;
    w.aux_decode_bias = seed % 2 == 1;
    const AuxSets aux{{1, 4, 7, 10, 13}, {2, 5, 8, 11, 14, 15}};

    auto loss_at = [&](const SaeParams& q, std::vector<std::int64_t>* sig) {
        const ForwardTrace tr = forward(q, x, policy);
        if (sig) *sig = decision_signature(tr, q, aux, w);
        return total_loss(tr, q, w, aux, Phase::Primary).total;
    };

    const ForwardTrace base = forward(p, x, policy);
    const Gradients g = backward(p, base, w, aux);
    std::vector<std::int64_t> base_sig;
    loss_at(p, &base_sig);

    GradCheckResult res;
    const double h = 1e-5;
    auto probe = [&](double& slot, double analytic) {
        const double keep = slot;
        std::vector<std::int64_t> sp, sm;
        slot = keep + h;
        const double lp = loss_at(p, &sp);
        slot = keep - h;
        const double lm = loss_at(p, &sm);
        slot = keep;
        if (sp != base_sig || sm != base_sig) {
            ++res.skipped;
            return;
        }
        const double numeric = (lp - lm) / (2.0 * h);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        res.max_rel_error = std::max(res.max_rel_error, std::abs(analytic - numeric) / denom);
        ++res.checked;
    };
    for (Eigen::Index i = 0; i < p.w_enc.size(); ++i) probe(p.w_enc.data()[i], g.w_enc.data()[i]);
    for (Eigen::Index i = 0; i < p.b_enc.size(); ++i) probe(p.b_enc(i), g.b_enc(i));
    for (Eigen::Index i = 0; i < p.w_dec.size(); ++i) probe(p.w_dec.data()[i], g.w_dec.data()[i]);
    for (Eigen::Index i = 0; i < p.b_pre.size(); ++i) probe(p.b_pre(i), g.b_pre(i));
    return res;
}

}  // namespace support
