#pragma once

#include <cstddef>
#include <vector>

#include "sparsealloc/sae_model.hpp"

namespace sparsealloc {

// Every term is a mean over the batch.
struct LossWeights {
    double lambda_sparsity = 0.0;
    double lambda_aux_k = 1.0 / 32.0;
    double lambda_aux_zipf = 1.0 / 32.0;
    double lambda_nfm = 1e-3;
    double lambda_nfm_inf = 1e-3;
    std::size_t k_aux = 32;
    // Add b_pre to the auxiliary reconstruction of the residual. Off by default.
    bool aux_decode_bias = false;
};

struct AuxSets {
    std::vector<std::size_t> dead;
    std::vector<std::size_t> dying;
};

enum class Phase { Primary, FeatureChoiceFinetune };

struct LossReport {
    double mse = 0.0;
    double l1 = 0.0;
    double aux_k = 0.0;
    double aux_zipf = 0.0;
    double nfm = 0.0;
    double nfm_inf = 0.0;

    double weighted_l1 = 0.0;
    double weighted_aux_k = 0.0;
    double weighted_aux_zipf = 0.0;
    double weighted_nfm = 0.0;
    double weighted_nfm_inf = 0.0;

    double total = 0.0;
    bool aux_weights_overridden = false;
};

double mse_loss(const ForwardTrace& trace);
double l1_loss(const Matrix& z);

struct AuxSelection {
    std::size_t feature;
    double activation;  // rectified affinity
};

// Residual reconstruction through the top-k_aux affinities inside one feature set.
struct AuxReconstruction {
    std::vector<std::vector<AuxSelection>> selected;  // per token
    Matrix e_hat;
    Matrix residual;  // e - e_hat
    double loss = 0.0;
    std::size_t k_used = 0;
    bool truncated = false;  // k_aux exceeded the set size; the whole set was used
};

AuxReconstruction aux_reconstruct(const ForwardTrace& trace, const SaeParams& params,
                                  const std::vector<std::size_t>& feature_set, std::size_t k_aux,
                                  bool decode_bias = false);

double aux_recon_loss(const ForwardTrace& trace, const SaeParams& params,
                      const std::vector<std::size_t>& feature_set, std::size_t k_aux);

struct NfmValues {
    double nfm = 0.0;
    double nfm_inf = 0.0;
};

// Off-diagonal alignment of the row-normalised decoder Gram matrix.
NfmValues nfm_losses(const Matrix& w_dec);

// d(lambda_nfm * nfm + lambda_nfm_inf * nfm_inf) / d W_dec, through the row normalisation.
Matrix nfm_gradient(const Matrix& w_dec, double lambda_nfm, double lambda_nfm_inf);

struct PhaseWeights {
    LossWeights weights;
    bool overridden = false;
};

// The feature-choice fine-tuning phase trains without auxiliary terms.
PhaseWeights apply_phase_rule(const LossWeights& weights, Phase phase);

LossReport total_loss(const ForwardTrace& trace, const SaeParams& params, const LossWeights& weights,
                      const AuxSets& aux_sets, Phase phase = Phase::Primary);

}  // namespace sparsealloc
