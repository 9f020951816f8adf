#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sparsealloc/sparsifiers.hpp"
#include "sparsealloc/types.hpp"

namespace sparsealloc {

struct LossWeights;
struct AuxSets;

// Encoder z_pre = (x - b_pre) W_enc^T + b_enc, decoder x_hat = z W_dec + b_pre.
// Both weight matrices are stored F x N; every W_dec row has unit norm.
struct SaeParams {
    Matrix w_enc;
    Vector b_enc;
    Matrix w_dec;
    Vector b_pre;

    std::size_t features() const { return static_cast<std::size_t>(w_dec.rows()); }
    std::size_t d_model() const { return static_cast<std::size_t>(w_dec.cols()); }

    // Gaussian decoder rows normalised to unit length, W_enc = 0.1 W_dec, zero biases.
    static SaeParams initialize(std::size_t features, std::size_t d_model, std::uint64_t seed);
    static SaeParams zeros(std::size_t features, std::size_t d_model);
};

// Same block layout as SaeParams.
struct Gradients {
    Matrix w_enc;
    Vector b_enc;
    Matrix w_dec;
    Vector b_pre;

    static Gradients zeros_like(const SaeParams& p);

    double squared_norm() const;
    double global_norm() const;
    bool all_finite() const;
    Gradients& operator+=(const Gradients& other);
    Gradients& operator*=(double s);
};

struct ForwardTrace {
    Matrix x_in;    // B x N, preprocessed
    Matrix z_pre;   // B x F affinities
    SparsityMask mask;
    Matrix z;       // B x F sparse codes
    Matrix x_hat;   // B x N
    Matrix e;       // x_in - x_hat
    bool rectify = true;

    std::size_t tokens() const { return static_cast<std::size_t>(x_in.rows()); }
};

struct ThresholdTable {
    std::vector<double> theta;  // +inf: feature never fires in streaming mode
};

// Centre each row over d_model and scale it to unit L2 norm.
// Throws DegenerateError naming the first row that is constant.
Matrix preprocess(const Matrix& x_raw);

ForwardTrace forward(const SaeParams& params, const Matrix& x, const AllocationPolicy& policy);

// Gradient of total_loss with the mask held fixed; see losses.hpp for the loss terms.
Gradients backward(const SaeParams& params, const ForwardTrace& trace, const LossWeights& weights,
                   const AuxSets& aux_sets);

void renormalize_decoder(SaeParams& params);
// Removes from each W_dec gradient row its component along the matching decoder row.
void project_decoder_grads(Gradients& grads, const SaeParams& params);

ThresholdTable calibrate_thresholds(const SaeParams& params, const AllocationPolicy& policy,
                                    std::span<const Matrix> calibration_batches);

ForwardTrace forward_streaming(const SaeParams& params, const Matrix& x, const ThresholdTable& thresholds,
                               bool rectify = true);

// x_hat = z W_dec + b_pre using only the nonzeros of z.
Matrix decode(const SaeParams& params, const Matrix& z);

}  // namespace sparsealloc
