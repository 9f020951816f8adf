#pragma once

#include <cstdint>
#include <span>

#include "sparsealloc/sae_model.hpp"

namespace sparsealloc {

struct AdamWConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 1e-5;
    double clip_norm = 1.0;
};

// Moments share the parameter block layout. Only W_enc is weight-decayed: biases are
// exempt and W_dec rows are renormalised after every step.
struct AdamWState {
    AdamWConfig config;
    Gradients m;
    Gradients v;
    std::uint64_t t = 0;

    static AdamWState for_params(const SaeParams& params, const AdamWConfig& config);
};

// Scales all blocks by clip_norm / g when the global norm g exceeds clip_norm.
// Returns the norm before clipping.
double clip_gradients(Gradients& grads, double clip_norm);

// One decoupled AdamW update of a flat block; `step` is the 1-based step count.
void adamw_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                  std::span<double> v, std::uint64_t step, const AdamWConfig& config, bool decay);

// Updates every block, advances t, then renormalises the decoder rows.
void adamw_step(AdamWState& state, SaeParams& params, const Gradients& grads);

// base_lr * sqrt(n / n_ref)
double scaled_lr(double base_lr, double n, double n_ref);

}  // namespace sparsealloc
