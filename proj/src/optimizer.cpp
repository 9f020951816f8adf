#include "sparsealloc/optimizer.hpp"

#include <cmath>

#include "sparsealloc/errors.hpp"

namespace sparsealloc {

AdamWState AdamWState::for_params(const SaeParams& params, const AdamWConfig& config) {
    return AdamWState{config, Gradients::zeros_like(params), Gradients::zeros_like(params), 0};
}

double clip_gradients(Gradients& grads, double clip_norm) {
    if (!(clip_norm > 0.0)) throw InvalidArgument("clip norm must be positive");
    const double norm = grads.global_norm();
    if (norm > clip_norm) grads *= clip_norm / norm;
    return norm;
}

void adamw_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                  std::span<double> v, std::uint64_t step, const AdamWConfig& c, bool decay) {
    if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
        throw ShapeError("adamw parameter/gradient/moment size mismatch");
    }
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
    const double wd = decay ? c.weight_decay : 0.0;
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        param[i] -= c.lr * (m_hat / (std::sqrt(v_hat) + c.epsilon) + wd * param[i]);
    }
}

namespace {

template <typename Block>
std::span<double> flat(Block& b) {
    return {b.data(), static_cast<std::size_t>(b.size())};
}

template <typename Block>
std::span<const double> flat_const(const Block& b) {
    return {b.data(), static_cast<std::size_t>(b.size())};
}

}  // namespace

void adamw_step(AdamWState& state, SaeParams& params, const Gradients& grads) {
    ++state.t;
    const auto& c = state.config;
    adamw_update(flat(params.w_enc), flat_const(grads.w_enc), flat(state.m.w_enc), flat(state.v.w_enc), state.t, c,
                 true);
    adamw_update(flat(params.b_enc), flat_const(grads.b_enc), flat(state.m.b_enc), flat(state.v.b_enc), state.t, c,
                 false);
    adamw_update(flat(params.w_dec), flat_const(grads.w_dec), flat(state.m.w_dec), flat(state.v.w_dec), state.t, c,
                 false);
    adamw_update(flat(params.b_pre), flat_const(grads.b_pre), flat(state.m.b_pre), flat(state.v.b_pre), state.t, c,
                 false);
    renormalize_decoder(params);
}

double scaled_lr(double base_lr, double n, double n_ref) {
    if (!(base_lr > 0.0) || !(n > 0.0) || !(n_ref > 0.0)) throw InvalidArgument("scaled_lr needs positive inputs");
    return base_lr * std::sqrt(n / n_ref);
}

}  // namespace sparsealloc
