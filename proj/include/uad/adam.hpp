#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "uad/parallel.hpp"

namespace uad {

// Adam with bias-corrected moments; defaults beta1=0.9, beta2=0.999, lr=1e-3,
// eps=1e-8. Moments are stored flat over the concatenation of all parameter
// arrays so one state can serve a multi-tensor model.
template <typename T>
struct AdamState {
    std::int64_t step_count = 0;
    T beta1 = T(0.9), beta2 = T(0.999), lr = T(1e-3), eps = T(1e-8);
    std::vector<T> first_moment, second_moment;

    explicit AdamState(std::size_t param_count = 0)
        : first_moment(param_count, T{0}), second_moment(param_count, T{0}) {}
};

template <typename T>
void adam_begin_step(AdamState<T>& state) {
    state.step_count += 1;
}

// Updates one parameter segment whose moments live at [offset, offset+n).
// step_count must already be advanced for the current optimizer step.
template <typename T>
void adam_apply_segment(std::span<T> params, std::span<const T> grads, AdamState<T>& state,
                        std::size_t offset, int threads = 1) {
    if (params.size() != grads.size() || offset + params.size() > state.first_moment.size())
        throw std::invalid_argument("adam: parameter/gradient/state size mismatch");
    if (state.step_count < 1) throw std::invalid_argument("adam: step not started");
    for (const T g : grads)
        if (!std::isfinite(static_cast<double>(g)))
            throw std::runtime_error("adam: non-finite gradient");
    const T b1 = state.beta1, b2 = state.beta2;
    const T bc1 = T(1) - std::pow(b1, static_cast<T>(state.step_count));
    const T bc2 = T(1) - std::pow(b2, static_cast<T>(state.step_count));
    parallel_for_chunks(params.size(), threads, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            const T g = grads[i];
            T& m = state.first_moment[offset + i];
            T& v = state.second_moment[offset + i];
            m = b1 * m + (T(1) - b1) * g;
            v = b2 * v + (T(1) - b2) * g * g;
            const T mhat = m / bc1;
            const T vhat = v / bc2;
            params[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    });
}

// Single-tensor convenience: advances the step and applies the update.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, int threads = 1) {
    if (params.size() != state.first_moment.size())
        throw std::invalid_argument("adam_step: state sized for a different parameter count");
    adam_begin_step(state);
    adam_apply_segment(params, grads, state, 0, threads);
}

}  // namespace uad
