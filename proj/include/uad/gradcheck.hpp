#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "uad/sae.hpp"

namespace uad {

struct GradCheckOptions {
    double step = 1e-5;         // central-difference half step
    double denom_floor = 1e-5;  // epsilon guard in the relative-error denominator
};

// Max over parameters of |candidate - finite_diff| / max(|candidate|,
// |finite_diff|, floor), with central differences of the train-mode batch
// loss. Intended for 64-bit models.
template <typename T>
double sae_grad_compare(SaeModel<T>& model, const Tensor4<T>& x1, const Tensor4<T>& x2, double alpha,
                        const SaeGradients<T>& candidate, GradCheckOptions opt = {}) {
    auto params = trainable_params(model);
    double worst = 0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        for (std::size_t k = 0; k < params[pi].size; ++k) {
            T& w = params[pi].data[k];
            const T saved = w;
            w = saved + static_cast<T>(opt.step);
            const double up = sae_pair_batch_loss(model, x1, x2, alpha);
            w = saved - static_cast<T>(opt.step);
            const double dn = sae_pair_batch_loss(model, x1, x2, alpha);
            w = saved;
            const double fd = (up - dn) / (2.0 * opt.step);
            const double an = static_cast<double>(candidate.g[pi][k]);
            const double denom = std::max({std::abs(an), std::abs(fd), opt.denom_floor});
            worst = std::max(worst, std::abs(an - fd) / denom);
        }
    }
    return worst;
}

// Analytic reverse-mode gradients against central finite differences; returns
// the max relative error over every trainable parameter.
template <typename T>
double sae_grad_check(SaeModel<T>& model, const Tensor4<T>& x1, const Tensor4<T>& x2, double alpha,
                      GradCheckOptions opt = {}) {
    SaeGradients<T> grads = SaeGradients<T>::zero_like(model);
    sae_pair_batch_step(model, x1, x2, alpha, /*update_running=*/false, &grads);
    return sae_grad_compare(model, x1, x2, alpha, grads, opt);
}

}  // namespace uad
