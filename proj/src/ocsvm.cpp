#include "uad/ocsvm.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace uad {

double rbf_kernel(std::span<const double> a, std::span<const double> b, double gamma) {
    if (a.size() != b.size())
        throw std::invalid_argument("rbf_kernel: vector lengths differ (" + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()) + ")");
    if (!(gamma > 0)) throw std::invalid_argument("rbf_kernel: gamma must be positive");
    double d2 = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        d2 += d * d;
    }
    return std::exp(-gamma * d2);
}

double auto_gamma(const std::vector<std::vector<double>>& latents) {
    const std::size_t n = latents.size();
    if (n < 2) throw std::invalid_argument("auto_gamma: need at least 2 vectors");
    const std::size_t d = latents[0].size();
    double total_var = 0;
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0;
        for (const auto& z : latents) {
            if (z.size() != d) throw std::invalid_argument("auto_gamma: inconsistent dimensions");
            mean += z[j];
        }
        mean /= static_cast<double>(n);
        double var = 0;
        for (const auto& z : latents) {
            const double dv = z[j] - mean;
            var += dv * dv;
        }
        total_var += var / static_cast<double>(n);
    }
    if (!(total_var > 0))
        throw std::invalid_argument("auto_gamma: zero variance in the training set");
    // gamma = 1 / (d * mean per-dimension variance) = 1 / total variance
    return 1.0 / total_var;
}

namespace {

// Full kernel matrix cache; 2 MB at the paper's n = 500.
std::vector<double> build_gram(const std::vector<std::vector<double>>& z, double gamma) {
    const std::size_t n = z.size();
    std::vector<double> q(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        q[i * n + i] = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = rbf_kernel(z[i], z[j], gamma);
            q[i * n + j] = v;
            q[j * n + i] = v;
        }
    }
    return q;
}

}  // namespace

OcsvmFit fit_ocsvm_detailed(const std::vector<std::vector<double>>& latents, double nu, double gamma,
                            const SolverConfig& solver) {
    const int n = static_cast<int>(latents.size());
    if (n < 2) throw std::invalid_argument("fit_ocsvm: need at least 2 training points");
    if (!(nu > 0.0 && nu <= 1.0)) throw std::invalid_argument("fit_ocsvm: nu must be in (0, 1]");
    if (!(gamma > 0)) throw std::invalid_argument("fit_ocsvm: gamma must be positive");
    const std::size_t d = latents[0].size();
    for (const auto& z : latents)
        if (z.size() != d) throw std::invalid_argument("fit_ocsvm: inconsistent dimensions");

    const double c_up = 1.0 / (nu * n);
    const std::vector<double> q = build_gram(latents, gamma);
    auto qv = [&q, n](int i, int j) { return q[static_cast<std::size_t>(i) * n + j]; };

    // libsvm-style feasible start: floor(nu*n) coefficients at the upper
    // bound, the remainder on the next coefficient.
    std::vector<double> alpha(n, 0.0);
    {
        const int full = static_cast<int>(nu * n);
        for (int i = 0; i < full; ++i) alpha[i] = c_up;
        if (full < n) alpha[full] = 1.0 - full * c_up;
    }

    std::vector<double> grad(n, 0.0);  // grad_i = (Q alpha)_i
    auto recompute_grad = [&] {
        for (int i = 0; i < n; ++i) {
            double s = 0;
            for (int j = 0; j < n; ++j)
                if (alpha[j] > 0) s += qv(i, j) * alpha[j];
            grad[i] = s;
        }
    };
    recompute_grad();

    const double bound_slack = c_up * 1e-12;
    auto violating_pair = [&](int& i, int& j) {
        i = -1;
        j = -1;
        double gmin = 0, gmax = 0;
        for (int k = 0; k < n; ++k) {
            if (alpha[k] < c_up - bound_slack && (i < 0 || grad[k] < gmin)) {
                gmin = grad[k];
                i = k;
            }
            if (alpha[k] > bound_slack && (j < 0 || grad[k] > gmax)) {
                gmax = grad[k];
                j = k;
            }
        }
        return (i >= 0 && j >= 0) ? gmax - gmin : 0.0;
    };

    std::int64_t it = 0;
    double residual = 0;
    // Incremental gradient updates drift slightly over many pair steps, so
    // declare convergence only after a pass with freshly recomputed grads.
    for (bool exact_pass = false;;) {
        int i, j;
        residual = violating_pair(i, j);
        if (i < 0 || j < 0 || residual <= solver.tolerance) {
            if (exact_pass) break;
            recompute_grad();
            exact_pass = true;
            continue;
        }
        exact_pass = false;
        if (it >= solver.max_iterations)
            throw std::runtime_error("fit_ocsvm: no convergence after " + std::to_string(it) +
                                     " iterations, KKT residual " + std::to_string(residual));
        ++it;
        double eta = qv(i, i) + qv(j, j) - 2.0 * qv(i, j);
        if (eta < 1e-12) eta = 1e-12;
        double t = (grad[j] - grad[i]) / eta;
        t = std::min(t, c_up - alpha[i]);
        t = std::min(t, alpha[j]);
        alpha[i] += t;
        alpha[j] -= t;
        if (c_up - alpha[i] < bound_slack) alpha[i] = c_up;
        if (alpha[j] < bound_slack) alpha[j] = 0.0;
        for (int k = 0; k < n; ++k) grad[k] += t * (qv(i, k) - qv(j, k));
    }

    // rho: average decision value over interior support vectors; if none
    // exist, the largest (Q alpha)_i over the support.
    const double interior_slack = c_up * 1e-8;
    double rho = 0;
    int interior = 0;
    for (int k = 0; k < n; ++k) {
        if (alpha[k] > interior_slack && alpha[k] < c_up - interior_slack) {
            rho += grad[k];
            ++interior;
        }
    }
    if (interior > 0) {
        rho /= interior;
    } else {
        bool any = false;
        for (int k = 0; k < n; ++k) {
            if (alpha[k] > bound_slack && (!any || grad[k] > rho)) {
                rho = grad[k];
                any = true;
            }
        }
    }

    OcsvmFit fit;
    fit.alpha_full = alpha;
    fit.iterations = it;
    fit.kkt_residual = residual;
    double obj = 0;
    for (int k = 0; k < n; ++k) obj += alpha[k] * grad[k];
    fit.dual_objective = 0.5 * obj;

    fit.model.rho = rho;
    fit.model.gamma = gamma;
    fit.model.nu = nu;
    fit.model.n_train = n;
    for (int k = 0; k < n; ++k) {
        if (alpha[k] > 0) {
            fit.model.support_vectors.push_back(latents[k]);
            fit.model.alphas.push_back(alpha[k]);
        }
    }
    return fit;
}

OcsvmModel fit_ocsvm(const std::vector<std::vector<double>>& latents, double nu, double gamma,
                     const SolverConfig& solver) {
    return fit_ocsvm_detailed(latents, nu, gamma, solver).model;
}

double decision_function(const OcsvmModel& model, std::span<const double> z) {
    if (model.support_vectors.empty()) throw std::invalid_argument("decision_function: empty model");
    if (z.size() != model.support_vectors[0].size())
        throw std::invalid_argument("decision_function: dimension mismatch (" + std::to_string(z.size()) +
                                    " vs " + std::to_string(model.support_vectors[0].size()) + ")");
    double s = 0;
    const double g = model.gamma;
    for (std::size_t i = 0; i < model.support_vectors.size(); ++i) {
        const auto& sv = model.support_vectors[i];
        double d2 = 0;
        for (std::size_t k = 0; k < sv.size(); ++k) {
            const double dv = sv[k] - z[k];
            d2 += dv * dv;
        }
        s += model.alphas[i] * std::exp(-g * d2);
    }
    return s - model.rho;
}

}  // namespace uad
