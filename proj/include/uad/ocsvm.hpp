#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace uad {

struct SolverConfig {
    double tolerance = 1e-6;
    std::int64_t max_iterations = 1000000;
    std::uint64_t seed = 0;  // reserved; the SMO solver is deterministic
};

// nu-one-class-SVM decision function
//   f(z) = sum_i alpha_i k(sv_i, z) - rho,   k(a,b) = exp(-gamma ||a-b||^2)
// positive inside the estimated support. support_vectors holds exactly the
// training points with alpha_i > 0.
struct OcsvmModel {
    std::vector<std::vector<double>> support_vectors;
    std::vector<double> alphas;
    double rho = 0.0;
    double gamma = 0.0;
    double nu = 0.0;
    int n_train = 0;

    int dim() const { return support_vectors.empty() ? 0 : static_cast<int>(support_vectors[0].size()); }
    double upper_bound() const { return 1.0 / (nu * n_train); }
};

double rbf_kernel(std::span<const double> a, std::span<const double> b, double gamma);

// 1/gamma = d * Var(Z) with Var(Z) the mean per-dimension population
// variance, i.e. 1/gamma equals the total variance of the training set.
double auto_gamma(const std::vector<std::vector<double>>& latents);

struct OcsvmFit {
    OcsvmModel model;
    std::vector<double> alpha_full;  // one coefficient per training point
    double dual_objective = 0.0;     // 1/2 alpha^T Q alpha at the solution
    double kkt_residual = 0.0;       // final maximal-violating-pair gap
    std::int64_t iterations = 0;
};

// Solves the one-class dual
//   min 1/2 sum_ij alpha_i alpha_j k(z_i, z_j)
//   s.t. 0 <= alpha_i <= 1/(nu n),  sum alpha_i = 1
// with an SMO working-set method (maximal KKT violating pair, lowest-index
// tie break). Throws on non-convergence, carrying the KKT residual.
OcsvmFit fit_ocsvm_detailed(const std::vector<std::vector<double>>& latents, double nu, double gamma,
                            const SolverConfig& solver = {});

OcsvmModel fit_ocsvm(const std::vector<std::vector<double>>& latents, double nu, double gamma,
                     const SolverConfig& solver = {});

double decision_function(const OcsvmModel& model, std::span<const double> z);

}  // namespace uad
