#pragma once

#include <vector>

namespace uad {

// Upper tail of the chi-square distribution (regularized incomplete gamma).
double chi2_sf(double x, double df);

// Upper tail of the standard normal.
double normal_sf(double z);

struct KruskalResult {
    double h = 0.0;
    double p = 1.0;
};

// Kruskal-Wallis rank ANOVA with tie correction; p from chi-square with k-1
// degrees of freedom. All-identical data yields H = 0, p = 1.
KruskalResult kruskal_wallis(const std::vector<std::vector<double>>& groups);

struct DunnPair {
    int a = 0, b = 0;
    double z = 0.0;
    double p = 1.0;  // two-sided
};

// Dunn's post-hoc z tests on mean ranks with tie correction. p-values are
// unadjusted unless bonferroni is set (multiplied by the pair count, capped
// at 1).
std::vector<DunnPair> dunn_test(const std::vector<std::vector<double>>& groups, bool bonferroni = false);

}  // namespace uad
