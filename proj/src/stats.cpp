#include "uad/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace uad {

namespace {

// Regularized lower incomplete gamma P(a, x) by series expansion (x < a+1).
double gamma_p_series(double a, double x) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int i = 0; i < 500; ++i) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::abs(del) < std::abs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Regularized upper incomplete gamma Q(a, x) by continued fraction (x >= a+1).
double gamma_q_cf(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-16) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double chi2_sf(double x, double df) {
    if (!(df > 0)) throw std::invalid_argument("chi2_sf: df must be positive");
    if (x <= 0) return 1.0;
    const double a = 0.5 * df, xx = 0.5 * x;
    if (xx < a + 1.0) return 1.0 - gamma_p_series(a, xx);
    return gamma_q_cf(a, xx);
}

double normal_sf(double z) { return 0.5 * std::erfc(z * 0.70710678118654752440); }

namespace {

struct RankData {
    std::vector<double> rank_sum;   // per group
    std::vector<double> mean_rank;  // per group
    std::size_t total = 0;
    double tie_sum = 0;  // sum over tie groups of t^3 - t
    bool all_tied = false;
};

RankData ranked(const std::vector<std::vector<double>>& groups) {
    const std::size_t k = groups.size();
    if (k < 2) throw std::invalid_argument("rank test: need at least 2 groups");
    std::vector<std::pair<double, int>> pool;
    for (std::size_t g = 0; g < k; ++g) {
        if (groups[g].empty()) throw std::invalid_argument("rank test: empty group");
        for (double v : groups[g]) {
            if (!std::isfinite(v)) throw std::invalid_argument("rank test: non-finite value");
            pool.emplace_back(v, static_cast<int>(g));
        }
    }
    std::sort(pool.begin(), pool.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    RankData rd;
    rd.total = pool.size();
    rd.rank_sum.assign(k, 0.0);
    std::size_t i = 0;
    std::size_t distinct = 0;
    while (i < pool.size()) {
        std::size_t j = i;
        while (j < pool.size() && pool[j].first == pool[i].first) ++j;
        const double t = static_cast<double>(j - i);
        const double mid = 0.5 * static_cast<double>(i + 1 + j);  // mid-rank, 1-based
        for (std::size_t m = i; m < j; ++m) rd.rank_sum[pool[m].second] += mid;
        rd.tie_sum += t * t * t - t;
        ++distinct;
        i = j;
    }
    rd.all_tied = (distinct == 1);
    rd.mean_rank.assign(k, 0.0);
    for (std::size_t g = 0; g < k; ++g) rd.mean_rank[g] = rd.rank_sum[g] / groups[g].size();
    return rd;
}

}  // namespace

KruskalResult kruskal_wallis(const std::vector<std::vector<double>>& groups) {
    const RankData rd = ranked(groups);
    if (rd.all_tied) return {0.0, 1.0};
    const double n = static_cast<double>(rd.total);
    double h = 0;
    for (std::size_t g = 0; g < groups.size(); ++g)
        h += rd.rank_sum[g] * rd.rank_sum[g] / groups[g].size();
    h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);
    const double correction = 1.0 - rd.tie_sum / (n * n * n - n);
    h /= correction;
    const double df = static_cast<double>(groups.size() - 1);
    return {h, chi2_sf(h, df)};
}

std::vector<DunnPair> dunn_test(const std::vector<std::vector<double>>& groups, bool bonferroni) {
    const RankData rd = ranked(groups);
    const std::size_t k = groups.size();
    const double n = static_cast<double>(rd.total);
    const double var_base = n * (n + 1.0) / 12.0 - rd.tie_sum / (12.0 * (n - 1.0));
    const double m = static_cast<double>(k * (k - 1) / 2);
    std::vector<DunnPair> out;
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = a + 1; b < k; ++b) {
            DunnPair d;
            d.a = static_cast<int>(a);
            d.b = static_cast<int>(b);
            const double sigma2 =
                var_base * (1.0 / groups[a].size() + 1.0 / groups[b].size());
            if (rd.all_tied || !(sigma2 > 0)) {
                d.z = 0.0;
                d.p = 1.0;
            } else {
                d.z = (rd.mean_rank[a] - rd.mean_rank[b]) / std::sqrt(sigma2);
                d.p = 2.0 * normal_sf(std::abs(d.z));
                if (bonferroni) d.p = std::min(1.0, d.p * m);
            }
            out.push_back(d);
        }
    return out;
}

}  // namespace uad
