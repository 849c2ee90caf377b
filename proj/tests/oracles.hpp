#pragma once

// Independent test oracles. Everything here recomputes results by brute force
// or by a different algorithm than the library implementation it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <vector>

#include "uad/volume.hpp"

namespace oracle {

// ---------------------------------------------------------------------------
// nu-one-class-SVM dual via accelerated projected gradient (FISTA)

// Euclidean projection onto { 0 <= a_i <= c, sum a_i = 1 } by bisection.
inline std::vector<double> project_capped_simplex(const std::vector<double>& v, double c) {
    const std::size_t n = v.size();
    double lo = *std::min_element(v.begin(), v.end()) - c - 1.0;
    double hi = *std::max_element(v.begin(), v.end()) + 1.0;
    auto mass = [&](double tau) {
        double s = 0;
        for (double x : v) s += std::clamp(x - tau, 0.0, c);
        return s;
    };
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mass(mid) > 1.0)
            lo = mid;
        else
            hi = mid;
    }
    const double tau = 0.5 * (lo + hi);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = std::clamp(v[i] - tau, 0.0, c);
    return out;
}

struct QpSolution {
    std::vector<double> alpha;
    double objective = 0;
    double rho = 0;
};

// min 1/2 a^T Q a over the capped simplex; Q must have unit diagonal.
inline QpSolution solve_ocsvm_qp(const std::vector<std::vector<double>>& q, double nu,
                                 std::int64_t max_iter = 500000) {
    const std::size_t n = q.size();
    const double c = 1.0 / (nu * static_cast<double>(n));
    const double lips = static_cast<double>(n);  // trace bound on the top eigenvalue
    std::vector<double> a(n, 1.0 / static_cast<double>(n));
    std::vector<double> y = a, a_prev = a, grad(n), step(n);
    double t = 1.0;
    auto mul = [&](const std::vector<double>& x, std::vector<double>& out) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < n; ++j) s += q[i][j] * x[j];
            out[i] = s;
        }
    };
    for (std::int64_t it = 0; it < max_iter; ++it) {
        mul(y, grad);
        for (std::size_t i = 0; i < n; ++i) step[i] = y[i] - grad[i] / lips;
        a_prev = a;
        a = project_capped_simplex(step, c);
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        for (std::size_t i = 0; i < n; ++i) y[i] = a[i] + (t - 1.0) / t_next * (a[i] - a_prev[i]);
        t = t_next;
        if (it % 200 == 199) {
            mul(a, grad);
            for (std::size_t i = 0; i < n; ++i) step[i] = a[i] - grad[i] / lips;
            const std::vector<double> fixed = project_capped_simplex(step, c);
            double res = 0;
            for (std::size_t i = 0; i < n; ++i) res = std::max(res, std::abs(fixed[i] - a[i]));
            if (res < 1e-13) break;
        }
    }
    QpSolution sol;
    sol.alpha = a;
    mul(a, grad);
    for (std::size_t i = 0; i < n; ++i) sol.objective += 0.5 * a[i] * grad[i];
    // offset recovery mirrors the production rule: mean decision value over
    // interior support vectors, else the largest one over the support
    double rho = 0;
    int interior = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (a[i] > c * 1e-6 && a[i] < c * (1.0 - 1e-6)) {
            rho += grad[i];
            ++interior;
        }
    }
    if (interior > 0) {
        rho /= interior;
    } else {
        bool any = false;
        for (std::size_t i = 0; i < n; ++i)
            if (a[i] > 1e-10 && (!any || grad[i] > rho)) {
                rho = grad[i];
                any = true;
            }
    }
    sol.rho = rho;
    return sol;
}

// ---------------------------------------------------------------------------
// Curve metrics by exhaustive threshold enumeration (full recount per
// threshold, no incremental bookkeeping)

inline std::vector<double> distinct_thresholds_desc(const std::vector<double>& scores) {
    std::set<double, std::greater<double>> s(scores.begin(), scores.end());
    return {s.begin(), s.end()};
}

inline double roc_auc_pairwise(const std::vector<double>& scores,
                               const std::vector<std::uint8_t>& labels) {
    double wins = 0;
    std::int64_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i]) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j]) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

// Clipped trapezoid; written independently of the library helper.
inline double clip_trapezoid(const std::vector<double>& xs, const std::vector<double>& ys,
                             double xmax) {
    double area = 0;
    double ax = 0, ay = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double bx = xs[i], by = ys[i];
        if (bx <= xmax) {
            area += (bx - ax) * (ay + by) / 2.0;
        } else {
            if (ax < xmax && bx > ax) {
                const double yi = ay + (by - ay) * (xmax - ax) / (bx - ax);
                area += (xmax - ax) * (ay + yi) / 2.0;
            }
            return area;
        }
        ax = bx;
        ay = by;
    }
    return area;
}

inline double roc_auc_enum(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels,
                           double fpr_max) {
    std::int64_t pos = 0, neg = 0;
    for (auto l : labels) (l ? pos : neg) += 1;
    std::vector<double> xs, ys;
    for (double thr : distinct_thresholds_desc(scores)) {
        std::int64_t tp = 0, fp = 0;
        for (std::size_t i = 0; i < scores.size(); ++i)
            if (scores[i] >= thr) (labels[i] ? tp : fp) += 1;
        xs.push_back(static_cast<double>(fp) / neg);
        ys.push_back(static_cast<double>(tp) / pos);
    }
    return clip_trapezoid(xs, ys, fpr_max) / fpr_max;
}

inline double pr_auc_enum(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
    std::int64_t pos = 0;
    for (auto l : labels) pos += (l != 0);
    double area = 0, prev_recall = 0;
    for (double thr : distinct_thresholds_desc(scores)) {
        std::int64_t tp = 0, fp = 0;
        for (std::size_t i = 0; i < scores.size(); ++i)
            if (scores[i] >= thr) (labels[i] ? tp : fp) += 1;
        const double recall = static_cast<double>(tp) / pos;
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return area;
}

inline double pro_auc_enum(const std::vector<double>& scores, const std::vector<int>& comp,
                           double fpr_max) {
    int n_lesions = 0;
    for (int c : comp) n_lesions = std::max(n_lesions, c + 1);
    std::vector<std::int64_t> size(n_lesions, 0);
    std::int64_t neg = 0;
    for (int c : comp) {
        if (c >= 0) ++size[c];
        else ++neg;
    }
    std::vector<double> xs, ys;
    for (double thr : distinct_thresholds_desc(scores)) {
        std::vector<std::int64_t> tp(n_lesions, 0);
        std::int64_t fp = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (scores[i] < thr) continue;
            if (comp[i] >= 0) ++tp[comp[i]];
            else ++fp;
        }
        double pro = 0;
        for (int l = 0; l < n_lesions; ++l) pro += static_cast<double>(tp[l]) / size[l];
        xs.push_back(static_cast<double>(fp) / neg);
        ys.push_back(pro / n_lesions);
    }
    return clip_trapezoid(xs, ys, fpr_max) / fpr_max;
}

struct DiceEnum {
    double dice = 0;
    double threshold = 0;
};

inline DiceEnum best_dice_enum(const std::vector<double>& scores,
                               const std::vector<std::uint8_t>& labels) {
    std::int64_t pos = 0;
    for (auto l : labels) pos += (l != 0);
    std::int64_t bn = -1, bd = 1;
    double bthr = 0;
    for (double thr : distinct_thresholds_desc(scores)) {
        std::int64_t tp = 0, fp = 0;
        for (std::size_t i = 0; i < scores.size(); ++i)
            if (scores[i] >= thr) (labels[i] ? tp : fp) += 1;
        const std::int64_t num = 2 * tp, den = tp + fp + pos;
        // exact fraction comparison; descending sweep keeps the lowest tied
        // threshold
        if (bn < 0 || num * bd >= bn * den) {
            bn = num;
            bd = den;
            bthr = thr;
        }
    }
    return {static_cast<double>(bn) / static_cast<double>(bd), bthr};
}

// ---------------------------------------------------------------------------
// Set-based binary morphology (cross of width 1)

using VoxelSet = std::set<std::array<int, 3>>;

inline VoxelSet to_set(const uad::BinaryMask3& m) {
    VoxelSet s;
    for (int z = 0; z < m.nz; ++z)
        for (int y = 0; y < m.ny; ++y)
            for (int x = 0; x < m.nx; ++x)
                if (m.at(x, y, z)) s.insert({x, y, z});
    return s;
}

inline uad::BinaryMask3 from_set(const VoxelSet& s, int nx, int ny, int nz) {
    uad::BinaryMask3 m(nx, ny, nz);
    for (const auto& v : s)
        if (v[0] >= 0 && v[1] >= 0 && v[2] >= 0 && v[0] < nx && v[1] < ny && v[2] < nz)
            m.set(v[0], v[1], v[2], true);
    return m;
}

inline const std::vector<std::array<int, 3>>& cross_offsets() {
    static const std::vector<std::array<int, 3>> k = {
        {0, 0, 0}, {1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    return k;
}

inline VoxelSet dilate_set(const VoxelSet& s) {
    VoxelSet out;
    for (const auto& v : s)
        for (const auto& o : cross_offsets()) out.insert({v[0] + o[0], v[1] + o[1], v[2] + o[2]});
    return out;
}

inline uad::BinaryMask3 dilate_oracle(const uad::BinaryMask3& m) {
    return from_set(dilate_set(to_set(m)), m.nx, m.ny, m.nz);
}

inline uad::BinaryMask3 erode_oracle(const uad::BinaryMask3& m) {
    // dual of the clipped dilation: only in-bounds neighbors can veto
    const VoxelSet s = to_set(m);
    VoxelSet out;
    for (const auto& v : s) {
        bool keep = true;
        for (const auto& o : cross_offsets()) {
            const std::array<int, 3> q{v[0] + o[0], v[1] + o[1], v[2] + o[2]};
            if (q[0] < 0 || q[1] < 0 || q[2] < 0 || q[0] >= m.nx || q[1] >= m.ny || q[2] >= m.nz)
                continue;
            keep = keep && s.count(q) > 0;
        }
        if (keep) out.insert(v);
    }
    return from_set(out, m.nx, m.ny, m.nz);
}

// ---------------------------------------------------------------------------
// Exact convex-hull membership via Caratheodory subsets (<= 4 points). Meant
// for small masks only.

namespace hull_detail {

using P3 = std::array<long long, 3>;

inline P3 sub(const P3& a, const P3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline P3 cross(const P3& a, const P3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline long long dot(const P3& a, const P3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

inline bool in_segment(const P3& a, const P3& b, const P3& p) {
    const P3 ab = sub(b, a), ap = sub(p, a);
    const P3 c = cross(ab, ap);
    if (c[0] || c[1] || c[2]) return false;  // not collinear
    const long long t = dot(ap, ab);
    return t >= 0 && t <= dot(ab, ab);
}

inline bool in_triangle(const P3& a, const P3& b, const P3& c, const P3& p) {
    const P3 n = cross(sub(b, a), sub(c, a));
    if (n == P3{0, 0, 0}) return in_segment(a, b, p) || in_segment(a, c, p) || in_segment(b, c, p);
    if (dot(n, sub(p, a)) != 0) return false;  // off-plane
    // p = a + s(b-a) + t(c-a) with s,t >= 0, s+t <= 1; solve via projections
    const P3 v0 = sub(b, a), v1 = sub(c, a), v2 = sub(p, a);
    const long long d00 = dot(v0, v0), d01 = dot(v0, v1), d11 = dot(v1, v1);
    const long long d20 = dot(v2, v0), d21 = dot(v2, v1);
    const long long denom = d00 * d11 - d01 * d01;  // > 0 for non-degenerate
    const long long s_num = d11 * d20 - d01 * d21;
    const long long t_num = d00 * d21 - d01 * d20;
    return s_num >= 0 && t_num >= 0 && s_num + t_num <= denom;
}

inline bool in_tetra(const P3& a, const P3& b, const P3& c, const P3& d, const P3& p) {
    const long long vol = dot(cross(sub(b, a), sub(c, a)), sub(d, a));
    if (vol == 0)
        return in_triangle(a, b, c, p) || in_triangle(a, b, d, p) || in_triangle(a, c, d, p) ||
               in_triangle(b, c, d, p);
    auto side = [&](const P3& q0, const P3& q1, const P3& q2, const P3& q3, const P3& x) {
        const long long v = dot(cross(sub(q1, q0), sub(q2, q0)), sub(x, q0));
        const long long ref = dot(cross(sub(q1, q0), sub(q2, q0)), sub(q3, q0));
        return (ref > 0) ? v >= 0 : v <= 0;
    };
    return side(a, b, c, d, p) && side(a, b, d, c, p) && side(a, c, d, b, p) && side(b, c, d, a, p);
}

}  // namespace hull_detail

// Tests p against every subset of size <= 4 of the candidate points
// (Caratheodory: p lies in the hull iff some such subset contains it). Exact
// integer arithmetic throughout.
inline bool caratheodory_contains(const std::vector<hull_detail::P3>& pts, hull_detail::P3 p) {
    const std::size_t n = pts.size();
    for (std::size_t i = 0; i < n; ++i)
        if (pts[i] == p) return true;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (hull_detail::in_segment(pts[i], pts[j], p)) return true;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            for (std::size_t k = j + 1; k < n; ++k)
                if (hull_detail::in_triangle(pts[i], pts[j], pts[k], p)) return true;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            for (std::size_t k = j + 1; k < n; ++k)
                for (std::size_t l = k + 1; l < n; ++l)
                    if (hull_detail::in_tetra(pts[i], pts[j], pts[k], pts[l], p)) return true;
    return false;
}

// Frank-Wolfe separation certificate: returns true when p is provably
// strictly outside conv(pts). A false return decides nothing.
inline bool separation_certificate(const std::vector<hull_detail::P3>& pts, hull_detail::P3 p) {
    const std::size_t n = pts.size();
    double qx = static_cast<double>(pts[0][0]);
    double qy = static_cast<double>(pts[0][1]);
    double qz = static_cast<double>(pts[0][2]);
    for (int it = 0; it < 400; ++it) {
        const double gx = qx - p[0], gy = qy - p[1], gz = qz - p[2];
        std::size_t best = 0;
        double bestdot = 1e300;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = gx * pts[i][0] + gy * pts[i][1] + gz * pts[i][2];
            if (d < bestdot) {
                bestdot = d;
                best = i;
            }
        }
        const double dx = pts[best][0] - qx, dy = pts[best][1] - qy, dz = pts[best][2] - qz;
        const double dd = dx * dx + dy * dy + dz * dz;
        if (dd == 0) break;
        double t = -(gx * dx + gy * dy + gz * dz) / dd;
        t = std::clamp(t, 0.0, 1.0);
        if (t == 0) break;
        qx += t * dx;
        qy += t * dy;
        qz += t * dz;
    }
    const double ux = p[0] - qx, uy = p[1] - qy, uz = p[2] - qz;
    const double norm = std::sqrt(ux * ux + uy * uy + uz * uz);
    if (norm < 1e-7) return false;
    double worst = -1e300;
    for (std::size_t i = 0; i < n; ++i)
        worst = std::max(worst, ux * pts[i][0] + uy * pts[i][1] + uz * pts[i][2]);
    const double at_p = ux * p[0] + uy * p[1] + uz * p[2];
    return at_p - worst > 1e-5 * std::max(1.0, norm);
}

// Exact voxelized hull for small masks: strictly-outside voxels are certified
// by separation, everything else decided by the Caratheodory scan.
inline uad::BinaryMask3 hull_mask_oracle(const uad::BinaryMask3& mask) {
    using hull_detail::P3;
    std::vector<P3> pts;
    int x0 = mask.nx, x1 = -1, y0 = mask.ny, y1 = -1, z0 = mask.nz, z1 = -1;
    for (int z = 0; z < mask.nz; ++z)
        for (int y = 0; y < mask.ny; ++y)
            for (int x = 0; x < mask.nx; ++x) {
                if (!mask.at(x, y, z)) continue;
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
                z0 = std::min(z0, z);
                z1 = std::max(z1, z);
                const bool skip =
                    (x > 0 && x + 1 < mask.nx && mask.at(x - 1, y, z) && mask.at(x + 1, y, z)) ||
                    (y > 0 && y + 1 < mask.ny && mask.at(x, y - 1, z) && mask.at(x, y + 1, z)) ||
                    (z > 0 && z + 1 < mask.nz && mask.at(x, y, z - 1) && mask.at(x, y, z + 1));
                if (!skip) pts.push_back({x, y, z});
            }
    uad::BinaryMask3 out(mask.nx, mask.ny, mask.nz);
    if (pts.empty()) return out;
    for (int z = z0; z <= z1; ++z)
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const P3 p{x, y, z};
                if (separation_certificate(pts, p)) continue;
                if (caratheodory_contains(pts, p)) out.set(x, y, z, true);
            }
    return out;
}

}  // namespace oracle
