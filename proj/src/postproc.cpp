#include "uad/postproc.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

namespace uad {

BinaryMask3 morph(const BinaryMask3& mask, MorphOp op, StructuringElement se) {
    if (se.kind != StructuringElement::Kind::cross3d || se.radius != 1)
        throw std::invalid_argument("morph: only the width-1 cross element is supported");
    BinaryMask3 out(mask.nx, mask.ny, mask.nz);
    static constexpr int kOff[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (int z = 0; z < mask.nz; ++z)
        for (int y = 0; y < mask.ny; ++y)
            for (int x = 0; x < mask.nx; ++x) {
                if (op == MorphOp::dilate) {
                    bool on = mask.at(x, y, z);
                    for (int k = 0; !on && k < 6; ++k) {
                        const int nx = x + kOff[k][0], ny = y + kOff[k][1], nz = z + kOff[k][2];
                        if (nx >= 0 && ny >= 0 && nz >= 0 && nx < mask.nx && ny < mask.ny && nz < mask.nz)
                            on = mask.at(nx, ny, nz);
                    }
                    out.set(x, y, z, on);
                } else {
                    // only in-bounds neighbors can veto, the dual of the
                    // background-padded dilation (keeps closing extensive)
                    bool on = mask.at(x, y, z);
                    for (int k = 0; on && k < 6; ++k) {
                        const int nx = x + kOff[k][0], ny = y + kOff[k][1], nz = z + kOff[k][2];
                        if (nx >= 0 && ny >= 0 && nz >= 0 && nx < mask.nx && ny < mask.ny && nz < mask.nz)
                            on = mask.at(nx, ny, nz);
                    }
                    out.set(x, y, z, on);
                }
            }
    return out;
}

namespace {

struct Pt {
    long long x, y, z;
};

struct Facet {
    int a, b, c;
    long long nx, ny, nz, d;  // outward normal, plane n.p <= d contains the hull
    std::vector<int> outside;
    bool alive = true;
};

long long orient(const Pt& a, const Pt& b, const Pt& c, const Pt& p) {
    const long long ux = b.x - a.x, uy = b.y - a.y, uz = b.z - a.z;
    const long long vx = c.x - a.x, vy = c.y - a.y, vz = c.z - a.z;
    const long long nx = uy * vz - uz * vy;
    const long long ny = uz * vx - ux * vz;
    const long long nz = ux * vy - uy * vx;
    return nx * (p.x - a.x) + ny * (p.y - a.y) + nz * (p.z - a.z);
}

void facet_plane(Facet& f, const std::vector<Pt>& pts) {
    const Pt& a = pts[f.a];
    const Pt& b = pts[f.b];
    const Pt& c = pts[f.c];
    const long long ux = b.x - a.x, uy = b.y - a.y, uz = b.z - a.z;
    const long long vx = c.x - a.x, vy = c.y - a.y, vz = c.z - a.z;
    f.nx = uy * vz - uz * vy;
    f.ny = uz * vx - ux * vz;
    f.nz = ux * vy - uy * vx;
    f.d = f.nx * a.x + f.ny * a.y + f.nz * a.z;
}

long long floordiv(long long a, long long b) {
    long long q = a / b, r = a % b;
    if (r != 0 && ((r < 0) != (b < 0))) --q;
    return q;
}
long long ceildiv(long long a, long long b) {
    long long q = a / b, r = a % b;
    if (r != 0 && ((r < 0) == (b < 0))) ++q;
    return q;
}

// Exact quickhull over integer points (coordinates pre-scaled by 4 so the
// interior reference point stays integral). Returns the supporting planes.
bool quickhull_planes(std::vector<Pt> pts, std::vector<Facet>& hull) {
    const int n = static_cast<int>(pts.size());
    if (n < 4) return false;

    int i0 = 0, i1 = 0;
    for (int i = 1; i < n; ++i) {
        const auto key = [&](int k) { return std::array<long long, 3>{pts[k].x, pts[k].y, pts[k].z}; };
        if (key(i) < key(i0)) i0 = i;
        if (key(i) > key(i1)) i1 = i;
    }
    if (i0 == i1) return false;

    auto cross2 = [&](int a, int b, int p) {
        const long long ux = pts[b].x - pts[a].x, uy = pts[b].y - pts[a].y, uz = pts[b].z - pts[a].z;
        const long long vx = pts[p].x - pts[a].x, vy = pts[p].y - pts[a].y, vz = pts[p].z - pts[a].z;
        const long long cx = uy * vz - uz * vy, cy = uz * vx - ux * vz, cz = ux * vy - uy * vx;
        return cx * cx + cy * cy + cz * cz;
    };
    int i2 = -1;
    long long best = 0;
    for (int i = 0; i < n; ++i) {
        const long long c = cross2(i0, i1, i);
        if (c > best) {
            best = c;
            i2 = i;
        }
    }
    if (i2 < 0) return false;  // collinear

    int i3 = -1;
    long long bestv = 0;
    for (int i = 0; i < n; ++i) {
        const long long v = orient(pts[i0], pts[i1], pts[i2], pts[i]);
        if (std::abs(v) > std::abs(bestv)) {
            bestv = v;
            i3 = i;
        }
    }
    if (i3 < 0 || bestv == 0) return false;  // coplanar

    const Pt ref{pts[i0].x + pts[i1].x + pts[i2].x + pts[i3].x,
                 pts[i0].y + pts[i1].y + pts[i2].y + pts[i3].y,
                 pts[i0].z + pts[i1].z + pts[i2].z + pts[i3].z};
    // ref is 4x the tetra centroid; rescale points by 4 to keep it integral
    for (auto& p : pts) {
        p.x *= 4;
        p.y *= 4;
        p.z *= 4;
    }

    hull.clear();
    auto add_facet = [&](int a, int b, int c) {
        Facet f;
        f.a = a;
        f.b = b;
        f.c = c;
        if (orient(pts[a], pts[b], pts[c], ref) > 0) std::swap(f.b, f.c);
        facet_plane(f, pts);
        hull.push_back(std::move(f));
    };
    add_facet(i0, i1, i2);
    add_facet(i0, i1, i3);
    add_facet(i0, i2, i3);
    add_facet(i1, i2, i3);

    auto facet_value = [&](const Facet& f, int p) {
        return f.nx * pts[p].x + f.ny * pts[p].y + f.nz * pts[p].z - f.d;
    };
    for (int p = 0; p < n; ++p) {
        for (auto& f : hull) {
            if (facet_value(f, p) > 0) {
                f.outside.push_back(p);
                break;
            }
        }
    }

    for (;;) {
        for (;;) {
            int fi = -1;
            for (std::size_t i = 0; i < hull.size(); ++i)
                if (hull[i].alive && !hull[i].outside.empty()) {
                    fi = static_cast<int>(i);
                    break;
                }
            if (fi < 0) break;

            const Facet& f = hull[fi];
            int apex = f.outside[0];
            long long apex_v = facet_value(f, apex);
            for (int p : f.outside) {
                const long long v = facet_value(f, p);
                if (v > apex_v) {
                    apex_v = v;
                    apex = p;
                }
            }

            std::vector<int> orphan;
            std::map<std::pair<int, int>, int> edge_count;
            for (auto& g : hull) {
                if (!g.alive) continue;
                if (facet_value(g, apex) > 0) {
                    g.alive = false;
                    orphan.insert(orphan.end(), g.outside.begin(), g.outside.end());
                    g.outside.clear();
                    const int e[3][2] = {{g.a, g.b}, {g.b, g.c}, {g.c, g.a}};
                    for (auto& ed : e)
                        edge_count[{std::min(ed[0], ed[1]), std::max(ed[0], ed[1])}] += 1;
                }
            }
            std::vector<std::size_t> fresh;
            for (const auto& [edge, cnt] : edge_count) {
                if (cnt != 1) continue;  // interior edge of the visible region
                add_facet(edge.first, edge.second, apex);
                fresh.push_back(hull.size() - 1);
            }
            for (int p : orphan) {
                if (p == apex) continue;
                for (std::size_t i : fresh) {
                    if (facet_value(hull[i], p) > 0) {
                        hull[i].outside.push_back(p);
                        break;
                    }
                }
            }
        }
        // safety sweep: reinsert any point still strictly outside
        bool missed = false;
        for (int p = 0; p < n && !missed; ++p) {
            for (auto& f : hull) {
                if (f.alive && facet_value(f, p) > 0) {
                    f.outside.push_back(p);
                    missed = true;
                    break;
                }
            }
        }
        if (!missed) break;
    }
    hull.erase(std::remove_if(hull.begin(), hull.end(), [](const Facet& f) { return !f.alive; }),
               hull.end());
    return true;
}

}  // namespace

BinaryMask3 convex_hull_mask(const BinaryMask3& mask) {
    std::vector<Pt> pts;
    int x0 = mask.nx, x1 = -1, y0 = mask.ny, y1 = -1, z0 = mask.nz, z1 = -1;
    for (int z = 0; z < mask.nz; ++z)
        for (int y = 0; y < mask.ny; ++y)
            for (int x = 0; x < mask.nx; ++x)
                if (mask.at(x, y, z)) {
                    x0 = std::min(x0, x);
                    x1 = std::max(x1, x);
                    y0 = std::min(y0, y);
                    y1 = std::max(y1, y);
                    z0 = std::min(z0, z);
                    z1 = std::max(z1, z);
                    // midpoints along an axis cannot be hull vertices
                    const bool skip =
                        (x > 0 && x + 1 < mask.nx && mask.at(x - 1, y, z) && mask.at(x + 1, y, z)) ||
                        (y > 0 && y + 1 < mask.ny && mask.at(x, y - 1, z) && mask.at(x, y + 1, z)) ||
                        (z > 0 && z + 1 < mask.nz && mask.at(x, y, z - 1) && mask.at(x, y, z + 1));
                    if (!skip) pts.push_back({x, y, z});
                }

    std::vector<Facet> planes;
    if (!quickhull_planes(pts, planes)) return mask;  // degenerate: flat or tiny

    BinaryMask3 out(mask.nx, mask.ny, mask.nz);
    for (int z = z0; z <= z1; ++z)
        for (int y = y0; y <= y1; ++y) {
            // the inside set along x is an interval by convexity
            long long lo = 4LL * x0, hi = 4LL * x1;
            bool feasible = true;
            for (const auto& f : planes) {
                const long long r = f.d - f.ny * (4LL * y) - f.nz * (4LL * z);
                if (f.nx > 0) {
                    hi = std::min(hi, floordiv(r, f.nx));
                } else if (f.nx < 0) {
                    lo = std::max(lo, ceildiv(r, f.nx));
                } else if (r < 0) {
                    feasible = false;
                    break;
                }
            }
            if (!feasible || lo > hi) continue;
            // voxel centers live at multiples of 4 in the scaled frame
            const int xa = static_cast<int>(ceildiv(lo, 4));
            const int xb = static_cast<int>(floordiv(hi, 4));
            for (int x = std::max(xa, x0); x <= std::min(xb, x1); ++x) out.set(x, y, z, true);
        }
    return out;
}

BinaryMask3 refine_csf_mask(const BinaryMask3& seg_a, const BinaryMask3& seg_b,
                            const BinaryMask3& gross_brain) {
    if (!seg_a.same_dims(seg_b) || !seg_a.same_dims(gross_brain))
        throw std::invalid_argument("refine_csf_mask: mask dims differ");
    if (gross_brain.count() == 0)
        throw std::invalid_argument("refine_csf_mask: empty gross brain segmentation");

    BinaryMask3 u(seg_a.nx, seg_a.ny, seg_a.nz);
    for (std::size_t i = 0; i < u.v.size(); ++i)
        u.v[i] = (seg_a.v[i] | seg_b.v[i]) & gross_brain.v[i];
    BinaryMask3 closed = erode(erode(dilate(dilate(u))));

    const BinaryMask3 hull_eroded = erode(convex_hull_mask(gross_brain));
    BinaryMask3 out(u.nx, u.ny, u.nz);
    for (std::size_t i = 0; i < out.v.size(); ++i) {
        const bool rim = gross_brain.v[i] && !hull_eroded.v[i];
        out.v[i] = (closed.v[i] || rim) ? 1 : 0;
    }
    return out;
}

AnomalyMap apply_exclusion(const AnomalyMap& map, const BinaryMask3& exclusion) {
    if (!map.valid.same_dims(exclusion))
        throw std::invalid_argument("apply_exclusion: dims mismatch");
    AnomalyMap out = map;
    for (std::size_t i = 0; i < exclusion.v.size(); ++i) {
        if (exclusion.v[i]) {
            out.score.v[i] = 0.0f;
            out.valid.v[i] = 0;
        }
    }
    return out;
}

Volume minmax_normalize(const Volume& volume) {
    Volume out = volume;
    for (int ch = 0; ch < 2; ++ch) {
        const auto& src = volume.chan[ch];
        if (src.empty()) throw std::invalid_argument("minmax_normalize: empty channel");
        float lo = src[0], hi = src[0];
        for (float v : src) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (!(hi > lo))
            throw std::invalid_argument("minmax_normalize: channel " + std::to_string(ch) +
                                        " is constant");
        const float range = hi - lo;
        auto& dst = out.chan[ch];
        // divide rather than multiply by the reciprocal so the channel max
        // lands on exactly 1
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = (src[i] - lo) / range;
    }
    return out;
}

}  // namespace uad
