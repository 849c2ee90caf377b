#include "uad/phantom.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "uad/postproc.hpp"

namespace uad {

namespace {

// Random values on a coarse grid, trilinearly interpolated over the volume.
struct SmoothField {
    int gx, gy, gz;
    std::array<int, 3> dims;
    std::vector<double> grid;

    SmoothField(std::array<int, 3> dims_, int res, double amplitude, Rng& rng)
        : gx(res), gy(res), gz(res), dims(dims_), grid(static_cast<std::size_t>(res) * res * res) {
        for (auto& v : grid) v = rng.uniform_range(-amplitude, amplitude);
    }

    double at(double x, double y, double z) const {
        const double fx = x / (dims[0] - 1) * (gx - 1);
        const double fy = y / (dims[1] - 1) * (gy - 1);
        const double fz = z / (dims[2] - 1) * (gz - 1);
        const int ix = std::min(gx - 2, std::max(0, static_cast<int>(fx)));
        const int iy = std::min(gy - 2, std::max(0, static_cast<int>(fy)));
        const int iz = std::min(gz - 2, std::max(0, static_cast<int>(fz)));
        const double tx = std::min(1.0, std::max(0.0, fx - ix));
        const double ty = std::min(1.0, std::max(0.0, fy - iy));
        const double tz = std::min(1.0, std::max(0.0, fz - iz));
        auto g = [this](int a, int b, int c) {
            return grid[(static_cast<std::size_t>(c) * gy + b) * gx + a];
        };
        double v = 0;
        for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    const double w = (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz);
                    v += w * g(ix + dx, iy + dy, iz + dz);
                }
        return v;
    }
};

struct Anatomy {
    std::array<int, 3> dims;
    double cx, cy, cz;
    double rx, ry, rz;
    // two ventricle ellipsoids
    std::array<std::array<double, 3>, 2> vent_center;
    std::array<double, 3> vent_radii;

    explicit Anatomy(std::array<int, 3> d) : dims(d) {
        cx = 0.5 * (d[0] - 1);
        cy = 0.5 * (d[1] - 1);
        cz = 0.5 * (d[2] - 1);
        rx = 0.42 * d[0];
        ry = 0.36 * d[1];
        rz = 0.33 * d[2];
        vent_center[0] = {cx - 0.10 * d[0], cy + 0.02 * d[1], cz};
        vent_center[1] = {cx + 0.10 * d[0], cy + 0.02 * d[1], cz};
        vent_radii = {0.050 * d[0], 0.14 * d[1], 0.08 * d[2]};
    }

    double brain_rho(double x, double y, double z) const {
        const double a = (x - cx) / rx, b = (y - cy) / ry, c = (z - cz) / rz;
        return std::sqrt(a * a + b * b + c * c);
    }

    double vent_rho(double x, double y, double z) const {
        double best = 1e30;
        for (const auto& vc : vent_center) {
            const double a = (x - vc[0]) / vent_radii[0];
            const double b = (y - vc[1]) / vent_radii[1];
            const double c = (z - vc[2]) / vent_radii[2];
            best = std::min(best, std::sqrt(a * a + b * b + c * c));
        }
        return best;
    }
};

double logistic(double u) { return 1.0 / (1.0 + std::exp(-u)); }

struct Blob {
    double cx, cy, cz;
    double ax, ay, az;  // semi-axes in voxels
    bool contains(int x, int y, int z) const {
        const double a = (x - cx) / ax, b = (y - cy) / ay, c = (z - cz) / az;
        return a * a + b * b + c * c <= 1.0;
    }
};

}  // namespace

static PhantomCase generate_case(const PhantomConfig& cfg, Rng& rng, bool with_lesions) {
    if (cfg.dims[0] < 8 || cfg.dims[1] < 8 || cfg.dims[2] < 8)
        throw std::invalid_argument("phantom: dims too small");
    if (cfg.deform_amplitude > 2.0)
        throw std::invalid_argument("phantom: deform_amplitude must stay <= 2 voxels");
    if (!(cfg.lesion_fraction_target > 0 && cfg.lesion_fraction_target <= 0.05))
        throw std::invalid_argument("phantom: lesion fraction target must lie in (0, 0.05]");

    Rng anatomy_rng = rng.fork(0);
    Rng lesion_rng = rng.fork(1);
    Rng noise_rng = rng.fork(2);
    Rng decoy_rng = rng.fork(3);

    const Anatomy anat(cfg.dims);
    const int nx = cfg.dims[0], ny = cfg.dims[1], nz = cfg.dims[2];

    // per-subject smooth displacement and per-channel bias fields
    const SmoothField defx(cfg.dims, 4, cfg.deform_amplitude, anatomy_rng);
    const SmoothField defy(cfg.dims, 4, cfg.deform_amplitude, anatomy_rng);
    const SmoothField defz(cfg.dims, 4, cfg.deform_amplitude, anatomy_rng);
    const SmoothField bias0(cfg.dims, 4, cfg.bias_amplitude, anatomy_rng);
    const SmoothField bias1(cfg.dims, 4, cfg.bias_amplitude, anatomy_rng);

    PhantomCase out;
    out.volume = Volume(nx, ny, nz);
    out.brain_mask = BinaryMask3(nx, ny, nz);
    out.csf_mask = BinaryMask3(nx, ny, nz);
    out.lesion_mask = BinaryMask3(nx, ny, nz);

    std::vector<float> brho(out.volume.voxel_count()), vrho(out.volume.voxel_count());
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x) {
                const double qx = x + defx.at(x, y, z);
                const double qy = y + defy.at(x, y, z);
                const double qz = z + defz.at(x, y, z);
                const std::size_t i = out.volume.idx(x, y, z);
                const double rb = anat.brain_rho(qx, qy, qz);
                const double rv = anat.vent_rho(qx, qy, qz);
                brho[i] = static_cast<float>(rb);
                vrho[i] = static_cast<float>(rv);
                const bool brain = rb <= 1.0;
                out.brain_mask.v[i] = brain ? 1 : 0;
                out.csf_mask.v[i] = (brain && rv <= 1.0) ? 1 : 0;

                const double t_brain = logistic((1.0 - rb) / 0.05);
                const double t_wm = logistic((0.80 - rb) / 0.05);
                const double t_csf = logistic((1.0 - rv) / 0.14);
                for (int ch = 0; ch < 2; ++ch) {
                    double tissue = cfg.wm_mean[ch] * t_wm + cfg.gm_mean[ch] * (1.0 - t_wm);
                    tissue = cfg.csf_mean[ch] * t_csf + tissue * (1.0 - t_csf);
                    const double v = tissue * t_brain + cfg.background_mean[ch] * (1.0 - t_brain);
                    const double bias = 1.0 + (ch == 0 ? bias0.at(x, y, z) : bias1.at(x, y, z));
                    out.volume.chan[ch][i] = static_cast<float>(v * bias);
                }
            }

    const std::size_t brain_voxels = out.brain_mask.count();
    if (brain_voxels == 0) throw std::invalid_argument("phantom: configuration yields an empty brain");

    if (with_lesions) {
        const double tol = cfg.lesion_fraction_tolerance;
        const double lo_frac = cfg.lesion_fraction_target * (1.0 - tol);
        const double hi_frac = cfg.lesion_fraction_target * (1.0 + tol);
        bool placed = false;
        for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
            std::fill(out.lesion_mask.v.begin(), out.lesion_mask.v.end(), 0);
            const double target =
                cfg.lesion_fraction_target * lesion_rng.uniform_range(0.85, 1.15) * brain_voxels;
            std::size_t placed_voxels = 0;
            int count = 0;
            for (int guard = 0; guard < 400 && count < cfg.lesion_count_max; ++guard) {
                const double remaining = target - static_cast<double>(placed_voxels);
                if (remaining <= 0 && count >= cfg.lesion_count_min) break;
                double radius = std::cbrt(std::max(remaining, 1.0) * 3.0 / (4.0 * 3.14159265358979));
                radius = std::min(cfg.lesion_radius_max, std::max(cfg.lesion_radius_min, radius));
                radius *= lesion_rng.uniform_range(0.9, 1.1);
                Blob blob;
                blob.cx = lesion_rng.uniform_range(0, nx - 1);
                blob.cy = lesion_rng.uniform_range(0, ny - 1);
                blob.cz = lesion_rng.uniform_range(0, nz - 1);
                blob.ax = radius * lesion_rng.uniform_range(0.8, 1.25);
                blob.ay = radius * lesion_rng.uniform_range(0.8, 1.25);
                blob.az = radius * lesion_rng.uniform_range(0.8, 1.25);
                const std::size_t ci =
                    out.volume.idx(static_cast<int>(blob.cx), static_cast<int>(blob.cy),
                                   static_cast<int>(blob.cz));
                // white matter, clear of the ventricles
                if (brho[ci] > 0.72 || vrho[ci] < 1.8) continue;
                std::size_t added = 0;
                const int r = static_cast<int>(std::ceil(radius * 1.3)) + 1;
                for (int z = std::max(0, static_cast<int>(blob.cz) - r);
                     z <= std::min(nz - 1, static_cast<int>(blob.cz) + r); ++z)
                    for (int y = std::max(0, static_cast<int>(blob.cy) - r);
                         y <= std::min(ny - 1, static_cast<int>(blob.cy) + r); ++y)
                        for (int x = std::max(0, static_cast<int>(blob.cx) - r);
                             x <= std::min(nx - 1, static_cast<int>(blob.cx) + r); ++x) {
                            if (!blob.contains(x, y, z)) continue;
                            const std::size_t i = out.volume.idx(x, y, z);
                            if (brho[i] > 0.90 || vrho[i] < 1.15) continue;  // stay in brain, off CSF
                            if (out.lesion_mask.v[i]) continue;
                            out.lesion_mask.v[i] = 1;
                            ++added;
                        }
                if (added > 0) ++count;
                placed_voxels += added;
            }
            const double frac = static_cast<double>(placed_voxels) / static_cast<double>(brain_voxels);
            placed = count >= cfg.lesion_count_min && frac >= lo_frac && frac <= hi_frac;
        }
        if (!placed)
            throw std::runtime_error("phantom: cannot place the requested lesion load inside the "
                                     "eligible region");
        // hyperintense in the FLAIR-like channel, hypointense in T1
        for (std::size_t i = 0; i < out.lesion_mask.v.size(); ++i) {
            if (!out.lesion_mask.v[i]) continue;
            out.volume.chan[1][i] *= static_cast<float>(cfg.lesion_contrast);
            out.volume.chan[0][i] *= 0.85f;
        }
    }

    if (with_lesions && cfg.decoy_count > 0) {
        // bright artifacts inside the ventricles; deliberately unlabeled
        std::vector<std::array<int, 3>> deep_csf;
        for (int z = 0; z < nz; ++z)
            for (int y = 0; y < ny; ++y)
                for (int x = 0; x < nx; ++x)
                    if (vrho[out.volume.idx(x, y, z)] <= 0.7f) deep_csf.push_back({x, y, z});
        if (deep_csf.empty())
            throw std::runtime_error("phantom: no deep CSF voxels available for decoys");
        int placed_decoys = 0;
        for (int guard = 0; guard < 400 && placed_decoys < cfg.decoy_count; ++guard) {
            const auto& c = deep_csf[decoy_rng.uniform_index(deep_csf.size())];
            Blob blob;
            blob.cx = c[0];
            blob.cy = c[1];
            blob.cz = c[2];
            const double radius = decoy_rng.uniform_range(1.4, 2.4);
            blob.ax = blob.ay = blob.az = radius;
            const int r = static_cast<int>(std::ceil(radius)) + 1;
            bool any = false;
            for (int z = std::max(0, static_cast<int>(blob.cz) - r);
                 z <= std::min(nz - 1, static_cast<int>(blob.cz) + r); ++z)
                for (int y = std::max(0, static_cast<int>(blob.cy) - r);
                     y <= std::min(ny - 1, static_cast<int>(blob.cy) + r); ++y)
                    for (int x = std::max(0, static_cast<int>(blob.cx) - r);
                         x <= std::min(nx - 1, static_cast<int>(blob.cx) + r); ++x) {
                        if (!blob.contains(x, y, z)) continue;
                        const std::size_t i = out.volume.idx(x, y, z);
                        if (!out.csf_mask.v[i] || out.lesion_mask.v[i]) continue;
                        out.volume.chan[1][i] *= static_cast<float>(cfg.decoy_contrast);
                        any = true;
                    }
            if (any) ++placed_decoys;
        }
    }

    if (cfg.noise_std > 0) {
        for (int ch = 0; ch < 2; ++ch)
            for (auto& v : out.volume.chan[ch])
                v += static_cast<float>(noise_rng.normal(0.0, cfg.noise_std));
    }
    out.volume = minmax_normalize(out.volume);
    return out;
}

PhantomCase generate_control(const PhantomConfig& cfg, Rng& rng) {
    return generate_case(cfg, rng, /*with_lesions=*/false);
}

PhantomCase generate_patient(const PhantomConfig& cfg, Rng& rng) {
    return generate_case(cfg, rng, /*with_lesions=*/true);
}

}  // namespace uad
