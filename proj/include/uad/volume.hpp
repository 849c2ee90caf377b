#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace uad {

struct Index3 {
    int x = 0, y = 0, z = 0;
    bool operator==(const Index3&) const = default;
};

// Two-modality 3-D volume; x varies fastest (NIfTI layout), intensities are
// expected in [0,1] after normalization.
struct Volume {
    int nx = 0, ny = 0, nz = 0;
    std::array<float, 3> voxel_mm{1.0f, 1.0f, 1.0f};
    std::array<std::vector<float>, 2> chan;

    Volume() = default;
    Volume(int nx_, int ny_, int nz_) : nx(nx_), ny(ny_), nz(nz_) {
        const std::size_t n = voxel_count();
        chan[0].assign(n, 0.0f);
        chan[1].assign(n, 0.0f);
    }

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(nx) * ny * nz;
    }
    std::size_t idx(int x, int y, int z) const {
        return static_cast<std::size_t>(x) + static_cast<std::size_t>(nx) * (y + static_cast<std::size_t>(ny) * z);
    }
    bool same_dims(int ox, int oy, int oz) const { return nx == ox && ny == oy && nz == oz; }
};

struct BinaryMask3 {
    int nx = 0, ny = 0, nz = 0;
    std::vector<std::uint8_t> v;

    BinaryMask3() = default;
    BinaryMask3(int nx_, int ny_, int nz_) : nx(nx_), ny(ny_), nz(nz_) {
        v.assign(static_cast<std::size_t>(nx_) * ny_ * nz_, 0);
    }

    std::size_t idx(int x, int y, int z) const {
        return static_cast<std::size_t>(x) + static_cast<std::size_t>(nx) * (y + static_cast<std::size_t>(ny) * z);
    }
    bool at(int x, int y, int z) const { return v[idx(x, y, z)] != 0; }
    void set(int x, int y, int z, bool b) { v[idx(x, y, z)] = b ? 1 : 0; }
    std::size_t count() const {
        std::size_t c = 0;
        for (auto b : v) c += (b != 0);
        return c;
    }
    bool same_dims(const BinaryMask3& o) const { return nx == o.nx && ny == o.ny && nz == o.nz; }
};

struct ScalarField {
    int nx = 0, ny = 0, nz = 0;
    std::array<float, 3> voxel_mm{1.0f, 1.0f, 1.0f};
    std::vector<float> v;

    ScalarField() = default;
    ScalarField(int nx_, int ny_, int nz_) : nx(nx_), ny(ny_), nz(nz_) {
        v.assign(static_cast<std::size_t>(nx_) * ny_ * nz_, 0.0f);
    }
    std::size_t idx(int x, int y, int z) const {
        return static_cast<std::size_t>(x) + static_cast<std::size_t>(nx) * (y + static_cast<std::size_t>(ny) * z);
    }
};

// Voxel-wise anomaly scores; higher means more anomalous. Scores are defined
// on valid_mask and zero elsewhere.
struct AnomalyMap {
    ScalarField score;
    BinaryMask3 valid;
};

// Axial (transverse-plane) square window with the two modalities as channels,
// laid out (channel, y, x).
template <typename T>
struct Patch {
    int size = 0;
    Index3 center;
    int subject_id = -1;
    std::vector<T> data;  // 2 * size * size

    T& at(int ch, int py, int px) { return data[(static_cast<std::size_t>(ch) * size + py) * size + px]; }
    T at(int ch, int py, int px) const { return data[(static_cast<std::size_t>(ch) * size + py) * size + px]; }
};

template <typename T>
struct PatchPair {
    Patch<T> x1, x2;
};

inline int patch_margin(int patch_size) { return patch_size / 2; }

// True when the full axial window around (x, y) lies inside the volume planes.
inline bool patch_in_bounds(int nx, int ny, int x, int y, int patch_size) {
    const int r = patch_margin(patch_size);
    return x - r >= 0 && y - r >= 0 && x + (patch_size - 1 - r) < nx && y + (patch_size - 1 - r) < ny;
}

template <typename T>
Patch<T> extract_patch(const Volume& vol, Index3 center, int patch_size, int subject_id = -1) {
    if (center.z < 0 || center.z >= vol.nz || !patch_in_bounds(vol.nx, vol.ny, center.x, center.y, patch_size))
        throw std::invalid_argument("extract_patch: window out of bounds at (" +
                                    std::to_string(center.x) + "," + std::to_string(center.y) + "," +
                                    std::to_string(center.z) + ")");
    Patch<T> p;
    p.size = patch_size;
    p.center = center;
    p.subject_id = subject_id;
    p.data.resize(static_cast<std::size_t>(2) * patch_size * patch_size);
    const int r = patch_margin(patch_size);
    for (int ch = 0; ch < 2; ++ch) {
        const float* src = vol.chan[ch].data();
        for (int py = 0; py < patch_size; ++py) {
            const std::size_t row = vol.idx(center.x - r, center.y - r + py, center.z);
            T* dst = &p.data[(static_cast<std::size_t>(ch) * patch_size + py) * patch_size];
            for (int px = 0; px < patch_size; ++px) dst[px] = static_cast<T>(src[row + px]);
        }
    }
    return p;
}

// Copies one patch into row b of a (B, 2, s, s) batch tensor.
template <typename T, typename Tensor>
void write_patch_rows(const Volume& vol, Index3 center, int patch_size, Tensor& batch, int b) {
    const int r = patch_margin(patch_size);
    for (int ch = 0; ch < 2; ++ch) {
        const float* src = vol.chan[ch].data();
        for (int py = 0; py < patch_size; ++py) {
            const std::size_t row = vol.idx(center.x - r, center.y - r + py, center.z);
            T* dst = &batch.at(b, ch, py, 0);
            for (int px = 0; px < patch_size; ++px) dst[px] = static_cast<T>(src[row + px]);
        }
    }
}

// Voxels eligible for scoring / sampling: inside the mask with the full patch
// window in bounds.
inline std::vector<Index3> eligible_voxels(const BinaryMask3& mask, int patch_size) {
    std::vector<Index3> out;
    for (int z = 0; z < mask.nz; ++z)
        for (int y = 0; y < mask.ny; ++y)
            for (int x = 0; x < mask.nx; ++x)
                if (mask.at(x, y, z) && patch_in_bounds(mask.nx, mask.ny, x, y, patch_size))
                    out.push_back({x, y, z});
    return out;
}

}  // namespace uad
