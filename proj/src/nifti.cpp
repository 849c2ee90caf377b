#include "uad/nifti.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace uad {

namespace {

#pragma pack(push, 1)
struct NiftiHeader {
    std::int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    std::int32_t extents;
    std::int16_t session_error;
    char regular;
    char dim_info;
    std::int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    std::int16_t intent_code;
    std::int16_t datatype;
    std::int16_t bitpix;
    std::int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    std::int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    std::int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    std::int16_t qform_code, sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4], srow_y[4], srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(NiftiHeader) == 348, "NIfTI-1 header must be 348 bytes");

constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtFloat32 = 16;

struct GzFile {
    gzFile f = nullptr;
    explicit GzFile(const std::string& path, const char* mode) : f(gzopen(path.c_str(), mode)) {}
    ~GzFile() {
        if (f) gzclose(f);
    }
    GzFile(const GzFile&) = delete;
    GzFile& operator=(const GzFile&) = delete;
};

void write_bytes(const std::string& path, const void* header, std::size_t header_len,
                 const void* payload, std::size_t payload_len) {
    const bool gz = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
    const char pad[4] = {0, 0, 0, 0};
    if (gz) {
        GzFile file(path, "wb6");
        if (!file.f) throw std::runtime_error("nifti: cannot open for writing: " + path);
        gzbuffer(file.f, 1 << 18);
        if (gzwrite(file.f, header, static_cast<unsigned>(header_len)) !=
                static_cast<int>(header_len) ||
            gzwrite(file.f, pad, 4) != 4 ||
            gzwrite(file.f, payload, static_cast<unsigned>(payload_len)) !=
                static_cast<int>(payload_len))
            throw std::runtime_error("nifti: write failed: " + path);
    } else {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("nifti: cannot open for writing: " + path);
        out.write(static_cast<const char*>(header), static_cast<std::streamsize>(header_len));
        out.write(pad, 4);
        out.write(static_cast<const char*>(payload), static_cast<std::streamsize>(payload_len));
        if (!out) throw std::runtime_error("nifti: write failed: " + path);
    }
}

NiftiHeader make_header(int nx, int ny, int nz, int nt, std::int16_t dtype,
                        const std::array<float, 3>& voxel_mm) {
    NiftiHeader h;
    std::memset(&h, 0, sizeof(h));
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = static_cast<std::int16_t>(nt > 1 ? 4 : 3);
    h.dim[1] = static_cast<std::int16_t>(nx);
    h.dim[2] = static_cast<std::int16_t>(ny);
    h.dim[3] = static_cast<std::int16_t>(nz);
    h.dim[4] = static_cast<std::int16_t>(nt > 1 ? nt : 1);
    for (int i = 5; i < 8; ++i) h.dim[i] = 1;
    h.datatype = dtype;
    h.bitpix = static_cast<std::int16_t>(dtype == kDtUint8 ? 8 : dtype == kDtInt16 ? 16 : 32);
    h.pixdim[0] = 1.0f;
    h.pixdim[1] = voxel_mm[0];
    h.pixdim[2] = voxel_mm[1];
    h.pixdim[3] = voxel_mm[2];
    h.pixdim[4] = 1.0f;
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.xyzt_units = 2;  // millimetres
    h.sform_code = 1;
    h.srow_x[0] = voxel_mm[0];
    h.srow_y[1] = voxel_mm[1];
    h.srow_z[2] = voxel_mm[2];
    std::strncpy(h.descrip, "uad volume", sizeof(h.descrip) - 1);
    std::memcpy(h.magic, "n+1", 4);
    return h;
}

struct RawVolume {
    int nx = 0, ny = 0, nz = 0, nt = 1;
    std::array<float, 3> voxel_mm{1, 1, 1};
    std::vector<float> data;  // scaled values, volume-major
};

RawVolume read_raw(const std::string& path) {
    GzFile file(path, "rb");
    if (!file.f) throw std::runtime_error("nifti: cannot open: " + path);
    gzbuffer(file.f, 1 << 18);
    NiftiHeader h;
    if (gzread(file.f, &h, sizeof(h)) != static_cast<int>(sizeof(h)))
        throw std::runtime_error("nifti: truncated header: " + path);
    if (h.sizeof_hdr != 348) {
        if (h.sizeof_hdr == 0x5C010000)
            throw std::runtime_error("nifti: big-endian file not supported: " + path);
        throw std::runtime_error("nifti: bad header size: " + path);
    }
    if (std::memcmp(h.magic, "n+1", 4) != 0)
        throw std::runtime_error("nifti: bad magic (expected single-file n+1): " + path);
    if (h.dim[0] != 3 && h.dim[0] != 4)
        throw std::runtime_error("nifti: unsupported dim count " + std::to_string(h.dim[0]) + ": " + path);
    RawVolume raw;
    raw.nx = h.dim[1];
    raw.ny = h.dim[2];
    raw.nz = h.dim[3];
    raw.nt = h.dim[0] == 4 ? h.dim[4] : 1;
    if (raw.nx < 1 || raw.ny < 1 || raw.nz < 1 || raw.nt < 1)
        throw std::runtime_error("nifti: dim mismatch (non-positive extent): " + path);
    raw.voxel_mm = {h.pixdim[1], h.pixdim[2], h.pixdim[3]};
    const std::size_t count =
        static_cast<std::size_t>(raw.nx) * raw.ny * raw.nz * static_cast<std::size_t>(raw.nt);

    const long offset = static_cast<long>(h.vox_offset);
    if (offset < static_cast<long>(sizeof(h)))
        throw std::runtime_error("nifti: bad vox_offset: " + path);
    std::vector<char> skip(static_cast<std::size_t>(offset) - sizeof(h));
    if (!skip.empty() && gzread(file.f, skip.data(), static_cast<unsigned>(skip.size())) !=
                             static_cast<int>(skip.size()))
        throw std::runtime_error("nifti: truncated before payload: " + path);

    const bool rescale = h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f);
    raw.data.resize(count);
    auto read_all = [&](void* dst, std::size_t bytes) {
        if (gzread(file.f, dst, static_cast<unsigned>(bytes)) != static_cast<int>(bytes))
            throw std::runtime_error("nifti: payload shorter than header dims: " + path);
        char extra;
        if (gzread(file.f, &extra, 1) == 1)
            throw std::runtime_error("nifti: payload longer than header dims: " + path);
    };
    switch (h.datatype) {
        case kDtFloat32: {
            read_all(raw.data.data(), count * 4);
            break;
        }
        case kDtInt16: {
            std::vector<std::int16_t> tmp(count);
            read_all(tmp.data(), count * 2);
            for (std::size_t i = 0; i < count; ++i) raw.data[i] = static_cast<float>(tmp[i]);
            break;
        }
        case kDtUint8: {
            std::vector<std::uint8_t> tmp(count);
            read_all(tmp.data(), count);
            for (std::size_t i = 0; i < count; ++i) raw.data[i] = static_cast<float>(tmp[i]);
            break;
        }
        default:
            throw std::runtime_error("nifti: unsupported datatype " + std::to_string(h.datatype) +
                                     ": " + path);
    }
    if (rescale)
        for (auto& v : raw.data) v = v * h.scl_slope + h.scl_inter;
    return raw;
}

}  // namespace

void write_scalar_nifti(const ScalarField& field, const std::string& path) {
    const NiftiHeader h = make_header(field.nx, field.ny, field.nz, 1, kDtFloat32, field.voxel_mm);
    write_bytes(path, &h, sizeof(h), field.v.data(), field.v.size() * 4);
}

ScalarField read_scalar_nifti(const std::string& path) {
    RawVolume raw = read_raw(path);
    if (raw.nt != 1)
        throw std::runtime_error("nifti: expected a single-channel volume: " + path);
    ScalarField out(raw.nx, raw.ny, raw.nz);
    out.voxel_mm = raw.voxel_mm;
    out.v = std::move(raw.data);
    return out;
}

void write_mask_nifti(const BinaryMask3& mask, const std::array<float, 3>& voxel_mm,
                      const std::string& path) {
    const NiftiHeader h = make_header(mask.nx, mask.ny, mask.nz, 1, kDtUint8, voxel_mm);
    write_bytes(path, &h, sizeof(h), mask.v.data(), mask.v.size());
}

BinaryMask3 read_mask_nifti(const std::string& path) {
    const RawVolume raw = read_raw(path);
    if (raw.nt != 1) throw std::runtime_error("nifti: mask must be single-channel: " + path);
    BinaryMask3 out(raw.nx, raw.ny, raw.nz);
    for (std::size_t i = 0; i < raw.data.size(); ++i) {
        const float v = raw.data[i];
        if (v != 0.0f && v != 1.0f)
            throw std::runtime_error("nifti: mask contains values outside {0,1}: " + path);
        out.v[i] = v != 0.0f ? 1 : 0;
    }
    return out;
}

void write_volume_nifti(const Volume& volume, const std::string& path) {
    const NiftiHeader h = make_header(volume.nx, volume.ny, volume.nz, 2, kDtFloat32, volume.voxel_mm);
    std::vector<float> payload;
    payload.reserve(volume.voxel_count() * 2);
    payload.insert(payload.end(), volume.chan[0].begin(), volume.chan[0].end());
    payload.insert(payload.end(), volume.chan[1].begin(), volume.chan[1].end());
    write_bytes(path, &h, sizeof(h), payload.data(), payload.size() * 4);
}

Volume read_volume_nifti(const std::string& path) {
    RawVolume raw = read_raw(path);
    if (raw.nt != 2)
        throw std::runtime_error("nifti: expected a 2-channel (4-D) volume: " + path);
    Volume out(raw.nx, raw.ny, raw.nz);
    out.voxel_mm = raw.voxel_mm;
    const std::size_t n = out.voxel_count();
    std::copy(raw.data.begin(), raw.data.begin() + n, out.chan[0].begin());
    std::copy(raw.data.begin() + n, raw.data.end(), out.chan[1].begin());
    return out;
}

Volume read_volume_pair(const std::string& path_ch0, const std::string& path_ch1) {
    const ScalarField a = read_scalar_nifti(path_ch0);
    const ScalarField b = read_scalar_nifti(path_ch1);
    if (a.nx != b.nx || a.ny != b.ny || a.nz != b.nz)
        throw std::runtime_error("nifti: modality volumes have different dims: " + path_ch0 + ", " +
                                 path_ch1);
    Volume out(a.nx, a.ny, a.nz);
    out.voxel_mm = a.voxel_mm;
    out.chan[0] = a.v;
    out.chan[1] = b.v;
    return out;
}

}  // namespace uad
