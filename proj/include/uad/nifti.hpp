#pragma once

#include <string>

#include "uad/volume.hpp"

namespace uad {

// NIfTI-1 single-file volumes (.nii / .nii.gz), little-endian, payload types
// float32, int16 and uint8. The affine is written as an identity scaled by the
// voxel size and is not interpreted on read (inputs are assumed
// co-registered).

void write_scalar_nifti(const ScalarField& field, const std::string& path);
ScalarField read_scalar_nifti(const std::string& path);

void write_mask_nifti(const BinaryMask3& mask, const std::array<float, 3>& voxel_mm,
                      const std::string& path);
BinaryMask3 read_mask_nifti(const std::string& path);

// Two-channel volumes are stored as 4-D files with dim[4] = 2.
void write_volume_nifti(const Volume& volume, const std::string& path);
Volume read_volume_nifti(const std::string& path);
Volume read_volume_pair(const std::string& path_ch0, const std::string& path_ch1);

}  // namespace uad
