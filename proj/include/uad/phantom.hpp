#pragma once

#include <array>
#include <cstdint>

#include "uad/rng.hpp"
#include "uad/volume.hpp"

namespace uad {

// Synthetic two-channel brain phantom: ellipsoidal brain with a pseudo-GM
// shell and WM core, ventricle-like CSF, smooth multiplicative bias field,
// per-subject smooth deformation and additive Gaussian noise. Channel 0 is
// T1-like, channel 1 FLAIR-like.
struct PhantomConfig {
    std::array<int, 3> dims{64, 64, 64};
    std::array<float, 2> background_mean{0.05f, 0.04f};
    std::array<float, 2> csf_mean{0.16f, 0.10f};
    std::array<float, 2> gm_mean{0.46f, 0.55f};
    std::array<float, 2> wm_mean{0.70f, 0.42f};
    double noise_std = 0.018;
    double bias_amplitude = 0.05;   // multiplicative, 1 +- amplitude
    double deform_amplitude = 0.9;  // voxels; kept <= 2 so co-location stays meaningful
    int lesion_count_min = 1;
    int lesion_count_max = 5;
    double lesion_radius_min = 2.0;
    double lesion_radius_max = 3.6;
    double lesion_contrast = 2.0;            // channel-1 multiplier inside lesions
    double lesion_fraction_target = 0.0035;  // of brain voxels
    double lesion_fraction_tolerance = 0.5;  // accepted relative deviation
    int decoy_count = 0;                     // bright blobs inside the CSF, not labeled
    double decoy_contrast = 2.2;
    std::uint64_t seed = 0;
};

struct PhantomCase {
    Volume volume;
    BinaryMask3 brain_mask, csf_mask;
    BinaryMask3 lesion_mask;  // empty for controls
};

PhantomCase generate_control(const PhantomConfig& cfg, Rng& rng);
PhantomCase generate_patient(const PhantomConfig& cfg, Rng& rng);

}  // namespace uad
