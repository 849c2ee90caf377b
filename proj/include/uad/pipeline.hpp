#pragma once

#include <cstdint>
#include <vector>

#include "uad/ocsvm.hpp"
#include "uad/rng.hpp"
#include "uad/sae.hpp"
#include "uad/volume.hpp"

namespace uad {

// Per-patient normality model: one OC-SVM fitted on latents sampled from the
// patient's own brain.
struct PatientModel {
    OcsvmModel ocsvm;
    std::vector<Index3> sampled_locations;
    std::uint64_t encoder_ref = 0;
};

// n distinct uniform draws from the eligible voxels (in mask, full patch
// window in bounds).
std::vector<Index3> sample_training_locations(const BinaryMask3& mask, int n, int patch_size, Rng& rng);

PatientModel fit_patient_model(const Volume& volume, const BinaryMask3& mask,
                               const SaeModel<float>& encoder, double nu, int n,
                               const SolverConfig& solver, Rng& rng, int threads = 1);

// Scores every eligible voxel with s = -f_p(z); ineligible voxels get score 0
// and valid_mask false.
AnomalyMap score_volume(const Volume& volume, const BinaryMask3& mask, const SaeModel<float>& encoder,
                        const PatientModel& model, int threads = 1);

// Per-voxel baseline: one OC-SVM per voxel fitted on the control latents at
// that location (one latent per control). Fits are patient-independent, so
// they are prepared once and reused for any number of patients.
class VoxelwiseBaseline {
public:
    VoxelwiseBaseline(const std::vector<Volume>& controls, const SaeModel<float>& encoder,
                      const BinaryMask3& mask, double nu, const SolverConfig& solver, int threads = 1);

    AnomalyMap score(const Volume& patient, int threads = 1) const;

    std::size_t eligible_count() const { return voxels_.size(); }
    std::size_t degenerate_count() const;

private:
    const SaeModel<float>* encoder_;
    std::uint64_t fingerprint_;
    int nx_, ny_, nz_;
    int patch_size_, latent_dim_;
    double nu_;
    SolverConfig solver_;
    std::vector<Index3> voxels_;          // eligible voxels
    std::vector<float> control_latents_;  // voxel-major: [voxel][control][dim]
    int n_controls_ = 0;
    std::vector<std::uint8_t> ok_;        // non-degenerate voxels
    std::vector<double> alphas_;          // [voxel][control]
    std::vector<double> rho_, gamma_;
};

AnomalyMap fit_and_score_voxelwise(const std::vector<Volume>& controls, const SaeModel<float>& encoder,
                                   const Volume& volume, const BinaryMask3& mask, double nu,
                                   const SolverConfig& solver = {}, int threads = 1);

// Batched encoding of the patches centered at the given voxels; returns a
// row-major (voxels x latent_dim) matrix.
std::vector<float> encode_locations(const Volume& volume, const std::vector<Index3>& centers,
                                    const SaeModel<float>& encoder, int threads = 1);

}  // namespace uad
