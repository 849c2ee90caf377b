#include "uad/pipeline.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "uad/parallel.hpp"

namespace uad {

std::vector<Index3> sample_training_locations(const BinaryMask3& mask, int n, int patch_size, Rng& rng) {
    if (n < 1) throw std::invalid_argument("sample_training_locations: n must be >= 1");
    std::vector<Index3> eligible = eligible_voxels(mask, patch_size);
    if (static_cast<std::size_t>(n) > eligible.size())
        throw std::invalid_argument("sample_training_locations: mask too small (" +
                                    std::to_string(eligible.size()) + " eligible voxels, requested " +
                                    std::to_string(n) + ")");
    for (int i = 0; i < n; ++i) {
        const std::size_t j = i + rng.uniform_index(eligible.size() - i);
        std::swap(eligible[i], eligible[j]);
    }
    eligible.resize(n);
    return eligible;
}

std::vector<float> encode_locations(const Volume& volume, const std::vector<Index3>& centers,
                                    const SaeModel<float>& encoder, int threads) {
    const int p = encoder.config.patch_size;
    const int d = encoder.latent_dim;
    std::vector<float> out(centers.size() * static_cast<std::size_t>(d));
    constexpr std::size_t kBatch = 256;
    const std::size_t n_chunks = (centers.size() + kBatch - 1) / kBatch;
    parallel_for_chunks(n_chunks, threads, [&](std::size_t c0, std::size_t c1) {
        Tensor4<float> batch;
        for (std::size_t c = c0; c < c1; ++c) {
            const std::size_t lo = c * kBatch;
            const std::size_t hi = std::min(centers.size(), lo + kBatch);
            const int B = static_cast<int>(hi - lo);
            if (batch.n != B) batch = Tensor4<float>(B, 2, p, p);
            for (int b = 0; b < B; ++b) write_patch_rows<float>(volume, centers[lo + b], p, batch, b);
            const std::vector<float> z = encode_batch(encoder, batch);
            std::copy(z.begin(), z.end(), out.begin() + lo * d);
        }
    });
    return out;
}

PatientModel fit_patient_model(const Volume& volume, const BinaryMask3& mask,
                               const SaeModel<float>& encoder, double nu, int n,
                               const SolverConfig& solver, Rng& rng, int threads) {
    if (!volume.same_dims(mask.nx, mask.ny, mask.nz))
        throw std::invalid_argument("fit_patient_model: volume/mask dims mismatch");
    PatientModel pm;
    pm.sampled_locations = sample_training_locations(mask, n, encoder.config.patch_size, rng);
    const std::vector<float> latents = encode_locations(volume, pm.sampled_locations, encoder, threads);
    const int d = encoder.latent_dim;
    std::vector<std::vector<double>> z(pm.sampled_locations.size(), std::vector<double>(d));
    for (std::size_t i = 0; i < z.size(); ++i)
        for (int k = 0; k < d; ++k) z[i][k] = latents[i * d + k];
    const double gamma = auto_gamma(z);
    pm.ocsvm = fit_ocsvm(z, nu, gamma, solver);
    pm.encoder_ref = encoder_fingerprint(encoder);
    return pm;
}

AnomalyMap score_volume(const Volume& volume, const BinaryMask3& mask, const SaeModel<float>& encoder,
                        const PatientModel& model, int threads) {
    if (!volume.same_dims(mask.nx, mask.ny, mask.nz))
        throw std::invalid_argument("score_volume: volume/mask dims mismatch");
    if (model.encoder_ref != encoder_fingerprint(encoder))
        throw std::invalid_argument("score_volume: patient model was fitted with a different encoder");
    AnomalyMap out;
    out.score = ScalarField(volume.nx, volume.ny, volume.nz);
    out.score.voxel_mm = volume.voxel_mm;
    out.valid = BinaryMask3(volume.nx, volume.ny, volume.nz);
    const std::vector<Index3> centers = eligible_voxels(mask, encoder.config.patch_size);
    const std::vector<float> latents = encode_locations(volume, centers, encoder, threads);
    const int d = encoder.latent_dim;
    parallel_for_chunks(centers.size(), threads, [&](std::size_t i0, std::size_t i1) {
        std::vector<double> z(d);
        for (std::size_t i = i0; i < i1; ++i) {
            for (int k = 0; k < d; ++k) z[k] = latents[i * d + k];
            const double f = decision_function(model.ocsvm, z);
            const Index3 c = centers[i];
            out.score.v[out.score.idx(c.x, c.y, c.z)] = static_cast<float>(-f);
            out.valid.v[out.valid.idx(c.x, c.y, c.z)] = 1;
        }
    });
    return out;
}

namespace {

double total_variance(const std::vector<double>& z, int n, int d) {
    double tv = 0;
    for (int k = 0; k < d; ++k) {
        double mean = 0;
        for (int i = 0; i < n; ++i) mean += z[static_cast<std::size_t>(i) * d + k];
        mean /= n;
        double var = 0;
        for (int i = 0; i < n; ++i) {
            const double dv = z[static_cast<std::size_t>(i) * d + k] - mean;
            var += dv * dv;
        }
        tv += var / n;
    }
    return tv;
}

}  // namespace

VoxelwiseBaseline::VoxelwiseBaseline(const std::vector<Volume>& controls, const SaeModel<float>& encoder,
                                     const BinaryMask3& mask, double nu, const SolverConfig& solver,
                                     int threads)
    : encoder_(&encoder),
      fingerprint_(encoder_fingerprint(encoder)),
      nx_(mask.nx),
      ny_(mask.ny),
      nz_(mask.nz),
      patch_size_(encoder.config.patch_size),
      latent_dim_(encoder.latent_dim),
      nu_(nu),
      solver_(solver) {
    if (controls.size() < 2)
        throw std::invalid_argument("voxelwise baseline: need at least 2 co-registered controls");
    n_controls_ = static_cast<int>(controls.size());
    voxels_ = eligible_voxels(mask, patch_size_);
    const std::size_t nv = voxels_.size();
    const int d = latent_dim_;

    control_latents_.assign(nv * static_cast<std::size_t>(n_controls_) * d, 0.0f);
    for (int s = 0; s < n_controls_; ++s) {
        if (!controls[s].same_dims(nx_, ny_, nz_))
            throw std::invalid_argument("voxelwise baseline: control dims mismatch");
        const std::vector<float> z = encode_locations(controls[s], voxels_, encoder, threads);
        for (std::size_t i = 0; i < nv; ++i)
            std::copy(z.begin() + i * d, z.begin() + (i + 1) * d,
                      control_latents_.begin() + (i * n_controls_ + s) * d);
    }

    ok_.assign(nv, 0);
    alphas_.assign(nv * static_cast<std::size_t>(n_controls_), 0.0);
    rho_.assign(nv, 0.0);
    gamma_.assign(nv, 0.0);
    parallel_for_chunks(nv, threads, [&](std::size_t i0, std::size_t i1) {
        std::vector<double> z(static_cast<std::size_t>(n_controls_) * d);
        std::vector<std::vector<double>> rows(n_controls_, std::vector<double>(d));
        for (std::size_t i = i0; i < i1; ++i) {
            const float* base = &control_latents_[i * n_controls_ * d];
            for (std::size_t k = 0; k < z.size(); ++k) z[k] = base[k];
            if (!(total_variance(z, n_controls_, d) > 0)) continue;  // degenerate voxel
            for (int s = 0; s < n_controls_; ++s)
                for (int k = 0; k < d; ++k) rows[s][k] = z[static_cast<std::size_t>(s) * d + k];
            const double gamma = auto_gamma(rows);
            const OcsvmFit fit = fit_ocsvm_detailed(rows, nu_, gamma, solver_);
            for (int s = 0; s < n_controls_; ++s) alphas_[i * n_controls_ + s] = fit.alpha_full[s];
            rho_[i] = fit.model.rho;
            gamma_[i] = gamma;
            ok_[i] = 1;
        }
    });
}

std::size_t VoxelwiseBaseline::degenerate_count() const {
    std::size_t c = 0;
    for (auto b : ok_) c += (b == 0);
    return c;
}

AnomalyMap VoxelwiseBaseline::score(const Volume& patient, int threads) const {
    if (!patient.same_dims(nx_, ny_, nz_))
        throw std::invalid_argument("voxelwise baseline: patient dims mismatch");
    if (fingerprint_ != encoder_fingerprint(*encoder_))
        throw std::runtime_error("voxelwise baseline: encoder changed since preparation");
    AnomalyMap out;
    out.score = ScalarField(nx_, ny_, nz_);
    out.score.voxel_mm = patient.voxel_mm;
    out.valid = BinaryMask3(nx_, ny_, nz_);
    const std::vector<float> latents = encode_locations(patient, voxels_, *encoder_, threads);
    const int d = latent_dim_;
    parallel_for_chunks(voxels_.size(), threads, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            if (!ok_[i]) continue;
            const float* zp = &latents[i * d];
            const float* base = &control_latents_[i * n_controls_ * d];
            double f = -rho_[i];
            const double g = gamma_[i];
            for (int s = 0; s < n_controls_; ++s) {
                const double a = alphas_[i * n_controls_ + s];
                if (a <= 0) continue;
                const float* sv = base + static_cast<std::size_t>(s) * d;
                double d2 = 0;
                for (int k = 0; k < d; ++k) {
                    const double dv = static_cast<double>(sv[k]) - zp[k];
                    d2 += dv * dv;
                }
                f += a * std::exp(-g * d2);
            }
            const Index3 c = voxels_[i];
            out.score.v[out.score.idx(c.x, c.y, c.z)] = static_cast<float>(-f);
            out.valid.v[out.valid.idx(c.x, c.y, c.z)] = 1;
        }
    });
    return out;
}

AnomalyMap fit_and_score_voxelwise(const std::vector<Volume>& controls, const SaeModel<float>& encoder,
                                   const Volume& volume, const BinaryMask3& mask, double nu,
                                   const SolverConfig& solver, int threads) {
    const VoxelwiseBaseline baseline(controls, encoder, mask, nu, solver, threads);
    return baseline.score(volume, threads);
}

}  // namespace uad
