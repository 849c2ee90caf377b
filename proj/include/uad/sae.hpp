#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "uad/adam.hpp"
#include "uad/layers.hpp"
#include "uad/rng.hpp"
#include "uad/tensor.hpp"
#include "uad/volume.hpp"

namespace uad {

struct ConvBlockSpec {
    int kernel = 3;
    int stride = 1;
    int filters = 1;
};

inline std::vector<ConvBlockSpec> default_sae_blocks() {
    return {{5, 1, 3}, {3, 1, 4}, {3, 3, 12}, {3, 1, 16}};
}

struct SaeConfig {
    int patch_size = 15;
    double alpha = 1.0;           // cosine-term weight
    int epochs = 30;
    int batch_size = 1000;        // pairs per mini-batch
    std::int64_t patches_per_subject = 250000;
    double validation_fraction = 0.1;
    std::uint64_t seed = 42;
    int in_channels = 2;
    std::vector<ConvBlockSpec> blocks = default_sae_blocks();
};

struct ShapeChain {
    std::vector<int> spatial;  // patch size through every encoder block
    int latent_ch = 0, latent_h = 0, latent_w = 0;
    int latent_dim = 0;
};

// Propagates the encoder shape rules; throws naming the failing block. The
// decoder mirrors the encoder with transposed convolutions, which also
// requires every stride to divide (in - kernel) exactly.
inline ShapeChain compute_shape_chain(int patch_size, const std::vector<ConvBlockSpec>& blocks) {
    if (patch_size < 1) throw std::invalid_argument("shape chain: patch size must be >= 1");
    if (blocks.empty()) throw std::invalid_argument("shape chain: no blocks");
    ShapeChain chain;
    chain.spatial.push_back(patch_size);
    int s = patch_size;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        if (s < b.kernel)
            throw std::invalid_argument("shape chain: block " + std::to_string(i + 1) + " needs spatial >= " +
                                        std::to_string(b.kernel) + " but receives " + std::to_string(s));
        if ((s - b.kernel) % b.stride != 0)
            throw std::invalid_argument("shape chain: block " + std::to_string(i + 1) +
                                        " stride leaves remainder, decoder cannot mirror (input " +
                                        std::to_string(s) + ", kernel " + std::to_string(b.kernel) +
                                        ", stride " + std::to_string(b.stride) + ")");
        s = conv_out_dim(s, b.kernel, b.stride);
        chain.spatial.push_back(s);
    }
    chain.latent_ch = blocks.back().filters;
    chain.latent_h = chain.latent_w = s;
    chain.latent_dim = chain.latent_ch * s * s;
    return chain;
}

// Siamese patch auto-encoder. Encoder blocks run conv -> GeLU -> batch norm;
// the decoder is the transposed mirror, its last block conv_T -> sigmoid with
// no batch norm. The two siamese branches share these parameters.
template <typename T>
struct SaeModel {
    SaeConfig config;
    std::vector<ConvLayer<T>> enc_conv;
    std::vector<BatchNorm<T>> enc_bn;
    std::vector<ConvLayer<T>> dec_conv;  // reverse block order, transposed
    std::vector<BatchNorm<T>> dec_bn;    // one fewer than dec_conv
    std::vector<int> spatial_chain;
    int latent_ch = 0, latent_h = 0, latent_w = 0, latent_dim = 0;

    int patch_size() const { return config.patch_size; }
    std::size_t block_count() const { return enc_conv.size(); }
};

template <typename T>
SaeModel<T> build_sae(const SaeConfig& config) {
    const ShapeChain chain = compute_shape_chain(config.patch_size, config.blocks);
    SaeModel<T> m;
    m.config = config;
    m.spatial_chain = chain.spatial;
    m.latent_ch = chain.latent_ch;
    m.latent_h = chain.latent_h;
    m.latent_w = chain.latent_w;
    m.latent_dim = chain.latent_dim;

    const std::size_t nb = config.blocks.size();
    int ch = config.in_channels;
    for (std::size_t i = 0; i < nb; ++i) {
        const auto& b = config.blocks[i];
        m.enc_conv.emplace_back(b.filters, ch, b.kernel, b.kernel, b.stride, b.stride, false);
        m.enc_bn.emplace_back(b.filters);
        ch = b.filters;
    }
    for (std::size_t j = 0; j < nb; ++j) {
        const std::size_t i = nb - 1 - j;  // mirrored encoder block
        const auto& b = config.blocks[i];
        const int below = (i == 0) ? config.in_channels : config.blocks[i - 1].filters;
        m.dec_conv.emplace_back(b.filters, below, b.kernel, b.kernel, b.stride, b.stride, true);
        if (j + 1 < nb) m.dec_bn.emplace_back(below);
    }

    Rng rng = Rng(config.seed).fork(0);
    auto init_conv = [&rng](ConvLayer<T>& c) {
        const int fan_in = c.input_channels() * c.kh * c.kw;
        const double bound = std::sqrt(1.0 / fan_in);
        for (auto& w : c.weight) w = static_cast<T>(rng.uniform_range(-bound, bound));
        // biases start at zero
    };
    for (auto& c : m.enc_conv) init_conv(c);
    for (auto& c : m.dec_conv) init_conv(c);
    return m;
}

// ---------------------------------------------------------------------------
// Parameter registry (fixed order shared by gradients, Adam and serialization)

template <typename T>
struct ParamRef {
    std::string name;
    T* data = nullptr;
    std::size_t size = 0;
};

template <typename T>
std::vector<ParamRef<T>> trainable_params(SaeModel<T>& m) {
    std::vector<ParamRef<T>> out;
    auto add = [&out](const std::string& name, std::vector<T>& v) {
        out.push_back({name, v.data(), v.size()});
    };
    for (std::size_t i = 0; i < m.enc_conv.size(); ++i) {
        const std::string p = "enc" + std::to_string(i);
        add(p + ".weight", m.enc_conv[i].weight);
        add(p + ".bias", m.enc_conv[i].bias);
        add(p + ".bn.scale", m.enc_bn[i].scale);
        add(p + ".bn.shift", m.enc_bn[i].shift);
    }
    for (std::size_t i = 0; i < m.dec_conv.size(); ++i) {
        const std::string p = "dec" + std::to_string(i);
        add(p + ".weight", m.dec_conv[i].weight);
        add(p + ".bias", m.dec_conv[i].bias);
        if (i < m.dec_bn.size()) {
            add(p + ".bn.scale", m.dec_bn[i].scale);
            add(p + ".bn.shift", m.dec_bn[i].shift);
        }
    }
    return out;
}

template <typename T>
std::size_t param_count(SaeModel<T>& m) {
    std::size_t n = 0;
    for (const auto& p : trainable_params(m)) n += p.size;
    return n;
}

// One gradient array per trainable parameter, same order as trainable_params.
template <typename T>
struct SaeGradients {
    std::vector<std::vector<T>> g;

    static SaeGradients zero_like(SaeModel<T>& m) {
        SaeGradients out;
        for (const auto& p : trainable_params(m)) out.g.emplace_back(p.size, T{0});
        return out;
    }
    void zero() {
        for (auto& v : g) std::fill(v.begin(), v.end(), T{0});
    }
    void add_to(std::size_t index, const std::vector<T>& other) {
        auto& dst = g[index];
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += other[i];
    }
};

// ---------------------------------------------------------------------------
// Forward / backward

template <typename T>
struct SaeBranchCache {
    std::vector<Tensor4<T>> enc_in, enc_pre, enc_act;
    std::vector<typename BatchNorm<T>::Cache> enc_bn;
    std::vector<Tensor4<T>> dec_in, dec_pre, dec_act;
    std::vector<typename BatchNorm<T>::Cache> dec_bn;
    Tensor4<T> latent;
    Tensor4<T> recon;
};

template <typename T>
Tensor4<T> encoder_forward_infer(const SaeModel<T>& m, const Tensor4<T>& x, int threads = 1) {
    Tensor4<T> cur = x;
    for (std::size_t i = 0; i < m.enc_conv.size(); ++i) {
        cur = m.enc_conv[i].forward(cur, threads);
        cur = activation(cur, ActKind::gelu, threads);
        cur = m.enc_bn[i].forward_infer(cur, threads);
    }
    return cur;
}

template <typename T>
Tensor4<T> decoder_forward_infer(const SaeModel<T>& m, const Tensor4<T>& z, int threads = 1) {
    Tensor4<T> cur = z;
    const std::size_t nd = m.dec_conv.size();
    for (std::size_t i = 0; i < nd; ++i) {
        cur = m.dec_conv[i].forward(cur, threads);
        if (i + 1 < nd) {
            cur = activation(cur, ActKind::gelu, threads);
            cur = m.dec_bn[i].forward_infer(cur, threads);
        } else {
            cur = activation(cur, ActKind::sigmoid, threads);
        }
    }
    return cur;
}

template <typename T>
void sae_branch_forward_train(SaeModel<T>& m, const Tensor4<T>& x, bool update_running,
                              SaeBranchCache<T>& cache, int threads = 1) {
    const std::size_t ne = m.enc_conv.size(), nd = m.dec_conv.size();
    cache.enc_in.resize(ne);
    cache.enc_pre.resize(ne);
    cache.enc_act.resize(ne);
    cache.enc_bn.resize(ne);
    cache.dec_in.resize(nd);
    cache.dec_pre.resize(nd);
    cache.dec_act.resize(nd > 0 ? nd - 1 : 0);
    cache.dec_bn.resize(nd > 0 ? nd - 1 : 0);

    Tensor4<T> cur = x;
    for (std::size_t i = 0; i < ne; ++i) {
        cache.enc_in[i] = cur;
        cache.enc_pre[i] = m.enc_conv[i].forward(cur, threads);
        cache.enc_act[i] = activation(cache.enc_pre[i], ActKind::gelu, threads);
        cur = m.enc_bn[i].forward_train(cache.enc_act[i], update_running, &cache.enc_bn[i], threads);
    }
    cache.latent = cur;
    for (std::size_t i = 0; i < nd; ++i) {
        cache.dec_in[i] = cur;
        cache.dec_pre[i] = m.dec_conv[i].forward(cur, threads);
        if (i + 1 < nd) {
            cache.dec_act[i] = activation(cache.dec_pre[i], ActKind::gelu, threads);
            cur = m.dec_bn[i].forward_train(cache.dec_act[i], update_running, &cache.dec_bn[i], threads);
        } else {
            cache.recon = activation(cache.dec_pre[i], ActKind::sigmoid, threads);
        }
    }
}

// Backpropagates one branch; d_recon is dLoss/d(reconstruction) and
// d_latent_extra (may be empty) is an additional dLoss/d(latent) term.
// Parameter gradients are accumulated into grads.
template <typename T>
void sae_branch_backward(SaeModel<T>& m, const SaeBranchCache<T>& cache, const Tensor4<T>& d_recon,
                         const Tensor4<T>& d_latent_extra, SaeGradients<T>& grads, int threads) {
    const std::size_t ne = m.enc_conv.size(), nd = m.dec_conv.size();
    // registry offsets: encoder block i occupies 4 slots, decoder block i
    // occupies 4 slots except the last one which has 2 (no batch norm).
    auto enc_slot = [](std::size_t i) { return 4 * i; };
    auto dec_slot = [ne](std::size_t i) { return 4 * ne + 4 * i; };

    ConvGrads<T> cg;
    std::vector<T> dscale, dshift;
    Tensor4<T> d_cur;

    // last decoder block: sigmoid
    {
        const std::size_t i = nd - 1;
        Tensor4<T> d_pre = activation_backward(cache.recon, d_recon, ActKind::sigmoid, threads);
        m.dec_conv[i].backward(cache.dec_in[i], d_pre, &d_cur, &cg, threads);
        grads.add_to(dec_slot(i) + 0, cg.weight);
        grads.add_to(dec_slot(i) + 1, cg.bias);
    }
    for (std::size_t step = 1; step < nd; ++step) {
        const std::size_t i = nd - 1 - step;
        Tensor4<T> d_act;
        m.dec_bn[i].backward(d_cur, cache.dec_bn[i], &d_act, &dscale, &dshift, threads);
        grads.add_to(dec_slot(i) + 2, dscale);
        grads.add_to(dec_slot(i) + 3, dshift);
        Tensor4<T> d_pre = activation_backward(cache.dec_pre[i], d_act, ActKind::gelu, threads);
        m.dec_conv[i].backward(cache.dec_in[i], d_pre, &d_cur, &cg, threads);
        grads.add_to(dec_slot(i) + 0, cg.weight);
        grads.add_to(dec_slot(i) + 1, cg.bias);
    }
    if (d_latent_extra.size() > 0) {
        for (std::size_t k = 0; k < d_cur.size(); ++k) d_cur.v[k] += d_latent_extra.v[k];
    }
    for (std::size_t step = 0; step < ne; ++step) {
        const std::size_t i = ne - 1 - step;
        Tensor4<T> d_act;
        m.enc_bn[i].backward(d_cur, cache.enc_bn[i], &d_act, &dscale, &dshift, threads);
        grads.add_to(enc_slot(i) + 2, dscale);
        grads.add_to(enc_slot(i) + 3, dshift);
        Tensor4<T> d_pre = activation_backward(cache.enc_pre[i], d_act, ActKind::gelu, threads);
        m.enc_conv[i].backward(cache.enc_in[i], d_pre, i > 0 ? &d_cur : nullptr, &cg, threads);
        grads.add_to(enc_slot(i) + 0, cg.weight);
        grads.add_to(enc_slot(i) + 1, cg.bias);
    }
}

// Cosine similarity with the zero-vector convention cos(0, .) = 0.
template <typename T>
double cosine_similarity(std::span<const T> a, std::span<const T> b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Mean per-pair loss over a batch of pairs in train-mode batch norm:
//   sum_t ||x_t - xhat_t||^2 - alpha * cos(z1, z2).
// With grads != nullptr also accumulates parameter gradients (both siamese
// branches share the parameter arrays).
template <typename T>
double sae_pair_batch_step(SaeModel<T>& m, const Tensor4<T>& x1, const Tensor4<T>& x2, double alpha,
                           bool update_running, SaeGradients<T>* grads, int threads = 1) {
    if (!x1.same_shape(x2) || x1.n < 1)
        throw std::invalid_argument("sae batch: branch inputs must share shape");
    const int B = x1.n;
    SaeBranchCache<T> c1, c2;
    sae_branch_forward_train(m, x1, update_running, c1, threads);
    sae_branch_forward_train(m, x2, update_running, c2, threads);

    const int d = m.latent_dim;
    double loss = 0;
    Tensor4<T> d_r1(x1.n, x1.c, x1.h, x1.w), d_r2(x1.n, x1.c, x1.h, x1.w);
    Tensor4<T> d_z1(c1.latent.n, c1.latent.c, c1.latent.h, c1.latent.w);
    Tensor4<T> d_z2(c2.latent.n, c2.latent.c, c2.latent.h, c2.latent.w);
    const double inv_b = 1.0 / B;
    const std::size_t per = x1.size() / B;
    for (int b = 0; b < B; ++b) {
        double rec = 0;
        for (std::size_t k = 0; k < per; ++k) {
            const std::size_t at = b * per + k;
            const double e1 = static_cast<double>(c1.recon.v[at]) - x1.v[at];
            const double e2 = static_cast<double>(c2.recon.v[at]) - x2.v[at];
            rec += e1 * e1 + e2 * e2;
            if (grads) {
                d_r1.v[at] = static_cast<T>(2.0 * e1 * inv_b);
                d_r2.v[at] = static_cast<T>(2.0 * e2 * inv_b);
            }
        }
        const T* z1 = &c1.latent.v[static_cast<std::size_t>(b) * d];
        const T* z2 = &c2.latent.v[static_cast<std::size_t>(b) * d];
        double dot = 0, n1 = 0, n2 = 0;
        for (int k = 0; k < d; ++k) {
            dot += static_cast<double>(z1[k]) * z2[k];
            n1 += static_cast<double>(z1[k]) * z1[k];
            n2 += static_cast<double>(z2[k]) * z2[k];
        }
        double cos = 0;
        if (n1 > 0 && n2 > 0) {
            const double denom = std::sqrt(n1) * std::sqrt(n2);
            cos = dot / denom;
            if (grads) {
                const double s = alpha * inv_b;
                for (int k = 0; k < d; ++k) {
                    // d(-alpha cos)/dz1 = -alpha (z2/denom - cos z1/n1)
                    d_z1.v[static_cast<std::size_t>(b) * d + k] =
                        static_cast<T>(-s * (z2[k] / denom - cos * z1[k] / n1));
                    d_z2.v[static_cast<std::size_t>(b) * d + k] =
                        static_cast<T>(-s * (z1[k] / denom - cos * z2[k] / n2));
                }
            }
        }
        loss += rec - alpha * cos;
    }
    loss *= inv_b;
    if (grads) {
        sae_branch_backward(m, c1, d_r1, d_z1, *grads, threads);
        sae_branch_backward(m, c2, d_r2, d_z2, *grads, threads);
    }
    return loss;
}

template <typename T>
double sae_pair_batch_loss(SaeModel<T>& m, const Tensor4<T>& x1, const Tensor4<T>& x2, double alpha,
                           int threads = 1) {
    return sae_pair_batch_step(m, x1, x2, alpha, /*update_running=*/false,
                               static_cast<SaeGradients<T>*>(nullptr), threads);
}

// Inference-mode loss over a batch (running batch-norm statistics, mean over
// pairs); used for validation.
template <typename T>
double sae_pair_batch_loss_infer(const SaeModel<T>& m, const Tensor4<T>& x1, const Tensor4<T>& x2,
                                 double alpha, int threads = 1) {
    const Tensor4<T> z1 = encoder_forward_infer(m, x1, threads);
    const Tensor4<T> z2 = encoder_forward_infer(m, x2, threads);
    const Tensor4<T> r1 = decoder_forward_infer(m, z1, threads);
    const Tensor4<T> r2 = decoder_forward_infer(m, z2, threads);
    const int B = x1.n, d = m.latent_dim;
    const std::size_t per = x1.size() / B;
    double loss = 0;
    for (int b = 0; b < B; ++b) {
        double rec = 0;
        for (std::size_t k = 0; k < per; ++k) {
            const std::size_t at = b * per + k;
            const double e1 = static_cast<double>(r1.v[at]) - x1.v[at];
            const double e2 = static_cast<double>(r2.v[at]) - x2.v[at];
            rec += e1 * e1 + e2 * e2;
        }
        const double cos = cosine_similarity(
            std::span<const T>(&z1.v[static_cast<std::size_t>(b) * d], d),
            std::span<const T>(&z2.v[static_cast<std::size_t>(b) * d], d));
        loss += rec - alpha * cos;
    }
    return loss / B;
}

// ---------------------------------------------------------------------------
// Encode / decode / per-pair loss (inference mode: frozen model, running
// batch-norm statistics)

template <typename T>
std::vector<T> encode(const Patch<T>& patch, const SaeModel<T>& m, int threads = 1) {
    if (patch.size != m.config.patch_size)
        throw std::invalid_argument("encode: patch size " + std::to_string(patch.size) +
                                    " does not match model patch size " + std::to_string(m.config.patch_size));
    Tensor4<T> x(1, 2, patch.size, patch.size);
    x.v = patch.data;
    const Tensor4<T> z = encoder_forward_infer(m, x, threads);
    return z.v;
}

// Encodes a (B, 2, p, p) batch; returns a row-major (B x latent_dim) matrix.
template <typename T>
std::vector<T> encode_batch(const SaeModel<T>& m, const Tensor4<T>& batch, int threads = 1) {
    if (batch.h != m.config.patch_size || batch.w != m.config.patch_size || batch.c != m.config.in_channels)
        throw std::invalid_argument("encode_batch: batch shape mismatch " + batch.shape_str());
    return encoder_forward_infer(m, batch, threads).v;
}

template <typename T>
Patch<T> decode(const std::vector<T>& z, const SaeModel<T>& m, int threads = 1) {
    if (static_cast<int>(z.size()) != m.latent_dim)
        throw std::invalid_argument("decode: latent length " + std::to_string(z.size()) +
                                    " does not match latent_dim " + std::to_string(m.latent_dim));
    Tensor4<T> zt(1, m.latent_ch, m.latent_h, m.latent_w);
    zt.v = z;
    const Tensor4<T> r = decoder_forward_infer(m, zt, threads);
    Patch<T> p;
    p.size = m.config.patch_size;
    p.data = r.v;
    return p;
}

template <typename T>
double sae_loss(const PatchPair<T>& pair, const SaeModel<T>& m, double alpha, int threads = 1) {
    if (pair.x1.size != pair.x2.size) throw std::invalid_argument("sae_loss: patch size mismatch");
    Tensor4<T> x1(1, 2, pair.x1.size, pair.x1.size), x2(1, 2, pair.x2.size, pair.x2.size);
    x1.v = pair.x1.data;
    x2.v = pair.x2.data;
    return sae_pair_batch_loss_infer(m, x1, x2, alpha, threads);
}

// ---------------------------------------------------------------------------
// Pair sampling

struct PairSample {
    Index3 center;
    int subject_a = -1, subject_b = -1;
};

// Uniformly samples centers valid in every control mask (full window in
// bounds), then two distinct subjects per pair.
inline std::vector<PairSample> sample_patch_pairs(const std::vector<Volume>& controls,
                                                  const std::vector<BinaryMask3>& masks,
                                                  std::int64_t pair_count, int patch_size, Rng& rng) {
    if (controls.size() < 2) throw std::invalid_argument("sample_patch_pairs: need at least 2 control volumes");
    if (masks.size() != controls.size())
        throw std::invalid_argument("sample_patch_pairs: one brain mask per control required");
    BinaryMask3 common = masks[0];
    for (std::size_t s = 1; s < masks.size(); ++s) {
        if (!common.same_dims(masks[s])) throw std::invalid_argument("sample_patch_pairs: mask dims differ");
        for (std::size_t i = 0; i < common.v.size(); ++i) common.v[i] &= masks[s].v[i];
    }
    const std::vector<Index3> centers = eligible_voxels(common, patch_size);
    if (centers.empty()) throw std::invalid_argument("sample_patch_pairs: no valid centers");
    const int ns = static_cast<int>(controls.size());
    std::vector<PairSample> out;
    out.reserve(static_cast<std::size_t>(pair_count));
    for (std::int64_t i = 0; i < pair_count; ++i) {
        PairSample p;
        p.center = centers[rng.uniform_index(centers.size())];
        p.subject_a = static_cast<int>(rng.uniform_index(ns));
        int b = static_cast<int>(rng.uniform_index(ns - 1));
        if (b >= p.subject_a) ++b;
        p.subject_b = b;
        out.push_back(p);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    int best_epoch = 0;
};

// patches_per_subject counts individual patches; every sampled pair consumes
// two of them.
inline std::int64_t planned_pair_count(const SaeConfig& config, std::size_t n_subjects) {
    return config.patches_per_subject * static_cast<std::int64_t>(n_subjects) / 2;
}

namespace detail {

inline std::uint64_t location_hash(Index3 c) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::uint64_t k : {static_cast<std::uint64_t>(c.x), static_cast<std::uint64_t>(c.y),
                            static_cast<std::uint64_t>(c.z)}) {
        h ^= k + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        h *= 0x100000001b3ULL;
    }
    return h;
}

template <typename T>
void fill_pair_batch(const std::vector<Volume>& controls, const std::vector<PairSample>& samples,
                     const std::vector<std::size_t>& order, std::size_t lo, std::size_t hi,
                     int patch_size, Tensor4<T>& x1, Tensor4<T>& x2) {
    const int B = static_cast<int>(hi - lo);
    if (x1.n != B) {
        x1 = Tensor4<T>(B, 2, patch_size, patch_size);
        x2 = Tensor4<T>(B, 2, patch_size, patch_size);
    }
    for (int b = 0; b < B; ++b) {
        const PairSample& s = samples[order[lo + b]];
        write_patch_rows<T>(controls[s.subject_a], s.center, patch_size, x1, b);
        write_patch_rows<T>(controls[s.subject_b], s.center, patch_size, x2, b);
    }
}

}  // namespace detail

// Trains the SAE on control volumes and returns the weights of the epoch with
// minimum validation loss; the caller treats the encoder as frozen afterwards.
// The train/validation split is disjoint by patch location.
template <typename T>
std::pair<SaeModel<T>, TrainHistory> train_sae(const std::vector<Volume>& controls,
                                               const std::vector<BinaryMask3>& masks,
                                               const SaeConfig& config, int threads = 1) {
    if (controls.size() < 2) throw std::invalid_argument("train_sae: need at least 2 controls");
    if (config.epochs < 1 || config.batch_size < 2)
        throw std::invalid_argument("train_sae: epochs >= 1 and batch_size >= 2 required");

    SaeModel<T> model = build_sae<T>(config);
    const std::int64_t pair_count = planned_pair_count(config, controls.size());
    Rng root(config.seed);
    Rng sample_rng = root.fork(1);
    Rng shuffle_rng = root.fork(2);
    const std::vector<PairSample> samples =
        sample_patch_pairs(controls, masks, pair_count, config.patch_size, sample_rng);

    std::vector<std::size_t> train_idx, val_idx;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double u = static_cast<double>(detail::location_hash(samples[i].center) >> 11) * 0x1.0p-53;
        (u < config.validation_fraction ? val_idx : train_idx).push_back(i);
    }
    if (train_idx.size() < 2) throw std::invalid_argument("train_sae: too few training pairs");

    AdamState<T> adam(param_count(model));
    SaeGradients<T> grads = SaeGradients<T>::zero_like(model);
    Tensor4<T> x1, x2;

    TrainHistory history;
    SaeModel<T> best = model;
    double best_val = std::numeric_limits<double>::infinity();
    history.best_epoch = 0;

    auto eval_loss = [&](const std::vector<std::size_t>& idx) {
        if (idx.empty()) return std::numeric_limits<double>::quiet_NaN();
        double total = 0;
        std::size_t n = 0;
        const std::size_t eval_batch = static_cast<std::size_t>(config.batch_size);
        for (std::size_t lo = 0; lo < idx.size(); lo += eval_batch) {
            const std::size_t hi = std::min(idx.size(), lo + eval_batch);
            detail::fill_pair_batch(controls, samples, idx, lo, hi, config.patch_size, x1, x2);
            total += sae_pair_batch_loss_infer(model, x1, x2, config.alpha, threads) *
                     static_cast<double>(hi - lo);
            n += hi - lo;
        }
        return total / static_cast<double>(n);
    };

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle_rng.shuffle(train_idx);
        double epoch_loss = 0;
        std::size_t seen = 0;
        for (std::size_t lo = 0; lo < train_idx.size(); lo += config.batch_size) {
            const std::size_t hi = std::min(train_idx.size(), lo + static_cast<std::size_t>(config.batch_size));
            if (hi - lo < 2) continue;  // batch norm needs at least 2 per branch
            detail::fill_pair_batch(controls, samples, train_idx, lo, hi, config.patch_size, x1, x2);
            grads.zero();
            const double loss =
                sae_pair_batch_step(model, x1, x2, config.alpha, /*update_running=*/true, &grads, threads);
            if (!std::isfinite(loss))
                throw std::runtime_error("train_sae: non-finite loss at epoch " + std::to_string(epoch) +
                                         ", batch offset " + std::to_string(lo));
            adam_begin_step(adam);
            std::size_t off = 0;
            auto params = trainable_params(model);
            for (std::size_t pi = 0; pi < params.size(); ++pi) {
                adam_apply_segment(std::span<T>(params[pi].data, params[pi].size),
                                   std::span<const T>(grads.g[pi].data(), grads.g[pi].size()),
                                   adam, off, threads);
                off += params[pi].size;
            }
            epoch_loss += loss * static_cast<double>(hi - lo);
            seen += hi - lo;
        }
        history.train_loss.push_back(seen ? epoch_loss / static_cast<double>(seen)
                                          : std::numeric_limits<double>::quiet_NaN());
        const double val = val_idx.empty() ? history.train_loss.back() : eval_loss(val_idx);
        history.val_loss.push_back(val);
        if (val < best_val) {
            best_val = val;
            best = model;
            history.best_epoch = epoch;
        }
    }
    return {std::move(best), std::move(history)};
}

// 64-bit FNV-1a over the encoder architecture and weights; identifies which
// encoder a patient model was fitted with.
template <typename T>
std::uint64_t encoder_fingerprint(const SaeModel<T>& m) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* p, std::size_t n) {
        const unsigned char* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    const int meta[2] = {m.config.patch_size, m.latent_dim};
    mix(meta, sizeof(meta));
    for (const auto& c : m.enc_conv) {
        mix(c.weight.data(), c.weight.size() * sizeof(T));
        mix(c.bias.data(), c.bias.size() * sizeof(T));
    }
    for (const auto& bn : m.enc_bn) {
        mix(bn.scale.data(), bn.scale.size() * sizeof(T));
        mix(bn.shift.data(), bn.shift.size() * sizeof(T));
        mix(bn.running_mean.data(), bn.running_mean.size() * sizeof(T));
        mix(bn.running_var.data(), bn.running_var.size() * sizeof(T));
    }
    return h;
}

}  // namespace uad
