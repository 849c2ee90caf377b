#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "uad/parallel.hpp"
#include "uad/tensor.hpp"

namespace uad {

// Valid-convolution output extent: floor((in - k) / s) + 1.
inline int conv_out_dim(int in, int k, int s) { return (in - k) / s + 1; }

// Transposed (adjoint) convolution output extent.
inline int conv_transposed_out_dim(int in, int k, int s) { return (in - 1) * s + k; }

template <typename T>
struct ConvGrads {
    std::vector<T> weight;
    std::vector<T> bias;
};

// 2-D convolution without padding. Weights are stored (out_ch, in_ch, kh, kw)
// in the forward orientation; a layer with transposed=true applies the linear
// adjoint of the forward map (channels out_ch -> in_ch, spatial upsampling)
// and carries a bias over its own output channels (= in_ch).
template <typename T>
struct ConvLayer {
    int out_ch = 0, in_ch = 0, kh = 0, kw = 0;
    int sh = 1, sw = 1;
    bool transposed = false;
    std::vector<T> weight;  // out_ch * in_ch * kh * kw
    std::vector<T> bias;    // transposed ? in_ch : out_ch

    ConvLayer() = default;
    ConvLayer(int out_ch_, int in_ch_, int kh_, int kw_, int sh_, int sw_, bool transposed_)
        : out_ch(out_ch_), in_ch(in_ch_), kh(kh_), kw(kw_), sh(sh_), sw(sw_), transposed(transposed_) {
        if (out_ch < 1 || in_ch < 1 || kh < 1 || kw < 1 || sh < 1 || sw < 1)
            throw std::invalid_argument("ConvLayer: kernel dims and strides must be >= 1");
        weight.assign(static_cast<std::size_t>(out_ch) * in_ch * kh * kw, T{0});
        bias.assign(transposed ? in_ch : out_ch, T{0});
    }

    std::size_t weight_index(int oc, int ic, int ky, int kx) const {
        return ((static_cast<std::size_t>(oc) * in_ch + ic) * kh + ky) * kw + kx;
    }

    int input_channels() const { return transposed ? out_ch : in_ch; }
    int output_channels() const { return transposed ? in_ch : out_ch; }

    Tensor4<T> forward(const Tensor4<T>& x, int threads = 1) const {
        check_input(x);
        return transposed ? forward_transposed(x, threads) : forward_plain(x, threads);
    }

    // dx/dweight/dbias may be null to skip that gradient.
    void backward(const Tensor4<T>& x, const Tensor4<T>& dy, Tensor4<T>* dx,
                  ConvGrads<T>* grads, int threads = 1) const {
        check_input(x);
        if (transposed)
            backward_transposed(x, dy, dx, grads, threads);
        else
            backward_plain(x, dy, dx, grads, threads);
    }

private:
    void check_input(const Tensor4<T>& x) const {
        if (x.c != input_channels())
            throw std::invalid_argument("conv2d: input has " + std::to_string(x.c) +
                                        " channels, layer expects " + std::to_string(input_channels()));
        if (!transposed) {
            if (x.h < kh || x.w < kw)
                throw std::invalid_argument("conv2d: output dims < 1 for input " + x.shape_str());
        }
    }

    Tensor4<T> forward_plain(const Tensor4<T>& x, int threads) const {
        const int oh = conv_out_dim(x.h, kh, sh), ow = conv_out_dim(x.w, kw, sw);
        Tensor4<T> y(x.n, out_ch, oh, ow);
        parallel_for_chunks(static_cast<std::size_t>(x.n), threads, [&](std::size_t b0, std::size_t b1) {
            for (std::size_t b = b0; b < b1; ++b) {
                for (int oc = 0; oc < out_ch; ++oc) {
                    T* yp = y.plane_ptr(static_cast<int>(b), oc);
                    const T bv = bias[oc];
                    for (int i = 0; i < oh * ow; ++i) yp[i] = bv;
                    for (int ic = 0; ic < in_ch; ++ic) {
                        const T* xp = x.plane_ptr(static_cast<int>(b), ic);
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const T wv = weight[weight_index(oc, ic, ky, kx)];
                                for (int r = 0; r < oh; ++r) {
                                    const T* xrow = xp + static_cast<std::size_t>(r * sh + ky) * x.w + kx;
                                    T* yrow = yp + static_cast<std::size_t>(r) * ow;
                                    if (sw == 1) {
                                        for (int q = 0; q < ow; ++q) yrow[q] += wv * xrow[q];
                                    } else {
                                        for (int q = 0; q < ow; ++q) yrow[q] += wv * xrow[q * sw];
                                    }
                                }
                            }
                    }
                }
            }
        });
        return y;
    }

    Tensor4<T> forward_transposed(const Tensor4<T>& x, int threads) const {
        const int oh = conv_transposed_out_dim(x.h, kh, sh), ow = conv_transposed_out_dim(x.w, kw, sw);
        Tensor4<T> y(x.n, in_ch, oh, ow);
        parallel_for_chunks(static_cast<std::size_t>(x.n), threads, [&](std::size_t b0, std::size_t b1) {
            for (std::size_t b = b0; b < b1; ++b) {
                for (int ic = 0; ic < in_ch; ++ic) {
                    T* yp = y.plane_ptr(static_cast<int>(b), ic);
                    const T bv = bias[ic];
                    for (int i = 0; i < oh * ow; ++i) yp[i] = bv;
                }
                for (int oc = 0; oc < out_ch; ++oc) {
                    const T* xp = x.plane_ptr(static_cast<int>(b), oc);
                    for (int ic = 0; ic < in_ch; ++ic) {
                        T* yp = y.plane_ptr(static_cast<int>(b), ic);
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const T wv = weight[weight_index(oc, ic, ky, kx)];
                                for (int r = 0; r < x.h; ++r) {
                                    const T* xrow = xp + static_cast<std::size_t>(r) * x.w;
                                    T* yrow = yp + static_cast<std::size_t>(r * sh + ky) * ow + kx;
                                    if (sw == 1) {
                                        for (int q = 0; q < x.w; ++q) yrow[q] += wv * xrow[q];
                                    } else {
                                        for (int q = 0; q < x.w; ++q) yrow[q * sw] += wv * xrow[q];
                                    }
                                }
                            }
                    }
                }
            }
        });
        return y;
    }

    void backward_plain(const Tensor4<T>& x, const Tensor4<T>& dy, Tensor4<T>* dx,
                        ConvGrads<T>* grads, int threads) const {
        const int oh = conv_out_dim(x.h, kh, sh), ow = conv_out_dim(x.w, kw, sw);
        if (dy.n != x.n || dy.c != out_ch || dy.h != oh || dy.w != ow)
            throw std::invalid_argument("conv2d backward: gradient shape mismatch " + dy.shape_str());
        if (dx) {
            *dx = Tensor4<T>(x.n, x.c, x.h, x.w);
            parallel_for_chunks(static_cast<std::size_t>(x.n), threads, [&](std::size_t b0, std::size_t b1) {
                for (std::size_t b = b0; b < b1; ++b)
                    for (int oc = 0; oc < out_ch; ++oc) {
                        const T* gp = dy.plane_ptr(static_cast<int>(b), oc);
                        for (int ic = 0; ic < in_ch; ++ic) {
                            T* dp = dx->plane_ptr(static_cast<int>(b), ic);
                            for (int ky = 0; ky < kh; ++ky)
                                for (int kx = 0; kx < kw; ++kx) {
                                    const T wv = weight[weight_index(oc, ic, ky, kx)];
                                    for (int r = 0; r < oh; ++r) {
                                        const T* grow = gp + static_cast<std::size_t>(r) * ow;
                                        T* drow = dp + static_cast<std::size_t>(r * sh + ky) * x.w + kx;
                                        for (int q = 0; q < ow; ++q) drow[q * sw] += wv * grow[q];
                                    }
                                }
                        }
                    }
            });
        }
        if (grads) {
            grads->weight.assign(weight.size(), T{0});
            grads->bias.assign(bias.size(), T{0});
            parallel_for_chunks(static_cast<std::size_t>(out_ch), threads, [&](std::size_t c0, std::size_t c1) {
                for (std::size_t oc = c0; oc < c1; ++oc) {
                    T bsum{0};
                    for (int b = 0; b < x.n; ++b) {
                        const T* gp = dy.plane_ptr(b, static_cast<int>(oc));
                        for (int i = 0; i < oh * ow; ++i) bsum += gp[i];
                        for (int ic = 0; ic < in_ch; ++ic) {
                            const T* xp = x.plane_ptr(b, ic);
                            for (int ky = 0; ky < kh; ++ky)
                                for (int kx = 0; kx < kw; ++kx) {
                                    T acc{0};
                                    for (int r = 0; r < oh; ++r) {
                                        const T* grow = gp + static_cast<std::size_t>(r) * ow;
                                        const T* xrow = xp + static_cast<std::size_t>(r * sh + ky) * x.w + kx;
                                        for (int q = 0; q < ow; ++q) acc += grow[q] * xrow[q * sw];
                                    }
                                    grads->weight[weight_index(static_cast<int>(oc), ic, ky, kx)] += acc;
                                }
                        }
                    }
                    grads->bias[oc] = bsum;
                }
            });
        }
    }

    void backward_transposed(const Tensor4<T>& x, const Tensor4<T>& dy, Tensor4<T>* dx,
                             ConvGrads<T>* grads, int threads) const {
        const int oh = conv_transposed_out_dim(x.h, kh, sh), ow = conv_transposed_out_dim(x.w, kw, sw);
        if (dy.n != x.n || dy.c != in_ch || dy.h != oh || dy.w != ow)
            throw std::invalid_argument("conv2d_transpose backward: gradient shape mismatch " + dy.shape_str());
        if (dx) {
            *dx = Tensor4<T>(x.n, x.c, x.h, x.w);
            parallel_for_chunks(static_cast<std::size_t>(x.n), threads, [&](std::size_t b0, std::size_t b1) {
                for (std::size_t b = b0; b < b1; ++b)
                    for (int oc = 0; oc < out_ch; ++oc) {
                        T* dp = dx->plane_ptr(static_cast<int>(b), oc);
                        for (int ic = 0; ic < in_ch; ++ic) {
                            const T* gp = dy.plane_ptr(static_cast<int>(b), ic);
                            for (int ky = 0; ky < kh; ++ky)
                                for (int kx = 0; kx < kw; ++kx) {
                                    const T wv = weight[weight_index(oc, ic, ky, kx)];
                                    for (int r = 0; r < x.h; ++r) {
                                        T* drow = dp + static_cast<std::size_t>(r) * x.w;
                                        const T* grow = gp + static_cast<std::size_t>(r * sh + ky) * ow + kx;
                                        for (int q = 0; q < x.w; ++q) drow[q] += wv * grow[q * sw];
                                    }
                                }
                        }
                    }
            });
        }
        if (grads) {
            grads->weight.assign(weight.size(), T{0});
            grads->bias.assign(bias.size(), T{0});
            parallel_for_chunks(static_cast<std::size_t>(out_ch), threads, [&](std::size_t c0, std::size_t c1) {
                for (std::size_t oc = c0; oc < c1; ++oc) {
                    for (int b = 0; b < x.n; ++b) {
                        const T* xp = x.plane_ptr(b, static_cast<int>(oc));
                        for (int ic = 0; ic < in_ch; ++ic) {
                            const T* gp = dy.plane_ptr(b, ic);
                            for (int ky = 0; ky < kh; ++ky)
                                for (int kx = 0; kx < kw; ++kx) {
                                    T acc{0};
                                    for (int r = 0; r < x.h; ++r) {
                                        const T* xrow = xp + static_cast<std::size_t>(r) * x.w;
                                        const T* grow = gp + static_cast<std::size_t>(r * sh + ky) * ow + kx;
                                        for (int q = 0; q < x.w; ++q) acc += xrow[q] * grow[q * sw];
                                    }
                                    grads->weight[weight_index(static_cast<int>(oc), ic, ky, kx)] += acc;
                                }
                        }
                    }
                }
            });
            for (int ic = 0; ic < in_ch; ++ic) {
                T bsum{0};
                for (int b = 0; b < x.n; ++b) {
                    const T* gp = dy.plane_ptr(b, ic);
                    for (int i = 0; i < oh * ow; ++i) bsum += gp[i];
                }
                grads->bias[ic] = bsum;
            }
        }
    }
};

// Batch normalization with population batch statistics. Inference always
// normalizes with the running statistics.
template <typename T>
struct BatchNorm {
    T momentum = T(0.1);
    T eps = T(1e-5);
    std::vector<T> scale, shift, running_mean, running_var;

    BatchNorm() = default;
    explicit BatchNorm(int channels)
        : scale(channels, T(1)), shift(channels, T(0)),
          running_mean(channels, T(0)), running_var(channels, T(1)) {}

    int channels() const { return static_cast<int>(scale.size()); }

    struct Cache {
        std::vector<T> inv_std;
        Tensor4<T> xhat;
    };

    Tensor4<T> forward_train(const Tensor4<T>& x, bool update_running, Cache* cache, int threads = 1) {
        check(x);
        if (x.n < 2)
            throw std::invalid_argument("batch_norm: train mode requires batch size >= 2");
        const int C = channels();
        Tensor4<T> y(x.n, x.c, x.h, x.w);
        if (cache) {
            cache->inv_std.assign(C, T{0});
            cache->xhat = Tensor4<T>(x.n, x.c, x.h, x.w);
        }
        const std::size_t plane = x.plane();
        const T count = static_cast<T>(static_cast<std::size_t>(x.n) * plane);
        parallel_for_chunks(static_cast<std::size_t>(C), threads, [&](std::size_t c0, std::size_t c1) {
            for (std::size_t ch = c0; ch < c1; ++ch) {
                T sum{0};
                for (int b = 0; b < x.n; ++b) {
                    const T* xp = x.plane_ptr(b, static_cast<int>(ch));
                    for (std::size_t i = 0; i < plane; ++i) sum += xp[i];
                }
                const T mean = sum / count;
                T sq{0};
                for (int b = 0; b < x.n; ++b) {
                    const T* xp = x.plane_ptr(b, static_cast<int>(ch));
                    for (std::size_t i = 0; i < plane; ++i) {
                        const T d = xp[i] - mean;
                        sq += d * d;
                    }
                }
                const T var = sq / count;
                const T inv_std = T(1) / std::sqrt(var + eps);
                const T g = scale[ch], s = shift[ch];
                for (int b = 0; b < x.n; ++b) {
                    const T* xp = x.plane_ptr(b, static_cast<int>(ch));
                    T* yp = y.plane_ptr(b, static_cast<int>(ch));
                    T* hp = cache ? cache->xhat.plane_ptr(b, static_cast<int>(ch)) : nullptr;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const T xh = (xp[i] - mean) * inv_std;
                        if (hp) hp[i] = xh;
                        yp[i] = g * xh + s;
                    }
                }
                if (cache) cache->inv_std[ch] = inv_std;
                if (update_running) {
                    running_mean[ch] = (T(1) - momentum) * running_mean[ch] + momentum * mean;
                    running_var[ch] = (T(1) - momentum) * running_var[ch] + momentum * var;
                }
            }
        });
        return y;
    }

    Tensor4<T> forward_infer(const Tensor4<T>& x, int threads = 1) const {
        check(x);
        Tensor4<T> y(x.n, x.c, x.h, x.w);
        const std::size_t plane = x.plane();
        parallel_for_chunks(static_cast<std::size_t>(channels()), threads, [&](std::size_t c0, std::size_t c1) {
            for (std::size_t ch = c0; ch < c1; ++ch) {
                const T inv_std = T(1) / std::sqrt(running_var[ch] + eps);
                const T g = scale[ch], s = shift[ch], m = running_mean[ch];
                for (int b = 0; b < x.n; ++b) {
                    const T* xp = x.plane_ptr(b, static_cast<int>(ch));
                    T* yp = y.plane_ptr(b, static_cast<int>(ch));
                    for (std::size_t i = 0; i < plane; ++i) yp[i] = g * (xp[i] - m) * inv_std + s;
                }
            }
        });
        return y;
    }

    // Backward through train-mode normalization (batch statistics included).
    void backward(const Tensor4<T>& dy, const Cache& cache, Tensor4<T>* dx,
                  std::vector<T>* dscale, std::vector<T>* dshift, int threads = 1) const {
        const int C = channels();
        if (dy.c != C) throw std::invalid_argument("batch_norm backward: channel mismatch");
        if (dx) *dx = Tensor4<T>(dy.n, dy.c, dy.h, dy.w);
        if (dscale) dscale->assign(C, T{0});
        if (dshift) dshift->assign(C, T{0});
        const std::size_t plane = dy.plane();
        const T count = static_cast<T>(static_cast<std::size_t>(dy.n) * plane);
        parallel_for_chunks(static_cast<std::size_t>(C), threads, [&](std::size_t c0, std::size_t c1) {
            for (std::size_t ch = c0; ch < c1; ++ch) {
                T sum_dy{0}, sum_dy_xhat{0};
                for (int b = 0; b < dy.n; ++b) {
                    const T* gp = dy.plane_ptr(b, static_cast<int>(ch));
                    const T* hp = cache.xhat.plane_ptr(b, static_cast<int>(ch));
                    for (std::size_t i = 0; i < plane; ++i) {
                        sum_dy += gp[i];
                        sum_dy_xhat += gp[i] * hp[i];
                    }
                }
                if (dscale) (*dscale)[ch] = sum_dy_xhat;
                if (dshift) (*dshift)[ch] = sum_dy;
                if (dx) {
                    const T g = scale[ch], inv_std = cache.inv_std[ch];
                    const T k = g * inv_std / count;
                    for (int b = 0; b < dy.n; ++b) {
                        const T* gp = dy.plane_ptr(b, static_cast<int>(ch));
                        const T* hp = cache.xhat.plane_ptr(b, static_cast<int>(ch));
                        T* dp = dx->plane_ptr(b, static_cast<int>(ch));
                        for (std::size_t i = 0; i < plane; ++i)
                            dp[i] = k * (count * gp[i] - sum_dy - hp[i] * sum_dy_xhat);
                    }
                }
            }
        });
    }

private:
    void check(const Tensor4<T>& x) const {
        if (x.c != channels())
            throw std::invalid_argument("batch_norm: input has " + std::to_string(x.c) +
                                        " channels, state has " + std::to_string(channels()));
    }
};

enum class ActKind { gelu, sigmoid };

template <typename T>
T gelu_scalar(T x) {
    // Exact Gaussian-CDF form: x * Phi(x).
    return x * T(0.5) * std::erfc(-x * T(0.70710678118654752440084436210485));
}

template <typename T>
T gelu_grad_scalar(T x) {
    const T phi_cdf = T(0.5) * std::erfc(-x * T(0.70710678118654752440084436210485));
    const T pdf = T(0.39894228040143267793994605993438) * std::exp(-T(0.5) * x * x);
    return phi_cdf + x * pdf;
}

template <typename T>
T sigmoid_scalar(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
Tensor4<T> activation(const Tensor4<T>& x, ActKind kind, int threads = 1) {
    Tensor4<T> y(x.n, x.c, x.h, x.w);
    parallel_for_chunks(x.size(), threads, [&](std::size_t i0, std::size_t i1) {
        if (kind == ActKind::gelu)
            for (std::size_t i = i0; i < i1; ++i) y.v[i] = gelu_scalar(x.v[i]);
        else
            for (std::size_t i = i0; i < i1; ++i) y.v[i] = sigmoid_scalar(x.v[i]);
    });
    return y;
}

// dx from upstream dy; gelu differentiates at the cached input, sigmoid at the
// cached output.
template <typename T>
Tensor4<T> activation_backward(const Tensor4<T>& x_or_y, const Tensor4<T>& dy, ActKind kind,
                               int threads = 1) {
    Tensor4<T> dx(dy.n, dy.c, dy.h, dy.w);
    parallel_for_chunks(dy.size(), threads, [&](std::size_t i0, std::size_t i1) {
        if (kind == ActKind::gelu) {
            for (std::size_t i = i0; i < i1; ++i) dx.v[i] = dy.v[i] * gelu_grad_scalar(x_or_y.v[i]);
        } else {
            for (std::size_t i = i0; i < i1; ++i) {
                const T s = x_or_y.v[i];
                dx.v[i] = dy.v[i] * s * (T(1) - s);
            }
        }
    });
    return dx;
}

}  // namespace uad
