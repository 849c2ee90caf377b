#include "doctest.h"

#include <cmath>
#include <vector>

#include "uad/adam.hpp"
#include "uad/gradcheck.hpp"
#include "uad/layers.hpp"
#include "uad/rng.hpp"
#include "uad/sae.hpp"
#include "uad/tensor.hpp"

using namespace uad;

namespace {

// Independent standard-normal CDF via Simpson quadrature of the density.
double normal_cdf_quadrature(double x) {
    const double lo = -10.0;
    const int n = 20000;  // even
    const double h = (x - lo) / n;
    auto pdf = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * 3.14159265358979323846); };
    double s = pdf(lo) + pdf(x);
    for (int i = 1; i < n; ++i) s += pdf(lo + i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

Tensor4<double> random_tensor(int n, int c, int h, int w, Rng& rng, double scale = 1.0) {
    Tensor4<double> t(n, c, h, w);
    for (auto& v : t.v) v = rng.uniform_range(-scale, scale);
    return t;
}

}  // namespace

TEST_CASE("conv2d identity kernel copies the input") {
    ConvLayer<double> layer(1, 1, 1, 1, 1, 1, false);
    layer.weight[0] = 1.0;
    Rng rng(7);
    const Tensor4<double> x = random_tensor(1, 1, 3, 3, rng);
    const Tensor4<double> y = layer.forward(x);
    REQUIRE(y.same_shape(x));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.v[i] == doctest::Approx(x.v[i]).epsilon(1e-15));
}

TEST_CASE("conv2d output dims follow floor((in-k)/s)+1") {
    ConvLayer<double> layer(1, 1, 5, 5, 1, 1, false);
    const Tensor4<double> x(2, 1, 15, 15);
    const Tensor4<double> y = layer.forward(x);
    CHECK(y.h == 11);
    CHECK(y.w == 11);
    CHECK(conv_out_dim(15, 5, 1) == 11);
}

TEST_CASE("conv2d all-ones 3x3 against hand summation") {
    ConvLayer<double> layer(1, 1, 3, 3, 1, 1, false);
    for (auto& w : layer.weight) w = 1.0;
    Tensor4<double> x(1, 1, 3, 3);
    for (auto& v : x.v) v = 1.0;
    const Tensor4<double> y = layer.forward(x);
    REQUIRE(y.size() == 1);
    CHECK(y.v[0] == doctest::Approx(9.0).epsilon(1e-15));
}

TEST_CASE("conv2d rejects bad inputs") {
    ConvLayer<double> layer(2, 3, 3, 3, 1, 1, false);
    CHECK_THROWS_AS(layer.forward(Tensor4<double>(1, 2, 5, 5)), std::invalid_argument);  // channels
    CHECK_THROWS_AS(layer.forward(Tensor4<double>(1, 3, 2, 2)), std::invalid_argument);  // dims < 1
    CHECK_THROWS_AS(ConvLayer<double>(1, 1, 0, 1, 1, 1, false), std::invalid_argument);
}

TEST_CASE("shape algebra predicts every chain stage") {
    Rng rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        int h = 8 + static_cast<int>(rng.uniform_index(30));
        int w = 8 + static_cast<int>(rng.uniform_index(30));
        int ch = 1 + static_cast<int>(rng.uniform_index(3));
        Tensor4<double> x = random_tensor(2, ch, h, w, rng);
        for (int layer_i = 0; layer_i < 3; ++layer_i) {
            const int k = 1 + static_cast<int>(rng.uniform_index(3));
            const int s = 1 + static_cast<int>(rng.uniform_index(2));
            if (x.h < k || x.w < k) break;
            const int oc = 1 + static_cast<int>(rng.uniform_index(4));
            ConvLayer<double> layer(oc, x.c, k, k, s, s, false);
            for (auto& wv : layer.weight) wv = rng.uniform_range(-1, 1);
            const Tensor4<double> y = layer.forward(x);
            CHECK(y.h == conv_out_dim(x.h, k, s));
            CHECK(y.w == conv_out_dim(x.w, k, s));
            CHECK(y.c == oc);
            x = y;
        }
    }
}

TEST_CASE("transposed convolution is the adjoint of the forward map") {
    Rng rng(13);
    for (int rep = 0; rep < 25; ++rep) {
        const int k = 1 + static_cast<int>(rng.uniform_index(4));
        const int s = 1 + static_cast<int>(rng.uniform_index(3));
        const int steps = 1 + static_cast<int>(rng.uniform_index(5));
        const int h = k + s * steps;  // exact fit
        const int ic = 1 + static_cast<int>(rng.uniform_index(3));
        const int oc = 1 + static_cast<int>(rng.uniform_index(3));

        ConvLayer<double> fwd(oc, ic, k, k, s, s, false);
        for (auto& wv : fwd.weight) wv = rng.uniform_range(-1, 1);
        ConvLayer<double> adj = fwd;
        adj.transposed = true;
        adj.bias.assign(ic, 0.0);

        const Tensor4<double> x = random_tensor(2, ic, h, h, rng);
        const Tensor4<double> yx = fwd.forward(x);
        const Tensor4<double> y = random_tensor(yx.n, yx.c, yx.h, yx.w, rng);
        const Tensor4<double> xty = adj.forward(y);
        REQUIRE(xty.same_shape(x));

        double lhs = 0, rhs = 0;
        for (std::size_t i = 0; i < yx.size(); ++i) lhs += yx.v[i] * y.v[i];
        for (std::size_t i = 0; i < x.size(); ++i) rhs += x.v[i] * xty.v[i];
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    }
}

TEST_CASE("batch norm inference with unit running stats is the identity") {
    BatchNorm<double> bn(2);
    Rng rng(3);
    const Tensor4<double> x = random_tensor(3, 2, 4, 4, rng);
    const Tensor4<double> y = bn.forward_infer(x);
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(std::abs(y.v[i] - x.v[i]) <= 1e-4 * std::abs(x.v[i]) + 1e-9);
}

TEST_CASE("batch norm train mode normalizes to mean 0 variance 1") {
    BatchNorm<double> bn(2);
    Rng rng(5);
    Tensor4<double> x = random_tensor(6, 2, 3, 3, rng, 3.0);
    BatchNorm<double>::Cache cache;
    const Tensor4<double> y = bn.forward_train(x, false, &cache);
    for (int ch = 0; ch < 2; ++ch) {
        double mean = 0, var = 0;
        std::size_t count = 0;
        for (int b = 0; b < y.n; ++b) {
            const double* p = y.plane_ptr(b, ch);
            for (std::size_t i = 0; i < y.plane(); ++i, ++count) mean += p[i];
        }
        mean /= static_cast<double>(count);
        for (int b = 0; b < y.n; ++b) {
            const double* p = y.plane_ptr(b, ch);
            for (std::size_t i = 0; i < y.plane(); ++i) var += (p[i] - mean) * (p[i] - mean);
        }
        var /= static_cast<double>(count);
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps term shifts variance slightly
    }
}

TEST_CASE("batch norm running statistics follow (1-m) old + m batch") {
    BatchNorm<double> bn(1);
    bn.running_mean[0] = 0.5;
    bn.running_var[0] = 2.0;
    Tensor4<double> x(2, 1, 1, 1);
    x.v = {1.0, 3.0};  // batch mean 2, population variance 1
    bn.forward_train(x, true, nullptr);
    CHECK(bn.running_mean[0] == doctest::Approx(0.9 * 0.5 + 0.1 * 2.0).epsilon(1e-14));
    CHECK(bn.running_var[0] == doctest::Approx(0.9 * 2.0 + 0.1 * 1.0).epsilon(1e-14));
}

TEST_CASE("batch norm train mode needs at least two samples") {
    BatchNorm<double> bn(1);
    Tensor4<double> x(1, 1, 2, 2);
    CHECK_THROWS_AS(bn.forward_train(x, true, nullptr), std::invalid_argument);
}

TEST_CASE("activation values") {
    CHECK(gelu_scalar(0.0) == doctest::Approx(0.0));
    CHECK(sigmoid_scalar(0.0) == doctest::Approx(0.5).epsilon(1e-15));
    const double phi1 = normal_cdf_quadrature(1.0);
    CHECK(gelu_scalar(1.0) == doctest::Approx(phi1).epsilon(1e-7));
    CHECK(phi1 == doctest::Approx(0.841345).epsilon(1e-5));
    Tensor4<double> x(1, 1, 1, 2);
    x.v = {0.0, 1.0};
    const Tensor4<double> g = activation(x, ActKind::gelu);
    CHECK(g.v[0] == 0.0);
    CHECK(g.v[1] == doctest::Approx(phi1).epsilon(1e-7));
}

TEST_CASE("adam zero gradient leaves parameters and moments untouched") {
    std::vector<double> p = {1.0, -2.0, 3.0};
    const std::vector<double> g(3, 0.0);
    AdamState<double> st(3);
    adam_step(std::span<double>(p), std::span<const double>(g), st);
    CHECK(p == std::vector<double>{1.0, -2.0, 3.0});
    for (double m : st.first_moment) CHECK(m == 0.0);
    for (double v : st.second_moment) CHECK(v == 0.0);
}

TEST_CASE("adam first step moves by lr g/(|g|+eps) after bias correction") {
    std::vector<double> p = {1.0, -1.0};
    const std::vector<double> g = {0.3, -0.02};
    AdamState<double> st(2);
    adam_step(std::span<double>(p), std::span<const double>(g), st);
    for (int i = 0; i < 2; ++i) {
        const double expect = (i == 0 ? 1.0 : -1.0) - 1e-3 * g[i] / (std::abs(g[i]) + 1e-8);
        CHECK(p[i] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("adam two identical steps follow the moment recursions") {
    std::vector<double> p = {0.5};
    const std::vector<double> g = {0.7};
    AdamState<double> st(1);
    adam_step(std::span<double>(p), std::span<const double>(g), st);
    adam_step(std::span<double>(p), std::span<const double>(g), st);
    // hand recursion: with a constant gradient the bias-corrected moments stay
    // (g, g^2), so each step subtracts lr g / (|g| + eps)
    const double step = 1e-3 * 0.7 / (0.7 + 1e-8);
    CHECK(p[0] == doctest::Approx(0.5 - 2 * step).epsilon(1e-12));
    CHECK(st.step_count == 2);
}

TEST_CASE("adam rejects non-finite gradients") {
    std::vector<double> p = {1.0};
    std::vector<double> g = {std::numeric_limits<double>::quiet_NaN()};
    AdamState<double> st(1);
    CHECK_THROWS_AS(adam_step(std::span<double>(p), std::span<const double>(g), st),
                    std::runtime_error);
}

TEST_CASE("quadratic loss through a conv layer has gradient 2w") {
    // out = w (1x1 kernel over a unit input), loss = sum out^2
    ConvLayer<double> layer(4, 1, 1, 1, 1, 1, false);
    Rng rng(17);
    for (auto& w : layer.weight) w = rng.uniform_range(-1, 1);
    Tensor4<double> x(1, 1, 1, 1);
    x.v = {1.0};
    const Tensor4<double> out = layer.forward(x);
    Tensor4<double> dy(out.n, out.c, out.h, out.w);
    for (std::size_t i = 0; i < out.size(); ++i) dy.v[i] = 2.0 * out.v[i];
    ConvGrads<double> grads;
    layer.backward(x, dy, nullptr, &grads);
    for (std::size_t i = 0; i < layer.weight.size(); ++i)
        CHECK(grads.weight[i] == doctest::Approx(2.0 * layer.weight[i]).epsilon(1e-14));
}

TEST_CASE("backward rejects a gradient that does not match the recorded forward") {
    ConvLayer<double> layer(2, 3, 3, 3, 1, 1, false);
    const Tensor4<double> x(2, 3, 8, 8);
    const Tensor4<double> wrong(2, 2, 5, 5);  // channel/shape mismatch with conv(x)
    ConvGrads<double> grads;
    CHECK_THROWS_AS(layer.backward(x, wrong, nullptr, &grads), std::invalid_argument);
}

TEST_CASE("constant loss yields zero gradients") {
    SaeConfig cfg;
    cfg.patch_size = 7;
    cfg.blocks = {{3, 1, 3}, {3, 1, 4}};
    cfg.seed = 5;
    SaeModel<double> model = build_sae<double>(cfg);
    Rng rng(23);
    const Tensor4<double> x = random_tensor(2, 2, 7, 7, rng, 0.5);
    SaeBranchCache<double> cache;
    sae_branch_forward_train(model, x, false, cache);
    SaeGradients<double> grads = SaeGradients<double>::zero_like(model);
    const Tensor4<double> zero_recon(x.n, x.c, x.h, x.w);
    sae_branch_backward(model, cache, zero_recon, Tensor4<double>(), grads, 1);
    for (const auto& gv : grads.g)
        for (double v : gv) CHECK(v == 0.0);
}

TEST_CASE("linear map in the weights: finite differences agree to 1e-8") {
    // f(W) = <conv_W(x), c> is linear in W, so central differences are exact
    ConvLayer<double> layer(2, 2, 3, 3, 1, 1, false);
    Rng rng(29);
    for (auto& w : layer.weight) w = rng.uniform_range(-1, 1);
    for (auto& b : layer.bias) b = rng.uniform_range(-1, 1);
    const Tensor4<double> x = random_tensor(2, 2, 6, 6, rng);
    const Tensor4<double> yshape = layer.forward(x);
    const Tensor4<double> c = random_tensor(yshape.n, yshape.c, yshape.h, yshape.w, rng);

    ConvGrads<double> grads;
    layer.backward(x, c, nullptr, &grads);

    auto loss = [&]() {
        const Tensor4<double> y = layer.forward(x);
        double s = 0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y.v[i] * c.v[i];
        return s;
    };
    double worst = 0;
    const double h = 1e-5;
    for (std::size_t i = 0; i < layer.weight.size(); ++i) {
        const double saved = layer.weight[i];
        layer.weight[i] = saved + h;
        const double up = loss();
        layer.weight[i] = saved - h;
        const double dn = loss();
        layer.weight[i] = saved;
        const double fd = (up - dn) / (2 * h);
        const double denom = std::max({std::abs(fd), std::abs(grads.weight[i]), 1e-8});
        worst = std::max(worst, std::abs(fd - grads.weight[i]) / denom);
    }
    CHECK(worst < 1e-8);
}

TEST_CASE("full reduced SAE gradients match finite differences") {
    SaeConfig cfg;
    cfg.patch_size = 7;
    cfg.alpha = 1.0;
    cfg.blocks = {{3, 1, 3}, {3, 1, 4}};
    cfg.seed = 31;
    SaeModel<double> model = build_sae<double>(cfg);
    Rng rng(37);
    Tensor4<double> x1(3, 2, 7, 7), x2(3, 2, 7, 7);
    for (auto& v : x1.v) v = rng.uniform();
    for (auto& v : x2.v) v = rng.uniform();
    const double err = sae_grad_check(model, x1, x2, cfg.alpha);
    CHECK(err < 1e-4);
}

TEST_CASE("corrupted gradients are detected by the checker") {
    SaeConfig cfg;
    cfg.patch_size = 7;
    cfg.blocks = {{3, 1, 3}, {3, 1, 4}};
    cfg.seed = 41;
    SaeModel<double> model = build_sae<double>(cfg);
    Rng rng(43);
    Tensor4<double> x1(2, 2, 7, 7), x2(2, 2, 7, 7);
    for (auto& v : x1.v) v = rng.uniform();
    for (auto& v : x2.v) v = rng.uniform();
    SaeGradients<double> grads = SaeGradients<double>::zero_like(model);
    sae_pair_batch_step(model, x1, x2, 1.0, false, &grads);
    grads.g[0][0] += 0.5;  // inject a fault
    const double err = sae_grad_compare(model, x1, x2, 1.0, grads);
    CHECK(err > 1e-4);
}

TEST_CASE("parallel forward/backward matches single-threaded bit for bit") {
    SaeConfig cfg;
    cfg.patch_size = 7;
    cfg.blocks = {{3, 1, 3}, {3, 1, 4}};
    cfg.seed = 47;
    SaeModel<double> m1 = build_sae<double>(cfg);
    SaeModel<double> m4 = build_sae<double>(cfg);
    Rng rng(53);
    Tensor4<double> x1(5, 2, 7, 7), x2(5, 2, 7, 7);
    for (auto& v : x1.v) v = rng.uniform();
    for (auto& v : x2.v) v = rng.uniform();
    SaeGradients<double> g1 = SaeGradients<double>::zero_like(m1);
    SaeGradients<double> g4 = SaeGradients<double>::zero_like(m4);
    const double l1 = sae_pair_batch_step(m1, x1, x2, 1.0, true, &g1, 1);
    const double l4 = sae_pair_batch_step(m4, x1, x2, 1.0, true, &g4, 4);
    CHECK(l1 == l4);
    for (std::size_t i = 0; i < g1.g.size(); ++i)
        for (std::size_t k = 0; k < g1.g[i].size(); ++k) CHECK(g1.g[i][k] == g4.g[i][k]);
}
