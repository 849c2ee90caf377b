#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace uad {

// Dense (batch, channels, height, width) array, row-major with width fastest.
template <typename T>
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> v;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_) {
        if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0)
            throw std::invalid_argument("Tensor4: negative dimension");
        v.assign(static_cast<std::size_t>(n_) * c_ * h_ * w_, T{0});
    }

    std::size_t size() const { return v.size(); }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    T* plane_ptr(int b, int ch) {
        return v.data() + (static_cast<std::size_t>(b) * c + ch) * plane();
    }
    const T* plane_ptr(int b, int ch) const {
        return v.data() + (static_cast<std::size_t>(b) * c + ch) * plane();
    }

    T& at(int b, int ch, int y, int x) {
        return v[((static_cast<std::size_t>(b) * c + ch) * h + y) * w + x];
    }
    T at(int b, int ch, int y, int x) const {
        return v[((static_cast<std::size_t>(b) * c + ch) * h + y) * w + x];
    }

    bool same_shape(const Tensor4& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    void zero() { std::fill(v.begin(), v.end(), T{0}); }

    std::string shape_str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

}  // namespace uad
