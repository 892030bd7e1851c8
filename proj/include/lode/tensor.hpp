#pragma once

#include <cassert>
#include <cstddef>
#include <string>
#include <vector>

namespace lode {

// Dense row-major matrix, the workhorse of the MLP and sparse-conv kernels.
template <typename T>
struct Matrix {
    int rows = 0, cols = 0;
    std::vector<T> d;

    Matrix() = default;
    Matrix(int r, int c, T fill = T(0)) : rows(r), cols(c), d(size_t(r) * c, fill) {}

    T* row(int r) { return d.data() + size_t(r) * cols; }
    const T* row(int r) const { return d.data() + size_t(r) * cols; }
    T& operator()(int r, int c) { return d[size_t(r) * cols + c]; }
    T operator()(int r, int c) const { return d[size_t(r) * cols + c]; }
    void zero() { std::fill(d.begin(), d.end(), T(0)); }
    size_t size() const { return d.size(); }
};

// y[0..n) += a[0..n) * s
template <typename T>
inline void axpy(int n, T s, const T* a, T* y) {
    for (int i = 0; i < n; ++i) y[i] += s * a[i];
}

template <typename T>
inline T dot_n(int n, const T* a, const T* b) {
    T acc = T(0);
    for (int i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

// Named flat tensor used by the checkpoint container and the optimizer's
// parameter registry.
template <typename T>
struct NamedTensor {
    std::string name;
    std::vector<uint32_t> shape;
    T* data = nullptr;
    size_t count = 0;
};

} // namespace lode
