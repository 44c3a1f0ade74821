#include "pdnet/simd.hpp"

#include <algorithm>

namespace pdnet::simd {
namespace {

template <typename T>
void s_add(const T* a, const T* b, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void s_sub(const T* a, const T* b, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <typename T>
void s_mul(const T* a, const T* b, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void s_scale(const T* a, T s, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

template <typename T>
void s_axpy(T alpha, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void s_lerp(T alpha, const T* x, T* y, std::size_t n) {
    const T beta = T(1) - alpha;
    for (std::size_t i = 0; i < n; ++i) y[i] = alpha * y[i] + beta * x[i];
}

template <typename T>
void s_fma_acc(const T* a, const T* b, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] += a[i] * b[i];
}

template <typename T>
void s_relu(const T* a, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] > T(0) ? a[i] : T(0);
}

template <typename T>
void s_relu_bwd(const T* x, const T* gy, T* gx, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (x[i] > T(0)) gx[i] += gy[i];
}

template <typename T>
T s_dot(const T* a, const T* b, std::size_t n) {
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

template <typename T>
T s_sum(const T* a, std::size_t n) {
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}

template <typename T>
T s_max(const T* a, std::size_t n) {
    T m = a[0];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, a[i]);
    return m;
}

template <typename T>
T s_sqdiff_sum(const T* a, const T* b, std::size_t n) {
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

template <typename T>
Kernels<T> make_table() {
    Kernels<T> k;
    k.add = &s_add<T>;
    k.sub = &s_sub<T>;
    k.mul = &s_mul<T>;
    k.scale = &s_scale<T>;
    k.axpy = &s_axpy<T>;
    k.lerp = &s_lerp<T>;
    k.fma_acc = &s_fma_acc<T>;
    k.relu = &s_relu<T>;
    k.relu_bwd = &s_relu_bwd<T>;
    k.dot = &s_dot<T>;
    k.sum = &s_sum<T>;
    k.max = &s_max<T>;
    k.sqdiff_sum = &s_sqdiff_sum<T>;
    return k;
}

}  // namespace

const Kernels<float>& scalar_kernels_f32() {
    static const Kernels<float> k = make_table<float>();
    return k;
}

const Kernels<double>& scalar_kernels_f64() {
    static const Kernels<double> k = make_table<double>();
    return k;
}

}  // namespace pdnet::simd
