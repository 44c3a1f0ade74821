#pragma once

#include <cstddef>
#include <string>

namespace pdnet::simd {

enum class Backend { kScalar, kAvx2 };

// Kernel table for one scalar type. Pointers are resolved once at startup
// (or overridden via set_backend / the PDNET_SIMD env var) and stay fixed for
// the lifetime of the process, so runs on one machine are reproducible.
template <typename T>
struct Kernels {
    // out[i] = a[i] op b[i]
    void (*add)(const T* a, const T* b, T* out, std::size_t n);
    void (*sub)(const T* a, const T* b, T* out, std::size_t n);
    void (*mul)(const T* a, const T* b, T* out, std::size_t n);
    // out[i] = a[i] * s
    void (*scale)(const T* a, T s, T* out, std::size_t n);
    // y[i] += alpha * x[i]
    void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
    // y[i] = alpha * y[i] + (1 - alpha) * x[i]
    void (*lerp)(T alpha, const T* x, T* y, std::size_t n);
    // out[i] += a[i] * b[i]
    void (*fma_acc)(const T* a, const T* b, T* out, std::size_t n);
    // out[i] = max(a[i], 0)
    void (*relu)(const T* a, T* out, std::size_t n);
    // gx[i] += x[i] > 0 ? gy[i] : 0
    void (*relu_bwd)(const T* x, const T* gy, T* gx, std::size_t n);
    T (*dot)(const T* a, const T* b, std::size_t n);
    T (*sum)(const T* a, std::size_t n);
    T (*max)(const T* a, std::size_t n);       // n >= 1
    T (*sqdiff_sum)(const T* a, const T* b, std::size_t n);
};

bool cpu_supports_avx2();

// Backend in effect (env PDNET_SIMD=scalar|avx2 overrides the default pick).
Backend active_backend();
void set_backend(Backend b);
std::string backend_name(Backend b);

template <typename T>
const Kernels<T>& kernels();

const Kernels<float>& scalar_kernels_f32();
const Kernels<double>& scalar_kernels_f64();
#if defined(__x86_64__) || defined(_M_X64)
const Kernels<float>& avx2_kernels_f32();
const Kernels<double>& avx2_kernels_f64();
#endif

}  // namespace pdnet::simd
