#include "pdnet/simd.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace pdnet::simd {
namespace {

Backend pick_default() {
    const char* env = std::getenv("PDNET_SIMD");
    if (env != nullptr) {
        if (std::strcmp(env, "scalar") == 0) return Backend::kScalar;
        if (std::strcmp(env, "avx2") == 0 && cpu_supports_avx2()) return Backend::kAvx2;
    }
    return cpu_supports_avx2() ? Backend::kAvx2 : Backend::kScalar;
}

std::atomic<Backend>& backend_slot() {
    static std::atomic<Backend> b{pick_default()};
    return b;
}

}  // namespace

bool cpu_supports_avx2() {
#if PDNET_HAVE_AVX2_TU && (defined(__x86_64__) || defined(_M_X64))
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend active_backend() { return backend_slot().load(std::memory_order_relaxed); }

void set_backend(Backend b) {
    if (b == Backend::kAvx2 && !cpu_supports_avx2()) b = Backend::kScalar;
    backend_slot().store(b, std::memory_order_relaxed);
}

std::string backend_name(Backend b) {
    return b == Backend::kAvx2 ? "avx2" : "scalar";
}

template <>
const Kernels<float>& kernels<float>() {
#if PDNET_HAVE_AVX2_TU && (defined(__x86_64__) || defined(_M_X64))
    if (active_backend() == Backend::kAvx2) return avx2_kernels_f32();
#endif
    return scalar_kernels_f32();
}

template <>
const Kernels<double>& kernels<double>() {
#if PDNET_HAVE_AVX2_TU && (defined(__x86_64__) || defined(_M_X64))
    if (active_backend() == Backend::kAvx2) return avx2_kernels_f64();
#endif
    return scalar_kernels_f64();
}

}  // namespace pdnet::simd
