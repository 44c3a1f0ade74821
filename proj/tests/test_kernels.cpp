#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "pdnet/rng.hpp"
#include "pdnet/simd.hpp"

using namespace pdnet;

namespace {

template <typename T>
std::vector<T> random_vec(Rng& rng, std::size_t n, double lo = -2.0, double hi = 2.0) {
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    return v;
}

// sizes straddling the vector width and its remainders
const std::size_t kSizes[] = {1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 64, 100, 257};

template <typename T>
const simd::Kernels<T>& scalar_table() {
    if constexpr (sizeof(T) == 4)
        return simd::scalar_kernels_f32();
    else
        return simd::scalar_kernels_f64();
}

template <typename T>
const simd::Kernels<T>& avx2_table() {
    if constexpr (sizeof(T) == 4)
        return simd::avx2_kernels_f32();
    else
        return simd::avx2_kernels_f64();
}

template <typename T>
void check_equivalence(double rel_tol) {
    if (!simd::cpu_supports_avx2()) return;  // scalar-only host
    const auto& s = scalar_table<T>();
    const auto& v = avx2_table<T>();
    Rng rng(42 + sizeof(T));
    for (const std::size_t n : kSizes) {
        const auto a = random_vec<T>(rng, n);
        const auto b = random_vec<T>(rng, n);
        std::vector<T> out_s(n), out_v(n);

        // elementwise kernels without fused contraction are bitwise equal
        s.add(a.data(), b.data(), out_s.data(), n);
        v.add(a.data(), b.data(), out_v.data(), n);
        CHECK(out_s == out_v);
        s.sub(a.data(), b.data(), out_s.data(), n);
        v.sub(a.data(), b.data(), out_v.data(), n);
        CHECK(out_s == out_v);
        s.mul(a.data(), b.data(), out_s.data(), n);
        v.mul(a.data(), b.data(), out_v.data(), n);
        CHECK(out_s == out_v);
        s.scale(a.data(), T(1.7), out_s.data(), n);
        v.scale(a.data(), T(1.7), out_v.data(), n);
        CHECK(out_s == out_v);
        s.relu(a.data(), out_s.data(), n);
        v.relu(a.data(), out_v.data(), n);
        CHECK(out_s == out_v);
        CHECK(s.max(a.data(), n) == v.max(a.data(), n));

        // FMA-bearing kernels agree within rounding
        auto ys = b, yv = b;
        s.axpy(T(0.37), a.data(), ys.data(), n);
        v.axpy(T(0.37), a.data(), yv.data(), n);
        for (std::size_t i = 0; i < n; ++i)
            CHECK(std::abs(double(ys[i] - yv[i])) <=
                  rel_tol * std::max(1.0, std::abs(double(ys[i]))));
        ys = b;
        yv = b;
        s.lerp(T(0.9), a.data(), ys.data(), n);
        v.lerp(T(0.9), a.data(), yv.data(), n);
        for (std::size_t i = 0; i < n; ++i)
            CHECK(std::abs(double(ys[i] - yv[i])) <=
                  rel_tol * std::max(1.0, std::abs(double(ys[i]))));
        ys = b;
        yv = b;
        s.fma_acc(a.data(), b.data(), ys.data(), n);
        v.fma_acc(a.data(), b.data(), yv.data(), n);
        for (std::size_t i = 0; i < n; ++i)
            CHECK(std::abs(double(ys[i] - yv[i])) <=
                  rel_tol * std::max(1.0, std::abs(double(ys[i]))));

        const double ds = s.dot(a.data(), b.data(), n);
        const double dv = v.dot(a.data(), b.data(), n);
        CHECK(std::abs(ds - dv) <= rel_tol * std::max(1.0, std::abs(ds)) * n);
        const double ss = s.sum(a.data(), n);
        const double sv = v.sum(a.data(), n);
        CHECK(std::abs(ss - sv) <= rel_tol * std::max(1.0, std::abs(ss)) * n);
        const double qs = s.sqdiff_sum(a.data(), b.data(), n);
        const double qv = v.sqdiff_sum(a.data(), b.data(), n);
        CHECK(std::abs(qs - qv) <= rel_tol * std::max(1.0, qs) * n);

        // relu_bwd accumulates through a mask, no contraction
        auto gs = random_vec<T>(rng, n);
        auto gv = gs;
        s.relu_bwd(a.data(), b.data(), gs.data(), n);
        v.relu_bwd(a.data(), b.data(), gv.data(), n);
        CHECK(gs == gv);
    }
}

}  // namespace

TEST_CASE("scalar reference kernels compute what they say") {
    const auto& k = simd::scalar_kernels_f64();
    const std::vector<double> a{1, -2, 3}, b{4, 5, -6};
    std::vector<double> out(3);
    k.add(a.data(), b.data(), out.data(), 3);
    CHECK(out == std::vector<double>{5, 3, -3});
    k.mul(a.data(), b.data(), out.data(), 3);
    CHECK(out == std::vector<double>{4, -10, -18});
    CHECK(k.dot(a.data(), b.data(), 3) == doctest::Approx(4 - 10 - 18));
    CHECK(k.sum(a.data(), 3) == doctest::Approx(2.0));
    CHECK(k.max(a.data(), 3) == 3.0);
    CHECK(k.sqdiff_sum(a.data(), b.data(), 3) == doctest::Approx(9 + 49 + 81));
    std::vector<double> y{1, 1, 1};
    k.axpy(2.0, a.data(), y.data(), 3);
    CHECK(y == std::vector<double>{3, -3, 7});
    y = {10, 10, 10};
    k.lerp(0.25, a.data(), y.data(), 3);
    CHECK(y[0] == doctest::Approx(0.25 * 10 + 0.75 * 1));
    k.relu(a.data(), out.data(), 3);
    CHECK(out == std::vector<double>{1, 0, 3});
}

TEST_CASE("avx2 variants match the scalar reference (f32)") { check_equivalence<float>(1e-5); }

TEST_CASE("avx2 variants match the scalar reference (f64)") { check_equivalence<double>(1e-13); }

TEST_CASE("backend selection is sticky and reversible") {
    const auto original = simd::active_backend();
    simd::set_backend(simd::Backend::kScalar);
    CHECK(simd::active_backend() == simd::Backend::kScalar);
    simd::set_backend(original);
    CHECK(simd::active_backend() == original);
}
