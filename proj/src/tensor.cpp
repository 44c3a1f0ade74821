#include "pdnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "pdnet/parallel.hpp"
#include "pdnet/simd.hpp"

namespace pdnet {

namespace {

thread_local bool t_grad_enabled = true;

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

template <typename T>
bool any_needs(const std::vector<TensorPtr<T>>& parents) {
    if (!t_grad_enabled) return false;
    for (const auto& p : parents)
        if (p->needs_grad) return true;
    return false;
}

template <typename T>
TensorPtr<T> op_result(std::vector<std::int64_t> shape, std::vector<TensorPtr<T>> parents,
                       const char* op_name) {
    auto t = std::make_shared<Tensor<T>>();
    t->shape = std::move(shape);
    t->data.assign(static_cast<std::size_t>(shape_numel(t->shape)), T(0));
    t->op = op_name;
    if (any_needs(parents)) {
        t->needs_grad = true;
        t->parents = std::move(parents);
    }
    return t;
}

template <typename T>
void check_same_shape(const TensorPtr<T>& a, const TensorPtr<T>& b, const char* op_name) {
    if (a->shape != b->shape)
        throw std::invalid_argument(std::string(op_name) + ": shape mismatch");
}

}  // namespace

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }
bool grad_enabled() { return t_grad_enabled; }

template <typename T>
TensorPtr<T> make_tensor(std::vector<std::int64_t> shape, bool requires_grad) {
    for (auto d : shape)
        if (d <= 0) throw std::invalid_argument("make_tensor: extents must be positive");
    auto t = std::make_shared<Tensor<T>>();
    t->shape = std::move(shape);
    t->data.assign(static_cast<std::size_t>(shape_numel(t->shape)), T(0));
    t->requires_grad = requires_grad;
    t->needs_grad = requires_grad;
    return t;
}

template <typename T>
TensorPtr<T> make_tensor(std::vector<std::int64_t> shape, std::vector<T> values,
                         bool requires_grad) {
    auto t = make_tensor<T>(std::move(shape), requires_grad);
    if (static_cast<std::int64_t>(values.size()) != t->numel())
        throw std::invalid_argument("make_tensor: value count does not match shape");
    t->data = std::move(values);
    return t;
}

template <typename T>
TensorPtr<T> make_scalar(T value) {
    return make_tensor<T>({1}, std::vector<T>{value});
}

// ---- elementwise ----

template <typename T>
TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    check_same_shape(a, b, "add");
    auto out = op_result<T>(a->shape, {a, b}, "add");
    simd::kernels<T>().add(a->data.data(), b->data.data(), out->data.data(), out->data.size());
    if (out->needs_grad)
        out->backward_fn = [](Tensor<T>& self) {
            const auto& k = simd::kernels<T>();
            for (int i = 0; i < 2; ++i) {
                auto& p = self.parents[i];
                if (!p->needs_grad) continue;
                p->ensure_grad();
                k.axpy(T(1), self.grad.data(), p->grad.data(), p->grad.size());
            }
        };
    return out;
}

template <typename T>
TensorPtr<T> sub(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    check_same_shape(a, b, "sub");
    auto out = op_result<T>(a->shape, {a, b}, "sub");
    simd::kernels<T>().sub(a->data.data(), b->data.data(), out->data.data(), out->data.size());
    if (out->needs_grad)
        out->backward_fn = [](Tensor<T>& self) {
            const auto& k = simd::kernels<T>();
            if (self.parents[0]->needs_grad) {
                self.parents[0]->ensure_grad();
                k.axpy(T(1), self.grad.data(), self.parents[0]->grad.data(), self.grad.size());
            }
            if (self.parents[1]->needs_grad) {
                self.parents[1]->ensure_grad();
                k.axpy(T(-1), self.grad.data(), self.parents[1]->grad.data(), self.grad.size());
            }
        };
    return out;
}

template <typename T>
TensorPtr<T> mul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    check_same_shape(a, b, "mul");
    auto out = op_result<T>(a->shape, {a, b}, "mul");
    simd::kernels<T>().mul(a->data.data(), b->data.data(), out->data.data(), out->data.size());
    if (out->needs_grad)
        out->backward_fn = [](Tensor<T>& self) {
            const auto& k = simd::kernels<T>();
            auto& a = self.parents[0];
            auto& b = self.parents[1];
            if (a->needs_grad) {
                a->ensure_grad();
                k.fma_acc(self.grad.data(), b->data.data(), a->grad.data(), a->grad.size());
            }
            if (b->needs_grad) {
                b->ensure_grad();
                k.fma_acc(self.grad.data(), a->data.data(), b->grad.data(), b->grad.size());
            }
        };
    return out;
}

template <typename T>
TensorPtr<T> scale(const TensorPtr<T>& a, T s) {
    auto out = op_result<T>(a->shape, {a}, "scale");
    simd::kernels<T>().scale(a->data.data(), s, out->data.data(), out->data.size());
    if (out->needs_grad)
        out->backward_fn = [s](Tensor<T>& self) {
            auto& a = self.parents[0];
            a->ensure_grad();
            simd::kernels<T>().axpy(s, self.grad.data(), a->grad.data(), a->grad.size());
        };
    return out;
}

template <typename T>
TensorPtr<T> relu(const TensorPtr<T>& a) {
    auto out = op_result<T>(a->shape, {a}, "relu");
    simd::kernels<T>().relu(a->data.data(), out->data.data(), out->data.size());
    if (out->needs_grad)
        out->backward_fn = [](Tensor<T>& self) {
            auto& a = self.parents[0];
            a->ensure_grad();
            simd::kernels<T>().relu_bwd(a->data.data(), self.grad.data(), a->grad.data(),
                                        a->grad.size());
        };
    return out;
}

// ---- linear algebra ----

template <typename T>
TensorPtr<T> matmul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (b->shape.size() != 2) throw std::invalid_argument("matmul: rhs must be rank 2");
    const std::int64_t K = b->shape[0], M = b->shape[1];
    if (a->cols() != K) throw std::invalid_argument("matmul: inner dimensions disagree");
    const std::int64_t N = a->rows();
    std::vector<std::int64_t> out_shape(a->shape.begin(), a->shape.end() - 1);
    out_shape.push_back(M);
    auto out = op_result<T>(std::move(out_shape), {a, b}, "matmul");
    const T* ad = a->data.data();
    const T* bd = b->data.data();
    T* od = out->data.data();
    parallel_for(N, [&](std::int64_t lo, std::int64_t hi) {
        const auto& k = simd::kernels<T>();
        for (std::int64_t n = lo; n < hi; ++n)
            for (std::int64_t kk = 0; kk < K; ++kk) {
                const T v = ad[n * K + kk];
                if (v != T(0)) k.axpy(v, bd + kk * M, od + n * M, M);
            }
    });
    if (out->needs_grad)
        out->backward_fn = [N, K, M](Tensor<T>& self) {
            auto& a = self.parents[0];
            auto& b = self.parents[1];
            const T* gy = self.grad.data();
            if (a->needs_grad) {
                a->ensure_grad();
                T* ga = a->grad.data();
                const T* bd = b->data.data();
                parallel_for(N, [&](std::int64_t lo, std::int64_t hi) {
                    const auto& k = simd::kernels<T>();
                    for (std::int64_t n = lo; n < hi; ++n)
                        for (std::int64_t kk = 0; kk < K; ++kk)
                            ga[n * K + kk] += k.dot(gy + n * M, bd + kk * M, M);
                });
            }
            if (b->needs_grad) {
                b->ensure_grad();
                T* gb = b->grad.data();
                const T* ad = a->data.data();
                // parallel over k rows of b's grad; n stays the inner loop so
                // the accumulation order is fixed
                parallel_for(K, [&](std::int64_t lo, std::int64_t hi) {
                    const auto& k = simd::kernels<T>();
                    for (std::int64_t kk = lo; kk < hi; ++kk)
                        for (std::int64_t n = 0; n < N; ++n) {
                            const T v = ad[n * K + kk];
                            if (v != T(0)) k.axpy(v, self.grad.data() + n * M, gb + kk * M, M);
                        }
                });
            }
        };
    return out;
}

template <typename T>
TensorPtr<T> add_bias(const TensorPtr<T>& x, const TensorPtr<T>& b) {
    if (b->shape.size() != 1 || b->shape[0] != x->cols())
        throw std::invalid_argument("add_bias: bias must match the last dimension");
    const std::int64_t R = x->rows(), C = x->cols();
    auto out = op_result<T>(x->shape, {x, b}, "add_bias");
    const auto& k = simd::kernels<T>();
    for (std::int64_t r = 0; r < R; ++r)
        k.add(x->data.data() + r * C, b->data.data(), out->data.data() + r * C, C);
    if (out->needs_grad)
        out->backward_fn = [R, C](Tensor<T>& self) {
            const auto& k = simd::kernels<T>();
            auto& x = self.parents[0];
            auto& b = self.parents[1];
            if (x->needs_grad) {
                x->ensure_grad();
                k.axpy(T(1), self.grad.data(), x->grad.data(), x->grad.size());
            }
            if (b->needs_grad) {
                b->ensure_grad();
                for (std::int64_t r = 0; r < R; ++r)
                    k.axpy(T(1), self.grad.data() + r * C, b->grad.data(), C);
            }
        };
    return out;
}

// ---- softmax ----

template <typename T>
TensorPtr<T> softmax(const TensorPtr<T>& a, int axis) {
    const int rank = static_cast<int>(a->shape.size());
    if (axis < 0 || axis >= rank) throw std::invalid_argument("softmax: axis out of range");
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= a->shape[i];
    for (int i = axis + 1; i < rank; ++i) inner *= a->shape[i];
    const std::int64_t mid = a->shape[axis];
    auto out = op_result<T>(a->shape, {a}, "softmax");
    const T* xd = a->data.data();
    T* yd = out->data.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * mid * inner + in;
            T m = xd[base];
            for (std::int64_t j = 1; j < mid; ++j) m = std::max(m, xd[base + j * inner]);
            T s = T(0);
            for (std::int64_t j = 0; j < mid; ++j) {
                const T e = std::exp(xd[base + j * inner] - m);
                yd[base + j * inner] = e;
                s += e;
            }
            const T invs = T(1) / s;
            for (std::int64_t j = 0; j < mid; ++j) yd[base + j * inner] *= invs;
        }
    if (out->needs_grad)
        out->backward_fn = [outer, mid, inner](Tensor<T>& self) {
            auto& a = self.parents[0];
            a->ensure_grad();
            const T* y = self.data.data();
            const T* gy = self.grad.data();
            T* gx = a->grad.data();
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t in = 0; in < inner; ++in) {
                    const std::int64_t base = o * mid * inner + in;
                    T dotv = T(0);
                    for (std::int64_t j = 0; j < mid; ++j)
                        dotv += gy[base + j * inner] * y[base + j * inner];
                    for (std::int64_t j = 0; j < mid; ++j)
                        gx[base + j * inner] +=
                            y[base + j * inner] * (gy[base + j * inner] - dotv);
                }
        };
    return out;
}

// ---- shape ops ----

template <typename T>
TensorPtr<T> concat(const std::vector<TensorPtr<T>>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const int rank = static_cast<int>(parts[0]->shape.size());
    if (axis < 0 || axis >= rank) throw std::invalid_argument("concat: axis out of range");
    std::vector<std::int64_t> out_shape = parts[0]->shape;
    std::int64_t axis_total = 0;
    for (const auto& p : parts) {
        if (static_cast<int>(p->shape.size()) != rank)
            throw std::invalid_argument("concat: rank mismatch");
        for (int i = 0; i < rank; ++i)
            if (i != axis && p->shape[i] != out_shape[i])
                throw std::invalid_argument("concat: non-axis extents disagree");
        axis_total += p->shape[axis];
    }
    out_shape[axis] = axis_total;
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[i];
    for (int i = axis + 1; i < rank; ++i) inner *= out_shape[i];

    auto out = op_result<T>(out_shape, std::vector<TensorPtr<T>>(parts.begin(), parts.end()),
                            "concat");
    std::vector<std::int64_t> offsets(parts.size());
    {
        std::int64_t off = 0;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            offsets[p] = off;
            off += parts[p]->shape[axis];
        }
    }
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const std::int64_t ap = parts[p]->shape[axis];
        const T* src = parts[p]->data.data();
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy(src + o * ap * inner, src + (o + 1) * ap * inner,
                      out->data.data() + (o * axis_total + offsets[p]) * inner);
    }
    if (out->needs_grad)
        out->backward_fn = [outer, inner, axis_total, offsets](Tensor<T>& self) {
            const auto& k = simd::kernels<T>();
            for (std::size_t p = 0; p < self.parents.size(); ++p) {
                auto& par = self.parents[p];
                if (!par->needs_grad) continue;
                par->ensure_grad();
                const std::int64_t a_dim =
                    static_cast<std::int64_t>(par->grad.size()) / (outer * inner);
                for (std::int64_t o = 0; o < outer; ++o)
                    k.axpy(T(1),
                           self.grad.data() + (o * axis_total + offsets[p]) * inner,
                           par->grad.data() + o * a_dim * inner, a_dim * inner);
            }
        };
    return out;
}

template <typename T>
TensorPtr<T> reshape(const TensorPtr<T>& a, std::vector<std::int64_t> new_shape) {
    if (shape_numel(new_shape) != a->numel())
        throw std::invalid_argument("reshape: element count changes");
    auto out = op_result<T>(std::move(new_shape), {a}, "reshape");
    out->data = a->data;
    if (out->needs_grad)
        out->backward_fn = [](Tensor<T>& self) {
            auto& a = self.parents[0];
            a->ensure_grad();
            simd::kernels<T>().axpy(T(1), self.grad.data(), a->grad.data(), a->grad.size());
        };
    return out;
}

// ---- reductions ----

template <typename T>
TensorPtr<T> mean_all(const TensorPtr<T>& a) {
    auto out = op_result<T>({1}, {a}, "mean_all");
    const std::int64_t n = a->numel();
    out->data[0] = simd::kernels<T>().sum(a->data.data(), n) / static_cast<T>(n);
    if (out->needs_grad)
        out->backward_fn = [n](Tensor<T>& self) {
            auto& a = self.parents[0];
            a->ensure_grad();
            const T g = self.grad[0] / static_cast<T>(n);
            for (auto& v : a->grad) v += g;
        };
    return out;
}

template <typename T>
TensorPtr<T> sum_lastdim(const TensorPtr<T>& a) {
    if (a->shape.empty()) throw std::invalid_argument("sum_lastdim: rank 0");
    const std::int64_t R = a->rows(), C = a->cols();
    std::vector<std::int64_t> out_shape(a->shape.begin(), a->shape.end() - 1);
    if (out_shape.empty()) out_shape.push_back(1);
    auto out = op_result<T>(std::move(out_shape), {a}, "sum_lastdim");
    const auto& k = simd::kernels<T>();
    for (std::int64_t r = 0; r < R; ++r) out->data[r] = k.sum(a->data.data() + r * C, C);
    if (out->needs_grad)
        out->backward_fn = [R, C](Tensor<T>& self) {
            auto& a = self.parents[0];
            a->ensure_grad();
            for (std::int64_t r = 0; r < R; ++r) {
                const T g = self.grad[r];
                T* ga = a->grad.data() + r * C;
                for (std::int64_t c = 0; c < C; ++c) ga[c] += g;
            }
        };
    return out;
}

template <typename T>
TensorPtr<T> weighted_head_sum(const TensorPtr<T>& weights, const TensorPtr<T>& values) {
    if (weights->shape.size() != 2 || values->shape.size() != 3 ||
        weights->shape[0] != values->shape[0] || weights->shape[1] != values->shape[1])
        throw std::invalid_argument("weighted_head_sum: expected [N,H] and [N,H,D]");
    const std::int64_t N = weights->shape[0], H = weights->shape[1], D = values->shape[2];
    auto out = op_result<T>({N, D}, {weights, values}, "weighted_head_sum");
    const auto& k = simd::kernels<T>();
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t h = 0; h < H; ++h)
            k.axpy(weights->data[n * H + h], values->data.data() + (n * H + h) * D,
                   out->data.data() + n * D, D);
    if (out->needs_grad)
        out->backward_fn = [N, H, D](Tensor<T>& self) {
            const auto& k = simd::kernels<T>();
            auto& w = self.parents[0];
            auto& v = self.parents[1];
            const T* gy = self.grad.data();
            if (w->needs_grad) {
                w->ensure_grad();
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t h = 0; h < H; ++h)
                        w->grad[n * H + h] +=
                            k.dot(gy + n * D, v->data.data() + (n * H + h) * D, D);
            }
            if (v->needs_grad) {
                v->ensure_grad();
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t h = 0; h < H; ++h)
                        k.axpy(w->data[n * H + h], gy + n * D,
                               v->grad.data() + (n * H + h) * D, D);
            }
        };
    return out;
}

// ---- convolutions ----

namespace {

std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t pad, std::int64_t s) {
    return (in + 2 * pad - k) / s + 1;
}

}  // namespace

template <typename T>
TensorPtr<T> conv2d(const TensorPtr<T>& x, const TensorPtr<T>& w, const TensorPtr<T>& b,
                    int stride) {
    if (x->shape.size() != 3 || w->shape.size() != 4)
        throw std::invalid_argument("conv2d: expected x [H,W,IC], w [OC,kh,kw,IC]");
    if (stride != 1 && stride != 2) throw std::invalid_argument("conv2d: stride must be 1 or 2");
    const std::int64_t H = x->shape[0], W = x->shape[1], IC = x->shape[2];
    const std::int64_t OC = w->shape[0], KH = w->shape[1], KW = w->shape[2];
    if (w->shape[3] != IC) throw std::invalid_argument("conv2d: channel mismatch");
    if (KH % 2 == 0 || KW % 2 == 0) throw std::invalid_argument("conv2d: kernels must be odd");
    if (b && (b->shape.size() != 1 || b->shape[0] != OC))
        throw std::invalid_argument("conv2d: bias shape");
    const std::int64_t ph = (KH - 1) / 2, pw = (KW - 1) / 2;
    const std::int64_t HO = conv_out_dim(H, KH, ph, stride), WO = conv_out_dim(W, KW, pw, stride);

    std::vector<TensorPtr<T>> parents = b ? std::vector<TensorPtr<T>>{x, w, b}
                                          : std::vector<TensorPtr<T>>{x, w};
    auto out = op_result<T>({HO, WO, OC}, std::move(parents), "conv2d");
    const T* xd = x->data.data();
    const T* wd = w->data.data();
    const T* bd = b ? b->data.data() : nullptr;
    T* od = out->data.data();
    parallel_for(HO, [&](std::int64_t lo, std::int64_t hi) {
        const auto& k = simd::kernels<T>();
        for (std::int64_t yo = lo; yo < hi; ++yo)
            for (std::int64_t xo = 0; xo < WO; ++xo) {
                T* orow = od + (yo * WO + xo) * OC;
                for (std::int64_t oc = 0; oc < OC; ++oc) {
                    T acc = bd ? bd[oc] : T(0);
                    for (std::int64_t dy = 0; dy < KH; ++dy) {
                        const std::int64_t yi = yo * stride - ph + dy;
                        if (yi < 0 || yi >= H) continue;
                        for (std::int64_t dx = 0; dx < KW; ++dx) {
                            const std::int64_t xi = xo * stride - pw + dx;
                            if (xi < 0 || xi >= W) continue;
                            acc += k.dot(xd + (yi * W + xi) * IC,
                                         wd + ((oc * KH + dy) * KW + dx) * IC, IC);
                        }
                    }
                    orow[oc] = acc;
                }
            }
    });
    if (out->needs_grad)
        out->backward_fn = [H, W, IC, OC, KH, KW, ph, pw, stride, HO, WO](Tensor<T>& self) {
            auto& x = self.parents[0];
            auto& w = self.parents[1];
            const bool has_b = self.parents.size() == 3;
            const T* gy = self.grad.data();
            const T* xd = x->data.data();
            const T* wd = w->data.data();
            if (has_b && self.parents[2]->needs_grad) {
                auto& b = self.parents[2];
                b->ensure_grad();
                const auto& k = simd::kernels<T>();
                for (std::int64_t p = 0; p < HO * WO; ++p)
                    k.axpy(T(1), gy + p * OC, b->grad.data(), OC);
            }
            if (w->needs_grad) {
                w->ensure_grad();
                T* gw = w->grad.data();
                parallel_for(OC, [&](std::int64_t lo, std::int64_t hi) {
                    const auto& k = simd::kernels<T>();
                    for (std::int64_t oc = lo; oc < hi; ++oc)
                        for (std::int64_t yo = 0; yo < HO; ++yo)
                            for (std::int64_t xo = 0; xo < WO; ++xo) {
                                const T g = gy[(yo * WO + xo) * OC + oc];
                                if (g == T(0)) continue;
                                for (std::int64_t dy = 0; dy < KH; ++dy) {
                                    const std::int64_t yi = yo * stride - ph + dy;
                                    if (yi < 0 || yi >= H) continue;
                                    for (std::int64_t dx = 0; dx < KW; ++dx) {
                                        const std::int64_t xi = xo * stride - pw + dx;
                                        if (xi < 0 || xi >= W) continue;
                                        k.axpy(g, xd + (yi * W + xi) * IC,
                                               gw + ((oc * KH + dy) * KW + dx) * IC, IC);
                                    }
                                }
                            }
                });
            }
            if (x->needs_grad) {
                x->ensure_grad();
                T* gx = x->grad.data();
                // gather form over input rows keeps writes disjoint per thread
                parallel_for(H, [&](std::int64_t lo, std::int64_t hi) {
                    const auto& k = simd::kernels<T>();
                    for (std::int64_t yi = lo; yi < hi; ++yi)
                        for (std::int64_t dy = 0; dy < KH; ++dy) {
                            const std::int64_t ynum = yi + ph - dy;
                            if (ynum < 0 || ynum % stride != 0) continue;
                            const std::int64_t yo = ynum / stride;
                            if (yo >= HO) continue;
                            for (std::int64_t xi = 0; xi < W; ++xi)
                                for (std::int64_t dx = 0; dx < KW; ++dx) {
                                    const std::int64_t xnum = xi + pw - dx;
                                    if (xnum < 0 || xnum % stride != 0) continue;
                                    const std::int64_t xo = xnum / stride;
                                    if (xo >= WO) continue;
                                    const T* grow = gy + (yo * WO + xo) * OC;
                                    for (std::int64_t oc = 0; oc < OC; ++oc) {
                                        const T g = grow[oc];
                                        if (g == T(0)) continue;
                                        k.axpy(g, wd + ((oc * KH + dy) * KW + dx) * IC,
                                               gx + (yi * W + xi) * IC, IC);
                                    }
                                }
                        }
                });
            }
        };
    return out;
}

template <typename T>
TensorPtr<T> conv3d(const TensorPtr<T>& x, const TensorPtr<T>& w, const TensorPtr<T>& b,
                    int stride) {
    if (x->shape.size() != 4 || w->shape.size() != 5)
        throw std::invalid_argument("conv3d: expected x [D,H,W,IC], w [OC,kd,kh,kw,IC]");
    if (stride != 1 && stride != 2) throw std::invalid_argument("conv3d: stride must be 1 or 2");
    const std::int64_t D = x->shape[0], H = x->shape[1], W = x->shape[2], IC = x->shape[3];
    const std::int64_t OC = w->shape[0], KD = w->shape[1], KH = w->shape[2], KW = w->shape[3];
    if (w->shape[4] != IC) throw std::invalid_argument("conv3d: channel mismatch");
    if (KD % 2 == 0 || KH % 2 == 0 || KW % 2 == 0)
        throw std::invalid_argument("conv3d: kernels must be odd");
    if (b && (b->shape.size() != 1 || b->shape[0] != OC))
        throw std::invalid_argument("conv3d: bias shape");
    const std::int64_t pd = (KD - 1) / 2, ph = (KH - 1) / 2, pw = (KW - 1) / 2;
    const std::int64_t DO_ = conv_out_dim(D, KD, pd, stride);
    const std::int64_t HO = conv_out_dim(H, KH, ph, stride);
    const std::int64_t WO = conv_out_dim(W, KW, pw, stride);

    std::vector<TensorPtr<T>> parents = b ? std::vector<TensorPtr<T>>{x, w, b}
                                          : std::vector<TensorPtr<T>>{x, w};
    auto out = op_result<T>({DO_, HO, WO, OC}, std::move(parents), "conv3d");
    const T* xd = x->data.data();
    const T* wd = w->data.data();
    const T* bd = b ? b->data.data() : nullptr;
    T* od = out->data.data();
    parallel_for(DO_, [&](std::int64_t lo, std::int64_t hi) {
        const auto& k = simd::kernels<T>();
        for (std::int64_t zo = lo; zo < hi; ++zo)
            for (std::int64_t yo = 0; yo < HO; ++yo)
                for (std::int64_t xo = 0; xo < WO; ++xo) {
                    T* orow = od + ((zo * HO + yo) * WO + xo) * OC;
                    for (std::int64_t oc = 0; oc < OC; ++oc) {
                        T acc = bd ? bd[oc] : T(0);
                        for (std::int64_t dz = 0; dz < KD; ++dz) {
                            const std::int64_t zi = zo * stride - pd + dz;
                            if (zi < 0 || zi >= D) continue;
                            for (std::int64_t dy = 0; dy < KH; ++dy) {
                                const std::int64_t yi = yo * stride - ph + dy;
                                if (yi < 0 || yi >= H) continue;
                                for (std::int64_t dx = 0; dx < KW; ++dx) {
                                    const std::int64_t xi = xo * stride - pw + dx;
                                    if (xi < 0 || xi >= W) continue;
                                    acc += k.dot(xd + ((zi * H + yi) * W + xi) * IC,
                                                 wd + (((oc * KD + dz) * KH + dy) * KW + dx) * IC,
                                                 IC);
                                }
                            }
                        }
                        orow[oc] = acc;
                    }
                }
    });
    if (out->needs_grad)
        out->backward_fn = [D, H, W, IC, OC, KD, KH, KW, pd, ph, pw, stride, DO_, HO,
                            WO](Tensor<T>& self) {
            auto& x = self.parents[0];
            auto& w = self.parents[1];
            const bool has_b = self.parents.size() == 3;
            const T* gy = self.grad.data();
            const T* xd = x->data.data();
            const T* wd = w->data.data();
            if (has_b && self.parents[2]->needs_grad) {
                auto& b = self.parents[2];
                b->ensure_grad();
                const auto& k = simd::kernels<T>();
                for (std::int64_t p = 0; p < DO_ * HO * WO; ++p)
                    k.axpy(T(1), gy + p * OC, b->grad.data(), OC);
            }
            if (w->needs_grad) {
                w->ensure_grad();
                T* gw = w->grad.data();
                parallel_for(OC, [&](std::int64_t lo, std::int64_t hi) {
                    const auto& k = simd::kernels<T>();
                    for (std::int64_t oc = lo; oc < hi; ++oc)
                        for (std::int64_t zo = 0; zo < DO_; ++zo)
                            for (std::int64_t yo = 0; yo < HO; ++yo)
                                for (std::int64_t xo = 0; xo < WO; ++xo) {
                                    const T g = gy[((zo * HO + yo) * WO + xo) * OC + oc];
                                    if (g == T(0)) continue;
                                    for (std::int64_t dz = 0; dz < KD; ++dz) {
                                        const std::int64_t zi = zo * stride - pd + dz;
                                        if (zi < 0 || zi >= D) continue;
                                        for (std::int64_t dy = 0; dy < KH; ++dy) {
                                            const std::int64_t yi = yo * stride - ph + dy;
                                            if (yi < 0 || yi >= H) continue;
                                            for (std::int64_t dx = 0; dx < KW; ++dx) {
                                                const std::int64_t xi = xo * stride - pw + dx;
                                                if (xi < 0 || xi >= W) continue;
                                                k.axpy(g, xd + ((zi * H + yi) * W + xi) * IC,
                                                       gw + (((oc * KD + dz) * KH + dy) * KW + dx) *
                                                                IC,
                                                       IC);
                                            }
                                        }
                                    }
                                }
                });
            }
            if (x->needs_grad) {
                x->ensure_grad();
                T* gx = x->grad.data();
                parallel_for(D, [&](std::int64_t lo, std::int64_t hi) {
                    const auto& k = simd::kernels<T>();
                    for (std::int64_t zi = lo; zi < hi; ++zi)
                        for (std::int64_t dz = 0; dz < KD; ++dz) {
                            const std::int64_t znum = zi + pd - dz;
                            if (znum < 0 || znum % stride != 0) continue;
                            const std::int64_t zo = znum / stride;
                            if (zo >= DO_) continue;
                            for (std::int64_t yi = 0; yi < H; ++yi)
                                for (std::int64_t dy = 0; dy < KH; ++dy) {
                                    const std::int64_t ynum = yi + ph - dy;
                                    if (ynum < 0 || ynum % stride != 0) continue;
                                    const std::int64_t yo = ynum / stride;
                                    if (yo >= HO) continue;
                                    for (std::int64_t xi = 0; xi < W; ++xi)
                                        for (std::int64_t dx = 0; dx < KW; ++dx) {
                                            const std::int64_t xnum = xi + pw - dx;
                                            if (xnum < 0 || xnum % stride != 0) continue;
                                            const std::int64_t xo = xnum / stride;
                                            if (xo >= WO) continue;
                                            const T* grow = gy + ((zo * HO + yo) * WO + xo) * OC;
                                            for (std::int64_t oc = 0; oc < OC; ++oc) {
                                                const T g = grow[oc];
                                                if (g == T(0)) continue;
                                                k.axpy(g,
                                                       wd + (((oc * KD + dz) * KH + dy) * KW + dx) *
                                                                IC,
                                                       gx + ((zi * H + yi) * W + xi) * IC, IC);
                                            }
                                        }
                                }
                        }
                });
            }
        };
    return out;
}

// ---- upsampling ----

template <typename T>
TensorPtr<T> upsample_nearest2d(const TensorPtr<T>& x, std::int64_t out_h, std::int64_t out_w) {
    if (x->shape.size() != 3) throw std::invalid_argument("upsample_nearest2d: expected [H,W,C]");
    const std::int64_t H = x->shape[0], W = x->shape[1], C = x->shape[2];
    if (out_h < H || out_h > 2 * H || out_w < W || out_w > 2 * W || (out_h + 1) / 2 > H ||
        (out_w + 1) / 2 > W)
        throw std::invalid_argument("upsample_nearest2d: output extents not a x2 upsample");
    auto out = op_result<T>({out_h, out_w, C}, {x}, "upsample_nearest2d");
    for (std::int64_t y = 0; y < out_h; ++y)
        for (std::int64_t xx = 0; xx < out_w; ++xx)
            std::copy(x->data.data() + ((y / 2) * W + xx / 2) * C,
                      x->data.data() + ((y / 2) * W + xx / 2) * C + C,
                      out->data.data() + (y * out_w + xx) * C);
    if (out->needs_grad)
        out->backward_fn = [W, C, out_h, out_w](Tensor<T>& self) {
            auto& x = self.parents[0];
            x->ensure_grad();
            const auto& k = simd::kernels<T>();
            for (std::int64_t y = 0; y < out_h; ++y)
                for (std::int64_t xx = 0; xx < out_w; ++xx)
                    k.axpy(T(1), self.grad.data() + (y * out_w + xx) * C,
                           x->grad.data() + ((y / 2) * W + xx / 2) * C, C);
        };
    return out;
}

template <typename T>
TensorPtr<T> upsample_nearest3d(const TensorPtr<T>& x, std::int64_t out_d, std::int64_t out_h,
                                std::int64_t out_w) {
    if (x->shape.size() != 4) throw std::invalid_argument("upsample_nearest3d: expected [D,H,W,C]");
    const std::int64_t D = x->shape[0], H = x->shape[1], W = x->shape[2], C = x->shape[3];
    if (out_d < D || out_d > 2 * D || out_h < H || out_h > 2 * H || out_w < W || out_w > 2 * W ||
        (out_d + 1) / 2 > D || (out_h + 1) / 2 > H || (out_w + 1) / 2 > W)
        throw std::invalid_argument("upsample_nearest3d: output extents not a x2 upsample");
    auto out = op_result<T>({out_d, out_h, out_w, C}, {x}, "upsample_nearest3d");
    for (std::int64_t z = 0; z < out_d; ++z)
        for (std::int64_t y = 0; y < out_h; ++y)
            for (std::int64_t xx = 0; xx < out_w; ++xx)
                std::copy(x->data.data() + (((z / 2) * H + y / 2) * W + xx / 2) * C,
                          x->data.data() + (((z / 2) * H + y / 2) * W + xx / 2) * C + C,
                          out->data.data() + ((z * out_h + y) * out_w + xx) * C);
    if (out->needs_grad)
        out->backward_fn = [H, W, C, out_d, out_h, out_w](Tensor<T>& self) {
            auto& x = self.parents[0];
            x->ensure_grad();
            const auto& k = simd::kernels<T>();
            for (std::int64_t z = 0; z < out_d; ++z)
                for (std::int64_t y = 0; y < out_h; ++y)
                    for (std::int64_t xx = 0; xx < out_w; ++xx)
                        k.axpy(T(1), self.grad.data() + ((z * out_h + y) * out_w + xx) * C,
                               x->grad.data() + (((z / 2) * H + y / 2) * W + xx / 2) * C, C);
        };
    return out;
}

// ---- gather / scatter ----

template <typename T>
TensorPtr<T> gather_rows(const TensorPtr<T>& x, std::vector<std::int32_t> idx) {
    const std::int64_t R = x->rows(), C = x->cols();
    for (auto i : idx)
        if (i < 0 || i >= R) throw std::invalid_argument("gather_rows: index out of range");
    const std::int64_t N = static_cast<std::int64_t>(idx.size());
    auto out = op_result<T>({N, C}, {x}, "gather_rows");
    for (std::int64_t j = 0; j < N; ++j)
        std::copy(x->data.data() + static_cast<std::int64_t>(idx[j]) * C,
                  x->data.data() + static_cast<std::int64_t>(idx[j]) * C + C,
                  out->data.data() + j * C);
    if (out->needs_grad)
        out->backward_fn = [C, idx = std::move(idx)](Tensor<T>& self) {
            auto& x = self.parents[0];
            x->ensure_grad();
            const auto& k = simd::kernels<T>();
            for (std::size_t j = 0; j < idx.size(); ++j)
                k.axpy(T(1), self.grad.data() + static_cast<std::int64_t>(j) * C,
                       x->grad.data() + static_cast<std::int64_t>(idx[j]) * C, C);
        };
    return out;
}

template <typename T>
TensorPtr<T> scatter_mean_rows(const TensorPtr<T>& base, const TensorPtr<T>& rows,
                               std::vector<std::int32_t> idx) {
    const std::int64_t R = base->rows(), C = base->cols();
    if (rows->cols() != C) throw std::invalid_argument("scatter_mean_rows: width mismatch");
    if (rows->rows() != static_cast<std::int64_t>(idx.size()))
        throw std::invalid_argument("scatter_mean_rows: index count mismatch");
    for (auto i : idx)
        if (i < 0 || i >= R) throw std::invalid_argument("scatter_mean_rows: index out of range");

    auto counts = std::make_shared<std::vector<std::int32_t>>(static_cast<std::size_t>(R), 0);
    for (auto i : idx) ++(*counts)[static_cast<std::size_t>(i)];

    auto out = op_result<T>(base->shape, {base, rows}, "scatter_mean_rows");
    out->data = base->data;
    const auto& k = simd::kernels<T>();
    for (std::int64_t r = 0; r < R; ++r)
        if ((*counts)[r] > 0)
            std::fill(out->data.data() + r * C, out->data.data() + r * C + C, T(0));
    for (std::size_t j = 0; j < idx.size(); ++j)
        k.axpy(T(1), rows->data.data() + static_cast<std::int64_t>(j) * C,
               out->data.data() + static_cast<std::int64_t>(idx[j]) * C, C);
    for (std::int64_t r = 0; r < R; ++r)
        if ((*counts)[r] > 1)
            k.scale(out->data.data() + r * C, T(1) / static_cast<T>((*counts)[r]),
                    out->data.data() + r * C, C);

    if (out->needs_grad)
        out->backward_fn = [R, C, counts, idx = std::move(idx)](Tensor<T>& self) {
            auto& base = self.parents[0];
            auto& rows = self.parents[1];
            const auto& k = simd::kernels<T>();
            if (base->needs_grad) {
                base->ensure_grad();
                for (std::int64_t r = 0; r < R; ++r)
                    if ((*counts)[r] == 0)
                        k.axpy(T(1), self.grad.data() + r * C, base->grad.data() + r * C, C);
            }
            if (rows->needs_grad) {
                rows->ensure_grad();
                for (std::size_t j = 0; j < idx.size(); ++j) {
                    const std::int64_t r = idx[j];
                    k.axpy(T(1) / static_cast<T>((*counts)[r]), self.grad.data() + r * C,
                           rows->grad.data() + static_cast<std::int64_t>(j) * C, C);
                }
            }
        };
    return out;
}

// ---- losses ----

template <typename T>
TensorPtr<T> cross_entropy(const TensorPtr<T>& logits, std::vector<std::int32_t> labels,
                           std::int32_t ignore_label) {
    const std::int64_t N = logits->rows(), C = logits->cols();
    if (static_cast<std::int64_t>(labels.size()) != N)
        throw std::invalid_argument("cross_entropy: label count mismatch");
    for (auto l : labels)
        if (l != ignore_label && (l < 0 || l >= C))
            throw std::invalid_argument("cross_entropy: label out of range");
    auto out = op_result<T>({1}, {logits}, "cross_entropy");
    const T* xd = logits->data.data();
    std::int64_t valid = 0;
    T loss = T(0);
    for (std::int64_t i = 0; i < N; ++i) {
        if (labels[i] == ignore_label) continue;
        ++valid;
        const T* row = xd + i * C;
        T m = row[0];
        for (std::int64_t c = 1; c < C; ++c) m = std::max(m, row[c]);
        T s = T(0);
        for (std::int64_t c = 0; c < C; ++c) s += std::exp(row[c] - m);
        loss += m + std::log(s) - row[labels[i]];
    }
    out->data[0] = valid == 0 ? T(0) : loss / static_cast<T>(valid);
    if (out->needs_grad)
        out->backward_fn = [N, C, valid, ignore_label, labels = std::move(labels)](Tensor<T>& self) {
            if (valid == 0) return;
            auto& logits = self.parents[0];
            logits->ensure_grad();
            const T g = self.grad[0] / static_cast<T>(valid);
            const T* xd = logits->data.data();
            T* gx = logits->grad.data();
            for (std::int64_t i = 0; i < N; ++i) {
                if (labels[i] == ignore_label) continue;
                const T* row = xd + i * C;
                T m = row[0];
                for (std::int64_t c = 1; c < C; ++c) m = std::max(m, row[c]);
                T s = T(0);
                for (std::int64_t c = 0; c < C; ++c) s += std::exp(row[c] - m);
                const T invs = T(1) / s;
                for (std::int64_t c = 0; c < C; ++c) {
                    T p = std::exp(row[c] - m) * invs;
                    if (c == labels[i]) p -= T(1);
                    gx[i * C + c] += g * p;
                }
            }
        };
    return out;
}

template <typename T>
TensorPtr<T> squared_l2_rowmean(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    check_same_shape(a, b, "squared_l2_rowmean");
    const std::int64_t N = a->rows(), C = a->cols();
    auto out = op_result<T>({1}, {a, b}, "squared_l2_rowmean");
    const auto& k = simd::kernels<T>();
    T total = T(0);
    for (std::int64_t i = 0; i < N; ++i)
        total += k.sqdiff_sum(a->data.data() + i * C, b->data.data() + i * C, C);
    out->data[0] = total / static_cast<T>(N);
    if (out->needs_grad)
        out->backward_fn = [N, C](Tensor<T>& self) {
            auto& a = self.parents[0];
            auto& b = self.parents[1];
            const T g = self.grad[0] * T(2) / static_cast<T>(N);
            if (a->needs_grad) a->ensure_grad();
            if (b->needs_grad) b->ensure_grad();
            for (std::int64_t i = 0; i < N * C; ++i) {
                const T d = g * (a->data[i] - b->data[i]);
                if (a->needs_grad) a->grad[i] += d;
                if (b->needs_grad) b->grad[i] -= d;
            }
        };
    return out;
}

// ---- backward ----

template <typename T>
void backward(const TensorPtr<T>& root) {
    if (!root->is_scalar()) throw std::invalid_argument("backward: root must be scalar");
    if (!root->needs_grad) return;

    // iterative post-order DFS; mark 1 = on stack, 2 = done
    std::unordered_map<Tensor<T>*, int> state;
    std::vector<TensorPtr<T>> order;
    std::vector<std::pair<TensorPtr<T>, std::size_t>> stack;
    stack.emplace_back(root, 0);
    state[root.get()] = 1;
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            auto child = node->parents[next++];
            if (!child->needs_grad) continue;
            auto it = state.find(child.get());
            if (it == state.end()) {
                state[child.get()] = 1;
                stack.emplace_back(child, 0);
            } else if (it->second == 1) {
                throw std::logic_error("backward: cycle in computation graph");
            }
        } else {
            state[node.get()] = 2;
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto& node = *it;
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
        }
    }
}

// ---- ParamSet ----

template <typename T>
TensorPtr<T> ParamSet<T>::create(const std::string& name, std::vector<std::int64_t> shape,
                                 Rng& rng, double init_scale) {
    auto t = make_tensor<T>(std::move(shape), true);
    for (auto& v : t->data) v = static_cast<T>(rng.uniform(-init_scale, init_scale));
    add(name, t);
    return t;
}

template <typename T>
TensorPtr<T> ParamSet<T>::create_zeros(const std::string& name, std::vector<std::int64_t> shape) {
    auto t = make_tensor<T>(std::move(shape), true);
    add(name, t);
    return t;
}

template <typename T>
void ParamSet<T>::add(const std::string& name, TensorPtr<T> t) {
    if (index_.count(name)) throw std::invalid_argument("ParamSet: duplicate name " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(t));
}

template <typename T>
const TensorPtr<T>& ParamSet<T>::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("ParamSet: unknown name " + name);
    return items_[it->second].second;
}

template <typename T>
ParamSet<T> ParamSet<T>::clone() const {
    ParamSet<T> copy;
    for (const auto& [name, t] : items_) {
        auto nt = make_tensor<T>(t->shape, t->data, t->requires_grad);
        copy.add(name, nt);
    }
    return copy;
}

template <typename T>
bool ParamSet<T>::shape_compatible(const ParamSet<T>& other) const {
    if (items_.size() != other.items_.size()) return false;
    for (std::size_t i = 0; i < items_.size(); ++i) {
        if (items_[i].first != other.items_[i].first) return false;
        if (items_[i].second->shape != other.items_[i].second->shape) return false;
    }
    return true;
}

template <typename T>
void ParamSet<T>::zero_grads() {
    for (auto& [name, t] : items_) t->zero_grad();
}

template <typename T>
std::int64_t ParamSet<T>::total_elements() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : items_) n += t->numel();
    return n;
}

template <typename T>
void sgd_step(ParamSet<T>& params, T lr) {
    for (const auto& [name, p] : params)
        if (p->grad.empty())
            throw std::logic_error("sgd_step: missing gradient for parameter " + name);
    const auto& k = simd::kernels<T>();
    for (const auto& [name, p] : params) {
        k.axpy(-lr, p->grad.data(), p->data.data(), p->data.size());
        p->zero_grad();
    }
}

// ---- explicit instantiations ----

#define PDNET_INSTANTIATE(T)                                                                      \
    template struct Tensor<T>;                                                                    \
    template class ParamSet<T>;                                                                   \
    template TensorPtr<T> make_tensor<T>(std::vector<std::int64_t>, bool);                        \
    template TensorPtr<T> make_tensor<T>(std::vector<std::int64_t>, std::vector<T>, bool);        \
    template TensorPtr<T> make_scalar<T>(T);                                                      \
    template TensorPtr<T> add<T>(const TensorPtr<T>&, const TensorPtr<T>&);                       \
    template TensorPtr<T> sub<T>(const TensorPtr<T>&, const TensorPtr<T>&);                       \
    template TensorPtr<T> mul<T>(const TensorPtr<T>&, const TensorPtr<T>&);                       \
    template TensorPtr<T> scale<T>(const TensorPtr<T>&, T);                                       \
    template TensorPtr<T> relu<T>(const TensorPtr<T>&);                                           \
    template TensorPtr<T> matmul<T>(const TensorPtr<T>&, const TensorPtr<T>&);                    \
    template TensorPtr<T> add_bias<T>(const TensorPtr<T>&, const TensorPtr<T>&);                  \
    template TensorPtr<T> softmax<T>(const TensorPtr<T>&, int);                                   \
    template TensorPtr<T> concat<T>(const std::vector<TensorPtr<T>>&, int);                       \
    template TensorPtr<T> reshape<T>(const TensorPtr<T>&, std::vector<std::int64_t>);             \
    template TensorPtr<T> mean_all<T>(const TensorPtr<T>&);                                       \
    template TensorPtr<T> sum_lastdim<T>(const TensorPtr<T>&);                                    \
    template TensorPtr<T> weighted_head_sum<T>(const TensorPtr<T>&, const TensorPtr<T>&);         \
    template TensorPtr<T> conv2d<T>(const TensorPtr<T>&, const TensorPtr<T>&, const TensorPtr<T>&, \
                                    int);                                                         \
    template TensorPtr<T> conv3d<T>(const TensorPtr<T>&, const TensorPtr<T>&, const TensorPtr<T>&, \
                                    int);                                                         \
    template TensorPtr<T> upsample_nearest2d<T>(const TensorPtr<T>&, std::int64_t, std::int64_t); \
    template TensorPtr<T> upsample_nearest3d<T>(const TensorPtr<T>&, std::int64_t, std::int64_t,  \
                                                std::int64_t);                                    \
    template TensorPtr<T> gather_rows<T>(const TensorPtr<T>&, std::vector<std::int32_t>);         \
    template TensorPtr<T> scatter_mean_rows<T>(const TensorPtr<T>&, const TensorPtr<T>&,          \
                                               std::vector<std::int32_t>);                        \
    template TensorPtr<T> cross_entropy<T>(const TensorPtr<T>&, std::vector<std::int32_t>,        \
                                           std::int32_t);                                         \
    template TensorPtr<T> squared_l2_rowmean<T>(const TensorPtr<T>&, const TensorPtr<T>&);        \
    template void backward<T>(const TensorPtr<T>&);                                               \
    template void sgd_step<T>(ParamSet<T>&, T);

PDNET_INSTANTIATE(float)
PDNET_INSTANTIATE(double)

#undef PDNET_INSTANTIATE

}  // namespace pdnet
