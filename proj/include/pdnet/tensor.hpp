#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "pdnet/rng.hpp"

namespace pdnet {

// Dense row-major tensor participating in a reverse-mode graph. The last
// dimension is the channel/feature axis throughout the project; ops that
// speak of "rows" treat a tensor of shape [d0,...,dk,C] as numel/C rows of
// width C. A graph is confined to one thread from construction through
// backward(); independent graphs may live on independent threads.
template <typename T>
struct Tensor : std::enable_shared_from_this<Tensor<T>> {
    std::vector<std::int64_t> shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until touched by backward (or ensure_grad)
    bool requires_grad = false;

    // graph wiring (empty for leaves / no-grad results)
    bool needs_grad = false;
    std::vector<std::shared_ptr<Tensor<T>>> parents;
    std::function<void(Tensor<T>&)> backward_fn;
    const char* op = "";

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }
    std::int64_t cols() const { return shape.empty() ? 1 : shape.back(); }
    std::int64_t rows() const {
        const std::int64_t c = cols();
        return c == 0 ? 0 : numel() / c;
    }
    bool is_scalar() const { return numel() == 1; }

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
    }
    void zero_grad() { grad.assign(grad.empty() ? 0 : data.size(), T(0)); }
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

// While alive on a thread, newly created ops do not record graph structure.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

bool grad_enabled();

template <typename T>
TensorPtr<T> make_tensor(std::vector<std::int64_t> shape, bool requires_grad = false);

template <typename T>
TensorPtr<T> make_tensor(std::vector<std::int64_t> shape, std::vector<T> values,
                         bool requires_grad = false);

template <typename T>
TensorPtr<T> make_scalar(T value);

// ---- differentiable ops ----

template <typename T>
TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b);
template <typename T>
TensorPtr<T> sub(const TensorPtr<T>& a, const TensorPtr<T>& b);
template <typename T>
TensorPtr<T> mul(const TensorPtr<T>& a, const TensorPtr<T>& b);
template <typename T>
TensorPtr<T> scale(const TensorPtr<T>& a, T s);
template <typename T>
TensorPtr<T> relu(const TensorPtr<T>& a);

// [N,K] x [K,M] -> [N,M]; a may have any leading shape (rows flattened).
template <typename T>
TensorPtr<T> matmul(const TensorPtr<T>& a, const TensorPtr<T>& b);

// rows(x) + b per row; b has shape [cols(x)]
template <typename T>
TensorPtr<T> add_bias(const TensorPtr<T>& x, const TensorPtr<T>& b);

// max-subtracted softmax along `axis`. Finite inputs of any magnitude are
// safe: the shifted exponent is <= 0.
template <typename T>
TensorPtr<T> softmax(const TensorPtr<T>& a, int axis);

template <typename T>
TensorPtr<T> concat(const std::vector<TensorPtr<T>>& parts, int axis);

template <typename T>
TensorPtr<T> reshape(const TensorPtr<T>& a, std::vector<std::int64_t> new_shape);

template <typename T>
TensorPtr<T> mean_all(const TensorPtr<T>& a);

// [..., K] -> [...]: sum over the last axis
template <typename T>
TensorPtr<T> sum_lastdim(const TensorPtr<T>& a);

// weights [N,H], values [N,H,D] -> [N,D]: out[n,d] = sum_h w[n,h] v[n,h,d]
template <typename T>
TensorPtr<T> weighted_head_sum(const TensorPtr<T>& weights, const TensorPtr<T>& values);

// x [H,W,IC], w [OC,kh,kw,IC], b [OC] or null; odd kernels, same padding,
// stride 1 or 2
template <typename T>
TensorPtr<T> conv2d(const TensorPtr<T>& x, const TensorPtr<T>& w, const TensorPtr<T>& b,
                    int stride);

// x [D,H,W,IC], w [OC,kd,kh,kw,IC]
template <typename T>
TensorPtr<T> conv3d(const TensorPtr<T>& x, const TensorPtr<T>& w, const TensorPtr<T>& b,
                    int stride);

// nearest-neighbor x2 with explicit output extents (out <= 2*in per axis)
template <typename T>
TensorPtr<T> upsample_nearest2d(const TensorPtr<T>& x, std::int64_t out_h, std::int64_t out_w);
template <typename T>
TensorPtr<T> upsample_nearest3d(const TensorPtr<T>& x, std::int64_t out_d, std::int64_t out_h,
                                std::int64_t out_w);

// out[j,:] = x.row(idx[j])
template <typename T>
TensorPtr<T> gather_rows(const TensorPtr<T>& x, std::vector<std::int32_t> idx);

// copy of base where every row hit by idx becomes the mean of its incoming
// rows; rows not hit pass through bitwise unchanged
template <typename T>
TensorPtr<T> scatter_mean_rows(const TensorPtr<T>& base, const TensorPtr<T>& rows,
                               std::vector<std::int32_t> idx);

// mean over non-ignored rows of -log softmax(logits)[label]; exact 0 when
// everything is ignored
template <typename T>
TensorPtr<T> cross_entropy(const TensorPtr<T>& logits, std::vector<std::int32_t> labels,
                           std::int32_t ignore_label);

// (1/N) sum_i ||a.row(i) - b.row(i)||^2
template <typename T>
TensorPtr<T> squared_l2_rowmean(const TensorPtr<T>& a, const TensorPtr<T>& b);

template <typename T>
void backward(const TensorPtr<T>& root);

// ---- parameters ----

// Ordered name -> tensor map; iteration order is creation order.
template <typename T>
class ParamSet {
  public:
    TensorPtr<T> create(const std::string& name, std::vector<std::int64_t> shape, Rng& rng,
                        double init_scale);
    TensorPtr<T> create_zeros(const std::string& name, std::vector<std::int64_t> shape);
    void add(const std::string& name, TensorPtr<T> t);

    const TensorPtr<T>& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t size() const { return items_.size(); }

    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

    ParamSet<T> clone() const;                      // deep copy, fresh tensors
    bool shape_compatible(const ParamSet<T>& other) const;
    void zero_grads();
    std::int64_t total_elements() const;

  private:
    std::vector<std::pair<std::string, TensorPtr<T>>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

// p <- p - lr * grad for every parameter, then grads are zeroed.
// Throws std::logic_error if any parameter is missing its gradient.
template <typename T>
void sgd_step(ParamSet<T>& params, T lr);

}  // namespace pdnet
