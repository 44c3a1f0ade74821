#pragma once

#include <string>

#include "pdnet/tensor.hpp"

namespace pdnet {

// Dual-modal fusion: per-pair multi-head attention. One direction fuses the
// "self" modality with queries projected from the paired "other" modality:
//   K,V from f_self, Q from f_other, A = softmax over heads of sum(K*Q),
//   mixed = sum_h A_h V_h, expanded back to d_self, concatenated with f_self
//   and mixed down by the output projection.
template <typename T>
struct DmfDirectionParams {
    TensorPtr<T> w_key;     // [d_self, d_self], no bias
    TensorPtr<T> w_value;   // [d_self, d_self], no bias
    TensorPtr<T> w_query;   // [d_other, d_self], no bias
    TensorPtr<T> w_expand;  // [d_self/heads, d_self]
    TensorPtr<T> b_expand;  // [d_self]
    TensorPtr<T> w_out;     // [2*d_self, d_self]
    TensorPtr<T> b_out;     // [d_self]
    int heads = 0;
};

// Registers fresh parameters under `prefix` (key/query/value start uniform,
// biases zero). heads must divide d_self.
template <typename T>
DmfDirectionParams<T> make_dmf_direction(ParamSet<T>& params, const std::string& prefix,
                                         int d_self, int d_other, int heads, Rng& rng);

template <typename T>
DmfDirectionParams<T> bind_dmf_direction(const ParamSet<T>& params, const std::string& prefix,
                                         int heads);

// K, Q: [N, H, d/H] -> A: [N, H]; rows sum to 1.
template <typename T>
TensorPtr<T> attention_weights(const TensorPtr<T>& key, const TensorPtr<T>& query);

// f_self [N, d_self], f_other [N, d_other] -> [N, d_self]
template <typename T>
TensorPtr<T> dmf_fuse(const TensorPtr<T>& f_self, const TensorPtr<T>& f_other,
                      const DmfDirectionParams<T>& p);

// direction wrappers matching the two fused-feature definitions
template <typename T>
TensorPtr<T> fuse_3d(const TensorPtr<T>& f3d, const TensorPtr<T>& f2d,
                     const DmfDirectionParams<T>& p3d) {
    return dmf_fuse(f3d, f2d, p3d);
}

template <typename T>
TensorPtr<T> fuse_2d(const TensorPtr<T>& f2d, const TensorPtr<T>& f3d,
                     const DmfDirectionParams<T>& p2d) {
    return dmf_fuse(f2d, f3d, p2d);
}

}  // namespace pdnet
