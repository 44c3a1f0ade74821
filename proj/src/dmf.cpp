#include "pdnet/dmf.hpp"

#include <cmath>
#include <stdexcept>

namespace pdnet {

template <typename T>
DmfDirectionParams<T> make_dmf_direction(ParamSet<T>& params, const std::string& prefix,
                                         int d_self, int d_other, int heads, Rng& rng) {
    if (heads < 1 || d_self % heads != 0)
        throw std::invalid_argument("dmf: heads must divide the fused feature width (" +
                                    std::to_string(d_self) + " % " + std::to_string(heads) + ")");
    const int dh = d_self / heads;
    DmfDirectionParams<T> p;
    p.heads = heads;
    p.w_key = params.create(prefix + ".key.w", {d_self, d_self}, rng, std::sqrt(1.0 / d_self));
    p.w_value = params.create(prefix + ".value.w", {d_self, d_self}, rng, std::sqrt(1.0 / d_self));
    p.w_query = params.create(prefix + ".query.w", {d_other, d_self}, rng, std::sqrt(1.0 / d_other));
    p.w_expand = params.create(prefix + ".expand.w", {dh, d_self}, rng, std::sqrt(1.0 / dh));
    p.b_expand = params.create_zeros(prefix + ".expand.b", {d_self});
    p.w_out = params.create(prefix + ".out.w", {2 * d_self, d_self}, rng,
                            std::sqrt(1.0 / (2 * d_self)));
    p.b_out = params.create_zeros(prefix + ".out.b", {d_self});
    return p;
}

template <typename T>
DmfDirectionParams<T> bind_dmf_direction(const ParamSet<T>& params, const std::string& prefix,
                                         int heads) {
    DmfDirectionParams<T> p;
    p.heads = heads;
    p.w_key = params.get(prefix + ".key.w");
    p.w_value = params.get(prefix + ".value.w");
    p.w_query = params.get(prefix + ".query.w");
    p.w_expand = params.get(prefix + ".expand.w");
    p.b_expand = params.get(prefix + ".expand.b");
    p.w_out = params.get(prefix + ".out.w");
    p.b_out = params.get(prefix + ".out.b");
    return p;
}

template <typename T>
TensorPtr<T> attention_weights(const TensorPtr<T>& key, const TensorPtr<T>& query) {
    if (key->shape.size() != 3 || query->shape.size() != 3)
        throw std::invalid_argument("attention_weights: expected [N, H, d/H] inputs");
    if (key->shape != query->shape)
        throw std::invalid_argument("attention_weights: key/query shapes disagree");
    auto scores = sum_lastdim(mul(key, query));  // [N, H]
    return softmax(scores, 1);
}

template <typename T>
TensorPtr<T> dmf_fuse(const TensorPtr<T>& f_self, const TensorPtr<T>& f_other,
                      const DmfDirectionParams<T>& p) {
    const std::int64_t n = f_self->rows();
    if (n != f_other->rows())
        throw std::invalid_argument("dmf_fuse: pair counts of the two modalities disagree");
    const std::int64_t d_self = p.w_key->shape[0];
    if (f_self->cols() != d_self || f_other->cols() != p.w_query->shape[0])
        throw std::invalid_argument("dmf_fuse: feature widths do not match the projections");
    const std::int64_t dh = d_self / p.heads;

    auto key = reshape(matmul(f_self, p.w_key), {n, p.heads, dh});
    auto query = reshape(matmul(f_other, p.w_query), {n, p.heads, dh});
    auto value = reshape(matmul(f_self, p.w_value), {n, p.heads, dh});
    auto attn = attention_weights(key, query);           // [N, H]
    auto mixed = weighted_head_sum(attn, value);         // [N, d/H]
    auto expanded = add_bias(matmul(mixed, p.w_expand), p.b_expand);
    auto fused = add_bias(matmul(concat<T>({expanded, f_self}, 1), p.w_out), p.b_out);
    return fused;
}

#define PDNET_DMF_INSTANTIATE(T)                                                               \
    template DmfDirectionParams<T> make_dmf_direction<T>(ParamSet<T>&, const std::string&, int, \
                                                         int, int, Rng&);                      \
    template DmfDirectionParams<T> bind_dmf_direction<T>(const ParamSet<T>&, const std::string&, \
                                                         int);                                 \
    template TensorPtr<T> attention_weights<T>(const TensorPtr<T>&, const TensorPtr<T>&);      \
    template TensorPtr<T> dmf_fuse<T>(const TensorPtr<T>&, const TensorPtr<T>&,                \
                                      const DmfDirectionParams<T>&);

PDNET_DMF_INSTANTIATE(float)
PDNET_DMF_INSTANTIATE(double)

#undef PDNET_DMF_INSTANTIATE

}  // namespace pdnet
