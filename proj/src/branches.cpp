#include "pdnet/branches.hpp"

#include <cmath>
#include <stdexcept>

namespace pdnet {

void BranchConfig::validate() const {
    if (widths.empty()) throw std::invalid_argument("branch: widths must be non-empty");
    for (int w : widths)
        if (w < 1) throw std::invalid_argument("branch: widths must be positive");
    if (classes < 2) throw std::invalid_argument("branch: classes must be >= 2");
    if (voxel_size <= 0) throw std::invalid_argument("branch: voxel_size must be positive");
    if (max_grid_dim < 1) throw std::invalid_argument("branch: max_grid_dim must be >= 1");
}

VoxelGrid voxelize(const std::vector<float>& points, const std::vector<float>& colors,
                   const std::array<double, 3>& room, double voxel_size, int max_grid_dim) {
    if (voxel_size <= 0) throw std::invalid_argument("voxelize: voxel_size must be positive");
    if (colors.size() != points.size())
        throw std::invalid_argument("voxelize: points/colors sizes disagree");
    VoxelGrid g;
    for (int a = 0; a < 3; ++a) {
        g.dims[a] = static_cast<int>(std::ceil(room[a] / voxel_size));
        if (g.dims[a] < 1) g.dims[a] = 1;
        if (g.dims[a] > max_grid_dim)
            throw std::invalid_argument("voxelize: grid exceeds the configured maximum extent");
    }
    const std::size_t n = points.size() / 3;
    const std::int64_t cells = g.cell_count();
    std::vector<double> sums(static_cast<std::size_t>(cells) * 3, 0.0);
    std::vector<std::int32_t> counts(cells, 0);
    g.point_coord.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::array<std::int32_t, 3> c;
        for (int a = 0; a < 3; ++a) {
            auto idx = static_cast<std::int32_t>(std::floor(points[3 * i + a] / voxel_size));
            c[a] = std::min(std::max(idx, 0), g.dims[a] - 1);
        }
        g.point_coord[i] = c;
        const std::int64_t lin = (static_cast<std::int64_t>(c[0]) * g.dims[1] + c[1]) * g.dims[2] + c[2];
        for (int ch = 0; ch < 3; ++ch) sums[lin * 3 + ch] += colors[3 * i + ch];
        ++counts[lin];
    }
    g.features.assign(static_cast<std::size_t>(cells) * 4, 0.0f);
    for (std::int64_t c = 0; c < cells; ++c) {
        if (counts[c] == 0) continue;
        for (int ch = 0; ch < 3; ++ch)
            g.features[c * 4 + ch] = static_cast<float>(sums[c * 3 + ch] / counts[c]);
        g.features[c * 4 + 3] = 1.0f;
    }
    return g;
}

std::array<int, 3> grid_dims_at_scale(const std::array<int, 3>& dims, int scale) {
    std::array<int, 3> d = dims;
    for (int s = 0; s < scale; ++s)
        for (int a = 0; a < 3; ++a) d[a] = (d[a] + 1) / 2;
    return d;
}

std::vector<std::int32_t> point_cells_at_scale(const VoxelGrid& grid, int scale) {
    const auto d = grid_dims_at_scale(grid.dims, scale);
    std::vector<std::int32_t> out(grid.point_coord.size());
    for (std::size_t i = 0; i < grid.point_coord.size(); ++i) {
        const auto& c = grid.point_coord[i];
        const std::int32_t x = c[0] >> scale, y = c[1] >> scale, z = c[2] >> scale;
        out[i] = (x * d[1] + y) * d[2] + z;
    }
    return out;
}

template <typename T>
TensorPtr<T> grid_input_tensor(const VoxelGrid& grid) {
    auto t = make_tensor<T>({grid.dims[0], grid.dims[1], grid.dims[2], 4});
    for (std::size_t i = 0; i < grid.features.size(); ++i)
        t->data[i] = static_cast<T>(grid.features[i]);
    return t;
}

template <typename T>
TensorPtr<T> image_input_tensor(const std::vector<float>& image, int height, int width) {
    if (image.size() != static_cast<std::size_t>(height) * width * 3)
        throw std::invalid_argument("image_input_tensor: size mismatch");
    auto t = make_tensor<T>({height, width, 3});
    for (std::size_t i = 0; i < image.size(); ++i) t->data[i] = static_cast<T>(image[i]);
    return t;
}

template <typename T>
UnetParams<T> make_unet_params(ParamSet<T>& params, const std::string& prefix,
                               const BranchConfig& cfg, int in_channels, int kernel_dims,
                               Rng& rng) {
    cfg.validate();
    const int S = cfg.scales();
    const int k = 3;
    const int taps = kernel_dims == 3 ? k * k * k : k * k;
    UnetParams<T> p;
    auto conv_shape = [&](int oc, int ic, int ksize) {
        std::vector<std::int64_t> shape{oc};
        for (int d = 0; d < kernel_dims; ++d) shape.push_back(ksize);
        shape.push_back(ic);
        return shape;
    };
    for (int s = 0; s < S; ++s) {
        const int ic = s == 0 ? in_channels : cfg.widths[s - 1];
        const int oc = cfg.widths[s];
        ConvParam<T> c;
        c.w = params.create(prefix + ".enc" + std::to_string(s) + ".w", conv_shape(oc, ic, k), rng,
                            std::sqrt(1.0 / (taps * ic)));
        c.b = params.create_zeros(prefix + ".enc" + std::to_string(s) + ".b", {oc});
        p.enc.push_back(c);
    }
    for (int s = 0; s < S; ++s) {
        const int oc = cfg.widths[s];
        const int ic = s == S - 1 ? cfg.widths[s] : cfg.widths[s + 1] + cfg.widths[s];
        ConvParam<T> c;
        c.w = params.create(prefix + ".dec" + std::to_string(s) + ".w", conv_shape(oc, ic, k), rng,
                            std::sqrt(1.0 / (taps * ic)));
        c.b = params.create_zeros(prefix + ".dec" + std::to_string(s) + ".b", {oc});
        p.dec.push_back(c);
    }
    p.head.w = params.create(prefix + ".head.w", conv_shape(cfg.classes, cfg.widths[0], 1), rng,
                             std::sqrt(1.0 / cfg.widths[0]));
    p.head.b = params.create_zeros(prefix + ".head.b", {cfg.classes});
    return p;
}

template <typename T>
UnetParams<T> bind_unet_params(const ParamSet<T>& params, const std::string& prefix,
                               const BranchConfig& cfg) {
    UnetParams<T> p;
    for (int s = 0; s < cfg.scales(); ++s) {
        p.enc.push_back({params.get(prefix + ".enc" + std::to_string(s) + ".w"),
                         params.get(prefix + ".enc" + std::to_string(s) + ".b")});
        p.dec.push_back({params.get(prefix + ".dec" + std::to_string(s) + ".w"),
                         params.get(prefix + ".dec" + std::to_string(s) + ".b")});
    }
    p.head = {params.get(prefix + ".head.w"), params.get(prefix + ".head.b")};
    return p;
}

namespace {

template <typename T>
TensorPtr<T> conv_any(const TensorPtr<T>& x, const ConvParam<T>& c, int stride, bool volumetric) {
    return volumetric ? conv3d(x, c.w, c.b, stride) : conv2d(x, c.w, c.b, stride);
}

}  // namespace

template <typename T>
UnetState<T> unet_encode(const UnetParams<T>& p, const TensorPtr<T>& input, bool volumetric) {
    UnetState<T> st;
    TensorPtr<T> x = input;
    for (std::size_t s = 0; s < p.enc.size(); ++s) {
        x = relu(conv_any(x, p.enc[s], s == 0 ? 1 : 2, volumetric));
        st.enc.push_back(x);
    }
    st.x = st.enc.back();
    return st;
}

template <typename T>
TensorPtr<T> unet_decode_level(const UnetParams<T>& p, UnetState<T>& state, int scale,
                               bool volumetric) {
    const int S = static_cast<int>(p.dec.size());
    if (scale < 0 || scale >= S) throw std::invalid_argument("unet_decode_level: bad scale");
    TensorPtr<T> x;
    if (scale == S - 1) {
        x = relu(conv_any(state.x, p.dec[scale], 1, volumetric));
    } else {
        const auto& skip = state.enc[scale];
        TensorPtr<T> up;
        if (volumetric)
            up = upsample_nearest3d(state.x, skip->shape[0], skip->shape[1], skip->shape[2]);
        else
            up = upsample_nearest2d(state.x, skip->shape[0], skip->shape[1]);
        auto cat = concat<T>({up, skip}, static_cast<int>(skip->shape.size()) - 1);
        x = relu(conv_any(cat, p.dec[scale], 1, volumetric));
    }
    state.x = x;
    return x;
}

template <typename T>
TensorPtr<T> unet_head(const UnetParams<T>& p, const UnetState<T>& state, bool volumetric) {
    return conv_any(state.x, p.head, 1, volumetric);
}

namespace {

template <typename T>
void apply_hook_and_scatter(UnetState<T>& state, int scale, const FusionHook<T>& hook,
                            const std::vector<std::int32_t>& idx) {
    auto gathered = gather_rows(state.x, idx);
    auto fused = hook(scale, gathered);
    if (!fused || fused->shape != gathered->shape)
        throw std::logic_error("fusion hook returned a feature of the wrong shape");
    state.x = scatter_mean_rows(state.x, fused, idx);
}

}  // namespace

template <typename T>
BranchOutput<T> forward_3d(const TensorPtr<T>& grid_input,
                           const std::vector<std::vector<std::int32_t>>& point_cells_per_scale,
                           const UnetParams<T>& params, const FusionHook<T>& hook) {
    const int S = static_cast<int>(params.dec.size());
    if (static_cast<int>(point_cells_per_scale.size()) != S)
        throw std::invalid_argument("forward_3d: need point cells for every scale");
    auto state = unet_encode(params, grid_input, true);
    for (int s = S - 1; s >= 0; --s) {
        unet_decode_level(params, state, s, true);
        if (hook) apply_hook_and_scatter(state, s, hook, point_cells_per_scale[s]);
    }
    auto logits_grid = unet_head(params, state, true);
    auto logits = gather_rows(logits_grid, point_cells_per_scale[0]);
    BranchOutput<T> out;
    out.logits = logits;
    out.probs = softmax(logits, 1);
    return out;
}

template <typename T>
BranchOutput<T> forward_2d(const TensorPtr<T>& image, const UnetParams<T>& params,
                           const FusionHook<T>& hook,
                           const std::vector<std::vector<std::int32_t>>& pixel_idx_per_scale) {
    const int S = static_cast<int>(params.dec.size());
    if (hook && static_cast<int>(pixel_idx_per_scale.size()) != S)
        throw std::invalid_argument("forward_2d: need pixel indices for every scale");
    auto state = unet_encode(params, image, false);
    for (int s = S - 1; s >= 0; --s) {
        unet_decode_level(params, state, s, false);
        if (hook) apply_hook_and_scatter(state, s, hook, pixel_idx_per_scale[s]);
    }
    auto logits = unet_head(params, state, false);
    BranchOutput<T> out;
    out.logits = logits;
    out.probs = softmax(logits, 2);
    return out;
}

#define PDNET_BRANCH_INSTANTIATE(T)                                                              \
    template TensorPtr<T> grid_input_tensor<T>(const VoxelGrid&);                                \
    template TensorPtr<T> image_input_tensor<T>(const std::vector<float>&, int, int);            \
    template UnetParams<T> make_unet_params<T>(ParamSet<T>&, const std::string&,                 \
                                               const BranchConfig&, int, int, Rng&);             \
    template UnetParams<T> bind_unet_params<T>(const ParamSet<T>&, const std::string&,           \
                                               const BranchConfig&);                             \
    template UnetState<T> unet_encode<T>(const UnetParams<T>&, const TensorPtr<T>&, bool);       \
    template TensorPtr<T> unet_decode_level<T>(const UnetParams<T>&, UnetState<T>&, int, bool);  \
    template TensorPtr<T> unet_head<T>(const UnetParams<T>&, const UnetState<T>&, bool);         \
    template BranchOutput<T> forward_3d<T>(const TensorPtr<T>&,                                  \
                                           const std::vector<std::vector<std::int32_t>>&,        \
                                           const UnetParams<T>&, const FusionHook<T>&);          \
    template BranchOutput<T> forward_2d<T>(const TensorPtr<T>&, const UnetParams<T>&,            \
                                           const FusionHook<T>&,                                 \
                                           const std::vector<std::vector<std::int32_t>>&);

PDNET_BRANCH_INSTANTIATE(float)
PDNET_BRANCH_INSTANTIATE(double)

#undef PDNET_BRANCH_INSTANTIATE

}  // namespace pdnet
