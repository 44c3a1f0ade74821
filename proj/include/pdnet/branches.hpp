#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pdnet/tensor.hpp"

namespace pdnet {

struct BranchConfig {
    std::vector<int> widths{16, 32, 64};  // encoder widths, finest first
    int classes = 6;
    double voxel_size = 0.05;  // meters
    int max_grid_dim = 32;     // per-axis cell bound

    int scales() const { return static_cast<int>(widths.size()); }
    void validate() const;
};

// ---- voxelization ----

struct VoxelGrid {
    std::array<int, 3> dims{0, 0, 0};           // cells along x, y, z
    std::vector<float> features;                // dims[0]*dims[1]*dims[2] * 4 (mean rgb, occupancy)
    std::vector<std::array<std::int32_t, 3>> point_coord;  // full-resolution cell per point

    std::int64_t cell_count() const {
        return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
    }
};

VoxelGrid voxelize(const std::vector<float>& points, const std::vector<float>& colors,
                   const std::array<double, 3>& room, double voxel_size, int max_grid_dim);

// grid extents after `scale` halvings (ceil at each step)
std::array<int, 3> grid_dims_at_scale(const std::array<int, 3>& dims, int scale);

// linear cell index per point at the given scale (row-major x, y, z)
std::vector<std::int32_t> point_cells_at_scale(const VoxelGrid& grid, int scale);

template <typename T>
TensorPtr<T> grid_input_tensor(const VoxelGrid& grid);

template <typename T>
TensorPtr<T> image_input_tensor(const std::vector<float>& image, int height, int width);

// ---- encoder-decoder branches ----

template <typename T>
struct ConvParam {
    TensorPtr<T> w, b;
};

template <typename T>
struct UnetParams {
    std::vector<ConvParam<T>> enc;  // enc[0] stride 1, enc[s>0] stride 2
    std::vector<ConvParam<T>> dec;  // dec[S-1] at the bottleneck, dec[s<S-1] after up+skip
    ConvParam<T> head;              // 1x1 to classes
};

template <typename T>
UnetParams<T> make_unet_params(ParamSet<T>& params, const std::string& prefix,
                               const BranchConfig& cfg, int in_channels, int kernel_dims,
                               Rng& rng);

template <typename T>
UnetParams<T> bind_unet_params(const ParamSet<T>& params, const std::string& prefix,
                               const BranchConfig& cfg);

// Stepwise interface used to run the 3D and 2D decoders in lockstep: call
// encode, then decode_level from the coarsest scale down, optionally
// replacing state.x with a fused map between levels.
template <typename T>
struct UnetState {
    std::vector<TensorPtr<T>> enc;  // per-scale encoder features
    TensorPtr<T> x;                 // current decoder feature map
};

template <typename T>
UnetState<T> unet_encode(const UnetParams<T>& p, const TensorPtr<T>& input, bool volumetric);

template <typename T>
TensorPtr<T> unet_decode_level(const UnetParams<T>& p, UnetState<T>& state, int scale,
                               bool volumetric);

template <typename T>
TensorPtr<T> unet_head(const UnetParams<T>& p, const UnetState<T>& state, bool volumetric);

// ---- whole-branch forwards ----

template <typename T>
struct BranchOutput {
    TensorPtr<T> logits;  // 3D: [N, C]; 2D: [H, W, C]
    TensorPtr<T> probs;   // same shape, rows sum to 1
};

// Per-scale hook: receives the gathered per-element features [N, d] and must
// return the fused features with the same shape (throws std::logic_error
// otherwise). A null hook bypasses the gather/scatter machinery entirely.
template <typename T>
using FusionHook = std::function<TensorPtr<T>(int scale, const TensorPtr<T>& gathered)>;

template <typename T>
BranchOutput<T> forward_3d(const TensorPtr<T>& grid_input,
                           const std::vector<std::vector<std::int32_t>>& point_cells_per_scale,
                           const UnetParams<T>& params, const FusionHook<T>& hook);

template <typename T>
BranchOutput<T> forward_2d(const TensorPtr<T>& image, const UnetParams<T>& params,
                           const FusionHook<T>& hook,
                           const std::vector<std::vector<std::int32_t>>& pixel_idx_per_scale = {});

}  // namespace pdnet
