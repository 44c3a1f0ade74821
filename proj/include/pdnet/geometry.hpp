#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace pdnet {

struct LabeledScene;
struct ViewSample;

// Pinhole camera, world-to-camera extrinsics, pixel (row, col) with
// col = round(fx*qx/qz + cx), row = round(fy*qy/qz + cy), round half up.
struct Camera {
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
    std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
    std::array<double, 3> translation{0, 0, 0};
    int height = 0, width = 0;

    bool rotation_orthonormal(double tol = 1e-9) const;
    // camera-frame coordinates q = R*p + t
    std::array<double, 3> to_camera(const double* p) const;
};

struct PointProjection {
    std::int32_t row = 0, col = 0;
    double depth = 0.0;
    bool visible = false;
};

// Depth tolerance for the visibility test against a z-buffer.
inline double depth_epsilon(double qz) { return 1e-4 * qz + 1e-6; }

// points: flat xyz triples. zbuffer: optional row-major H*W depths (pass
// nullptr to skip the occlusion test). Throws std::invalid_argument when the
// rotation is not orthonormal.
std::vector<PointProjection> project_points(const float* points, std::size_t n_points,
                                            const Camera& camera, const float* zbuffer);

struct PairEntry {
    std::int32_t point = 0;
    std::int32_t row = 0, col = 0;
    double depth = 0.0;
};

// One pair per visible point, at most one pair per pixel (nearest wins,
// ties to the lowest point index), ordered by point index.
struct Correspondences {
    std::string scene_id;
    std::vector<PairEntry> pairs;
    std::size_t count() const { return pairs.size(); }
};

Correspondences build_pairs(const LabeledScene& scene, const ViewSample& view);

template <typename S>
struct DenseMap {
    int height = 0, width = 0, channels = 0;
    std::vector<S> values;          // H*W*C
    std::vector<std::uint8_t> covered;  // H*W

    const S* at(int row, int col) const {
        return values.data() + (static_cast<std::size_t>(row) * width + col) * channels;
    }
    bool is_covered(int row, int col) const {
        return covered[static_cast<std::size_t>(row) * width + col] != 0;
    }
};

// Projected pixels keep their own vector; every other pixel takes the plain
// mean of the projected vectors inside its centered window x window
// neighborhood (accumulated in ascending row, then column order); pixels with
// no projected neighbor stay uncovered. Window must be odd.
template <typename S>
DenseMap<S> densify_on_image(const std::vector<S>& pair_vectors, int channels,
                             const Correspondences& pairs, int height, int width, int window);

}  // namespace pdnet
