#include "pdnet/geometry.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "pdnet/scene.hpp"

namespace pdnet {

bool Camera::rotation_orthonormal(double tol) const {
    // R^T R == I
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += rotation[k * 3 + i] * rotation[k * 3 + j];
            if (std::abs(s - (i == j ? 1.0 : 0.0)) > tol) return false;
        }
    return true;
}

std::array<double, 3> Camera::to_camera(const double* p) const {
    std::array<double, 3> q;
    for (int i = 0; i < 3; ++i)
        q[i] = rotation[i * 3 + 0] * p[0] + rotation[i * 3 + 1] * p[1] +
               rotation[i * 3 + 2] * p[2] + translation[i];
    return q;
}

std::vector<PointProjection> project_points(const float* points, std::size_t n_points,
                                            const Camera& camera, const float* zbuffer) {
    if (!camera.rotation_orthonormal())
        throw std::invalid_argument("project_points: rotation is not orthonormal");
    std::vector<PointProjection> out(n_points);
    for (std::size_t i = 0; i < n_points; ++i) {
        const double p[3] = {points[3 * i], points[3 * i + 1], points[3 * i + 2]};
        const auto q = camera.to_camera(p);
        PointProjection& r = out[i];
        r.depth = q[2];
        if (q[2] <= 0.0) continue;
        const double colf = camera.fx * q[0] / q[2] + camera.cx;
        const double rowf = camera.fy * q[1] / q[2] + camera.cy;
        const std::int64_t col = static_cast<std::int64_t>(std::floor(colf + 0.5));
        const std::int64_t row = static_cast<std::int64_t>(std::floor(rowf + 0.5));
        if (row < 0 || col < 0 || row >= camera.height || col >= camera.width) continue;
        r.row = static_cast<std::int32_t>(row);
        r.col = static_cast<std::int32_t>(col);
        if (zbuffer != nullptr) {
            const double zb = zbuffer[row * camera.width + col];
            if (std::abs(q[2] - zb) > depth_epsilon(q[2])) continue;
        }
        r.visible = true;
    }
    return out;
}

Correspondences build_pairs(const LabeledScene& scene, const ViewSample& view) {
    if (scene.scene_id != view.scene_id)
        throw std::invalid_argument("build_pairs: scene/view ids do not match");
    const auto proj = project_points(scene.points.data(), scene.count(), view.camera,
                                     view.depth.data());
    // nearest depth wins per pixel; iteration in point order breaks exact ties
    // toward the lowest index, matching the renderer
    const std::size_t n_px =
        static_cast<std::size_t>(view.camera.height) * static_cast<std::size_t>(view.camera.width);
    std::vector<std::int32_t> winner(n_px, -1);
    for (std::size_t i = 0; i < proj.size(); ++i) {
        if (!proj[i].visible) continue;
        const std::size_t px = static_cast<std::size_t>(proj[i].row) * view.camera.width +
                               static_cast<std::size_t>(proj[i].col);
        if (winner[px] < 0 || proj[i].depth < proj[winner[px]].depth)
            winner[px] = static_cast<std::int32_t>(i);
    }
    Correspondences c;
    c.scene_id = scene.scene_id;
    for (std::size_t i = 0; i < proj.size(); ++i) {
        if (!proj[i].visible) continue;
        const std::size_t px = static_cast<std::size_t>(proj[i].row) * view.camera.width +
                               static_cast<std::size_t>(proj[i].col);
        if (winner[px] != static_cast<std::int32_t>(i)) continue;
        c.pairs.push_back({static_cast<std::int32_t>(i), proj[i].row, proj[i].col, proj[i].depth});
    }
    return c;
}

template <typename S>
DenseMap<S> densify_on_image(const std::vector<S>& pair_vectors, int channels,
                             const Correspondences& pairs, int height, int width, int window) {
    if (window < 1 || window % 2 == 0)
        throw std::invalid_argument("densify_on_image: window must be odd and >= 1");
    if (pair_vectors.size() != pairs.count() * static_cast<std::size_t>(channels))
        throw std::invalid_argument("densify_on_image: vector count mismatch");

    const std::size_t n_px = static_cast<std::size_t>(height) * width;
    std::vector<std::int32_t> source(n_px, -1);  // pair index per projected pixel
    for (std::size_t j = 0; j < pairs.pairs.size(); ++j)
        source[static_cast<std::size_t>(pairs.pairs[j].row) * width + pairs.pairs[j].col] =
            static_cast<std::int32_t>(j);

    DenseMap<S> out;
    out.height = height;
    out.width = width;
    out.channels = channels;
    out.values.assign(n_px * channels, S(0));
    out.covered.assign(n_px, 0);

    const int half = window / 2;
    for (int r = 0; r < height; ++r)
        for (int col = 0; col < width; ++col) {
            const std::size_t px = static_cast<std::size_t>(r) * width + col;
            S* dst = out.values.data() + px * channels;
            if (source[px] >= 0) {
                const S* v = pair_vectors.data() + static_cast<std::size_t>(source[px]) * channels;
                for (int ch = 0; ch < channels; ++ch) dst[ch] = v[ch];
                out.covered[px] = 1;
                continue;
            }
            int hits = 0;
            for (int dy = -half; dy <= half; ++dy) {
                const int rr = r + dy;
                if (rr < 0 || rr >= height) continue;
                for (int dx = -half; dx <= half; ++dx) {
                    const int cc = col + dx;
                    if (cc < 0 || cc >= width) continue;
                    const std::int32_t s = source[static_cast<std::size_t>(rr) * width + cc];
                    if (s < 0) continue;
                    const S* v = pair_vectors.data() + static_cast<std::size_t>(s) * channels;
                    for (int ch = 0; ch < channels; ++ch) dst[ch] += v[ch];
                    ++hits;
                }
            }
            if (hits > 0) {
                const S inv = S(1) / static_cast<S>(hits);
                for (int ch = 0; ch < channels; ++ch) dst[ch] *= inv;
                out.covered[px] = 1;
            }
        }
    return out;
}

template DenseMap<float> densify_on_image<float>(const std::vector<float>&, int,
                                                 const Correspondences&, int, int, int);
template DenseMap<double> densify_on_image<double>(const std::vector<double>&, int,
                                                   const Correspondences&, int, int, int);

}  // namespace pdnet
