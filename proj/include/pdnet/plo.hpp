#pragma once

#include <cstdint>
#include <vector>

#include "pdnet/geometry.hpp"

namespace pdnet {

// Pseudo-label optimization: non-parametric cross-modal voting plus
// confidence filtering on teacher outputs. Nothing here touches the
// autodiff graph; inputs are detached probability rows.

constexpr std::int32_t kNoVote = -1;

template <typename T>
struct CoarseLabels {
    std::vector<std::int32_t> labels;  // argmax, ties to the lowest index
    std::vector<T> confidence;         // probability at the coarse label
};

// probs: n rows of `classes` post-softmax values; rows whose sum is off 1 by
// more than 1e-4 are a contract violation (std::logic_error).
template <typename T>
CoarseLabels<T> extract_coarse(const T* probs, std::size_t n, int classes);

// Keep coarse[i] when vote[i] agrees or confidence[i] > t_conf (strict);
// otherwise emit deleted_label. vote[i] == kNoVote leaves only the
// confidence clause.
template <typename T>
std::vector<std::int32_t> optimize_pseudo_labels(const std::vector<std::int32_t>& coarse,
                                                 const std::vector<std::int32_t>& vote,
                                                 const std::vector<T>& confidence, double t_conf,
                                                 std::int32_t deleted_label);

template <typename T>
std::vector<std::int32_t> optimize_3d(const std::vector<std::int32_t>& coarse_3d,
                                      const std::vector<std::int32_t>& projected_3d,
                                      const std::vector<T>& conf_3d, double t_conf,
                                      std::int32_t deleted_label) {
    return optimize_pseudo_labels(coarse_3d, projected_3d, conf_3d, t_conf, deleted_label);
}

template <typename T>
std::vector<std::int32_t> optimize_2d(const std::vector<std::int32_t>& coarse_2d,
                                      const std::vector<std::int32_t>& densified_2d,
                                      const std::vector<T>& conf_2d, double t_conf,
                                      std::int32_t deleted_label) {
    return optimize_pseudo_labels(coarse_2d, densified_2d, conf_2d, t_conf, deleted_label);
}

struct DensifiedVotes {
    std::vector<std::int32_t> labels;      // H*W, kNoVote where uncovered
    std::vector<std::uint8_t> covered;     // H*W
};

// Projects per-pair probability rows to the image plane, pools them with
// densify_on_image and takes the per-pixel argmax.
template <typename T>
DensifiedVotes densify_2d_pseudo(const std::vector<T>& pair_prob_rows, int classes,
                                 const Correspondences& pairs, int height, int width, int window);

}  // namespace pdnet
