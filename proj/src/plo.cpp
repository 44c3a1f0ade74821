#include "pdnet/plo.hpp"

#include <cmath>
#include <stdexcept>

namespace pdnet {

template <typename T>
CoarseLabels<T> extract_coarse(const T* probs, std::size_t n, int classes) {
    if (classes < 1) throw std::invalid_argument("extract_coarse: classes >= 1");
    CoarseLabels<T> out;
    out.labels.resize(n);
    out.confidence.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = probs + i * classes;
        T sum = T(0);
        int best = 0;
        for (int c = 0; c < classes; ++c) {
            sum += row[c];
            if (row[c] > row[best]) best = c;
        }
        if (std::abs(static_cast<double>(sum) - 1.0) > 1e-4)
            throw std::logic_error("extract_coarse: probability row does not sum to 1");
        out.labels[i] = best;
        out.confidence[i] = row[best];
    }
    return out;
}

template <typename T>
std::vector<std::int32_t> optimize_pseudo_labels(const std::vector<std::int32_t>& coarse,
                                                 const std::vector<std::int32_t>& vote,
                                                 const std::vector<T>& confidence, double t_conf,
                                                 std::int32_t deleted_label) {
    if (coarse.size() != vote.size() || coarse.size() != confidence.size())
        throw std::invalid_argument("optimize_pseudo_labels: array lengths disagree");
    std::vector<std::int32_t> out(coarse.size());
    for (std::size_t i = 0; i < coarse.size(); ++i) {
        const bool agrees = vote[i] != kNoVote && vote[i] == coarse[i];
        const bool confident = static_cast<double>(confidence[i]) > t_conf;
        out[i] = (agrees || confident) ? coarse[i] : deleted_label;
    }
    return out;
}

template <typename T>
DensifiedVotes densify_2d_pseudo(const std::vector<T>& pair_prob_rows, int classes,
                                 const Correspondences& pairs, int height, int width, int window) {
    const auto pooled = densify_on_image(pair_prob_rows, classes, pairs, height, width, window);
    DensifiedVotes out;
    const std::size_t n_px = static_cast<std::size_t>(height) * width;
    out.labels.assign(n_px, kNoVote);
    out.covered = pooled.covered;
    for (std::size_t px = 0; px < n_px; ++px) {
        if (!pooled.covered[px]) continue;
        const T* row = pooled.values.data() + px * classes;
        int best = 0;
        for (int c = 1; c < classes; ++c)
            if (row[c] > row[best]) best = c;
        out.labels[px] = best;
    }
    return out;
}

#define PDNET_PLO_INSTANTIATE(T)                                                              \
    template CoarseLabels<T> extract_coarse<T>(const T*, std::size_t, int);                   \
    template std::vector<std::int32_t> optimize_pseudo_labels<T>(                             \
        const std::vector<std::int32_t>&, const std::vector<std::int32_t>&,                   \
        const std::vector<T>&, double, std::int32_t);                                         \
    template DensifiedVotes densify_2d_pseudo<T>(const std::vector<T>&, int,                  \
                                                 const Correspondences&, int, int, int);

PDNET_PLO_INSTANTIATE(float)
PDNET_PLO_INSTANTIATE(double)

#undef PDNET_PLO_INSTANTIATE

}  // namespace pdnet
