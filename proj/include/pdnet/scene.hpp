#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pdnet/geometry.hpp"

namespace pdnet {

// Procedural stand-in for a scanned indoor dataset: a colored labeled point
// cloud per scene plus a few pinhole renderings with per-pixel labels and
// depth. The class catalog is fixed: floor, wall, box, cylinder, sphere,
// crate (a box that differs from "box" only by color, so color carries the
// class); cfg.classes selects a prefix of it.

struct GeneratorConfig {
    int classes = 6;
    std::array<double, 3> room{0.8, 0.8, 0.4};  // meters
    int points_per_scene = 4096;
    int image_height = 64;
    int image_width = 64;
    int views_per_scene = 3;
    double color_noise = 0.15;   // per-point, per-channel uniform
    double tint_noise = 0.06;    // per-primitive
    double focal = 72.0;         // pixels
    int min_objects_per_class = 1;
    int max_objects_per_class = 2;
    std::vector<double> class_proportions;  // empty -> built-in default

    void validate() const;  // throws std::invalid_argument
    std::vector<double> proportions() const;
};

struct LabeledScene {
    std::string scene_id;
    std::uint64_t rng_seed = 0;
    int classes = 0;
    std::array<double, 3> room{0, 0, 0};
    std::vector<float> points;        // 3N, meters
    std::vector<float> colors;        // 3N, [0,1]
    std::vector<std::int32_t> labels; // N, in [0, classes)

    std::size_t count() const { return labels.size(); }
};

struct ViewSample {
    std::string scene_id;
    Camera camera;
    std::vector<float> image;              // H*W*3, void pixels are black
    std::vector<std::int32_t> pixel_labels; // H*W, void = classes
    std::vector<float> depth;              // H*W, +inf where void
    std::vector<std::int32_t> provenance;  // H*W source point or -1; not serialized
};

inline std::int32_t void_label(int classes) { return classes; }

LabeledScene generate_scene(std::uint64_t seed, const GeneratorConfig& cfg);

std::vector<ViewSample> render_views(const LabeledScene& scene, int n_views,
                                     std::uint64_t seed, const GeneratorConfig& cfg);

// labeled count = max(1, round(ratio * n)); returns (labeled, unlabeled),
// both sorted, disjoint and exhaustive.
std::pair<std::vector<std::string>, std::vector<std::string>> split_dataset(
    const std::vector<std::string>& scene_ids, double labeled_ratio, std::uint64_t seed);

// ---- dataset on disk ----

struct DatasetEntry {
    LabeledScene scene;
    std::vector<ViewSample> views;
    std::string split;  // "train" | "val"
    bool labeled = false;
};

struct Dataset {
    GeneratorConfig generator;
    std::vector<DatasetEntry> entries;

    std::vector<std::size_t> train_labeled() const;
    std::vector<std::size_t> train_unlabeled() const;
    std::vector<std::size_t> val() const;
};

Dataset build_dataset(const GeneratorConfig& cfg, int train_scenes, int val_scenes,
                      double labeled_ratio, std::uint64_t seed);

void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace pdnet
