#include "pdnet/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "pdnet/rng.hpp"

namespace pdnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kCatalogSize = 6;
constexpr double kPi = 3.141592653589793;

// floor, wall, box, cylinder, sphere, crate
const std::array<std::array<double, 3>, kCatalogSize> kBaseColors = {{
    {0.52, 0.52, 0.50},
    {0.80, 0.76, 0.66},
    {0.78, 0.22, 0.16},
    {0.18, 0.62, 0.28},
    {0.84, 0.72, 0.20},
    {0.20, 0.32, 0.78},
}};

const std::array<double, kCatalogSize> kDefaultProportions = {0.20, 0.18, 0.16, 0.16, 0.15, 0.15};

enum Kind { kRect, kBox, kCylinder, kSphere };

struct Primitive {
    int cls = 0;
    Kind kind = kRect;
    // rect: o + a*u + b*v
    std::array<double, 3> origin{}, edge_u{}, edge_v{};
    // box: center + half extents; sphere: center + radius; cylinder: base
    // center (z=0), radius, height
    std::array<double, 3> center{}, half{};
    double radius = 0.0, height = 0.0;
    double area = 0.0;
    std::array<double, 3> tint{};
};

double vec_len(const std::array<double, 3>& v) {
    return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
}

// largest-remainder apportionment of total by weights (sums exactly to total)
std::vector<std::int64_t> apportion(std::int64_t total, const std::vector<double>& weights) {
    const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<std::int64_t> counts(weights.size(), 0);
    std::vector<std::pair<double, std::size_t>> rema(weights.size());
    std::int64_t assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double exact = total * weights[i] / wsum;
        counts[i] = static_cast<std::int64_t>(std::floor(exact));
        rema[i] = {exact - std::floor(exact), i};
        assigned += counts[i];
    }
    std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (std::int64_t k = 0; k < total - assigned; ++k) ++counts[rema[k % rema.size()].second];
    return counts;
}

std::array<double, 3> sample_point(const Primitive& p, Rng& rng) {
    switch (p.kind) {
        case kRect: {
            const double a = rng.uniform(), b = rng.uniform();
            return {p.origin[0] + a * p.edge_u[0] + b * p.edge_v[0],
                    p.origin[1] + a * p.edge_u[1] + b * p.edge_v[1],
                    p.origin[2] + a * p.edge_u[2] + b * p.edge_v[2]};
        }
        case kBox: {
            // face picked by area: 0/1 = +-x, 2/3 = +-y, 4/5 = +-z
            const double ax = p.half[1] * p.half[2];
            const double ay = p.half[0] * p.half[2];
            const double az = p.half[0] * p.half[1];
            const double total = 2 * (ax + ay + az);
            double pick = rng.uniform() * total;
            int face = 5;
            const double areas[6] = {ax, ax, ay, ay, az, az};
            for (int f = 0; f < 6; ++f) {
                if (pick < areas[f]) {
                    face = f;
                    break;
                }
                pick -= areas[f];
            }
            const double a = rng.uniform(-1.0, 1.0), b = rng.uniform(-1.0, 1.0);
            std::array<double, 3> q = p.center;
            switch (face) {
                case 0: q[0] += p.half[0]; q[1] += a * p.half[1]; q[2] += b * p.half[2]; break;
                case 1: q[0] -= p.half[0]; q[1] += a * p.half[1]; q[2] += b * p.half[2]; break;
                case 2: q[1] += p.half[1]; q[0] += a * p.half[0]; q[2] += b * p.half[2]; break;
                case 3: q[1] -= p.half[1]; q[0] += a * p.half[0]; q[2] += b * p.half[2]; break;
                case 4: q[2] += p.half[2]; q[0] += a * p.half[0]; q[1] += b * p.half[1]; break;
                default: q[2] -= p.half[2]; q[0] += a * p.half[0]; q[1] += b * p.half[1]; break;
            }
            return q;
        }
        case kCylinder: {
            const double side = 2 * kPi * p.radius * p.height;
            const double top = kPi * p.radius * p.radius;
            if (rng.uniform() * (side + top) < side) {
                const double th = rng.uniform() * 2 * kPi;
                const double z = rng.uniform() * p.height;
                return {p.center[0] + p.radius * std::cos(th),
                        p.center[1] + p.radius * std::sin(th), z};
            }
            const double rr = p.radius * std::sqrt(rng.uniform());
            const double th = rng.uniform() * 2 * kPi;
            return {p.center[0] + rr * std::cos(th), p.center[1] + rr * std::sin(th), p.height};
        }
        default: {  // sphere
            const double z = rng.uniform(-1.0, 1.0);
            const double th = rng.uniform() * 2 * kPi;
            const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
            return {p.center[0] + p.radius * s * std::cos(th),
                    p.center[1] + p.radius * s * std::sin(th), p.center[2] + p.radius * z};
        }
    }
}

void write_binary(const fs::path& path, const void* data, std::size_t bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
}

std::vector<char> read_binary(const fs::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    const auto size = in.tellg();
    in.seekg(0);
    std::vector<char> buf(static_cast<std::size_t>(size));
    in.read(buf.data(), size);
    return buf;
}

template <typename T>
std::vector<T> read_array(const fs::path& path) {
    const auto raw = read_binary(path);
    if (raw.size() % sizeof(T) != 0)
        throw std::runtime_error("unexpected size of " + path.string());
    std::vector<T> out(raw.size() / sizeof(T));
    std::memcpy(out.data(), raw.data(), raw.size());
    return out;
}

}  // namespace

void GeneratorConfig::validate() const {
    if (classes < 2) throw std::invalid_argument("generator: classes must be >= 2");
    if (classes > kCatalogSize)
        throw std::invalid_argument("generator: classes exceeds the primitive catalog (6)");
    if (room[0] <= 0 || room[1] <= 0 || room[2] <= 0)
        throw std::invalid_argument("generator: room extents must be positive");
    if (points_per_scene < 1) throw std::invalid_argument("generator: points_per_scene >= 1");
    if (image_height < 8 || image_width < 8)
        throw std::invalid_argument("generator: image extents must be >= 8");
    if (views_per_scene < 1) throw std::invalid_argument("generator: views_per_scene >= 1");
    if (min_objects_per_class < 1 || max_objects_per_class < min_objects_per_class)
        throw std::invalid_argument("generator: object count range invalid");
    if (!class_proportions.empty()) {
        if (static_cast<int>(class_proportions.size()) != classes)
            throw std::invalid_argument("generator: class_proportions length != classes");
        for (double p : class_proportions)
            if (p <= 0) throw std::invalid_argument("generator: class_proportions must be positive");
    }
    if (color_noise < 0 || tint_noise < 0)
        throw std::invalid_argument("generator: noise must be non-negative");
    if (focal <= 0) throw std::invalid_argument("generator: focal must be positive");
}

std::vector<double> GeneratorConfig::proportions() const {
    std::vector<double> p;
    if (!class_proportions.empty())
        p = class_proportions;
    else
        p.assign(kDefaultProportions.begin(), kDefaultProportions.begin() + classes);
    const double s = std::accumulate(p.begin(), p.end(), 0.0);
    for (auto& v : p) v /= s;
    return p;
}

LabeledScene generate_scene(std::uint64_t seed, const GeneratorConfig& cfg) {
    cfg.validate();
    Rng rng(seed);
    const auto [rx, ry, rz] = cfg.room;

    std::vector<Primitive> prims;
    for (int cls = 0; cls < cfg.classes; ++cls) {
        if (cls == 0) {
            Primitive p;
            p.cls = 0;
            p.kind = kRect;
            p.origin = {0, 0, 0};
            p.edge_u = {rx, 0, 0};
            p.edge_v = {0, ry, 0};
            p.area = rx * ry;
            prims.push_back(p);
        } else if (cls == 1) {
            for (int w = 0; w < 2; ++w) {
                Primitive p;
                p.cls = 1;
                p.kind = kRect;
                p.origin = {0, 0, 0};
                if (w == 0) {
                    p.edge_u = {0, ry, 0};
                    p.edge_v = {0, 0, rz};
                    p.area = ry * rz;
                } else {
                    p.edge_u = {rx, 0, 0};
                    p.edge_v = {0, 0, rz};
                    p.area = rx * rz;
                }
                prims.push_back(p);
            }
        } else {
            const int count = static_cast<int>(
                rng.uniform_int(cfg.min_objects_per_class, cfg.max_objects_per_class));
            for (int o = 0; o < count; ++o) {
                Primitive p;
                p.cls = cls;
                if (cls == 2 || cls == 5) {
                    p.kind = kBox;
                    p.half = {rng.uniform(0.04, 0.10), rng.uniform(0.04, 0.10),
                              rng.uniform(0.04, 0.12)};
                    p.center = {rng.uniform(p.half[0] + 0.03, rx - p.half[0] - 0.03),
                                rng.uniform(p.half[1] + 0.03, ry - p.half[1] - 0.03), p.half[2]};
                    p.area = 8 * (p.half[1] * p.half[2] + p.half[0] * p.half[2] +
                                  p.half[0] * p.half[1]);
                } else if (cls == 3) {
                    p.kind = kCylinder;
                    p.radius = rng.uniform(0.035, 0.07);
                    p.height = rng.uniform(0.10, 0.24);
                    p.center = {rng.uniform(p.radius + 0.03, rx - p.radius - 0.03),
                                rng.uniform(p.radius + 0.03, ry - p.radius - 0.03), 0.0};
                    p.area = 2 * kPi * p.radius * p.height + kPi * p.radius * p.radius;
                } else {
                    p.kind = kSphere;
                    p.radius = rng.uniform(0.045, 0.09);
                    p.center = {rng.uniform(p.radius + 0.03, rx - p.radius - 0.03),
                                rng.uniform(p.radius + 0.03, ry - p.radius - 0.03), p.radius};
                    p.area = 4 * kPi * p.radius * p.radius;
                }
                prims.push_back(p);
            }
        }
    }
    for (auto& p : prims)
        for (int ch = 0; ch < 3; ++ch)
            p.tint[ch] = rng.uniform(-cfg.tint_noise, cfg.tint_noise);

    // per-class budget by configured proportions, then per primitive by area
    const auto class_counts = apportion(cfg.points_per_scene, cfg.proportions());
    LabeledScene scene;
    scene.rng_seed = seed;
    scene.classes = cfg.classes;
    scene.room = cfg.room;
    scene.points.reserve(3 * cfg.points_per_scene);
    scene.colors.reserve(3 * cfg.points_per_scene);
    scene.labels.reserve(cfg.points_per_scene);

    for (int cls = 0; cls < cfg.classes; ++cls) {
        std::vector<const Primitive*> members;
        std::vector<double> areas;
        for (const auto& p : prims)
            if (p.cls == cls) {
                members.push_back(&p);
                areas.push_back(p.area);
            }
        const auto per_prim = apportion(class_counts[cls], areas);
        for (std::size_t m = 0; m < members.size(); ++m) {
            const Primitive& p = *members[m];
            for (std::int64_t i = 0; i < per_prim[m]; ++i) {
                const auto q = sample_point(p, rng);
                for (int ch = 0; ch < 3; ++ch)
                    scene.points.push_back(static_cast<float>(q[ch]));
                for (int ch = 0; ch < 3; ++ch) {
                    const double c = kBaseColors[cls][ch] + p.tint[ch] +
                                     rng.uniform(-cfg.color_noise, cfg.color_noise);
                    scene.colors.push_back(static_cast<float>(std::clamp(c, 0.0, 1.0)));
                }
                scene.labels.push_back(cls);
            }
        }
    }
    return scene;
}

std::vector<ViewSample> render_views(const LabeledScene& scene, int n_views, std::uint64_t seed,
                                     const GeneratorConfig& cfg) {
    if (n_views < 1) throw std::invalid_argument("render_views: n_views >= 1");
    Rng rng(seed);
    const int H = cfg.image_height, W = cfg.image_width;
    const std::size_t n = scene.count();

    std::array<double, 3> centroid{0, 0, 0};
    for (std::size_t i = 0; i < n; ++i)
        for (int ch = 0; ch < 3; ++ch) centroid[ch] += scene.points[3 * i + ch];
    for (int ch = 0; ch < 3; ++ch) centroid[ch] /= std::max<std::size_t>(n, 1);

    const double reach = 0.5 * std::max({scene.room[0], scene.room[1], scene.room[2]});
    std::vector<ViewSample> views;
    views.reserve(n_views);
    for (int v = 0; v < n_views; ++v) {
        const double azim = rng.uniform(0.0, 2 * kPi);
        const double elev = rng.uniform(15.0, 55.0) * kPi / 180.0;
        const double dist = rng.uniform(1.0, 1.7) * reach;
        std::array<double, 3> target = centroid;
        for (int ch = 0; ch < 2; ++ch) target[ch] += rng.uniform(-0.05, 0.05);
        std::array<double, 3> eye = {target[0] + dist * std::cos(elev) * std::cos(azim),
                                     target[1] + dist * std::cos(elev) * std::sin(azim),
                                     target[2] + dist * std::sin(elev)};
        eye[0] = std::clamp(eye[0], 0.02, scene.room[0] - 0.02);
        eye[1] = std::clamp(eye[1], 0.02, scene.room[1] - 0.02);
        eye[2] = std::clamp(eye[2], 0.05, scene.room[2] - 0.02);

        std::array<double, 3> fwd = {target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]};
        const double fl = vec_len(fwd);
        for (auto& c : fwd) c /= fl;
        // camera axes: x = fwd cross up (right), y = fwd cross x (row grows downward)
        std::array<double, 3> xax = {fwd[1] * 1.0 - fwd[2] * 0.0, fwd[2] * 0.0 - fwd[0] * 1.0,
                                     fwd[0] * 0.0 - fwd[1] * 0.0};
        const double xl = vec_len(xax);
        for (auto& c : xax) c /= xl;
        const std::array<double, 3> yax = {fwd[1] * xax[2] - fwd[2] * xax[1],
                                           fwd[2] * xax[0] - fwd[0] * xax[2],
                                           fwd[0] * xax[1] - fwd[1] * xax[0]};

        ViewSample view;
        view.scene_id = scene.scene_id;
        Camera& cam = view.camera;
        cam.fx = cam.fy = cfg.focal;
        cam.cx = (W - 1) / 2.0;
        cam.cy = (H - 1) / 2.0;
        cam.width = W;
        cam.height = H;
        cam.rotation = {xax[0], xax[1], xax[2], yax[0], yax[1], yax[2], fwd[0], fwd[1], fwd[2]};
        for (int r = 0; r < 3; ++r)
            cam.translation[r] = -(cam.rotation[r * 3] * eye[0] + cam.rotation[r * 3 + 1] * eye[1] +
                                   cam.rotation[r * 3 + 2] * eye[2]);

        const std::size_t n_px = static_cast<std::size_t>(H) * W;
        std::vector<double> zbuf(n_px, std::numeric_limits<double>::infinity());
        view.image.assign(n_px * 3, 0.0f);
        view.pixel_labels.assign(n_px, void_label(scene.classes));
        view.provenance.assign(n_px, -1);

        for (std::size_t i = 0; i < n; ++i) {
            const double p[3] = {scene.points[3 * i], scene.points[3 * i + 1],
                                 scene.points[3 * i + 2]};
            const auto q = cam.to_camera(p);
            if (q[2] <= 1e-9) continue;
            const std::int64_t col =
                static_cast<std::int64_t>(std::floor(cam.fx * q[0] / q[2] + cam.cx + 0.5));
            const std::int64_t row =
                static_cast<std::int64_t>(std::floor(cam.fy * q[1] / q[2] + cam.cy + 0.5));
            if (row < 0 || col < 0 || row >= H || col >= W) continue;
            const std::size_t px = static_cast<std::size_t>(row) * W + col;
            if (q[2] < zbuf[px]) {
                zbuf[px] = q[2];
                for (int ch = 0; ch < 3; ++ch) view.image[px * 3 + ch] = scene.colors[3 * i + ch];
                view.pixel_labels[px] = scene.labels[i];
                view.provenance[px] = static_cast<std::int32_t>(i);
            }
        }
        view.depth.resize(n_px);
        for (std::size_t px = 0; px < n_px; ++px)
            view.depth[px] = std::isinf(zbuf[px]) ? std::numeric_limits<float>::infinity()
                                                  : static_cast<float>(zbuf[px]);
        views.push_back(std::move(view));
    }
    return views;
}

std::pair<std::vector<std::string>, std::vector<std::string>> split_dataset(
    const std::vector<std::string>& scene_ids, double labeled_ratio, std::uint64_t seed) {
    if (labeled_ratio <= 0.0 || labeled_ratio > 1.0)
        throw std::invalid_argument("split_dataset: labeled_ratio must be in (0, 1]");
    std::vector<std::string> ids = scene_ids;
    Rng rng(seed);
    rng.shuffle(ids);
    const std::size_t k = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(labeled_ratio * static_cast<double>(ids.size()))));
    std::vector<std::string> labeled(ids.begin(), ids.begin() + std::min(k, ids.size()));
    std::vector<std::string> unlabeled(ids.begin() + std::min(k, ids.size()), ids.end());
    std::sort(labeled.begin(), labeled.end());
    std::sort(unlabeled.begin(), unlabeled.end());
    return {labeled, unlabeled};
}

// ---- dataset ----

std::vector<std::size_t> Dataset::train_labeled() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (entries[i].split == "train" && entries[i].labeled) out.push_back(i);
    return out;
}

std::vector<std::size_t> Dataset::train_unlabeled() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (entries[i].split == "train" && !entries[i].labeled) out.push_back(i);
    return out;
}

std::vector<std::size_t> Dataset::val() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (entries[i].split == "val") out.push_back(i);
    return out;
}

Dataset build_dataset(const GeneratorConfig& cfg, int train_scenes, int val_scenes,
                      double labeled_ratio, std::uint64_t seed) {
    cfg.validate();
    if (train_scenes < 1 || val_scenes < 0)
        throw std::invalid_argument("build_dataset: scene counts invalid");
    Dataset ds;
    ds.generator = cfg;

    char buf[32];
    std::vector<std::string> train_ids;
    for (int i = 0; i < train_scenes; ++i) {
        std::snprintf(buf, sizeof(buf), "train_%04d", i);
        train_ids.emplace_back(buf);
    }
    const auto [labeled_ids, unlabeled_ids] =
        split_dataset(train_ids, labeled_ratio, mix_seed(seed, 0xff17));

    auto make_entry = [&](const std::string& id, std::uint64_t scene_seed, const char* split) {
        DatasetEntry e;
        e.scene = generate_scene(scene_seed, cfg);
        e.scene.scene_id = id;
        e.views = render_views(e.scene, cfg.views_per_scene, mix_seed(scene_seed, 0xcafe), cfg);
        e.split = split;
        return e;
    };

    for (int i = 0; i < train_scenes; ++i) {
        auto e = make_entry(train_ids[i], mix_seed(seed, static_cast<std::uint64_t>(i)), "train");
        e.labeled = std::binary_search(labeled_ids.begin(), labeled_ids.end(), train_ids[i]);
        ds.entries.push_back(std::move(e));
    }
    // validation scenes come from a disjoint seed stream
    for (int i = 0; i < val_scenes; ++i) {
        std::snprintf(buf, sizeof(buf), "val_%04d", i);
        ds.entries.push_back(
            make_entry(buf, mix_seed(seed, 0x80000000ULL + static_cast<std::uint64_t>(i)), "val"));
    }
    return ds;
}

namespace {

json camera_to_json(const Camera& c) {
    json j;
    j["fx"] = c.fx;
    j["fy"] = c.fy;
    j["cx"] = c.cx;
    j["cy"] = c.cy;
    j["rotation"] = c.rotation;
    j["translation"] = c.translation;
    j["width"] = c.width;
    j["height"] = c.height;
    return j;
}

Camera camera_from_json(const json& j) {
    Camera c;
    c.fx = j.at("fx").get<double>();
    c.fy = j.at("fy").get<double>();
    c.cx = j.at("cx").get<double>();
    c.cy = j.at("cy").get<double>();
    const auto r = j.at("rotation").get<std::vector<double>>();
    const auto t = j.at("translation").get<std::vector<double>>();
    if (r.size() != 9 || t.size() != 3) throw std::runtime_error("camera json malformed");
    std::copy(r.begin(), r.end(), c.rotation.begin());
    std::copy(t.begin(), t.end(), c.translation.begin());
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    return c;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
    const fs::path root(dir);
    fs::create_directories(root / "scenes");

    json manifest;
    manifest["format"] = "pdnet-dataset-v1";
    manifest["classes"] = ds.generator.classes;
    manifest["image_size"] = {ds.generator.image_height, ds.generator.image_width};
    manifest["views_per_scene"] = ds.generator.views_per_scene;
    manifest["room"] = ds.generator.room;
    json gen;
    gen["points_per_scene"] = ds.generator.points_per_scene;
    gen["color_noise"] = ds.generator.color_noise;
    gen["tint_noise"] = ds.generator.tint_noise;
    gen["focal"] = ds.generator.focal;
    gen["min_objects_per_class"] = ds.generator.min_objects_per_class;
    gen["max_objects_per_class"] = ds.generator.max_objects_per_class;
    gen["class_proportions"] = ds.generator.class_proportions;
    manifest["generator"] = std::move(gen);

    json scenes = json::array();
    for (const auto& e : ds.entries) {
        json s;
        s["id"] = e.scene.scene_id;
        s["split"] = e.split;
        s["labeled"] = e.labeled;
        s["points"] = e.scene.count();
        s["seed"] = e.scene.rng_seed;
        scenes.push_back(std::move(s));

        const fs::path sdir = root / "scenes" / e.scene.scene_id;
        fs::create_directories(sdir);
        write_binary(sdir / "points.f32", e.scene.points.data(),
                     e.scene.points.size() * sizeof(float));
        write_binary(sdir / "colors.f32", e.scene.colors.data(),
                     e.scene.colors.size() * sizeof(float));
        std::vector<std::uint16_t> lab(e.scene.labels.begin(), e.scene.labels.end());
        write_binary(sdir / "labels.u16", lab.data(), lab.size() * sizeof(std::uint16_t));

        for (std::size_t v = 0; v < e.views.size(); ++v) {
            const auto& view = e.views[v];
            const std::string stem = "view_" + std::to_string(v);
            write_binary(sdir / (stem + ".rgb.f32"), view.image.data(),
                         view.image.size() * sizeof(float));
            std::vector<std::uint16_t> pl(view.pixel_labels.begin(), view.pixel_labels.end());
            write_binary(sdir / (stem + ".labels.u16"), pl.data(),
                         pl.size() * sizeof(std::uint16_t));
            write_binary(sdir / (stem + ".depth.f32"), view.depth.data(),
                         view.depth.size() * sizeof(float));
            std::ofstream cj(sdir / (stem + ".camera.json"));
            cj << camera_to_json(view.camera).dump(2) << "\n";
        }
    }
    manifest["scenes"] = std::move(scenes);
    std::ofstream mf(root / "manifest.json");
    if (!mf) throw std::runtime_error("cannot write manifest in " + dir);
    mf << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
    const fs::path root(dir);
    std::ifstream mf(root / "manifest.json");
    if (!mf) throw std::runtime_error("dataset: cannot open " + (root / "manifest.json").string());
    json manifest;
    mf >> manifest;

    Dataset ds;
    ds.generator.classes = manifest.at("classes").get<int>();
    ds.generator.image_height = manifest.at("image_size")[0].get<int>();
    ds.generator.image_width = manifest.at("image_size")[1].get<int>();
    ds.generator.views_per_scene = manifest.at("views_per_scene").get<int>();
    const auto room = manifest.at("room").get<std::vector<double>>();
    std::copy(room.begin(), room.end(), ds.generator.room.begin());
    const auto& gen = manifest.at("generator");
    ds.generator.points_per_scene = gen.at("points_per_scene").get<int>();
    ds.generator.color_noise = gen.at("color_noise").get<double>();
    ds.generator.tint_noise = gen.at("tint_noise").get<double>();
    ds.generator.focal = gen.at("focal").get<double>();
    ds.generator.min_objects_per_class = gen.at("min_objects_per_class").get<int>();
    ds.generator.max_objects_per_class = gen.at("max_objects_per_class").get<int>();
    ds.generator.class_proportions = gen.at("class_proportions").get<std::vector<double>>();

    for (const auto& s : manifest.at("scenes")) {
        DatasetEntry e;
        e.split = s.at("split").get<std::string>();
        e.labeled = s.at("labeled").get<bool>();
        e.scene.scene_id = s.at("id").get<std::string>();
        e.scene.rng_seed = s.at("seed").get<std::uint64_t>();
        e.scene.classes = ds.generator.classes;
        e.scene.room = ds.generator.room;

        const fs::path sdir = root / "scenes" / e.scene.scene_id;
        e.scene.points = read_array<float>(sdir / "points.f32");
        e.scene.colors = read_array<float>(sdir / "colors.f32");
        const auto lab = read_array<std::uint16_t>(sdir / "labels.u16");
        e.scene.labels.assign(lab.begin(), lab.end());
        if (e.scene.points.size() != 3 * e.scene.labels.size() ||
            e.scene.colors.size() != e.scene.points.size())
            throw std::runtime_error("dataset: array sizes disagree for " + e.scene.scene_id);

        for (int v = 0; v < ds.generator.views_per_scene; ++v) {
            const std::string stem = "view_" + std::to_string(v);
            ViewSample view;
            view.scene_id = e.scene.scene_id;
            view.image = read_array<float>(sdir / (stem + ".rgb.f32"));
            const auto pl = read_array<std::uint16_t>(sdir / (stem + ".labels.u16"));
            view.pixel_labels.assign(pl.begin(), pl.end());
            view.depth = read_array<float>(sdir / (stem + ".depth.f32"));
            std::ifstream cj(sdir / (stem + ".camera.json"));
            if (!cj) throw std::runtime_error("dataset: missing camera json for " + stem);
            json j;
            cj >> j;
            view.camera = camera_from_json(j);
            e.views.push_back(std::move(view));
        }
        ds.entries.push_back(std::move(e));
    }
    return ds;
}

}  // namespace pdnet
