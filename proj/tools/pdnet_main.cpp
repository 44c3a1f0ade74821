#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pdnet/checkpoint.hpp"
#include "pdnet/metrics.hpp"
#include "pdnet/scene.hpp"
#include "pdnet/simd.hpp"
#include "pdnet/trainer.hpp"
#include "selfcheck.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pdnet;

namespace {

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("malformed JSON in " + path + ": " + e.what());
    }
    return j;
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& item : j.items())
        if (!allowed.count(item.key()))
            throw ConfigError(where + ": unknown config key '" + item.key() + "'");
}

struct GenSettings {
    GeneratorConfig cfg;
    std::uint64_t seed = 1;
    int train_scenes = 64;
    int val_scenes = 16;
    double labeled_ratio = 0.10;
};

GenSettings parse_gen_config(const json& j) {
    check_keys(j,
               {"seed", "train_scenes", "val_scenes", "labeled_ratio", "classes",
                "points_per_scene", "image_size", "views_per_scene", "room", "color_noise",
                "tint_noise", "focal", "min_objects_per_class", "max_objects_per_class",
                "class_proportions"},
               "gen-data");
    GenSettings s;
    s.seed = j.value("seed", s.seed);
    s.train_scenes = j.value("train_scenes", s.train_scenes);
    s.val_scenes = j.value("val_scenes", s.val_scenes);
    s.labeled_ratio = j.value("labeled_ratio", s.labeled_ratio);
    s.cfg.classes = j.value("classes", s.cfg.classes);
    s.cfg.points_per_scene = j.value("points_per_scene", s.cfg.points_per_scene);
    if (j.contains("image_size")) {
        const auto v = j["image_size"].get<std::vector<int>>();
        if (v.size() != 2) throw ConfigError("gen-data: image_size must be [H, W]");
        s.cfg.image_height = v[0];
        s.cfg.image_width = v[1];
    }
    s.cfg.views_per_scene = j.value("views_per_scene", s.cfg.views_per_scene);
    if (j.contains("room")) {
        const auto v = j["room"].get<std::vector<double>>();
        if (v.size() != 3) throw ConfigError("gen-data: room must be [x, y, z] meters");
        std::copy(v.begin(), v.end(), s.cfg.room.begin());
    }
    s.cfg.color_noise = j.value("color_noise", s.cfg.color_noise);
    s.cfg.tint_noise = j.value("tint_noise", s.cfg.tint_noise);
    s.cfg.focal = j.value("focal", s.cfg.focal);
    s.cfg.min_objects_per_class = j.value("min_objects_per_class", s.cfg.min_objects_per_class);
    s.cfg.max_objects_per_class = j.value("max_objects_per_class", s.cfg.max_objects_per_class);
    if (j.contains("class_proportions"))
        s.cfg.class_proportions = j["class_proportions"].get<std::vector<double>>();
    if (s.labeled_ratio <= 0.0 || s.labeled_ratio > 1.0)
        throw ConfigError("gen-data: labeled_ratio must lie in (0, 1]");
    s.cfg.validate();
    return s;
}

RunConfig parse_run_config(const json& j, bool allow_seeds) {
    std::set<std::string> allowed{"seed",      "epochs",   "phase1_fraction", "lr",
                                  "lambda_c",  "t_conf",   "t_ema",           "heads",
                                  "window",    "voxel_size", "widths",        "max_grid_dim",
                                  "dtype",     "val_every", "ablation"};
    if (allow_seeds) allowed.insert("seeds");
    check_keys(j, allowed, "run config");
    RunConfig c;
    c.seed = j.value("seed", c.seed);
    c.epochs = j.value("epochs", c.epochs);
    c.phase1_fraction = j.value("phase1_fraction", c.phase1_fraction);
    c.lr = j.value("lr", c.lr);
    c.lambda_c = j.value("lambda_c", c.lambda_c);
    c.t_conf = j.value("t_conf", c.t_conf);
    c.t_ema = j.value("t_ema", c.t_ema);
    c.heads = j.value("heads", c.heads);
    c.window = j.value("window", c.window);
    c.voxel_size = j.value("voxel_size", c.voxel_size);
    if (j.contains("widths")) c.widths = j["widths"].get<std::vector<int>>();
    c.max_grid_dim = j.value("max_grid_dim", c.max_grid_dim);
    c.dtype = j.value("dtype", c.dtype);
    c.val_every = j.value("val_every", c.val_every);
    if (j.contains("ablation")) {
        const auto& a = j["ablation"];
        check_keys(a, {"pseudo_labels", "ema", "plo_consistency", "dmf"}, "ablation");
        c.ablation.pseudo_labels = a.value("pseudo_labels", c.ablation.pseudo_labels);
        c.ablation.ema = a.value("ema", c.ablation.ema);
        c.ablation.plo_consistency = a.value("plo_consistency", c.ablation.plo_consistency);
        c.ablation.dmf = a.value("dmf", c.ablation.dmf);
    }
    c.validate();
    return c;
}

json run_config_to_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["epochs"] = c.epochs;
    j["phase1_fraction"] = c.phase1_fraction;
    j["lr"] = c.lr;
    j["lambda_c"] = c.lambda_c;
    j["t_conf"] = c.t_conf;
    j["t_ema"] = c.t_ema;
    j["heads"] = c.heads;
    j["window"] = c.window;
    j["voxel_size"] = c.voxel_size;
    j["widths"] = c.widths;
    j["max_grid_dim"] = c.max_grid_dim;
    j["dtype"] = c.dtype;
    j["val_every"] = c.val_every;
    j["ablation"] = {{"pseudo_labels", c.ablation.pseudo_labels},
                     {"ema", c.ablation.ema},
                     {"plo_consistency", c.ablation.plo_consistency},
                     {"dmf", c.ablation.dmf}};
    return j;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir, bool force) {
    const GenSettings s =
        config_path.empty() ? GenSettings{} : parse_gen_config(load_json_file(config_path));
    if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force)
        throw ConfigError("output directory exists and is not empty (use --force): " + out_dir);
    const auto ds = build_dataset(s.cfg, s.train_scenes, s.val_scenes, s.labeled_ratio, s.seed);
    save_dataset(ds, out_dir);
    std::size_t labeled = 0;
    for (const auto& e : ds.entries)
        if (e.split == "train" && e.labeled) ++labeled;
    std::cout << "wrote " << ds.entries.size() << " scenes (" << labeled
              << " labeled train) to " << out_dir << "\n";
    return 0;
}

template <typename T>
int run_train(const Dataset& ds, const RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    {
        std::ofstream cj(fs::path(out_dir) / "config.json");
        cj << run_config_to_json(cfg).dump(2) << "\n";
    }
    std::ofstream log(fs::path(out_dir) / "train_log.jsonl");
    if (!log) throw ConfigError("cannot write log in " + out_dir);
    Trainer<T> trainer(ds, cfg, &log, out_dir);
    const auto result = trainer.train();
    std::cout << "final val: points mIoU " << result.final_val.points.miou << ", image mIoU "
              << result.final_val.image.miou << ", paired_l2 " << result.final_val.paired_l2
              << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& dataset_dir,
              const std::string& out_dir) {
    if (!fs::exists(fs::path(dataset_dir) / "manifest.json"))
        throw ConfigError("dataset path has no manifest.json: " + dataset_dir);
    const RunConfig cfg = config_path.empty() ? RunConfig{}
                                              : parse_run_config(load_json_file(config_path), false);
    const Dataset ds = load_dataset(dataset_dir);
    if (cfg.dtype == "f64") return run_train<double>(ds, cfg, out_dir);
    return run_train<float>(ds, cfg, out_dir);
}

std::vector<std::size_t> split_entries(const Dataset& ds, const std::string& split) {
    if (split == "val") return ds.val();
    if (split == "train_labeled") return ds.train_labeled();
    if (split == "train_unlabeled") return ds.train_unlabeled();
    if (split == "train") {
        auto ids = ds.train_labeled();
        const auto u = ds.train_unlabeled();
        ids.insert(ids.end(), u.begin(), u.end());
        std::sort(ids.begin(), ids.end());
        return ids;
    }
    throw ConfigError("unknown split '" + split +
                      "' (expected val, train, train_labeled or train_unlabeled)");
}

template <typename T>
json eval_checkpoint(const std::string& prefix, const Dataset& ds, const std::string& split) {
    const json meta = json::parse(checkpoint_meta(prefix));
    BranchConfig branch;
    branch.widths = meta.value("widths", std::vector<int>{16, 32, 64});
    branch.classes = meta.value("classes", ds.generator.classes);
    branch.voxel_size = meta.value("voxel_size", 0.05);
    branch.max_grid_dim = meta.value("max_grid_dim", 32);
    const int heads = meta.value("heads", 4);
    const bool use_dmf = meta.value("dmf", false);
    const int window = meta.value("window", 9);

    auto params = bind_stream_params<T>(load_checkpoint<T>(prefix), branch, heads, use_dmf);
    const auto ids = split_entries(ds, split);
    if (ids.empty()) throw ConfigError("split '" + split + "' selects no scenes");
    std::vector<SceneTensors<T>> scenes;
    scenes.reserve(ids.size());
    for (auto i : ids) scenes.push_back(build_scene_tensors<T>(ds.entries[i], branch, window));
    std::vector<const SceneTensors<T>*> ptrs;
    for (const auto& s : scenes) ptrs.push_back(&s);
    const EvalResult r = evaluate<T>(ptrs, params, branch.classes, true);

    json out;
    out["checkpoint"] = prefix;
    out["split"] = split;
    out["scenes"] = ids.size();
    out["points"] = json::parse(metrics_to_json("points", r.points));
    out["image"] = json::parse(metrics_to_json("image", r.image));
    out["paired_l2"] = r.paired_l2;
    return out;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset_dir,
             const std::string& split, const std::string& out_path) {
    if (!fs::exists(checkpoint + ".json"))
        throw ConfigError("checkpoint manifest not found: " + checkpoint + ".json");
    if (!fs::exists(fs::path(dataset_dir) / "manifest.json"))
        throw ConfigError("dataset path has no manifest.json: " + dataset_dir);
    const Dataset ds = load_dataset(dataset_dir);
    const std::string dtype = checkpoint_dtype(checkpoint);
    json out;
    if (dtype == "f64")
        out = eval_checkpoint<double>(checkpoint, ds, split);
    else if (dtype == "f32")
        out = eval_checkpoint<float>(checkpoint, ds, split);
    else
        throw ConfigError("checkpoint has unsupported dtype '" + dtype + "'");
    if (out_path.empty()) {
        std::cout << out.dump(2) << "\n";
    } else {
        std::ofstream f(out_path);
        if (!f) throw ConfigError("cannot write " + out_path);
        f << out.dump(2) << "\n";
    }
    return 0;
}

struct LadderRung {
    const char* name;
    AblationFlags flags;
};

const LadderRung kLadder[] = {
    {"baseline", {false, false, false, false}},
    {"model_a", {true, false, false, false}},
    {"model_b", {true, true, false, false}},
    {"model_c", {true, true, true, false}},
    {"full", {true, true, true, true}},
};

template <typename T>
json run_ablation(const Dataset& ds, const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                  const std::string& out_dir) {
    json rows = json::array();
    for (const auto& rung : kLadder) {
        json per_seed = json::array();
        double m3 = 0, a3 = 0, o3 = 0, m2 = 0, a2 = 0, o2 = 0;
        for (const auto seed : seeds) {
            RunConfig cfg = base;
            cfg.seed = seed;
            cfg.ablation = rung.flags;
            const std::string run_dir =
                out_dir + "/" + rung.name + "_seed" + std::to_string(seed);
            fs::create_directories(run_dir);
            std::ofstream log(fs::path(run_dir) / "train_log.jsonl");
            Trainer<T> trainer(ds, cfg, &log, run_dir);
            const auto result = trainer.train();
            const auto& v = result.final_val;
            json r;
            r["seed"] = seed;
            r["points"] = {{"mIoU", v.points.miou}, {"mAcc", v.points.macc}, {"OA", v.points.oa}};
            r["image"] = {{"mIoU", v.image.miou}, {"mAcc", v.image.macc}, {"OA", v.image.oa}};
            r["paired_l2"] = v.paired_l2;
            per_seed.push_back(std::move(r));
            m3 += v.points.miou;
            a3 += v.points.macc;
            o3 += v.points.oa;
            m2 += v.image.miou;
            a2 += v.image.macc;
            o2 += v.image.oa;
            std::cout << rung.name << " seed " << seed << ": points mIoU " << v.points.miou
                      << ", image mIoU " << v.image.miou << "\n";
        }
        const double n = static_cast<double>(seeds.size());
        json row;
        row["model"] = rung.name;
        row["points"] = {{"mIoU", m3 / n}, {"mAcc", a3 / n}, {"OA", o3 / n}};
        row["image"] = {{"mIoU", m2 / n}, {"mAcc", a2 / n}, {"OA", o2 / n}};
        row["per_seed"] = std::move(per_seed);
        rows.push_back(std::move(row));
    }
    json out;
    out["seeds"] = seeds;
    out["rows"] = std::move(rows);
    return out;
}

int cmd_ablate(const std::string& config_path, const std::string& dataset_dir,
               const std::string& out_dir) {
    if (!fs::exists(fs::path(dataset_dir) / "manifest.json"))
        throw ConfigError("dataset path has no manifest.json: " + dataset_dir);
    json jc = config_path.empty() ? json::object() : load_json_file(config_path);
    std::vector<std::uint64_t> seeds{1, 2, 3};
    if (jc.contains("seeds")) seeds = jc["seeds"].get<std::vector<std::uint64_t>>();
    if (seeds.empty()) throw ConfigError("ablate: seeds must be non-empty");
    const RunConfig base = parse_run_config(jc, true);
    const Dataset ds = load_dataset(dataset_dir);
    fs::create_directories(out_dir);
    json out;
    if (base.dtype == "f64")
        out = run_ablation<double>(ds, base, seeds, out_dir);
    else
        out = run_ablation<float>(ds, base, seeds, out_dir);
    std::ofstream f(fs::path(out_dir) / "ablation.json");
    f << out.dump(2) << "\n";
    std::cout << "wrote " << (fs::path(out_dir) / "ablation.json").string() << "\n";
    return 0;
}

const char* kConfigReference = R"(Config file keys (JSON; defaults in parentheses):
  train/ablate: seed (1), epochs (45), phase1_fraction (0.6667), lr (0.01),
    lambda_c (5), t_conf (0.9), t_ema (0.999), heads (4), window (9),
    voxel_size (0.05), widths ([16,32,64]), max_grid_dim (32), dtype (f32),
    val_every (1), ablation {pseudo_labels, ema, plo_consistency, dmf} (all true),
    seeds ([1,2,3]; ablate only)
  gen-data: seed (1), train_scenes (64), val_scenes (16), labeled_ratio (0.10),
    classes (6), points_per_scene (4096), image_size ([64,64]),
    views_per_scene (3), room ([0.8,0.8,0.4]), color_noise (0.15),
    tint_noise (0.06), focal (72), min/max_objects_per_class (1/2),
    class_proportions (built-in)
Unknown keys are rejected.)";

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pdnet: semi-supervised dual-modal (point cloud + image) segmentation"};
    app.require_subcommand(1);
    app.footer(kConfigReference);

    std::string config_path, out_dir, dataset_dir, checkpoint, split = "val", out_path;
    bool force = false;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset directory");
    gen->add_option("--config", config_path, "JSON config file");
    gen->add_option("--out", out_dir, "output dataset directory")->required();
    gen->add_flag("--force", force, "overwrite an existing non-empty directory");

    auto* train = app.add_subcommand("train", "train on a dataset directory");
    train->add_option("--config", config_path, "JSON run config");
    train->add_option("--dataset", dataset_dir, "dataset directory")->required();
    train->add_option("--out", out_dir, "run output directory (log + checkpoints)")->required();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", checkpoint, "checkpoint prefix (without .json)")->required();
    eval->add_option("--dataset", dataset_dir, "dataset directory")->required();
    eval->add_option("--split", split, "val | train | train_labeled | train_unlabeled");
    eval->add_option("--out", out_path, "write metrics JSON here instead of stdout");

    auto* ablate = app.add_subcommand(
        "ablate", "run baseline/model_a/model_b/model_c/full and emit a comparison table");
    ablate->add_option("--config", config_path, "JSON run config (plus optional seeds)");
    ablate->add_option("--dataset", dataset_dir, "dataset directory")->required();
    ablate->add_option("--out", out_dir, "output directory")->required();

    auto* selfcheck = app.add_subcommand("selfcheck", "run the built-in verification suites");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(config_path, out_dir, force);
        if (train->parsed()) return cmd_train(config_path, dataset_dir, out_dir);
        if (eval->parsed()) return cmd_eval(checkpoint, dataset_dir, split, out_path);
        if (ablate->parsed()) return cmd_ablate(config_path, dataset_dir, out_dir);
        if (selfcheck->parsed()) return run_selfcheck(std::cout);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const TrainingDiverged& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
