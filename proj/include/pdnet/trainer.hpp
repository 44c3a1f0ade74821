#pragma once

#include <cmath>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdnet/branches.hpp"
#include "pdnet/dmf.hpp"
#include "pdnet/metrics.hpp"
#include "pdnet/scene.hpp"

namespace pdnet {

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct TrainingDiverged : std::runtime_error {
    TrainingDiverged(const std::string& msg, std::string dump)
        : std::runtime_error(msg), dump_path(std::move(dump)) {}
    std::string dump_path;
};

// Component switches forming the ablation ladder: Baseline (all off),
// Model A (+pseudo_labels), Model B (+ema), Model C (+plo_consistency),
// full (+dmf). Each rung is a pure config change.
struct AblationFlags {
    bool pseudo_labels = true;
    bool ema = true;
    bool plo_consistency = true;  // pseudo-label optimization + consistency loss
    bool dmf = true;
};

struct RunConfig {
    std::uint64_t seed = 1;
    int epochs = 45;
    double phase1_fraction = 2.0 / 3.0;  // labeled-only warmup share of epochs
    double lr = 0.01;
    double lambda_c = 5.0;
    double t_conf = 0.9;
    double t_ema = 0.999;
    int heads = 4;
    int window = 9;  // densification neighborhood
    double voxel_size = 0.05;
    std::vector<int> widths{16, 32, 64};
    int max_grid_dim = 32;
    std::string dtype = "f32";  // "f32" | "f64"
    int val_every = 1;
    AblationFlags ablation;

    int phase1_epochs() const {
        const auto p = static_cast<int>(std::llround(epochs * phase1_fraction));
        return std::min(std::max(p, 0), epochs);
    }
    void validate() const;  // throws ConfigError
};

// ---- EMA teacher ----

template <typename T>
struct EmaState {
    std::int64_t step = 0;  // updates applied so far
    double t_ema = 0.999;
    ParamSet<T> teacher;
};

// alpha = min(1 - 1/(s+1), t_ema); teacher <- alpha*teacher +
// (1-alpha)*student elementwise; then s increments. The first update (s=0)
// therefore copies the student exactly.
template <typename T>
void ema_update(EmaState<T>& state, const ParamSet<T>& student);

// ---- losses ----

// Mean squared L2 distance between paired probability rows. Returns a plain
// zero scalar (and warns on stderr) when there are no pairs.
template <typename T>
TensorPtr<T> consistency_loss(const TensorPtr<T>& paired_3d, const TensorPtr<T>& paired_2d);

struct LossReport {
    double l3d_l = 0, l2d_l = 0, l3d_u = 0, l2d_u = 0, lc = 0;
    double lambda_c = 0;
    double total = 0;
};

template <typename T>
struct LossTerms {
    TensorPtr<T> l3d_l, l2d_l, l3d_u, l2d_u, lc;  // null = absent (exact 0)
};

template <typename T>
std::pair<TensorPtr<T>, LossReport> total_loss(const LossTerms<T>& terms, double lambda_c);

// ---- parameters of one stream ----

template <typename T>
struct StreamParams {
    ParamSet<T> set;
    UnetParams<T> b3, b2;
    std::vector<DmfDirectionParams<T>> dmf3, dmf2;  // per scale; empty without fusion
    BranchConfig branch;
    int heads = 4;
    bool use_dmf = false;
};

template <typename T>
StreamParams<T> make_stream_params(const BranchConfig& branch, int heads, bool use_dmf,
                                   std::uint64_t seed);

// binds layer structs onto an existing (e.g. cloned or loaded) ParamSet
template <typename T>
StreamParams<T> bind_stream_params(ParamSet<T> set, const BranchConfig& branch, int heads,
                                   bool use_dmf);

// ---- cached per-scene tensors ----

template <typename T>
struct ViewTensors {
    TensorPtr<T> image;
    Correspondences pairs;
    std::vector<std::int32_t> pair_point;                    // point index per pair
    std::vector<std::int32_t> pair_pixel_full;               // row*W + col
    std::vector<std::vector<std::int32_t>> pair_pixel_scale; // per decoder scale
    std::vector<std::int32_t> target2d;                      // densified gt labels (labeled only)
    const ViewSample* view = nullptr;
};

template <typename T>
struct SceneTensors {
    const DatasetEntry* entry = nullptr;
    VoxelGrid grid;
    TensorPtr<T> grid_input;
    std::vector<std::vector<std::int32_t>> point_cells;  // per scale
    std::vector<ViewTensors<T>> views;
};

template <typename T>
SceneTensors<T> build_scene_tensors(const DatasetEntry& entry, const BranchConfig& branch,
                                    int window);

// ---- stream forward ----

template <typename T>
struct StreamOutputs {
    BranchOutput<T> out3d;               // [N, C]
    std::vector<BranchOutput<T>> out2d;  // per view, [H, W, C]
    TensorPtr<T> paired_probs3, paired_probs2;  // concat over views; null when no pairs
};

// Runs both branches in lockstep, fusing per decoder scale when the stream
// carries fusion parameters.
template <typename T>
StreamOutputs<T> forward_stream(const SceneTensors<T>& st, const StreamParams<T>& params);

// ---- evaluation ----

struct EvalResult {
    MetricSummary points, image;
    double paired_l2 = 0.0;  // mean over pairs of the squared paired-output distance
};

template <typename T>
EvalResult evaluate(const std::vector<const SceneTensors<T>*>& scenes,
                    const StreamParams<T>& params, int classes, bool parallel = true);

// ---- training loop ----

struct EpochLog {
    int epoch = 0;
    bool unlabeled_used = false;
    LossReport loss;  // means over the epoch's steps
    std::optional<EvalResult> val;
};

struct TrainResult {
    std::vector<EpochLog> epochs;
    EvalResult final_val;
    int first_unlabeled_epoch = -1;  // -1 when unlabeled data never used
};

template <typename T>
class Trainer {
  public:
    // log: JSON-lines sink (one line per epoch), may be null.
    // out_dir: checkpoint directory, empty to skip checkpoints.
    Trainer(const Dataset& dataset, const RunConfig& cfg, std::ostream* log,
            std::string out_dir = "");

    TrainResult train();

    const StreamParams<T>& student() const { return student_; }
    const RunConfig& config() const { return cfg_; }

  private:
    struct PseudoTargets {
        std::vector<std::int32_t> labels3d;  // per pair, concat over views
        std::vector<std::int32_t> labels2d;  // per pixel, concat over views
    };

    void train_step(std::size_t labeled_idx, std::optional<std::size_t> unlabeled_idx,
                    LossReport& report);
    PseudoTargets make_pseudo_targets(const SceneTensors<T>& st);
    void write_checkpoint(const std::string& name) const;
    std::string dump_diagnostics(int epoch, std::size_t step, const LossReport& report) const;

    const Dataset& dataset_;
    RunConfig cfg_;
    std::ostream* log_;
    std::string out_dir_;
    BranchConfig branch_;
    StreamParams<T> student_;
    std::optional<EmaState<T>> ema_;
    std::optional<StreamParams<T>> teacher_view_;  // bound onto ema_->teacher
    std::vector<SceneTensors<T>> cache_;
    std::vector<std::size_t> labeled_ids_, unlabeled_ids_, val_ids_;
    std::vector<std::size_t> unlabeled_cycle_;
    std::size_t unlabeled_pos_ = 0;
    std::uint64_t unlabeled_cycle_count_ = 0;
    int epoch_ = 0;
    std::size_t step_in_epoch_ = 0;
};

std::string epoch_log_json(const EpochLog& log);

}  // namespace pdnet
