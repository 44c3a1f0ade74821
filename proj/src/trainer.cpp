#include "pdnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "pdnet/checkpoint.hpp"
#include "pdnet/parallel.hpp"
#include "pdnet/plo.hpp"
#include "pdnet/simd.hpp"

namespace pdnet {

using nlohmann::json;

void RunConfig::validate() const {
    if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
    if (phase1_fraction < 0.0 || phase1_fraction > 1.0)
        throw ConfigError("config: phase1_fraction must lie in [0, 1]");
    if (lr <= 0.0) throw ConfigError("config: lr must be positive");
    if (lambda_c < 0.0) throw ConfigError("config: lambda_c must be non-negative");
    if (t_conf < 0.0 || t_conf > 1.0) throw ConfigError("config: t_conf must lie in [0, 1]");
    if (t_ema <= 0.0 || t_ema >= 1.0) throw ConfigError("config: t_ema must lie in (0, 1)");
    if (heads < 1) throw ConfigError("config: heads must be >= 1");
    if (window < 1 || window % 2 == 0) throw ConfigError("config: window must be odd and >= 1");
    if (voxel_size <= 0.0) throw ConfigError("config: voxel_size must be positive");
    if (widths.empty()) throw ConfigError("config: widths must be non-empty");
    for (int w : widths) {
        if (w < 1) throw ConfigError("config: widths must be positive");
        if (w % heads != 0)
            throw ConfigError("config: heads must divide every fused width (width " +
                              std::to_string(w) + " vs heads " + std::to_string(heads) + ")");
    }
    if (max_grid_dim < 1) throw ConfigError("config: max_grid_dim must be >= 1");
    if (dtype != "f32" && dtype != "f64") throw ConfigError("config: dtype must be f32 or f64");
    if (val_every < 1) throw ConfigError("config: val_every must be >= 1");
}

// ---- EMA ----

template <typename T>
void ema_update(EmaState<T>& state, const ParamSet<T>& student) {
    if (!state.teacher.shape_compatible(student))
        throw std::logic_error("ema_update: parameter sets are not shape-compatible");
    const double alpha =
        std::min(1.0 - 1.0 / static_cast<double>(state.step + 1), state.t_ema);
    const auto& k = simd::kernels<T>();
    auto it_t = state.teacher.begin();
    auto it_s = student.begin();
    for (; it_t != state.teacher.end(); ++it_t, ++it_s)
        k.lerp(static_cast<T>(alpha), it_s->second->data.data(), it_t->second->data.data(),
               it_t->second->data.size());
    ++state.step;
}

// ---- losses ----

template <typename T>
TensorPtr<T> consistency_loss(const TensorPtr<T>& paired_3d, const TensorPtr<T>& paired_2d) {
    if (!paired_3d || !paired_2d || paired_3d->rows() == 0) {
        std::cerr << "[pdnet] warning: consistency loss over an empty pair set\n";
        return make_scalar<T>(T(0));
    }
    return squared_l2_rowmean(paired_3d, paired_2d);
}

template <typename T>
std::pair<TensorPtr<T>, LossReport> total_loss(const LossTerms<T>& terms, double lambda_c) {
    if (lambda_c < 0.0) throw ConfigError("total_loss: lambda_c must be non-negative");
    LossReport report;
    report.lambda_c = lambda_c;
    TensorPtr<T> total;
    auto take = [&total](const TensorPtr<T>& t, double& slot) {
        if (!t) return;
        slot = static_cast<double>(t->data[0]);
        total = total ? add(total, t) : t;
    };
    take(terms.l3d_l, report.l3d_l);
    take(terms.l2d_l, report.l2d_l);
    take(terms.l3d_u, report.l3d_u);
    take(terms.l2d_u, report.l2d_u);
    if (terms.lc) {
        report.lc = static_cast<double>(terms.lc->data[0]);
        auto weighted = scale(terms.lc, static_cast<T>(lambda_c));
        total = total ? add(total, weighted) : weighted;
    }
    if (!total) total = make_scalar<T>(T(0));
    report.total = static_cast<double>(total->data[0]);
    return {total, report};
}

// ---- stream parameters ----

template <typename T>
StreamParams<T> make_stream_params(const BranchConfig& branch, int heads, bool use_dmf,
                                   std::uint64_t seed) {
    branch.validate();
    StreamParams<T> p;
    p.branch = branch;
    p.heads = heads;
    p.use_dmf = use_dmf;
    Rng rng(mix_seed(seed, 0x171aULL));
    p.b3 = make_unet_params(p.set, "b3d", branch, 4, 3, rng);
    p.b2 = make_unet_params(p.set, "b2d", branch, 3, 2, rng);
    if (use_dmf) {
        for (int s = 0; s < branch.scales(); ++s) {
            const int d = branch.widths[s];
            p.dmf3.push_back(make_dmf_direction(p.set, "dmf3.s" + std::to_string(s), d, d, heads,
                                                rng));
            p.dmf2.push_back(make_dmf_direction(p.set, "dmf2.s" + std::to_string(s), d, d, heads,
                                                rng));
        }
    }
    return p;
}

template <typename T>
StreamParams<T> bind_stream_params(ParamSet<T> set, const BranchConfig& branch, int heads,
                                   bool use_dmf) {
    StreamParams<T> p;
    p.branch = branch;
    p.heads = heads;
    p.use_dmf = use_dmf;
    p.set = std::move(set);
    p.b3 = bind_unet_params<T>(p.set, "b3d", branch);
    p.b2 = bind_unet_params<T>(p.set, "b2d", branch);
    if (use_dmf) {
        for (int s = 0; s < branch.scales(); ++s) {
            p.dmf3.push_back(bind_dmf_direction<T>(p.set, "dmf3.s" + std::to_string(s), heads));
            p.dmf2.push_back(bind_dmf_direction<T>(p.set, "dmf2.s" + std::to_string(s), heads));
        }
    }
    return p;
}

// ---- scene tensors ----

namespace {

std::pair<int, int> image_dims_at_scale(int h, int w, int scale) {
    for (int s = 0; s < scale; ++s) {
        h = (h + 1) / 2;
        w = (w + 1) / 2;
    }
    return {h, w};
}

}  // namespace

template <typename T>
SceneTensors<T> build_scene_tensors(const DatasetEntry& entry, const BranchConfig& branch,
                                    int window) {
    SceneTensors<T> st;
    st.entry = &entry;
    st.grid = voxelize(entry.scene.points, entry.scene.colors, entry.scene.room,
                       branch.voxel_size, branch.max_grid_dim);
    st.grid_input = grid_input_tensor<T>(st.grid);
    for (int s = 0; s < branch.scales(); ++s)
        st.point_cells.push_back(point_cells_at_scale(st.grid, s));

    const int C = entry.scene.classes;
    for (const auto& view : entry.views) {
        ViewTensors<T> vt;
        vt.view = &view;
        const int H = view.camera.height, W = view.camera.width;
        vt.image = image_input_tensor<T>(view.image, H, W);
        vt.pairs = build_pairs(entry.scene, view);
        const std::size_t n = vt.pairs.count();
        vt.pair_point.reserve(n);
        vt.pair_pixel_full.reserve(n);
        for (const auto& pr : vt.pairs.pairs) {
            vt.pair_point.push_back(pr.point);
            vt.pair_pixel_full.push_back(pr.row * W + pr.col);
        }
        for (int s = 0; s < branch.scales(); ++s) {
            const auto [hs, ws] = image_dims_at_scale(H, W, s);
            (void)hs;
            std::vector<std::int32_t> idx(n);
            for (std::size_t j = 0; j < n; ++j)
                idx[j] = (vt.pairs.pairs[j].row >> s) * ws + (vt.pairs.pairs[j].col >> s);
            vt.pair_pixel_scale.push_back(std::move(idx));
        }
        if (entry.labeled) {
            // image supervision comes from the point labels: one-hot rows
            // densified over the window, argmax per covered pixel, void
            // elsewhere
            std::vector<double> onehot(n * static_cast<std::size_t>(C), 0.0);
            for (std::size_t j = 0; j < n; ++j)
                onehot[j * C + entry.scene.labels[vt.pairs.pairs[j].point]] = 1.0;
            const auto votes = densify_2d_pseudo(onehot, C, vt.pairs, H, W, window);
            vt.target2d.assign(votes.labels.begin(), votes.labels.end());
            for (auto& l : vt.target2d)
                if (l == kNoVote) l = void_label(C);
        }
        st.views.push_back(std::move(vt));
    }
    return st;
}

// ---- stream forward ----

template <typename T>
StreamOutputs<T> forward_stream(const SceneTensors<T>& st, const StreamParams<T>& P) {
    const int S = P.branch.scales();
    auto s3 = unet_encode(P.b3, st.grid_input, true);
    std::vector<UnetState<T>> s2;
    s2.reserve(st.views.size());
    for (const auto& vt : st.views) s2.push_back(unet_encode(P.b2, vt.image, false));

    for (int s = S - 1; s >= 0; --s) {
        unet_decode_level(P.b3, s3, s, true);
        for (std::size_t v = 0; v < s2.size(); ++v) unet_decode_level(P.b2, s2[v], s, false);
        if (!P.use_dmf) continue;

        auto f3_pts = gather_rows(s3.x, st.point_cells[s]);
        std::vector<TensorPtr<T>> g3_parts;
        std::vector<std::int32_t> cell_idx;
        for (std::size_t v = 0; v < st.views.size(); ++v) {
            const auto& vt = st.views[v];
            if (vt.pair_point.empty()) continue;
            auto f3v = gather_rows(f3_pts, vt.pair_point);
            auto f2v = gather_rows(s2[v].x, vt.pair_pixel_scale[s]);
            auto g3 = dmf_fuse(f3v, f2v, P.dmf3[s]);
            auto g2 = dmf_fuse(f2v, f3v, P.dmf2[s]);
            s2[v].x = scatter_mean_rows(s2[v].x, g2, vt.pair_pixel_scale[s]);
            g3_parts.push_back(g3);
            for (auto pidx : vt.pair_point) cell_idx.push_back(st.point_cells[s][pidx]);
        }
        if (!g3_parts.empty()) {
            auto g3cat = g3_parts.size() == 1 ? g3_parts[0] : concat(g3_parts, 0);
            s3.x = scatter_mean_rows(s3.x, g3cat, cell_idx);
        }
    }

    StreamOutputs<T> out;
    auto logits_grid = unet_head(P.b3, s3, true);
    out.out3d.logits = gather_rows(logits_grid, st.point_cells[0]);
    out.out3d.probs = softmax(out.out3d.logits, 1);
    std::vector<TensorPtr<T>> p3_parts, p2_parts;
    for (std::size_t v = 0; v < st.views.size(); ++v) {
        BranchOutput<T> b;
        b.logits = unet_head(P.b2, s2[v], false);
        b.probs = softmax(b.logits, 2);
        if (!st.views[v].pair_point.empty()) {
            p3_parts.push_back(gather_rows(out.out3d.probs, st.views[v].pair_point));
            p2_parts.push_back(gather_rows(b.probs, st.views[v].pair_pixel_full));
        }
        out.out2d.push_back(std::move(b));
    }
    if (!p3_parts.empty()) {
        out.paired_probs3 = p3_parts.size() == 1 ? p3_parts[0] : concat(p3_parts, 0);
        out.paired_probs2 = p2_parts.size() == 1 ? p2_parts[0] : concat(p2_parts, 0);
    }
    return out;
}

// ---- evaluation ----

namespace {

template <typename T>
std::int32_t argmax_row(const T* row, int c) {
    int best = 0;
    for (int i = 1; i < c; ++i)
        if (row[i] > row[best]) best = i;
    return best;
}

struct EvalPartial {
    std::vector<std::int64_t> cm3, cm2;
    double l2_sum = 0.0;
    std::int64_t l2_count = 0;
};

}  // namespace

template <typename T>
EvalResult evaluate(const std::vector<const SceneTensors<T>*>& scenes,
                    const StreamParams<T>& params, int classes, bool parallel) {
    const int C = classes;
    std::vector<EvalPartial> partials(scenes.size());
    auto run_range = [&](std::int64_t lo, std::int64_t hi) {
        NoGradGuard ng;
        for (std::int64_t i = lo; i < hi; ++i) {
            const SceneTensors<T>& st = *scenes[i];
            EvalPartial& part = partials[i];
            part.cm3.assign(static_cast<std::size_t>(C) * C, 0);
            part.cm2.assign(static_cast<std::size_t>(C) * C, 0);
            auto outs = forward_stream(st, params);
            const T* p3 = outs.out3d.probs->data.data();
            const auto& labels = st.entry->scene.labels;
            for (std::size_t pt = 0; pt < labels.size(); ++pt) {
                const std::int32_t pred = argmax_row(p3 + pt * C, C);
                ++part.cm3[static_cast<std::size_t>(labels[pt]) * C + pred];
            }
            for (std::size_t v = 0; v < st.views.size(); ++v) {
                const T* p2 = outs.out2d[v].probs->data.data();
                const auto& gt = st.views[v].view->pixel_labels;
                for (std::size_t px = 0; px < gt.size(); ++px) {
                    if (gt[px] == void_label(C)) continue;
                    const std::int32_t pred = argmax_row(p2 + px * C, C);
                    ++part.cm2[static_cast<std::size_t>(gt[px]) * C + pred];
                }
                const auto& vt = st.views[v];
                for (std::size_t j = 0; j < vt.pair_point.size(); ++j) {
                    const T* a = p3 + static_cast<std::size_t>(vt.pair_point[j]) * C;
                    const T* b = p2 + static_cast<std::size_t>(vt.pair_pixel_full[j]) * C;
                    double d2 = 0.0;
                    for (int c = 0; c < C; ++c) {
                        const double d = static_cast<double>(a[c]) - static_cast<double>(b[c]);
                        d2 += d * d;
                    }
                    part.l2_sum += d2;
                    ++part.l2_count;
                }
            }
        }
    };
    if (parallel)
        parallel_for(static_cast<std::int64_t>(scenes.size()), run_range);
    else
        run_range(0, static_cast<std::int64_t>(scenes.size()));

    ConfusionMatrix cm3(C), cm2(C);
    double l2_sum = 0.0;
    std::int64_t l2_count = 0;
    for (const auto& part : partials) {
        for (int g = 0; g < C; ++g)
            for (int p = 0; p < C; ++p) {
                cm3.at(g, p) += part.cm3[static_cast<std::size_t>(g) * C + p];
                cm2.at(g, p) += part.cm2[static_cast<std::size_t>(g) * C + p];
            }
        l2_sum += part.l2_sum;
        l2_count += part.l2_count;
    }
    EvalResult r;
    r.points = compute_metrics(cm3);
    r.image = compute_metrics(cm2);
    r.paired_l2 = l2_count > 0 ? l2_sum / static_cast<double>(l2_count) : 0.0;
    return r;
}

// ---- trainer ----

template <typename T>
Trainer<T>::Trainer(const Dataset& dataset, const RunConfig& cfg, std::ostream* log,
                    std::string out_dir)
    : dataset_(dataset), cfg_(cfg), log_(log), out_dir_(std::move(out_dir)) {
    cfg_.validate();
    branch_.widths = cfg_.widths;
    branch_.classes = dataset.generator.classes;
    branch_.voxel_size = cfg_.voxel_size;
    branch_.max_grid_dim = cfg_.max_grid_dim;
    branch_.validate();

    labeled_ids_ = dataset.train_labeled();
    unlabeled_ids_ = dataset.train_unlabeled();
    val_ids_ = dataset.val();
    if (labeled_ids_.empty())
        throw ConfigError("trainer: dataset has no labeled training scenes (missing split)");

    student_ = make_stream_params<T>(branch_, cfg_.heads, cfg_.ablation.dmf, cfg_.seed);

    cache_.resize(dataset.entries.size());
    const auto* entries = &dataset.entries;
    auto* cache = &cache_;
    const auto branch = branch_;
    const int window = cfg_.window;
    parallel_for(static_cast<std::int64_t>(entries->size()),
                 [entries, cache, branch, window](std::int64_t lo, std::int64_t hi) {
                     for (std::int64_t i = lo; i < hi; ++i)
                         (*cache)[i] = build_scene_tensors<T>((*entries)[i], branch, window);
                 });
}

template <typename T>
typename Trainer<T>::PseudoTargets Trainer<T>::make_pseudo_targets(const SceneTensors<T>& st) {
    NoGradGuard ng;
    const StreamParams<T>& teacher = teacher_view_ ? *teacher_view_ : student_;
    auto outs = forward_stream(st, teacher);
    const int C = branch_.classes;
    const std::int32_t deleted = void_label(C);
    const bool optimize = cfg_.ablation.plo_consistency;

    PseudoTargets pt;
    const T* p3 = outs.out3d.probs->data.data();
    for (std::size_t v = 0; v < st.views.size(); ++v) {
        const auto& vt = st.views[v];
        const int H = vt.view->camera.height, W = vt.view->camera.width;
        const std::size_t n_px = static_cast<std::size_t>(H) * W;
        const auto coarse2 = extract_coarse(outs.out2d[v].probs->data.data(), n_px, C);

        DensifiedVotes votes;
        const std::size_t n = vt.pair_point.size();
        if (n > 0) {
            std::vector<T> rows3(n * static_cast<std::size_t>(C));
            for (std::size_t j = 0; j < n; ++j)
                std::copy(p3 + static_cast<std::size_t>(vt.pair_point[j]) * C,
                          p3 + static_cast<std::size_t>(vt.pair_point[j]) * C + C,
                          rows3.data() + j * C);
            const auto coarse3 = extract_coarse(rows3.data(), n, C);
            std::vector<std::int32_t> vote3(n);
            for (std::size_t j = 0; j < n; ++j)
                vote3[j] = coarse2.labels[static_cast<std::size_t>(vt.pair_pixel_full[j])];
            const auto opt3 = optimize
                                  ? optimize_3d(coarse3.labels, vote3, coarse3.confidence,
                                                cfg_.t_conf, deleted)
                                  : coarse3.labels;
            pt.labels3d.insert(pt.labels3d.end(), opt3.begin(), opt3.end());
            votes = densify_2d_pseudo(rows3, C, vt.pairs, H, W, cfg_.window);
        } else {
            votes.labels.assign(n_px, kNoVote);
            votes.covered.assign(n_px, 0);
        }
        const auto opt2 = optimize ? optimize_2d(coarse2.labels, votes.labels, coarse2.confidence,
                                                 cfg_.t_conf, deleted)
                                   : coarse2.labels;
        pt.labels2d.insert(pt.labels2d.end(), opt2.begin(), opt2.end());
    }
    return pt;
}

template <typename T>
void Trainer<T>::train_step(std::size_t labeled_idx, std::optional<std::size_t> unlabeled_idx,
                            LossReport& report) {
    const int C = branch_.classes;
    const std::int32_t ignore = void_label(C);
    const auto& stL = cache_[labeled_idx];

    LossTerms<T> terms;
    std::vector<TensorPtr<T>> paired3, paired2;

    auto outsL = forward_stream(stL, student_);
    terms.l3d_l = cross_entropy(outsL.out3d.logits, stL.entry->scene.labels, ignore);
    {
        std::vector<TensorPtr<T>> logit_parts;
        std::vector<std::int32_t> targets;
        for (std::size_t v = 0; v < stL.views.size(); ++v) {
            logit_parts.push_back(outsL.out2d[v].logits);
            targets.insert(targets.end(), stL.views[v].target2d.begin(),
                           stL.views[v].target2d.end());
        }
        auto cat = logit_parts.size() == 1 ? logit_parts[0] : concat(logit_parts, 0);
        terms.l2d_l = cross_entropy(cat, std::move(targets), ignore);
    }
    if (outsL.paired_probs3) {
        paired3.push_back(outsL.paired_probs3);
        paired2.push_back(outsL.paired_probs2);
    }

    if (unlabeled_idx) {
        const auto& stU = cache_[*unlabeled_idx];
        const auto pseudo = make_pseudo_targets(stU);
        auto outsU = forward_stream(stU, student_);
        std::vector<TensorPtr<T>> l3_parts;
        for (std::size_t v = 0; v < stU.views.size(); ++v)
            if (!stU.views[v].pair_point.empty())
                l3_parts.push_back(gather_rows(outsU.out3d.logits, stU.views[v].pair_point));
        if (!l3_parts.empty()) {
            auto cat = l3_parts.size() == 1 ? l3_parts[0] : concat(l3_parts, 0);
            terms.l3d_u = cross_entropy(cat, pseudo.labels3d, ignore);
        }
        {
            std::vector<TensorPtr<T>> logit_parts;
            for (std::size_t v = 0; v < stU.views.size(); ++v)
                logit_parts.push_back(outsU.out2d[v].logits);
            auto cat = logit_parts.size() == 1 ? logit_parts[0] : concat(logit_parts, 0);
            terms.l2d_u = cross_entropy(cat, pseudo.labels2d, ignore);
        }
        if (outsU.paired_probs3) {
            paired3.push_back(outsU.paired_probs3);
            paired2.push_back(outsU.paired_probs2);
        }
    }

    if (cfg_.ablation.plo_consistency) {
        TensorPtr<T> p3, p2;
        if (!paired3.empty()) {
            p3 = paired3.size() == 1 ? paired3[0] : concat(paired3, 0);
            p2 = paired2.size() == 1 ? paired2[0] : concat(paired2, 0);
        }
        terms.lc = consistency_loss(p3, p2);
    }

    auto [total, rep] = total_loss(terms, cfg_.ablation.plo_consistency ? cfg_.lambda_c : 0.0);
    report = rep;
    if (!std::isfinite(report.total)) {
        const std::string dump = dump_diagnostics(epoch_, step_in_epoch_, report);
        throw TrainingDiverged("training diverged: non-finite loss (diagnostics: " + dump + ")",
                               dump);
    }
    backward(total);
    sgd_step(student_.set, static_cast<T>(cfg_.lr));
    if (ema_) {
        ema_update(*ema_, student_.set);
        for (const auto& [name, p] : ema_->teacher)
            if (!p->grad.empty())
                throw std::logic_error("teacher parameter " + name + " received a gradient");
    }
}

template <typename T>
TrainResult Trainer<T>::train() {
    TrainResult result;
    const int phase1 = cfg_.phase1_epochs();
    for (epoch_ = 1; epoch_ <= cfg_.epochs; ++epoch_) {
        const bool phase2 = epoch_ > phase1;
        const bool unlabeled_used =
            phase2 && cfg_.ablation.pseudo_labels && !unlabeled_ids_.empty();
        if (unlabeled_used && cfg_.ablation.ema && !ema_) {
            ema_.emplace();
            ema_->step = 0;
            ema_->t_ema = cfg_.t_ema;
            ema_->teacher = student_.set.clone();
            teacher_view_ = bind_stream_params<T>(ema_->teacher, branch_, cfg_.heads,
                                                  cfg_.ablation.dmf);
        }

        std::vector<std::size_t> order = labeled_ids_;
        Rng shuffle_rng(mix_seed(cfg_.seed, 0x45500000ULL + static_cast<std::uint64_t>(epoch_)));
        shuffle_rng.shuffle(order);

        EpochLog log;
        log.epoch = epoch_;
        log.unlabeled_used = unlabeled_used;
        LossReport sum;
        step_in_epoch_ = 0;
        for (std::size_t idx : order) {
            std::optional<std::size_t> u;
            if (unlabeled_used) {
                if (unlabeled_pos_ >= unlabeled_cycle_.size()) {
                    unlabeled_cycle_ = unlabeled_ids_;
                    Rng r(mix_seed(cfg_.seed, 0xAB000000ULL + unlabeled_cycle_count_++));
                    r.shuffle(unlabeled_cycle_);
                    unlabeled_pos_ = 0;
                }
                u = unlabeled_cycle_[unlabeled_pos_++];
            }
            LossReport rep;
            train_step(idx, u, rep);
            sum.l3d_l += rep.l3d_l;
            sum.l2d_l += rep.l2d_l;
            sum.l3d_u += rep.l3d_u;
            sum.l2d_u += rep.l2d_u;
            sum.lc += rep.lc;
            sum.total += rep.total;
            sum.lambda_c = rep.lambda_c;
            ++step_in_epoch_;
        }
        const double n = static_cast<double>(order.size());
        log.loss = sum;
        log.loss.l3d_l /= n;
        log.loss.l2d_l /= n;
        log.loss.l3d_u /= n;
        log.loss.l2d_u /= n;
        log.loss.lc /= n;
        log.loss.total /= n;

        if (epoch_ % cfg_.val_every == 0 || epoch_ == cfg_.epochs) {
            std::vector<const SceneTensors<T>*> val_scenes;
            for (auto i : val_ids_) val_scenes.push_back(&cache_[i]);
            if (!val_scenes.empty())
                log.val = evaluate<T>(val_scenes, student_, branch_.classes, true);
        }
        if (log_) *log_ << epoch_log_json(log) << "\n";
        if (epoch_ == phase1 && !out_dir_.empty()) write_checkpoint("checkpoint_phase1");
        result.epochs.push_back(std::move(log));
        if (unlabeled_used && result.first_unlabeled_epoch < 0)
            result.first_unlabeled_epoch = epoch_;
    }
    if (!out_dir_.empty()) write_checkpoint("checkpoint_final");
    for (auto it = result.epochs.rbegin(); it != result.epochs.rend(); ++it)
        if (it->val) {
            result.final_val = *it->val;
            break;
        }
    return result;
}

template <typename T>
void Trainer<T>::write_checkpoint(const std::string& name) const {
    std::filesystem::create_directories(out_dir_);
    json meta;
    meta["heads"] = cfg_.heads;
    meta["widths"] = cfg_.widths;
    meta["classes"] = branch_.classes;
    meta["voxel_size"] = cfg_.voxel_size;
    meta["max_grid_dim"] = cfg_.max_grid_dim;
    meta["window"] = cfg_.window;
    meta["dmf"] = cfg_.ablation.dmf;
    meta["dtype"] = cfg_.dtype;
    save_checkpoint(student_.set, out_dir_ + "/" + name, meta.dump());
}

template <typename T>
std::string Trainer<T>::dump_diagnostics(int epoch, std::size_t step,
                                         const LossReport& report) const {
    json j;
    j["epoch"] = epoch;
    j["step"] = step;
    j["l3d_l"] = report.l3d_l;
    j["l2d_l"] = report.l2d_l;
    j["l3d_u"] = report.l3d_u;
    j["l2d_u"] = report.l2d_u;
    j["lc"] = report.lc;
    double max_abs_param = 0.0;
    for (const auto& [name, p] : student_.set)
        for (const T v : p->data) max_abs_param = std::max(max_abs_param, std::abs(double(v)));
    j["max_abs_param"] = max_abs_param;
    const std::string path =
        (out_dir_.empty() ? std::string("pdnet_divergence.json")
                          : out_dir_ + "/divergence.json");
    std::ofstream out(path);
    out << j.dump(2) << "\n";
    return path;
}

std::string epoch_log_json(const EpochLog& log) {
    json j;
    j["epoch"] = log.epoch;
    j["unlabeled_used"] = log.unlabeled_used;
    json loss;
    loss["l3d_l"] = log.loss.l3d_l;
    loss["l2d_l"] = log.loss.l2d_l;
    loss["l3d_u"] = log.loss.l3d_u;
    loss["l2d_u"] = log.loss.l2d_u;
    loss["lc"] = log.loss.lc;
    loss["lambda_c"] = log.loss.lambda_c;
    loss["total"] = log.loss.total;
    j["loss"] = std::move(loss);
    if (log.val) {
        json v;
        auto fill = [](const MetricSummary& m) {
            json s;
            s["mIoU"] = m.miou;
            s["mAcc"] = m.macc;
            s["OA"] = m.oa;
            return s;
        };
        v["points"] = fill(log.val->points);
        v["image"] = fill(log.val->image);
        v["paired_l2"] = log.val->paired_l2;
        j["val"] = std::move(v);
    }
    return j.dump();
}

// ---- instantiations ----

#define PDNET_TRAINER_INSTANTIATE(T)                                                          \
    template void ema_update<T>(EmaState<T>&, const ParamSet<T>&);                            \
    template TensorPtr<T> consistency_loss<T>(const TensorPtr<T>&, const TensorPtr<T>&);      \
    template std::pair<TensorPtr<T>, LossReport> total_loss<T>(const LossTerms<T>&, double);  \
    template StreamParams<T> make_stream_params<T>(const BranchConfig&, int, bool,            \
                                                   std::uint64_t);                            \
    template StreamParams<T> bind_stream_params<T>(ParamSet<T>, const BranchConfig&, int,     \
                                                   bool);                                     \
    template SceneTensors<T> build_scene_tensors<T>(const DatasetEntry&, const BranchConfig&, \
                                                    int);                                     \
    template StreamOutputs<T> forward_stream<T>(const SceneTensors<T>&, const StreamParams<T>&); \
    template EvalResult evaluate<T>(const std::vector<const SceneTensors<T>*>&,               \
                                    const StreamParams<T>&, int, bool);                       \
    template class Trainer<T>;

PDNET_TRAINER_INSTANTIATE(float)
PDNET_TRAINER_INSTANTIATE(double)

#undef PDNET_TRAINER_INSTANTIATE

}  // namespace pdnet
