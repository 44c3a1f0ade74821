// Built-in sanity suites: gradients against central finite differences,
// the pseudo-label rule against an independent evaluator, the EMA closed
// form, and the projection/densification round trip. Fast enough to run on
// every install.

#include "selfcheck.hpp"

#include <cmath>
#include <functional>
#include <iostream>
#include <sstream>

#include "pdnet/branches.hpp"
#include "pdnet/dmf.hpp"
#include "pdnet/plo.hpp"
#include "pdnet/rng.hpp"
#include "pdnet/scene.hpp"
#include "pdnet/trainer.hpp"

namespace pdnet {
namespace {

using D = double;

double max_grad_rel_err(ParamSet<D>& params, const std::function<TensorPtr<D>()>& loss_fn,
                        double h = 1e-5) {
    params.zero_grads();
    auto loss = loss_fn();
    backward(loss);
    double worst = 0.0;
    for (const auto& [name, p] : params) {
        for (std::size_t i = 0; i < p->data.size(); ++i) {
            const double keep = p->data[i];
            p->data[i] = keep + h;
            const double up = loss_fn()->data[0];
            p->data[i] = keep - h;
            const double dn = loss_fn()->data[0];
            p->data[i] = keep;
            const double fd = (up - dn) / (2 * h);
            const double an = p->grad.empty() ? 0.0 : p->grad[i];
            const double err = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-3});
            worst = std::max(worst, err);
        }
    }
    params.zero_grads();
    return worst;
}

bool check_gradients(std::ostream& out) {
    Rng rng(91);
    // a small two-layer perceptron exercising matmul/relu/softmax/ce
    ParamSet<D> params;
    auto w1 = params.create("w1", {5, 7}, rng, 0.6);
    auto b1 = params.create("b1", {7}, rng, 0.3);
    auto w2 = params.create("w2", {7, 4}, rng, 0.6);
    auto x = make_tensor<D>({3, 5});
    for (auto& v : x->data) v = rng.uniform(-1.0, 1.0);
    const std::vector<std::int32_t> labels{0, 2, 3};
    auto mlp_loss = [&]() {
        auto h1 = relu(add_bias(matmul(x, w1), b1));
        return cross_entropy(matmul(h1, w2), labels, -1);
    };
    const double e1 = max_grad_rel_err(params, mlp_loss);
    out << "  perceptron gradcheck max rel err " << e1 << "\n";
    if (e1 > 1e-4) return false;

    // fusion block on a micro pair set
    ParamSet<D> dp;
    Rng rng2(17);
    auto dir = make_dmf_direction(dp, "d", 8, 8, 4, rng2);
    auto f3 = make_tensor<D>({3, 8});
    auto f2 = make_tensor<D>({3, 8});
    for (auto& v : f3->data) v = rng2.uniform(-1.0, 1.0);
    for (auto& v : f2->data) v = rng2.uniform(-1.0, 1.0);
    auto dmf_loss = [&]() { return mean_all(dmf_fuse(f3, f2, dir)); };
    const double e2 = max_grad_rel_err(dp, dmf_loss);
    out << "  fusion gradcheck max rel err " << e2 << "\n";
    return e2 <= 1e-4;
}

bool check_plo(std::ostream& out) {
    Rng rng(2024);
    const int cases = 10000;
    int mismatches = 0;
    for (int i = 0; i < cases; ++i) {
        const std::int32_t coarse = static_cast<std::int32_t>(rng.uniform_int(0, 5));
        const std::int32_t vote =
            rng.uniform() < 0.15 ? kNoVote : static_cast<std::int32_t>(rng.uniform_int(0, 5));
        const double conf = rng.uniform();
        const double t = 0.9;
        const auto got = optimize_pseudo_labels<double>({coarse}, {vote}, {conf}, t, 6)[0];
        const std::int32_t want =
            ((vote != kNoVote && vote == coarse) || conf > t) ? coarse : 6;
        if (got != want) ++mismatches;
    }
    out << "  pseudo-label rule mismatches " << mismatches << "/" << cases << "\n";
    return mismatches == 0;
}

bool check_ema(std::ostream& out) {
    const double t_ema = 0.999;
    EmaState<double> st;
    st.t_ema = t_ema;
    st.step = 3;
    ParamSet<double> student;
    auto sp = student.create_zeros("p", {4});
    st.teacher = student.clone();
    for (auto& v : st.teacher.get("p")->data) v = 1.0;  // deviation 1
    double expect = 1.0;
    for (int k = 0; k < 20; ++k) {
        const double alpha = std::min(1.0 - 1.0 / (st.step + 1.0), t_ema);
        expect *= alpha;
        ema_update(st, student);
    }
    const double got = st.teacher.get("p")->data[0];
    out << "  ema deviation after 20 steps: " << got << " (closed form " << expect << ")\n";
    (void)sp;
    return std::abs(got - expect) <= 1e-12;
}

bool check_projection(std::ostream& out) {
    GeneratorConfig cfg;
    cfg.points_per_scene = 1500;
    auto scene = generate_scene(77, cfg);
    scene.scene_id = "selfcheck";
    auto views = render_views(scene, 2, 78, cfg);
    for (auto& view : views) {
        view.scene_id = scene.scene_id;
        const auto pairs = build_pairs(scene, view);
        std::size_t prov_count = 0;
        for (auto p : view.provenance)
            if (p >= 0) ++prov_count;
        if (pairs.count() != prov_count) {
            out << "  pair count " << pairs.count() << " != provenance " << prov_count << "\n";
            return false;
        }
        for (const auto& pr : pairs.pairs) {
            const std::size_t px =
                static_cast<std::size_t>(pr.row) * view.camera.width + pr.col;
            if (view.provenance[px] != pr.point) {
                out << "  provenance mismatch at pixel " << px << "\n";
                return false;
            }
            if (std::abs(pr.depth - view.depth[px]) > 1e-6) {
                out << "  depth mismatch " << std::abs(pr.depth - view.depth[px]) << "\n";
                return false;
            }
        }
    }
    out << "  projection round trip ok over " << views.size() << " views\n";
    return true;
}

}  // namespace

int run_selfcheck(std::ostream& out) {
    struct Suite {
        const char* name;
        bool (*fn)(std::ostream&);
    };
    const Suite suites[] = {
        {"gradients", &check_gradients},
        {"pseudo-label rule", &check_plo},
        {"ema closed form", &check_ema},
        {"projection round trip", &check_projection},
    };
    for (const auto& s : suites) {
        out << "selfcheck: " << s.name << "\n";
        if (!s.fn(out)) {
            out << "selfcheck FAILED: " << s.name << "\n";
            return 1;
        }
    }
    out << "selfcheck passed\n";
    return 0;
}

}  // namespace pdnet
