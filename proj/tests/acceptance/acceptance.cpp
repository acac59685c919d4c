// Acceptance gate: one PASS/FAIL line per criterion.
//   tide_acceptance            run all criteria
//   tide_acceptance 3 5        run the listed criteria

#include "../unit/gradcheck.hpp"
#include "../unit/support.hpp"

#include "tide/backend_compare.hpp"
#include "tide/euler.hpp"
#include "tide/graph.hpp"
#include "tide/nn.hpp"
#include "tide/spectral.hpp"
#include "tide/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

using namespace tide;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double mean(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string pct_list(const std::vector<double>& v) {
    std::string s;
    for (double x : v) s += (s.empty() ? "" : " ") + fmt("%.1f", 100 * x);
    return "[" + s + "]";
}

Graph karimi(Index n, double h, std::uint64_t seed) {
    HomophilyGraphParams p;
    p.num_nodes = n;
    p.homophily = h;
    p.seed = seed;
    return generate_homophily_graph(p);
}

GraphOperators full_ops(const Graph& g) {
    GraphOperators ops;
    ops.msg = build_normalized_adjacency(g);
    ops.delta = build_psd_laplacian(g);
    ops.basis = compute_spectral_basis(ops.delta, g.num_nodes());
    return ops;
}

Graph labeled_random_graph(Index n, Index features, int classes, std::uint64_t seed) {
    Graph g = oracle::random_graph(n, 4.0 / static_cast<double>(n), seed);
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (Index v = 0; v < n; ++v) labels[v] = static_cast<int>((v * 7 + seed) % classes);
    return g.with_features(oracle::random_matrix(n, features, seed + 100))
        .with_labels(labels)
        .with_masks(random_split(n, 0.5, 0.25, seed));
}

// 1. t = 0, alpha = beta = 1, no dropout, no residual: TIDE forward equals GCN.
Outcome criterion_gcn_equivalence() {
    double worst = 0.0, worst_ref = 0.0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        const Index n = 20 + 18 * static_cast<Index>(s);
        const Graph g = labeled_random_graph(n, 6, 3, s);
        const GraphOperators ops = full_ops(g);
        Architecture a;
        a.input_dim = 6;
        a.hidden_dim = 16;
        a.num_classes = 3;
        a.num_blocks = 3;
        a.mode = ModelMode::TideS;
        a.residual = false;
        a.dropout = 0.0;
        a.fixed_time = 0.0;
        Rng rng(s);
        const TideModel tide = TideModel::initialize(a, rng);
        TideModel gcn = tide;
        gcn.arch.mode = ModelMode::Gcn;
        gcn.arch.fixed_time.reset();
        const Matrix lt = forward(tide, g.features(), ops, false).logits;
        const Matrix lg = forward(gcn, g.features(), ops, false).logits;
        worst = std::max(worst, oracle::max_abs_diff(lt, lg));

        // Dense GCN reference with the same weights.
        const Matrix l = oracle::dense_normalized_adjacency(oracle::dense_adjacency(n, g.edges()));
        Matrix x = ((g.features() * tide.params.w_in).rowwise() + tide.params.b_in.transpose()).cwiseMax(0.0);
        for (const auto& b : tide.params.blocks) x = (l * x * b.w).cwiseMax(0.0);
        const Matrix ref = (x * tide.params.w_out).rowwise() + tide.params.b_out.transpose();
        worst_ref = std::max(worst_ref, oracle::max_abs_diff(lt, ref));
    }
    return {worst <= 1e-10 && worst_ref <= 1e-10,
            fmt("10 graphs n<=200: max |TIDE - GCN| = %.2e, max |TIDE - dense GCN| = %.2e (limit 1e-10)", worst,
                worst_ref)};
}

// 2. Finite differences over every parameter group, both TIDE modes.
Outcome criterion_gradients() {
    const Graph g = labeled_random_graph(30, 4, 3, 7);
    const GraphOperators ops = full_ops(g);
    bool pass = true;
    std::string detail;
    for (ModelMode mode : {ModelMode::TideS, ModelMode::TideM}) {
        Architecture a;
        a.input_dim = 4;
        a.hidden_dim = 10;
        a.num_classes = 3;
        a.num_blocks = 2;
        a.mode = mode;
        a.dropout = 0.0;
        Rng rng(11);
        TideModel m = TideModel::initialize(a, rng);
        // Move alpha, beta, t and biases off their initial values.
        std::normal_distribution<double> noise(0.0, 0.3);
        for (auto& b : m.params.blocks) {
            b.alpha += noise(rng);
            b.beta += noise(rng);
            for (Index i = 0; i < b.t_raw.size(); ++i) b.t_raw[i] = softplus_inverse(0.3 + std::abs(noise(rng)) * 2);
        }
        for (Index i = 0; i < m.params.b_in.size(); ++i) m.params.b_in[i] = noise(rng);
        for (Index i = 0; i < m.params.b_out.size(); ++i) m.params.b_out[i] = noise(rng);
        const Mask all(30, true);
        const gradcheck::Problem pb{&g.features(), &ops, &g.labels(), &all, 1};
        const auto r = gradcheck::run(m, pb, 200, 1e-4, 1e-4, 5);
        const bool ok = r.failures.empty() && r.checked == 200 && r.groups_seen.size() == 8;
        pass = pass && ok;
        detail += fmt("%s: %d coords, %zu/8 groups, max rel err %.2e, %d kink-skipped; ", to_string(mode).c_str(),
                      r.checked, r.groups_seen.size(), r.max_rel_error, r.skipped_kinks);
    }
    return {pass, detail + "limit 1e-4 at eps 1e-4"};
}

// 3. heat_apply with l = n against the dense matrix exponential.
Outcome criterion_spectral() {
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        const Index n = 30 + 7 * static_cast<Index>(s);
        const Graph g = oracle::random_graph(n, 5.0 / static_cast<double>(n), 200 + s);
        const GraphOperators ops = full_ops(g);
        const Matrix delta = ops.delta.matrix.to_dense();
        const Matrix u = oracle::random_matrix(n, 3, 300 + s);
        for (double t : {0.1, 1.0, 5.0}) {
            const Matrix want = oracle::expm(-t * delta) * u;
            worst = std::max(worst, oracle::max_abs_diff(heat_apply(ops.basis, std::span(&t, 1), u), want));
        }
    }
    return {worst <= 1e-8, fmt("10 graphs n<=100, t in {0.1,1,5}: max |H_t u - expm(-t Delta) u| = %.2e (limit 1e-8)", worst)};
}

// 4. K-hop Taylor truncation error under its bound. Where the bound falls
// below double-precision roundoff (64 eps for a unit vector), the error is
// held to that floor instead; those cases are counted separately.
Outcome criterion_truncation() {
    const double floor = 64 * std::numeric_limits<double>::epsilon();
    int cases = 0, violations = 0, floored = 0;
    double tightest = 0.0;  // largest error / bound ratio among strict cases
    for (std::uint64_t s = 0; s < 10; ++s) {
        const Index n = 40 + 6 * static_cast<Index>(s);
        const Graph g = oracle::random_graph(n, 4.0 / static_cast<double>(n), 400 + s);
        const GraphOperators ops = full_ops(g);
        const double c = ops.basis.lambda.maxCoeff();
        Matrix u = oracle::random_matrix(n, 1, 500 + s);
        u /= u.norm();
        for (double t : {0.1, 0.5, 1.0}) {
            const Matrix exact = heat_apply(ops.basis, std::span(&t, 1), u);
            for (int k = 1; k <= 10; ++k) {
                const double err = (exact - taylor_khop_diffuse(ops.delta, t, u, k)).norm();
                const double bound = taylor_bound(t, c, k);
                ++cases;
                if (bound < floor) {
                    ++floored;
                    if (!(err <= floor)) ++violations;
                } else {
                    if (!(err <= bound)) ++violations;
                    tightest = std::max(tightest, err / bound);
                }
            }
        }
    }
    return {violations == 0,
            fmt("%d cases (10 graphs, K=1..10, t in {0.1,0.5,1}): %d violations; max error/bound = %.3f over %d "
                "strict cases; %d cases with bound below roundoff held to %.1e",
                cases, violations, tightest, cases - floored, floored, floor)};
}

TrainConfig default_config(std::uint64_t seed) {
    TrainConfig c;
    c.seed = seed;
    return c;
}

// 5. Homophily curve, TIDE_S against GCN.
Outcome criterion_homophily_curve() {
    HomophilyGraphParams base;
    base.num_nodes = 2000;
    const std::vector<double> hs{0.0, 0.1, 0.2, 0.3};
    const std::vector<ModelMode> modes{ModelMode::TideS, ModelMode::Gcn};
    const auto rows = homophily_curve(base, hs, modes, default_config(0), 5);
    std::map<std::pair<double, ModelMode>, double> acc;
    for (const auto& r : rows) acc[{r.homophily, r.mode}] = r.mean_acc;
    bool pass = true;
    std::string detail;
    for (double h : hs) {
        const double ts = acc[{h, ModelMode::TideS}], gc = acc[{h, ModelMode::Gcn}];
        const double need = h <= 0.1 + 1e-12 ? 0.03 : 0.0;
        const bool ok = h <= 0.1 + 1e-12 ? ts - gc >= need : ts >= gc;
        pass = pass && ok;
        detail += fmt("h=%.1f TIDE_S %.2f vs GCN %.2f (%+.2f)%s; ", h, 100 * ts, 100 * gc, 100 * (ts - gc), ok ? "" : " !");
    }
    return {pass, detail + "n=2000, 5 seeds; need >= at every h and >= +3 at h<=0.1"};
}

// 6. Long-range protocol: zeroed unlabeled features, 5% labeled.
Outcome criterion_long_range() {
    std::vector<double> tide, gcn, dist;
    for (std::uint64_t s = 0; s < 5; ++s) {
        Graph g = karimi(2000, 0.8, s);
        g = g.with_masks(random_split(g.num_nodes(), 0.05, 0.475, s));
        TrainConfig c = default_config(s);
        const LongRangeResult a = run_long_range_protocol(g, c);
        c.mode = ModelMode::Gcn;
        const LongRangeResult b = run_long_range_protocol(g, c);
        tide.push_back(a.report.test_acc);
        gcn.push_back(b.report.test_acc);
        dist.push_back(a.stats.mean);
    }
    const double gap = mean(tide) - mean(gcn);
    const bool pass = gap >= 0.05 && mean(dist) > 2.0;
    return {pass, fmt("TIDE_S %.2f %s vs GCN %.2f %s: gap %+.2f (need >= +5); mean labeled distance %.3f (need > 2)",
                      100 * mean(tide), pct_list(tide).c_str(), 100 * mean(gcn), pct_list(gcn).c_str(), 100 * gap,
                      mean(dist))};
}

// 7. Depth 2 -> 16 accuracy drop, TIDE_M against GCN.
Outcome criterion_oversmoothing() {
    std::vector<double> tm2, tm16, g2, g16;
    for (std::uint64_t s = 0; s < 3; ++s) {
        const Graph g = karimi(2000, 0.8, s);
        const TrainConfig c = default_config(s);
        const PreparedGraph pg = prepare_graph(g, c);
        const std::vector<Index> depths{2, 16};
        const std::vector<ModelMode> modes{ModelMode::TideM, ModelMode::Gcn};
        for (const auto& p : block_ablation(pg, c, depths, modes)) {
            auto& v = p.mode == ModelMode::TideM ? (p.blocks == 2 ? tm2 : tm16) : (p.blocks == 2 ? g2 : g16);
            v.push_back(p.test_acc);
        }
    }
    const double dt = mean(tm2) - mean(tm16), dg = mean(g2) - mean(g16);
    return {dt < dg, fmt("TIDE_M %.2f -> %.2f (drop %.2f), GCN %.2f -> %.2f (drop %.2f); 3 seeds", 100 * mean(tm2),
                         100 * mean(tm16), 100 * dt, 100 * mean(g2), 100 * mean(g16), 100 * dg)};
}

// 8. Implicit-Euler backend: t = 0 agreement, O(t^2) slope, trained accuracy.
Outcome criterion_implicit_euler() {
    const Graph g = labeled_random_graph(150, 5, 3, 21);
    GraphOperators ops = full_ops(g);
    ops.cg.tolerance = 1e-12;
    Architecture a;
    a.input_dim = 5;
    a.hidden_dim = 12;
    a.num_classes = 3;
    a.num_blocks = 2;
    a.mode = ModelMode::TideM;
    a.dropout = 0.0;
    a.fixed_time = 0.0;
    Rng rng(3);
    const TideModel spectral = TideModel::initialize(a, rng);
    TideModel implicit = spectral;
    implicit.arch.backend = DiffusionBackend::ImplicitEuler;
    const double agree = oracle::max_abs_diff(forward(spectral, g.features(), ops, false).logits,
                                              forward(implicit, g.features(), ops, false).logits);

    std::vector<double> xs, ys;
    const Matrix u = oracle::random_matrix(g.num_nodes(), 1, 22);
    CgConfig tight;
    tight.tolerance = 1e-14;
    for (double t : {1e-3, 3e-3, 1e-2, 3e-2, 1e-1}) {
        const double err =
            (implicit_euler_solve(ops.delta, std::span(&t, 1), u, tight) - heat_apply(ops.basis, std::span(&t, 1), u)).norm();
        xs.push_back(std::log(t));
        ys.push_back(std::log(err));
    }
    const double mx = mean(xs), my = mean(ys);
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    const double slope = sxy / sxx;

    const BackendComparison cmp = compare_diffusion_backends(karimi(2000, 0.8, 0), default_config(0));
    const double diff = std::abs(cmp.spectral.test_acc - cmp.implicit_euler.test_acc);
    const bool pass = agree <= 1e-8 && slope >= 1.9 && diff <= 0.05;
    return {pass, fmt("t=0 max logit diff %.2e (limit 1e-8); small-t slope %.3f (need >= 1.9); h=0.8 test acc "
                      "spectral %.2f vs implicit %.2f (|diff| %.2f, limit 5)",
                      agree, slope, 100 * cmp.spectral.test_acc, 100 * cmp.implicit_euler.test_acc, 100 * diff)};
}

// 9. Fixed-t sweep on the h = 0.1 graph.
Outcome criterion_fixed_t_sweep() {
    std::vector<double> ts;
    for (int i = 0; i <= 20; ++i) ts.push_back(0.1 * i);
    int positive = 0;
    std::vector<double> at_zero, gcn, best_t;
    for (std::uint64_t s = 0; s < 3; ++s) {
        const Graph g = karimi(2000, 0.1, s);
        TrainConfig c = default_config(s);
        c.residual = false;
        const PreparedGraph pg = prepare_graph(g, c);
        const auto pts = sweep_fixed_t(pg, c, ts);
        // Ties go to the smallest t.
        std::size_t best = 0;
        for (std::size_t i = 1; i < pts.size(); ++i) {
            if (pts[i].test_acc > pts[best].test_acc) best = i;
        }
        best_t.push_back(pts[best].t);
        if (pts[best].t > 0.0) ++positive;
        at_zero.push_back(pts[0].test_acc);
        TrainConfig gc = c;
        gc.mode = ModelMode::Gcn;
        gcn.push_back(fit(pg, gc).report.test_acc);
    }
    const double gap = std::abs(mean(at_zero) - mean(gcn));
    const bool pass = positive >= 2 && gap <= 0.02;
    return {pass, fmt("best t per seed [%.1f %.1f %.1f] (%d/3 positive, need 2); t=0 %.2f %s vs GCN %.2f %s "
                      "(|diff| %.2f, limit 2)",
                      best_t[0], best_t[1], best_t[2], positive, 100 * mean(at_zero), pct_list(at_zero).c_str(),
                      100 * mean(gcn), pct_list(gcn).c_str(), 100 * gap)};
}

// 10. Blocks bypassed against full TIDE_S on the h = 0.3 graph.
Outcome criterion_residual_ablation() {
    std::vector<double> full, bypass;
    for (std::uint64_t s = 0; s < 3; ++s) {
        const Graph g = karimi(2000, 0.3, s);
        TrainConfig c = default_config(s);
        full.push_back(fit(g, c).test_acc);
        c.diffusion = false;
        bypass.push_back(fit(g, c).test_acc);
    }
    const double gap = mean(full) - mean(bypass);
    return {gap >= 0.05, fmt("TIDE_S %.2f %s vs without diffusion %.2f %s: gap %+.2f (need >= +5)", 100 * mean(full),
                             pct_list(full).c_str(), 100 * mean(bypass), pct_list(bypass).c_str(), 100 * gap)};
}

// 11. Phase timings on n = 20000.
Outcome criterion_bench() {
    const PhaseTimings t = bench_phases(karimi(20000, 0.5, 0), default_config(0), 3);
    const bool pass = t.pre >= 5.0 * t.train_per_epoch && t.infer < t.train_per_epoch && t.infer >= 0.0;
    return {pass, fmt("pre %.3f s, train %.4f s/epoch (pre/train = %.0fx, need >= 5), infer %.4f s (need < train)", t.pre,
                      t.train_per_epoch, t.pre / t.train_per_epoch, t.infer)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"GCN equivalence", criterion_gcn_equivalence},
        {"gradient suite", criterion_gradients},
        {"spectral correctness", criterion_spectral},
        {"truncation bound", criterion_truncation},
        {"homophily curve", criterion_homophily_curve},
        {"long-range zero-feature protocol", criterion_long_range},
        {"oversmoothing ablation", criterion_oversmoothing},
        {"implicit-Euler backend", criterion_implicit_euler},
        {"fixed-t sweep", criterion_fixed_t_sweep},
        {"residual ablation", criterion_residual_ablation},
        {"benchmark phases", criterion_bench},
    };
    std::vector<int> selected;
    for (int i = 1; i < argc; ++i) {
        const int k = std::atoi(argv[i]);
        if (k < 1 || k > static_cast<int>(criteria.size())) {
            std::cerr << "unknown criterion '" << argv[i] << "'\n";
            return 2;
        }
        selected.push_back(k);
    }
    if (selected.empty()) {
        for (int k = 1; k <= static_cast<int>(criteria.size()); ++k) selected.push_back(k);
    }
    int failed = 0;
    for (int k : selected) {
        const auto& [name, run] = criteria[static_cast<std::size_t>(k - 1)];
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << "CRITERION " << k << " " << (o.pass ? "PASS" : "FAIL") << " [" << name << "] ("
                  << fmt("%.1f", secs) << " s): " << o.detail << std::endl;
        if (!o.pass) ++failed;
    }
    return failed == 0 ? 0 : 1;
}
