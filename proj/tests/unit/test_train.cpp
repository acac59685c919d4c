#include "support.hpp"

#include "tide/backend_compare.hpp"
#include "tide/train.hpp"

#include <doctest.h>

using namespace tide;

namespace {

Graph small_graph(std::uint64_t seed, double h = 0.8, Index n = 150) {
    HomophilyGraphParams p;
    p.num_nodes = n;
    p.homophily = h;
    p.seed = seed;
    return generate_homophily_graph(p);
}

TrainConfig quick_config() {
    TrainConfig c;
    c.max_epochs = 30;
    c.hidden_dim = 8;
    c.eigens = 32;
    return c;
}

Parameters scalar_params(double x) {
    Parameters p;
    p.w_in = Matrix::Constant(1, 1, x);
    p.b_in = Vector::Zero(0);
    p.w_out = Matrix::Zero(0, 0);
    p.b_out = Vector::Zero(0);
    return p;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.lr = -1;
    CHECK_THROWS(c.validate());
    c = {};
    c.dropout = 1.0;
    CHECK_THROWS(c.validate());
    c = {};
    c.num_blocks = 0;
    CHECK_THROWS(c.validate());
    c = {};
    c.mode = ModelMode::Gcn;
    c.fixed_time = 0.5;
    CHECK_THROWS(c.validate());
}

TEST_CASE("config JSON round trip") {
    TrainConfig c;
    c.lr = 0.003;
    c.mode = ModelMode::HeatOnly;
    c.exponent = ExponentKind::NormalizedAdjacency;
    c.fixed_time = 1.25;
    c.residual = false;
    c.gcn_residual = true;
    c.seed = 42;
    const TrainConfig back = config_from_json(nlohmann::json::parse(config_to_json(c).dump()));
    CHECK(config_to_json(back) == config_to_json(c));
    CHECK(config_from_json(nlohmann::json::object()).lr == 0.01);
}

TEST_CASE("GCN mode takes its own residual setting") {
    TrainConfig c;
    CHECK(c.architecture(3, 2).residual);
    c.mode = ModelMode::Gcn;
    CHECK_FALSE(c.architecture(3, 2).residual);
    c.gcn_residual = true;
    c.residual = false;
    CHECK(c.architecture(3, 2).residual);
}

TEST_CASE("Adam: zero gradients from zero state leave parameters unchanged") {
    Parameters p = scalar_params(1.5);
    AdamState st = AdamState::zeros_like(p);
    adam_step(p, p.zeros_like(), st, {});
    CHECK(p.w_in(0, 0) == 1.5);
}

TEST_CASE("Adam: first step with unit gradient moves by lr") {
    Parameters p = scalar_params(0.0);
    AdamState st = AdamState::zeros_like(p);
    Gradients g = p.zeros_like();
    g.w_in(0, 0) = 1.0;
    adam_step(p, g, st, {0.01, 0.9, 0.999, 1e-8, 0.0});
    CHECK(p.w_in(0, 0) == doctest::Approx(-0.01).epsilon(1e-7));
}

TEST_CASE("Adam: quadratic trajectory matches a scalar recomputation") {
    Parameters p = scalar_params(2.0);
    AdamState st = AdamState::zeros_like(p);
    const AdamOptions o{0.1, 0.9, 0.999, 1e-8, 0.0};
    double x = 2.0, m = 0.0, v = 0.0;
    for (int k = 1; k <= 10; ++k) {
        Gradients g = p.zeros_like();
        g.w_in(0, 0) = 2.0 * p.w_in(0, 0);
        adam_step(p, g, st, o);
        const double gr = 2.0 * x;
        m = 0.9 * m + 0.1 * gr;
        v = 0.999 * v + 0.001 * gr * gr;
        const double mh = m / (1 - std::pow(0.9, k));
        const double vh = v / (1 - std::pow(0.999, k));
        x -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
        CHECK(p.w_in(0, 0) == doctest::Approx(x).epsilon(1e-14));
    }
}

TEST_CASE("Adam: weight decay touches weight matrices only") {
    Parameters p;
    p.w_in = Matrix::Constant(1, 1, 1.0);
    p.b_in = Vector::Constant(1, 1.0);
    p.blocks.push_back({Matrix::Constant(1, 1, 1.0), Vector::Constant(1, 1.0), 1.0, 1.0});
    p.w_out = Matrix::Constant(1, 1, 1.0);
    p.b_out = Vector::Constant(1, 1.0);
    AdamState st = AdamState::zeros_like(p);
    adam_step(p, p.zeros_like(), st, {0.1, 0.9, 0.999, 1e-8, 0.5});
    CHECK(p.w_in(0, 0) == doctest::Approx(0.95));
    CHECK(p.blocks[0].w(0, 0) == doctest::Approx(0.95));
    CHECK(p.w_out(0, 0) == doctest::Approx(0.95));
    CHECK(p.b_in[0] == 1.0);
    CHECK(p.b_out[0] == 1.0);
    CHECK(p.blocks[0].t_raw[0] == 1.0);
    CHECK(p.blocks[0].alpha == 1.0);
    CHECK(p.blocks[0].beta == 1.0);
}

TEST_CASE("Adam: non-finite gradient aborts without touching parameters") {
    Parameters p = scalar_params(1.0);
    AdamState st = AdamState::zeros_like(p);
    Gradients g = p.zeros_like();
    g.w_in(0, 0) = std::nan("");
    CHECK_THROWS_AS(adam_step(p, g, st, {}), NonFiniteError);
    CHECK(p.w_in(0, 0) == 1.0);
    CHECK(st.step == 0);
}

TEST_CASE("fit with zero epochs reports only the untrained model") {
    TrainConfig c = quick_config();
    c.max_epochs = 0;
    const RunReport r = fit(small_graph(1), c);
    CHECK(r.epochs.size() == 1);
    CHECK(r.best_epoch == 0);
    CHECK(r.time_trajectory.size() == 1);
    CHECK(r.timings.train_per_epoch == 0.0);
}

TEST_CASE("fit is deterministic for a fixed seed") {
    TrainConfig c = quick_config();
    c.mode = ModelMode::TideM;
    const Graph g = small_graph(2);
    const RunReport a = fit(g, c);
    const RunReport b = fit(g, c);
    CHECK(a.to_json(false) == b.to_json(false));
    CHECK(a.curves_csv() == b.curves_csv());
}

TEST_CASE("lr = 0 never changes the model") {
    TrainConfig c = quick_config();
    c.lr = 0.0;
    c.weight_decay = 0.0;
    const RunReport r = fit(small_graph(3), c);
    for (const auto& e : r.epochs) CHECK(e.val_acc == r.epochs[0].val_acc);
    for (const auto& t : r.time_trajectory) CHECK(t == r.time_trajectory[0]);
}

TEST_CASE("best-validation selection and trajectories") {
    TrainConfig c = quick_config();
    c.max_epochs = 60;
    c.patience = 10;
    c.mode = ModelMode::TideM;
    const PreparedGraph pg = prepare_graph(small_graph(4), c);
    const FitResult fr = fit(pg, c);
    const RunReport& r = fr.report;
    for (const auto& e : r.epochs) CHECK(e.val_acc <= r.best_val_acc);
    CHECK(r.epochs[r.best_epoch].val_acc == r.best_val_acc);
    CHECK(static_cast<int>(r.epochs.size()) - 1 <= r.best_epoch + c.patience);
    const Evaluation ev = evaluate(fr.model, pg);
    CHECK(ev.val_acc == r.best_val_acc);
    CHECK(ev.test_acc == r.test_acc);
    CHECK(r.time_trajectory.size() == r.epochs.size());
    for (const auto& epoch : r.time_trajectory) {
        CHECK(epoch.size() == 2);
        for (const auto& block : epoch) {
            CHECK(block.size() == 8);
            for (double t : block) CHECK(std::isfinite(t));
        }
    }
    const auto j = r.to_json();
    CHECK(j.contains("timings"));
    CHECK(j["config"]["mode"] == "tide-m");
    CHECK(r.curves_csv().rfind("epoch,train_loss,train_acc,val_loss,val_acc,mean_t\n", 0) == 0);
}

TEST_CASE("fit rejects graphs without masks or basis") {
    TrainConfig c = quick_config();
    const Graph g = small_graph(5);
    CHECK_THROWS(fit(Graph::from_edges(3, {}), c));
    PrepareOptions po;
    po.with_basis = false;
    CHECK_THROWS(fit(prepare_graph(g, c, po), c));
}

TEST_CASE("without diffusion the blocks are bypassed") {
    TrainConfig c = quick_config();
    c.diffusion = false;
    const PreparedGraph pg = prepare_graph(small_graph(6), c);
    CHECK(pg.ops.basis.size() == 0);
    const FitResult fr = fit(pg, c);
    CHECK(fr.report.num_blocks == 0);
    CHECK(fr.model.params.blocks.empty());
}

TEST_CASE("TIDE_S learns a homophilous graph") {
    double sum = 0.0;
    for (std::uint64_t s = 0; s < 3; ++s) {
        TrainConfig c;
        c.seed = s;
        sum += fit(small_graph(20 + s, 0.9, 1000), c).test_acc;
    }
    CHECK(sum / 3 >= 0.85);
}

TEST_CASE("protocol helpers") {
    TrainConfig c = quick_config();
    const Graph g = small_graph(7);
    const PreparedGraph pg = prepare_graph(g, c);
    const double zero = 0.0;
    const auto sweep = sweep_fixed_t(pg, c, std::span(&zero, 1));
    CHECK(sweep.size() == 1);
    CHECK(sweep[0].t == 0.0);
    const Index one = 1;
    const ModelMode mode = ModelMode::TideS;
    CHECK(block_ablation(pg, c, std::span(&one, 1), std::span(&mode, 1)).size() == 1);
    TrainConfig gc = c;
    gc.mode = ModelMode::Gcn;
    CHECK_THROWS(sweep_fixed_t(pg, gc, std::span(&zero, 1)));
}

TEST_CASE("long-range protocol") {
    TrainConfig c = quick_config();
    const Graph g = small_graph(8);
    const auto masks = random_split(g.num_nodes(), 0.1, 0.45, 1);
    const LongRangeResult lr = run_long_range_protocol(g.with_masks(masks), c);
    const auto want = oracle::brute_labeled_distance(zero_unlabeled_features(g.with_masks(masks)));
    CHECK(lr.stats.mean == doctest::Approx(want.mean));
    REQUIRE(lr.report.distance_stats.has_value());
    CHECK(lr.report.to_json().contains("distance_stats"));

    // Everything labeled: zeroing is a no-op, so the run equals a plain fit.
    const Index n = g.num_nodes();
    const Graph labeled = g.with_masks({Mask(n, true), Mask(n, false), Mask(n, false)});
    CHECK(zero_unlabeled_features(labeled).features() == labeled.features());
    auto plain = fit(labeled, c).to_json(false);
    auto zeroed = run_long_range_protocol(labeled, c).report.to_json(false);
    zeroed.erase("distance_stats");
    CHECK(plain == zeroed);
}

TEST_CASE("bench timings are nonnegative") {
    TrainConfig c = quick_config();
    const PhaseTimings t = bench_phases(small_graph(9), c, 1);
    CHECK(t.pre >= 0.0);
    CHECK(t.train_per_epoch >= 0.0);
    CHECK(t.infer >= 0.0);
    CHECK_THROWS(bench_phases(small_graph(9), c, 0));
}

TEST_CASE("homophily curve row layout") {
    TrainConfig c = quick_config();
    c.max_epochs = 5;
    HomophilyGraphParams base;
    base.num_nodes = 90;
    const double h = 0.5;
    const ModelMode modes[] = {ModelMode::TideS, ModelMode::TideM, ModelMode::Gcn, ModelMode::HeatOnly};
    const auto rows = homophily_curve(base, std::span(&h, 1), modes, c, 2);
    CHECK(rows.size() == 4);
    for (const auto& r : rows) CHECK(r.per_seed.size() == 2);
    const std::string csv = curve_csv(rows);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("backend comparison runs both backends") {
    TrainConfig c = quick_config();
    c.max_epochs = 10;
    const auto cmp = compare_diffusion_backends(small_graph(10), c);
    CHECK(cmp.spectral.backend == DiffusionBackend::Spectral);
    CHECK(cmp.implicit_euler.backend == DiffusionBackend::ImplicitEuler);
    CHECK(cmp.spectral.epochs > 0);
    CHECK(cmp.implicit_euler.seconds_per_epoch > 0.0);
}

}  // TEST_SUITE
