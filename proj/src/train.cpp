#include "tide/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace tide {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t mid = v.size() / 2;
    return v.size() % 2 == 1 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

std::vector<std::span<double>> flatten(Parameters& p) {
    std::vector<std::span<double>> out;
    for_each_parameter(p, [&](ParamGroup, int, std::span<double> s) { out.push_back(s); });
    return out;
}

std::vector<std::vector<double>> all_block_times(const TideModel& m) {
    std::vector<std::vector<double>> out;
    for (Index k = 0; k < m.arch.num_blocks; ++k) out.push_back(m.block_times(k));
    return out;
}

}  // namespace

void TrainConfig::validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be a finite value >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
    if (num_blocks < 1) throw std::invalid_argument("num_blocks must be >= 1");
    if (hidden_dim < 1) throw std::invalid_argument("hidden_dim must be >= 1");
    if (max_epochs < 0) throw std::invalid_argument("max_epochs must be >= 0");
    if (patience < 1) throw std::invalid_argument("patience must be >= 1");
    if (eigens < 1) throw std::invalid_argument("eigens must be >= 1");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
    if (fixed_time && !(*fixed_time >= 0.0 && std::isfinite(*fixed_time))) {
        throw std::invalid_argument("fixed time must be finite and >= 0");
    }
    if (fixed_time && mode == ModelMode::Gcn) throw std::invalid_argument("gcn mode has no diffusion time");
    if (!(cg.tolerance > 0.0)) throw std::invalid_argument("CG tolerance must be positive");
}

Architecture TrainConfig::architecture(Index input_dim, Index num_classes) const {
    Architecture a;
    a.input_dim = input_dim;
    a.hidden_dim = hidden_dim;
    a.num_classes = num_classes;
    a.num_blocks = diffusion ? num_blocks : 0;
    a.mode = mode;
    a.activation = activation;
    a.residual = mode == ModelMode::Gcn ? gcn_residual : residual;
    a.dropout = dropout;
    a.backend = backend;
    a.fixed_time = fixed_time;
    return a;
}

nlohmann::json config_to_json(const TrainConfig& c) {
    nlohmann::json j = {{"lr", c.lr},
                        {"max_epochs", c.max_epochs},
                        {"hidden_dim", c.hidden_dim},
                        {"num_blocks", c.num_blocks},
                        {"dropout", c.dropout},
                        {"weight_decay", c.weight_decay},
                        {"patience", c.patience},
                        {"seed", c.seed},
                        {"mode", to_string(c.mode)},
                        {"exponent_operator", to_string(c.exponent)},
                        {"eigens", c.eigens},
                        {"residual", c.residual},
                        {"gcn_residual", c.gcn_residual},
                        {"diffusion", c.diffusion},
                        {"activation", to_string(c.activation)},
                        {"diffusion_backend", to_string(c.backend)},
                        {"dense_threshold", c.dense_threshold},
                        {"cg_tolerance", c.cg.tolerance},
                        {"cg_max_iterations", c.cg.max_iterations}};
    j["fixed_time"] = c.fixed_time ? nlohmann::json(*c.fixed_time) : nlohmann::json(nullptr);
    return j;
}

TrainConfig config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key) && !j.at(key).is_null()) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("lr", c.lr);
    get("max_epochs", c.max_epochs);
    get("hidden_dim", c.hidden_dim);
    get("num_blocks", c.num_blocks);
    get("dropout", c.dropout);
    get("weight_decay", c.weight_decay);
    get("patience", c.patience);
    get("seed", c.seed);
    get("eigens", c.eigens);
    get("residual", c.residual);
    get("gcn_residual", c.gcn_residual);
    get("diffusion", c.diffusion);
    get("dense_threshold", c.dense_threshold);
    get("cg_tolerance", c.cg.tolerance);
    get("cg_max_iterations", c.cg.max_iterations);
    if (j.contains("mode")) c.mode = parse_model_mode(j.at("mode").get<std::string>());
    if (j.contains("exponent_operator")) c.exponent = parse_exponent_kind(j.at("exponent_operator").get<std::string>());
    if (j.contains("activation")) c.activation = parse_activation(j.at("activation").get<std::string>());
    if (j.contains("diffusion_backend")) c.backend = parse_backend(j.at("diffusion_backend").get<std::string>());
    if (j.contains("fixed_time") && !j.at("fixed_time").is_null()) c.fixed_time = j.at("fixed_time").get<double>();
    return c;
}

AdamState AdamState::zeros_like(const Parameters& p) { return {p.zeros_like(), p.zeros_like(), 0}; }

void adam_step(Parameters& params, const Gradients& grads, AdamState& state, const AdamOptions& opts) {
    Gradients g = grads;
    std::vector<ParamGroup> groups;
    std::vector<int> block_of;
    for_each_parameter(params, [&](ParamGroup grp, int k, std::span<double>) {
        groups.push_back(grp);
        block_of.push_back(k);
    });
    auto ps = flatten(params);
    auto gs = flatten(g);
    auto ms = flatten(state.m);
    auto vs = flatten(state.v);
    if (ps.size() != gs.size() || ps.size() != ms.size() || ps.size() != vs.size()) {
        throw std::invalid_argument("optimizer state does not match parameters");
    }
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (gs[i].size() != ps[i].size() || ms[i].size() != ps[i].size() || vs[i].size() != ps[i].size()) {
            throw std::invalid_argument("gradient shape mismatch for " + to_string(groups[i]));
        }
        for (double x : gs[i]) {
            if (!std::isfinite(x)) {
                std::string where = to_string(groups[i]);
                if (block_of[i] >= 0) where += " of block " + std::to_string(block_of[i]);
                throw NonFiniteError("non-finite gradient in " + where);
            }
        }
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(opts.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(opts.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const double decay = is_decayed(groups[i]) ? opts.weight_decay : 0.0;
        for (std::size_t j = 0; j < ps[i].size(); ++j) {
            const double gj = gs[i][j];
            double& m = ms[i][j];
            double& v = vs[i][j];
            m = opts.beta1 * m + (1.0 - opts.beta1) * gj;
            v = opts.beta2 * v + (1.0 - opts.beta2) * gj * gj;
            const double mhat = m / c1;
            const double vhat = v / c2;
            ps[i][j] -= opts.lr * (mhat / (std::sqrt(vhat) + opts.eps) + decay * ps[i][j]);
        }
    }
}

nlohmann::json RunReport::to_json(bool include_timings) const {
    nlohmann::json ep = nlohmann::json::array();
    for (const auto& e : epochs) {
        ep.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"train_acc", e.train_acc},
                      {"val_loss", e.val_loss},
                      {"val_acc", e.val_acc}});
    }
    nlohmann::json j = {{"config", config_to_json(config)},
                        {"seed", config.seed},
                        {"num_blocks", num_blocks},
                        {"best_epoch", best_epoch},
                        {"best_val_acc", best_val_acc},
                        {"test_acc", test_acc},
                        {"epochs", ep},
                        {"time_trajectory", time_trajectory}};
    if (include_timings) {
        j["timings"] = {{"pre", timings.pre}, {"train_per_epoch", timings.train_per_epoch}, {"infer", timings.infer}};
    }
    if (distance_stats) {
        j["distance_stats"] = {{"mean", distance_stats->mean},
                               {"max", distance_stats->max},
                               {"unreachable", distance_stats->unreachable},
                               {"counted", distance_stats->counted}};
    }
    return j;
}

std::string RunReport::curves_csv() const {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "epoch,train_loss,train_acc,val_loss,val_acc,mean_t\n";
    for (std::size_t i = 0; i < epochs.size(); ++i) {
        const auto& e = epochs[i];
        double sum = 0.0;
        std::size_t count = 0;
        if (i < time_trajectory.size()) {
            for (const auto& block : time_trajectory[i]) {
                for (double t : block) sum += t;
                count += block.size();
            }
        }
        out << e.epoch << ',' << e.train_loss << ',' << e.train_acc << ',' << e.val_loss << ',' << e.val_acc << ',';
        if (count > 0) out << sum / static_cast<double>(count);
        out << '\n';
    }
    return out.str();
}

bool needs_basis(const TrainConfig& cfg) {
    return cfg.diffusion && cfg.mode != ModelMode::Gcn && cfg.backend == DiffusionBackend::Spectral;
}

PreparedGraph prepare_graph(const Graph& g, const TrainConfig& cfg, const PrepareOptions& opts) {
    const auto start = Clock::now();
    PreparedGraph pg{g, {}, 0.0};
    pg.ops.msg = build_normalized_adjacency(g);
    pg.ops.delta = build_psd_laplacian(g);
    pg.ops.cg = cfg.cg;
    if (opts.with_basis.value_or(needs_basis(cfg))) {
        const Index l = std::min<Index>(cfg.eigens, g.num_nodes());
        const std::uint64_t hash = graph_content_hash(g);
        SpectralBasis basis;
        if (!opts.basis_cache || !load_basis(*opts.basis_cache, hash, l, basis)) {
            EigenOptions eo;
            eo.dense_threshold = cfg.dense_threshold;
            eo.seed = hash;
            basis = compute_spectral_basis(pg.ops.delta, l, eo);
            if (opts.basis_cache) save_basis(basis, hash, *opts.basis_cache);
        }
        pg.ops.basis = as_exponent(basis, cfg.exponent);
    }
    pg.pre_seconds = seconds_since(start);
    return pg;
}

Evaluation evaluate(const TideModel& model, const PreparedGraph& pg) {
    const Graph& g = pg.graph;
    const Matrix logits = forward(model, g.features(), pg.ops, false).logits;
    Evaluation e;
    e.train_acc = masked_accuracy(logits, g.labels(), g.masks().train);
    e.val_acc = masked_accuracy(logits, g.labels(), g.masks().val);
    e.test_acc = masked_accuracy(logits, g.labels(), g.masks().test);
    e.val_loss = cross_entropy_masked(logits, g.labels(), g.masks().val).loss;
    return e;
}

FitResult fit(const PreparedGraph& pg, const TrainConfig& cfg) {
    cfg.validate();
    const Graph& g = pg.graph;
    if (!g.has_masks()) throw std::invalid_argument("training needs train/val/test masks");
    if (mask_count(g.masks().train) == 0) throw std::invalid_argument("train mask is empty");
    if (needs_basis(cfg) && pg.ops.basis.num_nodes() != g.num_nodes()) {
        throw std::invalid_argument("prepared graph has no spectral basis for this configuration");
    }

    const SeedStreams streams(cfg.seed);
    Rng init_rng = streams.stream("init");
    Rng drop_rng = streams.stream("dropout");
    TideModel model = TideModel::initialize(cfg.architecture(g.feature_dim(), g.num_classes()), init_rng);
    AdamState state = AdamState::zeros_like(model.params);
    const AdamOptions adam{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};

    FitResult out;
    RunReport& rep = out.report;
    rep.config = cfg;
    rep.num_blocks = model.arch.num_blocks;
    rep.timings.pre = pg.pre_seconds;

    const auto& labels = g.labels();
    const auto& masks = g.masks();
    std::vector<double> epoch_seconds, infer_seconds;

    auto record = [&](int epoch, double train_loss) {
        const auto t0 = Clock::now();
        const Matrix logits = forward(model, g.features(), pg.ops, false).logits;
        infer_seconds.push_back(seconds_since(t0));
        EpochMetrics m;
        m.epoch = epoch;
        m.train_loss = train_loss;
        m.train_acc = masked_accuracy(logits, labels, masks.train);
        m.val_acc = masked_accuracy(logits, labels, masks.val);
        m.val_loss = cross_entropy_masked(logits, labels, masks.val).loss;
        rep.epochs.push_back(m);
        rep.time_trajectory.push_back(all_block_times(model));
        return std::make_pair(m, logits);
    };

    // Epoch 0: the untrained model; its training loss is the dropout-free one.
    {
        const Matrix logits = forward(model, g.features(), pg.ops, false).logits;
        record(0, cross_entropy_masked(logits, labels, masks.train).loss);
    }
    Parameters best_params = model.params;
    int best_epoch = 0;
    double best_val = rep.epochs[0].val_acc;
    double best_val_loss = rep.epochs[0].val_loss;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto t0 = Clock::now();
        ForwardResult fr = forward(model, g.features(), pg.ops, true, &drop_rng);
        const LossResult loss = cross_entropy_masked(fr.logits, labels, masks.train);
        const Gradients grads = backward(model, pg.ops, fr.cache, loss.dlogits);
        adam_step(model.params, grads, state, adam);
        epoch_seconds.push_back(seconds_since(t0));

        const auto [m, logits] = record(epoch, loss.loss);
        if (m.val_acc > best_val || (m.val_acc == best_val && m.val_loss < best_val_loss)) {
            best_val = m.val_acc;
            best_val_loss = m.val_loss;
            best_epoch = epoch;
            best_params = model.params;
        } else if (epoch - best_epoch >= cfg.patience) {
            break;
        }
    }

    model.params = std::move(best_params);
    rep.best_epoch = best_epoch;
    rep.best_val_acc = best_val;
    {
        const Matrix logits = forward(model, g.features(), pg.ops, false).logits;
        rep.test_acc = masked_accuracy(logits, labels, masks.test);
    }
    rep.timings.train_per_epoch = median(epoch_seconds);
    rep.timings.infer = median(infer_seconds);
    out.model = std::move(model);
    return out;
}

RunReport fit(const Graph& g, const TrainConfig& cfg) { return fit(prepare_graph(g, cfg), cfg).report; }

std::vector<SweepPoint> sweep_fixed_t(const PreparedGraph& pg, const TrainConfig& cfg, std::span<const double> t_values) {
    if (cfg.mode == ModelMode::Gcn) throw std::invalid_argument("fixed-t sweep needs a diffusion mode");
    std::vector<SweepPoint> out;
    for (double t : t_values) {
        TrainConfig c = cfg;
        c.fixed_time = t;
        const RunReport r = fit(pg, c).report;
        out.push_back({t, r.best_val_acc, r.test_acc});
    }
    return out;
}

std::vector<DepthPoint> block_ablation(const PreparedGraph& pg, const TrainConfig& cfg, std::span<const Index> depths,
                                       std::span<const ModelMode> modes) {
    std::vector<DepthPoint> out;
    for (ModelMode mode : modes) {
        for (Index d : depths) {
            TrainConfig c = cfg;
            c.mode = mode;
            c.num_blocks = d;
            const RunReport r = fit(pg, c).report;
            out.push_back({d, mode, r.best_val_acc, r.test_acc});
        }
    }
    return out;
}

LongRangeResult run_long_range_protocol(const Graph& g, const TrainConfig& cfg) {
    if (!g.has_masks()) throw std::invalid_argument("long-range protocol needs masks");
    const Graph zeroed = zero_unlabeled_features(g);
    const DistanceStats stats = labeled_distance_stats(zeroed);
    LongRangeResult out{fit(zeroed, cfg), stats};
    out.report.distance_stats = stats;
    return out;
}

PhaseTimings bench_phases(const Graph& g, const TrainConfig& cfg, int repeats) {
    if (repeats < 1) throw std::invalid_argument("repeats must be >= 1");
    cfg.validate();
    std::vector<double> pre, train, infer;
    PreparedGraph pg;
    for (int r = 0; r < repeats; ++r) {
        pg = prepare_graph(g, cfg);
        pre.push_back(pg.pre_seconds);
    }
    const SeedStreams streams(cfg.seed);
    Rng init_rng = streams.stream("init");
    Rng drop_rng = streams.stream("dropout");
    TideModel model = TideModel::initialize(cfg.architecture(g.feature_dim(), g.num_classes()), init_rng);
    AdamState state = AdamState::zeros_like(model.params);
    const AdamOptions adam{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};
    const auto& labels = g.labels();
    const Mask& train_mask = g.has_masks() ? g.masks().train : Mask(static_cast<std::size_t>(g.num_nodes()), true);

    auto epoch = [&] {
        ForwardResult fr = forward(model, g.features(), pg.ops, true, &drop_rng);
        const LossResult loss = cross_entropy_masked(fr.logits, labels, train_mask);
        adam_step(model.params, backward(model, pg.ops, fr.cache, loss.dlogits), state, adam);
    };
    epoch();  // warm-up
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = Clock::now();
        epoch();
        train.push_back(seconds_since(t0));
    }
    (void)forward(model, g.features(), pg.ops, false);  // warm-up
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = Clock::now();
        (void)forward(model, g.features(), pg.ops, false);
        infer.push_back(seconds_since(t0));
    }
    return {median(pre), median(train), median(infer)};
}

std::vector<CurveRow> homophily_curve(const HomophilyGraphParams& base, std::span<const double> h_values,
                                      std::span<const ModelMode> modes, const TrainConfig& cfg, int num_seeds) {
    if (num_seeds < 1) throw std::invalid_argument("num_seeds must be >= 1");
    std::vector<CurveRow> rows;
    for (double h : h_values) {
        std::vector<CurveRow> at_h;
        for (ModelMode m : modes) at_h.push_back({h, m, 0.0, 0.0, {}});
        for (int s = 0; s < num_seeds; ++s) {
            HomophilyGraphParams gp = base;
            gp.homophily = h;
            gp.seed = base.seed + static_cast<std::uint64_t>(s);
            const Graph g = generate_homophily_graph(gp);
            PrepareOptions po;
            bool any_basis = false;
            for (ModelMode m : modes) {
                TrainConfig c = cfg;
                c.mode = m;
                any_basis |= needs_basis(c);
            }
            po.with_basis = any_basis;
            const PreparedGraph pg = prepare_graph(g, cfg, po);
            for (std::size_t i = 0; i < modes.size(); ++i) {
                TrainConfig c = cfg;
                c.mode = modes[i];
                c.seed = cfg.seed + static_cast<std::uint64_t>(s);
                at_h[i].per_seed.push_back(fit(pg, c).report.test_acc);
            }
        }
        for (auto& row : at_h) {
            double sum = 0.0;
            for (double a : row.per_seed) sum += a;
            row.mean_acc = sum / static_cast<double>(row.per_seed.size());
            double sq = 0.0;
            for (double a : row.per_seed) sq += (a - row.mean_acc) * (a - row.mean_acc);
            row.std_acc = row.per_seed.size() > 1 ? std::sqrt(sq / static_cast<double>(row.per_seed.size() - 1)) : 0.0;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

std::string curve_csv(std::span<const CurveRow> rows) {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "h,model,mean_acc,std_acc,seeds\n";
    for (const auto& r : rows) {
        out << r.homophily << ',' << to_string(r.mode) << ',' << r.mean_acc << ',' << r.std_acc << ',';
        for (std::size_t i = 0; i < r.per_seed.size(); ++i) out << (i ? ";" : "") << r.per_seed[i];
        out << '\n';
    }
    return out.str();
}

}  // namespace tide
