#include "tide/graph.hpp"
#include "tide/graph_io.hpp"
#include "tide/nn.hpp"
#include "tide/spectral.hpp"
#include "tide/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tide;

namespace {

std::string num(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::string hex(std::uint64_t v) {
    std::ostringstream s;
    s << std::hex << v;
    return s.str();
}

// Files are staged in memory and only land on disk together; a failed
// commit removes whatever it already renamed into place.
class Outputs {
public:
    explicit Outputs(fs::path dir) : dir_(std::move(dir)) {}

    void add(const std::string& name, std::string content) { files_.emplace_back(name, std::move(content)); }
    void add_json(const std::string& name, const json& j) { add(name, j.dump(2) + "\n"); }

    void commit() const {
        fs::create_directories(dir_);
        std::vector<fs::path> done;
        try {
            for (const auto& [name, content] : files_) {
                const fs::path target = dir_ / name;
                const fs::path tmp = dir_ / (name + ".partial");
                {
                    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
                    if (!out) throw std::runtime_error("cannot write " + tmp.string());
                    out << content;
                    out.flush();
                    if (!out) {
                        out.close();
                        fs::remove(tmp);
                        throw std::runtime_error("write failed for " + tmp.string());
                    }
                }
                fs::rename(tmp, target);
                done.push_back(target);
            }
        } catch (...) {
            for (const auto& p : done) fs::remove(p);
            throw;
        }
        for (const auto& [name, content] : files_) std::cout << "wrote " << (dir_ / name).string() << "\n";
    }

private:
    fs::path dir_;
    std::vector<std::pair<std::string, std::string>> files_;
};

// A dataset directory written to a sibling staging directory, then renamed.
void commit_dataset(const Graph& g, const fs::path& out) {
    const fs::path staging = out.parent_path() / (out.filename().string() + ".partial");
    fs::remove_all(staging);
    try {
        save_graph_dir(g, staging);
        fs::remove_all(out);
        fs::rename(staging, out);
    } catch (...) {
        fs::remove_all(staging);
        throw;
    }
}

// TrainConfig flags. Each bound option writes into `cli`; only flags the
// user actually gave are copied over the config file values.
struct ConfigFlags {
    TrainConfig cli;
    std::string mode = to_string(TrainConfig{}.mode);
    std::string exponent = to_string(TrainConfig{}.exponent);
    std::string backend = to_string(TrainConfig{}.backend);
    std::string activation = to_string(TrainConfig{}.activation);
    bool no_residual = false;
    bool gcn_residual = false;
    double fixed_time = 0.0;
    std::string config_path;
    std::string basis_cache;
    std::vector<std::pair<CLI::Option*, std::function<void(TrainConfig&)>>> bound;

    template <class T>
    void bind(CLI::App& app, const std::string& name, T& field, T TrainConfig::*member, const std::string& help) {
        CLI::Option* o = app.add_option(name, field, help)->capture_default_str();
        bound.emplace_back(o, [this, member](TrainConfig& c) { c.*member = cli.*member; });
    }

    void attach(CLI::App& app) {
        bind(app, "--lr", cli.lr, &TrainConfig::lr, "Adam learning rate");
        bind(app, "--epochs", cli.max_epochs, &TrainConfig::max_epochs, "maximum training epochs");
        bind(app, "--hidden", cli.hidden_dim, &TrainConfig::hidden_dim, "hidden channels");
        bind(app, "--blocks", cli.num_blocks, &TrainConfig::num_blocks, "diffusion blocks");
        bind(app, "--dropout", cli.dropout, &TrainConfig::dropout, "dropout probability");
        bind(app, "--weight-decay", cli.weight_decay, &TrainConfig::weight_decay, "decoupled weight decay on W");
        bind(app, "--patience", cli.patience, &TrainConfig::patience, "early-stop patience in epochs");
        bind(app, "--seed", cli.seed, &TrainConfig::seed, "training seed");
        bind(app, "--eigens", cli.eigens, &TrainConfig::eigens, "eigenpairs kept (capped at n)");
        bind(app, "--dense-threshold", cli.dense_threshold, &TrainConfig::dense_threshold,
             "dense eigensolver at or below this many nodes per component");
        auto text = [&](const std::string& name, std::string& field, std::function<void(TrainConfig&)> apply,
                        const std::string& help) {
            CLI::Option* o = app.add_option(name, field, help)->capture_default_str();
            bound.emplace_back(o, std::move(apply));
        };
        text("--mode", mode, [this](TrainConfig& c) { c.mode = parse_model_mode(mode); },
             "tide-s|tide-m|gcn|heat-only");
        text("--exponent-operator", exponent, [this](TrainConfig& c) { c.exponent = parse_exponent_kind(exponent); },
             "psd-laplacian|normalized-adjacency");
        text("--diffusion-backend", backend, [this](TrainConfig& c) { c.backend = parse_backend(backend); },
             "spectral|implicit-euler");
        text("--activation", activation, [this](TrainConfig& c) { c.activation = parse_activation(activation); },
             "relu|tanh|identity");
        CLI::Option* nr = app.add_flag("--no-residual", no_residual, "drop residual connections in TIDE blocks");
        bound.emplace_back(nr, [](TrainConfig& c) { c.residual = false; });
        CLI::Option* gr = app.add_flag("--gcn-residual", gcn_residual, "residual connections for the GCN mode");
        bound.emplace_back(gr, [](TrainConfig& c) { c.gcn_residual = true; });
        CLI::Option* ft = app.add_option("--fixed-t", fixed_time, "freeze the diffusion time");
        bound.emplace_back(ft, [this](TrainConfig& c) { c.fixed_time = fixed_time; });
        CLI::Option* cg = app.add_option("--cg-tolerance", cli.cg.tolerance, "CG relative residual")->capture_default_str();
        bound.emplace_back(cg, [this](TrainConfig& c) { c.cg.tolerance = cli.cg.tolerance; });
        app.add_option("--config", config_path, "JSON config file; flags override it")->check(CLI::ExistingFile);
        app.add_option("--basis-cache", basis_cache, "spectral basis cache file");
    }

    TrainConfig resolve() const {
        TrainConfig c;
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            c = config_from_json(json::parse(in));
        }
        for (const auto& [opt, apply] : bound) {
            if (opt->count() > 0) apply(c);
        }
        c.validate();
        return c;
    }

    // --basis-cache wins; otherwise TIDE_CACHE_DIR/<graph hash>-<l>.basis.
    PrepareOptions prepare_options(const Graph& g, const TrainConfig& c) const {
        PrepareOptions o;
        if (!basis_cache.empty()) {
            o.basis_cache = basis_cache;
        } else if (const char* dir = std::getenv("TIDE_CACHE_DIR"); dir && *dir) {
            fs::create_directories(dir);
            const Index l = std::min(c.eigens, g.num_nodes());
            o.basis_cache = fs::path(dir) / (hex(graph_content_hash(g)) + "-" + std::to_string(l) + ".basis");
        }
        return o;
    }
};

struct GeneratorFlags {
    HomophilyGraphParams p;

    void attach(CLI::App& app, bool with_h) {
        app.add_option("--n", p.num_nodes, "nodes")->capture_default_str();
        if (with_h) app.add_option("--h", p.homophily, "homophily parameter in [0, 1]")->capture_default_str();
        app.add_option("--classes", p.num_classes, "classes")->capture_default_str();
        app.add_option("--mean-degree", p.mean_degree, "mean degree")->capture_default_str();
        app.add_option("--noise-variance", p.noise_variance, "feature noise variance")->capture_default_str();
        app.add_option("--graph-seed", p.seed, "generator seed")->capture_default_str();
    }
};

std::vector<double> parse_doubles(const std::string& text) {
    std::vector<double> out;
    std::stringstream s(text);
    std::string item;
    while (std::getline(s, item, ',')) {
        std::size_t used = 0;
        out.push_back(std::stod(item, &used));
        if (used != item.size()) throw std::invalid_argument("bad number '" + item + "'");
    }
    if (out.empty()) throw std::invalid_argument("empty list");
    return out;
}

std::vector<std::string> split(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream s(text);
    std::string item;
    while (std::getline(s, item, ',')) out.push_back(item);
    return out;
}

std::string grid_text(double lo, double hi, double step) {
    std::string out;
    for (int i = 0; lo + i * step <= hi + 1e-9; ++i) out += (i ? "," : "") + num(std::round((lo + i * step) * 1e9) / 1e9);
    return out;
}

json distance_json(const DistanceStats& s) {
    return {{"mean", s.mean}, {"max", s.max}, {"unreachable", s.unreachable}, {"counted", s.counted}};
}

json graph_summary(const Graph& g) {
    Index comps = 0;
    connected_components(g, &comps);
    json j = {{"nodes", g.num_nodes()}, {"edges", g.num_edges()}, {"feature_dim", g.feature_dim()},
              {"components", comps}, {"graph_hash", hex(graph_content_hash(g))}};
    if (!g.labels().empty()) {
        j["classes"] = g.num_classes();
        j["edge_homophily"] = edge_homophily(g);
    }
    if (g.has_masks()) {
        j["train"] = mask_count(g.masks().train);
        j["val"] = mask_count(g.masks().val);
        j["test"] = mask_count(g.masks().test);
    }
    return j;
}

Graph resplit(const Graph& g, double train_fraction, std::uint64_t seed) {
    const double val = (1.0 - train_fraction) / 2.0;
    return g.with_masks(random_split(g.num_nodes(), train_fraction, val, seed));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TIDE: graph networks with learnable heat diffusion"};
    app.require_subcommand(1);
    app.set_help_flag("--help", "print this help message and exit");
    app.set_help_all_flag("--help-all", "help for every command");

    std::string out_dir = ".";
    std::string dataset;

    // generate
    auto* gen = app.add_subcommand("generate", "write a synthetic or mesh dataset directory");
    std::string kind = "homophily";
    GeneratorFlags gen_flags;
    Index rows = 20, cols = 20, hks_times = 5, hks_eigens = 128;
    std::string mesh_path;
    gen->add_option("--kind", kind, "homophily|grid-mesh|mesh-file")
        ->check(CLI::IsMember({"homophily", "grid-mesh", "mesh-file"}))
        ->capture_default_str();
    gen_flags.attach(*gen, true);
    gen->add_option("--seed", gen_flags.p.seed, "generator seed")->capture_default_str();
    gen->add_option("--rows", rows, "grid rows")->capture_default_str();
    gen->add_option("--cols", cols, "grid columns")->capture_default_str();
    gen->add_option("--mesh", mesh_path, "OFF file for --kind mesh-file")->check(CLI::ExistingFile);
    gen->add_option("--hks-times", hks_times, "heat kernel signature columns for meshes")->capture_default_str();
    gen->add_option("--hks-eigens", hks_eigens, "eigenpairs for the HKS")->capture_default_str();
    gen->add_option("--out", out_dir, "dataset directory")->required();

    // train
    auto* train = app.add_subcommand("train", "train one model; writes report.json, curves.csv, model.json");
    ConfigFlags train_flags;
    train->add_option("--dataset", dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);
    train_flags.attach(*train);
    train->add_option("--out", out_dir, "output directory")->capture_default_str();

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint; writes eval.json");
    std::string checkpoint;
    ConfigFlags eval_flags;
    ev->add_option("--checkpoint", checkpoint, "model.json from train")->required()->check(CLI::ExistingFile);
    ev->add_option("--dataset", dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);
    ev->add_option("--basis-cache", eval_flags.basis_cache, "spectral basis cache file");
    ev->add_option("--out", out_dir, "output directory")->capture_default_str();

    // sweep-t
    auto* sweep = app.add_subcommand("sweep-t", "train with the diffusion time frozen at each value");
    ConfigFlags sweep_flags;
    std::string t_values = grid_text(0.0, 2.0, 0.1);
    sweep->add_option("--dataset", dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);
    sweep->add_option("--t-values", t_values, "comma separated times")->capture_default_str();
    sweep_flags.attach(*sweep);
    sweep->add_option("--out", out_dir, "output directory")->capture_default_str();

    // ablate-blocks
    auto* ablate = app.add_subcommand("ablate-blocks", "accuracy against the number of blocks");
    ConfigFlags ablate_flags;
    std::string depths = "2,4,8,16", ablate_modes = "tide-m,gcn";
    ablate->add_option("--dataset", dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);
    ablate->add_option("--depths", depths, "comma separated block counts")->capture_default_str();
    ablate->add_option("--models", ablate_modes, "comma separated modes")->capture_default_str();
    ablate_flags.attach(*ablate);
    ablate->add_option("--out", out_dir, "output directory")->capture_default_str();

    // long-range
    auto* lr = app.add_subcommand("long-range", "zero unlabeled features, record labeled distances, train");
    ConfigFlags lr_flags;
    double train_fraction = 0.05;
    bool keep_split = false;
    lr->add_option("--dataset", dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);
    lr->add_option("--train-fraction", train_fraction, "labeled fraction; the rest is split evenly into val/test")
        ->capture_default_str();
    lr->add_flag("--keep-split", keep_split, "use the dataset masks as given");
    lr_flags.attach(*lr);
    lr->add_option("--out", out_dir, "output directory")->capture_default_str();

    // homophily-curve
    auto* curve = app.add_subcommand("homophily-curve", "test accuracy against the homophily parameter");
    ConfigFlags curve_flags;
    GeneratorFlags curve_gen;
    std::string h_values = grid_text(0.0, 0.9, 0.1), curve_modes = "tide-s,tide-m,gcn,heat-only";
    int seeds = 5;
    curve->add_option("--h-values", h_values, "comma separated homophily values")->capture_default_str();
    curve->add_option("--models", curve_modes, "comma separated modes")->capture_default_str();
    curve->add_option("--seeds", seeds, "graphs and training runs per point")->capture_default_str()->check(CLI::PositiveNumber);
    curve_gen.attach(*curve, false);
    curve_flags.attach(*curve);
    curve->add_option("--out", out_dir, "output directory")->capture_default_str();

    // bench
    auto* bench = app.add_subcommand("bench", "time the pre, per-epoch train and infer phases");
    ConfigFlags bench_flags;
    GeneratorFlags bench_gen;
    bench_gen.p.num_nodes = 20000;
    int repeats = 5;
    bench->add_option("--dataset", dataset, "dataset directory; a synthetic graph otherwise")
        ->check(CLI::ExistingDirectory);
    bench_gen.attach(*bench, true);
    bench->add_option("--repeats", repeats, "timed repetitions per phase")->capture_default_str()->check(CLI::PositiveNumber);
    bench_flags.attach(*bench);
    bench->add_option("--out", out_dir, "output directory")->capture_default_str();

    // stats
    auto* stats = app.add_subcommand("stats", "graph summary and labeled-distance statistics");
    std::string stats_out;
    stats->add_option("--dataset", dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);
    stats->add_option("--out", stats_out, "also write stats.json here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            Graph g;
            if (kind == "homophily") {
                g = generate_homophily_graph(gen_flags.p);
            } else {
                if (kind == "mesh-file" && mesh_path.empty()) throw std::invalid_argument("--kind mesh-file needs --mesh");
                g = kind == "grid-mesh" ? generate_grid_mesh_graph(rows, cols) : load_mesh_as_graph(mesh_path);
                EigenOptions eo;
                eo.seed = graph_content_hash(g);
                const SpectralBasis b =
                    compute_spectral_basis(build_psd_laplacian(g), std::min(hks_eigens, g.num_nodes()), eo);
                g = g.with_features(hks_features(b, hks_times));
                if (!g.labels().empty() && !g.has_masks()) {
                    g = g.with_masks(random_split(g.num_nodes(), 1.0 / 3, 1.0 / 3, gen_flags.p.seed));
                }
            }
            commit_dataset(g, out_dir);
            std::cout << graph_summary(g).dump(2) << "\n";
            return 0;
        }
        if (*stats) {
            const Graph g = load_graph_dir(dataset);
            json j = graph_summary(g);
            if (g.has_masks()) j["labeled_distance"] = distance_json(labeled_distance_stats(g));
            std::cout << j.dump(2) << "\n";
            if (!stats_out.empty()) {
                Outputs o(stats_out);
                o.add_json("stats.json", j);
                o.commit();
            }
            return 0;
        }
        if (*ev) {
            std::ifstream in(checkpoint);
            const json ck = json::parse(in);
            const TrainConfig cfg = config_from_json(ck.at("config"));
            const TideModel model = model_from_json(ck.at("model"));
            const Graph g = load_graph_dir(dataset);
            const PreparedGraph pg = prepare_graph(g, cfg, eval_flags.prepare_options(g, cfg));
            const Evaluation e = evaluate(model, pg);
            json j = {{"config", config_to_json(cfg)},
                      {"train_acc", e.train_acc},
                      {"val_acc", e.val_acc},
                      {"test_acc", e.test_acc},
                      {"val_loss", e.val_loss}};
            if (ck.contains("test_acc")) j["checkpoint_test_acc"] = ck.at("test_acc");
            std::cout << "test_acc " << num(e.test_acc) << "\n";
            Outputs o(out_dir);
            o.add_json("eval.json", j);
            o.commit();
            return 0;
        }
        if (*train) {
            const TrainConfig cfg = train_flags.resolve();
            const Graph g = load_graph_dir(dataset);
            const PreparedGraph pg = prepare_graph(g, cfg, train_flags.prepare_options(g, cfg));
            const FitResult fr = fit(pg, cfg);
            std::cout << "best_epoch " << fr.report.best_epoch << " val_acc " << num(fr.report.best_val_acc)
                      << " test_acc " << num(fr.report.test_acc) << "\n";
            Outputs o(out_dir);
            o.add_json("report.json", fr.report.to_json());
            o.add("curves.csv", fr.report.curves_csv());
            o.add_json("model.json", {{"config", config_to_json(cfg)},
                                      {"test_acc", fr.report.test_acc},
                                      {"model", model_to_json(fr.model)}});
            o.commit();
            return 0;
        }
        if (*sweep) {
            const TrainConfig cfg = sweep_flags.resolve();
            const std::vector<double> ts = parse_doubles(t_values);
            const Graph g = load_graph_dir(dataset);
            const PreparedGraph pg = prepare_graph(g, cfg, sweep_flags.prepare_options(g, cfg));
            const auto points = sweep_fixed_t(pg, cfg, ts);
            std::string csv = "t,val_acc,test_acc\n";
            json rows = json::array();
            for (const auto& p : points) {
                csv += num(p.t) + "," + num(p.val_acc) + "," + num(p.test_acc) + "\n";
                rows.push_back({{"t", p.t}, {"val_acc", p.val_acc}, {"test_acc", p.test_acc}});
            }
            std::cout << csv;
            Outputs o(out_dir);
            o.add_json("report.json", {{"config", config_to_json(cfg)}, {"points", rows}});
            o.add("sweep.csv", csv);
            o.commit();
            return 0;
        }
        if (*ablate) {
            const TrainConfig cfg = ablate_flags.resolve();
            std::vector<Index> ds;
            for (double d : parse_doubles(depths)) ds.push_back(static_cast<Index>(d));
            std::vector<ModelMode> ms;
            for (const auto& m : split(ablate_modes)) ms.push_back(parse_model_mode(m));
            const Graph g = load_graph_dir(dataset);
            TrainConfig prep_cfg = cfg;
            for (ModelMode m : ms) {
                prep_cfg.mode = m;
                if (needs_basis(prep_cfg)) break;
            }
            PrepareOptions po = ablate_flags.prepare_options(g, prep_cfg);
            po.with_basis = needs_basis(prep_cfg);
            const PreparedGraph pg = prepare_graph(g, prep_cfg, po);
            const auto points = block_ablation(pg, cfg, ds, ms);
            std::string csv = "blocks,model,val_acc,test_acc\n";
            json rows = json::array();
            for (const auto& p : points) {
                csv += std::to_string(p.blocks) + "," + to_string(p.mode) + "," + num(p.val_acc) + "," +
                       num(p.test_acc) + "\n";
                rows.push_back({{"blocks", p.blocks}, {"model", to_string(p.mode)}, {"val_acc", p.val_acc},
                                {"test_acc", p.test_acc}});
            }
            std::cout << csv;
            Outputs o(out_dir);
            o.add_json("report.json", {{"config", config_to_json(cfg)}, {"points", rows}});
            o.add("ablation.csv", csv);
            o.commit();
            return 0;
        }
        if (*lr) {
            const TrainConfig cfg = lr_flags.resolve();
            Graph g = load_graph_dir(dataset);
            if (!keep_split) g = resplit(g, train_fraction, cfg.seed);
            const LongRangeResult res = run_long_range_protocol(g, cfg);
            std::cout << "mean_labeled_distance " << num(res.stats.mean) << " test_acc " << num(res.report.test_acc)
                      << "\n";
            Outputs o(out_dir);
            o.add_json("report.json", res.report.to_json());
            o.add("curves.csv", res.report.curves_csv());
            o.commit();
            return 0;
        }
        if (*curve) {
            const TrainConfig cfg = curve_flags.resolve();
            const std::vector<double> hs = parse_doubles(h_values);
            std::vector<ModelMode> ms;
            for (const auto& m : split(curve_modes)) ms.push_back(parse_model_mode(m));
            const auto rows = homophily_curve(curve_gen.p, hs, ms, cfg, seeds);
            const std::string csv = curve_csv(rows);
            std::cout << csv;
            json jr = json::array();
            for (const auto& r : rows) {
                jr.push_back({{"h", r.homophily}, {"model", to_string(r.mode)}, {"mean_acc", r.mean_acc},
                              {"std_acc", r.std_acc}, {"per_seed", r.per_seed}});
            }
            json gen_json = {{"n", curve_gen.p.num_nodes}, {"classes", curve_gen.p.num_classes},
                             {"mean_degree", curve_gen.p.mean_degree},
                             {"noise_variance", curve_gen.p.noise_variance}, {"graph_seed", curve_gen.p.seed}};
            Outputs o(out_dir);
            o.add_json("report.json", {{"config", config_to_json(cfg)}, {"generator", gen_json}, {"seeds", seeds},
                                       {"rows", jr}});
            o.add("curve.csv", csv);
            o.commit();
            return 0;
        }
        if (*bench) {
            const TrainConfig cfg = bench_flags.resolve();
            const Graph g = dataset.empty() ? generate_homophily_graph(bench_gen.p) : load_graph_dir(dataset);
            const PhaseTimings t = bench_phases(g, cfg, repeats);
            const json timings = {{"pre", t.pre}, {"train_per_epoch", t.train_per_epoch}, {"infer", t.infer}};
            std::cout << timings.dump() << "\n";
            Outputs o(out_dir);
            o.add_json("report.json", {{"config", config_to_json(cfg)},
                                       {"graph", graph_summary(g)},
                                       {"repeats", repeats},
                                       {"timings", timings}});
            o.commit();
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
