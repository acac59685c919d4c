#pragma once

#include "tide/graph.hpp"
#include "tide/nn.hpp"
#include "tide/spectral.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tide {

struct TrainConfig {
    double lr = 0.01;
    int max_epochs = 500;
    Index hidden_dim = 64;
    Index num_blocks = 2;
    double dropout = 0.5;
    double weight_decay = 5e-4;
    int patience = 100;
    std::uint64_t seed = 0;
    ModelMode mode = ModelMode::TideS;
    ExponentKind exponent = ExponentKind::PsdLaplacian;
    Index eigens = 128;  // l, capped at n
    bool residual = true;
    // Residual setting used when mode is GCN; off is the standard GCN baseline.
    bool gcn_residual = false;
    // false bypasses every block: input layer straight into output layer.
    bool diffusion = true;
    Activation activation = Activation::Relu;
    DiffusionBackend backend = DiffusionBackend::Spectral;
    std::optional<double> fixed_time;
    Index dense_threshold = 2000;
    CgConfig cg;

    void validate() const;
    Architecture architecture(Index input_dim, Index num_classes) const;
};

nlohmann::json config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const nlohmann::json& j);

struct AdamOptions {
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled, weight matrices only
};

struct AdamState {
    Parameters m;
    Parameters v;
    long step = 0;

    static AdamState zeros_like(const Parameters& p);
};

// One bias-corrected Adam update. Throws NonFiniteError on a non-finite
// gradient entry, leaving params untouched.
void adam_step(Parameters& params, const Gradients& grads, AdamState& state,
               const AdamOptions& opts);

struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
};

struct PhaseTimings {
    double pre = 0.0;
    double train_per_epoch = 0.0;
    double infer = 0.0;
};

struct RunReport {
    TrainConfig config;
    Index num_blocks = 0;
    std::vector<EpochMetrics> epochs;  // epoch 0 is the untrained model
    int best_epoch = 0;
    double best_val_acc = 0.0;
    double test_acc = 0.0;
    // Effective diffusion time per recorded epoch, block and channel.
    std::vector<std::vector<std::vector<double>>> time_trajectory;
    PhaseTimings timings;
    std::optional<DistanceStats> distance_stats;

    nlohmann::json to_json(bool include_timings = true) const;
    std::string curves_csv() const;
};

// A graph with its operators and (when needed) its spectral basis.
struct PreparedGraph {
    Graph graph;
    GraphOperators ops;
    double pre_seconds = 0.0;
};

struct PrepareOptions {
    std::optional<std::filesystem::path> basis_cache;
    // Overrides whether the spectral basis is computed; by default only when
    // cfg needs it.
    std::optional<bool> with_basis;
};

bool needs_basis(const TrainConfig& cfg);

PreparedGraph prepare_graph(const Graph& g, const TrainConfig& cfg,
                            const PrepareOptions& opts = {});

struct FitResult {
    RunReport report;
    TideModel model;  // parameters restored from the best validation epoch
};

// Adam training with best-validation selection and patience early stop.
FitResult fit(const PreparedGraph& pg, const TrainConfig& cfg);
RunReport fit(const Graph& g, const TrainConfig& cfg);

struct Evaluation {
    double train_acc = 0.0;
    double val_acc = 0.0;
    double test_acc = 0.0;
    double val_loss = 0.0;
};

Evaluation evaluate(const TideModel& model, const PreparedGraph& pg);

struct SweepPoint {
    double t = 0.0;
    double val_acc = 0.0;
    double test_acc = 0.0;
};

// One model per t with the diffusion time frozen at t.
std::vector<SweepPoint> sweep_fixed_t(const PreparedGraph& pg, const TrainConfig& cfg,
                                      std::span<const double> t_values);

struct DepthPoint {
    Index blocks = 0;
    ModelMode mode = ModelMode::TideS;
    double val_acc = 0.0;
    double test_acc = 0.0;
};

std::vector<DepthPoint> block_ablation(const PreparedGraph& pg, const TrainConfig& cfg,
                                       std::span<const Index> depths,
                                       std::span<const ModelMode> modes);

struct LongRangeResult {
    RunReport report;
    DistanceStats stats;
};

// Zeroes features outside the train mask, records labeled-distance
// statistics and trains on the result.
LongRangeResult run_long_range_protocol(const Graph& g, const TrainConfig& cfg);

// pre: operator build + eigendecomposition; train: median epoch
// (forward, backward, Adam step); infer: median dropout-free forward.
PhaseTimings bench_phases(const Graph& g, const TrainConfig& cfg, int repeats);

struct CurveRow {
    double homophily = 0.0;
    ModelMode mode = ModelMode::TideS;
    double mean_acc = 0.0;
    double std_acc = 0.0;
    std::vector<double> per_seed;
};

// Test accuracy against the homophily parameter: one generated graph per
// (h, seed), shared by every model at that point.
std::vector<CurveRow> homophily_curve(const HomophilyGraphParams& base,
                                      std::span<const double> h_values,
                                      std::span<const ModelMode> modes, const TrainConfig& cfg,
                                      int num_seeds);

std::string curve_csv(std::span<const CurveRow> rows);

}  // namespace tide
