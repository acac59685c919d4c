#include "tide/backend_compare.hpp"

#include <stdexcept>

namespace tide {

namespace {

BackendResult run_backend(const Graph& g, TrainConfig cfg, DiffusionBackend backend) {
    cfg.backend = backend;
    const FitResult r = fit(prepare_graph(g, cfg), cfg);
    return {backend, r.report.test_acc, r.report.best_val_acc, r.report.timings.train_per_epoch,
            static_cast<int>(r.report.epochs.size()) - 1};
}

}  // namespace

BackendComparison compare_diffusion_backends(const Graph& g, const TrainConfig& cfg) {
    if (cfg.mode == ModelMode::Gcn) throw std::invalid_argument("backend comparison needs a diffusion mode");
    return {run_backend(g, cfg, DiffusionBackend::Spectral), run_backend(g, cfg, DiffusionBackend::ImplicitEuler)};
}

}  // namespace tide
