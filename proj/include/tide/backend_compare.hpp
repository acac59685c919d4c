#pragma once

#include "tide/graph.hpp"
#include "tide/train.hpp"

namespace tide {

struct BackendResult {
    DiffusionBackend backend = DiffusionBackend::Spectral;
    double test_acc = 0.0;
    double val_acc = 0.0;
    double seconds_per_epoch = 0.0;
    int epochs = 0;
};

struct BackendComparison {
    BackendResult spectral;
    BackendResult implicit_euler;
};

// Trains the same architecture once with the spectral operator and once with
// the implicit-Euler solve.
BackendComparison compare_diffusion_backends(const Graph& g, const TrainConfig& cfg);

}  // namespace tide
