#pragma once

#include "tide/euler.hpp"
#include "tide/graph.hpp"
#include "tide/linalg.hpp"
#include "tide/rng.hpp"
#include "tide/spectral.hpp"

#include <json.hpp>

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tide {

enum class ModelMode { TideS, TideM, HeatOnly, Gcn };
enum class Activation { Relu, Tanh, Identity };
enum class DiffusionBackend { Spectral, ImplicitEuler };

std::string to_string(ModelMode mode);
std::string to_string(Activation act);
std::string to_string(DiffusionBackend backend);
ModelMode parse_model_mode(const std::string& name);
Activation parse_activation(const std::string& name);
DiffusionBackend parse_backend(const std::string& name);

double softplus(double x);
double softplus_inverse(double y);
double sigmoid(double x);

struct BlockParams {
    Matrix w;      // D x D
    Vector t_raw;  // 1 (shared time) or D (per channel); empty in GCN mode
    double alpha = 1.0;
    double beta = 1.0;
};

struct Parameters {
    Matrix w_in;  // F_in x D
    Vector b_in;
    std::vector<BlockParams> blocks;
    Matrix w_out;  // D x C
    Vector b_out;

    Parameters zeros_like() const;
};

using Gradients = Parameters;

enum class ParamGroup { InputWeight, InputBias, BlockWeight, Time, Alpha, Beta, OutputWeight, OutputBias };

// Visits every parameter tensor as a flat span. Weight matrices are the only
// tensors subject to weight decay.
template <class P, class F>
void for_each_parameter(P& p, F&& visit) {
    auto flat = [](auto& m) { return std::span(m.data(), static_cast<std::size_t>(m.size())); };
    visit(ParamGroup::InputWeight, -1, flat(p.w_in));
    visit(ParamGroup::InputBias, -1, flat(p.b_in));
    for (int k = 0; k < static_cast<int>(p.blocks.size()); ++k) {
        auto& b = p.blocks[k];
        visit(ParamGroup::BlockWeight, k, flat(b.w));
        visit(ParamGroup::Time, k, flat(b.t_raw));
        visit(ParamGroup::Alpha, k, std::span(&b.alpha, 1));
        visit(ParamGroup::Beta, k, std::span(&b.beta, 1));
    }
    visit(ParamGroup::OutputWeight, -1, flat(p.w_out));
    visit(ParamGroup::OutputBias, -1, flat(p.b_out));
}

inline bool is_decayed(ParamGroup g) {
    return g == ParamGroup::InputWeight || g == ParamGroup::BlockWeight ||
           g == ParamGroup::OutputWeight;
}

std::string to_string(ParamGroup g);

struct Architecture {
    Index input_dim = 0;
    Index hidden_dim = 64;
    Index num_classes = 2;
    Index num_blocks = 2;
    ModelMode mode = ModelMode::TideS;
    Activation activation = Activation::Relu;
    bool residual = true;
    double dropout = 0.5;
    DiffusionBackend backend = DiffusionBackend::Spectral;
    // When set, every block uses this time directly; t_raw is ignored and
    // receives no gradient.
    std::optional<double> fixed_time;
    double initial_time = 0.01;
};

struct TideModel {
    Architecture arch;
    Parameters params;

    // Glorot-uniform weights, zero biases, alpha = beta = 1 and
    // t = initial_time through the softplus reparameterization.
    static TideModel initialize(const Architecture& arch, Rng& rng);

    // Effective diffusion times of block k (one per entry of t_raw).
    std::vector<double> block_times(Index k) const;
    bool uses_time() const;
};

// Everything the layers need from the graph; immutable and shareable.
struct GraphOperators {
    NormalizedOperator msg;    // L~
    NormalizedOperator delta;  // I - L~
    SpectralBasis basis;       // exponent operator eigenpairs
    CgConfig cg;
};

struct BlockCache {
    std::vector<double> times;
    Matrix input;       // X_k
    Matrix coeffs;      // Phi^T X_k (spectral) / unused
    Matrix decay;       // exp(-t lambda), l x channels-with-distinct-times
    Matrix diffused;    // H~_t(X_k) or (I + t Delta)^{-1} X_k
    Matrix propagated;  // operator output fed to W
    Matrix pre;         // propagated * W
    Matrix keep;        // inverted dropout scale, empty when dropout is off
};

struct ForwardCache {
    bool training = false;
    Matrix features;   // U
    Matrix input_pre;  // U w_in + b_in
    Matrix x0;
    std::vector<BlockCache> blocks;
    Matrix last;       // X_K
};

struct ForwardResult {
    Matrix logits;
    ForwardCache cache;
};

class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// X0 = act(U w_in + b_in); X_{k+1} = dropout(act(T(X_k) W_k)) [+ X_k];
// logits = X_K w_out + b_out. rng is required when training with dropout.
ForwardResult forward(const TideModel& model, const Matrix& features, const GraphOperators& ops,
                      bool training, Rng* rng = nullptr);

// Reverse pass matching a forward cache.
Gradients backward(const TideModel& model, const GraphOperators& ops, const ForwardCache& cache,
                   const Matrix& dlogits);

struct LossResult {
    double loss = 0.0;
    Matrix dlogits;
};

// Mean softmax cross-entropy over the masked nodes.
LossResult cross_entropy_masked(const Matrix& logits, const std::vector<int>& labels,
                                const Mask& mask);

double masked_accuracy(const Matrix& logits, const std::vector<int>& labels, const Mask& mask);

// Checkpoints keep every tensor flattened row-major alongside its shape.
nlohmann::json model_to_json(const TideModel& model);
TideModel model_from_json(const nlohmann::json& j);

}  // namespace tide
