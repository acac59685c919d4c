#include "tide/nn.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace tide {

std::string to_string(ModelMode mode) {
    switch (mode) {
        case ModelMode::TideS: return "tide-s";
        case ModelMode::TideM: return "tide-m";
        case ModelMode::HeatOnly: return "heat-only";
        case ModelMode::Gcn: return "gcn";
    }
    return "?";
}

std::string to_string(Activation act) {
    switch (act) {
        case Activation::Relu: return "relu";
        case Activation::Tanh: return "tanh";
        case Activation::Identity: return "identity";
    }
    return "?";
}

std::string to_string(DiffusionBackend backend) {
    return backend == DiffusionBackend::Spectral ? "spectral" : "implicit-euler";
}

std::string to_string(ParamGroup g) {
    switch (g) {
        case ParamGroup::InputWeight: return "w_in";
        case ParamGroup::InputBias: return "b_in";
        case ParamGroup::BlockWeight: return "w";
        case ParamGroup::Time: return "t_raw";
        case ParamGroup::Alpha: return "alpha";
        case ParamGroup::Beta: return "beta";
        case ParamGroup::OutputWeight: return "w_out";
        case ParamGroup::OutputBias: return "b_out";
    }
    return "?";
}

ModelMode parse_model_mode(const std::string& name) {
    if (name == "tide-s" || name == "tide_s") return ModelMode::TideS;
    if (name == "tide-m" || name == "tide_m") return ModelMode::TideM;
    if (name == "heat-only" || name == "heat_only") return ModelMode::HeatOnly;
    if (name == "gcn") return ModelMode::Gcn;
    throw std::invalid_argument("unknown model mode '" + name + "'");
}

Activation parse_activation(const std::string& name) {
    if (name == "relu") return Activation::Relu;
    if (name == "tanh") return Activation::Tanh;
    if (name == "identity") return Activation::Identity;
    throw std::invalid_argument("unknown activation '" + name + "'");
}

DiffusionBackend parse_backend(const std::string& name) {
    if (name == "spectral") return DiffusionBackend::Spectral;
    if (name == "implicit-euler" || name == "implicit_euler") return DiffusionBackend::ImplicitEuler;
    throw std::invalid_argument("unknown diffusion backend '" + name + "'");
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double softplus_inverse(double y) {
    if (!(y > 0.0)) throw std::invalid_argument("softplus inverse needs y > 0");
    return y > 30.0 ? y : std::log(std::expm1(y));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Parameters Parameters::zeros_like() const {
    Parameters z;
    z.w_in = Matrix::Zero(w_in.rows(), w_in.cols());
    z.b_in = Vector::Zero(b_in.size());
    for (const auto& b : blocks) {
        z.blocks.push_back({Matrix::Zero(b.w.rows(), b.w.cols()), Vector::Zero(b.t_raw.size()), 0.0, 0.0});
    }
    z.w_out = Matrix::Zero(w_out.rows(), w_out.cols());
    z.b_out = Vector::Zero(b_out.size());
    return z;
}

namespace {

Index time_count(const Architecture& arch) {
    switch (arch.mode) {
        case ModelMode::TideS: return 1;
        case ModelMode::TideM:
        case ModelMode::HeatOnly: return arch.hidden_dim;
        case ModelMode::Gcn: return 0;
    }
    return 0;
}

Matrix glorot(Index rows, Index cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix m(rows, cols);
    for (Index k = 0; k < m.size(); ++k) m.data()[k] = dist(rng);
    return m;
}

void activate(Activation act, const Matrix& in, Matrix& out) {
    switch (act) {
        case Activation::Relu: out = in.cwiseMax(0.0); break;
        case Activation::Tanh: out = in.array().tanh().matrix(); break;
        case Activation::Identity: out = in; break;
    }
}

// grad *= act'(pre), in place.
void activation_backward(Activation act, const Matrix& pre, Matrix& grad) {
    switch (act) {
        case Activation::Relu: grad = (pre.array() > 0.0).select(grad, 0.0); break;
        case Activation::Tanh: grad.array() *= 1.0 - pre.array().tanh().square(); break;
        case Activation::Identity: break;
    }
}

bool uses_spectrum(const Architecture& arch) {
    return arch.num_blocks > 0 && arch.mode != ModelMode::Gcn && arch.backend == DiffusionBackend::Spectral;
}

// decay(i, j) = exp(-times[j] * lambda_i)
Matrix decay_matrix(const SpectralBasis& basis, const std::vector<double>& times) {
    Matrix d(basis.size(), static_cast<Index>(times.size()));
    for (Index j = 0; j < d.cols(); ++j) {
        for (Index i = 0; i < d.rows(); ++i) d(i, j) = std::exp(-times[j] * basis.lambda[i]);
    }
    return d;
}

inline Index time_slot(Index channel, std::size_t count) { return count == 1 ? 0 : channel; }

}  // namespace

TideModel TideModel::initialize(const Architecture& arch, Rng& rng) {
    if (arch.input_dim < 1 || arch.hidden_dim < 1 || arch.num_classes < 1 || arch.num_blocks < 0) {
        throw std::invalid_argument("invalid model dimensions");
    }
    if (!(arch.initial_time > 0.0)) throw std::invalid_argument("initial time must be positive");
    TideModel m;
    m.arch = arch;
    const Index d = arch.hidden_dim;
    m.params.w_in = glorot(arch.input_dim, d, rng);
    m.params.b_in = Vector::Zero(d);
    const double t0 = softplus_inverse(arch.initial_time);
    for (Index k = 0; k < arch.num_blocks; ++k) {
        BlockParams b;
        b.w = glorot(d, d, rng);
        b.t_raw = Vector::Constant(time_count(arch), t0);
        m.params.blocks.push_back(std::move(b));
    }
    m.params.w_out = glorot(d, arch.num_classes, rng);
    m.params.b_out = Vector::Zero(arch.num_classes);
    return m;
}

bool TideModel::uses_time() const { return arch.mode != ModelMode::Gcn && !arch.fixed_time.has_value(); }

std::vector<double> TideModel::block_times(Index k) const {
    if (arch.mode == ModelMode::Gcn) return {};
    if (arch.fixed_time) return {*arch.fixed_time};
    const Vector& raw = params.blocks.at(static_cast<std::size_t>(k)).t_raw;
    std::vector<double> t(static_cast<std::size_t>(raw.size()));
    for (Index i = 0; i < raw.size(); ++i) t[i] = softplus(raw[i]);
    return t;
}

ForwardResult forward(const TideModel& model, const Matrix& features, const GraphOperators& ops, bool training,
                      Rng* rng) {
    const Architecture& arch = model.arch;
    const Parameters& p = model.params;
    const Index n = ops.msg.size();
    if (features.rows() != n || features.cols() != arch.input_dim) {
        throw std::invalid_argument("feature matrix is " + std::to_string(features.rows()) + " x " +
                                    std::to_string(features.cols()) + ", model expects " + std::to_string(n) +
                                    " x " + std::to_string(arch.input_dim));
    }
    if (static_cast<Index>(p.blocks.size()) != arch.num_blocks) throw std::invalid_argument("block count mismatch");
    if (uses_spectrum(arch) && ops.basis.num_nodes() != n) {
        throw std::invalid_argument("spectral basis missing or sized for a different graph");
    }
    const bool drop = training && arch.dropout > 0.0;
    if (drop && rng == nullptr) throw std::invalid_argument("dropout needs a random stream");

    ForwardResult res;
    ForwardCache& cache = res.cache;
    cache.training = training;
    cache.features = features;
    cache.input_pre = features * p.w_in;
    cache.input_pre.rowwise() += p.b_in.transpose();
    activate(arch.activation, cache.input_pre, cache.x0);

    Matrix x = cache.x0;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double keep_scale = drop ? 1.0 / (1.0 - arch.dropout) : 1.0;
    cache.blocks.resize(static_cast<std::size_t>(arch.num_blocks));
    for (Index k = 0; k < arch.num_blocks; ++k) {
        const BlockParams& bp = p.blocks[k];
        BlockCache& bc = cache.blocks[k];
        bc.times = model.block_times(k);
        bc.input = x;
        if (arch.mode == ModelMode::Gcn) {
            bc.propagated = spmv(ops.msg, x);
        } else {
            if (arch.backend == DiffusionBackend::Spectral) {
                bc.coeffs = ops.basis.phi.transpose() * x;
                bc.decay = decay_matrix(ops.basis, bc.times);
                Matrix scaled = bc.coeffs;
                for (Index c = 0; c < scaled.cols(); ++c) {
                    scaled.col(c).array() *= bc.decay.col(time_slot(c, bc.times.size())).array() - bp.alpha;
                }
                bc.diffused = ops.basis.phi * scaled;
                bc.diffused += bp.beta * x;
            } else {
                bc.diffused = implicit_euler_solve(ops.delta, bc.times, x, ops.cg);
            }
            bc.propagated = arch.mode == ModelMode::HeatOnly ? bc.diffused : spmv(ops.msg, bc.diffused);
        }
        bc.pre = bc.propagated * bp.w;
        Matrix out;
        activate(arch.activation, bc.pre, out);
        if (drop) {
            bc.keep.resize(out.rows(), out.cols());
            for (Index i = 0; i < bc.keep.size(); ++i) {
                bc.keep.data()[i] = unit(*rng) < arch.dropout ? 0.0 : keep_scale;
            }
            out.array() *= bc.keep.array();
        }
        if (arch.residual) out += x;
        if (!out.allFinite()) throw NonFiniteError("non-finite activation in block " + std::to_string(k));
        x = std::move(out);
    }
    res.logits = x * p.w_out;
    res.logits.rowwise() += p.b_out.transpose();
    if (!res.logits.allFinite()) throw NonFiniteError("non-finite logits");
    cache.last = std::move(x);
    return res;
}

Gradients backward(const TideModel& model, const GraphOperators& ops, const ForwardCache& cache,
                   const Matrix& dlogits) {
    const Architecture& arch = model.arch;
    const Parameters& p = model.params;
    if (static_cast<Index>(cache.blocks.size()) != arch.num_blocks || cache.last.cols() != arch.hidden_dim ||
        dlogits.rows() != cache.last.rows() || dlogits.cols() != arch.num_classes) {
        throw std::invalid_argument("forward cache does not match the model");
    }
    Gradients g = p.zeros_like();
    g.w_out = cache.last.transpose() * dlogits;
    g.b_out = dlogits.colwise().sum().transpose();
    Matrix dx = dlogits * p.w_out.transpose();

    for (Index k = arch.num_blocks - 1; k >= 0; --k) {
        const BlockParams& bp = p.blocks[k];
        const BlockCache& bc = cache.blocks[k];
        BlockParams& gb = g.blocks[k];

        Matrix dpre = dx;
        if (bc.keep.size() != 0) dpre.array() *= bc.keep.array();
        activation_backward(arch.activation, bc.pre, dpre);
        gb.w = bc.propagated.transpose() * dpre;
        const Matrix dprop = dpre * bp.w.transpose();

        Matrix dinput = arch.residual ? dx : Matrix::Zero(dx.rows(), dx.cols());
        if (arch.mode == ModelMode::Gcn) {
            dinput += spmv(ops.msg, dprop);
        } else {
            const Matrix ddiff = arch.mode == ModelMode::HeatOnly ? dprop : spmv(ops.msg, dprop);
            std::vector<double> dt(bc.times.size(), 0.0);
            if (arch.backend == DiffusionBackend::Spectral) {
                gb.beta = (ddiff.array() * bc.input.array()).sum();
                dinput += bp.beta * ddiff;
                const Matrix q = ops.basis.phi.transpose() * ddiff;
                gb.alpha = -(q.array() * bc.coeffs.array()).sum();
                Matrix dcoeffs = q;
                for (Index c = 0; c < q.cols(); ++c) {
                    const Index s = time_slot(c, bc.times.size());
                    dcoeffs.col(c).array() *= bc.decay.col(s).array() - bp.alpha;
                    dt[s] -= (q.col(c).array() * bc.coeffs.col(c).array() * ops.basis.lambda.array() *
                              bc.decay.col(s).array())
                                 .sum();
                }
                dinput += ops.basis.phi * dcoeffs;
            } else {
                // y = (I + t Delta)^{-1} x: dx = (I + t Delta)^{-1} dy, dt = -dx^T Delta y.
                const Matrix adj = implicit_euler_solve(ops.delta, bc.times, ddiff, ops.cg);
                dinput += adj;
                const Matrix dy = spmv(ops.delta, bc.diffused);
                for (Index c = 0; c < adj.cols(); ++c) {
                    dt[time_slot(c, bc.times.size())] -= adj.col(c).dot(dy.col(c));
                }
            }
            if (model.uses_time()) {
                for (Index s = 0; s < bp.t_raw.size(); ++s) gb.t_raw[s] = dt[s] * sigmoid(bp.t_raw[s]);
            }
        }
        dx = std::move(dinput);
    }

    Matrix din = dx;
    activation_backward(arch.activation, cache.input_pre, din);
    g.w_in = cache.features.transpose() * din;
    g.b_in = din.colwise().sum().transpose();
    return g;
}

LossResult cross_entropy_masked(const Matrix& logits, const std::vector<int>& labels, const Mask& mask) {
    const Index n = logits.rows();
    if (static_cast<Index>(labels.size()) != n || static_cast<Index>(mask.size()) != n) {
        throw std::invalid_argument("labels or mask do not match logits");
    }
    LossResult res;
    res.dlogits = Matrix::Zero(n, logits.cols());
    const std::size_t count = mask_count(mask);
    if (count == 0) return res;
    const double inv = 1.0 / static_cast<double>(count);
    CompensatedSum total;
    for (Index v = 0; v < n; ++v) {
        if (!mask[v]) continue;
        const int y = labels[v];
        if (y < 0 || y >= logits.cols()) throw std::invalid_argument("masked node " + std::to_string(v) + " has no valid label");
        const double mx = logits.row(v).maxCoeff();
        const Eigen::RowVectorXd e = (logits.row(v).array() - mx).exp().matrix();
        const double z = e.sum();
        total.add(std::log(z) + mx - logits(v, y));
        res.dlogits.row(v) = e * (inv / z);
        res.dlogits(v, y) -= inv;
    }
    res.loss = total.value() * inv;
    return res;
}

double masked_accuracy(const Matrix& logits, const std::vector<int>& labels, const Mask& mask) {
    std::size_t hit = 0, count = 0;
    for (Index v = 0; v < logits.rows(); ++v) {
        if (!mask[v]) continue;
        ++count;
        Index arg = 0;
        logits.row(v).maxCoeff(&arg);
        hit += (arg == labels[v]);
    }
    return count == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(count);
}

namespace {

nlohmann::json tensor_json(const Matrix& m) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Index r = 0; r < m.rows(); ++r)
        for (Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    return {{"shape", {m.rows(), m.cols()}}, {"data", data}};
}

nlohmann::json vector_json(const Vector& v) {
    return {{"shape", {v.size()}}, {"data", std::vector<double>(v.data(), v.data() + v.size())}};
}

Matrix tensor_from(const nlohmann::json& j) {
    const auto shape = j.at("shape").get<std::vector<Index>>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (shape.size() != 2 || static_cast<Index>(data.size()) != shape[0] * shape[1]) {
        throw std::runtime_error("checkpoint tensor has inconsistent shape");
    }
    Matrix m(shape[0], shape[1]);
    for (Index r = 0; r < m.rows(); ++r)
        for (Index c = 0; c < m.cols(); ++c) m(r, c) = data[r * m.cols() + c];
    return m;
}

Vector vector_from(const nlohmann::json& j) {
    const auto shape = j.at("shape").get<std::vector<Index>>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (shape.size() != 1 || static_cast<Index>(data.size()) != shape[0]) {
        throw std::runtime_error("checkpoint vector has inconsistent shape");
    }
    return Eigen::Map<const Vector>(data.data(), shape[0]);
}

}  // namespace

nlohmann::json model_to_json(const TideModel& model) {
    const Architecture& a = model.arch;
    nlohmann::json arch = {{"input_dim", a.input_dim},     {"hidden_dim", a.hidden_dim},
                           {"num_classes", a.num_classes}, {"num_blocks", a.num_blocks},
                           {"mode", to_string(a.mode)},    {"activation", to_string(a.activation)},
                           {"residual", a.residual},       {"dropout", a.dropout},
                           {"backend", to_string(a.backend)}, {"initial_time", a.initial_time}};
    arch["fixed_time"] = a.fixed_time ? nlohmann::json(*a.fixed_time) : nlohmann::json(nullptr);
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : model.params.blocks) {
        blocks.push_back({{"w", tensor_json(b.w)}, {"t_raw", vector_json(b.t_raw)}, {"alpha", b.alpha}, {"beta", b.beta}});
    }
    return {{"format", "tide-checkpoint-1"},
            {"architecture", arch},
            {"w_in", tensor_json(model.params.w_in)},
            {"b_in", vector_json(model.params.b_in)},
            {"blocks", blocks},
            {"w_out", tensor_json(model.params.w_out)},
            {"b_out", vector_json(model.params.b_out)}};
}

TideModel model_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "tide-checkpoint-1") throw std::runtime_error("not a TIDE checkpoint");
    const auto& a = j.at("architecture");
    TideModel m;
    m.arch.input_dim = a.at("input_dim").get<Index>();
    m.arch.hidden_dim = a.at("hidden_dim").get<Index>();
    m.arch.num_classes = a.at("num_classes").get<Index>();
    m.arch.num_blocks = a.at("num_blocks").get<Index>();
    m.arch.mode = parse_model_mode(a.at("mode").get<std::string>());
    m.arch.activation = parse_activation(a.at("activation").get<std::string>());
    m.arch.residual = a.at("residual").get<bool>();
    m.arch.dropout = a.at("dropout").get<double>();
    m.arch.backend = parse_backend(a.at("backend").get<std::string>());
    m.arch.initial_time = a.at("initial_time").get<double>();
    if (!a.at("fixed_time").is_null()) m.arch.fixed_time = a.at("fixed_time").get<double>();
    m.params.w_in = tensor_from(j.at("w_in"));
    m.params.b_in = vector_from(j.at("b_in"));
    for (const auto& b : j.at("blocks")) {
        m.params.blocks.push_back({tensor_from(b.at("w")), vector_from(b.at("t_raw")), b.at("alpha").get<double>(),
                                   b.at("beta").get<double>()});
    }
    m.params.w_out = tensor_from(j.at("w_out"));
    m.params.b_out = vector_from(j.at("b_out"));
    const Index d = m.arch.hidden_dim;
    bool ok = static_cast<Index>(m.params.blocks.size()) == m.arch.num_blocks && m.params.w_in.rows() == m.arch.input_dim &&
              m.params.w_in.cols() == d && m.params.b_in.size() == d && m.params.w_out.rows() == d &&
              m.params.w_out.cols() == m.arch.num_classes && m.params.b_out.size() == m.arch.num_classes;
    for (const auto& b : m.params.blocks) ok = ok && b.w.rows() == d && b.w.cols() == d;
    if (!ok) throw std::runtime_error("checkpoint tensors do not match its architecture");
    return m;
}

}  // namespace tide
