#include "tide/spectral.hpp"

#include "tide/rng.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <tuple>

namespace tide {

std::string to_string(ExponentKind kind) {
    return kind == ExponentKind::PsdLaplacian ? "psd_laplacian" : "normalized_adjacency";
}

ExponentKind parse_exponent_kind(const std::string& name) {
    if (name == "psd_laplacian" || name == "psd-laplacian") return ExponentKind::PsdLaplacian;
    if (name == "normalized_adjacency" || name == "normalized-adjacency") return ExponentKind::NormalizedAdjacency;
    throw std::invalid_argument("unknown exponent operator '" + name + "'");
}

namespace {

// Flips each column so that its first entry of non-negligible magnitude is positive.
void fix_signs(Matrix& phi) {
    for (Index c = 0; c < phi.cols(); ++c) {
        const double cutoff = 1e-10 * phi.col(c).cwiseAbs().maxCoeff();
        for (Index r = 0; r < phi.rows(); ++r) {
            if (std::abs(phi(r, c)) > cutoff) {
                if (phi(r, c) < 0) phi.col(c) *= -1.0;
                break;
            }
        }
    }
}

struct Component {
    std::vector<Index> nodes;  // global ids, ascending
};

std::vector<Component> components_of(const CsrMatrix& a) {
    std::vector<Index> comp(static_cast<std::size_t>(a.rows), -1);
    std::vector<Component> out;
    std::vector<Index> stack;
    for (Index s = 0; s < a.rows; ++s) {
        if (comp[s] >= 0) continue;
        const auto id = static_cast<Index>(out.size());
        out.emplace_back();
        comp[s] = id;
        stack.push_back(s);
        while (!stack.empty()) {
            const Index v = stack.back();
            stack.pop_back();
            out.back().nodes.push_back(v);
            for (Index p = a.row_ptr[v]; p < a.row_ptr[v + 1]; ++p) {
                const Index u = a.col_idx[p];
                if (comp[u] < 0 && a.values[p] != 0.0) {
                    comp[u] = id;
                    stack.push_back(u);
                }
            }
        }
        std::sort(out.back().nodes.begin(), out.back().nodes.end());
    }
    return out;
}

CsrMatrix restrict_to(const CsrMatrix& a, const std::vector<Index>& nodes) {
    std::vector<Index> local(static_cast<std::size_t>(a.rows), -1);
    for (std::size_t k = 0; k < nodes.size(); ++k) local[nodes[k]] = static_cast<Index>(k);
    CsrMatrix s;
    s.rows = static_cast<Index>(nodes.size());
    s.row_ptr.assign(nodes.size() + 1, 0);
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        const Index v = nodes[k];
        for (Index p = a.row_ptr[v]; p < a.row_ptr[v + 1]; ++p) {
            if (local[a.col_idx[p]] < 0) continue;
            s.col_idx.push_back(local[a.col_idx[p]]);
            s.values.push_back(a.values[p]);
        }
        s.row_ptr[k + 1] = static_cast<Index>(s.col_idx.size());
    }
    return s;
}

}  // namespace

LanczosResult lanczos_largest(const CsrMatrix& a, double diagonal_shift, double scale, Index k,
                              Index max_iterations, double tolerance, std::uint64_t seed) {
    const Index n = a.rows;
    if (k < 1 || k > n) throw std::invalid_argument("Lanczos: requested pair count out of range");
    const Index m_max = std::min(max_iterations, n);
    if (m_max < k) {
        throw EigensolverError("Lanczos: iteration cap " + std::to_string(max_iterations) +
                                   " is below the requested pair count",
                               std::numeric_limits<double>::infinity());
    }

    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto random_unit = [&](Index filled, const Matrix& q) {
        Vector v(n);
        for (Index i = 0; i < n; ++i) v[i] = normal(rng);
        for (int pass = 0; pass < 2 && filled > 0; ++pass) {
            v -= q.leftCols(filled) * (q.leftCols(filled).transpose() * v);
        }
        return Vector(v / v.norm());
    };

    Matrix q(n, m_max);
    Vector alpha = Vector::Zero(m_max);
    Vector beta = Vector::Zero(m_max);
    Vector w(n);
    Vector cur = random_unit(0, q);
    const Index check_every = std::max<Index>(5, k / 8);

    Eigen::SelfAdjointEigenSolver<Matrix> tri;
    Index steps = 0;
    bool converged = false;
    double worst = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < m_max; ++j) {
        q.col(j) = cur;
        w = multiply(a, Vector(cur));
        w = diagonal_shift * cur + scale * w;
        alpha[j] = cur.dot(w);
        w -= alpha[j] * cur;
        if (j > 0) w -= beta[j - 1] * q.col(j - 1);
        for (int pass = 0; pass < 2; ++pass) {
            w -= q.leftCols(j + 1) * (q.leftCols(j + 1).transpose() * w);
        }
        beta[j] = w.norm();
        steps = j + 1;

        const bool breakdown = beta[j] < 1e-10 * std::max(1.0, std::abs(alpha[j]));
        if (breakdown && steps == n) {
            tri.computeFromTridiagonal(alpha.head(steps), beta.head(steps - 1), Eigen::ComputeEigenvectors);
            worst = 0.0;
            converged = true;
            break;
        }
        if (!breakdown && steps >= k && (steps == m_max || steps % check_every == 0)) {
            tri.computeFromTridiagonal(alpha.head(steps), beta.head(steps - 1), Eigen::ComputeEigenvectors);
            worst = 0.0;
            for (Index r = 0; r < k; ++r) {
                const Index col = steps - 1 - r;
                worst = std::max(worst, std::abs(beta[j] * tri.eigenvectors()(steps - 1, col)));
            }
            if (worst <= tolerance) {
                converged = true;
                break;
            }
        }
        if (breakdown) {
            // Invariant subspace (repeated eigenvalues); continue in its
            // orthogonal complement so further copies are found.
            beta[j] = 0.0;
            if (steps < m_max) cur = random_unit(steps, q);
        } else {
            cur = w / beta[j];
        }
    }
    if (!converged) {
        throw EigensolverError("Lanczos did not converge in " + std::to_string(steps) +
                                   " iterations (residual estimate " + std::to_string(worst) + ")",
                               worst);
    }

    LanczosResult res;
    res.iterations = steps;
    res.values.resize(k);
    Matrix s(steps, k);
    for (Index r = 0; r < k; ++r) {
        const Index col = steps - 1 - r;
        res.values[r] = tri.eigenvalues()[col];
        s.col(r) = tri.eigenvectors().col(col);
    }
    res.vectors = q.leftCols(steps) * s;
    for (Index r = 0; r < k; ++r) res.vectors.col(r).normalize();
    res.max_residual = worst;
    return res;
}

SubspaceResult chebyshev_subspace_smallest(const CsrMatrix& a, double upper, Index k, Index guard,
                                           int degree, Index max_passes, double tolerance,
                                           std::uint64_t seed) {
    const Index n = a.rows;
    if (k < 1 || k > n) throw std::invalid_argument("subspace iteration: requested pair count out of range");
    if (degree < 1) throw std::invalid_argument("subspace iteration: filter degree must be >= 1");
    const Index p = std::min(n, k + std::max<Index>(guard, 0));

    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix x(n, p);
    for (Index c = 0; c < p; ++c) {
        for (Index r = 0; r < n; ++r) x(r, c) = normal(rng);
    }
    auto orthonormalize = [&](const Matrix& y) {
        Eigen::HouseholderQR<Matrix> qr(y);
        return Matrix(qr.householderQ() * Matrix::Identity(n, p));
    };
    x = orthonormalize(x);

    Eigen::SelfAdjointEigenSolver<Matrix> es;
    Vector theta;
    double worst = std::numeric_limits<double>::infinity();
    for (Index pass = 0;; ++pass) {
        // Rayleigh-Ritz on span(x).
        Matrix ax = multiply(a, x);
        Matrix h = x.transpose() * ax;
        h = 0.5 * (h + h.transpose()).eval();
        es.compute(h);
        theta = es.eigenvalues();
        x = (x * es.eigenvectors()).eval();
        ax = (ax * es.eigenvectors()).eval();
        worst = 0.0;
        for (Index c = 0; c < k; ++c) worst = std::max(worst, (ax.col(c) - theta[c] * x.col(c)).norm());
        if (worst <= tolerance) {
            SubspaceResult res;
            res.vectors = x.leftCols(k);
            res.values = theta.head(k);
            res.passes = pass;
            res.max_residual = worst;
            return res;
        }
        if (pass >= max_passes) break;

        // Scaled Chebyshev recurrence damping [cut, upper].
        const double cut = std::min(theta[p - 1], upper * (1.0 - 1e-6));
        const double e = 0.5 * (upper - cut), c = 0.5 * (upper + cut);
        const double low = std::min(theta[0], cut - e * 1e-3);
        double sigma = e / (low - c);
        const double sigma1 = sigma;
        Matrix prev = x;
        Matrix cur = (multiply(a, x) - c * x) * (sigma1 / e);
        for (int d = 2; d <= degree; ++d) {
            const double next_sigma = 1.0 / (2.0 / sigma1 - sigma);
            Matrix next = (multiply(a, cur) - c * cur) * (2.0 * next_sigma / e) - (sigma * next_sigma) * prev;
            prev = std::move(cur);
            cur = std::move(next);
            sigma = next_sigma;
        }
        x = orthonormalize(cur);
    }
    throw EigensolverError("subspace iteration did not converge in " + std::to_string(max_passes) +
                               " passes (residual " + std::to_string(worst) + ")",
                           worst);
}

SpectralBasis compute_spectral_basis(const NormalizedOperator& delta, Index l, const EigenOptions& options) {
    if (delta.kind != OperatorKind::PsdLaplacian) {
        throw std::invalid_argument("spectral basis expects the PSD Laplacian operator");
    }
    const Index n = delta.size();
    if (l < 1 || l > n) {
        throw std::invalid_argument("eigenpair count " + std::to_string(l) + " outside [1, " + std::to_string(n) + "]");
    }
    const Index max_iter = options.max_iterations > 0 ? options.max_iterations : 4 * l + 100;

    struct Pair {
        double value;
        Index component;
        Index local;
    };
    std::vector<Pair> pairs;
    std::vector<Matrix> vecs;
    const auto comps = components_of(delta.matrix);
    for (std::size_t ci = 0; ci < comps.size(); ++ci) {
        const auto& nodes = comps[ci].nodes;
        const auto s = static_cast<Index>(nodes.size());
        const Index want = std::min(l, s);
        Vector values;
        Matrix vectors;
        if (s == 1) {
            values = Vector::Constant(1, delta.matrix.diagonal(nodes[0]));
            vectors = Matrix::Ones(1, 1);
        } else {
            const CsrMatrix sub = restrict_to(delta.matrix, nodes);
            if (s <= options.dense_threshold) {
                Eigen::SelfAdjointEigenSolver<Matrix> es(sub.to_dense());
                if (es.info() != Eigen::Success) throw EigensolverError("dense eigensolver failed", 0.0);
                values = es.eigenvalues().head(want);
                vectors = es.eigenvectors().leftCols(want);
            } else {
                // 2I - Delta has spectrum in [0, 2]; its top pairs are Delta's bottom pairs.
                const double tol = 0.1 * options.residual_tolerance;
                try {
                    const LanczosResult lr =
                        lanczos_largest(sub, 2.0, -1.0, want, max_iter, tol, splitmix64(options.seed + ci));
                    values = Vector::Constant(want, 2.0) - lr.values;
                    vectors = lr.vectors;
                } catch (const EigensolverError&) {
                    if (!options.subspace_fallback) throw;
                    const SubspaceResult sr = chebyshev_subspace_smallest(
                        sub, 2.0, want, std::max<Index>(16, want / 2), options.filter_degree,
                        options.max_filter_passes, tol, splitmix64(options.seed + ci + 0x9e3779b97f4a7c15ULL));
                    values = sr.values;
                    vectors = sr.vectors;
                }
            }
        }
        for (Index r = 0; r < want; ++r) pairs.push_back({values[r], static_cast<Index>(ci), r});
        vecs.push_back(std::move(vectors));
    }
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.value < b.value; });

    SpectralBasis basis;
    basis.kind = ExponentKind::PsdLaplacian;
    basis.phi = Matrix::Zero(n, l);
    basis.lambda.resize(l);
    for (Index c = 0; c < l; ++c) {
        const Pair& p = pairs[c];
        basis.lambda[c] = p.value;
        const auto& nodes = comps[p.component].nodes;
        for (std::size_t r = 0; r < nodes.size(); ++r) {
            basis.phi(nodes[r], c) = vecs[p.component](static_cast<Index>(r), p.local);
        }
    }
    fix_signs(basis.phi);

    const Matrix residual = multiply(delta.matrix, basis.phi) - basis.phi * basis.lambda.asDiagonal();
    const double worst = residual.colwise().norm().maxCoeff();
    if (!(worst <= options.residual_tolerance)) {
        throw EigensolverError("eigenpair residual " + std::to_string(worst) + " exceeds tolerance", worst);
    }
    return basis;
}

SpectralBasis as_exponent(const SpectralBasis& delta_basis, ExponentKind kind) {
    if (delta_basis.kind != ExponentKind::PsdLaplacian) throw std::invalid_argument("expected a PSD Laplacian basis");
    if (kind == ExponentKind::PsdLaplacian) return delta_basis;
    const Index l = delta_basis.size();
    SpectralBasis out;
    out.kind = kind;
    out.phi.resize(delta_basis.num_nodes(), l);
    out.lambda.resize(l);
    // 1 - lambda reverses the order.
    for (Index c = 0; c < l; ++c) {
        out.lambda[c] = 1.0 - delta_basis.lambda[l - 1 - c];
        out.phi.col(c) = delta_basis.phi.col(l - 1 - c);
    }
    return out;
}

namespace {

void check_times(Times t, Index channels) {
    if (t.size() != 1 && static_cast<Index>(t.size()) != channels) {
        throw std::invalid_argument("time vector must have length 1 or one entry per channel");
    }
    for (double v : t) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("diffusion time must be finite and >= 0");
    }
}

void check_basis(const SpectralBasis& basis, const Matrix& u) {
    if (u.rows() != basis.num_nodes()) throw std::invalid_argument("signal rows do not match basis size");
}

// Scales coefficient column c by exp(-t_c lambda) - alpha.
void scale_coefficients(const SpectralBasis& basis, Times t, double alpha, Matrix& coeffs) {
    for (Index c = 0; c < coeffs.cols(); ++c) {
        const double tc = t.size() == 1 ? t[0] : t[c];
        for (Index i = 0; i < coeffs.rows(); ++i) coeffs(i, c) *= std::exp(-tc * basis.lambda[i]) - alpha;
    }
}

}  // namespace

Matrix heat_apply(const SpectralBasis& basis, Times t, const Matrix& u) {
    check_basis(basis, u);
    check_times(t, u.cols());
    Matrix coeffs = basis.phi.transpose() * u;
    scale_coefficients(basis, t, 0.0, coeffs);
    return basis.phi * coeffs;
}

Matrix heat_apply_modified(const SpectralBasis& basis, const HeatParams& params, Times t, const Matrix& u) {
    check_basis(basis, u);
    check_times(t, u.cols());
    Matrix coeffs = basis.phi.transpose() * u;
    scale_coefficients(basis, t, params.alpha, coeffs);
    Matrix out = basis.phi * coeffs;
    out += params.beta * u;
    return out;
}

Matrix tide_apply(const NormalizedOperator& msg_op, const SpectralBasis& basis, const HeatParams& params, Times t,
                  const Matrix& u) {
    if (msg_op.kind != OperatorKind::MessagePassing) throw std::invalid_argument("tide_apply expects L~");
    return spmv(msg_op, heat_apply_modified(basis, params, t, u));
}

std::vector<double> hks_times(const SpectralBasis& basis, Index num_times) {
    if (num_times < 1) throw std::invalid_argument("HKS needs at least one time");
    double lmin = std::numeric_limits<double>::infinity();
    double lmax = 0.0;
    for (Index i = 0; i < basis.size(); ++i) {
        if (basis.lambda[i] > 1e-10) lmin = std::min(lmin, basis.lambda[i]);
        lmax = std::max(lmax, basis.lambda[i]);
    }
    if (!std::isfinite(lmin)) return {};
    const double lo = std::log(4.0 * std::log(10.0) / lmax);
    const double hi = std::log(4.0 * std::log(10.0) / lmin);
    std::vector<double> times(static_cast<std::size_t>(num_times));
    for (Index k = 0; k < num_times; ++k) {
        const double frac = num_times == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(num_times - 1);
        times[k] = std::exp(lo + frac * (hi - lo));
    }
    return times;
}

Matrix hks_features(const SpectralBasis& basis, Index num_times) {
    const Index n = basis.num_nodes();
    const auto times = hks_times(basis, num_times);
    if (times.empty()) {
        std::cerr << "warning: spectrum has no nonzero eigenvalue; HKS features are constant\n";
        return Matrix::Ones(n, num_times);
    }
    const Matrix sq = basis.phi.cwiseAbs2();
    Matrix out(n, num_times);
    for (Index k = 0; k < num_times; ++k) {
        Vector decay(basis.size());
        for (Index i = 0; i < basis.size(); ++i) decay[i] = std::exp(-basis.lambda[i] * times[k]);
        out.col(k) = sq * decay;
        const double mean = out.col(k).mean();
        if (mean > 0) out.col(k) /= mean;
    }
    return out;
}

Matrix taylor_khop_diffuse(const NormalizedOperator& delta, double t, const Matrix& u, int K) {
    if (K < 0) throw std::invalid_argument("K must be nonnegative");
    Matrix out = u;
    Matrix term = u;
    Matrix next;
    for (int k = 1; k <= K; ++k) {
        multiply_into(delta.matrix, term, next);
        term = next * (-t / static_cast<double>(k));
        out += term;
    }
    return out;
}

double taylor_bound(double t, double c, int K) {
    if (c < 0.0 || K < 0) throw std::invalid_argument("taylor_bound needs C >= 0 and K >= 0");
    const double x = std::abs(t) * c;
    if (x > 700.0) throw std::overflow_error("taylor_bound: |t| C = " + std::to_string(x) + " overflows");
    if (x == 0.0) return 0.0;
    // Direct tail sum: e^x minus the head cancels catastrophically once the
    // tail drops below e^x * eps.
    int k = K + 1;
    double term = std::exp(k * std::log(x) - std::lgamma(k + 1.0));
    CompensatedSum sum;
    while (term > 0.0) {
        sum.add(term);
        ++k;
        term *= x / k;
        if (k > x && term < 1e-18 * sum.value()) break;
    }
    return sum.value();
}

namespace {
constexpr char kMagic[8] = {'T', 'I', 'D', 'E', 'B', 'A', 'S', '1'};
}

void save_basis(const SpectralBasis& basis, std::uint64_t graph_hash, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write basis cache " + path.string());
        const std::int64_t n = basis.num_nodes();
        const std::int64_t l = basis.size();
        const std::int32_t kind = basis.kind == ExponentKind::PsdLaplacian ? 0 : 1;
        out.write(kMagic, sizeof(kMagic));
        out.write(reinterpret_cast<const char*>(&graph_hash), sizeof(graph_hash));
        out.write(reinterpret_cast<const char*>(&n), sizeof(n));
        out.write(reinterpret_cast<const char*>(&l), sizeof(l));
        out.write(reinterpret_cast<const char*>(&kind), sizeof(kind));
        out.write(reinterpret_cast<const char*>(basis.lambda.data()), static_cast<std::streamsize>(l * sizeof(double)));
        out.write(reinterpret_cast<const char*>(basis.phi.data()), static_cast<std::streamsize>(n * l * sizeof(double)));
        if (!out) throw std::runtime_error("failed writing basis cache " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

bool load_basis(const std::filesystem::path& path, std::uint64_t graph_hash, Index l, SpectralBasis& out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    char magic[8];
    std::uint64_t hash = 0;
    std::int64_t n = 0;
    std::int64_t stored_l = 0;
    std::int32_t kind = 0;
    in.read(magic, sizeof(magic));
    in.read(reinterpret_cast<char*>(&hash), sizeof(hash));
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    in.read(reinterpret_cast<char*>(&stored_l), sizeof(stored_l));
    in.read(reinterpret_cast<char*>(&kind), sizeof(kind));
    if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) return false;
    if (hash != graph_hash || stored_l != l || n < 0) return false;
    SpectralBasis b;
    b.kind = kind == 0 ? ExponentKind::PsdLaplacian : ExponentKind::NormalizedAdjacency;
    b.lambda.resize(l);
    b.phi.resize(n, l);
    in.read(reinterpret_cast<char*>(b.lambda.data()), static_cast<std::streamsize>(l * sizeof(double)));
    in.read(reinterpret_cast<char*>(b.phi.data()), static_cast<std::streamsize>(n * l * sizeof(double)));
    if (!in) return false;
    out = std::move(b);
    return true;
}

}  // namespace tide
