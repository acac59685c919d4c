#pragma once

#include "tide/graph.hpp"
#include "tide/linalg.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>

namespace tide {

// Which operator the heat exponent uses. PsdLaplacian exponentiates
// Delta = I - L~; NormalizedAdjacency exponentiates L~ itself.
enum class ExponentKind { PsdLaplacian, NormalizedAdjacency };

std::string to_string(ExponentKind kind);
ExponentKind parse_exponent_kind(const std::string& name);

// Truncated eigenpairs of the exponent operator. Columns of phi are
// orthonormal and lambda is ascending.
struct SpectralBasis {
    Matrix phi;     // n x l
    Vector lambda;  // l
    ExponentKind kind = ExponentKind::PsdLaplacian;

    Index num_nodes() const { return phi.rows(); }
    Index size() const { return lambda.size(); }
};

struct EigenOptions {
    Index dense_threshold = 2000;
    // 0 selects 4 * l + 100.
    Index max_iterations = 0;
    double residual_tolerance = 1e-6;
    std::uint64_t seed = 0;
    // When Lanczos stops short, retry with Chebyshev-filtered subspace
    // iteration before reporting failure.
    bool subspace_fallback = true;
    int filter_degree = 40;
    Index max_filter_passes = 60;
};

class EigensolverError : public std::runtime_error {
public:
    EigensolverError(const std::string& what, double residual)
        : std::runtime_error(what), residual_(residual) {}
    double residual() const { return residual_; }

private:
    double residual_;
};

// The l smallest eigenpairs of Delta. Each connected component is solved
// on its own (dense below dense_threshold, Lanczos on 2I - Delta above it,
// Chebyshev-filtered subspace iteration if Lanczos does not converge) and
// the pieces are merged. The first nonzero entry of every eigenvector
// is made positive.
SpectralBasis compute_spectral_basis(const NormalizedOperator& delta, Index l,
                                     const EigenOptions& options = {});

// Same eigenvectors with lambda mapped to the eigenvalues of L~ (1 - lambda),
// reordered ascending.
SpectralBasis as_exponent(const SpectralBasis& delta_basis, ExponentKind kind);

struct LanczosResult {
    Matrix vectors;  // n x k, descending eigenvalue order
    Vector values;
    Index iterations = 0;
    double max_residual = 0.0;
};

// Largest k eigenpairs of a symmetric operator by Lanczos with full
// reorthogonalization. Throws EigensolverError when the requested pairs have
// not converged after max_iterations steps.
LanczosResult lanczos_largest(const CsrMatrix& a, double diagonal_shift, double scale,
                              Index k, Index max_iterations, double tolerance,
                              std::uint64_t seed);

struct SubspaceResult {
    Matrix vectors;  // n x k, ascending eigenvalue order
    Vector values;
    Index passes = 0;
    double max_residual = 0.0;
};

// Smallest k eigenpairs of a symmetric operator with spectrum inside
// [0, upper]: a block of k + guard vectors is repeatedly passed through a
// degree-d Chebyshev filter that damps [cut, upper], cut being the largest
// current Ritz value, then re-orthonormalized and Rayleigh-Ritz projected.
// Throws EigensolverError after max_passes.
SubspaceResult chebyshev_subspace_smallest(const CsrMatrix& a, double upper, Index k, Index guard,
                                           int degree, Index max_passes, double tolerance,
                                           std::uint64_t seed);

// Diffusion times: one entry shared by all channels, or one per channel.
using Times = std::span<const double>;

// H_t(u) = Phi (exp(-t lambda) .* Phi^T u), per channel time.
Matrix heat_apply(const SpectralBasis& basis, Times t, const Matrix& u);

struct HeatParams {
    double alpha = 1.0;
    double beta = 1.0;
};

// H~_t(u) = Phi (exp(-t lambda) .* Phi^T u - alpha Phi^T u) + beta u.
Matrix heat_apply_modified(const SpectralBasis& basis, const HeatParams& params, Times t,
                           const Matrix& u);

// T~_t(u) = L~ H~_t(u).
Matrix tide_apply(const NormalizedOperator& msg_op, const SpectralBasis& basis,
                  const HeatParams& params, Times t, const Matrix& u);

// Heat kernel signature at num_times log-spaced times in
// [4 ln 10 / lambda_max, 4 ln 10 / lambda_min+], each column scaled to unit mean.
Matrix hks_features(const SpectralBasis& basis, Index num_times = 5);
std::vector<double> hks_times(const SpectralBasis& basis, Index num_times);

// sum_{k=0}^{K} (-t)^k / k! Delta^k u by repeated sparse products.
Matrix taylor_khop_diffuse(const NormalizedOperator& delta, double t, const Matrix& u, int K);

// sum_{k>K} (|t| C)^k / k!. Throws std::overflow_error when |t| C > 700.
double taylor_bound(double t, double c, int K);

// Basis cache: binary container holding n, l, exponent kind, the source graph
// hash, lambda and column-major phi.
void save_basis(const SpectralBasis& basis, std::uint64_t graph_hash,
                const std::filesystem::path& path);
// Returns false when the file is missing or was built from a different graph
// or truncation size.
bool load_basis(const std::filesystem::path& path, std::uint64_t graph_hash, Index l,
                SpectralBasis& out);

}  // namespace tide
