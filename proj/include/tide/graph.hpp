#pragma once

#include "tide/linalg.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace tide {

using Mask = std::vector<bool>;

struct Edge {
    Index src = 0;
    Index dst = 0;
    double weight = 1.0;
};

struct SplitMasks {
    Mask train;
    Mask val;
    Mask test;
};

inline constexpr int kUnlabeled = -1;

// Immutable undirected graph in CSR form with node data attached.
//
// Invariants (checked by validate()):
//   - row_ptr nondecreasing, col_idx in range, no duplicate (row, col) in a row
//   - adjacency symmetric with equal weights, weights nonnegative
//   - feature rows == num_nodes; labels and masks sized num_nodes or empty
//   - masks pairwise disjoint
class Graph {
public:
    Graph() = default;

    // Edges are listed once per undirected pair. Repeated pairs with equal
    // weight are merged; conflicting weights, negative weights, and out of
    // range endpoints throw std::invalid_argument.
    static Graph from_edges(Index num_nodes, std::span<const Edge> edges);

    Graph with_features(Matrix features) const;
    Graph with_labels(std::vector<int> labels) const;
    Graph with_masks(SplitMasks masks) const;
    Graph with_coordinates(Matrix coords) const;

    Index num_nodes() const { return num_nodes_; }
    Index num_directed_entries() const { return static_cast<Index>(col_idx_.size()); }
    // Undirected edge count, self loops counted once.
    Index num_edges() const;

    const std::vector<Index>& row_ptr() const { return row_ptr_; }
    const std::vector<Index>& col_idx() const { return col_idx_; }
    const std::vector<double>& edge_weight() const { return weight_; }
    const Matrix& features() const { return features_; }
    const std::vector<int>& labels() const { return labels_; }
    const SplitMasks& masks() const { return masks_; }
    // Vertex positions for mesh-derived graphs; never used as features.
    const Matrix& coordinates() const { return coords_; }

    std::span<const Index> neighbors(Index v) const;
    std::span<const double> neighbor_weights(Index v) const;
    Index feature_dim() const { return features_.cols(); }
    int num_classes() const;
    bool has_masks() const { return !masks_.train.empty(); }

    // Undirected edge list (src <= dst) in CSR order.
    std::vector<Edge> edges() const;

    void validate() const;

private:
    Index num_nodes_ = 0;
    std::vector<Index> row_ptr_{0};
    std::vector<Index> col_idx_;
    std::vector<double> weight_;
    Matrix features_;
    std::vector<int> labels_;
    SplitMasks masks_;
    Matrix coords_;
};

std::vector<Index> mask_indices(const Mask& mask);
Index mask_count(const Mask& mask);

enum class OperatorKind { MessagePassing, PsdLaplacian };

struct NormalizedOperator {
    CsrMatrix matrix;
    OperatorKind kind = OperatorKind::MessagePassing;

    Index size() const { return matrix.rows; }
};

// L~ = D~^{-1/2} (A + I) D~^{-1/2}; the unit self loop is added only where
// the graph has none.
NormalizedOperator build_normalized_adjacency(const Graph& g);
// Delta = I - L~.
NormalizedOperator build_psd_laplacian(const Graph& g);

Matrix spmv(const NormalizedOperator& op, const Matrix& x);

struct DistanceStats {
    double mean = 0.0;
    Index max = 0;
    Index unreachable = 0;
    Index counted = 0;  // nodes outside the train mask reached by BFS
};

// Multi-source BFS from the train mask over all nodes outside it.
DistanceStats labeled_distance_stats(const Graph& g);

// Connected component id per node, ids assigned in order of lowest node.
std::vector<Index> connected_components(const Graph& g, Index* count = nullptr);

struct HomophilyGraphParams {
    Index num_nodes = 2000;
    int num_classes = 2;
    double homophily = 0.5;
    double mean_degree = 4.0;
    double noise_variance = 0.5;  // per feature dimension
    std::uint64_t seed = 0;
};

// Growth model with homophilic preferential attachment (Karimi et al. style).
// Splits the nodes into equal thirds for train/val/test.
Graph generate_homophily_graph(const HomophilyGraphParams& params);

// Fraction of non-loop edges whose endpoints share a label.
double edge_homophily(const Graph& g);

// Copy of g with every feature row outside the train mask set to zero.
Graph zero_unlabeled_features(const Graph& g);

// Uniform random split; the test set takes the remainder.
SplitMasks random_split(Index num_nodes, double train_fraction, double val_fraction,
                        std::uint64_t seed);

// rows x cols vertex lattice, each cell cut into two triangles along the
// same diagonal. Labels mark the four quadrants of the sheet.
Graph generate_grid_mesh_graph(Index rows, Index cols);

struct TriangleMesh {
    Matrix vertices;  // n x 3
    std::vector<std::array<Index, 3>> faces;
};

TriangleMesh read_off(const std::filesystem::path& path);
Graph mesh_to_graph(const TriangleMesh& mesh);
Graph load_mesh_as_graph(const std::filesystem::path& path);

// Stable 64-bit hash of the connectivity and weights; used to key basis caches.
std::uint64_t graph_content_hash(const Graph& g);

}  // namespace tide
