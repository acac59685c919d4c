#pragma once

// Independent reference implementations used as test oracles. None of these
// call into the library code they check.

#include "tide/graph.hpp"
#include "tide/rng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <deque>
#include <limits>
#include <random>
#include <vector>

namespace oracle {

using tide::Index;
using tide::Matrix;
using tide::Vector;

// Erdos-Renyi edge list; a spanning path is added when connected is set.
inline std::vector<tide::Edge> random_edges(Index n, double p, std::uint64_t seed, bool connected = true,
                                            bool weighted = false) {
    tide::Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<tide::Edge> edges;
    for (Index i = 0; i < n; ++i) {
        for (Index j = i + 1; j < n; ++j) {
            const bool path = connected && j == i + 1;
            if (path || unit(rng) < p) edges.push_back({i, j, weighted ? 0.5 + unit(rng) : 1.0});
        }
    }
    return edges;
}

inline tide::Graph random_graph(Index n, double p, std::uint64_t seed, bool connected = true, bool weighted = false) {
    const auto edges = random_edges(n, p, seed, connected, weighted);
    return tide::Graph::from_edges(n, edges);
}

inline Matrix random_matrix(Index rows, Index cols, std::uint64_t seed) {
    tide::Rng rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
}

inline Matrix dense_adjacency(Index n, const std::vector<tide::Edge>& edges) {
    Matrix a = Matrix::Zero(n, n);
    for (const auto& e : edges) {
        a(e.src, e.dst) = e.weight;
        a(e.dst, e.src) = e.weight;
    }
    return a;
}

// D~^{-1/2} (A + I) D~^{-1/2} from a dense adjacency.
inline Matrix dense_normalized_adjacency(Matrix a) {
    const Index n = a.rows();
    for (Index i = 0; i < n; ++i) {
        if (a(i, i) == 0.0) a(i, i) = 1.0;
    }
    const Vector d = a.rowwise().sum();
    Matrix out(n, n);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) out(i, j) = a(i, j) / std::sqrt(d[i] * d[j]);
    }
    return out;
}

// exp(M) by scaling and squaring with a truncated Taylor series.
inline Matrix expm(const Matrix& m) {
    const double norm = m.cwiseAbs().rowwise().sum().maxCoeff();
    int s = 0;
    if (norm > 0.25) s = static_cast<int>(std::ceil(std::log2(norm / 0.25)));
    const Matrix a = m / std::ldexp(1.0, s);
    Matrix term = Matrix::Identity(m.rows(), m.cols());
    Matrix sum = term;
    for (int k = 1; k <= 24; ++k) {
        term = term * a / static_cast<double>(k);
        sum += term;
    }
    for (int i = 0; i < s; ++i) sum = sum * sum;
    return sum;
}

// Hop distances from one source; -1 when unreachable.
inline std::vector<Index> bfs(const tide::Graph& g, Index src) {
    std::vector<Index> dist(static_cast<std::size_t>(g.num_nodes()), -1);
    std::deque<Index> q{src};
    dist[src] = 0;
    while (!q.empty()) {
        const Index v = q.front();
        q.pop_front();
        for (Index u : g.neighbors(v)) {
            if (dist[u] < 0) {
                dist[u] = dist[v] + 1;
                q.push_back(u);
            }
        }
    }
    return dist;
}

struct BruteDistance {
    double mean = 0.0;
    Index max = 0;
    Index unreachable = 0;
};

// Nearest train node for every other node, one BFS per node.
inline BruteDistance brute_labeled_distance(const tide::Graph& g) {
    BruteDistance out;
    const auto& train = g.masks().train;
    double sum = 0.0;
    Index count = 0;
    for (Index v = 0; v < g.num_nodes(); ++v) {
        if (train[v]) continue;
        const auto d = bfs(g, v);
        Index best = -1;
        for (Index u = 0; u < g.num_nodes(); ++u) {
            if (train[u] && d[u] >= 0 && (best < 0 || d[u] < best)) best = d[u];
        }
        if (best < 0) {
            ++out.unreachable;
            continue;
        }
        sum += static_cast<double>(best);
        ++count;
        out.max = std::max(out.max, best);
    }
    out.mean = count > 0 ? sum / static_cast<double>(count) : 0.0;
    return out;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace oracle
