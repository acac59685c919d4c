#include "tide/graph.hpp"

#include "tide/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>

namespace tide {

namespace {

std::string node_str(Index v) { return std::to_string(v); }

}  // namespace

Graph Graph::from_edges(Index num_nodes, std::span<const Edge> edges) {
    if (num_nodes < 0) throw std::invalid_argument("negative node count");
    std::vector<std::tuple<Index, Index, double>> entries;
    entries.reserve(edges.size() * 2);
    for (const Edge& e : edges) {
        if (e.src < 0 || e.src >= num_nodes || e.dst < 0 || e.dst >= num_nodes) {
            throw std::invalid_argument("edge (" + node_str(e.src) + ", " + node_str(e.dst) +
                                        ") out of range for " + node_str(num_nodes) + " nodes");
        }
        if (!(e.weight >= 0.0) || !std::isfinite(e.weight)) {
            throw std::invalid_argument("edge (" + node_str(e.src) + ", " + node_str(e.dst) +
                                        ") has negative or non-finite weight");
        }
        entries.emplace_back(e.src, e.dst, e.weight);
        if (e.src != e.dst) entries.emplace_back(e.dst, e.src, e.weight);
    }
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
    });

    Graph g;
    g.num_nodes_ = num_nodes;
    g.row_ptr_.assign(static_cast<std::size_t>(num_nodes) + 1, 0);
    for (std::size_t k = 0; k < entries.size(); ++k) {
        const auto& [r, c, w] = entries[k];
        if (k > 0 && std::get<0>(entries[k - 1]) == r && std::get<1>(entries[k - 1]) == c) {
            if (std::get<2>(entries[k - 1]) != w) {
                throw std::invalid_argument("edge (" + node_str(r) + ", " + node_str(c) +
                                            ") listed twice with different weights");
            }
            continue;
        }
        g.col_idx_.push_back(c);
        g.weight_.push_back(w);
        ++g.row_ptr_[static_cast<std::size_t>(r) + 1];
    }
    std::partial_sum(g.row_ptr_.begin(), g.row_ptr_.end(), g.row_ptr_.begin());
    g.features_ = Matrix::Zero(num_nodes, 0);
    return g;
}

Graph Graph::with_features(Matrix features) const {
    if (features.rows() != num_nodes_) {
        throw std::invalid_argument("feature matrix has " + std::to_string(features.rows()) +
                                    " rows, graph has " + std::to_string(num_nodes_) + " nodes");
    }
    Graph g = *this;
    g.features_ = std::move(features);
    return g;
}

Graph Graph::with_labels(std::vector<int> labels) const {
    if (!labels.empty() && static_cast<Index>(labels.size()) != num_nodes_) {
        throw std::invalid_argument("label count does not match node count");
    }
    Graph g = *this;
    g.labels_ = std::move(labels);
    return g;
}

Graph Graph::with_masks(SplitMasks masks) const {
    Graph g = *this;
    g.masks_ = std::move(masks);
    g.validate();
    return g;
}

Graph Graph::with_coordinates(Matrix coords) const {
    if (coords.size() != 0 && coords.rows() != num_nodes_) {
        throw std::invalid_argument("coordinate rows do not match node count");
    }
    Graph g = *this;
    g.coords_ = std::move(coords);
    return g;
}

Index Graph::num_edges() const {
    Index loops = 0;
    for (Index v = 0; v < num_nodes_; ++v) {
        for (Index u : neighbors(v)) loops += (u == v);
    }
    return (num_directed_entries() - loops) / 2 + loops;
}

std::span<const Index> Graph::neighbors(Index v) const {
    return {col_idx_.data() + row_ptr_[v], static_cast<std::size_t>(row_ptr_[v + 1] - row_ptr_[v])};
}

std::span<const double> Graph::neighbor_weights(Index v) const {
    return {weight_.data() + row_ptr_[v], static_cast<std::size_t>(row_ptr_[v + 1] - row_ptr_[v])};
}

int Graph::num_classes() const {
    int c = 0;
    for (int l : labels_) c = std::max(c, l + 1);
    return c;
}

std::vector<Edge> Graph::edges() const {
    std::vector<Edge> out;
    for (Index v = 0; v < num_nodes_; ++v) {
        const auto nb = neighbors(v);
        const auto w = neighbor_weights(v);
        for (std::size_t k = 0; k < nb.size(); ++k) {
            if (nb[k] >= v) out.push_back({v, nb[k], w[k]});
        }
    }
    return out;
}

void Graph::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("invalid graph: " + msg); };
    const auto n = static_cast<std::size_t>(num_nodes_);
    if (row_ptr_.size() != n + 1 || row_ptr_.front() != 0) fail("row_ptr size");
    if (row_ptr_.back() != static_cast<Index>(col_idx_.size()) || col_idx_.size() != weight_.size()) {
        fail("row_ptr does not cover col_idx");
    }
    for (Index v = 0; v < num_nodes_; ++v) {
        if (row_ptr_[v + 1] < row_ptr_[v]) fail("row_ptr decreases at row " + node_str(v));
        const auto nb = neighbors(v);
        const auto w = neighbor_weights(v);
        for (std::size_t k = 0; k < nb.size(); ++k) {
            if (nb[k] < 0 || nb[k] >= num_nodes_) fail("column index out of range in row " + node_str(v));
            if (k > 0 && nb[k] <= nb[k - 1]) fail("unsorted or duplicate column in row " + node_str(v));
            if (!(w[k] >= 0.0)) fail("negative weight in row " + node_str(v));
            const auto back = neighbors(nb[k]);
            const auto it = std::lower_bound(back.begin(), back.end(), v);
            if (it == back.end() || *it != v) fail("asymmetric entry (" + node_str(v) + ", " + node_str(nb[k]) + ")");
            if (neighbor_weights(nb[k])[static_cast<std::size_t>(it - back.begin())] != w[k]) {
                fail("asymmetric weight (" + node_str(v) + ", " + node_str(nb[k]) + ")");
            }
        }
    }
    if (features_.rows() != num_nodes_) fail("feature rows");
    if (!labels_.empty() && labels_.size() != n) fail("label count");
    const Mask* masks[] = {&masks_.train, &masks_.val, &masks_.test};
    for (const Mask* m : masks) {
        if (!m->empty() && m->size() != n) fail("mask size");
    }
    for (std::size_t v = 0; v < n; ++v) {
        int hits = 0;
        for (const Mask* m : masks) hits += (!m->empty() && (*m)[v]);
        if (hits > 1) fail("masks overlap at node " + std::to_string(v));
        if (hits == 1 && (labels_.empty() || labels_[v] < 0)) fail("masked node " + std::to_string(v) + " has no label");
    }
}

std::vector<Index> mask_indices(const Mask& mask) {
    std::vector<Index> out;
    for (std::size_t v = 0; v < mask.size(); ++v) {
        if (mask[v]) out.push_back(static_cast<Index>(v));
    }
    return out;
}

Index mask_count(const Mask& mask) {
    return static_cast<Index>(std::count(mask.begin(), mask.end(), true));
}

NormalizedOperator build_normalized_adjacency(const Graph& g) {
    const Index n = g.num_nodes();
    CsrMatrix m;
    m.rows = n;
    m.row_ptr.assign(static_cast<std::size_t>(n) + 1, 0);
    m.col_idx.reserve(static_cast<std::size_t>(g.num_directed_entries() + n));
    m.values.reserve(m.col_idx.capacity());

    std::vector<double> degree(static_cast<std::size_t>(n), 0.0);
    for (Index v = 0; v < n; ++v) {
        const auto nb = g.neighbors(v);
        const auto w = g.neighbor_weights(v);
        bool has_loop = false;
        for (std::size_t k = 0; k < nb.size(); ++k) {
            if (w[k] < 0.0) throw std::invalid_argument("negative edge weight");
            degree[v] += w[k];
            has_loop |= (nb[k] == v);
        }
        if (!has_loop) degree[v] += 1.0;
        if (!(degree[v] > 0.0)) throw std::invalid_argument("node " + node_str(v) + " has zero degree");
    }
    for (Index v = 0; v < n; ++v) {
        const auto nb = g.neighbors(v);
        const auto w = g.neighbor_weights(v);
        bool loop_done = false;
        auto push = [&](Index c, double weight) {
            m.col_idx.push_back(c);
            m.values.push_back(weight / std::sqrt(degree[v] * degree[c]));
        };
        for (std::size_t k = 0; k < nb.size(); ++k) {
            if (!loop_done && nb[k] >= v) {
                if (nb[k] != v) push(v, 1.0);
                loop_done = true;
            }
            push(nb[k], w[k]);
        }
        if (!loop_done) push(v, 1.0);
        m.row_ptr[static_cast<std::size_t>(v) + 1] = static_cast<Index>(m.col_idx.size());
    }
    return {std::move(m), OperatorKind::MessagePassing};
}

NormalizedOperator build_psd_laplacian(const Graph& g) {
    NormalizedOperator op = build_normalized_adjacency(g);
    CsrMatrix& m = op.matrix;
    for (Index v = 0; v < m.rows; ++v) {
        for (Index p = m.row_ptr[v]; p < m.row_ptr[v + 1]; ++p) {
            m.values[p] = (m.col_idx[p] == v) ? 1.0 - m.values[p] : -m.values[p];
        }
    }
    op.kind = OperatorKind::PsdLaplacian;
    return op;
}

Matrix spmv(const NormalizedOperator& op, const Matrix& x) { return multiply(op.matrix, x); }

DistanceStats labeled_distance_stats(const Graph& g) {
    const Mask& train = g.masks().train;
    if (train.empty() || mask_count(train) == 0) {
        throw std::invalid_argument("labeled distance statistics need a nonempty train mask");
    }
    const Index n = g.num_nodes();
    std::vector<Index> dist(static_cast<std::size_t>(n), -1);
    std::queue<Index> frontier;
    for (Index v = 0; v < n; ++v) {
        if (train[v]) {
            dist[v] = 0;
            frontier.push(v);
        }
    }
    while (!frontier.empty()) {
        const Index v = frontier.front();
        frontier.pop();
        for (Index u : g.neighbors(v)) {
            if (dist[u] < 0) {
                dist[u] = dist[v] + 1;
                frontier.push(u);
            }
        }
    }
    DistanceStats s;
    Index total = 0;
    for (Index v = 0; v < n; ++v) {
        if (train[v]) continue;
        if (dist[v] < 0) {
            ++s.unreachable;
            continue;
        }
        ++s.counted;
        total += dist[v];
        s.max = std::max(s.max, dist[v]);
    }
    s.mean = s.counted > 0 ? static_cast<double>(total) / static_cast<double>(s.counted) : 0.0;
    return s;
}

std::vector<Index> connected_components(const Graph& g, Index* count) {
    const Index n = g.num_nodes();
    std::vector<Index> comp(static_cast<std::size_t>(n), -1);
    Index next = 0;
    std::vector<Index> stack;
    for (Index s = 0; s < n; ++s) {
        if (comp[s] >= 0) continue;
        comp[s] = next;
        stack.push_back(s);
        while (!stack.empty()) {
            const Index v = stack.back();
            stack.pop_back();
            for (Index u : g.neighbors(v)) {
                if (comp[u] < 0) {
                    comp[u] = next;
                    stack.push_back(u);
                }
            }
        }
        ++next;
    }
    if (count) *count = next;
    return comp;
}

SplitMasks random_split(Index num_nodes, double train_fraction, double val_fraction,
                        std::uint64_t seed) {
    if (train_fraction < 0 || val_fraction < 0 || train_fraction + val_fraction > 1.0) {
        throw std::invalid_argument("split fractions must be nonnegative and sum to at most 1");
    }
    std::vector<Index> order(static_cast<std::size_t>(num_nodes));
    std::iota(order.begin(), order.end(), Index{0});
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(num_nodes)));
    const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(num_nodes)));
    SplitMasks m{Mask(order.size(), false), Mask(order.size(), false), Mask(order.size(), false)};
    for (std::size_t k = 0; k < order.size(); ++k) {
        const auto v = static_cast<std::size_t>(order[k]);
        if (k < n_train) {
            m.train[v] = true;
        } else if (k < n_train + n_val) {
            m.val[v] = true;
        } else {
            m.test[v] = true;
        }
    }
    return m;
}

Graph generate_homophily_graph(const HomophilyGraphParams& p) {
    if (p.num_classes < 2 || p.num_nodes < p.num_classes) {
        throw std::invalid_argument("homophily graph needs n >= classes >= 2");
    }
    if (!(p.homophily >= 0.0 && p.homophily <= 1.0)) {
        throw std::invalid_argument("homophily must lie in [0, 1]");
    }
    if (!(p.mean_degree > 0.0) || !(p.noise_variance >= 0.0)) {
        throw std::invalid_argument("mean degree must be positive and noise nonnegative");
    }
    const SeedStreams seeds(p.seed);
    const Index n = p.num_nodes;
    const int classes = p.num_classes;
    const auto links = std::max<Index>(1, std::llround(p.mean_degree / 2.0));

    std::vector<int> labels(static_cast<std::size_t>(n));
    {
        Rng rng = seeds.stream("labels");
        std::uniform_int_distribution<int> pick(0, classes - 1);
        for (int& l : labels) l = pick(rng);
    }

    // Urn per class: node v appears (degree(v) + 1) times, so a uniform draw
    // from the urn is a draw proportional to degree + 1 within the class.
    std::vector<std::vector<Index>> urn(static_cast<std::size_t>(classes));
    std::vector<Index> present(static_cast<std::size_t>(classes), 0);
    const double same = p.homophily;
    const double other = (1.0 - p.homophily) / static_cast<double>(classes - 1);

    std::vector<Edge> edges;
    edges.reserve(static_cast<std::size_t>(n * links));
    Rng rng = seeds.stream("edges");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> class_weight(static_cast<std::size_t>(classes));
    std::vector<Index> chosen;
    for (Index v = 0; v < n; ++v) {
        const int lv = labels[v];
        Index eligible = 0;
        double total = 0.0;
        for (int c = 0; c < classes; ++c) {
            const double affinity = (c == lv) ? same : other;
            class_weight[c] = affinity * static_cast<double>(urn[c].size());
            total += class_weight[c];
            if (affinity > 0.0) eligible += present[c];
        }
        const Index want = std::min(links, eligible);
        chosen.clear();
        while (static_cast<Index>(chosen.size()) < want) {
            double r = unit(rng) * total;
            int c = 0;
            while (c < classes - 1 && (r >= class_weight[c] || class_weight[c] == 0.0)) {
                r -= class_weight[c];
                ++c;
            }
            if (class_weight[c] == 0.0) continue;
            std::uniform_int_distribution<std::size_t> slot(0, urn[c].size() - 1);
            const Index u = urn[c][slot(rng)];
            if (std::find(chosen.begin(), chosen.end(), u) == chosen.end()) chosen.push_back(u);
        }
        urn[lv].push_back(v);
        ++present[lv];
        for (Index u : chosen) {
            edges.push_back({u, v, 1.0});
            urn[labels[u]].push_back(u);
            urn[lv].push_back(v);
        }
    }

    Matrix features = Matrix::Zero(n, classes);
    {
        Rng frng = seeds.stream("features");
        std::normal_distribution<double> noise(0.0, std::sqrt(p.noise_variance));
        for (Index v = 0; v < n; ++v) {
            for (int c = 0; c < classes; ++c) {
                features(v, c) = (labels[v] == c ? 1.0 : 0.0) + (p.noise_variance > 0.0 ? noise(frng) : 0.0);
            }
        }
    }
    const double third = 1.0 / 3.0;
    return Graph::from_edges(n, edges)
        .with_features(std::move(features))
        .with_labels(std::move(labels))
        .with_masks(random_split(n, third, third, seeds.seed_for("split")));
}

double edge_homophily(const Graph& g) {
    const auto& labels = g.labels();
    Index same = 0;
    Index total = 0;
    for (const Edge& e : g.edges()) {
        if (e.src == e.dst || labels.empty() || labels[e.src] < 0 || labels[e.dst] < 0) continue;
        ++total;
        same += (labels[e.src] == labels[e.dst]);
    }
    return total > 0 ? static_cast<double>(same) / static_cast<double>(total) : 0.0;
}

Graph zero_unlabeled_features(const Graph& g) {
    Matrix f = g.features();
    const Mask& train = g.masks().train;
    for (Index v = 0; v < g.num_nodes(); ++v) {
        if (train.empty() || !train[v]) f.row(v).setZero();
    }
    return g.with_features(std::move(f));
}

Graph mesh_to_graph(const TriangleMesh& mesh) {
    const Index n = mesh.vertices.rows();
    std::vector<Edge> edges;
    edges.reserve(mesh.faces.size() * 3);
    for (const auto& f : mesh.faces) {
        for (int k = 0; k < 3; ++k) {
            const Index a = f[k];
            const Index b = f[(k + 1) % 3];
            if (a < 0 || a >= n || b < 0 || b >= n) throw std::invalid_argument("face index out of range");
            if (a == b) throw std::invalid_argument("degenerate face");
            edges.push_back({std::min(a, b), std::max(a, b), 1.0});
        }
    }
    return Graph::from_edges(n, edges).with_coordinates(mesh.vertices);
}

Graph generate_grid_mesh_graph(Index rows, Index cols) {
    if (rows < 2 || cols < 2) throw std::invalid_argument("grid mesh needs at least 2 x 2 vertices");
    TriangleMesh mesh;
    mesh.vertices = Matrix::Zero(rows * cols, 3);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            mesh.vertices(r * cols + c, 0) = static_cast<double>(c);
            mesh.vertices(r * cols + c, 1) = static_cast<double>(r);
        }
    }
    for (Index r = 0; r + 1 < rows; ++r) {
        for (Index c = 0; c + 1 < cols; ++c) {
            const Index v00 = r * cols + c;
            const Index v01 = v00 + 1;
            const Index v10 = v00 + cols;
            const Index v11 = v10 + 1;
            mesh.faces.push_back({v00, v01, v11});
            mesh.faces.push_back({v00, v11, v10});
        }
    }
    std::vector<int> labels(static_cast<std::size_t>(rows * cols));
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            labels[r * cols + c] = (r >= rows / 2 ? 2 : 0) + (c >= cols / 2 ? 1 : 0);
        }
    }
    return mesh_to_graph(mesh).with_labels(std::move(labels));
}

TriangleMesh read_off(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open mesh file " + path.string());

    // Tokenize, dropping '#' comments.
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string tok;
        while (ls >> tok) tokens.push_back(tok);
    }
    std::size_t pos = 0;
    auto fail = [&](const std::string& msg) -> void {
        throw std::runtime_error("malformed OFF file " + path.string() + ": " + msg);
    };
    if (tokens.empty() || tokens[0] != "OFF") fail("missing OFF header");
    ++pos;
    auto next_number = [&](const char* what) -> double {
        if (pos >= tokens.size()) fail(std::string("unexpected end of file reading ") + what);
        const std::string& tok = tokens[pos++];
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(tok, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != tok.size()) fail(std::string("bad ") + what + " '" + tok + "'");
        return v;
    };
    auto next_index = [&](const char* what) -> Index {
        const double v = next_number(what);
        if (v < 0 || v != std::floor(v)) fail(std::string("bad ") + what);
        return static_cast<Index>(v);
    };
    const Index nv = next_index("vertex count");
    const Index nf = next_index("face count");
    next_index("edge count");

    TriangleMesh mesh;
    mesh.vertices.resize(nv, 3);
    for (Index v = 0; v < nv; ++v) {
        for (int k = 0; k < 3; ++k) mesh.vertices(v, k) = next_number("vertex coordinate");
    }
    mesh.faces.reserve(static_cast<std::size_t>(nf));
    for (Index f = 0; f < nf; ++f) {
        const Index arity = next_index("face size");
        if (arity != 3) fail("face " + std::to_string(f) + " has " + std::to_string(arity) + " vertices; only triangles are supported");
        std::array<Index, 3> face{};
        for (auto& idx : face) {
            idx = next_index("face index");
            if (idx >= nv) fail("face " + std::to_string(f) + " references missing vertex");
        }
        mesh.faces.push_back(face);
    }
    return mesh;
}

Graph load_mesh_as_graph(const std::filesystem::path& path) { return mesh_to_graph(read_off(path)); }

std::uint64_t graph_content_hash(const Graph& g) {
    auto bytes = [](const auto& vec) {
        return std::string_view(reinterpret_cast<const char*>(vec.data()), vec.size() * sizeof(vec[0]));
    };
    const Index n = g.num_nodes();
    std::uint64_t h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&n), sizeof(n)));
    h = fnv1a64(bytes(g.row_ptr()), h);
    h = fnv1a64(bytes(g.col_idx()), h);
    h = fnv1a64(bytes(g.edge_weight()), h);
    return h;
}

}  // namespace tide
