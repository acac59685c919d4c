#include "tide/graph_io.hpp"

#include <json.hpp>

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tide {

namespace fs = std::filesystem;

namespace {

void append_double(std::string& out, double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
}

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

template <class T>
T parse_number(std::string_view tok, const fs::path& file, std::size_t line_no) {
    tok = trim(tok);
    T value{};
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size()) {
        throw std::runtime_error(file.string() + ":" + std::to_string(line_no) + ": cannot parse '" +
                                 std::string(tok) + "'");
    }
    return value;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

void save_graph_dir(const Graph& g, const fs::path& dir) {
    fs::create_directories(dir);

    std::string edges;
    bool weighted = false;
    for (double w : g.edge_weight()) weighted |= (w != 1.0);
    for (const Edge& e : g.edges()) {
        edges += std::to_string(e.src);
        edges += '\t';
        edges += std::to_string(e.dst);
        if (weighted) {
            edges += '\t';
            append_double(edges, e.weight);
        }
        edges += '\n';
    }
    write_file(dir / "edges.tsv", edges);

    std::string feats;
    const Matrix& f = g.features();
    for (Index v = 0; v < f.rows(); ++v) {
        for (Index c = 0; c < f.cols(); ++c) {
            if (c > 0) feats += ',';
            append_double(feats, f(v, c));
        }
        feats += '\n';
    }
    write_file(dir / "features.csv", feats);

    std::string labels;
    for (std::size_t v = 0; v < g.labels().size(); ++v) {
        if (g.labels()[v] < 0) continue;
        labels += std::to_string(v) + ',' + std::to_string(g.labels()[v]) + '\n';
    }
    write_file(dir / "labels.csv", labels);

    nlohmann::json masks = {{"train", mask_indices(g.masks().train)},
                            {"val", mask_indices(g.masks().val)},
                            {"test", mask_indices(g.masks().test)}};
    write_file(dir / "masks.json", masks.dump() + "\n");
}

Graph load_graph_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("dataset directory not found: " + dir.string());

    // features.csv fixes the node count; edges may not mention isolated nodes.
    std::vector<std::vector<double>> rows;
    {
        const fs::path path = dir / "features.csv";
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open " + path.string());
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (trim(line).empty()) {
                rows.emplace_back();
                continue;
            }
            std::vector<double> row;
            for (auto tok : split(line, ',')) row.push_back(parse_number<double>(tok, path, line_no));
            rows.push_back(std::move(row));
        }
    }
    const auto n = static_cast<Index>(rows.size());
    const Index dim = rows.empty() ? 0 : static_cast<Index>(rows.front().size());
    Matrix features(n, dim);
    for (Index v = 0; v < n; ++v) {
        if (static_cast<Index>(rows[v].size()) != dim) {
            throw std::runtime_error("features.csv: row " + std::to_string(v + 1) + " has " +
                                     std::to_string(rows[v].size()) + " columns, expected " + std::to_string(dim));
        }
        for (Index c = 0; c < dim; ++c) features(v, c) = rows[v][c];
    }

    std::vector<Edge> edges;
    {
        const fs::path path = dir / "edges.tsv";
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open " + path.string());
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (trim(line).empty()) continue;
            const auto cols = split(line, '\t');
            if (cols.size() != 2 && cols.size() != 3) {
                throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected 2 or 3 columns");
            }
            Edge e;
            e.src = parse_number<Index>(cols[0], path, line_no);
            e.dst = parse_number<Index>(cols[1], path, line_no);
            if (cols.size() == 3) e.weight = parse_number<double>(cols[2], path, line_no);
            edges.push_back(e);
        }
    }

    std::vector<int> labels(static_cast<std::size_t>(n), kUnlabeled);
    if (const fs::path path = dir / "labels.csv"; fs::exists(path)) {
        std::ifstream in(path);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (trim(line).empty()) continue;
            const auto cols = split(line, ',');
            if (cols.size() != 2) throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected node_id,class_id");
            const auto v = parse_number<Index>(cols[0], path, line_no);
            const auto c = parse_number<int>(cols[1], path, line_no);
            if (v < 0 || v >= n || c < 0) throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": label out of range");
            labels[v] = c;
        }
    }

    SplitMasks masks;
    if (const fs::path path = dir / "masks.json"; fs::exists(path)) {
        std::ifstream in(path);
        const auto j = nlohmann::json::parse(in);
        auto read = [&](const char* key) {
            Mask m(static_cast<std::size_t>(n), false);
            if (!j.contains(key)) return m;
            for (const auto& id : j.at(key)) {
                const auto v = id.get<Index>();
                if (v < 0 || v >= n) throw std::runtime_error("masks.json: node id out of range");
                m[v] = true;
            }
            return m;
        };
        masks = {read("train"), read("val"), read("test")};
    }

    Graph g = Graph::from_edges(n, edges).with_features(std::move(features)).with_labels(std::move(labels));
    if (!masks.train.empty()) g = g.with_masks(std::move(masks));
    g.validate();
    return g;
}

}  // namespace tide
