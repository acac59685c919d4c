#pragma once

#include "tide/graph.hpp"

#include <filesystem>

namespace tide {

// Dataset directory layout:
//   edges.tsv     src<TAB>dst[<TAB>weight], 0-based, each undirected edge once
//   features.csv  one comma separated row per node
//   labels.csv    node_id,class_id
//   masks.json    {"train":[ids],"val":[ids],"test":[ids]}
// Output is byte-stable: doubles use shortest round-trip formatting.
void save_graph_dir(const Graph& g, const std::filesystem::path& dir);
Graph load_graph_dir(const std::filesystem::path& dir);

}  // namespace tide
