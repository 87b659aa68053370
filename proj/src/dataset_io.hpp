#pragma once

#include <optional>
#include <string>
#include <vector>

#include "graph.hpp"

namespace graphfm {

enum class EdgeFormat { tsv_edges, dataset_dir };

// Edge-list text format: one "src<TAB>dst" (or space-separated) pair per
// line, optional "#nodes N" header, '#' lines are comments.
SparseGraph load_edge_tsv(const std::string& path);

// Dataset directory: edges.tsv plus meta.json; optional features.bin,
// labels.tsv, test.tsv, train_nodes.tsv, id_map.tsv.
SparseGraph load_dataset_dir(const std::string& dir);

SparseGraph load_edge_list(const std::string& path, EdgeFormat format);

void save_dataset_dir(const SparseGraph& g, const std::string& dir);

// features.bin / embeddings.bin: 16-byte header (magic "GFB1", u32 rows,
// u32 cols, u32 reserved) followed by row-major little-endian f32 data.
MatF read_feature_matrix(const std::string& path);
void write_feature_matrix(const std::string& path, const MatF& m);

// Held-out edge pairs for evaluation ("u<TAB>v" per line).
std::vector<EdgePair> load_pair_tsv(const std::string& path);
void save_pair_tsv(const std::string& path, const std::vector<EdgePair>& pairs);

std::vector<NodeId> load_node_list(const std::string& path);
void save_node_list(const std::string& path, const std::vector<NodeId>& nodes);

bool file_exists(const std::string& path);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
std::uint64_t hash_file(const std::string& path);

}  // namespace graphfm
