#pragma once

#include <cstdint>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "common.hpp"
#include "matrix.hpp"

namespace graphfm {

using EdgePair = std::pair<NodeId, NodeId>;

inline std::uint64_t edge_key(NodeId u, NodeId v) {
    const std::uint64_t lo = std::min(u, v);
    const std::uint64_t hi = std::max(u, v);
    return (lo << 32) | hi;
}

// Immutable undirected graph in CSR form. Column indices are strictly
// increasing within each row and every edge is stored in both directions.
// Optional per-node dense features and class labels ride along.
struct SparseGraph {
    std::int64_t num_nodes = 0;
    std::vector<std::uint64_t> row_offsets;  // num_nodes + 1
    std::vector<NodeId> col_indices;

    MatF features;                      // rows()==0 when absent
    std::vector<std::int32_t> labels;   // empty when absent; -1 = unlabeled
    std::int32_t class_count = 0;       // 0 = no label space
    std::vector<NodeId> original_ids;   // remap table when input ids were compacted

    std::int64_t directed_entries() const { return static_cast<std::int64_t>(col_indices.size()); }
    std::int64_t undirected_edges() const { return directed_entries() / 2; }
    bool has_features() const { return features.rows() > 0; }
    bool has_labels() const { return !labels.empty(); }

    std::span<const NodeId> neighbors(NodeId u) const {
        return {col_indices.data() + row_offsets[u],
                col_indices.data() + row_offsets[u + 1]};
    }
    std::int64_t degree(NodeId u) const {
        return static_cast<std::int64_t>(row_offsets[u + 1] - row_offsets[u]);
    }
    bool has_edge(NodeId u, NodeId v) const;

    // Fingerprint of the CSR structure (node count, offsets, columns).
    std::uint64_t structure_hash() const;

    void validate() const;
};

// Builds a symmetric deduplicated CSR graph from raw (possibly directed,
// possibly duplicated) pairs. Self-loops are dropped. When declared_nodes < 0
// the node count is inferred from the largest id; if some ids in that range
// never occur, ids are compacted and the remap recorded in original_ids.
SparseGraph build_graph(std::int64_t declared_nodes, std::vector<EdgePair> pairs);

std::vector<std::int64_t> degree_vector(const SparseGraph& g);

// Symmetric Laplacian-normalized adjacency: entry (u,v) = 1/sqrt(d_u * d_v).
struct NormalizedAdjacency {
    std::int64_t num_nodes = 0;
    std::vector<std::uint64_t> row_offsets;
    std::vector<NodeId> col_indices;
    std::vector<double> values;
};

NormalizedAdjacency normalize_adjacency(const SparseGraph& g);

// Exact sparse-dense product: out = A_norm * x.
MatD spmm(const NormalizedAdjacency& m, const MatD& x);

// Zero-copy masked view over a graph's CSR with a batch of undirected edges
// removed. Normalization values are recomputed from the masked degrees on
// the fly during spmm.
struct MaskedAdjacency {
    const SparseGraph* graph = nullptr;
    std::unordered_set<std::uint64_t> masked;  // edge_key of removed edges
    std::vector<std::int64_t> degree;          // under the mask
    std::int64_t masked_degree(NodeId u) const { return degree[u]; }
};

MaskedAdjacency mask_edges(const SparseGraph& g, std::span<const EdgePair> batch_edges);

MatD spmm(const MaskedAdjacency& m, const MatD& x);

}  // namespace graphfm
