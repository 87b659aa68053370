#pragma once

#include <map>
#include <string>
#include <vector>

#include "graph.hpp"

namespace graphfm {

struct RecallOptions {
    std::vector<std::int64_t> cutoffs{20, 40};
    bool micro = false;                     // micro-average over test edges
    std::int64_t partition_boundary = -1;   // bipartite candidate restriction
};

struct RecallReport {
    std::map<std::int64_t, double> recall;  // cutoff -> mean Recall@N
    std::int64_t query_count = 0;
    std::int64_t skipped = 0;  // queries with an empty candidate pool
};

// Full-rank test: for every node with at least one test neighbor, rank all
// nodes not connected to it in the training graph (excluding itself) by
// embedding dot product, descending, ties broken by node id. Recall@N is
// |top-N intersect test neighbors| / |test neighbors|, macro-averaged over
// query nodes (or micro-averaged over test edges).
RecallReport recall_at_n(const MatD& embeddings, const SparseGraph& train,
                         const std::vector<EdgePair>& test_edges, const RecallOptions& opt);

// Node classification as link prediction against class nodes: rows
// [normal_nodes, normal_nodes + class_count) of `embeddings` are the class
// nodes; prediction is the argmax class score, ties to the lowest index.
std::vector<std::int32_t> classify_by_class_nodes(const MatD& embeddings,
                                                  std::int64_t normal_nodes,
                                                  std::int32_t class_count,
                                                  const std::vector<NodeId>& test_nodes);

struct ClassificationMetrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
};

// Standard definitions; classes absent from both predictions and truths
// contribute F1 = 0 to the macro average.
ClassificationMetrics accuracy_macro_f1(const std::vector<std::int32_t>& preds,
                                        const std::vector<std::int32_t>& truths,
                                        std::int32_t class_count);

// Node-task k-shot split: at most k labeled nodes per class, uniform.
std::vector<std::pair<NodeId, std::int32_t>> k_shot_node_split(const SparseGraph& g,
                                                               std::int64_t k,
                                                               std::uint64_t seed);

// Link-task k-shot split: greedy pass over a shuffled edge order keeping an
// edge only while both endpoints stay within k retained links.
std::vector<EdgePair> k_shot_link_split(const std::vector<EdgePair>& edges, std::int64_t k,
                                        std::uint64_t seed);

// Deterministic holdout split of a graph's undirected edges.
struct EdgeSplit {
    std::vector<EdgePair> train;
    std::vector<EdgePair> test;
};
EdgeSplit holdout_split(const SparseGraph& g, double test_fraction, std::uint64_t seed);

}  // namespace graphfm
