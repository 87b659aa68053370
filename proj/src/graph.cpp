#include "graph.hpp"

#include <algorithm>
#include <cmath>

namespace graphfm {

bool SparseGraph::has_edge(NodeId u, NodeId v) const {
    const auto nb = neighbors(u);
    return std::binary_search(nb.begin(), nb.end(), v);
}

std::uint64_t SparseGraph::structure_hash() const {
    std::uint64_t h = fnv1a64(&num_nodes, sizeof(num_nodes));
    h = fnv1a64(row_offsets.data(), row_offsets.size() * sizeof(std::uint64_t), h);
    h = fnv1a64(col_indices.data(), col_indices.size() * sizeof(NodeId), h);
    return h;
}

void SparseGraph::validate() const {
    require(row_offsets.size() == static_cast<std::size_t>(num_nodes) + 1,
            Status::shape_error, "graph: offset array size mismatch");
    for (std::int64_t u = 0; u < num_nodes; ++u) {
        const auto nb = neighbors(static_cast<NodeId>(u));
        for (std::size_t i = 0; i < nb.size(); ++i) {
            require(nb[i] < num_nodes, Status::bounds_error, "graph: column index out of range");
            require(nb[i] != static_cast<NodeId>(u), Status::invalid_argument, "graph: self-loop");
            if (i > 0)
                require(nb[i] > nb[i - 1], Status::invalid_argument,
                        "graph: columns not strictly increasing");
        }
    }
}

SparseGraph build_graph(std::int64_t declared_nodes, std::vector<EdgePair> pairs) {
    // Normalize to (min,max), drop self-loops, dedup.
    std::vector<EdgePair> undirected;
    undirected.reserve(pairs.size());
    NodeId max_id = 0;
    for (const auto& [a, b] : pairs) {
        if (a == b) continue;
        undirected.emplace_back(std::min(a, b), std::max(a, b));
        max_id = std::max(max_id, std::max(a, b));
    }
    std::sort(undirected.begin(), undirected.end());
    undirected.erase(std::unique(undirected.begin(), undirected.end()), undirected.end());

    SparseGraph g;
    if (declared_nodes >= 0) {
        for (const auto& [a, b] : undirected)
            require(b < declared_nodes, Status::bounds_error,
                    "edge index " + std::to_string(b) + " >= declared node count " +
                        std::to_string(declared_nodes));
        g.num_nodes = declared_nodes;
    } else {
        g.num_nodes = undirected.empty() ? 0 : static_cast<std::int64_t>(max_id) + 1;
        // Compact ids if some in [0, max] never occur.
        std::vector<bool> seen(static_cast<std::size_t>(g.num_nodes), false);
        for (const auto& [a, b] : undirected) seen[a] = seen[b] = true;
        std::int64_t used = static_cast<std::int64_t>(std::count(seen.begin(), seen.end(), true));
        if (used != g.num_nodes) {
            std::vector<NodeId> remap(static_cast<std::size_t>(g.num_nodes), 0);
            g.original_ids.reserve(static_cast<std::size_t>(used));
            NodeId next = 0;
            for (std::int64_t i = 0; i < g.num_nodes; ++i) {
                if (seen[i]) {
                    remap[i] = next++;
                    g.original_ids.push_back(static_cast<NodeId>(i));
                }
            }
            for (auto& [a, b] : undirected) {
                a = remap[a];
                b = remap[b];
                if (a > b) std::swap(a, b);
            }
            std::sort(undirected.begin(), undirected.end());
            g.num_nodes = used;
        }
    }

    std::vector<std::int64_t> deg(static_cast<std::size_t>(g.num_nodes), 0);
    for (const auto& [a, b] : undirected) {
        ++deg[a];
        ++deg[b];
    }
    g.row_offsets.assign(static_cast<std::size_t>(g.num_nodes) + 1, 0);
    for (std::int64_t u = 0; u < g.num_nodes; ++u)
        g.row_offsets[u + 1] = g.row_offsets[u] + static_cast<std::uint64_t>(deg[u]);
    g.col_indices.resize(g.row_offsets.back());
    std::vector<std::uint64_t> cursor(g.row_offsets.begin(), g.row_offsets.end() - 1);
    for (const auto& [a, b] : undirected) {
        g.col_indices[cursor[a]++] = b;
        g.col_indices[cursor[b]++] = a;
    }
    for (std::int64_t u = 0; u < g.num_nodes; ++u)
        std::sort(g.col_indices.begin() + static_cast<std::int64_t>(g.row_offsets[u]),
                  g.col_indices.begin() + static_cast<std::int64_t>(g.row_offsets[u + 1]));
    return g;
}

std::vector<std::int64_t> degree_vector(const SparseGraph& g) {
    std::vector<std::int64_t> deg(static_cast<std::size_t>(g.num_nodes));
    for (std::int64_t u = 0; u < g.num_nodes; ++u) deg[u] = g.degree(static_cast<NodeId>(u));
    return deg;
}

NormalizedAdjacency normalize_adjacency(const SparseGraph& g) {
    require(g.undirected_edges() > 0, Status::invalid_argument,
            "normalize_adjacency: graph has no edges");
    NormalizedAdjacency m;
    m.num_nodes = g.num_nodes;
    m.row_offsets = g.row_offsets;
    m.col_indices = g.col_indices;
    m.values.resize(g.col_indices.size());

    // 1/sqrt(d_u * d_v) in one sqrt so closed-form values come out exact.
    std::vector<std::int64_t> deg = degree_vector(g);
    for (std::int64_t u = 0; u < g.num_nodes; ++u) {
        for (std::uint64_t i = g.row_offsets[u]; i < g.row_offsets[u + 1]; ++i)
            m.values[i] =
                1.0 / std::sqrt(static_cast<double>(deg[u] * deg[m.col_indices[i]]));
    }
    return m;
}

MatD spmm(const NormalizedAdjacency& m, const MatD& x) {
    require(x.rows() == m.num_nodes, Status::shape_error, "spmm: row count mismatch");
    MatD out(m.num_nodes, x.cols());
    const std::int64_t k = x.cols();
#pragma omp parallel for schedule(dynamic, 64) if (m.num_nodes > 256)
    for (std::int64_t u = 0; u < m.num_nodes; ++u) {
        double* orow = out.row(u);
        for (std::uint64_t i = m.row_offsets[u]; i < m.row_offsets[u + 1]; ++i) {
            const double w = m.values[i];
            const double* xrow = x.row(m.col_indices[i]);
            for (std::int64_t j = 0; j < k; ++j) orow[j] += w * xrow[j];
        }
    }
    return out;
}

MaskedAdjacency mask_edges(const SparseGraph& g, std::span<const EdgePair> batch_edges) {
    MaskedAdjacency view;
    view.graph = &g;
    view.masked.reserve(batch_edges.size() * 2);
    for (const auto& [u, v] : batch_edges) {
        require(u < g.num_nodes && v < g.num_nodes, Status::bounds_error,
                "mask_edges: node out of range");
        require(g.has_edge(u, v), Status::invalid_argument,
                "mask_edges: edge (" + std::to_string(u) + "," + std::to_string(v) +
                    ") not present");
        view.masked.insert(edge_key(u, v));
    }
    view.degree = degree_vector(g);
    for (std::uint64_t key : view.masked) {
        --view.degree[key >> 32];
        --view.degree[key & 0xffffffffull];
    }
    return view;
}

MatD spmm(const MaskedAdjacency& m, const MatD& x) {
    const SparseGraph& g = *m.graph;
    require(x.rows() == g.num_nodes, Status::shape_error, "spmm(masked): row count mismatch");
    MatD out(g.num_nodes, x.cols());
    const std::int64_t k = x.cols();
#pragma omp parallel for schedule(dynamic, 64) if (g.num_nodes > 256)
    for (std::int64_t u = 0; u < g.num_nodes; ++u) {
        double* orow = out.row(u);
        if (m.degree[u] <= 0) continue;
        for (NodeId v : g.neighbors(static_cast<NodeId>(u))) {
            if (m.masked.count(edge_key(static_cast<NodeId>(u), v))) continue;
            const double w = 1.0 / std::sqrt(static_cast<double>(m.degree[u] * m.degree[v]));
            const double* xrow = x.row(v);
            for (std::int64_t j = 0; j < k; ++j) orow[j] += w * xrow[j];
        }
    }
    return out;
}

}  // namespace graphfm
