#include "tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

namespace graphfm {

namespace {

template <typename Adj>
MatD smooth_apply_impl(const Adj& adj, const MatD& x, int order) {
    require(order >= 1, Status::invalid_argument,
            "smooth_apply: order must be >= 1 (the identity ablation is a projector flag)");
    MatD power = spmm(adj, x);
    MatD acc = power;
    for (int l = 2; l <= order; ++l) {
        power = spmm(adj, power);
        add_inplace(acc, power);
    }
    return acc;
}

}  // namespace

MatD smooth_apply(const NormalizedAdjacency& adj, const MatD& x, int order) {
    return smooth_apply_impl(adj, x, order);
}

MatD smooth_apply(const MaskedAdjacency& adj, const MatD& x, int order) {
    return smooth_apply_impl(adj, x, order);
}

SmoothedAdjacencyOp::SmoothedAdjacencyOp(const NormalizedAdjacency& adj, int order,
                                         bool identity_ablation)
    : adj_(&adj), order_(order), identity_(identity_ablation) {
    if (identity_)
        require(order == 0, Status::config_error, "identity ablation requires order 0");
    else
        require(order >= 1, Status::invalid_argument, "smoothing order must be >= 1");
}

MatD SmoothedAdjacencyOp::apply(const MatD& x) const {
    if (identity_) return x;
    return smooth_apply(*adj_, x, order_);
}

SvdResult fast_svd(const LinearOperator& op, std::int64_t rank, int power_iters,
                   std::uint64_t seed) {
    const std::int64_t n = op.rows();
    const std::int64_t m = op.cols();
    require(rank >= 1, Status::invalid_argument, "fast_svd: rank must be positive");
    require(rank <= std::min(n, m), Status::bounds_error,
            "fast_svd: rank exceeds matrix dimensions");
    require(power_iters >= 0, Status::invalid_argument, "fast_svd: negative power iterations");

    const std::int64_t oversample = std::min<std::int64_t>(8, std::min(n, m) - rank);
    const std::int64_t width = rank + oversample;

    Rng rng(derive_seed(seed, {0x5fd5u}));
    MatD omega(m, width);
    fill_gaussian(omega, rng);

    MatD y = op.apply(omega);  // n x width
    orthonormalize_columns(y, rng);
    for (int it = 0; it < power_iters; ++it) {
        MatD z = op.apply_adjoint(y);  // m x width
        orthonormalize_columns(z, rng);
        y = op.apply(z);
        orthonormalize_columns(y, rng);
    }

    // B = Y^T A  (width x m), realized as (A^T Y)^T.
    MatD bt = op.apply_adjoint(y);  // m x width
    require(all_finite(bt), Status::numeric_error, "fast_svd: non-finite values in projection");

    // Small eigensolve of B B^T = (A^T Y)^T (A^T Y).
    MatD gram = matmul_tn(bt, bt);  // width x width
    EigResult eig = jacobi_eigh(std::move(gram));

    SvdResult out;
    out.sigma.resize(rank);
    MatD w(width, rank);
    for (std::int64_t j = 0; j < rank; ++j) {
        out.sigma[j] = std::sqrt(std::max(0.0, eig.values[j]));
        for (std::int64_t i = 0; i < width; ++i) w(i, j) = eig.vectors(i, j);
    }
    out.u = matmul(y, w);   // n x rank
    out.v = matmul(bt, w);  // m x rank, columns scaled by sigma
    for (std::int64_t j = 0; j < rank; ++j) {
        const double s = out.sigma[j];
        const double inv = s > 1e-12 ? 1.0 / s : 0.0;
        for (std::int64_t i = 0; i < m; ++i) out.v(i, j) *= inv;
    }
    return out;
}

Projector build_projector(const MatD& u, const std::vector<double>& lam, const MatD& v,
                          std::int64_t dim) {
    require(dim % 2 == 0, Status::shape_error, "projector dimension must be even");
    const std::int64_t r = dim / 2;
    require(u.cols() == r && v.cols() == r, Status::shape_error,
            "projector factors must have d/2 columns");
    require(static_cast<std::int64_t>(lam.size()) == r, Status::shape_error,
            "singular value count must be d/2");
    require(u.rows() == v.rows(), Status::shape_error, "U and V row counts differ");

    Projector p;
    p.rank_per_factor = r;
    p.matrix = MatD(u.rows(), dim);
    std::vector<double> root(lam.size());
    for (std::size_t j = 0; j < lam.size(); ++j) {
        require(lam[j] >= 0.0, Status::numeric_error, "negative singular value");
        root[j] = std::sqrt(lam[j]);
    }
    for (std::int64_t i = 0; i < u.rows(); ++i) {
        double* row = p.matrix.row(i);
        for (std::int64_t j = 0; j < r; ++j) {
            row[j] = u(i, j) * root[j];
            row[r + j] = v(i, j) * root[j];
        }
    }
    layer_norm_rows(p.matrix);
    return p;
}

Projector build_graph_projector(const SparseGraph& g, std::int64_t dim, int smoothing_order,
                                int power_iters, std::uint64_t seed) {
    require(dim % 2 == 0, Status::shape_error, "token dimension must be even");
    NormalizedAdjacency adj = normalize_adjacency(g);
    SmoothedAdjacencyOp op(adj, smoothing_order, smoothing_order == 0);
    SvdResult svd = fast_svd(op, dim / 2, power_iters, seed);
    Projector p = build_projector(svd.u, svd.sigma, svd.v, dim);
    p.smoothing_order = smoothing_order;
    p.seed = seed;
    return p;
}

TokenTable tokenize(const SparseGraph& g, const Projector& p) {
    require(p.matrix.rows() == g.num_nodes, Status::shape_error,
            "projector built for a different node count");
    TokenTable t;
    if (p.smoothing_order == 0) {
        t.embeddings = p.matrix;  // identity-input ablation
    } else {
        NormalizedAdjacency adj = normalize_adjacency(g);
        t.embeddings = smooth_apply(adj, p.matrix, p.smoothing_order);
    }
    t.graph_hash = g.structure_hash();
    t.projector_seed = p.seed;
    t.smoothing_order = p.smoothing_order;
    return t;
}

TokenTable tokenize_masked(const MaskedAdjacency& view, const Projector& p) {
    require(p.matrix.rows() == view.graph->num_nodes, Status::shape_error,
            "projector built for a different node count");
    TokenTable t;
    if (p.smoothing_order == 0) {
        t.embeddings = p.matrix;
    } else {
        t.embeddings = smooth_apply(view, p.matrix, p.smoothing_order);
    }
    t.graph_hash = view.graph->structure_hash();
    t.projector_seed = p.seed;
    t.smoothing_order = p.smoothing_order;
    return t;
}

ProjectionVariant parse_variant(const std::string& name) {
    if (name == "one_hot") return ProjectionVariant::one_hot;
    if (name == "degree") return ProjectionVariant::degree;
    if (name == "random") return ProjectionVariant::random;
    fail(Status::config_error, "unknown projection variant: " + name);
}

VariantTable build_variant_table(const SparseGraph& g, ProjectionVariant kind, std::int64_t dim,
                                 std::uint64_t seed) {
    VariantTable table;
    table.kind = kind;
    table.dim = dim;
    table.node_slot.resize(static_cast<std::size_t>(g.num_nodes));

    switch (kind) {
        case ProjectionVariant::one_hot: {
            // Shared id table; ids fold mod the table size. Only rows some node
            // actually maps to are allocated.
            std::map<std::int64_t, std::int64_t> slot_of;
            for (std::int64_t v = 0; v < g.num_nodes; ++v) {
                const std::int64_t key = v % kOneHotTableSize;
                auto [it, _] = slot_of.try_emplace(key, static_cast<std::int64_t>(slot_of.size()));
                table.node_slot[v] = it->second;
            }
            table.learnable = true;
            table.weights = MatD(static_cast<std::int64_t>(slot_of.size()), dim);
            break;
        }
        case ProjectionVariant::degree: {
            std::map<std::int64_t, std::int64_t> slot_of;
            for (std::int64_t v = 0; v < g.num_nodes; ++v) {
                const std::int64_t key = g.degree(static_cast<NodeId>(v));
                auto [it, _] = slot_of.try_emplace(key, static_cast<std::int64_t>(slot_of.size()));
                table.node_slot[v] = it->second;
            }
            table.learnable = true;
            table.weights = MatD(static_cast<std::int64_t>(slot_of.size()), dim);
            break;
        }
        case ProjectionVariant::random: {
            // Fixed unlearnable rows; each node's row depends only on (seed, id)
            // so the table is reproducible and ids keep their vectors across runs.
            table.learnable = false;
            table.weights = MatD(g.num_nodes, dim);
            const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
            for (std::int64_t v = 0; v < g.num_nodes; ++v) {
                Rng row_rng(derive_seed(seed, {0x72616e64ull, static_cast<std::uint64_t>(v)}));
                for (std::int64_t j = 0; j < dim; ++j)
                    table.weights(v, j) = row_rng.uniform(-bound, bound);
                table.node_slot[v] = v;
            }
            return table;
        }
    }

    // Xavier-uniform init for the learnable tables.
    Rng rng(derive_seed(seed, {0x7661722dull}));
    const double bound = std::sqrt(6.0 / static_cast<double>(table.weights.rows() + dim));
    fill_uniform(table.weights, rng, -bound, bound);
    return table;
}

TokenTable project_variant(const SparseGraph& g, const VariantTable& table) {
    require(table.node_slot.size() == static_cast<std::size_t>(g.num_nodes), Status::shape_error,
            "variant table built for a different graph");
    TokenTable t;
    t.embeddings = MatD(g.num_nodes, table.dim);
    for (std::int64_t v = 0; v < g.num_nodes; ++v)
        t.embeddings.set_row(v, table.weights.row(table.node_slot[v]));
    t.graph_hash = g.structure_hash();
    return t;
}

std::vector<EdgePair> features_to_edges(const MatF& features, std::int64_t batch_size,
                                        std::int64_t edges_per_node) {
    require(features.rows() > 0, Status::invalid_argument, "features_to_edges: no features");
    require(batch_size >= 1 && edges_per_node >= 1, Status::invalid_argument,
            "features_to_edges: batch size and k must be positive");
    const std::int64_t n = features.rows();
    const std::int64_t f = features.cols();

    struct Scored {
        double score;
        NodeId i, j;
    };
    std::vector<EdgePair> picked;

    for (std::int64_t start = 0; start < n; start += batch_size) {
        const std::int64_t stop = std::min(n, start + batch_size);
        std::vector<Scored> cand;
        cand.reserve(static_cast<std::size_t>((stop - start) * (n - 1)));
        for (std::int64_t i = start; i < stop; ++i) {
            const float* fi = features.row(i);
            for (std::int64_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const float* fj = features.row(j);
                double s = 0.0;
                for (std::int64_t c = 0; c < f; ++c)
                    s += static_cast<double>(fi[c]) * static_cast<double>(fj[c]);
                cand.push_back({s, static_cast<NodeId>(i), static_cast<NodeId>(j)});
            }
        }
        const std::size_t keep =
            std::min(cand.size(), static_cast<std::size_t>((stop - start) * edges_per_node));
        auto better = [](const Scored& a, const Scored& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.i != b.i) return a.i < b.i;
            return a.j < b.j;
        };
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::int64_t>(keep),
                          cand.end(), better);
        for (std::size_t c = 0; c < keep; ++c) picked.emplace_back(cand[c].i, cand[c].j);
    }

    // Undirected dedup.
    for (auto& [a, b] : picked)
        if (a > b) std::swap(a, b);
    std::sort(picked.begin(), picked.end());
    picked.erase(std::unique(picked.begin(), picked.end()), picked.end());
    return picked;
}

SparseGraph class_nodes_augment(const SparseGraph& g,
                                const std::vector<std::pair<NodeId, std::int32_t>>& train_labels) {
    require(g.class_count > 0, Status::invalid_argument,
            "class_nodes_augment: graph has no class space");
    std::vector<bool> labeled(static_cast<std::size_t>(g.num_nodes), false);
    std::vector<EdgePair> pairs;
    pairs.reserve(g.col_indices.size() / 2 + train_labels.size());
    for (std::int64_t u = 0; u < g.num_nodes; ++u)
        for (NodeId v : g.neighbors(static_cast<NodeId>(u)))
            if (static_cast<NodeId>(u) < v) pairs.emplace_back(static_cast<NodeId>(u), v);

    for (const auto& [node, cls] : train_labels) {
        require(node < g.num_nodes, Status::bounds_error, "class_nodes_augment: node out of range");
        require(cls >= 0 && cls < g.class_count, Status::bounds_error,
                "class_nodes_augment: class index out of range");
        require(!labeled[node], Status::invalid_argument,
                "class_nodes_augment: duplicate label for node " + std::to_string(node));
        labeled[node] = true;
        pairs.emplace_back(node, static_cast<NodeId>(g.num_nodes + cls));
    }

    SparseGraph out = build_graph(g.num_nodes + g.class_count, std::move(pairs));
    out.class_count = g.class_count;
    out.features = g.features;
    out.labels = g.labels;
    return out;
}

void save_token_table(const TokenTable& t, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), Status::io_error, "cannot write " + path);
    out.write("GFTK", 4);
    const std::uint64_t n = static_cast<std::uint64_t>(t.embeddings.rows());
    const std::uint32_t d = static_cast<std::uint32_t>(t.embeddings.cols());
    const std::uint32_t order = static_cast<std::uint32_t>(t.smoothing_order);
    out.write(reinterpret_cast<const char*>(&n), 8);
    out.write(reinterpret_cast<const char*>(&d), 4);
    out.write(reinterpret_cast<const char*>(&order), 4);
    out.write(reinterpret_cast<const char*>(&t.projector_seed), 8);
    MatF data = cast_mat<double, float>(t.embeddings);
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(sizeof(float) * data.size()));
    require(out.good(), Status::io_error, "short write to " + path);
}

TokenTable load_token_table(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), Status::io_error, "cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    require(in.good() && std::memcmp(magic, "GFTK", 4) == 0, Status::format_error,
            path + ": bad token file magic");
    std::uint64_t n = 0, seed = 0;
    std::uint32_t d = 0, order = 0;
    in.read(reinterpret_cast<char*>(&n), 8);
    in.read(reinterpret_cast<char*>(&d), 4);
    in.read(reinterpret_cast<char*>(&order), 4);
    in.read(reinterpret_cast<char*>(&seed), 8);
    require(in.good(), Status::io_error, path + ": truncated header");
    MatF data(static_cast<std::int64_t>(n), static_cast<std::int64_t>(d));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(sizeof(float) * data.size()));
    require(in.good(), Status::io_error, path + ": truncated token data");
    TokenTable t;
    t.embeddings = cast_mat<float, double>(data);
    t.projector_seed = seed;
    t.smoothing_order = static_cast<int>(order);
    return t;
}

std::string projector_cache_name(std::uint64_t graph_hash, std::int64_t dim, int order,
                                 std::uint64_t seed) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "proj_%016llx_d%lld_l%d_s%016llx.bin",
                  static_cast<unsigned long long>(graph_hash), static_cast<long long>(dim), order,
                  static_cast<unsigned long long>(seed));
    return buf;
}

void save_projector(const Projector& p, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), Status::io_error, "cannot write " + path);
    out.write("GFPJ", 4);
    const std::uint64_t n = static_cast<std::uint64_t>(p.matrix.rows());
    const std::uint32_t d = static_cast<std::uint32_t>(p.matrix.cols());
    const std::uint32_t order = static_cast<std::uint32_t>(p.smoothing_order);
    out.write(reinterpret_cast<const char*>(&n), 8);
    out.write(reinterpret_cast<const char*>(&d), 4);
    out.write(reinterpret_cast<const char*>(&order), 4);
    out.write(reinterpret_cast<const char*>(&p.seed), 8);
    out.write(reinterpret_cast<const char*>(p.matrix.data()),
              static_cast<std::streamsize>(sizeof(double) * p.matrix.size()));
    require(out.good(), Status::io_error, "short write to " + path);
}

Projector load_projector(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), Status::io_error, "cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    require(in.good() && std::memcmp(magic, "GFPJ", 4) == 0, Status::format_error,
            path + ": bad projector file magic");
    std::uint64_t n = 0, seed = 0;
    std::uint32_t d = 0, order = 0;
    in.read(reinterpret_cast<char*>(&n), 8);
    in.read(reinterpret_cast<char*>(&d), 4);
    in.read(reinterpret_cast<char*>(&order), 4);
    in.read(reinterpret_cast<char*>(&seed), 8);
    require(in.good(), Status::io_error, path + ": truncated header");
    Projector p;
    p.matrix = MatD(static_cast<std::int64_t>(n), static_cast<std::int64_t>(d));
    in.read(reinterpret_cast<char*>(p.matrix.data()),
            static_cast<std::streamsize>(sizeof(double) * p.matrix.size()));
    require(in.good(), Status::io_error, path + ": truncated projector data");
    p.smoothing_order = static_cast<int>(order);
    p.seed = seed;
    p.rank_per_factor = p.matrix.cols() / 2;
    return p;
}

}  // namespace graphfm
