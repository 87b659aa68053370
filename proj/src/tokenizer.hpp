#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "graph.hpp"
#include "matrix.hpp"

namespace graphfm {

// Abstract n x m linear map applied to dense blocks. The tokenizer never
// materializes the smoothed adjacency; it works through this interface.
class LinearOperator {
public:
    virtual ~LinearOperator() = default;
    virtual std::int64_t rows() const = 0;
    virtual std::int64_t cols() const = 0;
    virtual MatD apply(const MatD& x) const = 0;          // A * x
    virtual MatD apply_adjoint(const MatD& x) const = 0;  // A^T * x
};

// out = (A + A^2 + ... + A^L) * x via L successive spmm calls.
MatD smooth_apply(const NormalizedAdjacency& adj, const MatD& x, int order);
MatD smooth_apply(const MaskedAdjacency& adj, const MatD& x, int order);

// Smoothed-adjacency operator sum_{l=1..L} A^l (symmetric). order == 0 with
// identity_ablation selects the identity operator instead.
class SmoothedAdjacencyOp : public LinearOperator {
public:
    SmoothedAdjacencyOp(const NormalizedAdjacency& adj, int order, bool identity_ablation = false);
    std::int64_t rows() const override { return adj_->num_nodes; }
    std::int64_t cols() const override { return adj_->num_nodes; }
    MatD apply(const MatD& x) const override;
    MatD apply_adjoint(const MatD& x) const override { return apply(x); }

private:
    const NormalizedAdjacency* adj_;
    int order_;
    bool identity_;
};

// Dense operator, used by tests and small-scale oracles.
class DenseOp : public LinearOperator {
public:
    explicit DenseOp(MatD a) : a_(std::move(a)) {}
    std::int64_t rows() const override { return a_.rows(); }
    std::int64_t cols() const override { return a_.cols(); }
    MatD apply(const MatD& x) const override { return matmul(a_, x); }
    MatD apply_adjoint(const MatD& x) const override { return matmul_tn(a_, x); }

private:
    MatD a_;
};

struct SvdResult {
    MatD u;                      // rows() x rank
    std::vector<double> sigma;   // non-negative, descending
    MatD v;                      // cols() x rank
};

// Randomized truncated SVD: Gaussian test matrix with slight oversampling,
// `power_iters` rounds of subspace iteration against the operator,
// orthonormalization between applications, then a small dense eigensolve of
// the projected Gram matrix.
SvdResult fast_svd(const LinearOperator& op, std::int64_t rank, int power_iters, std::uint64_t seed);

// Topology-aware projection matrix LN(U sqrt(S) || V sqrt(S)) with bookkeeping.
struct Projector {
    MatD matrix;                // num_nodes x d, rows layer-normalized
    int smoothing_order = 0;
    std::int64_t rank_per_factor = 0;  // d / 2
    std::uint64_t seed = 0;
};

Projector build_projector(const MatD& u, const std::vector<double>& lam, const MatD& v,
                          std::int64_t dim);

// fast_svd + build_projector over a graph's smoothed adjacency.
// smoothing_order == 0 selects the identity-input ablation.
Projector build_graph_projector(const SparseGraph& g, std::int64_t dim, int smoothing_order,
                                int power_iters, std::uint64_t seed);

struct TokenTable {
    MatD embeddings;            // num_nodes x d
    std::uint64_t graph_hash = 0;
    std::uint64_t projector_seed = 0;
    int smoothing_order = 0;
};

// E = (A + ... + A^L) * P; row v is node v's token.
TokenTable tokenize(const SparseGraph& g, const Projector& p);

// Same contract against an explicitly masked adjacency (strict MAE path).
TokenTable tokenize_masked(const MaskedAdjacency& view, const Projector& p);

enum class ProjectionVariant { one_hot, degree, random };

ProjectionVariant parse_variant(const std::string& name);  // also accepts "svd"

// Ablation projections. one_hot/degree return rows of a learnable table;
// VariantTable keeps the table plus the node -> row mapping so training can
// scatter gradients back. random is fixed uniform(-1/sqrt(d), 1/sqrt(d)).
struct VariantTable {
    ProjectionVariant kind = ProjectionVariant::random;
    std::int64_t dim = 0;
    bool learnable = false;
    MatD weights;                       // slot-major table
    std::vector<std::int64_t> node_slot;  // node -> row in weights
};

// Shared-table size for the one_hot variant (node ids are folded mod this).
inline constexpr std::int64_t kOneHotTableSize = 100000;

VariantTable build_variant_table(const SparseGraph& g, ProjectionVariant kind, std::int64_t dim,
                                 std::uint64_t seed);

TokenTable project_variant(const SparseGraph& g, const VariantTable& table);

// Feature-to-edge conversion: per batch of `batch_size` rows, scores all
// batch x n candidate pairs with f_i . f_j and keeps the top batch_size * k.
std::vector<EdgePair> features_to_edges(const MatF& features, std::int64_t batch_size,
                                        std::int64_t edges_per_node);

// Appends one node per class and connects labeled training nodes to their
// class node. Original adjacency entries are preserved bit-exactly.
SparseGraph class_nodes_augment(const SparseGraph& g,
                                const std::vector<std::pair<NodeId, std::int32_t>>& train_labels);

// tokens.bin: header (magic "GFTK", u64 n, u32 d, u32 L, u64 seed) + f32 data.
void save_token_table(const TokenTable& t, const std::string& path);
TokenTable load_token_table(const std::string& path);

// Projector cache keyed by (graph hash, d, L, seed).
std::string projector_cache_name(std::uint64_t graph_hash, std::int64_t dim, int order,
                                 std::uint64_t seed);
void save_projector(const Projector& p, const std::string& path);
Projector load_projector(const std::string& path);

}  // namespace graphfm
