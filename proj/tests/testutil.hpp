#pragma once

// Shared builders and independent oracles for the test suites. Everything
// here recomputes results densely / by brute force, separate from the
// sparse-operator production paths it checks.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "eval.hpp"
#include "graph.hpp"
#include "matrix.hpp"
#include "rng.hpp"
#include "tokenizer.hpp"
#include "transformer.hpp"

namespace graphfm::testing {

inline SparseGraph path_graph(std::int64_t n) {
    std::vector<EdgePair> pairs;
    for (std::int64_t i = 0; i + 1 < n; ++i)
        pairs.emplace_back(static_cast<NodeId>(i), static_cast<NodeId>(i + 1));
    return build_graph(n, std::move(pairs));
}

inline SparseGraph complete_graph(std::int64_t n) {
    std::vector<EdgePair> pairs;
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = i + 1; j < n; ++j)
            pairs.emplace_back(static_cast<NodeId>(i), static_cast<NodeId>(j));
    return build_graph(n, std::move(pairs));
}

inline SparseGraph star_graph(std::int64_t leaves) {
    std::vector<EdgePair> pairs;
    for (std::int64_t i = 1; i <= leaves; ++i) pairs.emplace_back(0, static_cast<NodeId>(i));
    return build_graph(leaves + 1, std::move(pairs));
}

// Erdos-Renyi-style random graph, guaranteed connected enough for tests by
// chaining a path through all nodes first.
inline SparseGraph random_graph(std::int64_t n, std::int64_t extra_edges, std::uint64_t seed,
                                bool with_path = true) {
    std::vector<EdgePair> pairs;
    Rng rng(seed);
    if (with_path)
        for (std::int64_t i = 0; i + 1 < n; ++i)
            pairs.emplace_back(static_cast<NodeId>(i), static_cast<NodeId>(i + 1));
    for (std::int64_t e = 0; e < extra_edges; ++e) {
        const NodeId u = static_cast<NodeId>(rng.below(static_cast<std::uint64_t>(n)));
        const NodeId v = static_cast<NodeId>(rng.below(static_cast<std::uint64_t>(n)));
        if (u != v) pairs.emplace_back(u, v);
    }
    return build_graph(n, std::move(pairs));
}

// ---- dense oracles ------------------------------------------------------

inline MatD dense_adjacency(const SparseGraph& g) {
    MatD a(g.num_nodes, g.num_nodes);
    for (std::int64_t u = 0; u < g.num_nodes; ++u)
        for (NodeId v : g.neighbors(static_cast<NodeId>(u))) a(u, v) = 1.0;
    return a;
}

// D^{-1/2} A D^{-1/2} computed densely.
inline MatD dense_normalized(const SparseGraph& g) {
    MatD a = dense_adjacency(g);
    std::vector<double> inv_sqrt(static_cast<std::size_t>(g.num_nodes), 0.0);
    for (std::int64_t u = 0; u < g.num_nodes; ++u) {
        double deg = 0.0;
        for (std::int64_t v = 0; v < g.num_nodes; ++v) deg += a(u, v);
        if (deg > 0.0) inv_sqrt[u] = 1.0 / std::sqrt(deg);
    }
    for (std::int64_t u = 0; u < g.num_nodes; ++u)
        for (std::int64_t v = 0; v < g.num_nodes; ++v) a(u, v) *= inv_sqrt[u] * inv_sqrt[v];
    return a;
}

// A_bar + A_bar^2 + ... + A_bar^L by repeated dense products.
inline MatD dense_smoothed(const SparseGraph& g, int order) {
    const MatD base = dense_normalized(g);
    MatD power = base;
    MatD acc = base;
    for (int l = 2; l <= order; ++l) {
        power = matmul(power, base);
        add_inplace(acc, power);
    }
    return acc;
}

// Exact truncated SVD of a symmetric matrix via its eigendecomposition:
// singular values are |lambda| sorted descending.
struct DenseSvd {
    MatD u;
    std::vector<double> sigma;
    MatD v;
};

inline DenseSvd dense_symmetric_svd(const MatD& a, std::int64_t rank) {
    EigResult eig = jacobi_eigh(a);
    const std::int64_t n = a.rows();
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::int64_t x, std::int64_t y) {
        return std::abs(eig.values[x]) > std::abs(eig.values[y]);
    });
    DenseSvd out;
    out.u = MatD(n, rank);
    out.v = MatD(n, rank);
    out.sigma.resize(rank);
    for (std::int64_t j = 0; j < rank; ++j) {
        const std::int64_t src = order[j];
        out.sigma[j] = std::abs(eig.values[src]);
        const double sign = eig.values[src] >= 0.0 ? 1.0 : -1.0;
        for (std::int64_t i = 0; i < n; ++i) {
            out.u(i, j) = eig.vectors(i, src);
            out.v(i, j) = sign * eig.vectors(i, src);
        }
    }
    return out;
}

inline double rank_k_residual(const MatD& a, const DenseSvd& svd) {
    // || A - U S V^T ||_F
    MatD approx(a.rows(), a.cols());
    for (std::size_t k = 0; k < svd.sigma.size(); ++k) {
        for (std::int64_t i = 0; i < a.rows(); ++i)
            for (std::int64_t j = 0; j < a.cols(); ++j)
                approx(i, j) += svd.sigma[k] * svd.u(i, static_cast<std::int64_t>(k)) *
                                svd.v(j, static_cast<std::int64_t>(k));
    }
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - approx.data()[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

// Straightforward per-head re-implementation of the two-stage anchor
// attention block, loops only, no blocked kernels. Used as the gradient-free
// functional oracle.
template <typename T>
Mat<T> dense_anchor_attention_oracle(const TransformerLayer<T>& layer, const Mat<T>& seq,
                                     const std::vector<std::int64_t>& anchors, int heads) {
    const std::int64_t n = seq.rows();
    const std::int64_t d = seq.cols();
    const std::int64_t dh = d / heads;
    const std::int64_t s = static_cast<std::int64_t>(anchors.size());
    auto head_vec = [&](const Mat<T>& w, const T* x, int h, std::vector<double>& out) {
        out.assign(static_cast<std::size_t>(dh), 0.0);
        for (std::int64_t c = 0; c < dh; ++c)
            for (std::int64_t r = 0; r < d; ++r)
                out[c] += static_cast<double>(x[r]) * static_cast<double>(w(r, h * dh + c));
    };
    auto softmax = [](std::vector<double>& v) {
        double hi = v[0];
        for (double x : v) hi = std::max(hi, x);
        double sum = 0.0;
        for (double& x : v) {
            x = std::exp(x - hi);
            sum += x;
        }
        for (double& x : v) x /= sum;
    };

    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    // Stage 1: anchor embeddings (concatenated heads).
    MatD anchor_emb(s, d);
    for (std::int64_t a = 0; a < s; ++a) {
        for (int h = 0; h < heads; ++h) {
            std::vector<double> q, k, v;
            head_vec(layer.wq, seq.row(anchors[a]), h, q);
            std::vector<double> logits(static_cast<std::size_t>(n));
            for (std::int64_t t = 0; t < n; ++t) {
                head_vec(layer.wk, seq.row(t), h, k);
                double dot = 0.0;
                for (std::int64_t c = 0; c < dh; ++c) dot += q[c] * k[c];
                logits[t] = dot * inv_sqrt;
            }
            softmax(logits);
            for (std::int64_t t = 0; t < n; ++t) {
                head_vec(layer.wv, seq.row(t), h, v);
                for (std::int64_t c = 0; c < dh; ++c)
                    anchor_emb(a, h * dh + c) += logits[t] * v[c];
            }
        }
    }
    // Stage 2: tokens attend over anchors; values are W_v of the stage-1
    // anchor embeddings.
    Mat<T> out(n, d);
    std::vector<std::vector<double>> v2(static_cast<std::size_t>(s));
    for (std::int64_t a = 0; a < s; ++a) {
        v2[a].assign(static_cast<std::size_t>(d), 0.0);
        for (int h = 0; h < heads; ++h) {
            std::vector<double> tmp;
            std::vector<double> row(static_cast<std::size_t>(d));
            for (std::int64_t c = 0; c < d; ++c) row[c] = anchor_emb(a, c);
            tmp.assign(static_cast<std::size_t>(dh), 0.0);
            for (std::int64_t c = 0; c < dh; ++c)
                for (std::int64_t r = 0; r < d; ++r)
                    tmp[c] += row[r] * static_cast<double>(layer.wv(r, h * dh + c));
            for (std::int64_t c = 0; c < dh; ++c) v2[a][h * dh + c] = tmp[c];
        }
    }
    MatD mixed(n, d);
    for (std::int64_t t = 0; t < n; ++t) {
        for (int h = 0; h < heads; ++h) {
            std::vector<double> q, k;
            head_vec(layer.wq, seq.row(t), h, q);
            std::vector<double> logits(static_cast<std::size_t>(s));
            for (std::int64_t a = 0; a < s; ++a) {
                head_vec(layer.wk, seq.row(anchors[a]), h, k);
                double dot = 0.0;
                for (std::int64_t c = 0; c < dh; ++c) dot += q[c] * k[c];
                logits[a] = dot * inv_sqrt;
            }
            softmax(logits);
            for (std::int64_t a = 0; a < s; ++a)
                for (std::int64_t c = 0; c < dh; ++c)
                    mixed(t, h * dh + c) += logits[a] * v2[a][h * dh + c];
        }
    }
    // Output projection + residual.
    for (std::int64_t t = 0; t < n; ++t)
        for (std::int64_t c = 0; c < d; ++c) {
            double acc = static_cast<double>(seq(t, c));
            for (std::int64_t r = 0; r < d; ++r)
                acc += mixed(t, r) * static_cast<double>(layer.wo(r, c));
            out(t, c) = static_cast<T>(acc);
        }
    return out;
}

// Brute-force Recall@N oracle: full sort per query with the same tie rule.
inline double recall_oracle(const MatD& emb, const SparseGraph& train,
                            const std::vector<EdgePair>& test_edges, std::int64_t cutoff) {
    const std::int64_t n = train.num_nodes;
    std::vector<std::vector<NodeId>> test_nb(static_cast<std::size_t>(n));
    for (const auto& [u, v] : test_edges) {
        test_nb[u].push_back(v);
        test_nb[v].push_back(u);
    }
    for (auto& nb : test_nb) {
        std::sort(nb.begin(), nb.end());
        nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    }
    double total = 0.0;
    std::int64_t queries = 0;
    for (std::int64_t q = 0; q < n; ++q) {
        if (test_nb[q].empty()) continue;
        std::vector<std::pair<double, NodeId>> scored;
        for (std::int64_t v = 0; v < n; ++v) {
            if (v == q || train.has_edge(static_cast<NodeId>(q), static_cast<NodeId>(v))) continue;
            double s = 0.0;
            for (std::int64_t j = 0; j < emb.cols(); ++j) s += emb(q, j) * emb(v, j);
            scored.emplace_back(s, static_cast<NodeId>(v));
        }
        if (scored.empty()) continue;
        ++queries;
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        std::int64_t hit = 0;
        for (std::int64_t i = 0; i < std::min<std::int64_t>(cutoff, static_cast<std::int64_t>(scored.size())); ++i)
            if (std::binary_search(test_nb[q].begin(), test_nb[q].end(), scored[i].second)) ++hit;
        total += static_cast<double>(hit) / static_cast<double>(test_nb[q].size());
    }
    return queries > 0 ? total / static_cast<double>(queries) : 0.0;
}

inline std::string temp_dir(const std::string& tag) {
    const std::string path =
        (std::filesystem::temp_directory_path() / ("graphfm_test_" + tag)).string();
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
    return path;
}

}  // namespace graphfm::testing
