#include "eval.hpp"

#include <algorithm>
#include <cmath>

#include "rng.hpp"

namespace graphfm {

RecallReport recall_at_n(const MatD& embeddings, const SparseGraph& train,
                         const std::vector<EdgePair>& test_edges, const RecallOptions& opt) {
    require(embeddings.rows() == train.num_nodes, Status::shape_error,
            "recall: embedding rows != node count");
    require(!opt.cutoffs.empty(), Status::invalid_argument, "recall: no cutoffs");
    const std::int64_t n = train.num_nodes;

    // Test neighbor sets (both directions), checked disjoint from training.
    std::vector<std::vector<NodeId>> test_nb(static_cast<std::size_t>(n));
    for (const auto& [u, v] : test_edges) {
        require(u < n && v < n, Status::bounds_error, "recall: test edge out of range");
        require(!train.has_edge(u, v), Status::invalid_argument,
                "recall: test edge also present in the training graph");
        test_nb[u].push_back(v);
        test_nb[v].push_back(u);
    }
    for (auto& nb : test_nb) {
        std::sort(nb.begin(), nb.end());
        nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    }

    const std::int64_t max_n = *std::max_element(opt.cutoffs.begin(), opt.cutoffs.end());
    RecallReport report;
    std::map<std::int64_t, double> hit_sum;      // macro: sum of per-query recalls
    std::map<std::int64_t, std::int64_t> hits;   // micro: raw hit counts
    std::int64_t total_test = 0;

    struct Ranked {
        double score;
        NodeId node;
    };
    auto better = [](const Ranked& a, const Ranked& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.node < b.node;
    };

    for (std::int64_t q = 0; q < n; ++q) {
        if (test_nb[q].empty()) continue;
        std::vector<Ranked> cand;
        cand.reserve(static_cast<std::size_t>(n));
        const double* eq = embeddings.row(q);
        const bool bip = opt.partition_boundary >= 0;
        for (std::int64_t v = 0; v < n; ++v) {
            if (v == q) continue;
            if (bip) {
                const bool q_left = q < opt.partition_boundary;
                const bool v_left = v < opt.partition_boundary;
                if (q_left == v_left) continue;
            }
            if (train.has_edge(static_cast<NodeId>(q), static_cast<NodeId>(v))) continue;
            const double* ev = embeddings.row(v);
            double s = 0.0;
            for (std::int64_t j = 0; j < embeddings.cols(); ++j) s += eq[j] * ev[j];
            cand.push_back({s, static_cast<NodeId>(v)});
        }
        if (cand.empty()) {
            ++report.skipped;
            continue;
        }
        ++report.query_count;
        total_test += static_cast<std::int64_t>(test_nb[q].size());

        const std::int64_t top = std::min<std::int64_t>(max_n, static_cast<std::int64_t>(cand.size()));
        std::partial_sort(cand.begin(), cand.begin() + top, cand.end(), better);

        for (std::int64_t cutoff : opt.cutoffs) {
            const std::int64_t limit = std::min(cutoff, top);
            std::int64_t hit = 0;
            for (std::int64_t i = 0; i < limit; ++i)
                if (std::binary_search(test_nb[q].begin(), test_nb[q].end(), cand[i].node)) ++hit;
            hit_sum[cutoff] += static_cast<double>(hit) / static_cast<double>(test_nb[q].size());
            hits[cutoff] += hit;
        }
    }

    for (std::int64_t cutoff : opt.cutoffs) {
        if (opt.micro) {
            report.recall[cutoff] =
                total_test > 0 ? static_cast<double>(hits[cutoff]) / static_cast<double>(total_test)
                               : 0.0;
        } else {
            report.recall[cutoff] =
                report.query_count > 0 ? hit_sum[cutoff] / static_cast<double>(report.query_count)
                                       : 0.0;
        }
    }
    return report;
}

std::vector<std::int32_t> classify_by_class_nodes(const MatD& embeddings,
                                                  std::int64_t normal_nodes,
                                                  std::int32_t class_count,
                                                  const std::vector<NodeId>& test_nodes) {
    require(class_count > 0, Status::state_error,
            "classify: no class nodes present (augment the graph first)");
    require(embeddings.rows() == normal_nodes + class_count, Status::shape_error,
            "classify: embedding rows do not include the class nodes");
    std::vector<std::int32_t> preds;
    preds.reserve(test_nodes.size());
    for (NodeId node : test_nodes) {
        require(node < normal_nodes, Status::bounds_error, "classify: test node out of range");
        const double* e = embeddings.row(node);
        std::int32_t best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (std::int32_t c = 0; c < class_count; ++c) {
            const double* ec = embeddings.row(normal_nodes + c);
            double s = 0.0;
            for (std::int64_t j = 0; j < embeddings.cols(); ++j) s += e[j] * ec[j];
            if (s > best_score) {  // strict: ties keep the lowest class index
                best_score = s;
                best = c;
            }
        }
        preds.push_back(best);
    }
    return preds;
}

ClassificationMetrics accuracy_macro_f1(const std::vector<std::int32_t>& preds,
                                        const std::vector<std::int32_t>& truths,
                                        std::int32_t class_count) {
    require(preds.size() == truths.size(), Status::shape_error,
            "metrics: prediction/truth length mismatch");
    require(class_count > 0, Status::invalid_argument, "metrics: class count must be positive");
    std::vector<std::int64_t> tp(class_count, 0), fp(class_count, 0), fn(class_count, 0);
    std::int64_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        require(preds[i] >= 0 && preds[i] < class_count && truths[i] >= 0 &&
                    truths[i] < class_count,
                Status::bounds_error, "metrics: class index out of range");
        if (preds[i] == truths[i]) {
            ++correct;
            ++tp[preds[i]];
        } else {
            ++fp[preds[i]];
            ++fn[truths[i]];
        }
    }
    ClassificationMetrics m;
    m.accuracy = preds.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(preds.size());
    double f1_sum = 0.0;
    for (std::int32_t c = 0; c < class_count; ++c) {
        const double denom_p = static_cast<double>(tp[c] + fp[c]);
        const double denom_r = static_cast<double>(tp[c] + fn[c]);
        const double precision = denom_p > 0.0 ? tp[c] / denom_p : 0.0;
        const double recall = denom_r > 0.0 ? tp[c] / denom_r : 0.0;
        const double f1 =
            precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        f1_sum += f1;
    }
    m.macro_f1 = f1_sum / static_cast<double>(class_count);
    return m;
}

namespace {

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

std::vector<std::pair<NodeId, std::int32_t>> k_shot_node_split(const SparseGraph& g,
                                                               std::int64_t k,
                                                               std::uint64_t seed) {
    require(k >= 1, Status::invalid_argument, "k-shot: k must be >= 1");
    require(g.has_labels() && g.class_count > 0, Status::invalid_argument,
            "k-shot node split: graph has no labels");
    std::vector<std::vector<NodeId>> by_class(static_cast<std::size_t>(g.class_count));
    for (std::int64_t v = 0; v < g.num_nodes; ++v)
        if (g.labels[v] >= 0) by_class[g.labels[v]].push_back(static_cast<NodeId>(v));

    std::vector<std::pair<NodeId, std::int32_t>> out;
    for (std::int32_t c = 0; c < g.class_count; ++c) {
        Rng rng(derive_seed(seed, {0x6b73686full, static_cast<std::uint64_t>(c)}));
        auto& nodes = by_class[c];
        shuffle(nodes, rng);
        const std::size_t keep = std::min<std::size_t>(nodes.size(), static_cast<std::size_t>(k));
        for (std::size_t i = 0; i < keep; ++i) out.emplace_back(nodes[i], c);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<EdgePair> k_shot_link_split(const std::vector<EdgePair>& edges, std::int64_t k,
                                        std::uint64_t seed) {
    require(k >= 1, Status::invalid_argument, "k-shot: k must be >= 1");
    std::vector<EdgePair> shuffled = edges;
    Rng rng(derive_seed(seed, {0x6b73686cull}));
    shuffle(shuffled, rng);
    std::map<NodeId, std::int64_t> count;
    std::vector<EdgePair> kept;
    for (const auto& [u, v] : shuffled) {
        if (count[u] >= k || count[v] >= k) continue;
        ++count[u];
        ++count[v];
        kept.push_back({u, v});
    }
    std::sort(kept.begin(), kept.end());
    return kept;
}

EdgeSplit holdout_split(const SparseGraph& g, double test_fraction, std::uint64_t seed) {
    require(test_fraction > 0.0 && test_fraction < 1.0, Status::invalid_argument,
            "holdout: fraction must lie in (0, 1)");
    std::vector<EdgePair> edges;
    edges.reserve(static_cast<std::size_t>(g.undirected_edges()));
    for (std::int64_t u = 0; u < g.num_nodes; ++u)
        for (NodeId v : g.neighbors(static_cast<NodeId>(u)))
            if (static_cast<NodeId>(u) < v) edges.emplace_back(static_cast<NodeId>(u), v);
    Rng rng(derive_seed(seed, {0x686f6c64ull}));
    shuffle(edges, rng);
    const std::size_t test_count =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(
                                     test_fraction * static_cast<double>(edges.size()))));
    EdgeSplit split;
    split.test.assign(edges.begin(), edges.begin() + static_cast<std::ptrdiff_t>(test_count));
    split.train.assign(edges.begin() + static_cast<std::ptrdiff_t>(test_count), edges.end());
    std::sort(split.test.begin(), split.test.end());
    std::sort(split.train.begin(), split.train.end());
    return split;
}

}  // namespace graphfm
