#include "generator.hpp"

#include <algorithm>
#include <cmath>

#include "pretrain.hpp"
#include "tokenizer.hpp"

namespace graphfm {

void GibbsConfig::validate() const {
    require(localities >= 1, Status::config_error, "gibbs: localities must be >= 1");
    require(locality_decay > 0.0 && locality_decay < 1.0, Status::config_error,
            "gibbs: decay must lie in (0, 1)");
    require(window > 0 && thin > 0 && locality_shift > 0, Status::config_error,
            "gibbs: window/thin/shift must be positive");
    require(initial_edges >= 1, Status::config_error, "gibbs: initial edges must be >= 1");
    require(max_steps >= burn_in, Status::config_error,
            "gibbs: max steps below burn-in would emit nothing");
}

namespace {

struct TreeWalker {
    Provider& provider;
    const std::string& scenario;
    int max_depth;
    std::vector<NodeProfile> leaves;
    std::vector<std::string> path;

    void divide(const std::string& text, int depth) {
        if (depth >= max_depth) {
            leaves.push_back({text, path, 0});
            return;
        }
        std::vector<std::string> children;
        try {
            children = provider.subdivide(text, scenario);
        } catch (const Error& e) {
            if (e.status() == Status::config_error) throw;
            fail(Status::provider_error,
                 "node generation failed at '" + text + "' after " +
                     std::to_string(leaves.size()) + " completed leaves: " + e.what());
        }
        if (children.empty()) {  // unsplittable entity becomes a leaf
            leaves.push_back({text, path, 0});
            return;
        }
        path.push_back(text);
        for (const auto& child : children) divide(child, depth + 1);
        path.pop_back();
    }
};

}  // namespace

std::vector<NodeProfile> generate_nodes(const std::string& root, const std::string& scenario,
                                        int max_depth, Provider& provider, int localities,
                                        std::uint64_t seed) {
    require(!root.empty(), Status::invalid_argument, "generate_nodes: empty root");
    require(max_depth >= 1, Status::invalid_argument, "generate_nodes: depth must be >= 1");
    require(localities >= 1, Status::invalid_argument, "generate_nodes: localities must be >= 1");

    TreeWalker walker{provider, scenario, max_depth, {}, {}};
    walker.divide(root, 1);

    Rng rng(derive_seed(seed, {0x6c6f636cull}));
    for (auto& leaf : walker.leaves)
        leaf.locality = static_cast<int>(rng.below(static_cast<std::uint64_t>(localities)));
    return walker.leaves;
}

double edge_probability(const std::vector<std::uint8_t>& incidence, const MatD& embeddings,
                        std::int64_t candidate) {
    require(candidate >= 0 && candidate < embeddings.rows(), Status::bounds_error,
            "edge_probability: candidate out of range");
    // Summed in ascending index order, divided once; the brute-force test
    // oracle reproduces this exact evaluation order.
    double acc = 0.0;
    std::int64_t selected = 0;
    const double* cand = embeddings.row(candidate);
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(incidence.size()); ++i) {
        if (!incidence[i]) continue;
        ++selected;
        const double* row = embeddings.row(i);
        double dot = 0.0;
        for (std::int64_t j = 0; j < embeddings.cols(); ++j) dot += row[j] * cand[j];
        acc += dot;
    }
    require(selected > 0, Status::invalid_argument,
            "edge_probability: empty interaction history (seed the vector first)");
    return acc / static_cast<double>(selected);
}

double normalize_probability(std::deque<double>& pool, double p, std::int64_t window) {
    require(!pool.empty(), Status::invalid_argument, "normalize_probability: empty pool");
    double mu = 0.0;
    for (double x : pool) mu += x;
    mu /= static_cast<double>(pool.size());
    double var = 0.0;
    for (double x : pool) var += (x - mu) * (x - mu);
    var /= static_cast<double>(pool.size());
    const double sigma = std::sqrt(var);

    double p_bar;
    if (sigma == 0.0) {
        p_bar = 0.5;
    } else {
        p_bar = (p - mu) / (4.0 * sigma);
        p_bar = std::clamp(p_bar, 0.0, 1.0);
    }
    pool.push_back(p);
    while (static_cast<std::int64_t>(pool.size()) > window) pool.pop_front();
    return p_bar;
}

double DynamicNormalizer::normalize(double p) {
    if (pool_.empty()) {
        pool_.push_back(p);
        return 0.5;
    }
    return normalize_probability(pool_, p, window_);
}

double apply_locality(double p_bar, int locality_a, int locality_b, double alpha) {
    require(p_bar >= 0.0 && p_bar <= 1.0, Status::invalid_argument,
            "apply_locality: p_bar outside [0, 1]");
    const int gap = std::abs(locality_a - locality_b);
    return p_bar * std::pow(alpha, static_cast<double>(gap));
}

namespace {

std::vector<std::uint8_t> fresh_incidence(std::int64_t n, int k, Rng& rng) {
    std::vector<std::uint8_t> a(static_cast<std::size_t>(n), 0);
    for (std::uint64_t idx : rng.sample_without_replacement(static_cast<std::uint64_t>(n),
                                                            static_cast<std::uint64_t>(k)))
        a[idx] = 1;
    return a;
}

std::vector<NodeId> selected_indices(const std::vector<std::uint8_t>& a) {
    std::vector<NodeId> out;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i]) out.push_back(static_cast<NodeId>(i));
    return out;
}

}  // namespace

std::vector<std::vector<NodeId>> gibbs_sample(const std::vector<NodeProfile>& profiles,
                                              const MatD& embeddings, const GibbsConfig& cfg,
                                              std::vector<GibbsTraceStep>* trace) {
    cfg.validate();
    const std::int64_t n = static_cast<std::int64_t>(profiles.size());
    require(n >= 2, Status::invalid_argument, "gibbs_sample: need at least two profiles");
    require(embeddings.rows() == n, Status::shape_error,
            "gibbs_sample: embedding row count mismatch");
    require(cfg.initial_edges <= n, Status::config_error,
            "gibbs_sample: more initial edges than nodes");

    Rng rng(derive_seed(cfg.seed, {0x67696262ull}));
    std::vector<std::uint8_t> a = fresh_incidence(n, cfg.initial_edges, rng);
    DynamicNormalizer normalizer(cfg.window);
    int locality = 0;
    std::vector<std::vector<NodeId>> samples;

    for (std::int64_t t = 1; t <= cfg.max_steps; ++t) {
        if (t % cfg.locality_shift == 0) locality = (locality + 1) % cfg.localities;
        const std::int64_t cand = t % n;

        const double p = edge_probability(a, embeddings, cand);
        const double p_bar = normalizer.normalize(p);
        const double p_hat =
            apply_locality(p_bar, locality, profiles[cand].locality, cfg.locality_decay);

        // One deviate per step regardless of p_hat, so traces replay exactly.
        const bool accepted = rng.uniform() < p_hat;
        if (accepted) a[cand] = 1;
        if (trace) trace->push_back({cand, p, p_bar, p_hat, accepted});

        if (t >= cfg.burn_in && t % cfg.thin == 0) {
            samples.push_back(selected_indices(a));
            if (!cfg.continuous_chain) a = fresh_incidence(n, cfg.initial_edges, rng);
        }
    }
    return samples;
}

SparseGraph generated_to_graph(const GeneratedGraph& gen) {
    const std::int64_t entities = static_cast<std::int64_t>(gen.profiles.size());
    std::vector<EdgePair> pairs;
    std::int64_t num_nodes = entities;
    if (gen.mode == InteractionMode::person_entity) {
        num_nodes += static_cast<std::int64_t>(gen.interactions.size());
        for (std::size_t s = 0; s < gen.interactions.size(); ++s) {
            const NodeId person = static_cast<NodeId>(entities + static_cast<std::int64_t>(s));
            for (NodeId e : gen.interactions[s]) {
                require(e < entities, Status::bounds_error, "interaction index out of range");
                pairs.emplace_back(person, e);
            }
        }
    } else {
        for (const auto& sample : gen.interactions) {
            if (sample.size() < 2) continue;
            const NodeId hub = sample[0];
            for (std::size_t i = 1; i < sample.size(); ++i) {
                require(sample[i] < entities, Status::bounds_error,
                        "interaction index out of range");
                pairs.emplace_back(hub, sample[i]);
            }
        }
    }
    return build_graph(num_nodes, std::move(pairs));
}

MatD inject_topology(const GeneratedGraph& gen, int epochs, std::uint64_t seed,
                     double learning_rate) {
    require(!gen.interactions.empty(), Status::invalid_argument,
            "inject_topology: no generated interactions");
    require(epochs >= 0, Status::invalid_argument, "inject_topology: negative epochs");
    const std::int64_t entities = static_cast<std::int64_t>(gen.profiles.size());
    if (epochs == 0) return gen.embeddings;

    SparseGraph g = generated_to_graph(gen);
    require(g.undirected_edges() > 0, Status::invalid_argument,
            "inject_topology: generated graph is empty");
    NormalizedAdjacency adj = normalize_adjacency(g);
    const std::int64_t de = gen.embeddings.cols();

    // Node features: entity rows are the text embeddings; person rows start
    // from the mean of their selected entities.
    MatD h0(g.num_nodes, de);
    for (std::int64_t i = 0; i < entities; ++i) h0.set_row(i, gen.embeddings.row(i));
    if (gen.mode == InteractionMode::person_entity) {
        for (std::size_t s = 0; s < gen.interactions.size(); ++s) {
            double* row = h0.row(entities + static_cast<std::int64_t>(s));
            const auto& sel = gen.interactions[s];
            if (sel.empty()) continue;
            for (NodeId e : sel)
                for (std::int64_t j = 0; j < de; ++j) row[j] += gen.embeddings(e, j);
            for (std::int64_t j = 0; j < de; ++j) row[j] /= static_cast<double>(sel.size());
        }
    }

    // Propagation P(X) = A_norm X + X; P is symmetric, which the backward
    // pass relies on.
    auto propagate = [&](const MatD& x) {
        MatD out = spmm(adj, x);
        add_inplace(out, x);
        return out;
    };

    MatD w1(de, de), w2(de, de);
    Rng init_rng(derive_seed(seed, {0x67636e77ull}));
    const double bound = std::sqrt(6.0 / static_cast<double>(2 * de));
    fill_uniform(w1, init_rng, -bound, bound);
    fill_uniform(w2, init_rng, -bound, bound);

    AdamState<double> adam;
    std::vector<ParamRef<double>> params{{"w1", w1.data(), w1.size()},
                                         {"w2", w2.data(), w2.size()}};
    adam.init(params);

    const MatD ph0 = propagate(h0);
    const std::int64_t batch_cap = 1024;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        // Forward.
        MatD z1 = matmul(ph0, w1);
        MatD a1 = z1;
        for (std::int64_t i = 0; i < a1.size(); ++i)
            if (a1.data()[i] < 0.0) a1.data()[i] = 0.0;
        MatD pa1 = propagate(a1);
        MatD z2 = matmul(pa1, w2);

        // Pairwise link loss on sampled generated edges.
        Rng rng(derive_seed(seed, {0x67636e65ull, static_cast<std::uint64_t>(epoch)}));
        const std::int64_t batch =
            std::min<std::int64_t>(batch_cap, g.directed_entries());
        MatD d_z2(g.num_nodes, de);
        for (std::int64_t b = 0; b < batch; ++b) {
            const std::uint64_t e = rng.below(static_cast<std::uint64_t>(g.directed_entries()));
            const auto u = static_cast<std::int64_t>(
                std::upper_bound(g.row_offsets.begin(), g.row_offsets.end(), e) -
                g.row_offsets.begin() - 1);
            const NodeId v = g.col_indices[e];
            NodeId neg = v;
            for (int attempt = 0; attempt < 100; ++attempt) {
                neg = static_cast<NodeId>(rng.below(static_cast<std::uint64_t>(g.num_nodes)));
                if (neg != static_cast<NodeId>(u) && !g.has_edge(static_cast<NodeId>(u), neg))
                    break;
            }
            double s_pos = 0.0, s_neg = 0.0;
            for (std::int64_t j = 0; j < de; ++j) {
                s_pos += z2(u, j) * z2(v, j);
                s_neg += z2(u, j) * z2(neg, j);
            }
            const double gz = 1.0 / (1.0 + std::exp(-(s_neg - s_pos)));
            const double scale = gz / static_cast<double>(batch);
            for (std::int64_t j = 0; j < de; ++j) {
                d_z2(u, j) += scale * (z2(neg, j) - z2(v, j));
                d_z2(v, j) -= scale * z2(u, j);
                d_z2(neg, j) += scale * z2(u, j);
            }
        }

        // Backward.
        MatD g_w2 = matmul_tn(pa1, d_z2);
        MatD d_pa1 = matmul_nt(d_z2, w2);
        MatD d_a1 = propagate(d_pa1);  // P is symmetric
        for (std::int64_t i = 0; i < d_a1.size(); ++i)
            if (z1.data()[i] <= 0.0) d_a1.data()[i] = 0.0;
        MatD g_w1 = matmul_tn(ph0, d_a1);

        std::vector<ParamRef<double>> grads{{"w1", g_w1.data(), g_w1.size()},
                                            {"w2", g_w2.data(), g_w2.size()}};
        adam.update(params, grads, learning_rate);
    }

    // Final embeddings for the entity nodes, re-normalized for the next
    // sampling pass.
    MatD z1 = matmul(ph0, w1);
    for (std::int64_t i = 0; i < z1.size(); ++i)
        if (z1.data()[i] < 0.0) z1.data()[i] = 0.0;
    MatD out_all = matmul(propagate(z1), w2);
    MatD out(entities, de);
    for (std::int64_t i = 0; i < entities; ++i) {
        const double* src = out_all.row(i);
        double* dst = out.row(i);
        double norm = 0.0;
        for (std::int64_t j = 0; j < de; ++j) norm += src[j] * src[j];
        norm = std::sqrt(norm);
        if (norm > 0.0)
            for (std::int64_t j = 0; j < de; ++j) dst[j] = src[j] / norm;
    }
    return out;
}

DensifyResult densify(const SparseGraph& g, std::int64_t min_degree) {
    DensifyResult res;
    std::vector<std::int64_t> deg = degree_vector(g);
    std::vector<bool> removed(static_cast<std::size_t>(g.num_nodes), false);
    std::vector<NodeId> queue;
    for (std::int64_t u = 0; u < g.num_nodes; ++u)
        if (deg[u] < min_degree) {
            removed[u] = true;
            queue.push_back(static_cast<NodeId>(u));
        }
    while (!queue.empty()) {
        const NodeId u = queue.back();
        queue.pop_back();
        for (NodeId v : g.neighbors(u)) {
            if (removed[v]) continue;
            if (--deg[v] < min_degree) {
                removed[v] = true;
                queue.push_back(v);
            }
        }
    }

    std::vector<NodeId> remap(static_cast<std::size_t>(g.num_nodes), 0);
    for (std::int64_t u = 0; u < g.num_nodes; ++u) {
        if (!removed[u]) {
            remap[u] = static_cast<NodeId>(res.kept.size());
            res.kept.push_back(static_cast<NodeId>(u));
        }
    }
    res.removed = g.num_nodes - static_cast<std::int64_t>(res.kept.size());

    std::vector<EdgePair> pairs;
    for (std::int64_t u = 0; u < g.num_nodes; ++u) {
        if (removed[u]) continue;
        for (NodeId v : g.neighbors(static_cast<NodeId>(u)))
            if (static_cast<NodeId>(u) < v && !removed[v])
                pairs.emplace_back(remap[u], remap[v]);
    }
    res.graph = build_graph(static_cast<std::int64_t>(res.kept.size()), std::move(pairs));
    return res;
}

}  // namespace graphfm
