#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "graph.hpp"
#include "provider.hpp"
#include "rng.hpp"

namespace graphfm {

struct NodeProfile {
    std::string text;
    std::vector<std::string> path;  // prompt-tree ancestry, root first
    int locality = 0;               // in [0, localities)
};

struct GibbsConfig {
    int localities = 7;           // N
    double locality_decay = 0.95; // alpha
    std::int64_t window = 5000;   // T' for dynamic probability normalization
    std::int64_t thin = 1000;     // T0, steps between emitted samples
    std::int64_t burn_in = 1000;  // T1
    std::int64_t locality_shift = 1000;  // T2
    std::int64_t max_steps = 0;   // T_max
    int initial_edges = 6;
    bool continuous_chain = false;  // false: fresh restart after each emitted sample
    std::uint64_t seed = 0;

    void validate() const;
};

enum class InteractionMode { person_entity, entity_entity };

struct GeneratedGraph {
    std::vector<NodeProfile> profiles;
    MatD embeddings;  // |profiles| x d_e, rows unit-normalized
    std::vector<std::vector<NodeId>> interactions;  // selected entity indices per sample
    InteractionMode mode = InteractionMode::person_entity;
};

// Depth-first tree-of-prompt expansion. Nodes at depth >= max_depth (root is
// depth 1) become leaves; an empty subdivision also terminates a branch.
// Returned profiles carry ancestry paths and uniform localities in
// [0, localities).
std::vector<NodeProfile> generate_nodes(const std::string& root, const std::string& scenario,
                                        int max_depth, Provider& provider, int localities,
                                        std::uint64_t seed);

// Eq-style interaction probability: mean of the selected rows of H dotted
// with the candidate row. `selected` must contain at least one index.
double edge_probability(const std::vector<std::uint8_t>& incidence, const MatD& embeddings,
                        std::int64_t candidate);

// Sliding-window score normalizer: p_bar = clamp((p - mu) / (4 sigma), 0, 1)
// with mu/sigma over the current pool (population std), computed before p is
// appended; sigma == 0 (or an empty pool) falls back to 0.5.
class DynamicNormalizer {
public:
    explicit DynamicNormalizer(std::int64_t window) : window_(window) {
        require(window_ > 0, Status::config_error, "normalizer window must be positive");
    }
    double normalize(double p);
    std::int64_t pool_size() const { return static_cast<std::int64_t>(pool_.size()); }

private:
    std::int64_t window_;
    std::deque<double> pool_;
};

// Free-function form mirroring the operation contract exactly; the pool is
// mutated (append + truncate to the window length).
double normalize_probability(std::deque<double>& pool, double p, std::int64_t window);

// Exponential locality decay: p_hat = p_bar * alpha^|dn|.
double apply_locality(double p_bar, int locality_a, int locality_b, double alpha);

// Per-step chain trace for oracle comparison in tests.
struct GibbsTraceStep {
    std::int64_t candidate;
    double p, p_bar, p_hat;
    bool accepted;
};

// Gibbs edge sampler over node profiles. Deterministic under a fixed seed:
// one uniform deviate is consumed per step for the accept decision, and
// incidence-vector (re)seeds consume deviates via distinct-index sampling.
std::vector<std::vector<NodeId>> gibbs_sample(const std::vector<NodeProfile>& profiles,
                                              const MatD& embeddings, const GibbsConfig& cfg,
                                              std::vector<GibbsTraceStep>* trace = nullptr);

// Refreshed embeddings from a 2-layer GCN trained with a pairwise link loss
// on the generated edges, initialized from the text embeddings. 0 epochs
// bypasses the network and returns the input.
MatD inject_topology(const GeneratedGraph& gen, int epochs, std::uint64_t seed,
                     double learning_rate = 1e-3);

// Materializes the generated interactions as a dataset graph. person_entity
// appends one person node per sample; entity_entity stars each sample's
// remaining selections around its first selection.
SparseGraph generated_to_graph(const GeneratedGraph& gen);

struct DensifyResult {
    SparseGraph graph;
    std::vector<NodeId> kept;  // new id -> old id
    std::int64_t removed = 0;
};

// Iteratively removes nodes of degree < min_degree until fixpoint (k-core)
// and reindexes the survivors.
DensifyResult densify(const SparseGraph& g, std::int64_t min_degree);

}  // namespace graphfm
