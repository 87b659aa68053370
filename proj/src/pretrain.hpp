#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tokenizer.hpp"
#include "transformer.hpp"

namespace graphfm {

struct TrainConfig {
    double learning_rate = 1e-4;
    double l2_lambda = 1e-6;
    std::int64_t batch = 1024;
    std::int64_t dim = 1024;
    int smoothing = 3;  // adjacency smoothing order L
    int layers = 3;     // transformer depth L'
    int heads = 4;
    std::int64_t anchors = 256;
    double scale_k = 10.0;
    std::int64_t ffn_dim = 0;  // 0 -> 2 * dim
    int projector_refresh_every = 10;
    std::int64_t max_steps = 0;
    std::uint64_t seed = 0;
    int svd_power_iters = 2;

    bool strict_mae = false;    // recompute tokens on the masked graph each step
    bool seq_sampling = true;   // false: train on the full |V| token sequence
    AttentionMode attention = AttentionMode::anchor;
    std::string variant = "svd";  // or one_hot / degree / random

    std::int64_t checkpoint_every = 0;  // 0 = final checkpoint only

    ModelConfig model_config() const;
    void validate() const;
};

// Textbook Adam over a parameter registry. Moment tensors are aligned with
// the registry order.
template <typename T>
struct AdamState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::uint64_t t = 0;
    std::vector<std::vector<T>> m, v;

    void init(const std::vector<ParamRef<T>>& params);
    void update(std::vector<ParamRef<T>>& params, const std::vector<ParamRef<T>>& grads,
                double lr);
};

// Learnable projection-variant table shared across all training graphs
// (one_hot folds ids mod the shared table size; degree keys on raw degree).
template <typename T>
struct SharedVariantTable {
    ProjectionVariant kind = ProjectionVariant::random;
    bool learnable = false;
    Mat<T> weights;
    std::vector<std::vector<std::int64_t>> node_slot;  // per graph
    AdamState<T> adam;
};

template <typename T>
struct GraphTrainState {
    const SparseGraph* graph = nullptr;
    Projector projector;
    TokenTable tokens;
    std::uint64_t last_refresh_step = 0;
};

template <typename T>
struct TrainState {
    TransformerModel<T> model;
    AdamState<T> adam;
    std::uint64_t step = 0;
    std::vector<GraphTrainState<T>> graphs;
    SharedVariantTable<T> variant;  // learnable==false when variant is "svd"/"random"
};

struct TrainHooks {
    std::function<void(std::uint64_t step, double loss, std::size_t graph_index)> on_step;
    std::function<void(std::uint64_t step)> on_checkpoint;
};

// Test/diagnostic capture of one step's internals.
template <typename T>
struct StepDebug {
    double data_loss = 0.0;
    double l2_loss = 0.0;
    std::vector<std::vector<T>> model_grads;  // after L2, before Adam
};

// Masked-autoencoding step on one graph: sample a batch, mask its positive
// edges, forward, pairwise link loss + L2, exact gradients, Adam update.
template <typename T>
double train_step(TrainState<T>& state, std::size_t graph_index, const TrainConfig& cfg,
                  std::uint64_t step_number, StepDebug<T>* debug = nullptr);

template <typename T>
TrainState<T> init_train_state(const std::vector<const SparseGraph*>& graphs,
                               const TrainConfig& cfg);

// Runs steps state.step+1 .. cfg.max_steps: uniform graph alternation,
// projector refresh every cfg.projector_refresh_every steps on the active
// graph, hooks for logging and periodic checkpoints.
template <typename T>
void train_loop(TrainState<T>& state, const TrainConfig& cfg, const TrainHooks& hooks = {});

// Checkpoints carry model params, Adam moments, the learnable variant table
// and the step counter; everything else replays from (config, seed).
template <typename T>
Checkpoint train_state_checkpoint(const TrainState<T>& state);

template <typename T>
TrainState<T> resume_train_state(const Checkpoint& ckpt,
                                 const std::vector<const SparseGraph*>& graphs,
                                 const TrainConfig& cfg);

// Which graph does step t train on.
std::size_t pick_graph(std::uint64_t seed, std::uint64_t step, std::size_t graph_count);

}  // namespace graphfm
