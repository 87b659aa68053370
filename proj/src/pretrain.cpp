#include "pretrain.hpp"

#include <cmath>
#include <map>

namespace graphfm {

ModelConfig TrainConfig::model_config() const {
    ModelConfig mc;
    mc.dim = dim;
    mc.layers = layers;
    mc.heads = heads;
    mc.anchors = anchors;
    mc.scale_k = scale_k;
    mc.ffn_dim = ffn_dim;
    mc.attention = attention;
    return mc;
}

void TrainConfig::validate() const {
    model_config().validate();
    require(learning_rate > 0.0 && batch >= 1 && max_steps >= 0, Status::config_error,
            "train config: learning rate, batch and steps must be positive");
    require(l2_lambda >= 0.0, Status::config_error, "train config: negative l2 weight");
    require(projector_refresh_every >= 1, Status::config_error,
            "train config: refresh interval must be >= 1");
    require(smoothing >= 0, Status::config_error, "train config: negative smoothing order");
    if (variant != "svd") parse_variant(variant);
    if (seq_sampling && attention == AttentionMode::anchor)
        require(anchors < 3 * batch, Status::config_error,
                "train config: anchor count must be below the 3B sequence length");
}

template <typename T>
void AdamState<T>::init(const std::vector<ParamRef<T>>& params) {
    t = 0;
    m.assign(params.size(), {});
    v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i].assign(static_cast<std::size_t>(params[i].size), T{});
        v[i].assign(static_cast<std::size_t>(params[i].size), T{});
    }
}

template <typename T>
void AdamState<T>::update(std::vector<ParamRef<T>>& params,
                          const std::vector<ParamRef<T>>& grads, double lr) {
    require(params.size() == grads.size() && params.size() == m.size(), Status::state_error,
            "adam: parameter registry mismatch");
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        require(params[i].size == grads[i].size, Status::shape_error, "adam: gradient shape");
        T* w = params[i].data;
        const T* g = grads[i].data;
        T* mi = m[i].data();
        T* vi = v[i].data();
        for (std::int64_t j = 0; j < params[i].size; ++j) {
            const double gj = static_cast<double>(g[j]);
            const double mj = beta1 * static_cast<double>(mi[j]) + (1.0 - beta1) * gj;
            const double vj = beta2 * static_cast<double>(vi[j]) + (1.0 - beta2) * gj * gj;
            mi[j] = static_cast<T>(mj);
            vi[j] = static_cast<T>(vj);
            const double mhat = mj / bc1;
            const double vhat = vj / bc2;
            w[j] = static_cast<T>(static_cast<double>(w[j]) - lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
}

std::size_t pick_graph(std::uint64_t seed, std::uint64_t step, std::size_t graph_count) {
    if (graph_count == 1) return 0;
    Rng rng(derive_seed(seed, {0x70696b67ull, step}));
    return static_cast<std::size_t>(rng.below(graph_count));
}

namespace {

constexpr std::uint64_t kTagRefresh = 0x72667273ull;
constexpr std::uint64_t kTagStep = 0x73746570ull;

template <typename T>
void rebuild_tokens(GraphTrainState<T>& gs, const TrainConfig& cfg, std::uint64_t refresh_step) {
    const std::uint64_t proj_seed = derive_seed(
        cfg.seed, {kTagRefresh, refresh_step,
                   static_cast<std::uint64_t>(gs.graph->structure_hash())});
    gs.projector = build_graph_projector(*gs.graph, cfg.dim, cfg.smoothing, cfg.svd_power_iters,
                                         proj_seed);
    gs.tokens = tokenize(*gs.graph, gs.projector);
    gs.last_refresh_step = refresh_step;
}

// Builds the shared table across graphs: same key -> same row everywhere.
template <typename T>
SharedVariantTable<T> build_shared_table(const std::vector<const SparseGraph*>& graphs,
                                         const TrainConfig& cfg) {
    SharedVariantTable<T> table;
    if (cfg.variant == "svd") return table;
    table.kind = parse_variant(cfg.variant);
    table.node_slot.resize(graphs.size());

    if (table.kind == ProjectionVariant::random) {
        // Fixed rows keyed by node id; reproducible across graphs and runs.
        std::int64_t max_nodes = 0;
        for (const auto* g : graphs) max_nodes = std::max(max_nodes, g->num_nodes);
        table.weights = Mat<T>(max_nodes, cfg.dim);
        const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
        for (std::int64_t v = 0; v < max_nodes; ++v) {
            Rng row_rng(derive_seed(cfg.seed, {0x72616e64ull, static_cast<std::uint64_t>(v)}));
            for (std::int64_t j = 0; j < cfg.dim; ++j)
                table.weights(v, j) = static_cast<T>(row_rng.uniform(-bound, bound));
        }
        for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
            table.node_slot[gi].resize(static_cast<std::size_t>(graphs[gi]->num_nodes));
            for (std::int64_t v = 0; v < graphs[gi]->num_nodes; ++v)
                table.node_slot[gi][v] = v;
        }
        return table;
    }

    std::map<std::int64_t, std::int64_t> slot_of;
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
        const SparseGraph& g = *graphs[gi];
        table.node_slot[gi].resize(static_cast<std::size_t>(g.num_nodes));
        for (std::int64_t v = 0; v < g.num_nodes; ++v) {
            const std::int64_t key = table.kind == ProjectionVariant::one_hot
                                         ? v % kOneHotTableSize
                                         : g.degree(static_cast<NodeId>(v));
            auto [it, _] = slot_of.try_emplace(key, static_cast<std::int64_t>(slot_of.size()));
            table.node_slot[gi][v] = it->second;
        }
    }
    table.learnable = true;
    table.weights = Mat<T>(static_cast<std::int64_t>(slot_of.size()), cfg.dim);
    Rng rng(derive_seed(cfg.seed, {0x7661722dull}));
    const double bound = std::sqrt(6.0 / static_cast<double>(table.weights.rows() + cfg.dim));
    fill_uniform(table.weights, rng, -bound, bound);
    table.adam.init(std::vector<ParamRef<T>>{
        {"table", table.weights.data(), table.weights.size()}});
    return table;
}

template <typename T>
MatD variant_tokens(const SharedVariantTable<T>& table, std::size_t graph_index,
                    std::int64_t num_nodes) {
    MatD out(num_nodes, table.weights.cols());
    for (std::int64_t v = 0; v < num_nodes; ++v) {
        const T* src = table.weights.row(table.node_slot[graph_index][v]);
        double* dst = out.row(v);
        for (std::int64_t j = 0; j < table.weights.cols(); ++j)
            dst[j] = static_cast<double>(src[j]);
    }
    return out;
}

}  // namespace

template <typename T>
TrainState<T> init_train_state(const std::vector<const SparseGraph*>& graphs,
                               const TrainConfig& cfg) {
    cfg.validate();
    require(!graphs.empty(), Status::invalid_argument, "train: need at least one graph");
    TrainState<T> state;
    state.model = TransformerModel<T>::xavier_init(cfg.model_config(), cfg.seed);
    auto params = state.model.params();
    state.adam.init(params);
    state.variant = build_shared_table<T>(graphs, cfg);
    state.graphs.resize(graphs.size());
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        state.graphs[i].graph = graphs[i];
        if (cfg.variant == "svd") rebuild_tokens(state.graphs[i], cfg, 0);
    }
    return state;
}

template <typename T>
double train_step(TrainState<T>& state, std::size_t graph_index, const TrainConfig& cfg,
                  std::uint64_t step_number, StepDebug<T>* debug) {
    GraphTrainState<T>& gs = state.graphs[graph_index];
    const SparseGraph& g = *gs.graph;
    const std::uint64_t step_seed = derive_seed(cfg.seed, {kTagStep, step_number});
    Rng rng(step_seed);

    TokenBatchIdx idx = sample_token_batch_ids(g, cfg.batch, rng);

    const MatD* token_src = nullptr;
    MatD scratch_tokens;
    if (cfg.variant != "svd") {
        scratch_tokens = variant_tokens(state.variant, graph_index, g.num_nodes);
        token_src = &scratch_tokens;
    } else if (cfg.strict_mae) {
        // The batch's positive edges are the MAE labels; under strict MAE the
        // smoothing for this step runs on the adjacency with them removed.
        std::vector<EdgePair> masked_pairs(static_cast<std::size_t>(cfg.batch));
        for (std::int64_t b = 0; b < cfg.batch; ++b)
            masked_pairs[b] = {idx.centric[b], idx.positive[b]};
        MaskedAdjacency view = mask_edges(g, masked_pairs);
        TokenTable masked_tokens = tokenize_masked(view, gs.projector);
        scratch_tokens = std::move(masked_tokens.embeddings);
        token_src = &scratch_tokens;
    } else {
        token_src = &gs.tokens.embeddings;
    }

    // Sequence assembly: sampled 3B triple sequence or the full token table.
    Mat<T> seq;
    BatchSlots slots;
    std::vector<NodeId> row_nodes;
    if (cfg.seq_sampling) {
        TokenBatch<T> batch = gather_token_batch<T>(*token_src, idx);
        seq = std::move(batch.seq);
        slots = std::move(batch.slots);
        row_nodes = std::move(batch.node_ids);
    } else {
        seq = cast_mat<double, T>(*token_src);
        slots.centric.assign(idx.centric.begin(), idx.centric.end());
        slots.positive.assign(idx.positive.begin(), idx.positive.end());
        slots.negative.assign(idx.negative.begin(), idx.negative.end());
        row_nodes.resize(static_cast<std::size_t>(g.num_nodes));
        for (std::int64_t v = 0; v < g.num_nodes; ++v) row_nodes[v] = static_cast<NodeId>(v);
    }

    std::vector<std::vector<std::int64_t>> plan;
    if (cfg.attention == AttentionMode::anchor) {
        require(cfg.anchors <= seq.rows(), Status::config_error,
                "anchor count exceeds training sequence length");
        plan.reserve(state.model.layers.size());
        for (std::size_t i = 0; i < state.model.layers.size(); ++i)
            plan.push_back(sample_anchors(seq.rows(), cfg.anchors, rng));
    }

    ForwardResult<T> fwd = forward(state.model, seq, plan, /*need_grad=*/true);
    LossResult<T> loss = pairwise_link_loss(fwd.output, slots);
    Gradients<T> grads = backward(state.model, fwd, loss.d_output);

    auto params = state.model.params();
    auto grad_params = grads.params();
    double total_loss = loss.loss;
    if (cfg.l2_lambda > 0.0) {
        double sq = 0.0;
        for (std::size_t i = 0; i < params.size(); ++i) {
            for (std::int64_t j = 0; j < params[i].size; ++j) {
                const double w = static_cast<double>(params[i].data[j]);
                sq += w * w;
                grad_params[i].data[j] += static_cast<T>(2.0 * cfg.l2_lambda * w);
            }
        }
        if (state.variant.learnable) {
            T* w = state.variant.weights.data();
            for (std::int64_t j = 0; j < state.variant.weights.size(); ++j)
                sq += static_cast<double>(w[j]) * static_cast<double>(w[j]);
        }
        total_loss += cfg.l2_lambda * sq;
    }

    if (debug) {
        debug->data_loss = loss.loss;
        debug->l2_loss = total_loss - loss.loss;
        debug->model_grads.clear();
        for (const auto& gp : grad_params)
            debug->model_grads.emplace_back(gp.data, gp.data + gp.size);
    }

    if (!std::isfinite(total_loss))
        fail(Status::numeric_error,
             "non-finite loss at step " + std::to_string(step_number) + " on graph " +
                 std::to_string(graph_index) + " (batch seed " + std::to_string(step_seed) + ")");

    // Learnable token table: scatter sequence-input gradients to rows.
    if (state.variant.learnable) {
        Mat<T> table_grad(state.variant.weights.rows(), state.variant.weights.cols());
        const auto& slot = state.variant.node_slot[graph_index];
        for (std::int64_t r = 0; r < grads.d_input.rows(); ++r) {
            T* dst = table_grad.row(slot[row_nodes[r]]);
            const T* src = grads.d_input.row(r);
            for (std::int64_t j = 0; j < table_grad.cols(); ++j) dst[j] += src[j];
        }
        if (cfg.l2_lambda > 0.0) {
            const T* w = state.variant.weights.data();
            T* gt = table_grad.data();
            for (std::int64_t j = 0; j < table_grad.size(); ++j)
                gt[j] += static_cast<T>(2.0 * cfg.l2_lambda * static_cast<double>(w[j]));
        }
        std::vector<ParamRef<T>> tw{{"table", state.variant.weights.data(),
                                     state.variant.weights.size()}};
        std::vector<ParamRef<T>> tg{{"table", table_grad.data(), table_grad.size()}};
        state.variant.adam.update(tw, tg, cfg.learning_rate);
    }

    state.adam.update(params, grad_params, cfg.learning_rate);
    if (!state.model.all_finite())
        fail(Status::numeric_error,
             "non-finite parameter after update at step " + std::to_string(step_number));
    return total_loss;
}

template <typename T>
void train_loop(TrainState<T>& state, const TrainConfig& cfg, const TrainHooks& hooks) {
    cfg.validate();
    for (std::uint64_t t = state.step + 1; t <= static_cast<std::uint64_t>(cfg.max_steps); ++t) {
        const std::size_t gi = pick_graph(cfg.seed, t, state.graphs.size());
        if (cfg.variant == "svd" &&
            t % static_cast<std::uint64_t>(cfg.projector_refresh_every) == 0)
            rebuild_tokens(state.graphs[gi], cfg, t);
        const double loss = train_step(state, gi, cfg, t);
        state.step = t;
        if (hooks.on_step) hooks.on_step(t, loss, gi);
        if (cfg.checkpoint_every > 0 &&
            t % static_cast<std::uint64_t>(cfg.checkpoint_every) == 0 && hooks.on_checkpoint)
            hooks.on_checkpoint(t);
    }
}

template <typename T>
Checkpoint train_state_checkpoint(const TrainState<T>& state) {
    Checkpoint ckpt = checkpoint_from_model(state.model, state.step);
    const auto params = state.model.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        NamedTensorF m{"adam.m." + params[i].name, {}};
        NamedTensorF v{"adam.v." + params[i].name, {}};
        m.data.resize(state.adam.m[i].size());
        v.data.resize(state.adam.v[i].size());
        for (std::size_t j = 0; j < m.data.size(); ++j) {
            m.data[j] = static_cast<float>(state.adam.m[i][j]);
            v.data[j] = static_cast<float>(state.adam.v[i][j]);
        }
        ckpt.tensors.push_back(std::move(m));
        ckpt.tensors.push_back(std::move(v));
    }
    if (state.variant.learnable) {
        auto dump = [&](const char* name, const T* data, std::int64_t size) {
            NamedTensorF t{name, {}};
            t.data.resize(static_cast<std::size_t>(size));
            for (std::int64_t j = 0; j < size; ++j) t.data[j] = static_cast<float>(data[j]);
            ckpt.tensors.push_back(std::move(t));
        };
        dump("table.weights", state.variant.weights.data(), state.variant.weights.size());
        dump("table.adam.m", state.variant.adam.m[0].data(),
             static_cast<std::int64_t>(state.variant.adam.m[0].size()));
        dump("table.adam.v", state.variant.adam.v[0].data(),
             static_cast<std::int64_t>(state.variant.adam.v[0].size()));
    }
    return ckpt;
}

template <typename T>
TrainState<T> resume_train_state(const Checkpoint& ckpt,
                                 const std::vector<const SparseGraph*>& graphs,
                                 const TrainConfig& cfg) {
    cfg.validate();
    TrainState<T> state;
    state.model = model_from_checkpoint<T>(ckpt);
    state.step = ckpt.step;
    auto params = state.model.params();
    state.adam.init(params);
    state.adam.t = ckpt.step;

    auto find_tensor = [&](const std::string& name) -> const NamedTensorF* {
        for (const auto& t : ckpt.tensors)
            if (t.name == name) return &t;
        return nullptr;
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
        const NamedTensorF* m = find_tensor("adam.m." + params[i].name);
        const NamedTensorF* v = find_tensor("adam.v." + params[i].name);
        require(m && v, Status::format_error, "checkpoint missing optimizer state for resume");
        for (std::size_t j = 0; j < m->data.size(); ++j) {
            state.adam.m[i][j] = static_cast<T>(m->data[j]);
            state.adam.v[i][j] = static_cast<T>(v->data[j]);
        }
    }

    state.variant = build_shared_table<T>(graphs, cfg);
    if (state.variant.learnable) {
        const NamedTensorF* w = find_tensor("table.weights");
        const NamedTensorF* m = find_tensor("table.adam.m");
        const NamedTensorF* v = find_tensor("table.adam.v");
        require(w && m && v, Status::format_error, "checkpoint missing variant table state");
        require(static_cast<std::int64_t>(w->data.size()) == state.variant.weights.size(),
                Status::shape_error, "variant table size changed between runs");
        for (std::size_t j = 0; j < w->data.size(); ++j) {
            state.variant.weights.data()[j] = static_cast<T>(w->data[j]);
            state.variant.adam.m[0][j] = static_cast<T>(m->data[j]);
            state.variant.adam.v[0][j] = static_cast<T>(v->data[j]);
        }
        state.variant.adam.t = ckpt.step;
    }

    // Reconstruct each graph's latest projector by replaying the refresh
    // schedule, which is a pure function of (seed, step).
    state.graphs.resize(graphs.size());
    std::vector<std::uint64_t> last_refresh(graphs.size(), 0);
    for (std::uint64_t t = 1; t <= ckpt.step; ++t) {
        if (t % static_cast<std::uint64_t>(cfg.projector_refresh_every) == 0)
            last_refresh[pick_graph(cfg.seed, t, graphs.size())] = t;
    }
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        state.graphs[i].graph = graphs[i];
        if (cfg.variant == "svd") rebuild_tokens(state.graphs[i], cfg, last_refresh[i]);
    }
    return state;
}

template struct AdamState<float>;
template struct AdamState<double>;
template struct TrainState<float>;
template struct TrainState<double>;

template TrainState<float> init_train_state<float>(const std::vector<const SparseGraph*>&,
                                                   const TrainConfig&);
template TrainState<double> init_train_state<double>(const std::vector<const SparseGraph*>&,
                                                     const TrainConfig&);
template struct StepDebug<float>;
template struct StepDebug<double>;
template double train_step<float>(TrainState<float>&, std::size_t, const TrainConfig&,
                                  std::uint64_t, StepDebug<float>*);
template double train_step<double>(TrainState<double>&, std::size_t, const TrainConfig&,
                                   std::uint64_t, StepDebug<double>*);
template void train_loop<float>(TrainState<float>&, const TrainConfig&, const TrainHooks&);
template void train_loop<double>(TrainState<double>&, const TrainConfig&, const TrainHooks&);
template Checkpoint train_state_checkpoint<float>(const TrainState<float>&);
template Checkpoint train_state_checkpoint<double>(const TrainState<double>&);
template TrainState<float> resume_train_state<float>(const Checkpoint&,
                                                     const std::vector<const SparseGraph*>&,
                                                     const TrainConfig&);
template TrainState<double> resume_train_state<double>(const Checkpoint&,
                                                       const std::vector<const SparseGraph*>&,
                                                       const TrainConfig&);

}  // namespace graphfm
