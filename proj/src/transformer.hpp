#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "graph.hpp"
#include "matrix.hpp"
#include "rng.hpp"

namespace graphfm {

enum class AttentionMode : std::uint32_t {
    anchor = 0,  // two-stage attention through sampled anchor tokens
    full = 1,    // single-stage full self-attention (ablation)
};

struct ModelConfig {
    std::int64_t dim = 1024;
    int layers = 3;
    int heads = 4;
    std::int64_t anchors = 256;  // S; convention is d / heads
    double scale_k = 10.0;       // per-layer embedding divisor
    std::int64_t ffn_dim = 0;    // 0 -> 2 * dim
    AttentionMode attention = AttentionMode::anchor;

    std::int64_t effective_ffn_dim() const { return ffn_dim > 0 ? ffn_dim : 2 * dim; }
    void validate() const;
};

template <typename T>
struct TransformerLayer {
    Mat<T> wq, wk, wv, wo;  // d x d; head h owns column block [h*dh, (h+1)*dh)
    Mat<T> ffn_w1;          // d x dff
    std::vector<T> ffn_b1;  // dff
    Mat<T> ffn_w2;          // dff x d
    std::vector<T> ffn_b2;  // d
    std::vector<T> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;  // d each
};

template <typename T>
struct ParamRef {
    std::string name;
    T* data;
    std::int64_t size;
};

template <typename T>
struct TransformerModel {
    ModelConfig cfg;
    std::vector<TransformerLayer<T>> layers;

    static TransformerModel xavier_init(const ModelConfig& cfg, std::uint64_t seed);
    static TransformerModel zeros(const ModelConfig& cfg);

    // Stable-order registry of every learnable tensor; the optimizer,
    // checkpoints and gradient checks all walk this list.
    std::vector<ParamRef<T>> params();
    std::vector<ParamRef<const T>> params() const;

    bool all_finite() const;
};

// ---- batches ----------------------------------------------------------

// Node-id level batch anatomy: B centric/positive pairs from the edge set
// plus B sampled negatives.
struct TokenBatchIdx {
    std::vector<NodeId> centric, positive, negative;
    std::int64_t batch() const { return static_cast<std::int64_t>(centric.size()); }
};

// B edges uniformly with replacement; negatives uniform with up to 100
// rejections of the paired centric node's neighbors (and itself), then
// accept whatever came last.
TokenBatchIdx sample_token_batch_ids(const SparseGraph& g, std::int64_t batch, Rng& rng);

// Row slots of the loss triples inside a token sequence.
struct BatchSlots {
    std::vector<std::int64_t> centric, positive, negative;
};

template <typename T>
struct TokenBatch {
    Mat<T> seq;                    // 3B x d, ordered (c_1..c_B, p_1..p_B, n_1..n_B)
    std::vector<NodeId> node_ids;  // per sequence row
    BatchSlots slots;
};

template <typename T>
TokenBatch<T> gather_token_batch(const MatD& tokens, const TokenBatchIdx& idx);

// S distinct uniform indices into [0, batch_len).
std::vector<std::int64_t> sample_anchors(std::int64_t batch_len, std::int64_t count, Rng& rng);

// ---- forward / backward ----------------------------------------------

template <typename T>
struct LnCache {
    Mat<T> normalized;  // x-hat
    std::vector<T> inv_std;
};

template <typename T>
struct LayerCache {
    Mat<T> input;
    Mat<T> q, k, v;
    std::vector<std::int64_t> anchors;
    std::vector<Mat<T>> attn1;  // per head, S x n (anchor mode only)
    Mat<T> anchor_concat;       // S x d
    Mat<T> v2;                  // S x d
    std::vector<Mat<T>> attn2;  // per head, n x S (anchor) or n x n (full)
    Mat<T> mix;                 // n x d, concatenated head outputs
    Mat<T> attn_out;
    LnCache<T> ln1;
    Mat<T> h1;
    Mat<T> ffn_pre;  // n x dff, before the nonlinearity
    Mat<T> h2;
    LnCache<T> ln2;
};

template <typename T>
struct ForwardResult {
    Mat<T> output;
    std::vector<LayerCache<T>> caches;  // populated only when need_grad
};

// One attention block: two-stage anchor routing (or full attention), head
// concat, output projection, residual. Exposed separately for unit tests;
// `cache` may be null for inference.
template <typename T>
Mat<T> anchor_attention(const TransformerLayer<T>& layer, const Mat<T>& seq,
                        std::span<const std::int64_t> anchors, int heads,
                        LayerCache<T>* cache, int layer_index = -1);

template <typename T>
Mat<T> full_attention(const TransformerLayer<T>& layer, const Mat<T>& seq, int heads,
                      LayerCache<T>* cache, int layer_index = -1);

// anchor_plan holds one anchor index set per layer (ignored in full mode).
template <typename T>
ForwardResult<T> forward(const TransformerModel<T>& model, const Mat<T>& seq,
                         const std::vector<std::vector<std::int64_t>>& anchor_plan,
                         bool need_grad);

// Convenience: draws fresh anchors per layer from `rng`.
template <typename T>
ForwardResult<T> forward_with_rng(const TransformerModel<T>& model, const Mat<T>& seq, Rng& rng,
                                  bool need_grad);

template <typename T>
struct Gradients {
    std::vector<TransformerLayer<T>> layers;  // same shapes as the model, holding grads
    Mat<T> d_input;

    std::vector<ParamRef<T>> params();
};

template <typename T>
Gradients<T> backward(const TransformerModel<T>& model, const ForwardResult<T>& fwd,
                      const Mat<T>& d_output);

// ---- loss and scoring --------------------------------------------------

// Pairwise softplus ranking loss over (centric, positive, negative) triples:
// mean_b softplus(score(c,n) - score(c,p)).
template <typename T>
struct LossResult {
    double loss;
    Mat<T> d_output;
};

template <typename T>
LossResult<T> pairwise_link_loss(const Mat<T>& out, const BatchSlots& slots);

// score(u, v) = e_u . e_v over rows of an embedding table.
template <typename T>
std::vector<double> link_scores(const Mat<T>& emb, std::span<const EdgePair> pairs);

// ---- checkpoints --------------------------------------------------------

struct NamedTensorF {
    std::string name;
    std::vector<float> data;
};

struct Checkpoint {
    ModelConfig cfg;
    std::uint64_t step = 0;
    std::vector<NamedTensorF> tensors;
};

// Single-file format: magic, version, (d, L', H, S, K, d_ff, attention),
// step, then name-length-prefixed little-endian f32 tensors. Round-trips
// bit-exactly.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

template <typename T>
Checkpoint checkpoint_from_model(const TransformerModel<T>& model, std::uint64_t step);

template <typename T>
TransformerModel<T> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace graphfm
