#include "transformer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace graphfm {

void ModelConfig::validate() const {
    require(dim > 0 && layers >= 0 && heads > 0, Status::config_error,
            "model config: dim/layers/heads must be positive");
    require(dim % heads == 0, Status::config_error, "model config: dim not divisible by heads");
    require(anchors > 0 || attention == AttentionMode::full, Status::config_error,
            "model config: anchor count must be positive");
    require(scale_k > 0.0, Status::config_error, "model config: scale constant must be positive");
}

namespace {

template <typename T>
TransformerLayer<T> make_layer(const ModelConfig& cfg) {
    const std::int64_t d = cfg.dim;
    const std::int64_t dff = cfg.effective_ffn_dim();
    TransformerLayer<T> l;
    l.wq = Mat<T>(d, d);
    l.wk = Mat<T>(d, d);
    l.wv = Mat<T>(d, d);
    l.wo = Mat<T>(d, d);
    l.ffn_w1 = Mat<T>(d, dff);
    l.ffn_b1.assign(dff, T{});
    l.ffn_w2 = Mat<T>(dff, d);
    l.ffn_b2.assign(d, T{});
    l.ln1_gamma.assign(d, T{});
    l.ln1_beta.assign(d, T{});
    l.ln2_gamma.assign(d, T{});
    l.ln2_beta.assign(d, T{});
    return l;
}

template <typename T>
void xavier_fill(Mat<T>& w, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    fill_uniform(w, rng, -bound, bound);
}

template <typename T>
void collect_params(std::vector<TransformerLayer<T>>& layers, std::vector<ParamRef<T>>& out) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        TransformerLayer<T>& l = layers[i];
        const std::string p = "layer" + std::to_string(i) + ".";
        auto mat = [&](const char* name, Mat<T>& m) {
            out.push_back({p + name, m.data(), m.size()});
        };
        auto vec = [&](const char* name, std::vector<T>& v) {
            out.push_back({p + name, v.data(), static_cast<std::int64_t>(v.size())});
        };
        mat("wq", l.wq);
        mat("wk", l.wk);
        mat("wv", l.wv);
        mat("wo", l.wo);
        mat("ffn_w1", l.ffn_w1);
        vec("ffn_b1", l.ffn_b1);
        mat("ffn_w2", l.ffn_w2);
        vec("ffn_b2", l.ffn_b2);
        vec("ln1_gamma", l.ln1_gamma);
        vec("ln1_beta", l.ln1_beta);
        vec("ln2_gamma", l.ln2_gamma);
        vec("ln2_beta", l.ln2_beta);
    }
}

// ---- blocked matmul helpers over per-head column ranges ----------------

// logits = a[:, c0:c0+w] * b[:, c0:c0+w]^T * scale
template <typename T>
Mat<T> block_nt(const Mat<T>& a, const Mat<T>& b, std::int64_t c0, std::int64_t w, T scale) {
    Mat<T> out(a.rows(), b.rows());
#pragma omp parallel for schedule(static) if (a.rows() * b.rows() * w > 65536)
    for (std::int64_t i = 0; i < a.rows(); ++i) {
        const T* arow = a.row(i) + c0;
        T* orow = out.row(i);
        for (std::int64_t j = 0; j < b.rows(); ++j) {
            const T* brow = b.row(j) + c0;
            T acc{};
            for (std::int64_t c = 0; c < w; ++c) acc += arow[c] * brow[c];
            orow[j] = acc * scale;
        }
    }
    return out;
}

// out[:, c0:c0+w] += a * b[:, c0:c0+w]
template <typename T>
void block_matmul_acc(const Mat<T>& a, const Mat<T>& b, std::int64_t c0, std::int64_t w,
                      Mat<T>& out) {
#pragma omp parallel for schedule(static) if (a.rows() * a.cols() * w > 65536)
    for (std::int64_t i = 0; i < a.rows(); ++i) {
        const T* arow = a.row(i);
        T* orow = out.row(i) + c0;
        for (std::int64_t p = 0; p < a.cols(); ++p) {
            const T s = arow[p];
            if (s == T{}) continue;
            const T* brow = b.row(p) + c0;
            for (std::int64_t c = 0; c < w; ++c) orow[c] += s * brow[c];
        }
    }
}

// out[:, c0:c0+w] += a^T * b[:, c0:c0+w]   (a: n x m, b: n x *, out: m x *)
template <typename T>
void block_matmul_tn_acc(const Mat<T>& a, const Mat<T>& b, std::int64_t c0, std::int64_t w,
                         Mat<T>& out) {
#pragma omp parallel for schedule(static) if (a.rows() * a.cols() * w > 65536)
    for (std::int64_t i = 0; i < a.cols(); ++i) {
        T* orow = out.row(i) + c0;
        for (std::int64_t p = 0; p < a.rows(); ++p) {
            const T s = a(p, i);
            if (s == T{}) continue;
            const T* brow = b.row(p) + c0;
            for (std::int64_t c = 0; c < w; ++c) orow[c] += s * brow[c];
        }
    }
}

template <typename T>
Mat<T> gather_rows(const Mat<T>& a, std::span<const std::int64_t> rows) {
    Mat<T> out(static_cast<std::int64_t>(rows.size()), a.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.set_row(static_cast<std::int64_t>(i), a.row(rows[i]));
    return out;
}

// Backprop through row softmax: d_logits = a . (d_a - rowdot(d_a, a)), in place.
template <typename T>
void softmax_backward_inplace(const Mat<T>& a, Mat<T>& d_a, T scale) {
    for (std::int64_t i = 0; i < a.rows(); ++i) {
        const T* arow = a.row(i);
        T* drow = d_a.row(i);
        T dot{};
        for (std::int64_t j = 0; j < a.cols(); ++j) dot += arow[j] * drow[j];
        for (std::int64_t j = 0; j < a.cols(); ++j) drow[j] = arow[j] * (drow[j] - dot) * scale;
    }
}

template <typename T>
void check_finite(const Mat<T>& m, int layer_index, const char* what) {
    if (!all_finite(m))
        fail(Status::numeric_error, std::string("non-finite ") + what + " in layer " +
                                        std::to_string(layer_index));
}

// Affine layer norm over rows; returns y and fills cache.
template <typename T>
Mat<T> layer_norm_affine(const Mat<T>& x, const std::vector<T>& gamma, const std::vector<T>& beta,
                         LnCache<T>* cache) {
    const std::int64_t d = x.cols();
    Mat<T> y(x.rows(), d);
    Mat<T> normalized(x.rows(), d);
    std::vector<T> inv_std(static_cast<std::size_t>(x.rows()));
    const double eps = 1e-8;
    for (std::int64_t i = 0; i < x.rows(); ++i) {
        const T* r = x.row(i);
        double mean = 0.0;
        for (std::int64_t j = 0; j < d; ++j) mean += r[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double dv = static_cast<double>(r[j]) - mean;
            var += dv * dv;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[i] = static_cast<T>(inv);
        T* nrow = normalized.row(i);
        T* yrow = y.row(i);
        for (std::int64_t j = 0; j < d; ++j) {
            nrow[j] = static_cast<T>((static_cast<double>(r[j]) - mean) * inv);
            yrow[j] = gamma[j] * nrow[j] + beta[j];
        }
    }
    if (cache) {
        cache->normalized = std::move(normalized);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

// Backprop through affine layer norm.
template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& d_y, const LnCache<T>& cache, const std::vector<T>& gamma,
                           std::vector<T>& d_gamma, std::vector<T>& d_beta) {
    const std::int64_t d = d_y.cols();
    Mat<T> d_x(d_y.rows(), d);
    for (std::int64_t i = 0; i < d_y.rows(); ++i) {
        const T* dyr = d_y.row(i);
        const T* nr = cache.normalized.row(i);
        double mean_dh = 0.0, mean_dhn = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double dh = static_cast<double>(dyr[j]) * static_cast<double>(gamma[j]);
            mean_dh += dh;
            mean_dhn += dh * static_cast<double>(nr[j]);
            d_gamma[j] += dyr[j] * nr[j];
            d_beta[j] += dyr[j];
        }
        mean_dh /= static_cast<double>(d);
        mean_dhn /= static_cast<double>(d);
        T* dxr = d_x.row(i);
        const double inv = static_cast<double>(cache.inv_std[i]);
        for (std::int64_t j = 0; j < d; ++j) {
            const double dh = static_cast<double>(dyr[j]) * static_cast<double>(gamma[j]);
            dxr[j] = static_cast<T>((dh - mean_dh - static_cast<double>(nr[j]) * mean_dhn) * inv);
        }
    }
    return d_x;
}

}  // namespace

template <typename T>
TransformerModel<T> TransformerModel<T>::zeros(const ModelConfig& cfg) {
    cfg.validate();
    TransformerModel<T> m;
    m.cfg = cfg;
    for (int i = 0; i < cfg.layers; ++i) m.layers.push_back(make_layer<T>(cfg));
    return m;
}

template <typename T>
TransformerModel<T> TransformerModel<T>::xavier_init(const ModelConfig& cfg, std::uint64_t seed) {
    TransformerModel<T> m = zeros(cfg);
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        Rng rng(derive_seed(seed, {0x1a7eull, i}));
        TransformerLayer<T>& l = m.layers[i];
        xavier_fill(l.wq, rng);
        xavier_fill(l.wk, rng);
        xavier_fill(l.wv, rng);
        xavier_fill(l.wo, rng);
        xavier_fill(l.ffn_w1, rng);
        xavier_fill(l.ffn_w2, rng);
        std::fill(l.ln1_gamma.begin(), l.ln1_gamma.end(), T(1));
        std::fill(l.ln2_gamma.begin(), l.ln2_gamma.end(), T(1));
    }
    return m;
}

template <typename T>
std::vector<ParamRef<T>> TransformerModel<T>::params() {
    std::vector<ParamRef<T>> out;
    collect_params(layers, out);
    return out;
}

template <typename T>
std::vector<ParamRef<const T>> TransformerModel<T>::params() const {
    std::vector<ParamRef<T>> mut;
    collect_params(const_cast<TransformerModel<T>*>(this)->layers, mut);
    std::vector<ParamRef<const T>> out;
    out.reserve(mut.size());
    for (auto& p : mut) out.push_back({p.name, p.data, p.size});
    return out;
}

template <typename T>
bool TransformerModel<T>::all_finite() const {
    for (const auto& p : params())
        for (std::int64_t i = 0; i < p.size; ++i)
            if (!std::isfinite(static_cast<double>(p.data[i]))) return false;
    return true;
}

template <typename T>
std::vector<ParamRef<T>> Gradients<T>::params() {
    std::vector<ParamRef<T>> out;
    collect_params(layers, out);
    return out;
}

TokenBatchIdx sample_token_batch_ids(const SparseGraph& g, std::int64_t batch, Rng& rng) {
    require(batch >= 1, Status::invalid_argument, "batch size must be >= 1");
    require(g.directed_entries() > 0, Status::invalid_argument,
            "sample_token_batch: graph has no edges");
    TokenBatchIdx idx;
    idx.centric.resize(batch);
    idx.positive.resize(batch);
    idx.negative.resize(batch);
    const std::uint64_t entries = static_cast<std::uint64_t>(g.directed_entries());
    for (std::int64_t b = 0; b < batch; ++b) {
        // A uniform directed CSR entry is a uniform undirected edge with a
        // uniform orientation.
        const std::uint64_t e = rng.below(entries);
        const auto row = static_cast<std::int64_t>(
            std::upper_bound(g.row_offsets.begin(), g.row_offsets.end(), e) -
            g.row_offsets.begin() - 1);
        idx.centric[b] = static_cast<NodeId>(row);
        idx.positive[b] = g.col_indices[e];

        NodeId neg = idx.positive[b];
        for (int attempt = 0; attempt < 100; ++attempt) {
            neg = static_cast<NodeId>(rng.below(static_cast<std::uint64_t>(g.num_nodes)));
            if (neg != idx.centric[b] && !g.has_edge(idx.centric[b], neg)) break;
        }
        idx.negative[b] = neg;
    }
    return idx;
}

template <typename T>
TokenBatch<T> gather_token_batch(const MatD& tokens, const TokenBatchIdx& idx) {
    const std::int64_t b = idx.batch();
    const std::int64_t d = tokens.cols();
    TokenBatch<T> out;
    out.seq = Mat<T>(3 * b, d);
    out.node_ids.resize(static_cast<std::size_t>(3 * b));
    out.slots.centric.resize(b);
    out.slots.positive.resize(b);
    out.slots.negative.resize(b);
    auto put = [&](std::int64_t row, NodeId node) {
        require(node < tokens.rows(), Status::bounds_error, "batch node id outside token table");
        const double* src = tokens.row(node);
        T* dst = out.seq.row(row);
        for (std::int64_t j = 0; j < d; ++j) dst[j] = static_cast<T>(src[j]);
        out.node_ids[row] = node;
    };
    for (std::int64_t i = 0; i < b; ++i) {
        put(i, idx.centric[i]);
        put(b + i, idx.positive[i]);
        put(2 * b + i, idx.negative[i]);
        out.slots.centric[i] = i;
        out.slots.positive[i] = b + i;
        out.slots.negative[i] = 2 * b + i;
    }
    return out;
}

std::vector<std::int64_t> sample_anchors(std::int64_t batch_len, std::int64_t count, Rng& rng) {
    require(count >= 1, Status::config_error, "anchor count must be >= 1");
    require(count <= batch_len, Status::config_error,
            "anchor count " + std::to_string(count) + " exceeds sequence length " +
                std::to_string(batch_len));
    auto raw = rng.sample_without_replacement(static_cast<std::uint64_t>(batch_len),
                                              static_cast<std::uint64_t>(count));
    return {raw.begin(), raw.end()};
}

template <typename T>
Mat<T> anchor_attention(const TransformerLayer<T>& layer, const Mat<T>& seq,
                        std::span<const std::int64_t> anchors, int heads, LayerCache<T>* cache,
                        int layer_index) {
    const std::int64_t n = seq.rows();
    const std::int64_t d = seq.cols();
    require(d % heads == 0, Status::shape_error, "sequence dim not divisible by heads");
    const std::int64_t dh = d / heads;
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    const std::int64_t s = static_cast<std::int64_t>(anchors.size());
    require(s >= 1 && s <= n, Status::config_error, "anchor set size out of range");

    Mat<T> q = matmul(seq, layer.wq);
    Mat<T> k = matmul(seq, layer.wk);
    Mat<T> v = matmul(seq, layer.wv);
    Mat<T> qa = gather_rows(q, anchors);
    Mat<T> ka = gather_rows(k, anchors);

    // Stage 1: anchors attend over the whole sequence; head outputs are
    // concatenated into d-wide anchor embeddings.
    Mat<T> anchor_concat(s, d);
    std::vector<Mat<T>> attn1;
    attn1.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        const std::int64_t c0 = h * dh;
        Mat<T> a1 = block_nt(qa, k, c0, dh, inv_sqrt);  // s x n
        check_finite(a1, layer_index, "stage-1 attention logits");
        softmax_rows(a1);
        block_matmul_acc(a1, v, c0, dh, anchor_concat);
        attn1.push_back(std::move(a1));
    }

    // Stage 2: every token attends over the anchors; the value transform is
    // applied a second time, now to the stage-1 anchor embeddings.
    Mat<T> v2 = matmul(anchor_concat, layer.wv);
    Mat<T> mix(n, d);
    std::vector<Mat<T>> attn2;
    attn2.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        const std::int64_t c0 = h * dh;
        Mat<T> a2 = block_nt(q, ka, c0, dh, inv_sqrt);  // n x s
        check_finite(a2, layer_index, "stage-2 attention logits");
        softmax_rows(a2);
        block_matmul_acc(a2, v2, c0, dh, mix);
        attn2.push_back(std::move(a2));
    }

    Mat<T> out = matmul(mix, layer.wo);
    add_inplace(out, seq);  // residual

    if (cache) {
        cache->input = seq;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->anchors.assign(anchors.begin(), anchors.end());
        cache->attn1 = std::move(attn1);
        cache->anchor_concat = std::move(anchor_concat);
        cache->v2 = std::move(v2);
        cache->attn2 = std::move(attn2);
        cache->mix = std::move(mix);
        cache->attn_out = out;
    }
    return out;
}

template <typename T>
Mat<T> full_attention(const TransformerLayer<T>& layer, const Mat<T>& seq, int heads,
                      LayerCache<T>* cache, int layer_index) {
    const std::int64_t n = seq.rows();
    const std::int64_t d = seq.cols();
    require(d % heads == 0, Status::shape_error, "sequence dim not divisible by heads");
    const std::int64_t dh = d / heads;
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

    Mat<T> q = matmul(seq, layer.wq);
    Mat<T> k = matmul(seq, layer.wk);
    Mat<T> v = matmul(seq, layer.wv);

    Mat<T> mix(n, d);
    std::vector<Mat<T>> attn;
    attn.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        const std::int64_t c0 = h * dh;
        Mat<T> a = block_nt(q, k, c0, dh, inv_sqrt);  // n x n
        check_finite(a, layer_index, "attention logits");
        softmax_rows(a);
        block_matmul_acc(a, v, c0, dh, mix);
        attn.push_back(std::move(a));
    }
    Mat<T> out = matmul(mix, layer.wo);
    add_inplace(out, seq);

    if (cache) {
        cache->input = seq;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->attn2 = std::move(attn);
        cache->mix = std::move(mix);
        cache->attn_out = out;
    }
    return out;
}

template <typename T>
ForwardResult<T> forward(const TransformerModel<T>& model, const Mat<T>& seq,
                         const std::vector<std::vector<std::int64_t>>& anchor_plan,
                         bool need_grad) {
    require(seq.cols() == model.cfg.dim, Status::shape_error,
            "sequence dim does not match model dim");
    if (model.cfg.attention == AttentionMode::anchor)
        require(anchor_plan.size() >= model.layers.size(), Status::config_error,
                "anchor plan shorter than layer count");

    ForwardResult<T> res;
    if (need_grad) res.caches.resize(model.layers.size());
    Mat<T> x = seq;
    const T inv_k = static_cast<T>(1.0 / model.cfg.scale_k);

    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const TransformerLayer<T>& layer = model.layers[i];
        LayerCache<T>* cache = need_grad ? &res.caches[i] : nullptr;

        Mat<T> attn_out =
            model.cfg.attention == AttentionMode::anchor
                ? anchor_attention(layer, x, anchor_plan[i], model.cfg.heads, cache,
                                   static_cast<int>(i))
                : full_attention(layer, x, model.cfg.heads, cache, static_cast<int>(i));

        Mat<T> h1 = layer_norm_affine(attn_out, layer.ln1_gamma, layer.ln1_beta,
                                      cache ? &cache->ln1 : nullptr);

        // Two-layer FFN with residual.
        Mat<T> pre = matmul(h1, layer.ffn_w1);
        for (std::int64_t r = 0; r < pre.rows(); ++r) {
            T* row = pre.row(r);
            for (std::int64_t j = 0; j < pre.cols(); ++j) row[j] += layer.ffn_b1[j];
        }
        Mat<T> act = pre;
        for (std::int64_t idx = 0; idx < act.size(); ++idx)
            if (act.data()[idx] < T{}) act.data()[idx] = T{};
        Mat<T> h2 = matmul(act, layer.ffn_w2);
        for (std::int64_t r = 0; r < h2.rows(); ++r) {
            T* row = h2.row(r);
            for (std::int64_t j = 0; j < h2.cols(); ++j) row[j] += layer.ffn_b2[j];
        }
        add_inplace(h2, h1);

        Mat<T> h3 = layer_norm_affine(h2, layer.ln2_gamma, layer.ln2_beta,
                                      cache ? &cache->ln2 : nullptr);
        scale_inplace(h3, inv_k);

        if (cache) {
            cache->h1 = std::move(h1);
            cache->ffn_pre = std::move(pre);
            cache->h2 = std::move(h2);
        }
        x = std::move(h3);
    }
    res.output = std::move(x);
    return res;
}

template <typename T>
ForwardResult<T> forward_with_rng(const TransformerModel<T>& model, const Mat<T>& seq, Rng& rng,
                                  bool need_grad) {
    std::vector<std::vector<std::int64_t>> plan;
    if (model.cfg.attention == AttentionMode::anchor) {
        plan.reserve(model.layers.size());
        for (std::size_t i = 0; i < model.layers.size(); ++i)
            plan.push_back(sample_anchors(seq.rows(), std::min<std::int64_t>(model.cfg.anchors, seq.rows()), rng));
    }
    return forward(model, seq, plan, need_grad);
}

template <typename T>
Gradients<T> backward(const TransformerModel<T>& model, const ForwardResult<T>& fwd,
                      const Mat<T>& d_output) {
    require(fwd.caches.size() == model.layers.size(), Status::state_error,
            "backward: forward pass was run without gradient caches");
    Gradients<T> grads;
    for (std::size_t i = 0; i < model.layers.size(); ++i)
        grads.layers.push_back(make_layer<T>(model.cfg));

    const std::int64_t d = model.cfg.dim;
    const std::int64_t dh = d / model.cfg.heads;
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    const T inv_k = static_cast<T>(1.0 / model.cfg.scale_k);

    Mat<T> dx = d_output;
    for (std::int64_t li = static_cast<std::int64_t>(model.layers.size()) - 1; li >= 0; --li) {
        const TransformerLayer<T>& layer = model.layers[li];
        const LayerCache<T>& cache = fwd.caches[li];
        TransformerLayer<T>& g = grads.layers[li];
        const std::int64_t n = cache.input.rows();

        // dividing by K
        scale_inplace(dx, inv_k);

        // LN2
        Mat<T> d_h2 = layer_norm_backward(dx, cache.ln2, layer.ln2_gamma, g.ln2_gamma, g.ln2_beta);

        // FFN with residual: h2 = h1 + relu(h1 w1 + b1) w2 + b2
        Mat<T> d_h1 = d_h2;
        Mat<T> act = cache.ffn_pre;
        for (std::int64_t idx = 0; idx < act.size(); ++idx)
            if (act.data()[idx] < T{}) act.data()[idx] = T{};
        Mat<T> d_act = matmul_nt(d_h2, layer.ffn_w2);           // n x dff
        add_inplace(g.ffn_w2, matmul_tn(act, d_h2));
        for (std::int64_t r = 0; r < n; ++r) {
            const T* row = d_h2.row(r);
            for (std::int64_t j = 0; j < d; ++j) g.ffn_b2[j] += row[j];
        }
        for (std::int64_t idx = 0; idx < d_act.size(); ++idx)
            if (cache.ffn_pre.data()[idx] <= T{}) d_act.data()[idx] = T{};
        add_inplace(g.ffn_w1, matmul_tn(cache.h1, d_act));
        for (std::int64_t r = 0; r < n; ++r) {
            const T* row = d_act.row(r);
            for (std::int64_t j = 0; j < d_act.cols(); ++j) g.ffn_b1[j] += row[j];
        }
        add_inplace(d_h1, matmul_nt(d_act, layer.ffn_w1));

        // LN1
        Mat<T> d_attn_out =
            layer_norm_backward(d_h1, cache.ln1, layer.ln1_gamma, g.ln1_gamma, g.ln1_beta);

        // attn_out = input + mix * wo
        Mat<T> d_input = d_attn_out;  // residual branch
        Mat<T> d_mix = matmul_nt(d_attn_out, layer.wo);
        add_inplace(g.wo, matmul_tn(cache.mix, d_attn_out));

        Mat<T> d_q(n, d), d_k(n, d), d_v(n, d);

        if (model.cfg.attention == AttentionMode::anchor) {
            const std::int64_t s = static_cast<std::int64_t>(cache.anchors.size());
            Mat<T> qa = gather_rows(cache.q, cache.anchors);
            Mat<T> ka = gather_rows(cache.k, cache.anchors);
            Mat<T> d_v2(s, d);
            Mat<T> d_qa(s, d), d_ka(s, d);

            // Stage 2 backward.
            for (int h = 0; h < model.cfg.heads; ++h) {
                const std::int64_t c0 = h * dh;
                const Mat<T>& a2 = cache.attn2[h];
                Mat<T> d_a2 = block_nt(d_mix, cache.v2, c0, dh, T(1));  // n x s
                block_matmul_tn_acc(a2, d_mix, c0, dh, d_v2);
                softmax_backward_inplace(a2, d_a2, inv_sqrt);
                block_matmul_acc(d_a2, ka, c0, dh, d_q);
                block_matmul_tn_acc(d_a2, cache.q, c0, dh, d_ka);
            }

            // v2 = anchor_concat * wv
            Mat<T> d_anchor_concat = matmul_nt(d_v2, layer.wv);
            add_inplace(g.wv, matmul_tn(cache.anchor_concat, d_v2));

            // Stage 1 backward.
            for (int h = 0; h < model.cfg.heads; ++h) {
                const std::int64_t c0 = h * dh;
                const Mat<T>& a1 = cache.attn1[h];
                Mat<T> d_a1 = block_nt(d_anchor_concat, cache.v, c0, dh, T(1));  // s x n
                block_matmul_tn_acc(a1, d_anchor_concat, c0, dh, d_v);
                softmax_backward_inplace(a1, d_a1, inv_sqrt);
                block_matmul_acc(d_a1, cache.k, c0, dh, d_qa);
                block_matmul_tn_acc(d_a1, qa, c0, dh, d_k);
            }

            // Scatter anchor-row gradients back into the sequence-level views.
            for (std::int64_t i = 0; i < s; ++i) {
                const std::int64_t row = cache.anchors[i];
                T* dq_row = d_q.row(row);
                T* dk_row = d_k.row(row);
                const T* dqa_row = d_qa.row(i);
                const T* dka_row = d_ka.row(i);
                for (std::int64_t j = 0; j < d; ++j) {
                    dq_row[j] += dqa_row[j];
                    dk_row[j] += dka_row[j];
                }
            }
        } else {
            for (int h = 0; h < model.cfg.heads; ++h) {
                const std::int64_t c0 = h * dh;
                const Mat<T>& a = cache.attn2[h];
                Mat<T> d_a = block_nt(d_mix, cache.v, c0, dh, T(1));  // n x n
                block_matmul_tn_acc(a, d_mix, c0, dh, d_v);
                softmax_backward_inplace(a, d_a, inv_sqrt);
                block_matmul_acc(d_a, cache.k, c0, dh, d_q);
                block_matmul_tn_acc(d_a, cache.q, c0, dh, d_k);
            }
        }

        // Projections back to the layer input.
        add_inplace(g.wq, matmul_tn(cache.input, d_q));
        add_inplace(g.wk, matmul_tn(cache.input, d_k));
        add_inplace(g.wv, matmul_tn(cache.input, d_v));
        add_inplace(d_input, matmul_nt(d_q, layer.wq));
        add_inplace(d_input, matmul_nt(d_k, layer.wk));
        add_inplace(d_input, matmul_nt(d_v, layer.wv));

        dx = std::move(d_input);
    }
    grads.d_input = std::move(dx);
    return grads;
}

template <typename T>
LossResult<T> pairwise_link_loss(const Mat<T>& out, const BatchSlots& slots) {
    require(slots.centric.size() == slots.positive.size() &&
                slots.centric.size() == slots.negative.size(),
            Status::shape_error, "loss: slot arrays must have equal length");
    const std::int64_t b = static_cast<std::int64_t>(slots.centric.size());
    require(b > 0, Status::invalid_argument, "loss: empty batch");
    const std::int64_t d = out.cols();

    LossResult<T> res;
    res.d_output = Mat<T>(out.rows(), d);
    double total = 0.0;
    const double inv_b = 1.0 / static_cast<double>(b);
    for (std::int64_t i = 0; i < b; ++i) {
        const T* c = out.row(slots.centric[i]);
        const T* p = out.row(slots.positive[i]);
        const T* ng = out.row(slots.negative[i]);
        double s_pos = 0.0, s_neg = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            s_pos += static_cast<double>(c[j]) * static_cast<double>(p[j]);
            s_neg += static_cast<double>(c[j]) * static_cast<double>(ng[j]);
        }
        const double z = s_neg - s_pos;
        total += (std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)))) * inv_b;
        const double gz = (1.0 / (1.0 + std::exp(-z))) * inv_b;  // sigmoid(z)/B

        T* dc = res.d_output.row(slots.centric[i]);
        T* dp = res.d_output.row(slots.positive[i]);
        T* dn = res.d_output.row(slots.negative[i]);
        for (std::int64_t j = 0; j < d; ++j) {
            dc[j] += static_cast<T>(gz * (static_cast<double>(ng[j]) - static_cast<double>(p[j])));
            dp[j] -= static_cast<T>(gz * static_cast<double>(c[j]));
            dn[j] += static_cast<T>(gz * static_cast<double>(c[j]));
        }
    }
    res.loss = total;
    return res;
}

template <typename T>
std::vector<double> link_scores(const Mat<T>& emb, std::span<const EdgePair> pairs) {
    std::vector<double> scores;
    scores.reserve(pairs.size());
    for (const auto& [u, v] : pairs) {
        require(u < emb.rows() && v < emb.rows(), Status::bounds_error,
                "link_scores: node id outside embedding table");
        const T* a = emb.row(u);
        const T* b = emb.row(v);
        double s = 0.0;
        for (std::int64_t j = 0; j < emb.cols(); ++j)
            s += static_cast<double>(a[j]) * static_cast<double>(b[j]);
        scores.push_back(s);
    }
    return scores;
}

// ---- checkpoint io ------------------------------------------------------

namespace {
constexpr char kCkptMagic[4] = {'G', 'F', 'C', 'K'};
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), Status::io_error, "cannot write " + path);
    out.write(kCkptMagic, 4);
    auto w32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto w64 = [&](std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    w32(1);  // version
    w32(static_cast<std::uint32_t>(ckpt.cfg.dim));
    w32(static_cast<std::uint32_t>(ckpt.cfg.layers));
    w32(static_cast<std::uint32_t>(ckpt.cfg.heads));
    w32(static_cast<std::uint32_t>(ckpt.cfg.anchors));
    const float kf = static_cast<float>(ckpt.cfg.scale_k);
    out.write(reinterpret_cast<const char*>(&kf), 4);
    w32(static_cast<std::uint32_t>(ckpt.cfg.effective_ffn_dim()));
    w32(static_cast<std::uint32_t>(ckpt.cfg.attention));
    w64(ckpt.step);
    w32(static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
        w32(static_cast<std::uint32_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        w64(t.data.size());
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * 4));
    }
    require(out.good(), Status::io_error, "short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), Status::io_error, "cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    require(in.good() && std::memcmp(magic, kCkptMagic, 4) == 0, Status::format_error,
            path + ": bad checkpoint magic");
    auto r32 = [&]() {
        std::uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    auto r64 = [&]() {
        std::uint64_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 8);
        return v;
    };
    const std::uint32_t version = r32();
    require(version == 1, Status::format_error, path + ": unsupported checkpoint version");
    Checkpoint ckpt;
    ckpt.cfg.dim = r32();
    ckpt.cfg.layers = static_cast<int>(r32());
    ckpt.cfg.heads = static_cast<int>(r32());
    ckpt.cfg.anchors = r32();
    float kf = 0.0f;
    in.read(reinterpret_cast<char*>(&kf), 4);
    ckpt.cfg.scale_k = kf;
    ckpt.cfg.ffn_dim = r32();
    ckpt.cfg.attention = static_cast<AttentionMode>(r32());
    ckpt.step = r64();
    const std::uint32_t count = r32();
    require(in.good(), Status::io_error, path + ": truncated checkpoint header");
    ckpt.tensors.resize(count);
    for (auto& t : ckpt.tensors) {
        const std::uint32_t name_len = r32();
        require(name_len < 4096, Status::format_error, path + ": implausible tensor name length");
        t.name.resize(name_len);
        in.read(t.name.data(), name_len);
        const std::uint64_t n = r64();
        t.data.resize(n);
        in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(n * 4));
        require(in.good(), Status::io_error, path + ": truncated tensor " + t.name);
    }
    return ckpt;
}

template <typename T>
Checkpoint checkpoint_from_model(const TransformerModel<T>& model, std::uint64_t step) {
    Checkpoint ckpt;
    ckpt.cfg = model.cfg;
    ckpt.step = step;
    for (const auto& p : model.params()) {
        NamedTensorF t;
        t.name = "model." + p.name;
        t.data.resize(static_cast<std::size_t>(p.size));
        for (std::int64_t i = 0; i < p.size; ++i) t.data[i] = static_cast<float>(p.data[i]);
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

template <typename T>
TransformerModel<T> model_from_checkpoint(const Checkpoint& ckpt) {
    TransformerModel<T> model = TransformerModel<T>::zeros(ckpt.cfg);
    auto params = model.params();
    for (auto& p : params) {
        const std::string want = "model." + p.name;
        const NamedTensorF* found = nullptr;
        for (const auto& t : ckpt.tensors)
            if (t.name == want) {
                found = &t;
                break;
            }
        require(found != nullptr, Status::format_error, "checkpoint missing tensor " + want);
        require(static_cast<std::int64_t>(found->data.size()) == p.size, Status::shape_error,
                "checkpoint tensor " + want + " has wrong size");
        for (std::int64_t i = 0; i < p.size; ++i) p.data[i] = static_cast<T>(found->data[i]);
    }
    return model;
}

// ---- explicit instantiations -------------------------------------------

template struct TransformerModel<float>;
template struct TransformerModel<double>;
template struct Gradients<float>;
template struct Gradients<double>;

template TokenBatch<float> gather_token_batch<float>(const MatD&, const TokenBatchIdx&);
template TokenBatch<double> gather_token_batch<double>(const MatD&, const TokenBatchIdx&);

template Mat<float> anchor_attention<float>(const TransformerLayer<float>&, const Mat<float>&,
                                            std::span<const std::int64_t>, int,
                                            LayerCache<float>*, int);
template Mat<double> anchor_attention<double>(const TransformerLayer<double>&, const Mat<double>&,
                                              std::span<const std::int64_t>, int,
                                              LayerCache<double>*, int);
template Mat<float> full_attention<float>(const TransformerLayer<float>&, const Mat<float>&, int,
                                          LayerCache<float>*, int);
template Mat<double> full_attention<double>(const TransformerLayer<double>&, const Mat<double>&,
                                            int, LayerCache<double>*, int);

template ForwardResult<float> forward<float>(const TransformerModel<float>&, const Mat<float>&,
                                             const std::vector<std::vector<std::int64_t>>&, bool);
template ForwardResult<double> forward<double>(const TransformerModel<double>&, const Mat<double>&,
                                               const std::vector<std::vector<std::int64_t>>&,
                                               bool);
template ForwardResult<float> forward_with_rng<float>(const TransformerModel<float>&,
                                                      const Mat<float>&, Rng&, bool);
template ForwardResult<double> forward_with_rng<double>(const TransformerModel<double>&,
                                                        const Mat<double>&, Rng&, bool);

template Gradients<float> backward<float>(const TransformerModel<float>&,
                                          const ForwardResult<float>&, const Mat<float>&);
template Gradients<double> backward<double>(const TransformerModel<double>&,
                                            const ForwardResult<double>&, const Mat<double>&);

template LossResult<float> pairwise_link_loss<float>(const Mat<float>&, const BatchSlots&);
template LossResult<double> pairwise_link_loss<double>(const Mat<double>&, const BatchSlots&);

template std::vector<double> link_scores<float>(const Mat<float>&, std::span<const EdgePair>);
template std::vector<double> link_scores<double>(const Mat<double>&, std::span<const EdgePair>);

template Checkpoint checkpoint_from_model<float>(const TransformerModel<float>&, std::uint64_t);
template Checkpoint checkpoint_from_model<double>(const TransformerModel<double>&, std::uint64_t);
template TransformerModel<float> model_from_checkpoint<float>(const Checkpoint&);
template TransformerModel<double> model_from_checkpoint<double>(const Checkpoint&);

}  // namespace graphfm
