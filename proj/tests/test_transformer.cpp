#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <chrono>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "testutil.hpp"
#include "dataset_io.hpp"
#include "transformer.hpp"

using namespace graphfm;
using namespace graphfm::testing;

namespace {

TransformerModel<double> small_model(std::uint64_t seed, int layers = 2, std::int64_t dim = 8,
                                     int heads = 2, std::int64_t anchors = 2) {
    ModelConfig cfg;
    cfg.dim = dim;
    cfg.layers = layers;
    cfg.heads = heads;
    cfg.anchors = anchors;
    cfg.scale_k = 10.0;
    return TransformerModel<double>::xavier_init(cfg, seed);
}

Mat<double> random_seq(std::int64_t n, std::int64_t d, std::uint64_t seed) {
    Mat<double> seq(n, d);
    Rng rng(seed);
    fill_gaussian(seq, rng);
    return seq;
}

}  // namespace

TEST_CASE("token batch sampling anatomy") {
    SparseGraph k2 = complete_graph(2);
    Rng rng(3);
    TokenBatchIdx idx = sample_token_batch_ids(k2, 1, rng);
    CHECK(k2.has_edge(idx.centric[0], idx.positive[0]));
    // Both nodes are adjacent, so the negative comes from the accept-fallback.
    CHECK(idx.negative[0] <= 1);

    // Path 0-1-2: whenever the centric node is 0, the only valid negative is 2.
    SparseGraph path = path_graph(3);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        Rng r(seed);
        TokenBatchIdx i2 = sample_token_batch_ids(path, 1, r);
        if (i2.centric[0] == 0) CHECK(i2.negative[0] == 2);
    }

    SparseGraph g = random_graph(1000, 3000, 77);
    MatD tokens(1000, 16);
    Rng trng(5);
    fill_gaussian(tokens, trng);
    Rng brng(9);
    TokenBatchIdx big = sample_token_batch_ids(g, 128, brng);
    TokenBatch<double> batch = gather_token_batch<double>(tokens, big);
    CHECK(batch.seq.rows() == 384);
    CHECK(batch.seq.cols() == 16);
    for (std::int64_t b = 0; b < 128; ++b) {
        CHECK(g.has_edge(big.centric[b], big.positive[b]));  // CSR membership oracle
        CHECK(batch.node_ids[b] == big.centric[b]);
        CHECK(batch.node_ids[128 + b] == big.positive[b]);
    }

    SparseGraph edgeless = build_graph(4, {});
    Rng er(1);
    CHECK_THROWS_AS(sample_token_batch_ids(edgeless, 2, er), Error);
}

TEST_CASE("anchor index sampling") {
    Rng rng(4);
    std::vector<std::int64_t> all = sample_anchors(6, 6, rng);
    std::sort(all.begin(), all.end());
    CHECK(all == std::vector<std::int64_t>{0, 1, 2, 3, 4, 5});

    Rng r1(9), r2(9);
    CHECK(sample_anchors(100, 10, r1) == sample_anchors(100, 10, r2));

    std::vector<std::int64_t> one = sample_anchors(50, 1, rng);
    CHECK(one.size() == 1);

    Rng r3(1);
    CHECK_THROWS_AS(sample_anchors(4, 5, r3), Error);
}

TEST_CASE("anchor attention degenerate closed forms") {
    // Single token that is also the only anchor, identity value paths:
    // softmax over one element is 1, W_v applies twice, one residual.
    ModelConfig cfg;
    cfg.dim = 4;
    cfg.layers = 1;
    cfg.heads = 1;
    cfg.anchors = 1;
    TransformerModel<double> model = TransformerModel<double>::zeros(cfg);
    TransformerLayer<double>& l = model.layers[0];
    for (std::int64_t i = 0; i < 4; ++i) {
        l.wv(i, i) = 1.0;
        l.wo(i, i) = 1.0;
    }
    Mat<double> seq = random_seq(1, 4, 8);
    std::vector<std::int64_t> anchors{0};
    Mat<double> out = anchor_attention<double>(l, seq, anchors, 1, nullptr);
    for (std::int64_t j = 0; j < 4; ++j)
        CHECK(out(0, j) == doctest::Approx(2.0 * seq(0, j)).epsilon(1e-12));

    // W_q = 0 makes attention uniform: stage-1 anchor embeddings equal the
    // mean of W_v tokens and every stage-2 output row is identical.
    ModelConfig ucfg;
    ucfg.dim = 4;
    ucfg.layers = 1;
    ucfg.heads = 1;
    ucfg.anchors = 2;
    TransformerModel<double> umodel = TransformerModel<double>::xavier_init(ucfg, 5);
    TransformerLayer<double>& ul = umodel.layers[0];
    ul.wq.fill(0.0);
    Mat<double> useq = random_seq(3, 4, 11);
    std::vector<std::int64_t> uanchors{0, 2};
    LayerCache<double> cache;
    Mat<double> uout = anchor_attention(ul, useq, uanchors, 1, &cache);

    MatD v = matmul(useq, ul.wv);
    for (std::int64_t c = 0; c < 4; ++c) {
        const double mean = (v(0, c) + v(1, c) + v(2, c)) / 3.0;
        CHECK(cache.anchor_concat(0, c) == doctest::Approx(mean).epsilon(1e-12));
        CHECK(cache.anchor_concat(1, c) == doctest::Approx(mean).epsilon(1e-12));
    }
    MatD pre = uout;
    for (std::int64_t t = 0; t < 3; ++t)
        for (std::int64_t c = 0; c < 4; ++c) pre(t, c) -= useq(t, c);  // strip residual
    for (std::int64_t t = 1; t < 3; ++t)
        for (std::int64_t c = 0; c < 4; ++c)
            CHECK(pre(t, c) == doctest::Approx(pre(0, c)).epsilon(1e-12));
}

TEST_CASE("anchor attention matches the dense oracle and rows are simplex") {
    const std::int64_t b = 4, d = 8;
    TransformerModel<double> model = small_model(21, 1, d, 2, 2);
    Mat<double> seq = random_seq(3 * b, d, 33);
    std::vector<std::int64_t> anchors{1, 7};
    LayerCache<double> cache;
    Mat<double> fast = anchor_attention(model.layers[0], seq, anchors, 2, &cache);
    Mat<double> slow = dense_anchor_attention_oracle(model.layers[0], seq, anchors, 2);
    CHECK(max_abs_diff(fast, slow) < 1e-10);

    for (const auto& a : cache.attn1)
        for (std::int64_t i = 0; i < a.rows(); ++i) {
            double sum = 0.0;
            for (std::int64_t j = 0; j < a.cols(); ++j) {
                sum += a(i, j);
                CHECK(a(i, j) >= 0.0);
            }
            CHECK(std::abs(sum - 1.0) < 1e-12);
        }
    for (const auto& a : cache.attn2)
        for (std::int64_t i = 0; i < a.rows(); ++i) {
            double sum = 0.0;
            for (std::int64_t j = 0; j < a.cols(); ++j) sum += a(i, j);
            CHECK(std::abs(sum - 1.0) < 1e-12);
        }
}

TEST_CASE("forward composition") {
    // L' = 0: output equals input.
    ModelConfig cfg;
    cfg.dim = 8;
    cfg.layers = 0;
    cfg.heads = 2;
    cfg.anchors = 2;
    TransformerModel<double> empty = TransformerModel<double>::xavier_init(cfg, 3);
    Mat<double> seq = random_seq(6, 8, 17);
    ForwardResult<double> res = forward(empty, seq, {}, false);
    CHECK(max_abs_diff(res.output, seq) == 0.0);

    // All-zero parameters and input stay zero through LN and scaling.
    TransformerModel<double> zero = TransformerModel<double>::zeros(small_model(0).cfg);
    Mat<double> zseq(6, 8);
    Rng rng(5);
    std::vector<std::vector<std::int64_t>> plan{sample_anchors(6, 2, rng),
                                                sample_anchors(6, 2, rng)};
    ForwardResult<double> zres = forward(zero, zseq, plan, false);
    CHECK(frob_norm(zres.output) == 0.0);

    // Determinism: same seed, same plan, same output.
    TransformerModel<double> m = small_model(9);
    Rng ra(42), rb(42);
    ForwardResult<double> fa = forward_with_rng(m, seq, ra, false);
    ForwardResult<double> fb = forward_with_rng(m, seq, rb, false);
    CHECK(max_abs_diff(fa.output, fb.output) == 0.0);
}

TEST_CASE("forward golden output stays pinned") {
    // Frozen from the double-precision run at first writing; guards the
    // attention -> LN -> FFN -> LN -> /K ordering against regressions.
    TransformerModel<double> model = small_model(1234, 2, 8, 2, 2);
    Mat<double> seq = random_seq(12, 8, 4321);
    Rng rng(99);
    ForwardResult<double> res = forward_with_rng(model, seq, rng, false);
    const double golden[8] = {0.033112268558551199,  -0.11520654191889174, 0.14061443113552968,
                              -0.17638332923105168,  0.03305383583795829,  -0.018041408598774202,
                              0.11483020805964686,   -0.011979463842968423};
    for (std::int64_t j = 0; j < 8; ++j)
        CHECK(res.output(0, j) == doctest::Approx(golden[j]).epsilon(1e-12));
}

TEST_CASE("full attention path matches a quadratic reference") {
    // Full self-attention with anchors == the whole sequence is NOT the same
    // as single-stage attention; check the single-stage path against a naive
    // per-element reference instead.
    const std::int64_t n = 5, d = 6;
    ModelConfig cfg;
    cfg.dim = d;
    cfg.layers = 1;
    cfg.heads = 3;
    cfg.anchors = n;
    cfg.attention = AttentionMode::full;
    TransformerModel<double> model = TransformerModel<double>::xavier_init(cfg, 7);
    const TransformerLayer<double>& l = model.layers[0];
    Mat<double> seq = random_seq(n, d, 77);
    Mat<double> got = full_attention<double>(l, seq, 3, nullptr);

    const std::int64_t dh = d / 3;
    Mat<double> mixed(n, d);
    for (int h = 0; h < 3; ++h) {
        MatD q = matmul(seq, l.wq), k = matmul(seq, l.wk), v = matmul(seq, l.wv);
        for (std::int64_t i = 0; i < n; ++i) {
            std::vector<double> logits(n);
            for (std::int64_t j = 0; j < n; ++j) {
                double dot = 0.0;
                for (std::int64_t c = 0; c < dh; ++c) dot += q(i, h * dh + c) * k(j, h * dh + c);
                logits[j] = dot / std::sqrt(static_cast<double>(dh));
            }
            double hi = *std::max_element(logits.begin(), logits.end());
            double sum = 0.0;
            for (double& x : logits) {
                x = std::exp(x - hi);
                sum += x;
            }
            for (double& x : logits) x /= sum;
            for (std::int64_t j = 0; j < n; ++j)
                for (std::int64_t c = 0; c < dh; ++c)
                    mixed(i, h * dh + c) += logits[j] * v(j, h * dh + c);
        }
    }
    Mat<double> want = matmul(mixed, l.wo);
    add_inplace(want, seq);
    CHECK(max_abs_diff(got, want) < 1e-11);
}

TEST_CASE("matmul gradient convention sanity (single linear layer)") {
    // f(W) = ||X W - Y||^2, df/dW = 2 X^T (X W - Y).
    Rng rng(8);
    MatD x(5, 3), w(3, 4), y(5, 4);
    fill_gaussian(x, rng);
    fill_gaussian(w, rng);
    fill_gaussian(y, rng);
    MatD pred = matmul(x, w);
    MatD resid = pred;
    for (std::int64_t i = 0; i < resid.size(); ++i) resid.data()[i] -= y.data()[i];
    MatD d_pred = resid;
    scale_inplace(d_pred, 2.0);
    MatD grad = matmul_tn(x, d_pred);

    for (std::int64_t r = 0; r < 3; ++r)
        for (std::int64_t c = 0; c < 4; ++c) {
            const double h = 1e-6;
            MatD wp = w;
            wp(r, c) += h;
            MatD wm = w;
            wm(r, c) -= h;
            auto sq = [&](const MatD& wm_) {
                MatD p = matmul(x, wm_);
                double acc = 0.0;
                for (std::int64_t i = 0; i < p.size(); ++i) {
                    const double dd = p.data()[i] - y.data()[i];
                    acc += dd * dd;
                }
                return acc;
            };
            const double fd = (sq(wp) - sq(wm)) / (2.0 * h);
            CHECK(grad(r, c) == doctest::Approx(fd).epsilon(1e-5));
        }
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
    TransformerModel<double> model = small_model(11);
    Mat<double> seq = random_seq(12, 8, 13);
    Rng rng(7);
    ForwardResult<double> fwd = forward_with_rng(model, seq, rng, true);
    Mat<double> d_out(12, 8);  // zeros: loss locally constant
    Gradients<double> grads = backward(model, fwd, d_out);
    for (auto& p : grads.params())
        for (std::int64_t i = 0; i < p.size; ++i) CHECK(p.data[i] == 0.0);
    CHECK(frob_norm(grads.d_input) == 0.0);
}

TEST_CASE("every parameter gradient matches central finite differences") {
    // d=8, B=4 (sequence 12), S=2, H=2, L'=2, double precision.
    const std::int64_t b = 4, d = 8;
    TransformerModel<double> model = small_model(2024, 2, d, 2, 2);
    Mat<double> seq = random_seq(3 * b, d, 515);

    BatchSlots slots;
    for (std::int64_t i = 0; i < b; ++i) {
        slots.centric.push_back(i);
        slots.positive.push_back(b + i);
        slots.negative.push_back(2 * b + i);
    }
    Rng plan_rng(31);
    std::vector<std::vector<std::int64_t>> plan{sample_anchors(3 * b, 2, plan_rng),
                                                sample_anchors(3 * b, 2, plan_rng)};

    auto loss_value = [&]() {
        ForwardResult<double> f = forward(model, seq, plan, false);
        return pairwise_link_loss(f.output, slots).loss;
    };

    ForwardResult<double> fwd = forward(model, seq, plan, true);
    LossResult<double> loss = pairwise_link_loss(fwd.output, slots);
    Gradients<double> grads = backward(model, fwd, loss.d_output);

    auto params = model.params();
    auto gparams = grads.params();
    const double step = 1e-5;
    std::int64_t checked = 0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        for (std::int64_t i = 0; i < params[pi].size; ++i) {
            const double orig = params[pi].data[i];
            params[pi].data[i] = orig + step;
            const double up = loss_value();
            params[pi].data[i] = orig - step;
            const double down = loss_value();
            params[pi].data[i] = orig;
            const double fd = (up - down) / (2.0 * step);
            const double got = gparams[pi].data[i];
            const double denom = std::max({std::abs(fd), std::abs(got), 1e-6});
            REQUIRE_MESSAGE(std::abs(fd - got) / denom < 1e-4,
                            params[pi].name << "[" << i << "] fd=" << fd << " grad=" << got);
            ++checked;
        }
    }
    CHECK(checked > 1000);

    // The input gradient is exact too.
    for (std::int64_t r = 0; r < 2; ++r) {
        for (std::int64_t c = 0; c < d; ++c) {
            const double orig = seq(r, c);
            seq(r, c) = orig + step;
            const double up = loss_value();
            seq(r, c) = orig - step;
            const double down = loss_value();
            seq(r, c) = orig;
            const double fd = (up - down) / (2.0 * step);
            const double got = grads.d_input(r, c);
            CHECK(std::abs(fd - got) / std::max({std::abs(fd), std::abs(got), 1e-6}) < 1e-4);
        }
    }
}

TEST_CASE("full-attention gradients match finite differences") {
    const std::int64_t b = 3, d = 6;
    ModelConfig cfg;
    cfg.dim = d;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.anchors = 1;
    cfg.attention = AttentionMode::full;
    TransformerModel<double> model = TransformerModel<double>::xavier_init(cfg, 6);
    Mat<double> seq = random_seq(3 * b, d, 61);
    BatchSlots slots;
    for (std::int64_t i = 0; i < b; ++i) {
        slots.centric.push_back(i);
        slots.positive.push_back(b + i);
        slots.negative.push_back(2 * b + i);
    }
    auto loss_value = [&]() {
        ForwardResult<double> f = forward(model, seq, {}, false);
        return pairwise_link_loss(f.output, slots).loss;
    };
    ForwardResult<double> fwd = forward(model, seq, {}, true);
    LossResult<double> loss = pairwise_link_loss(fwd.output, slots);
    Gradients<double> grads = backward(model, fwd, loss.d_output);
    auto params = model.params();
    auto gparams = grads.params();
    const double step = 1e-5;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        for (std::int64_t i = 0; i < params[pi].size; i += 3) {  // sample every third
            const double orig = params[pi].data[i];
            params[pi].data[i] = orig + step;
            const double up = loss_value();
            params[pi].data[i] = orig - step;
            const double down = loss_value();
            params[pi].data[i] = orig;
            const double fd = (up - down) / (2.0 * step);
            const double got = gparams[pi].data[i];
            CHECK(std::abs(fd - got) / std::max({std::abs(fd), std::abs(got), 1e-6}) < 1e-4);
        }
    }
}

TEST_CASE("pairwise link loss at the symmetric start") {
    Mat<double> out(6, 4);  // all-zero embeddings: all scores equal
    BatchSlots slots;
    slots.centric = {0, 1};
    slots.positive = {2, 3};
    slots.negative = {4, 5};
    LossResult<double> res = pairwise_link_loss(out, slots);
    CHECK(res.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("link scores") {
    Mat<double> emb(3, 2);
    emb(0, 0) = 1.0;
    emb(1, 0) = 1.0;
    emb(2, 1) = 1.0;
    std::vector<EdgePair> pairs{{0, 1}, {0, 2}};
    std::vector<double> s = link_scores(emb, pairs);
    CHECK(s[0] == 1.0);
    CHECK(s[1] == 0.0);

    Rng rng(19);
    Mat<double> remb(10, 5);
    fill_gaussian(remb, rng);
    std::vector<EdgePair> rpairs;
    for (NodeId i = 0; i < 10; ++i) rpairs.push_back({i, static_cast<NodeId>((i + 3) % 10)});
    std::vector<double> rs = link_scores(remb, rpairs);
    for (std::size_t i = 0; i < rpairs.size(); ++i) {
        double want = 0.0;
        for (std::int64_t j = 0; j < 5; ++j)
            want += remb(rpairs[i].first, j) * remb(rpairs[i].second, j);
        CHECK(rs[i] == want);
    }

    std::vector<EdgePair> bad{{0, 11}};
    CHECK_THROWS_AS(link_scores(remb, bad), Error);
}

TEST_CASE("checkpoint round trip is bit-exact") {
    TransformerModel<float> model = TransformerModel<float>::xavier_init(small_model(77).cfg, 77);
    Checkpoint ckpt = checkpoint_from_model(model, 42);
    const std::string dir = temp_dir("ckpt");
    save_checkpoint(ckpt, dir + "/m.bin");
    Checkpoint back = load_checkpoint(dir + "/m.bin");
    CHECK(back.step == 42);
    CHECK(back.cfg.dim == 8);
    save_checkpoint(back, dir + "/m2.bin");
    CHECK(read_text_file(dir + "/m.bin") == read_text_file(dir + "/m2.bin"));

    TransformerModel<float> loaded = model_from_checkpoint<float>(back);
    auto a = model.params();
    auto b = loaded.params();
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::int64_t j = 0; j < a[i].size; ++j) CHECK(a[i].data[j] == b[i].data[j]);
}

TEST_CASE("anchor attention cost grows linearly in the batch size") {
#ifdef _OPENMP
    omp_set_num_threads(1);  // wall-clock measurement, not a throughput test
#endif
    const std::int64_t d = 64;
    const int heads = 4;
    ModelConfig cfg;
    cfg.dim = d;
    cfg.layers = 1;
    cfg.heads = heads;
    cfg.anchors = 16;
    TransformerModel<float> model = TransformerModel<float>::xavier_init(cfg, 15);
    std::vector<std::int64_t> sizes{256, 512, 1024, 2048};
    std::vector<double> cost;
    for (std::int64_t n : sizes) {
        Mat<float> seq(n, d);
        Rng rng(n);
        fill_uniform(seq, rng, -1.0, 1.0);
        Rng arng(7);
        std::vector<std::int64_t> anchors = sample_anchors(n, 16, arng);
        double best = 1e100;
        for (int rep = 0; rep < 5; ++rep) {
            const auto t0 = std::chrono::steady_clock::now();
            Mat<float> out = anchor_attention<float>(model.layers[0], seq, anchors, heads, nullptr);
            const double dt = std::chrono::duration<double>(
                                  std::chrono::steady_clock::now() - t0)
                                  .count();
            best = std::min(best, dt);
            if (out(0, 0) == 12345.0f) FAIL("unreachable");
        }
        cost.push_back(best);
    }
    // Least-squares slope through the origin-free fit; every point must sit
    // within 15% of the fitted line.
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double m = static_cast<double>(sizes.size());
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        sx += static_cast<double>(sizes[i]);
        sy += cost[i];
        sxx += static_cast<double>(sizes[i]) * static_cast<double>(sizes[i]);
        sxy += static_cast<double>(sizes[i]) * cost[i];
    }
    const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    const double intercept = (sy - slope * sx) / m;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        const double fit = slope * static_cast<double>(sizes[i]) + intercept;
        CHECK(std::abs(cost[i] - fit) / fit < 0.15);
    }
}
