#include "graphfm/graphfm.h"

#include <cstring>
#include <new>
#include <string>

#include "dataset_io.hpp"
#include "json.hpp"
#include "pipeline.hpp"
#include "tokenizer.hpp"
#include "transformer.hpp"

using namespace graphfm;

struct gfm_graph {
    SparseGraph g;
};
struct gfm_tokens {
    MatD m;
    int smoothing = 0;
    std::uint64_t seed = 0;
};
struct gfm_model {
    Checkpoint ckpt;
    TransformerModel<double> model;
};

namespace {

thread_local std::string t_last_error;

gfm_status to_status(Status s) { return static_cast<gfm_status>(static_cast<int>(s)); }

template <typename Fn>
gfm_status guarded(Fn&& fn) {
    try {
        fn();
        t_last_error.clear();
        return GFM_OK;
    } catch (const Error& e) {
        t_last_error = e.what();
        return to_status(e.status());
    } catch (const nlohmann::json::exception& e) {
        t_last_error = e.what();
        return GFM_ERR_PARSE;
    } catch (const std::bad_alloc&) {
        t_last_error = "out of memory";
        return GFM_ERR_INTERNAL;
    } catch (const std::exception& e) {
        t_last_error = e.what();
        return GFM_ERR_INTERNAL;
    }
}

char* dup_string(const std::string& s) {
    char* out = new char[s.size() + 1];
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

gfm_status run_stage(nlohmann::json (*stage)(const nlohmann::json&), const char* config_json,
                     char** out_report_json) {
    return guarded([&] {
        require(config_json != nullptr, Status::invalid_argument, "null config");
        nlohmann::json cfg = nlohmann::json::parse(config_json);
        nlohmann::json report = stage(cfg);
        if (out_report_json) *out_report_json = dup_string(report.dump(2));
    });
}

}  // namespace

extern "C" {

const char* gfm_status_name(gfm_status status) {
    return graphfm::status_name(static_cast<Status>(static_cast<int>(status)));
}

const char* gfm_last_error(void) { return t_last_error.c_str(); }

const char* gfm_version(void) { return "0.1.0"; }

gfm_status gfm_graph_load_edges(const char* path, gfm_graph** out) {
    return guarded([&] {
        require(path && out, Status::invalid_argument, "null argument");
        auto* handle = new gfm_graph{load_edge_tsv(path)};
        *out = handle;
    });
}

gfm_status gfm_graph_load_dir(const char* dir, gfm_graph** out) {
    return guarded([&] {
        require(dir && out, Status::invalid_argument, "null argument");
        auto* handle = new gfm_graph{load_dataset_dir(dir)};
        *out = handle;
    });
}

gfm_status gfm_graph_save_dir(const gfm_graph* graph, const char* dir) {
    return guarded([&] {
        require(graph && dir, Status::invalid_argument, "null argument");
        save_dataset_dir(graph->g, dir);
    });
}

int64_t gfm_graph_num_nodes(const gfm_graph* graph) { return graph ? graph->g.num_nodes : 0; }
int64_t gfm_graph_num_edges(const gfm_graph* graph) {
    return graph ? graph->g.undirected_edges() : 0;
}
int32_t gfm_graph_num_classes(const gfm_graph* graph) { return graph ? graph->g.class_count : 0; }
int gfm_graph_has_features(const gfm_graph* graph) {
    return graph && graph->g.has_features() ? 1 : 0;
}

void gfm_graph_free(gfm_graph* graph) { delete graph; }

gfm_status gfm_tokenize(const gfm_graph* graph, int64_t dim, int32_t smoothing,
                        int32_t power_iters, uint64_t seed, gfm_tokens** out) {
    return guarded([&] {
        require(graph && out, Status::invalid_argument, "null argument");
        Projector proj = build_graph_projector(graph->g, dim, smoothing, power_iters, seed);
        TokenTable table = tokenize(graph->g, proj);
        *out = new gfm_tokens{std::move(table.embeddings), smoothing, seed};
    });
}

int64_t gfm_tokens_rows(const gfm_tokens* tokens) { return tokens ? tokens->m.rows() : 0; }
int64_t gfm_tokens_dim(const gfm_tokens* tokens) { return tokens ? tokens->m.cols() : 0; }

gfm_status gfm_tokens_row(const gfm_tokens* tokens, int64_t row, double* out) {
    return guarded([&] {
        require(tokens && out, Status::invalid_argument, "null argument");
        require(row >= 0 && row < tokens->m.rows(), Status::bounds_error,
                "token row out of range");
        std::memcpy(out, tokens->m.row(row), sizeof(double) * tokens->m.cols());
    });
}

gfm_status gfm_tokens_save(const gfm_tokens* tokens, const char* path) {
    return guarded([&] {
        require(tokens && path, Status::invalid_argument, "null argument");
        TokenTable t;
        t.embeddings = tokens->m;
        t.smoothing_order = tokens->smoothing;
        t.projector_seed = tokens->seed;
        save_token_table(t, path);
    });
}

gfm_status gfm_tokens_load(const char* path, gfm_tokens** out) {
    return guarded([&] {
        require(path && out, Status::invalid_argument, "null argument");
        TokenTable t = load_token_table(path);
        *out = new gfm_tokens{std::move(t.embeddings), t.smoothing_order, t.projector_seed};
    });
}

void gfm_tokens_free(gfm_tokens* tokens) { delete tokens; }

gfm_status gfm_model_load(const char* path, gfm_model** out) {
    return guarded([&] {
        require(path && out, Status::invalid_argument, "null argument");
        Checkpoint ckpt = load_checkpoint(path);
        TransformerModel<double> model = model_from_checkpoint<double>(ckpt);
        *out = new gfm_model{std::move(ckpt), std::move(model)};
    });
}

gfm_status gfm_model_save(const gfm_model* model, const char* path) {
    return guarded([&] {
        require(model && path, Status::invalid_argument, "null argument");
        save_checkpoint(model->ckpt, path);
    });
}

gfm_status gfm_model_info(const gfm_model* model, char** out_json) {
    return guarded([&] {
        require(model && out_json, Status::invalid_argument, "null argument");
        nlohmann::json info;
        info["dim"] = model->ckpt.cfg.dim;
        info["layers"] = model->ckpt.cfg.layers;
        info["heads"] = model->ckpt.cfg.heads;
        info["anchors"] = model->ckpt.cfg.anchors;
        info["scale_k"] = model->ckpt.cfg.scale_k;
        info["ffn_dim"] = model->ckpt.cfg.effective_ffn_dim();
        info["attention"] =
            model->ckpt.cfg.attention == AttentionMode::anchor ? "anchor" : "full";
        info["step"] = model->ckpt.step;
        info["tensors"] = model->ckpt.tensors.size();
        *out_json = dup_string(info.dump(2));
    });
}

gfm_status gfm_model_embed(const gfm_model* model, const gfm_tokens* tokens, uint64_t seed,
                           gfm_tokens** out) {
    return guarded([&] {
        require(model && tokens && out, Status::invalid_argument, "null argument");
        Rng rng(derive_seed(seed, {0x616e6368ull}));
        ForwardResult<double> fwd =
            forward_with_rng(model->model, tokens->m, rng, /*need_grad=*/false);
        *out = new gfm_tokens{std::move(fwd.output), tokens->smoothing, seed};
    });
}

void gfm_model_free(gfm_model* model) { delete model; }

gfm_status gfm_link_scores(const gfm_tokens* embeddings, const uint32_t* pairs,
                           int64_t pair_count, double* out_scores) {
    return guarded([&] {
        require(embeddings && pairs && out_scores, Status::invalid_argument, "null argument");
        require(pair_count >= 0, Status::invalid_argument, "negative pair count");
        std::vector<EdgePair> list(static_cast<std::size_t>(pair_count));
        for (int64_t i = 0; i < pair_count; ++i)
            list[i] = {pairs[2 * i], pairs[2 * i + 1]};
        std::vector<double> scores = link_scores(embeddings->m, list);
        std::memcpy(out_scores, scores.data(), sizeof(double) * scores.size());
    });
}

gfm_status gfm_generate(const char* config_json, char** out_report_json) {
    return run_stage(&run_generate, config_json, out_report_json);
}

gfm_status gfm_pretrain(const char* config_json, char** out_report_json) {
    return run_stage(&run_pretrain, config_json, out_report_json);
}

gfm_status gfm_evaluate(const char* config_json, char** out_report_json) {
    return run_stage(&run_evaluate, config_json, out_report_json);
}

void gfm_string_free(char* text) { delete[] text; }

}  // extern "C"
