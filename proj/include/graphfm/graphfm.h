/*
 * graphfm: graph foundation-model toolkit.
 *
 * C API for the shared library: opaque handles, integer status codes, and
 * JSON-configured pipeline stages. Thread safety: handles are immutable
 * after creation and may be shared across threads; the error message buffer
 * is thread-local.
 */
#ifndef GRAPHFM_H
#define GRAPHFM_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define GFM_API __attribute__((visibility("default")))

typedef enum gfm_status {
    GFM_OK = 0,
    GFM_ERR_INVALID_ARGUMENT = 1,
    GFM_ERR_IO = 2,
    GFM_ERR_PARSE = 3,
    GFM_ERR_BOUNDS = 4,
    GFM_ERR_SHAPE = 5,
    GFM_ERR_NUMERIC = 6,
    GFM_ERR_CONFIG = 7,
    GFM_ERR_STATE = 8,
    GFM_ERR_PROVIDER = 9,
    GFM_ERR_FORMAT = 10,
    GFM_ERR_UNSUPPORTED = 11,
    GFM_ERR_INTERNAL = 12
} gfm_status;

GFM_API const char* gfm_status_name(gfm_status status);

/* Message for the last failing call on this thread; empty string if none. */
GFM_API const char* gfm_last_error(void);

GFM_API const char* gfm_version(void);

/* ---- graphs ---------------------------------------------------------- */

typedef struct gfm_graph gfm_graph;

/* Edge-list text file ("src<TAB>dst" per line, optional "#nodes N"). */
GFM_API gfm_status gfm_graph_load_edges(const char* path, gfm_graph** out);

/* Dataset directory (edges.tsv + meta.json [+ features.bin, labels.tsv]). */
GFM_API gfm_status gfm_graph_load_dir(const char* dir, gfm_graph** out);

GFM_API gfm_status gfm_graph_save_dir(const gfm_graph* graph, const char* dir);

GFM_API int64_t gfm_graph_num_nodes(const gfm_graph* graph);
GFM_API int64_t gfm_graph_num_edges(const gfm_graph* graph); /* undirected */
GFM_API int32_t gfm_graph_num_classes(const gfm_graph* graph);
GFM_API int gfm_graph_has_features(const gfm_graph* graph);

GFM_API void gfm_graph_free(gfm_graph* graph);

/* ---- tokens ---------------------------------------------------------- */

typedef struct gfm_tokens gfm_tokens;

/* Topology-aware tokenization: smoothing order L, randomized-SVD projection
 * of width `dim`, `power_iters` subspace iterations. */
GFM_API gfm_status gfm_tokenize(const gfm_graph* graph, int64_t dim, int32_t smoothing,
                                int32_t power_iters, uint64_t seed, gfm_tokens** out);

GFM_API int64_t gfm_tokens_rows(const gfm_tokens* tokens);
GFM_API int64_t gfm_tokens_dim(const gfm_tokens* tokens);

/* Copies one row into `out` (tokens_dim doubles). */
GFM_API gfm_status gfm_tokens_row(const gfm_tokens* tokens, int64_t row, double* out);

GFM_API gfm_status gfm_tokens_save(const gfm_tokens* tokens, const char* path);
GFM_API gfm_status gfm_tokens_load(const char* path, gfm_tokens** out);

GFM_API void gfm_tokens_free(gfm_tokens* tokens);

/* ---- models ---------------------------------------------------------- */

typedef struct gfm_model gfm_model;

GFM_API gfm_status gfm_model_load(const char* path, gfm_model** out);
GFM_API gfm_status gfm_model_save(const gfm_model* model, const char* path);

/* JSON description: dim, layers, heads, anchors, step, ... */
GFM_API gfm_status gfm_model_info(const gfm_model* model, char** out_json);

/* Full-sequence inference: refined per-node embeddings from a token table. */
GFM_API gfm_status gfm_model_embed(const gfm_model* model, const gfm_tokens* tokens,
                                   uint64_t seed, gfm_tokens** out);

GFM_API void gfm_model_free(gfm_model* model);

/* Dot-product link scores over embedding rows; pairs is [u0,v0,u1,v1,...]. */
GFM_API gfm_status gfm_link_scores(const gfm_tokens* embeddings, const uint32_t* pairs,
                                   int64_t pair_count, double* out_scores);

/* ---- pipeline stages -------------------------------------------------- */

/* Each takes a JSON config string (schemas in the README), writes its
 * artifacts, and returns a JSON report via *out_report_json, which the
 * caller frees with gfm_string_free. */
GFM_API gfm_status gfm_generate(const char* config_json, char** out_report_json);
GFM_API gfm_status gfm_pretrain(const char* config_json, char** out_report_json);
GFM_API gfm_status gfm_evaluate(const char* config_json, char** out_report_json);

GFM_API void gfm_string_free(char* text);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* GRAPHFM_H */
