#include "pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "dataset_io.hpp"
#include "eval.hpp"
#include "generator.hpp"
#include "manifest.hpp"
#include "pretrain.hpp"
#include "provider.hpp"
#include "tokenizer.hpp"

namespace graphfm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

ProviderConfig provider_config_from(const json& cfg, std::uint64_t seed) {
    ProviderConfig pc;
    const json p = cfg.value("provider", json::object());
    pc.backend = p.value("backend", std::string("mock"));
    pc.base_url = p.value("base_url", std::string());
    pc.api_key_env = p.value("api_key_env", std::string(kDefaultApiKeyEnv));
    pc.chat_model = p.value("chat_model", pc.chat_model);
    pc.embed_model = p.value("embed_model", pc.embed_model);
    pc.timeout_seconds = p.value("timeout_seconds", pc.timeout_seconds);
    pc.max_retries = p.value("max_retries", pc.max_retries);
    pc.requests_per_minute = p.value("requests_per_minute", pc.requests_per_minute);
    pc.cache_dir = p.value("cache_dir", std::string());
    pc.mock.children_per_node = p.value("children", 3);
    pc.mock.embedding_dim = p.value("embed_dim", 64);
    pc.mock.cluster_count = p.value("clusters", 2);
    pc.mock.seed = p.value("mock_seed", seed);
    return pc;
}

GibbsConfig gibbs_config_from(const json& cfg, std::uint64_t seed) {
    GibbsConfig gc;
    const json g = cfg.value("gibbs", json::object());
    gc.localities = cfg.value("localities", 7);
    gc.locality_decay = g.value("alpha", 0.95);
    gc.window = g.value("window", 5000);
    gc.thin = g.value("thin", 1000);
    gc.burn_in = g.value("burn_in", 1000);
    gc.locality_shift = g.value("shift", 1000);
    gc.max_steps = g.value("max_steps", std::int64_t{200000});
    gc.initial_edges = g.value("initial_edges", 6);
    gc.continuous_chain = g.value("continuous", false);
    gc.seed = seed;
    return gc;
}

void write_profiles_jsonl(const std::string& path, const std::vector<NodeProfile>& profiles) {
    std::ostringstream out;
    for (const auto& p : profiles) {
        json row;
        row["text"] = p.text;
        row["path"] = p.path;
        row["locality"] = p.locality;
        out << row.dump() << '\n';
    }
    write_text_file(path, out.str());
}

// Shared by pretrain and evaluate: the structure the model actually sees,
// with feature-similarity edges folded in when the dataset has features.
SparseGraph prepare_structure_graph(const SparseGraph& g, const json& cfg) {
    if (!g.has_features() || !cfg.value("feature_edges", true)) return g;
    const std::int64_t batch = cfg.value("feature_batch", std::int64_t{1024});
    const std::int64_t k = cfg.value("feature_k", std::int64_t{5});
    std::vector<EdgePair> extra = features_to_edges(g.features, batch, k);

    std::vector<EdgePair> pairs;
    pairs.reserve(static_cast<std::size_t>(g.undirected_edges()) + extra.size());
    for (std::int64_t u = 0; u < g.num_nodes; ++u)
        for (NodeId v : g.neighbors(static_cast<NodeId>(u)))
            if (static_cast<NodeId>(u) < v) pairs.emplace_back(static_cast<NodeId>(u), v);
    for (const auto& [a, b] : extra)
        if (a != b) pairs.emplace_back(a, b);
    SparseGraph out = build_graph(g.num_nodes, std::move(pairs));
    out.features = g.features;
    out.labels = g.labels;
    out.class_count = g.class_count;
    return out;
}

TrainConfig train_config_from(const json& cfg) {
    TrainConfig tc;
    tc.learning_rate = cfg.value("lr", 1e-4);
    tc.l2_lambda = cfg.value("l2", 1e-6);
    tc.batch = cfg.value("batch", std::int64_t{1024});
    tc.dim = cfg.value("dim", std::int64_t{1024});
    tc.smoothing = cfg.value("smoothing", 3);
    tc.layers = cfg.value("layers", 3);
    tc.heads = cfg.value("heads", 4);
    tc.anchors = cfg.value("anchors", std::int64_t{0}) > 0
                     ? cfg.value("anchors", std::int64_t{0})
                     : tc.dim / tc.heads;  // S = d / H by convention
    tc.scale_k = cfg.value("scale_k", 10.0);
    tc.ffn_dim = cfg.value("ffn_dim", std::int64_t{0});
    tc.projector_refresh_every = cfg.value("refresh_every", 10);
    tc.max_steps = cfg.value("steps", std::int64_t{0});
    tc.seed = cfg.value("seed", std::uint64_t{0});
    tc.svd_power_iters = cfg.value("power_iters", 2);
    tc.strict_mae = cfg.value("strict_mae", false);
    tc.seq_sampling = cfg.value("seq_sampling", true);
    const std::string attention = cfg.value("attention", std::string("anchor"));
    require(attention == "anchor" || attention == "full", Status::config_error,
            "attention must be 'anchor' or 'full'");
    tc.attention = attention == "anchor" ? AttentionMode::anchor : AttentionMode::full;
    tc.variant = cfg.value("variant", std::string("svd"));
    tc.checkpoint_every = cfg.value("checkpoint_every", std::int64_t{0});
    return tc;
}

template <typename T>
json run_pretrain_typed(const json& cfg, const TrainConfig& tc,
                        const std::vector<SparseGraph>& graphs,
                        const std::vector<std::string>& data_dirs) {
    const std::string out_path = cfg.at("out").get<std::string>();
    std::vector<const SparseGraph*> graph_ptrs;
    for (const auto& g : graphs) graph_ptrs.push_back(&g);

    TrainState<T> state;
    if (cfg.contains("resume") && !cfg["resume"].get<std::string>().empty()) {
        Checkpoint ckpt = load_checkpoint(cfg["resume"].get<std::string>());
        state = resume_train_state<T>(ckpt, graph_ptrs, tc);
    } else {
        state = init_train_state<T>(graph_ptrs, tc);
    }

    std::ostringstream loss_csv;
    loss_csv << "step,loss,graph_id\n";
    double final_loss = 0.0;
    std::vector<std::size_t> visits(graphs.size(), 0);

    TrainHooks hooks;
    hooks.on_step = [&](std::uint64_t step, double loss, std::size_t gi) {
        loss_csv << step << ',' << format_double(loss) << ',' << gi << '\n';
        final_loss = loss;
        ++visits[gi];
    };
    hooks.on_checkpoint = [&](std::uint64_t step) {
        Checkpoint ckpt = train_state_checkpoint(state);
        // Write-then-rename keeps the last good checkpoint intact if this
        // write dies halfway.
        const std::string tmp = out_path + ".tmp";
        save_checkpoint(ckpt, tmp);
        fs::rename(tmp, out_path);
        (void)step;
    };

    train_loop(state, tc, hooks);
    hooks.on_checkpoint(state.step);

    if (cfg.contains("loss_csv")) write_text_file(cfg["loss_csv"].get<std::string>(), loss_csv.str());

    // Sidecar manifest: which datasets trained this checkpoint (leakage guard).
    json sidecar;
    sidecar["train_data"] = json::array();
    for (std::size_t i = 0; i < data_dirs.size(); ++i) {
        json entry;
        entry["path"] = data_dirs[i];
        entry["edges_hash"] = fnv1a64(read_text_file(data_dirs[i] + "/edges.tsv"));
        sidecar["train_data"].push_back(entry);
    }
    sidecar["steps"] = state.step;
    sidecar["seed"] = tc.seed;
    write_text_file(out_path + ".json", sidecar.dump(2) + "\n");

    json report;
    report["checkpoint"] = out_path;
    report["steps"] = state.step;
    report["final_loss"] = final_loss;
    report["datasets"] = data_dirs;
    report["graph_visits"] = visits;
    report["config_echo"] = {{"dim", tc.dim},     {"layers", tc.layers},
                             {"heads", tc.heads}, {"anchors", tc.anchors},
                             {"batch", tc.batch}, {"smoothing", tc.smoothing},
                             {"scale_k", tc.scale_k}};
    return report;
}

}  // namespace

json run_generate(const json& cfg) {
    const auto start = std::chrono::steady_clock::now();
    RssSampler rss;

    const std::string out_dir = cfg.at("out").get<std::string>();
    const std::uint64_t seed = cfg.value("seed", std::uint64_t{0});
    const std::string stage = cfg.value("stage", std::string("gen0"));
    require(stage == "gen0" || stage == "gen1" || stage == "gen2", Status::config_error,
            "stage must be gen0, gen1 or gen2");
    const std::string mode_name = cfg.value("mode", std::string("person_entity"));
    require(mode_name == "person_entity" || mode_name == "entity_entity", Status::config_error,
            "mode must be person_entity or entity_entity");

    ProviderConfig pc = provider_config_from(cfg, seed);
    std::unique_ptr<Provider> provider = make_provider(pc);

    GibbsConfig gc = gibbs_config_from(cfg, seed);
    GeneratedGraph gen;
    gen.mode = mode_name == "person_entity" ? InteractionMode::person_entity
                                            : InteractionMode::entity_entity;
    gen.profiles = generate_nodes(cfg.value("root", std::string("products")),
                                  cfg.value("scenario", std::string("an e-commerce platform")),
                                  cfg.value("depth", 5), *provider, gc.localities, seed);
    std::vector<std::string> texts;
    texts.reserve(gen.profiles.size());
    for (const auto& p : gen.profiles) texts.push_back(p.text);
    gen.embeddings = provider->embed(texts);
    gen.interactions = gibbs_sample(gen.profiles, gen.embeddings, gc);

    if (stage != "gen0") {
        // Topology injection: retrain embeddings on the first-pass graph,
        // then regenerate the edges from the refreshed embeddings.
        const int epochs = cfg.value("inject_epochs", 100);
        MatD refreshed = inject_topology(gen, epochs, seed);
        gen.embeddings = std::move(refreshed);
        GibbsConfig gc2 = gc;
        gc2.seed = derive_seed(seed, {0x67656e31ull});
        gen.interactions = gibbs_sample(gen.profiles, gen.embeddings, gc2);
    }

    SparseGraph graph = generated_to_graph(gen);
    std::int64_t entities = static_cast<std::int64_t>(gen.profiles.size());
    std::vector<NodeProfile> profiles = gen.profiles;
    MatD embeddings = gen.embeddings;
    std::int64_t removed = 0;

    if (stage == "gen2") {
        DensifyResult dres = densify(graph, cfg.value("densify_min_degree", std::int64_t{10}));
        removed = dres.removed;
        graph = std::move(dres.graph);
        std::vector<NodeProfile> kept_profiles;
        std::int64_t kept_entities = 0;
        for (NodeId old : dres.kept) {
            if (old < entities) {
                kept_profiles.push_back(gen.profiles[old]);
                ++kept_entities;
            }
        }
        MatD kept_emb(kept_entities, embeddings.cols());
        std::int64_t row = 0;
        for (NodeId old : dres.kept)
            if (old < entities) kept_emb.set_row(row++, embeddings.row(old));
        profiles = std::move(kept_profiles);
        embeddings = std::move(kept_emb);
        entities = kept_entities;
    }

    save_dataset_dir(graph, out_dir);
    write_profiles_jsonl(out_dir + "/profiles.jsonl", profiles);
    write_feature_matrix(out_dir + "/embeddings.bin", cast_mat<double, float>(embeddings));

    json meta = json::parse(read_text_file(out_dir + "/meta.json"));
    meta["entity_count"] = entities;
    meta["mode"] = mode_name;
    meta["stage"] = stage;
    write_text_file(out_dir + "/meta.json", meta.dump(2) + "\n");

    json report;
    report["out"] = out_dir;
    report["stage"] = stage;
    report["entities"] = entities;
    report["nodes"] = graph.num_nodes;
    report["edges"] = graph.undirected_edges();
    report["samples"] = gen.interactions.size();
    report["densify_removed"] = removed;
    write_text_file(out_dir + "/report.json", report.dump(2) + "\n");

    rss.stop();
    json out;
    out["report"] = report;
    out["runtime"] = {{"elapsed_s", elapsed_seconds(start)}, {"peak_rss_mib", rss.peak_mib()}};
    return out;
}

json run_pretrain(const json& cfg) {
    const auto start = std::chrono::steady_clock::now();
    RssSampler rss;

    require(cfg.contains("data") && cfg["data"].is_array() && !cfg["data"].empty(),
            Status::config_error, "pretrain config needs a non-empty data array");
    TrainConfig tc = train_config_from(cfg);

    std::vector<std::string> data_dirs = cfg["data"].get<std::vector<std::string>>();
    std::vector<SparseGraph> graphs;
    graphs.reserve(data_dirs.size());
    for (const auto& dir : data_dirs)
        graphs.push_back(prepare_structure_graph(load_dataset_dir(dir), cfg));

    const std::string precision = cfg.value("precision", std::string("f32"));
    require(precision == "f32" || precision == "f64", Status::config_error,
            "precision must be f32 or f64");

    json report = precision == "f32" ? run_pretrain_typed<float>(cfg, tc, graphs, data_dirs)
                                     : run_pretrain_typed<double>(cfg, tc, graphs, data_dirs);
    report["precision"] = precision;

    rss.stop();
    json out;
    out["report"] = report;
    out["runtime"] = {{"elapsed_s", elapsed_seconds(start)}, {"peak_rss_mib", rss.peak_mib()}};
    return out;
}

json run_evaluate(const json& cfg) {
    const auto start = std::chrono::steady_clock::now();
    RssSampler rss;

    const std::string ckpt_path = cfg.at("checkpoint").get<std::string>();
    const std::string data_dir = cfg.at("data").get<std::string>();
    const std::string task = cfg.value("task", std::string("link"));
    require(task == "link" || task == "node", Status::config_error,
            "task must be 'link' or 'node'");
    const std::uint64_t seed = cfg.value("seed", std::uint64_t{0});

    // Zero-shot leakage guard: refuse checkpoints trained on this dataset.
    const std::uint64_t eval_hash = fnv1a64(read_text_file(data_dir + "/edges.tsv"));
    if (!cfg.value("allow_overlap", false) && file_exists(ckpt_path + ".json")) {
        json sidecar = json::parse(read_text_file(ckpt_path + ".json"));
        for (const auto& entry : sidecar.value("train_data", json::array())) {
            require(entry.value("edges_hash", std::uint64_t{0}) != eval_hash,
                    Status::config_error,
                    "zero-shot evaluation refused: checkpoint was pretrained on " + data_dir +
                        " (pass allow_overlap to override)");
        }
    }

    Checkpoint ckpt = load_checkpoint(ckpt_path);
    TransformerModel<double> model = model_from_checkpoint<double>(ckpt);

    SparseGraph base = load_dataset_dir(data_dir);
    const int smoothing = cfg.value("smoothing", 3);
    const int power_iters = cfg.value("power_iters", 2);

    json metrics;
    json settings;
    settings["checkpoint"] = ckpt_path;
    settings["checkpoint_steps"] = ckpt.step;
    settings["dataset"] = data_dir;
    settings["task"] = task;
    settings["seed"] = seed;
    settings["smoothing"] = smoothing;
    settings["dim"] = ckpt.cfg.dim;

    auto embed_graph = [&](const SparseGraph& g) {
        const std::uint64_t proj_seed = derive_seed(seed, {0x6576616cull});
        Projector proj;
        std::string cache_path;
        if (cfg.contains("projector_cache")) {
            const std::string dir = cfg["projector_cache"].get<std::string>();
            fs::create_directories(dir);
            cache_path = dir + "/" +
                         projector_cache_name(g.structure_hash(), ckpt.cfg.dim, smoothing,
                                              proj_seed);
        }
        if (!cache_path.empty() && file_exists(cache_path)) {
            proj = load_projector(cache_path);
        } else {
            proj = build_graph_projector(g, ckpt.cfg.dim, smoothing, power_iters, proj_seed);
            if (!cache_path.empty()) save_projector(proj, cache_path);
        }
        TokenTable tokens = tokenize(g, proj);
        Rng rng(derive_seed(seed, {0x616e6368ull}));
        ForwardResult<double> fwd =
            forward_with_rng(model, tokens.embeddings, rng, /*need_grad=*/false);
        return fwd.output;
    };

    if (task == "link") {
        std::vector<EdgePair> test_edges;
        SparseGraph structure;
        if (file_exists(data_dir + "/test.tsv")) {
            test_edges = load_pair_tsv(data_dir + "/test.tsv");
            structure = base;
            settings["split"] = "original";
        } else {
            const double frac = cfg.value("holdout_frac", 0.2);
            EdgeSplit split = holdout_split(base, frac, seed);
            test_edges = std::move(split.test);
            SparseGraph reduced = build_graph(base.num_nodes, std::move(split.train));
            reduced.features = base.features;
            reduced.labels = base.labels;
            reduced.class_count = base.class_count;
            structure = std::move(reduced);
            settings["split"] = "holdout";
            settings["holdout_frac"] = frac;
        }

        const std::int64_t k_shot = cfg.value("k_shot", std::int64_t{0});
        if (k_shot > 0) {
            std::vector<EdgePair> edges;
            for (std::int64_t u = 0; u < structure.num_nodes; ++u)
                for (NodeId v : structure.neighbors(static_cast<NodeId>(u)))
                    if (static_cast<NodeId>(u) < v) edges.emplace_back(static_cast<NodeId>(u), v);
            std::vector<EdgePair> kept = k_shot_link_split(edges, k_shot, seed);
            SparseGraph reduced = build_graph(structure.num_nodes, std::move(kept));
            reduced.features = structure.features;
            reduced.labels = structure.labels;
            reduced.class_count = structure.class_count;
            structure = std::move(reduced);
            settings["k_shot"] = k_shot;
        }

        structure = prepare_structure_graph(structure, cfg);

        RecallOptions opt;
        opt.cutoffs = cfg.value("recall", std::vector<std::int64_t>{20, 40});
        opt.micro = cfg.value("micro", false);
        json meta = json::parse(read_text_file(data_dir + "/meta.json"));
        if (cfg.value("bipartite", true) && meta.contains("entity_count") &&
            meta.value("mode", std::string()) == "person_entity")
            opt.partition_boundary = meta["entity_count"].get<std::int64_t>();
        settings["cutoffs"] = opt.cutoffs;
        settings["micro"] = opt.micro;
        settings["partition_boundary"] = opt.partition_boundary;

        MatD emb = embed_graph(structure);
        RecallReport rep = recall_at_n(emb, structure, test_edges, opt);
        for (const auto& [cutoff, value] : rep.recall)
            metrics["recall@" + std::to_string(cutoff)] = value;
        metrics["query_nodes"] = rep.query_count;
        metrics["skipped_queries"] = rep.skipped;
        metrics["test_edges"] = test_edges.size();
    } else {
        require(base.has_labels() && base.class_count > 0, Status::invalid_argument,
                "node task requires labels.tsv and num_classes in meta.json");

        std::vector<std::pair<NodeId, std::int32_t>> train_labels;
        if (file_exists(data_dir + "/train_nodes.tsv")) {
            for (NodeId v : load_node_list(data_dir + "/train_nodes.tsv")) {
                require(v < base.num_nodes && base.labels[v] >= 0, Status::invalid_argument,
                        "train_nodes.tsv lists an unlabeled or out-of-range node");
                train_labels.emplace_back(v, base.labels[v]);
            }
            settings["split"] = "train_nodes.tsv";
        } else {
            const std::int64_t k_shot = cfg.value("k_shot", std::int64_t{0});
            require(k_shot > 0, Status::config_error,
                    "node task needs train_nodes.tsv or a positive k_shot");
            train_labels = k_shot_node_split(base, k_shot, seed);
            settings["split"] = "k_shot";
            settings["k_shot"] = k_shot;
        }

        std::vector<bool> in_train(static_cast<std::size_t>(base.num_nodes), false);
        for (const auto& [node, _] : train_labels) in_train[node] = true;
        std::vector<NodeId> test_nodes;
        std::vector<std::int32_t> truths;
        for (std::int64_t v = 0; v < base.num_nodes; ++v) {
            if (base.labels[v] >= 0 && !in_train[v]) {
                test_nodes.push_back(static_cast<NodeId>(v));
                truths.push_back(base.labels[v]);
            }
        }

        SparseGraph structure = prepare_structure_graph(base, cfg);
        SparseGraph augmented = class_nodes_augment(structure, train_labels);
        MatD emb = embed_graph(augmented);
        std::vector<std::int32_t> preds =
            classify_by_class_nodes(emb, base.num_nodes, base.class_count, test_nodes);
        ClassificationMetrics cm = accuracy_macro_f1(preds, truths, base.class_count);
        metrics["accuracy"] = cm.accuracy;
        metrics["macro_f1"] = cm.macro_f1;
        metrics["test_nodes"] = test_nodes.size();
        metrics["train_labels"] = train_labels.size();
    }

    json report;
    report["schema_version"] = 1;
    report["metrics"] = metrics;
    report["settings"] = settings;
    if (cfg.contains("out")) write_text_file(cfg["out"].get<std::string>(), report.dump(2) + "\n");

    rss.stop();
    json out;
    out["report"] = report;
    out["runtime"] = {{"elapsed_s", elapsed_seconds(start)}, {"peak_rss_mib", rss.peak_mib()}};
    return out;
}

}  // namespace graphfm
