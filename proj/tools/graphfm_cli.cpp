// graphfm command-line front end. Talks to the core exclusively through the
// C API in graphfm/graphfm.h; flag parsing, config resolution, run manifests
// and the ablation driver live here.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "graphfm/graphfm.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int status_exit_code(gfm_status s) {
    if (s == GFM_OK) return 0;
    if (s == GFM_ERR_CONFIG || s == GFM_ERR_INVALID_ARGUMENT) return 1;
    return 2;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) throw CLI::ValidationError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
}

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string iso_now() {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string self_exe() {
    char buf[4096];
    const ssize_t n = ::readlink("/proc/self/exe", buf, sizeof(buf) - 1);
    if (n <= 0) return "graphfm";
    buf[n] = '\0';
    return buf;
}

// Known dataset inputs referenced by a config, hashed for the manifest.
json input_hashes(const json& cfg) {
    json hashes = json::object();
    auto add = [&](const std::string& dir) {
        const std::string edges = dir + "/edges.tsv";
        if (fs::exists(edges)) {
            char hex[24];
            std::snprintf(hex, sizeof(hex), "%016llx",
                          static_cast<unsigned long long>(fnv1a(read_file(edges))));
            hashes[edges] = hex;
        }
    };
    if (cfg.contains("data")) {
        if (cfg["data"].is_array())
            for (const auto& d : cfg["data"]) add(d.get<std::string>());
        else
            add(cfg["data"].get<std::string>());
    }
    if (cfg.contains("checkpoint") && fs::exists(cfg["checkpoint"].get<std::string>())) {
        char hex[24];
        std::snprintf(hex, sizeof(hex), "%016llx",
                      static_cast<unsigned long long>(
                          fnv1a(read_file(cfg["checkpoint"].get<std::string>()))));
        hashes[cfg["checkpoint"].get<std::string>()] = hex;
    }
    return hashes;
}

// Manifest path for a run: next to the primary output.
std::string manifest_path_for(const json& cfg, const std::string& command) {
    if (cfg.contains("manifest")) return cfg["manifest"].get<std::string>();
    if (cfg.contains("out")) {
        const std::string out = cfg["out"].get<std::string>();
        if (command == "generate") return out + "/manifest.json";
        return out + ".manifest.json";
    }
    return command + ".manifest.json";
}

struct RunOutcome {
    gfm_status status = GFM_OK;
    json result;  // {"report":..., "runtime":...} on success
    std::string error;
};

RunOutcome run_command(const std::string& command, const json& cfg) {
    RunOutcome outcome;
    const std::string manifest_path = manifest_path_for(cfg, command);

    json manifest;
    manifest["command"] = command;
    manifest["binary_version"] = gfm_version();
    manifest["resolved_config"] = cfg;
    manifest["seed"] = cfg.value("seed", std::uint64_t{0});
    manifest["input_hashes"] = input_hashes(cfg);
    manifest["started_at"] = iso_now();
    manifest["status"] = "running";
    write_file(manifest_path, manifest.dump(2) + "\n");

    char* report = nullptr;
    gfm_status st = GFM_ERR_INTERNAL;
    if (command == "generate")
        st = gfm_generate(cfg.dump().c_str(), &report);
    else if (command == "pretrain")
        st = gfm_pretrain(cfg.dump().c_str(), &report);
    else if (command == "evaluate")
        st = gfm_evaluate(cfg.dump().c_str(), &report);

    outcome.status = st;
    if (st == GFM_OK && report) {
        outcome.result = json::parse(report);
        manifest["runtime"] = outcome.result.value("runtime", json::object());
        manifest["status"] = "ok";
    } else {
        outcome.error = gfm_last_error();
        manifest["status"] = "failed";
        manifest["error"] = outcome.error;
    }
    manifest["finished_at"] = iso_now();
    write_file(manifest_path, manifest.dump(2) + "\n");
    if (report) gfm_string_free(report);
    return outcome;
}

int finish_run(const std::string& command, const json& cfg) {
    std::cerr << "[graphfm] " << command << " config: " << cfg.dump() << "\n";
    RunOutcome outcome = run_command(command, cfg);
    if (outcome.status != GFM_OK) {
        std::cerr << "[graphfm] " << command << " failed (" << gfm_status_name(outcome.status)
                  << "): " << outcome.error << "\n";
        return status_exit_code(outcome.status);
    }
    std::cout << outcome.result.dump(2) << std::endl;

    // Evaluate contract: any missing/NaN metric is a failure exit.
    if (command == "evaluate") {
        const json metrics = outcome.result["report"].value("metrics", json::object());
        for (const auto& [key, value] : metrics.items()) {
            if (value.is_null() ||
                (value.is_number_float() && !std::isfinite(value.get<double>()))) {
                std::cerr << "[graphfm] metric " << key << " is not finite\n";
                return 2;
            }
        }
    }
    return 0;
}

// Overlay: CLI flags the user actually passed win over the config file,
// which wins over built-in defaults (handled by the library).
class ConfigBuilder {
public:
    explicit ConfigBuilder(CLI::App* app) : app_(app) {}

    json resolve(const std::string& config_file) const {
        json cfg = json::object();
        if (!config_file.empty()) cfg = json::parse(read_file(config_file));
        for (const auto& [key, fill] : fillers_)
            if (app_->count(key) > 0) fill(cfg);
        return cfg;
    }

    void opt_int(const std::string& flag, const std::string& key, std::int64_t& slot) {
        app_->add_option(flag, slot);
        fillers_.emplace_back(flag, [key, &slot](json& cfg) { cfg[key] = slot; });
    }
    void opt_double(const std::string& flag, const std::string& key, double& slot) {
        app_->add_option(flag, slot);
        fillers_.emplace_back(flag, [key, &slot](json& cfg) { cfg[key] = slot; });
    }
    void opt_string(const std::string& flag, const std::string& key, std::string& slot) {
        app_->add_option(flag, slot);
        fillers_.emplace_back(flag, [key, &slot](json& cfg) { cfg[key] = slot; });
    }
    void opt_bool(const std::string& flag, const std::string& key, bool& slot, bool value) {
        app_->add_flag(flag, slot);
        fillers_.emplace_back(flag, [key, value](json& cfg) { cfg[key] = value; });
    }
    // Nested key, e.g. provider.children.
    void opt_nested_int(const std::string& flag, const std::string& outer,
                        const std::string& inner, std::int64_t& slot) {
        app_->add_option(flag, slot);
        fillers_.emplace_back(flag, [outer, inner, &slot](json& cfg) { cfg[outer][inner] = slot; });
    }
    void opt_nested_double(const std::string& flag, const std::string& outer,
                           const std::string& inner, double& slot) {
        app_->add_option(flag, slot);
        fillers_.emplace_back(flag, [outer, inner, &slot](json& cfg) { cfg[outer][inner] = slot; });
    }
    void opt_nested_string(const std::string& flag, const std::string& outer,
                           const std::string& inner, std::string& slot) {
        app_->add_option(flag, slot);
        fillers_.emplace_back(flag, [outer, inner, &slot](json& cfg) { cfg[outer][inner] = slot; });
    }

private:
    CLI::App* app_;
    std::vector<std::pair<std::string, std::function<void(json&)>>> fillers_;
};

struct AblateArgs {
    std::string config_file, data, out_dir, eval_data;
    std::string variants = "full,-Anc,-Seq";
    std::string smoothing_sweep, dim_sweep, layers_sweep, proj_sweep;
    std::int64_t steps = 20;
    std::uint64_t seed = 0;
};

std::vector<std::string> split_csv(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

int run_ablate(const AblateArgs& args) {
    if (args.data.empty() || args.out_dir.empty()) {
        std::cerr << "[graphfm] ablate requires --data and --out\n";
        return 1;
    }
    fs::create_directories(args.out_dir);

    json base = json::object();
    if (!args.config_file.empty()) base = json::parse(read_file(args.config_file));
    base["data"] = split_csv(args.data);
    base["steps"] = args.steps;
    base["seed"] = args.seed;

    struct Run {
        std::string name;
        json overrides;
    };
    std::vector<Run> runs;
    for (const auto& v : split_csv(args.variants)) {
        if (v == "full")
            runs.push_back({"full", {}});
        else if (v == "-S-A")
            runs.push_back({"no-seq-no-anchor",
                            {{"seq_sampling", false}, {"attention", "full"}}});
        else if (v == "-Anc")
            runs.push_back({"no-anchor", {{"attention", "full"}}});
        else if (v == "-Seq")
            runs.push_back({"no-seq", {{"seq_sampling", false}}});
        else {
            std::cerr << "[graphfm] unknown variant " << v << " (use full,-S-A,-Anc,-Seq)\n";
            return 1;
        }
    }
    for (const auto& l : split_csv(args.smoothing_sweep))
        runs.push_back({"smoothing-" + l, {{"smoothing", std::stoll(l)}}});
    for (const auto& d : split_csv(args.dim_sweep))
        runs.push_back({"dim-" + d, {{"dim", std::stoll(d)}, {"anchors", 0}}});
    for (const auto& l : split_csv(args.layers_sweep))
        runs.push_back({"layers-" + l, {{"layers", std::stoll(l)}}});
    for (const auto& p : split_csv(args.proj_sweep))
        runs.push_back({"proj-" + p, {{"variant", p}}});

    const std::string exe = self_exe();
    json bundle = json::array();
    bool any_failed = false;

    for (const auto& run : runs) {
        json cfg = base;
        for (const auto& [k, v] : run.overrides.items()) cfg[k] = v;
        const std::string stem = args.out_dir + "/" + run.name;
        cfg["out"] = stem + ".ckpt";
        cfg["loss_csv"] = stem + ".loss.csv";
        write_file(stem + ".config.json", cfg.dump(2) + "\n");

        // Each configuration runs in a child process so its peak resident
        // memory is measured in isolation.
        const std::string cmd = "'" + exe + "' pretrain --config '" + stem + ".config.json' > '" +
                                stem + ".result.json' 2> '" + stem + ".log'";
        std::cerr << "[graphfm] ablate run " << run.name << "\n";
        const int rc = std::system(cmd.c_str());

        json entry;
        entry["name"] = run.name;
        entry["overrides"] = run.overrides;
        entry["exit_code"] = rc == 0 ? 0 : 2;
        if (rc == 0) {
            json result = json::parse(read_file(stem + ".result.json"));
            entry["report"] = result["report"];
            entry["runtime"] = result["runtime"];

            if (!args.eval_data.empty()) {
                json ecfg;
                ecfg["checkpoint"] = cfg["out"];
                ecfg["data"] = args.eval_data;
                ecfg["seed"] = args.seed;
                ecfg["allow_overlap"] = true;  // ablation measures fit, not transfer
                write_file(stem + ".eval.config.json", ecfg.dump(2) + "\n");
                const std::string ecmd = "'" + exe + "' evaluate --config '" + stem +
                                         ".eval.config.json' > '" + stem + ".eval.json' 2>> '" +
                                         stem + ".log'";
                if (std::system(ecmd.c_str()) == 0)
                    entry["eval"] = json::parse(read_file(stem + ".eval.json"))["report"];
            }
        } else {
            any_failed = true;
        }
        bundle.push_back(entry);
    }

    write_file(args.out_dir + "/ablation.json", bundle.dump(2) + "\n");
    std::cout << bundle.dump(2) << std::endl;
    return any_failed ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"graphfm: graph foundation-model toolkit (generate / pretrain / evaluate / ablate)"};
    app.require_subcommand(1);

    // ---- rerun from a manifest ----
    std::string from_manifest;
    auto* rerun = app.add_subcommand("rerun", "re-run a command from its manifest");
    rerun->add_option("--manifest", from_manifest, "manifest json of a previous run")->required();

    // ---- generate ----
    auto* gen = app.add_subcommand("generate", "synthesize a graph dataset via a provider");
    std::string g_config;
    gen->add_option("--config", g_config, "json config file");
    ConfigBuilder gb(gen);
    std::string g_out, g_root, g_scenario, g_mode, g_stage, g_provider, g_base_url, g_chat_model,
        g_embed_model, g_key_env, g_cache_dir;
    std::int64_t g_seed = 0, g_depth = 0, g_localities = 0, g_children = 0, g_embed_dim = 0,
                 g_clusters = 0, g_window = 0, g_thin = 0, g_burn_in = 0, g_shift = 0,
                 g_max_steps = 0, g_initial = 0, g_densify = 0, g_inject_epochs = 0;
    double g_alpha = 0.0;
    bool g_continuous = false;
    gb.opt_string("--out", "out", g_out);
    gb.opt_int("--seed", "seed", g_seed);
    gb.opt_string("--root", "root", g_root);
    gb.opt_string("--scenario", "scenario", g_scenario);
    gb.opt_int("--depth", "depth", g_depth);
    gb.opt_int("--localities", "localities", g_localities);
    gb.opt_string("--mode", "mode", g_mode);
    gb.opt_string("--stage", "stage", g_stage);
    gb.opt_int("--inject-epochs", "inject_epochs", g_inject_epochs);
    gb.opt_int("--densify-min-degree", "densify_min_degree", g_densify);
    gen->add_option("--provider", g_provider, "mock | http");
    gb.opt_nested_string("--base-url", "provider", "base_url", g_base_url);
    gb.opt_nested_string("--chat-model", "provider", "chat_model", g_chat_model);
    gb.opt_nested_string("--embed-model", "provider", "embed_model", g_embed_model);
    gb.opt_nested_string("--api-key-env", "provider", "api_key_env", g_key_env);
    gb.opt_nested_string("--cache-dir", "provider", "cache_dir", g_cache_dir);
    gb.opt_nested_int("--children", "provider", "children", g_children);
    gb.opt_nested_int("--embed-dim", "provider", "embed_dim", g_embed_dim);
    gb.opt_nested_int("--clusters", "provider", "clusters", g_clusters);
    gb.opt_nested_double("--alpha", "gibbs", "alpha", g_alpha);
    gb.opt_nested_int("--window", "gibbs", "window", g_window);
    gb.opt_nested_int("--thin", "gibbs", "thin", g_thin);
    gb.opt_nested_int("--burn-in", "gibbs", "burn_in", g_burn_in);
    gb.opt_nested_int("--shift", "gibbs", "shift", g_shift);
    gb.opt_nested_int("--gibbs-steps", "gibbs", "max_steps", g_max_steps);
    gb.opt_nested_int("--initial-edges", "gibbs", "initial_edges", g_initial);
    gen->add_flag("--continuous-chain", g_continuous);

    // ---- pretrain ----
    auto* pre = app.add_subcommand("pretrain", "masked-autoencoding pretraining");
    std::string p_config;
    pre->add_option("--config", p_config, "json config file");
    ConfigBuilder pb(pre);
    std::string p_data, p_out, p_loss_csv, p_precision, p_attention, p_variant, p_resume;
    std::int64_t p_seed = 0, p_steps = 0, p_batch = 0, p_dim = 0, p_smoothing = 0, p_layers = 0,
                 p_heads = 0, p_anchors = 0, p_refresh = 0, p_ckpt_every = 0;
    double p_lr = 0.0, p_l2 = 0.0, p_scale_k = 0.0;
    bool p_strict = false, p_no_seq = false;
    pre->add_option("--data", p_data, "comma-separated dataset dirs");
    pb.opt_string("--out", "out", p_out);
    pb.opt_string("--loss-csv", "loss_csv", p_loss_csv);
    pb.opt_int("--seed", "seed", p_seed);
    pb.opt_int("--steps", "steps", p_steps);
    pb.opt_int("--batch", "batch", p_batch);
    pb.opt_int("--dim", "dim", p_dim);
    pb.opt_int("--smoothing", "smoothing", p_smoothing);
    pb.opt_int("--layers", "layers", p_layers);
    pb.opt_int("--heads", "heads", p_heads);
    pb.opt_int("--anchors", "anchors", p_anchors);
    pb.opt_int("--refresh-every", "refresh_every", p_refresh);
    pb.opt_int("--checkpoint-every", "checkpoint_every", p_ckpt_every);
    pb.opt_double("--lr", "lr", p_lr);
    pb.opt_double("--l2", "l2", p_l2);
    pb.opt_double("--scale-k", "scale_k", p_scale_k);
    pb.opt_string("--precision", "precision", p_precision);
    pb.opt_string("--attention", "attention", p_attention);
    pb.opt_string("--variant", "variant", p_variant);
    pb.opt_string("--resume", "resume", p_resume);
    pb.opt_bool("--strict-mae", "strict_mae", p_strict, true);
    pb.opt_bool("--no-seq-sampling", "seq_sampling", p_no_seq, false);

    // ---- evaluate ----
    auto* eva = app.add_subcommand("evaluate", "zero-shot / k-shot evaluation");
    std::string e_config;
    eva->add_option("--config", e_config, "json config file");
    ConfigBuilder eb(eva);
    std::string e_ckpt, e_data, e_task, e_recall, e_out;
    std::int64_t e_seed = 0, e_kshot = 0, e_smoothing = 0;
    double e_holdout = 0.0;
    bool e_micro = false, e_overlap = false;
    eb.opt_string("--checkpoint", "checkpoint", e_ckpt);
    eb.opt_string("--data", "data", e_data);
    eb.opt_string("--task", "task", e_task);
    eb.opt_string("--out", "out", e_out);
    eb.opt_int("--seed", "seed", e_seed);
    eb.opt_int("--k-shot", "k_shot", e_kshot);
    eb.opt_int("--smoothing", "smoothing", e_smoothing);
    eb.opt_double("--holdout-frac", "holdout_frac", e_holdout);
    eb.opt_bool("--micro", "micro", e_micro, true);
    eb.opt_bool("--allow-overlap", "allow_overlap", e_overlap, true);
    eva->add_option("--recall", e_recall, "comma-separated cutoffs, default 20,40");

    // ---- ablate ----
    auto* abl = app.add_subcommand("ablate", "sampling/tokenizer/scale ablation matrix");
    AblateArgs aargs;
    abl->add_option("--config", aargs.config_file, "base pretrain config file");
    abl->add_option("--data", aargs.data, "comma-separated dataset dirs")->required();
    abl->add_option("--out", aargs.out_dir, "output directory")->required();
    abl->add_option("--variants", aargs.variants, "full,-S-A,-Anc,-Seq");
    abl->add_option("--smoothing-sweep", aargs.smoothing_sweep, "e.g. 0,1,2,3");
    abl->add_option("--dim-sweep", aargs.dim_sweep);
    abl->add_option("--layers-sweep", aargs.layers_sweep);
    abl->add_option("--proj-sweep", aargs.proj_sweep, "svd,one_hot,degree,random");
    abl->add_option("--steps", aargs.steps);
    abl->add_option("--seed", aargs.seed);
    abl->add_option("--eval-data", aargs.eval_data, "dataset dir for post-run evaluation");

    CLI11_PARSE(app, argc, argv);

    try {
        if (rerun->parsed()) {
            json manifest = json::parse(read_file(from_manifest));
            return finish_run(manifest.at("command").get<std::string>(),
                              manifest.at("resolved_config"));
        }
        if (gen->parsed()) {
            json cfg = gb.resolve(g_config);
            if (gen->count("--provider") > 0) cfg["provider"]["backend"] = g_provider;
            if (g_continuous) cfg["gibbs"]["continuous"] = true;
            if (!cfg.contains("out")) {
                std::cerr << "[graphfm] generate requires --out\n";
                return 1;
            }
            return finish_run("generate", cfg);
        }
        if (pre->parsed()) {
            json cfg = pb.resolve(p_config);
            if (pre->count("--data") > 0) cfg["data"] = split_csv(p_data);
            if (!cfg.contains("out") || !cfg.contains("data")) {
                std::cerr << "[graphfm] pretrain requires --out and --data\n";
                return 1;
            }
            return finish_run("pretrain", cfg);
        }
        if (eva->parsed()) {
            json cfg = eb.resolve(e_config);
            if (eva->count("--recall") > 0) {
                std::vector<std::int64_t> cutoffs;
                for (const auto& c : split_csv(e_recall)) cutoffs.push_back(std::stoll(c));
                cfg["recall"] = cutoffs;
            }
            if (!cfg.contains("checkpoint") || !cfg.contains("data")) {
                std::cerr << "[graphfm] evaluate requires --checkpoint and --data\n";
                return 1;
            }
            return finish_run("evaluate", cfg);
        }
        if (abl->parsed()) return run_ablate(aargs);
    } catch (const json::exception& e) {
        std::cerr << "[graphfm] config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "[graphfm] error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
