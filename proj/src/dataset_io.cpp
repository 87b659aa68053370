#include "dataset_io.hpp"

#include <charconv>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace graphfm {

namespace fs = std::filesystem;
using nlohmann::json;

bool file_exists(const std::string& path) { return fs::exists(path); }

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), Status::io_error, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), Status::io_error, "cannot write " + path);
    out << content;
    require(out.good(), Status::io_error, "short write to " + path);
}

std::uint64_t hash_file(const std::string& path) {
    const std::string bytes = read_text_file(path);
    return fnv1a64(bytes.data(), bytes.size());
}

namespace {

bool parse_u64(std::string_view tok, std::uint64_t& out) {
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc{} && ptr == last;
}

// Splits a line into whitespace-separated tokens.
std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> toks;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
        if (j > i) toks.push_back(line.substr(i, j - i));
        i = j;
    }
    return toks;
}

struct ParsedEdges {
    std::int64_t declared_nodes = -1;
    std::vector<EdgePair> pairs;
};

ParsedEdges parse_edge_lines(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), Status::io_error, "cannot open " + path);
    ParsedEdges out;
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        if (line[0] == '#') {
            auto toks = split_ws(std::string_view(line).substr(1));
            if (!toks.empty() && toks[0] == "nodes") {
                std::uint64_t n = 0;
                require(toks.size() == 2 && parse_u64(toks[1], n), Status::parse_error,
                        path + ":" + std::to_string(lineno) + ": bad node-count header");
                out.declared_nodes = static_cast<std::int64_t>(n);
            }
            continue;
        }
        auto toks = split_ws(line);
        std::uint64_t a = 0, b = 0;
        require(toks.size() == 2 && parse_u64(toks[0], a) && parse_u64(toks[1], b),
                Status::parse_error,
                path + ":" + std::to_string(lineno) + ": malformed edge line");
        require(a <= 0xffffffffull && b <= 0xffffffffull, Status::bounds_error,
                path + ":" + std::to_string(lineno) + ": node id too large");
        out.pairs.emplace_back(static_cast<NodeId>(a), static_cast<NodeId>(b));
    }
    return out;
}

template <typename T>
void write_le(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    require(in.good(), Status::io_error, "truncated read from " + path);
    return v;
}

}  // namespace

SparseGraph load_edge_tsv(const std::string& path) {
    ParsedEdges parsed = parse_edge_lines(path);
    return build_graph(parsed.declared_nodes, std::move(parsed.pairs));
}

MatF read_feature_matrix(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), Status::io_error, "cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    require(in.good() && std::memcmp(magic, "GFB1", 4) == 0, Status::format_error,
            path + ": bad feature file magic");
    const auto rows = read_le<std::uint32_t>(in, path);
    const auto cols = read_le<std::uint32_t>(in, path);
    (void)read_le<std::uint32_t>(in, path);  // reserved
    MatF m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(float) * m.size()));
    require(in.good(), Status::io_error, path + ": truncated feature data");
    return m;
}

void write_feature_matrix(const std::string& path, const MatF& m) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), Status::io_error, "cannot write " + path);
    out.write("GFB1", 4);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
    write_le<std::uint32_t>(out, 0);
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(float) * m.size()));
    require(out.good(), Status::io_error, "short write to " + path);
}

SparseGraph load_dataset_dir(const std::string& dir) {
    const std::string meta_path = dir + "/meta.json";
    require(file_exists(meta_path), Status::io_error, "missing " + meta_path);
    json meta = json::parse(read_text_file(meta_path));
    const std::int64_t num_nodes = meta.at("num_nodes").get<std::int64_t>();

    ParsedEdges parsed = parse_edge_lines(dir + "/edges.tsv");
    SparseGraph g = build_graph(num_nodes, std::move(parsed.pairs));

    if (meta.contains("num_classes") && !meta["num_classes"].is_null())
        g.class_count = meta["num_classes"].get<std::int32_t>();

    const std::string feat_path = dir + "/features.bin";
    if (file_exists(feat_path)) {
        g.features = read_feature_matrix(feat_path);
        require(g.features.rows() == g.num_nodes, Status::shape_error,
                feat_path + ": feature rows != node count");
    }

    const std::string labels_path = dir + "/labels.tsv";
    if (file_exists(labels_path)) {
        g.labels.assign(static_cast<std::size_t>(g.num_nodes), -1);
        std::ifstream in(labels_path);
        std::string line;
        std::int64_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty() || line[0] == '#') continue;
            auto toks = split_ws(line);
            std::uint64_t node = 0, cls = 0;
            require(toks.size() == 2 && parse_u64(toks[0], node) && parse_u64(toks[1], cls),
                    Status::parse_error,
                    labels_path + ":" + std::to_string(lineno) + ": malformed label line");
            require(static_cast<std::int64_t>(node) < g.num_nodes, Status::bounds_error,
                    labels_path + ":" + std::to_string(lineno) + ": node id out of range");
            require(g.class_count > 0 && cls < static_cast<std::uint64_t>(g.class_count),
                    Status::bounds_error,
                    labels_path + ":" + std::to_string(lineno) + ": class out of range");
            g.labels[node] = static_cast<std::int32_t>(cls);
        }
    }
    return g;
}

SparseGraph load_edge_list(const std::string& path, EdgeFormat format) {
    switch (format) {
        case EdgeFormat::tsv_edges: return load_edge_tsv(path);
        case EdgeFormat::dataset_dir: return load_dataset_dir(path);
    }
    fail(Status::invalid_argument, "unknown edge format");
}

void save_dataset_dir(const SparseGraph& g, const std::string& dir) {
    fs::create_directories(dir);

    std::ostringstream edges;
    for (std::int64_t u = 0; u < g.num_nodes; ++u)
        for (NodeId v : g.neighbors(static_cast<NodeId>(u)))
            if (static_cast<NodeId>(u) < v) edges << u << '\t' << v << '\n';
    write_text_file(dir + "/edges.tsv", edges.str());

    json meta;
    meta["num_nodes"] = g.num_nodes;
    meta["num_edges"] = g.undirected_edges();
    if (g.class_count > 0) meta["num_classes"] = g.class_count;
    write_text_file(dir + "/meta.json", meta.dump(2) + "\n");

    if (g.has_features()) write_feature_matrix(dir + "/features.bin", g.features);

    if (g.has_labels()) {
        std::ostringstream labels;
        for (std::int64_t u = 0; u < g.num_nodes; ++u)
            if (g.labels[u] >= 0) labels << u << '\t' << g.labels[u] << '\n';
        write_text_file(dir + "/labels.tsv", labels.str());
    }

    if (!g.original_ids.empty()) {
        std::ostringstream remap;
        for (std::size_t i = 0; i < g.original_ids.size(); ++i)
            remap << i << '\t' << g.original_ids[i] << '\n';
        write_text_file(dir + "/id_map.tsv", remap.str());
    }
}

std::vector<EdgePair> load_pair_tsv(const std::string& path) {
    ParsedEdges parsed = parse_edge_lines(path);
    return parsed.pairs;
}

void save_pair_tsv(const std::string& path, const std::vector<EdgePair>& pairs) {
    std::ostringstream out;
    for (const auto& [u, v] : pairs) out << u << '\t' << v << '\n';
    write_text_file(path, out.str());
}

std::vector<NodeId> load_node_list(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), Status::io_error, "cannot open " + path);
    std::vector<NodeId> nodes;
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        auto toks = split_ws(line);
        std::uint64_t v = 0;
        require(toks.size() == 1 && parse_u64(toks[0], v), Status::parse_error,
                path + ":" + std::to_string(lineno) + ": malformed node line");
        nodes.push_back(static_cast<NodeId>(v));
    }
    return nodes;
}

void save_node_list(const std::string& path, const std::vector<NodeId>& nodes) {
    std::ostringstream out;
    for (NodeId n : nodes) out << n << '\n';
    write_text_file(path, out.str());
}

}  // namespace graphfm
