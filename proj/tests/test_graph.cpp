#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "dataset_io.hpp"
#include "graph.hpp"
#include "testutil.hpp"

using namespace graphfm;
using namespace graphfm::testing;

TEST_CASE("edge list parsing builds a symmetric deduplicated CSR graph") {
    const std::string dir = temp_dir("graph_io");
    write_text_file(dir + "/path.tsv", "0 1\n1 2\n");
    SparseGraph g = load_edge_list(dir + "/path.tsv", EdgeFormat::tsv_edges);
    CHECK(g.num_nodes == 3);
    CHECK(g.directed_entries() == 4);
    CHECK(g.has_edge(0, 1));
    CHECK(g.has_edge(2, 1));
    CHECK_FALSE(g.has_edge(0, 2));

    write_text_file(dir + "/dup.tsv", "0\t1\n0\t1\n1 0\n");
    SparseGraph dup = load_edge_tsv(dir + "/dup.tsv");
    CHECK(dup.undirected_edges() == 1);

    write_text_file(dir + "/header.tsv", "#nodes 5\n0 1\n");
    SparseGraph withheader = load_edge_tsv(dir + "/header.tsv");
    CHECK(withheader.num_nodes == 5);  // trailing isolated nodes preserved
    CHECK(withheader.degree(4) == 0);
    CHECK(withheader.original_ids.empty());
}

TEST_CASE("edge list errors carry line numbers and bounds info") {
    const std::string dir = temp_dir("graph_err");
    write_text_file(dir + "/bad.tsv", "0 1\nnot an edge\n");
    try {
        load_edge_tsv(dir + "/bad.tsv");
        FAIL("expected parse error");
    } catch (const Error& e) {
        CHECK(e.status() == Status::parse_error);
        CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }

    write_text_file(dir + "/oob.tsv", "#nodes 2\n0 5\n");
    try {
        load_edge_tsv(dir + "/oob.tsv");
        FAIL("expected bounds error");
    } catch (const Error& e) {
        CHECK(e.status() == Status::bounds_error);
    }
}

TEST_CASE("sparse ids are compacted with a remap table") {
    const std::string dir = temp_dir("graph_remap");
    write_text_file(dir + "/gap.tsv", "0 5\n5 9\n");
    SparseGraph g = load_edge_tsv(dir + "/gap.tsv");
    CHECK(g.num_nodes == 3);
    CHECK(g.original_ids == std::vector<NodeId>{0, 5, 9});
    CHECK(g.has_edge(0, 1));
    CHECK(g.has_edge(1, 2));
}

TEST_CASE("dataset dir round trip preserves the CSR bit-exactly") {
    SparseGraph g = random_graph(40, 120, 99);
    g.class_count = 3;
    g.labels.assign(40, -1);
    g.labels[3] = 0;
    g.labels[11] = 2;
    g.features = MatF(40, 5);
    Rng rng(1);
    fill_uniform(g.features, rng, -1.0, 1.0);

    const std::string dir = temp_dir("graph_roundtrip");
    save_dataset_dir(g, dir + "/d");
    SparseGraph back = load_dataset_dir(dir + "/d");
    CHECK(back.num_nodes == g.num_nodes);
    CHECK(back.row_offsets == g.row_offsets);
    CHECK(back.col_indices == g.col_indices);
    CHECK(back.labels == g.labels);
    CHECK(back.class_count == g.class_count);
    CHECK(max_abs_diff(back.features, g.features) == 0.0);

    // save(load(x)) is byte-identical for the edge file.
    save_dataset_dir(back, dir + "/d2");
    CHECK(read_text_file(dir + "/d/edges.tsv") == read_text_file(dir + "/d2/edges.tsv"));
}

TEST_CASE("degree vector") {
    CHECK(degree_vector(complete_graph(2)) == std::vector<std::int64_t>{1, 1});
    CHECK(degree_vector(star_graph(4)) == std::vector<std::int64_t>{4, 1, 1, 1, 1});
}

TEST_CASE("normalized adjacency closed forms") {
    NormalizedAdjacency k2 = normalize_adjacency(complete_graph(2));
    for (double v : k2.values) CHECK(v == 1.0);

    NormalizedAdjacency k3 = normalize_adjacency(complete_graph(3));
    CHECK(k3.values.size() == 6);
    for (double v : k3.values) CHECK(v == 0.5);

    NormalizedAdjacency star = normalize_adjacency(star_graph(4));
    for (std::size_t i = 0; i < star.values.size(); ++i) CHECK(star.values[i] == doctest::Approx(0.5));

    CHECK_THROWS_AS(normalize_adjacency(build_graph(3, {})), Error);
}

TEST_CASE("normalization matches the dense oracle and is value-symmetric") {
    for (std::uint64_t seed : {7ull, 8ull, 9ull}) {
        SparseGraph g = random_graph(60, 150, seed);
        NormalizedAdjacency m = normalize_adjacency(g);

        MatD dense(g.num_nodes, g.num_nodes);
        for (std::int64_t u = 0; u < g.num_nodes; ++u)
            for (std::uint64_t i = m.row_offsets[u]; i < m.row_offsets[u + 1]; ++i)
                dense(u, m.col_indices[i]) = m.values[i];
        CHECK(max_abs_diff(dense, dense_normalized(g)) < 1e-12);

        for (std::int64_t u = 0; u < g.num_nodes; ++u)
            for (std::int64_t v = 0; v < g.num_nodes; ++v)
                CHECK(dense(u, v) == dense(v, u));

        // Spectral radius of the normalized adjacency is at most 1.
        EigResult eig = jacobi_eigh(dense);
        for (double lambda : eig.values) CHECK(std::abs(lambda) <= 1.0 + 1e-9);
    }
}

TEST_CASE("spmm closed forms and dense-product oracle") {
    NormalizedAdjacency k2 = normalize_adjacency(complete_graph(2));
    MatD x(2, 1);
    x(0, 0) = 1.0;
    CHECK(spmm(k2, x)(0, 0) == 0.0);
    CHECK(spmm(k2, x)(1, 0) == 1.0);

    NormalizedAdjacency k3 = normalize_adjacency(complete_graph(3));
    MatD ones(3, 1, 1.0);
    MatD y = spmm(k3, ones);
    for (std::int64_t i = 0; i < 3; ++i) CHECK(y(i, 0) == doctest::Approx(1.0).epsilon(1e-14));

    SparseGraph g = random_graph(50, 130, 11);
    NormalizedAdjacency m = normalize_adjacency(g);
    MatD xs(50, 7);
    Rng rng(5);
    fill_gaussian(xs, rng);
    MatD fast = spmm(m, xs);
    MatD slow = matmul(dense_normalized(g), xs);
    CHECK(max_abs_diff(fast, slow) < 1e-10);

    MatD wrong(51, 7);
    CHECK_THROWS_AS(spmm(m, wrong), Error);
}

TEST_CASE("spmm distributes over addition") {
    SparseGraph g = random_graph(100, 250, 21);
    NormalizedAdjacency m = normalize_adjacency(g);
    Rng rng(77);
    MatD x(100, 4), y(100, 4);
    fill_gaussian(x, rng);
    fill_gaussian(y, rng);
    MatD xy = x;
    add_inplace(xy, y);
    MatD lhs = spmm(m, xy);
    MatD rhs = spmm(m, x);
    add_inplace(rhs, spmm(m, y));
    CHECK(max_abs_diff(lhs, rhs) < 1e-9);
}

TEST_CASE("masked adjacency view") {
    SparseGraph k2 = complete_graph(2);
    std::vector<EdgePair> all{{0, 1}};
    MaskedAdjacency empty = mask_edges(k2, all);
    CHECK(empty.masked_degree(0) == 0);
    MatD x(2, 1, 1.0);
    MatD out = spmm(empty, x);
    CHECK(out(0, 0) == 0.0);
    CHECK(out(1, 0) == 0.0);

    SparseGraph k3 = complete_graph(3);
    MaskedAdjacency identity = mask_edges(k3, {});
    MatD probe(3, 2);
    Rng rng(3);
    fill_gaussian(probe, rng);
    CHECK(max_abs_diff(spmm(identity, probe), spmm(normalize_adjacency(k3), probe)) < 1e-15);

    std::vector<EdgePair> one{{0, 1}};
    MaskedAdjacency tri = mask_edges(k3, one);
    CHECK(tri.masked_degree(0) == 1);
    CHECK(tri.masked_degree(1) == 1);
    CHECK(tri.masked_degree(2) == 2);

    std::vector<EdgePair> absent{{0, 2}};
    CHECK_THROWS_AS(mask_edges(complete_graph(2), absent), Error);

    // Masked values match a fresh normalization of the graph minus the edge.
    SparseGraph reduced = build_graph(3, {{0, 2}, {1, 2}});
    CHECK(max_abs_diff(spmm(tri, probe), spmm(normalize_adjacency(reduced), probe)) < 1e-15);
}

TEST_CASE("graph validate catches corruption") {
    SparseGraph g = complete_graph(3);
    g.validate();
    SparseGraph broken = g;
    broken.col_indices[0] = 9;
    CHECK_THROWS_AS(broken.validate(), Error);
}
