#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "provider.hpp"
#include "testutil.hpp"

using namespace graphfm;
using namespace graphfm::testing;
using nlohmann::json;

TEST_CASE("mock subdivision names and determinism") {
    MockProvider mock({3, 16, 2, 0});
    std::vector<std::string> kids = mock.subdivide("products", "a shop");
    CHECK(kids == std::vector<std::string>{"products/sub-0", "products/sub-1", "products/sub-2"});
    CHECK(mock.subdivide("products", "other scenario") == kids);
    CHECK_THROWS_AS(mock.subdivide("", "s"), Error);
}

TEST_CASE("mock embeddings cluster and preserve order") {
    MockProvider mock({3, 32, 2, 9});
    std::vector<std::string> texts;
    for (int i = 0; i < 20; ++i) texts.push_back("item-" + std::to_string(i));
    MatD h = mock.embed(texts);
    CHECK(h.rows() == 20);
    CHECK(h.cols() == 32);

    // Unit rows.
    for (std::int64_t i = 0; i < 20; ++i) {
        double norm = 0.0;
        for (std::int64_t j = 0; j < 32; ++j) norm += h(i, j) * h(i, j);
        CHECK(std::abs(norm - 1.0) < 1e-12);
    }

    // Same text twice -> identical rows.
    MatD pair = mock.embed({"alpha", "alpha"});
    for (std::int64_t j = 0; j < 32; ++j) CHECK(pair(0, j) == pair(1, j));

    // Exhaustive pairwise cosine check: within-cluster beats cross-cluster.
    auto cluster_of = [&](const std::string& t) {
        return static_cast<int>(fnv1a64(t) % 2);
    };
    double min_within = 2.0, max_cross = -2.0;
    for (std::int64_t i = 0; i < 20; ++i)
        for (std::int64_t j = i + 1; j < 20; ++j) {
            double cos = 0.0;
            for (std::int64_t c = 0; c < 32; ++c) cos += h(i, c) * h(j, c);
            if (cluster_of(texts[i]) == cluster_of(texts[j]))
                min_within = std::min(min_within, cos);
            else
                max_cross = std::max(max_cross, cos);
        }
    CHECK(min_within > max_cross);

    // Order preservation: permuting inputs permutes rows identically.
    std::vector<std::string> reversed(texts.rbegin(), texts.rend());
    MatD hr = mock.embed(reversed);
    for (std::int64_t i = 0; i < 20; ++i)
        for (std::int64_t j = 0; j < 32; ++j) CHECK(hr(19 - i, j) == h(i, j));

    CHECK_THROWS_AS(mock.embed({}), Error);
}

TEST_CASE("completion parsing accepts arrays and lists only") {
    CHECK(parse_name_list("[\"a\", \"b\"]") == std::vector<std::string>{"a", "b"});
    CHECK(parse_name_list("- one\n- two\n") == std::vector<std::string>{"one", "two"});
    CHECK(parse_name_list("1. one\n2) two\n") == std::vector<std::string>{"one", "two"});
    CHECK(parse_name_list("plain line\nanother\n") ==
          std::vector<std::string>{"plain line", "another"});
    CHECK(parse_name_list("").empty());
    CHECK(parse_name_list("  \n \n").empty());
    CHECK_THROWS_AS(parse_name_list("7 things I cannot list"), Error);
}

TEST_CASE("rate limiter never exceeds the per-minute cap in any window") {
    std::int64_t fake_now = 0;
    std::vector<std::int64_t> grants;
    RateLimiter limiter(
        5, [&] { return fake_now; }, [&](std::int64_t ms) { fake_now += ms; });
    for (int i = 0; i < 23; ++i) {
        limiter.acquire();
        grants.push_back(fake_now);
        fake_now += 1000;  // caller pattern: one request a second
    }
    for (std::size_t i = 0; i < grants.size(); ++i) {
        int in_window = 0;
        for (std::size_t j = 0; j <= i; ++j)
            if (grants[j] > grants[i] - 60000) ++in_window;
        CHECK(in_window <= 5);
    }
}

TEST_CASE("http provider: retries, parsing, caching, key handling") {
    httplib::Server server;
    std::atomic<int> chat_calls{0};
    std::atomic<int> embed_calls{0};
    server.Post("/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        const int call = ++chat_calls;
        if (call == 1) {  // first attempt fails, the retry succeeds
            res.status = 500;
            return;
        }
        CHECK(req.get_header_value("Authorization") == "Bearer sesame");
        json body = json::parse(req.body);
        CHECK(body["messages"][0]["content"].get<std::string>().find("List sub-categories") !=
              std::string::npos);
        json out;
        out["choices"] = json::array({{{"message", {{"content", "- shoes\n- hats"}}}}});
        res.set_content(out.dump(), "application/json");
    });
    server.Post("/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
        ++embed_calls;
        json body = json::parse(req.body);
        json data = json::array();
        for (std::size_t i = 0; i < body["input"].size(); ++i)
            data.push_back({{"embedding", {3.0, 4.0}}});
        res.set_content(json{{"data", data}}.dump(), "application/json");
    });

    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread server_thread([&] { server.listen_after_bind(); });
    while (!server.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(5));

    ProviderConfig cfg;
    cfg.backend = "http";
    cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
    cfg.api_key_env = "GRAPHFM_TEST_KEY";
    cfg.max_retries = 2;
    cfg.requests_per_minute = 1000;
    const std::string cache = temp_dir("provider_cache");
    cfg.cache_dir = cache;

    // Key env var read at call time: unset -> config error, no request made.
    ::unsetenv("GRAPHFM_TEST_KEY");
    {
        HttpProvider provider(cfg);
        CHECK_THROWS_AS(provider.subdivide("products", "a shop"), Error);
        CHECK(chat_calls.load() == 0);
    }

    ::setenv("GRAPHFM_TEST_KEY", "sesame", 1);
    HttpProvider provider(cfg);
    std::vector<std::string> kids = provider.subdivide("products", "a shop");
    CHECK(kids == std::vector<std::string>{"shoes", "hats"});
    CHECK(chat_calls.load() == 2);  // one failure, one retry success

    // Cached: the same request does not hit the server again.
    std::vector<std::string> cached = provider.subdivide("products", "a shop");
    CHECK(cached == kids);
    CHECK(chat_calls.load() == 2);

    MatD emb = provider.embed({"a", "b", "c"});
    CHECK(emb.rows() == 3);
    CHECK(emb.cols() == 2);
    CHECK(emb(0, 0) == doctest::Approx(0.6));  // unit-normalized (3,4)/5
    CHECK(emb(0, 1) == doctest::Approx(0.8));
    CHECK(embed_calls.load() == 1);

    server.stop();
    server_thread.join();
}

TEST_CASE("provider factory") {
    ProviderConfig cfg;
    cfg.backend = "mock";
    CHECK(make_provider(cfg) != nullptr);
    cfg.backend = "http";
    cfg.base_url = "";
    CHECK_THROWS_AS(make_provider(cfg), Error);
    cfg.backend = "bogus";
    CHECK_THROWS_AS(make_provider(cfg), Error);
}
