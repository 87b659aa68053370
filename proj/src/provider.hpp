#pragma once

#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "common.hpp"
#include "matrix.hpp"

namespace graphfm {

// Pluggable text-generation / text-embedding gateway. The generator only
// ever talks to this interface; the HTTP wire format stays behind it.
class Provider {
public:
    virtual ~Provider() = default;

    // Asks for sub-categories of `node_text` within `scenario`; returns the
    // child entity names.
    virtual std::vector<std::string> subdivide(const std::string& node_text,
                                               const std::string& scenario) = 0;

    // One embedding row per input text, in input order.
    virtual MatD embed(const std::vector<std::string>& texts) = 0;
};

// Prompt rendered for the subdivision request.
std::string render_subdivide_prompt(const std::string& node_text, const std::string& scenario);

// Parses a completion into entity names: accepts a JSON string array or a
// dash/numbered/plain line list. Anything else is a format error.
std::vector<std::string> parse_name_list(const std::string& completion);

struct MockSpec {
    int children_per_node = 3;
    std::int64_t embedding_dim = 64;
    int cluster_count = 2;
    std::uint64_t seed = 0;
};

// Deterministic offline provider: child names are "<parent>/sub-<i>";
// embeddings are cluster centers (keyed by a text hash) plus jitter,
// unit-normalized. Pure and lock-free.
class MockProvider : public Provider {
public:
    explicit MockProvider(MockSpec spec) : spec_(spec) {}
    std::vector<std::string> subdivide(const std::string& node_text,
                                       const std::string& scenario) override;
    MatD embed(const std::vector<std::string>& texts) override;

    const MockSpec& spec() const { return spec_; }

private:
    MockSpec spec_;
};

// Sliding-window limiter: never more than `per_minute` acquisitions in any
// 60-second window. The clock is injectable for tests.
class RateLimiter {
public:
    using Clock = std::function<std::int64_t()>;  // milliseconds

    RateLimiter(int per_minute, Clock clock, std::function<void(std::int64_t)> sleep_ms);

    // Blocks (via the sleep hook) until a slot is available, then records it.
    void acquire();

private:
    int per_minute_;
    Clock clock_;
    std::function<void(std::int64_t)> sleep_ms_;
    std::vector<std::int64_t> recent_;
    std::mutex mu_;
};

inline constexpr const char* kDefaultApiKeyEnv = "GRAPHFM_API_KEY";

struct ProviderConfig {
    std::string backend = "mock";  // mock | http
    std::string base_url;
    std::string api_key_env = kDefaultApiKeyEnv;
    std::string chat_model = "gpt-4o-mini";
    std::string embed_model = "text-embedding-3-small";
    int timeout_seconds = 60;
    int max_retries = 3;
    int requests_per_minute = 60;
    std::string cache_dir;  // content-addressed response cache; empty = off
    MockSpec mock;
};

// HTTP backend speaking common chat-completion and embedding JSON shapes.
// Retries with backoff, rate-limited, key read from the environment at call
// time and never logged.
class HttpProvider : public Provider {
public:
    explicit HttpProvider(ProviderConfig cfg);
    ~HttpProvider() override;
    std::vector<std::string> subdivide(const std::string& node_text,
                                       const std::string& scenario) override;
    MatD embed(const std::vector<std::string>& texts) override;

private:
    std::string post_json(const std::string& path, const std::string& body);

    ProviderConfig cfg_;
    std::unique_ptr<RateLimiter> limiter_;
    int retries_used_ = 0;
};

std::unique_ptr<Provider> make_provider(const ProviderConfig& cfg);

}  // namespace graphfm
