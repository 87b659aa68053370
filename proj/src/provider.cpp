#include "provider.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <thread>

#include "dataset_io.hpp"
#include "json.hpp"
#include "rng.hpp"

#include "httplib.h"

namespace graphfm {

using nlohmann::json;

std::string render_subdivide_prompt(const std::string& node_text, const std::string& scenario) {
    require(!node_text.empty(), Status::invalid_argument, "subdivide: empty node text");
    return "List sub-categories of " + node_text + " on " + scenario +
           ".\nAnswer with one sub-category name per line and nothing else. "
           "If the entity cannot be divided further, answer with an empty line.";
}

std::vector<std::string> parse_name_list(const std::string& completion) {
    // JSON array form first.
    auto parsed = json::parse(completion, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_array()) {
        std::vector<std::string> names;
        for (const auto& item : parsed) {
            if (!item.is_string())
                fail(Status::format_error, "completion array holds a non-string entry");
            if (!item.get<std::string>().empty()) names.push_back(item.get<std::string>());
        }
        return names;
    }

    // Dash / numbered / plain line list.
    std::vector<std::string> names;
    std::size_t pos = 0;
    bool saw_content = false;
    while (pos <= completion.size()) {
        std::size_t eol = completion.find('\n', pos);
        if (eol == std::string::npos) eol = completion.size();
        std::string line = completion.substr(pos, eol - pos);
        pos = eol + 1;
        auto trim = [](std::string& s) {
            while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
            while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
        };
        trim(line);
        if (line.empty()) continue;
        saw_content = true;
        if (line[0] == '-' || line[0] == '*') {
            line.erase(line.begin());
        } else if (std::isdigit(static_cast<unsigned char>(line[0]))) {
            std::size_t i = 0;
            while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
            if (i < line.size() && (line[i] == '.' || line[i] == ')')) {
                line.erase(0, i + 1);
            } else {
                fail(Status::format_error, "unparseable completion line: " + line);
            }
        }
        trim(line);
        if (!line.empty()) names.push_back(line);
    }
    if (!saw_content) return {};
    require(!names.empty(), Status::format_error,
            "completion could not be parsed as a name list: " + completion);
    return names;
}

std::vector<std::string> MockProvider::subdivide(const std::string& node_text,
                                                 const std::string& scenario) {
    require(!node_text.empty(), Status::invalid_argument, "subdivide: empty node text");
    (void)scenario;
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(spec_.children_per_node));
    for (int i = 0; i < spec_.children_per_node; ++i)
        out.push_back(node_text + "/sub-" + std::to_string(i));
    return out;
}

MatD MockProvider::embed(const std::vector<std::string>& texts) {
    require(!texts.empty(), Status::invalid_argument, "embed: empty text list");
    const std::int64_t d = spec_.embedding_dim;
    MatD out(static_cast<std::int64_t>(texts.size()), d);
    for (std::size_t i = 0; i < texts.size(); ++i) {
        const std::uint64_t h = fnv1a64(texts[i]);
        const int cluster = static_cast<int>(h % static_cast<std::uint64_t>(spec_.cluster_count));
        Rng center_rng(derive_seed(spec_.seed, {0x636c7573ull, static_cast<std::uint64_t>(cluster)}));
        Rng jitter_rng(derive_seed(spec_.seed, {0x6a697474ull, h}));
        double* row = out.row(static_cast<std::int64_t>(i));
        double norm = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            row[j] = center_rng.normal() + 0.15 * jitter_rng.normal();
            norm += row[j] * row[j];
        }
        norm = std::sqrt(norm);
        for (std::int64_t j = 0; j < d; ++j) row[j] /= norm;
    }
    return out;
}

RateLimiter::RateLimiter(int per_minute, Clock clock, std::function<void(std::int64_t)> sleep_ms)
    : per_minute_(per_minute), clock_(std::move(clock)), sleep_ms_(std::move(sleep_ms)) {
    require(per_minute_ > 0, Status::config_error, "rate limiter: per_minute must be positive");
}

void RateLimiter::acquire() {
    std::lock_guard<std::mutex> lock(mu_);
    for (;;) {
        const std::int64_t now = clock_();
        const std::int64_t window_start = now - 60000;
        recent_.erase(std::remove_if(recent_.begin(), recent_.end(),
                                     [&](std::int64_t t) { return t <= window_start; }),
                      recent_.end());
        if (static_cast<int>(recent_.size()) < per_minute_) {
            recent_.push_back(now);
            return;
        }
        const std::int64_t oldest = *std::min_element(recent_.begin(), recent_.end());
        sleep_ms_(std::max<std::int64_t>(1, oldest + 60000 - now + 1));
    }
}

HttpProvider::HttpProvider(ProviderConfig cfg) : cfg_(std::move(cfg)) {
    require(!cfg_.base_url.empty(), Status::config_error, "http provider requires a base url");
    limiter_ = std::make_unique<RateLimiter>(
        cfg_.requests_per_minute,
        [] {
            return std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now().time_since_epoch())
                .count();
        },
        [](std::int64_t ms) { std::this_thread::sleep_for(std::chrono::milliseconds(ms)); });
}

HttpProvider::~HttpProvider() = default;

std::string HttpProvider::post_json(const std::string& path, const std::string& body) {
    // Response cache makes repeated runs cheap and reproducible.
    std::string cache_path;
    if (!cfg_.cache_dir.empty()) {
        const std::uint64_t h1 = fnv1a64(path);
        const std::uint64_t h2 = fnv1a64(body.data(), body.size(), h1);
        char name[64];
        std::snprintf(name, sizeof(name), "resp_%016llx.json",
                      static_cast<unsigned long long>(h2));
        std::filesystem::create_directories(cfg_.cache_dir);
        cache_path = cfg_.cache_dir + "/" + name;
        if (file_exists(cache_path)) return read_text_file(cache_path);
    }

    const char* key = std::getenv(cfg_.api_key_env.c_str());
    require(key != nullptr && key[0] != '\0', Status::config_error,
            "api key environment variable " + cfg_.api_key_env + " is not set");

    httplib::Client client(cfg_.base_url);
    client.set_connection_timeout(cfg_.timeout_seconds, 0);
    client.set_read_timeout(cfg_.timeout_seconds, 0);
    client.set_bearer_token_auth(key);

    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
        if (attempt > 0) {
            ++retries_used_;
            std::this_thread::sleep_for(std::chrono::milliseconds(250 << (attempt - 1)));
        }
        limiter_->acquire();
        auto res = client.Post(path, body, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 200 && res->status < 300) {
            if (!cache_path.empty()) write_text_file(cache_path, res->body);
            return res->body;
        }
        last_error = "http status " + std::to_string(res->status);
        if (res->status >= 400 && res->status < 500 && res->status != 429) break;
    }
    fail(Status::provider_error, "provider request failed after retries: " + last_error);
}

std::vector<std::string> HttpProvider::subdivide(const std::string& node_text,
                                                 const std::string& scenario) {
    json req;
    req["model"] = cfg_.chat_model;
    req["messages"] = json::array(
        {{{"role", "user"}, {"content", render_subdivide_prompt(node_text, scenario)}}});
    const std::string body = post_json("/chat/completions", req.dump());
    json res = json::parse(body, nullptr, false);
    require(!res.is_discarded() && res.contains("choices") && !res["choices"].empty(),
            Status::provider_error, "malformed chat completion response");
    const std::string content = res["choices"][0].at("message").at("content").get<std::string>();
    return parse_name_list(content);
}

MatD HttpProvider::embed(const std::vector<std::string>& texts) {
    require(!texts.empty(), Status::invalid_argument, "embed: empty text list");
    constexpr std::size_t kBatchCap = 256;
    MatD out;
    std::int64_t next_row = 0;
    for (std::size_t start = 0; start < texts.size(); start += kBatchCap) {
        const std::size_t stop = std::min(texts.size(), start + kBatchCap);
        json req;
        req["model"] = cfg_.embed_model;
        req["input"] = std::vector<std::string>(texts.begin() + static_cast<std::ptrdiff_t>(start),
                                                texts.begin() + static_cast<std::ptrdiff_t>(stop));
        const std::string body = post_json("/embeddings", req.dump());
        json res = json::parse(body, nullptr, false);
        require(!res.is_discarded() && res.contains("data"), Status::provider_error,
                "malformed embedding response");
        const auto& data = res["data"];
        require(data.size() == stop - start, Status::provider_error,
                "embedding response row count mismatch (partial batch failure)");
        for (std::size_t i = 0; i < data.size(); ++i) {
            const auto& vec = data[static_cast<int>(i)].at("embedding");
            if (out.rows() == 0)
                out = MatD(static_cast<std::int64_t>(texts.size()),
                           static_cast<std::int64_t>(vec.size()));
            require(static_cast<std::int64_t>(vec.size()) == out.cols(), Status::provider_error,
                    "inconsistent embedding width in response");
            double* row = out.row(next_row++);
            double norm = 0.0;
            for (std::size_t j = 0; j < vec.size(); ++j) {
                row[j] = vec[static_cast<int>(j)].get<double>();
                norm += row[j] * row[j];
            }
            norm = std::sqrt(norm);
            require(norm > 0.0, Status::provider_error, "zero-norm embedding in response");
            for (std::int64_t j = 0; j < out.cols(); ++j) row[j] /= norm;
        }
    }
    return out;
}

std::unique_ptr<Provider> make_provider(const ProviderConfig& cfg) {
    if (cfg.backend == "mock") return std::make_unique<MockProvider>(cfg.mock);
    if (cfg.backend == "http") return std::make_unique<HttpProvider>(cfg);
    fail(Status::config_error, "unknown provider backend: " + cfg.backend);
}

}  // namespace graphfm
