#include <chrono>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "selfner/errors.hpp"
#include "selfner/gateway.hpp"

namespace selfner {

using nlohmann::json;

namespace {

struct SplitEndpoint {
    std::string host; // scheme://host[:port]
    std::string base; // path prefix, no trailing slash
};

SplitEndpoint split_endpoint(const std::string& endpoint) {
    std::size_t scheme = endpoint.find("://");
    if (scheme == std::string::npos) {
        throw UsageError("endpoint must start with http:// or https:// (got \"" + endpoint +
                         "\")");
    }
    std::size_t slash = endpoint.find('/', scheme + 3);
    SplitEndpoint out;
    if (slash == std::string::npos) {
        out.host = endpoint;
    } else {
        out.host = endpoint.substr(0, slash);
        out.base = endpoint.substr(slash);
        while (!out.base.empty() && out.base.back() == '/') out.base.pop_back();
    }
    return out;
}

std::string body_excerpt(const std::string& body) {
    constexpr std::size_t kMax = 300;
    if (body.size() <= kMax) return body;
    return body.substr(0, kMax) + "...";
}

} // namespace

std::string http_post_json(const HttpBackendConfig& config, const std::string& path,
                           const nlohmann::json& body, int ordinal) {
    SplitEndpoint ep = split_endpoint(config.endpoint);
    const std::string payload = body.dump();
    const std::string url = ep.base + path;

    std::string last_error;
    for (int attempt = 0; attempt < std::max(1, config.max_retries); ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(
                std::chrono::milliseconds(config.backoff_start_ms << (attempt - 1)));
        }
        httplib::Client cli(ep.host);
        cli.set_connection_timeout(config.timeout_seconds, 0);
        cli.set_read_timeout(config.timeout_seconds, 0);
        cli.set_write_timeout(config.timeout_seconds, 0);
        httplib::Headers headers;
        if (!config.api_key.empty()) {
            headers.emplace("Authorization", "Bearer " + config.api_key);
        }
        auto res = cli.Post(url, headers, payload, "application/json");
        if (!res) {
            last_error = "transport failure (" + httplib::to_string(res.error()) + ")";
            continue;
        }
        if (res->status >= 200 && res->status < 300) {
            return res->body;
        }
        if (res->status == 429 || res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status) + ": " + body_excerpt(res->body);
            continue; // retryable
        }
        throw BackendError("request to " + config.endpoint + path + " failed with HTTP " +
                               std::to_string(res->status) + ": " + body_excerpt(res->body),
                           ordinal);
    }
    throw BackendError("request to " + config.endpoint + path + " failed after " +
                           std::to_string(std::max(1, config.max_retries)) + " attempts; last: " +
                           last_error,
                       ordinal);
}

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
    if (config_.endpoint.empty()) {
        throw UsageError("remote backend needs an endpoint (flag or SELFNER_ENDPOINT)");
    }
    if (config_.model.empty()) {
        throw UsageError("remote backend needs a model name (flag or SELFNER_MODEL)");
    }
    id_ = "openai(" + config_.endpoint + ")";
}

std::string HttpBackend::complete_one(const PromptRequest& req, int ordinal,
                                      std::uint64_t run_seed) {
    (void)run_seed; // remote sampling is the provider's; the seed only keys the cache
    json body{
        {"model", req.model.empty() ? config_.model : req.model},
        {"messages", json::array({json{{"role", "user"}, {"content", req.prompt}}})},
        {"temperature", req.temperature},
    };
    if (req.max_answer_len > 0) {
        body["max_tokens"] = req.max_answer_len;
    }
    const std::string raw = http_post_json(config_, "/chat/completions", body, ordinal);
    json parsed;
    try {
        parsed = json::parse(raw);
    } catch (const json::exception& e) {
        throw BackendError(std::string("malformed completion response: ") + e.what(), ordinal);
    }
    if (!parsed.contains("choices") || !parsed["choices"].is_array() ||
        parsed["choices"].empty() || !parsed["choices"][0].contains("message") ||
        !parsed["choices"][0]["message"].contains("content") ||
        !parsed["choices"][0]["message"]["content"].is_string()) {
        throw BackendError("completion response lacks choices[0].message.content: " +
                               body_excerpt(raw),
                           ordinal);
    }
    return parsed["choices"][0]["message"]["content"].get<std::string>();
}

} // namespace selfner
