#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "selfner/corpus.hpp"

namespace selfner {

struct PromptRequest {
    std::string prompt;
    double temperature = 0.7; // valid range [0, 2]
    std::string model;
    int max_answer_len = 512; // completion token budget; <= 0 omits the cap
};

struct Completion {
    std::string text;
    int ordinal = 0;
    bool cached = false;
    std::string backend_id;
};

// Controls the deterministic scripted annotator. All draws are a pure
// function of (seed, sample id, ordinal).
struct NoiseProfile {
    double p_hit = 1.0;      // probability a gold entity appears in an answer
    double p_confuse = 0.0;  // probability its type is swapped for another
    double p_spurious = 0.0; // probability the answer gains one distractor
    std::uint64_t seed = 0;

    void validate() const; // throws UsageError if a probability leaves [0, 1]
};

// Disk cache: <key>.txt holds the raw completion, <key>.meta one JSON object.
// Concurrent writers of distinct keys are fine; same-key writers produce
// identical bytes so last-write-wins is safe.
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir);

    std::optional<std::string> lookup(const std::string& key) const;
    void store(const std::string& key, std::string_view text, const nlohmann::json& meta) const;

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
};

// Collision-resistant key over everything that identifies one completion.
std::string cache_key(const PromptRequest& req, std::string_view backend_id, int ordinal,
                      std::uint64_t run_seed);

class Backend {
public:
    virtual ~Backend() = default;
    virtual const std::string& id() const = 0;
    virtual std::string complete_one(const PromptRequest& req, int ordinal,
                                     std::uint64_t run_seed) = 0;
};

// Deterministic answer in the canonical output format for one sample. Gold
// must be present; with all noise off the gold entities are echoed in order.
std::string scripted_answer(const Sample& sample, const LabelSet& labels,
                            const NoiseProfile& profile, int ordinal);

// The fixed 32-entry distractor vocabulary used for p_spurious draws.
std::span<const std::string_view> scripted_distractors();

// Offline backend: resolves the queried sentence from the prompt's final
// "Text:" line and answers from that sample's gold through the noise profile.
// Self-verification prompts are answered "span: N, ..." with 5 for gold
// matches and 2 otherwise.
class ScriptedBackend : public Backend {
public:
    ScriptedBackend(std::vector<Sample> corpus, LabelSet labels, NoiseProfile profile);

    void add_samples(const std::vector<Sample>& samples);

    const std::string& id() const override { return id_; }
    std::string complete_one(const PromptRequest& req, int ordinal,
                             std::uint64_t run_seed) override;

private:
    const Sample* find_by_text(const std::string& text) const;

    std::vector<std::unique_ptr<Sample>> samples_;
    std::vector<std::pair<std::string, const Sample*>> by_text_; // sorted, first id wins
    LabelSet labels_;
    NoiseProfile profile_;
    std::string id_;
};

struct HttpBackendConfig {
    std::string endpoint; // e.g. https://api.openai.com/v1
    std::string api_key;
    std::string model;
    int max_retries = 3;      // attempts per request
    int backoff_start_ms = 1000;
    int timeout_seconds = 120;
};

// OpenAI-compatible chat-completions client. One user message per request;
// n samples are fetched as n independent calls so each ordinal is cacheable.
class HttpBackend : public Backend {
public:
    explicit HttpBackend(HttpBackendConfig config);

    const std::string& id() const override { return id_; }
    std::string complete_one(const PromptRequest& req, int ordinal,
                             std::uint64_t run_seed) override;

    const HttpBackendConfig& config() const { return config_; }

private:
    HttpBackendConfig config_;
    std::string id_;
};

// POST body/response plumbing shared with the embeddings client.
// Throws BackendError after max_retries attempts with exponential backoff.
std::string http_post_json(const HttpBackendConfig& config, const std::string& path,
                           const nlohmann::json& body, int ordinal);

// Cache-fronted completion fan-out.
class Gateway {
public:
    Gateway(std::shared_ptr<Backend> backend, std::optional<ResponseCache> cache);

    // Exactly n completions, ordinals 0..n-1. Each is served from the cache
    // when possible; misses are fetched then stored before returning.
    std::vector<Completion> complete(const PromptRequest& req, int n, std::uint64_t run_seed);

    Backend& backend() { return *backend_; }
    const std::string& backend_id() const { return backend_->id(); }
    bool has_cache() const { return cache_.has_value(); }

    // Completions fetched from the backend (cache misses) since construction.
    std::size_t backend_calls() const { return backend_calls_.load(); }

private:
    std::shared_ptr<Backend> backend_;
    std::optional<ResponseCache> cache_;
    std::atomic<std::size_t> backend_calls_{0};
    std::atomic<bool> warned_zero_temp_{false};
};

} // namespace selfner
