#include "selfner/gateway.hpp"

#include <atomic>
#include <charconv>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "selfner/digest.hpp"
#include "selfner/errors.hpp"

namespace selfner {

void NoiseProfile::validate() const {
    auto check = [](double p, const char* name) {
        if (p < 0.0 || p > 1.0) {
            throw UsageError(std::string(name) + " must lie in [0, 1]");
        }
    };
    check(p_hit, "p-hit");
    check(p_confuse, "p-confuse");
    check(p_spurious, "p-spurious");
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
}

std::optional<std::string> ResponseCache::lookup(const std::string& key) const {
    std::ifstream in(dir_ / (key + ".txt"), std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

namespace {

// Write-then-rename so a concurrent reader never sees a torn file. Same-key
// writers race only on identical bytes, so whichever rename lands last wins
// harmlessly.
void atomic_write(const std::filesystem::path& target, std::string_view bytes) {
    static std::atomic<unsigned> counter{0};
    std::filesystem::path tmp = target;
    tmp += ".tmp" + std::to_string(counter.fetch_add(1)) + "-" +
           std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()) & 0xffff);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw DataError("cannot write cache file: " + tmp.string());
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    std::filesystem::rename(tmp, target);
}

std::string format_double(double value) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    (void)ec;
    return std::string(buf, ptr);
}

std::string utc_timestamp() {
    std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

} // namespace

void ResponseCache::store(const std::string& key, std::string_view text,
                          const nlohmann::json& meta) const {
    atomic_write(dir_ / (key + ".txt"), text);
    atomic_write(dir_ / (key + ".meta"), meta.dump());
}

std::string cache_key(const PromptRequest& req, std::string_view backend_id, int ordinal,
                      std::uint64_t run_seed) {
    // Length-framed fields so no two field combinations share a byte string.
    std::string blob = "completion-v1";
    auto add = [&blob](std::string_view field) {
        blob += '\x1f';
        blob += std::to_string(field.size());
        blob += ':';
        blob += field;
    };
    add(backend_id);
    add(req.model);
    add(format_double(req.temperature));
    add(std::to_string(ordinal));
    add(std::to_string(run_seed));
    add(req.prompt);
    return sha256_hex(blob);
}

Gateway::Gateway(std::shared_ptr<Backend> backend, std::optional<ResponseCache> cache)
    : backend_(std::move(backend)), cache_(std::move(cache)) {}

std::vector<Completion> Gateway::complete(const PromptRequest& req, int n,
                                          std::uint64_t run_seed) {
    if (n < 1) {
        throw UsageError("completion count must be >= 1");
    }
    if (req.temperature < 0.0 || req.temperature > 2.0) {
        throw UsageError("temperature must lie in [0, 2]");
    }
    if (req.temperature == 0.0 && n > 1 && !warned_zero_temp_.exchange(true)) {
        std::cerr << "warning: sampling " << n
                  << " answers at temperature 0; they will typically coincide\n";
    }
    std::vector<Completion> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int ordinal = 0; ordinal < n; ++ordinal) {
        const std::string key = cache_key(req, backend_->id(), ordinal, run_seed);
        if (cache_) {
            if (auto hit = cache_->lookup(key)) {
                out.push_back(Completion{std::move(*hit), ordinal, true, backend_->id()});
                continue;
            }
        }
        std::string text = backend_->complete_one(req, ordinal, run_seed);
        backend_calls_.fetch_add(1, std::memory_order_relaxed);
        if (cache_) {
            // Stored immediately so partial progress survives a failure of a
            // later ordinal.
            nlohmann::json meta{{"backend", backend_->id()},
                                {"model", req.model},
                                {"temperature", req.temperature},
                                {"ordinal", ordinal},
                                {"run_seed", run_seed},
                                {"timestamp", utc_timestamp()}};
            cache_->store(key, text, meta);
        }
        out.push_back(Completion{std::move(text), ordinal, false, backend_->id()});
    }
    return out;
}

} // namespace selfner
