#include "selfner/embedding.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "selfner/digest.hpp"
#include "selfner/errors.hpp"
#include "selfner/rng.hpp"

namespace selfner {

using nlohmann::json;
using nlohmann::ordered_json;

bool EmbeddingVector::degenerate() const {
    return std::all_of(values.begin(), values.end(), [](float v) { return v == 0.0f; });
}

namespace {

void l2_normalize(std::vector<float>& v) {
    double norm2 = 0.0;
    for (float x : v) norm2 += static_cast<double>(x) * x;
    if (norm2 <= 0.0) return;
    const double inv = 1.0 / std::sqrt(norm2);
    for (float& x : v) x = static_cast<float>(x * inv);
}

} // namespace

EmbeddingVector embed_local(std::string_view text) {
    std::string low(text);
    std::transform(low.begin(), low.end(), low.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    std::vector<float> v(kLocalEmbeddingDim, 0.0f);
    if (low.size() >= 3) {
        for (std::size_t i = 0; i + 3 <= low.size(); ++i) {
            const std::uint64_t h = fnv1a64(std::string_view(low).substr(i, 3));
            v[h % kLocalEmbeddingDim] += 1.0f;
        }
        l2_normalize(v);
    }
    return EmbeddingVector{std::move(v), std::string(kLocalEmbedderId)};
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim()) {
        throw DataError("cosine over mismatched dimensions (" + std::to_string(a.dim()) +
                        " vs " + std::to_string(b.dim()) + ")");
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        dot += static_cast<double>(a.values[i]) * b.values[i];
    }
    // Vectors are stored unit-norm, so the dot product is the cosine; clamp
    // away float round-off.
    return std::clamp(dot, -1.0, 1.0);
}

std::vector<EmbeddingVector> Embedder::embed_batch(const std::vector<std::string>& texts) {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) {
        out.push_back(embed(t));
    }
    return out;
}

EmbeddingVector LocalEmbedder::embed(const std::string& text) {
    return embed_local(text);
}

RemoteEmbedder::RemoteEmbedder(HttpBackendConfig config, std::string model,
                               const ResponseCache* cache)
    : config_(std::move(config)), model_(std::move(model)), cache_(cache) {
    if (config_.endpoint.empty()) {
        throw UsageError("remote embedder needs an endpoint (flag or SELFNER_ENDPOINT)");
    }
    if (model_.empty()) {
        throw UsageError("remote embedder needs a model name (flag or SELFNER_EMBED_MODEL)");
    }
    id_ = "remote:" + model_;
}

namespace {

std::string embedding_cache_key(const std::string& embedder_id, const std::string& text) {
    std::string blob = "embedding-v1";
    blob += '\x1f';
    blob += std::to_string(embedder_id.size());
    blob += ':';
    blob += embedder_id;
    blob += '\x1f';
    blob += std::to_string(text.size());
    blob += ':';
    blob += text;
    return sha256_hex(blob);
}

EmbeddingVector vector_from_json_array(const json& arr, const std::string& source) {
    std::vector<float> values;
    values.reserve(arr.size());
    for (const auto& x : arr) {
        values.push_back(x.get<float>());
    }
    l2_normalize(values);
    return EmbeddingVector{std::move(values), source};
}

} // namespace

EmbeddingVector RemoteEmbedder::embed(const std::string& text) {
    return embed_batch({text}).front();
}

std::vector<EmbeddingVector> RemoteEmbedder::embed_batch(const std::vector<std::string>& texts) {
    std::vector<EmbeddingVector> out(texts.size());
    std::vector<std::size_t> missing;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (cache_) {
            const std::string key = embedding_cache_key(id_, texts[i]);
            if (auto hit = cache_->lookup(key)) {
                try {
                    out[i] = vector_from_json_array(json::parse(*hit), id_);
                    continue;
                } catch (const json::exception&) {
                    // Corrupt cache entry: fall through and refetch.
                }
            }
        }
        missing.push_back(i);
    }
    constexpr std::size_t kBatch = 64;
    for (std::size_t at = 0; at < missing.size(); at += kBatch) {
        const std::size_t n = std::min(kBatch, missing.size() - at);
        json input = json::array();
        for (std::size_t j = 0; j < n; ++j) {
            input.push_back(texts[missing[at + j]]);
        }
        const json body{{"model", model_}, {"input", std::move(input)}};
        const std::string raw = http_post_json(config_, "/embeddings", body, 0);
        json parsed;
        try {
            parsed = json::parse(raw);
        } catch (const json::exception& e) {
            throw BackendError(std::string("malformed embeddings response: ") + e.what());
        }
        if (!parsed.contains("data") || !parsed["data"].is_array() ||
            parsed["data"].size() != n) {
            throw BackendError("embeddings response data array does not match the input batch");
        }
        for (std::size_t j = 0; j < n; ++j) {
            const auto& item = parsed["data"][j];
            if (!item.contains("embedding") || !item["embedding"].is_array()) {
                throw BackendError("embeddings response item lacks an embedding array");
            }
            out[missing[at + j]] = vector_from_json_array(item["embedding"], id_);
            if (cache_) {
                const std::string key = embedding_cache_key(id_, texts[missing[at + j]]);
                cache_->store(key, item["embedding"].dump(),
                              json{{"model", model_}, {"kind", "embedding"}});
            }
        }
    }
    return out;
}

void EmbeddingIndex::save(const std::filesystem::path& path, const nlohmann::json& meta) const {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write index file: " + path.string());
    }
    ordered_json header;
    header["embedder"] = embedder_id;
    header["count"] = ids.size();
    header["dim"] = vectors.empty() ? 0 : vectors.front().dim();
    if (!meta.is_null()) header["meta"] = meta;
    out << header.dump() << '\n';
    for (std::size_t i = 0; i < ids.size(); ++i) {
        ordered_json j;
        j["id"] = ids[i];
        j["v"] = vectors[i].values;
        out << j.dump() << '\n';
    }
}

EmbeddingIndex EmbeddingIndex::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open index file: " + path.string());
    }
    EmbeddingIndex out;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    std::size_t dim = 0;
    try {
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            json j = json::parse(line);
            if (!have_header) {
                if (!j.is_object() || !j.contains("embedder")) {
                    throw DataError(path.string() +
                                    ": first line must be a header recording the embedder");
                }
                out.embedder_id = j["embedder"].get<std::string>();
                have_header = true;
                continue;
            }
            out.ids.push_back(j.at("id").get<std::string>());
            std::vector<float> values = j.at("v").get<std::vector<float>>();
            if (out.vectors.empty()) {
                dim = values.size();
            } else if (values.size() != dim) {
                throw DataError(path.string() + ": line " + std::to_string(line_no) +
                                " has dimension " + std::to_string(values.size()) +
                                ", expected " + std::to_string(dim));
            }
            out.vectors.push_back(EmbeddingVector{std::move(values), out.embedder_id});
        }
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": line " + std::to_string(line_no) +
                        " is not valid: " + e.what());
    }
    if (!have_header) {
        throw DataError(path.string() + ": missing index header line");
    }
    return out;
}

EmbeddingIndex build_index(const std::vector<AnnotatedSample>& pool, Embedder& embedder) {
    EmbeddingIndex index;
    index.embedder_id = embedder.id();
    std::vector<std::string> texts;
    texts.reserve(pool.size());
    std::set<std::string> seen;
    for (const auto& s : pool) {
        if (!seen.insert(s.sample.id).second) {
            throw DataError("duplicate sample id '" + s.sample.id + "' in demonstration pool");
        }
        index.ids.push_back(s.sample.id);
        texts.push_back(s.sample.text);
    }
    index.vectors = embedder.embed_batch(texts);
    return index;
}

} // namespace selfner
