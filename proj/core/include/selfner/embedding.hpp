#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "selfner/corpus.hpp"
#include "selfner/gateway.hpp"

namespace selfner {

inline constexpr std::size_t kLocalEmbeddingDim = 1024;
inline constexpr std::string_view kLocalEmbedderId = "local-trigram-fnv1a-1024";

// Unit-norm sentence vector. A zero vector marks degenerate input (text
// shorter than one trigram); cosine against it is 0.
struct EmbeddingVector {
    std::vector<float> values;
    std::string source;

    std::size_t dim() const { return values.size(); }
    bool degenerate() const;
};

// Hashed character-3-gram counts: lowercase, FNV-1a 64 per trigram,
// bucket = hash mod 1024, then L2 normalization.
EmbeddingVector embed_local(std::string_view text);

double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual const std::string& id() const = 0;
    virtual EmbeddingVector embed(const std::string& text) = 0;
    // n vectors in input order.
    virtual std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts);
};

class LocalEmbedder : public Embedder {
public:
    LocalEmbedder() : id_(kLocalEmbedderId) {}
    const std::string& id() const override { return id_; }
    EmbeddingVector embed(const std::string& text) override;

private:
    std::string id_;
};

// OpenAI-compatible /embeddings endpoint, cached by text digest.
class RemoteEmbedder : public Embedder {
public:
    RemoteEmbedder(HttpBackendConfig config, std::string model, const ResponseCache* cache);

    const std::string& id() const override { return id_; }
    EmbeddingVector embed(const std::string& text) override;
    std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) override;

private:
    HttpBackendConfig config_;
    std::string model_;
    const ResponseCache* cache_; // optional, not owned
    std::string id_;
};

// Pool-aligned vector index. The file is JSON Lines with one header line
// recording the embedder identity; mixing embedder identities between an
// index and a query embedder is a hard error.
struct EmbeddingIndex {
    std::string embedder_id;
    std::vector<std::string> ids;
    std::vector<EmbeddingVector> vectors;

    std::size_t size() const { return ids.size(); }

    void save(const std::filesystem::path& path, const nlohmann::json& meta) const;
    static EmbeddingIndex load(const std::filesystem::path& path);
};

EmbeddingIndex build_index(const std::vector<AnnotatedSample>& pool, Embedder& embedder);

} // namespace selfner
