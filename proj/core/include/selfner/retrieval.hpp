#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "selfner/annotator.hpp"
#include "selfner/corpus.hpp"
#include "selfner/embedding.hpp"
#include "selfner/prompting.hpp"

namespace selfner {

enum class RetrievalKind { random, nearest, diverse_random, diverse_sc_ranking, no_demos };

struct RetrievalPolicy {
    RetrievalKind kind = RetrievalKind::nearest;
    int k = 16;
    int big_k = 50; // K of the diverse strategies
    std::uint64_t seed = 0;
    bool nearest_first = false; // default places nearest/highest last

    // k = 0 degenerates to no demonstrations; diverse kinds need big_k >= k.
    void validate() const;
};

std::string to_string(RetrievalKind kind);

// The reliable self-annotated dataset plus its vectors, position-aligned.
struct DemoPool {
    std::vector<AnnotatedSample> samples;
    EmbeddingIndex index;

    std::size_t size() const { return samples.size(); }

    // Joins pool and index by id; every pool id must have a vector.
    static DemoPool load(const std::filesystem::path& pool_path,
                         const std::filesystem::path& index_path);
    static DemoPool from_parts(std::vector<AnnotatedSample> samples, EmbeddingIndex index);
};

// Exact top-j by cosine similarity, ordered by (similarity desc, id asc).
// j > pool size returns the whole pool. Empty pool is an error.
std::vector<std::size_t> knn(const EmbeddingIndex& index, const EmbeddingVector& query,
                             std::size_t j);

struct RetrievedDemo {
    std::size_t pool_index;
    double similarity;
};

// Select min(k, |pool|) demonstrations for one query; the returned order is
// the order they take in the prompt (nearest/highest last by default).
// Shrinking below k sets *pool_exhausted when provided.
std::vector<RetrievedDemo> retrieve(const DemoPool& pool, const EmbeddingVector& query,
                                    std::string_view query_id, const RetrievalPolicy& policy,
                                    bool* pool_exhausted = nullptr);

// Demos in prompt form for build_icl_prompt.
std::vector<Demo> to_demos(const DemoPool& pool, const std::vector<RetrievedDemo>& picks);

} // namespace selfner
