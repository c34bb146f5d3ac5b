#include "selfner/retrieval.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "selfner/errors.hpp"
#include "selfner/rng.hpp"

namespace selfner {

void RetrievalPolicy::validate() const {
    if (kind == RetrievalKind::no_demos) return;
    if (k < 0) {
        throw UsageError("demonstration count k must be >= 0");
    }
    // k = 0 is the explicit no-demonstrations degeneration; the K-candidate
    // stage only constrains the diverse strategies.
    if ((kind == RetrievalKind::diverse_random || kind == RetrievalKind::diverse_sc_ranking) &&
        big_k < std::max(k, 1)) {
        throw UsageError("candidate count K must be >= k");
    }
}

std::string to_string(RetrievalKind kind) {
    switch (kind) {
        case RetrievalKind::random: return "random";
        case RetrievalKind::nearest: return "nearest";
        case RetrievalKind::diverse_random: return "diverse_random";
        case RetrievalKind::diverse_sc_ranking: return "diverse_sc_ranking";
        case RetrievalKind::no_demos: return "no_demos";
    }
    return "?";
}

DemoPool DemoPool::load(const std::filesystem::path& pool_path,
                        const std::filesystem::path& index_path) {
    AnnotatedFile file = load_annotated(pool_path);
    EmbeddingIndex index = EmbeddingIndex::load(index_path);
    return from_parts(std::move(file.samples), std::move(index));
}

DemoPool DemoPool::from_parts(std::vector<AnnotatedSample> samples, EmbeddingIndex index) {
    // Re-align the index to pool order so positions correspond.
    std::map<std::string, std::size_t> where;
    for (std::size_t i = 0; i < index.ids.size(); ++i) {
        where.emplace(index.ids[i], i);
    }
    EmbeddingIndex aligned;
    aligned.embedder_id = index.embedder_id;
    aligned.ids.reserve(samples.size());
    aligned.vectors.reserve(samples.size());
    for (const auto& s : samples) {
        auto it = where.find(s.sample.id);
        if (it == where.end()) {
            throw DataError("index has no vector for pool sample '" + s.sample.id +
                            "'; rebuild the index");
        }
        aligned.ids.push_back(s.sample.id);
        aligned.vectors.push_back(std::move(index.vectors[it->second]));
    }
    DemoPool pool;
    pool.samples = std::move(samples);
    pool.index = std::move(aligned);
    return pool;
}

namespace {

struct Scored {
    std::size_t pos;
    double sim;
};

// All pool items ordered by (similarity desc, id asc) — the shared ranking
// under every similarity-based strategy.
std::vector<Scored> ranked_by_similarity(const EmbeddingIndex& index,
                                         const EmbeddingVector& query) {
    if (index.size() == 0) {
        throw DataError("empty demonstration pool");
    }
    if (query.source != index.embedder_id) {
        throw DataError("index was built with embedder '" + index.embedder_id +
                        "' but the query uses '" + query.source + "'");
    }
    std::vector<Scored> scored;
    scored.reserve(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        scored.push_back(Scored{i, cosine(query, index.vectors[i])});
    }
    std::sort(scored.begin(), scored.end(), [&](const Scored& a, const Scored& b) {
        if (a.sim != b.sim) return a.sim > b.sim;
        return index.ids[a.pos] < index.ids[b.pos];
    });
    return scored;
}

// min(k, |items|) draws without replacement via partial Fisher-Yates.
template <typename T>
std::vector<T> draw_without_replacement(std::vector<T> items, std::size_t k, SplitMix64& rng) {
    const std::size_t n = std::min(k, items.size());
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.bounded(items.size() - i));
        std::swap(items[i], items[j]);
    }
    items.resize(n);
    return items;
}

} // namespace

std::vector<std::size_t> knn(const EmbeddingIndex& index, const EmbeddingVector& query,
                             std::size_t j) {
    auto scored = ranked_by_similarity(index, query);
    const std::size_t n = std::min(j, scored.size());
    std::vector<std::size_t> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(scored[i].pos);
    }
    return out;
}

std::vector<RetrievedDemo> retrieve(const DemoPool& pool, const EmbeddingVector& query,
                                    std::string_view query_id, const RetrievalPolicy& policy,
                                    bool* pool_exhausted) {
    policy.validate();
    if (pool_exhausted) *pool_exhausted = false;
    if (policy.kind == RetrievalKind::no_demos || policy.k == 0) {
        return {};
    }
    if (pool.size() == 0) {
        throw DataError("empty demonstration pool");
    }
    const std::size_t k = static_cast<std::size_t>(policy.k);
    if (pool_exhausted && pool.size() < k) *pool_exhausted = true;

    std::vector<RetrievedDemo> picks;
    switch (policy.kind) {
        case RetrievalKind::random: {
            // Query-independent: one seeded draw serves every query of the run.
            std::vector<std::size_t> all(pool.size());
            std::iota(all.begin(), all.end(), 0);
            SplitMix64 rng(stream_seed(policy.seed, "retrieval-random", 0));
            for (std::size_t pos : draw_without_replacement(std::move(all), k, rng)) {
                picks.push_back(RetrievedDemo{pos, cosine(query, pool.index.vectors[pos])});
            }
            return picks;
        }
        case RetrievalKind::nearest: {
            auto scored = ranked_by_similarity(pool.index, query);
            scored.resize(std::min(k, scored.size()));
            for (const auto& s : scored) {
                picks.push_back(RetrievedDemo{s.pos, s.sim});
            }
            break;
        }
        case RetrievalKind::diverse_random: {
            auto scored = ranked_by_similarity(pool.index, query);
            scored.resize(std::min(static_cast<std::size_t>(policy.big_k), scored.size()));
            // Per-query seeding: different inputs draw different subsets while
            // the run as a whole stays reproducible.
            SplitMix64 rng(stream_seed(policy.seed, query_id, 1));
            auto chosen = draw_without_replacement(std::move(scored), k, rng);
            std::sort(chosen.begin(), chosen.end(), [&](const Scored& a, const Scored& b) {
                if (a.sim != b.sim) return a.sim > b.sim;
                return pool.index.ids[a.pos] < pool.index.ids[b.pos];
            });
            for (const auto& s : chosen) {
                picks.push_back(RetrievedDemo{s.pos, s.sim});
            }
            break;
        }
        case RetrievalKind::diverse_sc_ranking: {
            auto scored = ranked_by_similarity(pool.index, query);
            scored.resize(std::min(static_cast<std::size_t>(policy.big_k), scored.size()));
            std::sort(scored.begin(), scored.end(), [&](const Scored& a, const Scored& b) {
                const double sa = pool.samples[a.pos].sample_score;
                const double sb = pool.samples[b.pos].sample_score;
                if (sa != sb) return sa > sb;
                if (a.sim != b.sim) return a.sim > b.sim;
                return pool.index.ids[a.pos] < pool.index.ids[b.pos];
            });
            scored.resize(std::min(k, scored.size()));
            for (const auto& s : scored) {
                picks.push_back(RetrievedDemo{s.pos, s.sim});
            }
            break;
        }
        case RetrievalKind::no_demos:
            return {};
    }
    // Ranked strategies place the best demonstration last (adjacent to the
    // query) unless configured otherwise.
    if (!policy.nearest_first) {
        std::reverse(picks.begin(), picks.end());
    }
    return picks;
}

std::vector<Demo> to_demos(const DemoPool& pool, const std::vector<RetrievedDemo>& picks) {
    std::vector<Demo> out;
    out.reserve(picks.size());
    for (const auto& pick : picks) {
        const AnnotatedSample& s = pool.samples[pick.pool_index];
        Demo d;
        d.text = s.sample.text;
        d.predictions.reserve(s.predictions.size());
        for (const auto& p : s.predictions) {
            d.predictions.push_back(EntityRef{p.span, p.etype});
        }
        out.push_back(std::move(d));
    }
    return out;
}

} // namespace selfner
