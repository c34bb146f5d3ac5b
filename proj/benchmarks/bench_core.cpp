#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "selfner/annotator.hpp"
#include "selfner/embedding.hpp"
#include "selfner/prompting.hpp"
#include "selfner/retrieval.hpp"
#include "selfner/rng.hpp"
#include "selfner/selection.hpp"

using namespace selfner;

namespace {

std::string sentence(std::uint64_t i) {
    static const char* words[] = {"river",  "council", "harbor", "market", "signal",
                                  "garden", "station", "bridge", "archive", "forum"};
    std::string text;
    SplitMix64 rng(i * 2654435761u + 17);
    const int n = 6 + static_cast<int>(rng.bounded(8));
    for (int w = 0; w < n; ++w) {
        if (w) text += ' ';
        text += words[rng.bounded(10)];
    }
    return text + " .";
}

void BM_embed_local(benchmark::State& state) {
    const std::string text = sentence(1);
    for (auto _ : state) {
        benchmark::DoNotOptimize(embed_local(text));
    }
}
BENCHMARK(BM_embed_local);

void BM_knn_1000(benchmark::State& state) {
    LocalEmbedder embedder;
    std::vector<AnnotatedSample> pool(1000);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        pool[i].sample = {"b" + std::to_string(i), sentence(i), std::nullopt};
    }
    EmbeddingIndex index = build_index(pool, embedder);
    EmbeddingVector query = embed_local("the council met at the harbor market .");
    query.source = index.embedder_id;
    const std::size_t j = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(knn(index, query, j));
    }
}
BENCHMARK(BM_knn_1000)->Arg(16)->Arg(100);

void BM_parse_answer(benchmark::State& state) {
    const std::string raw =
        "Sure, here you go: [{'white house': 'Location'}, {'president': 'Person'}, "
        "{'Barbara Starr': 'Person'}, {'Pentagon': 'Facility'}, 42, {'skies': 'Location'}]";
    for (auto _ : state) {
        benchmark::DoNotOptimize(parse_answer(raw));
    }
}
BENCHMARK(BM_parse_answer);

void BM_two_stage_vote(benchmark::State& state) {
    AnnotatedSample a;
    a.sample = {"b1", "text .", std::nullopt};
    a.n_samples = 5;
    a.raw_answers = {
        "[{'white house': 'Location'}, {'president': 'Person'}]",
        "[{'white house': 'Location'}, {'president': 'Person'}, {'skies': 'Location'}]",
        "[{'white house': 'Facility'}, {'president': 'Person'}]",
        "[{'white house': 'Location'}]",
        "[{'president': 'Person'}, {'white house': 'Facility'}]",
    };
    for (auto _ : state) {
        benchmark::DoNotOptimize(two_stage_majority_vote(a));
    }
}
BENCHMARK(BM_two_stage_vote);

} // namespace

BENCHMARK_MAIN();
