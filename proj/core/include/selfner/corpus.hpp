#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace selfner {

// A surface-form entity: normalized span text plus its type. Entity identity
// throughout the pipeline is this string pair; no token offsets exist because
// the answer format identifies entities by surface string only.
struct EntityRef {
    std::string span;
    std::string etype;

    friend bool operator==(const EntityRef&, const EntityRef&) = default;
    friend auto operator<=>(const EntityRef&, const EntityRef&) = default;
};

// One sentence of a corpus. `gold` is present only for evaluation, the
// scripted backend, and oracle selection; the pipeline itself never reads it.
struct Sample {
    std::string id;
    std::string text;
    std::optional<std::vector<EntityRef>> gold;
};

struct LabelSet {
    std::string name;
    std::vector<std::string> types;

    bool contains(std::string_view type) const;
    // Throws DataError unless non-empty with unique type strings.
    void validate() const;

    static LabelSet load(const std::filesystem::path& path);
};

// A (span, type) prediction with its entity-level self-consistency vote count.
struct EntityPrediction {
    std::string span;
    std::string etype;
    int votes = 0;

    friend bool operator==(const EntityPrediction&, const EntityPrediction&) = default;
};

// A sample plus everything the self-annotation run produced for it.
struct AnnotatedSample {
    Sample sample;
    std::vector<EntityPrediction> predictions; // first-appearance order, no duplicate (span, type)
    double sample_score = 0.0;                 // mean of votes; see empty-sample rule in annotator
    int n_samples = 0;                         // n of the producing SC run
    std::vector<std::string> raw_answers;
    int parse_failures = 0;
    std::optional<std::vector<int>> sv_scores; // parallel to predictions when present
};

// Trim leading/trailing whitespace and collapse internal runs to one space.
// Case is preserved. Idempotent.
std::string normalize_span(std::string_view raw);

// JSON Lines dataset: {"id": ..., "text": ..., "gold": [[span, type], ...]?}
// Gold entities are validated against the label set; ids must be unique.
std::vector<Sample> load_dataset(const std::filesystem::path& path, const LabelSet& labels);
void save_dataset(const std::filesystem::path& path, const std::vector<Sample>& samples);

// min(n, |samples|) samples drawn without replacement, deterministic for a
// given seed, original relative order preserved.
std::vector<Sample> subsample(const std::vector<Sample>& samples, std::size_t n, std::uint64_t seed);

} // namespace selfner
