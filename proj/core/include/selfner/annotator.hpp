#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "selfner/corpus.hpp"
#include "selfner/gateway.hpp"
#include "selfner/prompting.hpp"

namespace selfner {

struct SCConfig {
    int n_samples = 5;
    double temperature = 0.7;
};

// Vote count per (span, type) pair: the number of answer sets containing it.
std::map<EntityRef, int> entity_votes(const std::vector<std::vector<EntityRef>>& answers);

// Shared empty-sample rule: a merged prediction set that is empty because all
// n answers were cleanly empty scores n (unanimous no-entity agreement); one
// that is empty because of parse failures or dropped entries scores 0.
double empty_sample_score(int n_samples, int parse_failures, int dropped_entries);

struct AnnotateContext {
    Gateway& gateway;
    const PromptTemplate& tpl;
    const LabelSet& labels;
    SCConfig sc;
    std::string model;
    int max_answer_len = 512;
    std::uint64_t run_seed = 0;
};

// Step 1: sample n answers for one sentence, parse them, merge by voting.
// Demonstrations, when given, switch the prompt to ICL (iterative runs).
AnnotatedSample annotate_sample(const AnnotateContext& ctx, const Sample& sample,
                                std::span<const Demo> demos = {},
                                std::string* prompt_out = nullptr);

// Self-verification channel: one 0-5 score per prediction, attached to the
// sample alongside the SC votes. Requires at least one prediction.
SvParseResult self_verify(const AnnotateContext& ctx, AnnotatedSample& annotated);

// Mean of a sample's SV scores; the sample-level value of the sv channel.
double sv_sample_score(const AnnotatedSample& annotated);

// Annotated JSON Lines file. An optional leading header object (any line
// whose object has no "id" key) carries meta/selection provenance.
struct AnnotatedFile {
    nlohmann::json meta; // null when the file had no header line
    std::vector<AnnotatedSample> samples;
};

void save_annotated(const std::filesystem::path& path, const std::vector<AnnotatedSample>& samples,
                    const nlohmann::json& meta);
AnnotatedFile load_annotated(const std::filesystem::path& path);

} // namespace selfner
