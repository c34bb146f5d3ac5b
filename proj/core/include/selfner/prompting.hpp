#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "selfner/corpus.hpp"

namespace selfner {

// Prompt scaffold with {labels}, {demos} and {text} slots. The embedded
// default renders the exact zero-shot / ICL prompt text the pipeline was
// built around; an override file can replace it for prompt ablations.
struct PromptTemplate {
    std::string scaffold;

    static PromptTemplate standard();
    // Override file: plain text with {labels} and {text} slots; an optional
    // {demos} slot marks where demonstration blocks go. Without it they are
    // inserted directly before the "Text: {text}" block.
    static PromptTemplate load(const std::filesystem::path& path);
};

// One in-context demonstration: sentence plus its (span, type) annotations.
struct Demo {
    std::string text;
    std::vector<EntityRef> predictions;
};

// "['Person', 'Organization', ...]"
std::string render_label_list(const LabelSet& labels);

// Canonical answer serialization: [{'span': 'Type'}, ...]. Entries whose
// span or type contains a single quote fall back to double quotes.
std::string serialize_predictions(std::span<const EntityRef> predictions);

std::string build_zero_shot_prompt(const PromptTemplate& tpl, const LabelSet& labels,
                                   std::string_view text);
std::string build_icl_prompt(const PromptTemplate& tpl, const LabelSet& labels,
                             std::span<const Demo> demos, std::string_view query);

enum class ParseStatus { ok, recovered, failed };

struct ParseResult {
    std::vector<EntityRef> predictions; // normalized spans, deduplicated, first occurrence kept
    ParseStatus status = ParseStatus::failed;
    int dropped = 0; // entries discarded inside the bracketed region
};

// Tolerant parser for model answers. Finds the first balanced [...] region,
// reads a list of quoted-string maps (single or double quotes), drops
// non-string values and empty spans, and never throws; absence of any
// bracketed region is status=failed.
ParseResult parse_answer(std::string_view raw);

// Self-verification: the question appended after a completed exchange, and
// the parser that recovers one 0-5 integer per predicted entity.
std::string sv_question();
std::string build_sv_prompt(std::string_view prior_prompt, std::string_view prior_answer);

enum class SvFlag { matched, clamped, unmatched };

struct SvParseResult {
    std::vector<int> scores;   // parallel to the predictions argument
    std::vector<SvFlag> flags; // unmatched entities score 0
    ParseStatus status = ParseStatus::ok;
};

SvParseResult parse_sv_answer(std::string_view raw, std::span<const EntityRef> predictions);

} // namespace selfner
