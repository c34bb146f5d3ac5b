#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "selfner/corpus.hpp"

namespace selfner {

enum class SelectionKind { none, entity_threshold, sample_threshold, two_stage_majority, oracle };
enum class ScoreChannel { sc, sv };

struct SelectionPolicy {
    SelectionKind kind = SelectionKind::none;
    double th_entity = 4.0;
    double th_sample = 4.0;
    ScoreChannel channel = ScoreChannel::sc;
    bool drop_empty = false; // drop samples left with zero predictions
    bool rescore = false;    // recompute sample_score after entity filtering

    void validate(int n_samples) const; // thresholds must sit in [0, n_samples]
};

std::string to_string(SelectionKind kind);
std::string to_string(ScoreChannel channel);

// Entity-level threshold: drop predictions scoring below th; samples are kept
// even when emptied. sample_score is only recomputed under rescore.
std::vector<AnnotatedSample> filter_entity_threshold(const std::vector<AnnotatedSample>& pool,
                                                     double th,
                                                     ScoreChannel channel = ScoreChannel::sc,
                                                     bool rescore = false);

// Sample-level threshold: drop whole samples whose sample-level score is
// below th; survivors pass through untouched.
std::vector<AnnotatedSample> filter_sample_threshold(const std::vector<AnnotatedSample>& pool,
                                                     double th,
                                                     ScoreChannel channel = ScoreChannel::sc);

// Two-stage majority voting over the sample's raw answer sets: spans kept on
// a strict majority of answers, each assigned its most frequent type (ties to
// the earliest answer ordinal, then lexicographic type). Votes become the
// span counts and sample_score is recomputed from them.
AnnotatedSample two_stage_majority_vote(const AnnotatedSample& annotated);
std::vector<AnnotatedSample> two_stage_majority_vote(const std::vector<AnnotatedSample>& pool);

// Keep only predictions that exactly match a gold (span, type) pair.
AnnotatedSample oracle_select(const AnnotatedSample& annotated,
                              const std::vector<EntityRef>& gold);
std::vector<AnnotatedSample> oracle_select(const std::vector<AnnotatedSample>& pool,
                                           const std::map<std::string, std::vector<EntityRef>>& gold_by_id);

// Apply a whole policy; oracle needs gold_by_id, the others ignore it.
std::vector<AnnotatedSample> apply_selection(
    const std::vector<AnnotatedSample>& pool, const SelectionPolicy& policy,
    const std::map<std::string, std::vector<EntityRef>>* gold_by_id = nullptr);

} // namespace selfner
