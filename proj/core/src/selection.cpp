#include "selfner/selection.hpp"

#include <algorithm>
#include <set>

#include "selfner/annotator.hpp"
#include "selfner/errors.hpp"
#include "selfner/prompting.hpp"

namespace selfner {

void SelectionPolicy::validate(int n_samples) const {
    // SC votes live in [0, n]; SV scores in [0, 5]. Only the threshold the
    // strategy actually consults is constrained.
    const double hi = channel == ScoreChannel::sc ? static_cast<double>(n_samples) : 5.0;
    if (kind == SelectionKind::entity_threshold && (th_entity < 0.0 || th_entity > hi)) {
        throw UsageError("entity threshold must lie in [0, " + std::to_string(hi) + "]");
    }
    if (kind == SelectionKind::sample_threshold && (th_sample < 0.0 || th_sample > hi)) {
        throw UsageError("sample threshold must lie in [0, " + std::to_string(hi) + "]");
    }
}

std::string to_string(SelectionKind kind) {
    switch (kind) {
        case SelectionKind::none: return "none";
        case SelectionKind::entity_threshold: return "entity_threshold";
        case SelectionKind::sample_threshold: return "sample_threshold";
        case SelectionKind::two_stage_majority: return "two_stage_majority";
        case SelectionKind::oracle: return "oracle";
    }
    return "?";
}

std::string to_string(ScoreChannel channel) {
    return channel == ScoreChannel::sc ? "sc" : "sv";
}

namespace {

double entity_score(const AnnotatedSample& s, std::size_t i, ScoreChannel channel) {
    if (channel == ScoreChannel::sc) {
        return static_cast<double>(s.predictions[i].votes);
    }
    if (!s.sv_scores || s.sv_scores->size() != s.predictions.size()) {
        throw DataError("sample '" + s.sample.id +
                        "' has no self-verification scores; annotate with --sv first");
    }
    return static_cast<double>((*s.sv_scores)[i]);
}

// Keeps predictions[i] for which keep(i) holds, carrying sv_scores along.
AnnotatedSample keep_predictions(const AnnotatedSample& s,
                                 const std::vector<bool>& keep) {
    AnnotatedSample out = s;
    out.predictions.clear();
    std::vector<int> sv;
    for (std::size_t i = 0; i < s.predictions.size(); ++i) {
        if (!keep[i]) continue;
        out.predictions.push_back(s.predictions[i]);
        if (s.sv_scores) sv.push_back((*s.sv_scores)[i]);
    }
    if (s.sv_scores) {
        out.sv_scores = std::move(sv);
    }
    return out;
}

} // namespace

std::vector<AnnotatedSample> filter_entity_threshold(const std::vector<AnnotatedSample>& pool,
                                                     double th, ScoreChannel channel,
                                                     bool rescore) {
    std::vector<AnnotatedSample> out;
    out.reserve(pool.size());
    for (const auto& s : pool) {
        std::vector<bool> keep(s.predictions.size());
        for (std::size_t i = 0; i < s.predictions.size(); ++i) {
            keep[i] = entity_score(s, i, channel) >= th;
        }
        AnnotatedSample kept = keep_predictions(s, keep);
        if (rescore) {
            if (kept.predictions.empty()) {
                kept.sample_score = 0.0; // filtering removed all evidence
            } else {
                double sum = 0.0;
                for (const auto& p : kept.predictions) sum += p.votes;
                kept.sample_score = sum / static_cast<double>(kept.predictions.size());
            }
        }
        out.push_back(std::move(kept));
    }
    return out;
}

std::vector<AnnotatedSample> filter_sample_threshold(const std::vector<AnnotatedSample>& pool,
                                                     double th, ScoreChannel channel) {
    std::vector<AnnotatedSample> out;
    for (const auto& s : pool) {
        const double score =
            channel == ScoreChannel::sc ? s.sample_score : sv_sample_score(s);
        if (score >= th) {
            out.push_back(s);
        }
    }
    return out;
}

AnnotatedSample two_stage_majority_vote(const AnnotatedSample& annotated) {
    if (annotated.raw_answers.size() != static_cast<std::size_t>(annotated.n_samples)) {
        throw DataError("sample '" + annotated.sample.id +
                        "' does not retain its raw answers; two-stage voting needs them");
    }
    AnnotatedSample out;
    out.sample = annotated.sample;
    out.n_samples = annotated.n_samples;
    out.raw_answers = annotated.raw_answers;

    std::vector<std::vector<EntityRef>> answer_sets;
    int dropped = 0;
    for (const auto& raw : annotated.raw_answers) {
        ParseResult parsed = parse_answer(raw);
        if (parsed.status == ParseStatus::failed) {
            ++out.parse_failures;
            answer_sets.emplace_back();
        } else {
            dropped += parsed.dropped;
            answer_sets.push_back(std::move(parsed.predictions));
        }
    }

    // Stage 1: how many answers mention each span, regardless of type.
    std::map<std::string, int> span_count;
    for (const auto& answer : answer_sets) {
        std::set<std::string> spans;
        for (const auto& e : answer) spans.insert(e.span);
        for (const auto& s : spans) ++span_count[s];
    }

    const auto pair_votes = entity_votes(answer_sets);
    // First answer ordinal in which each (span, type) pair appears, for the
    // stage-2 tie-break.
    std::map<EntityRef, std::size_t> first_seen;
    for (std::size_t a = 0; a < answer_sets.size(); ++a) {
        for (const auto& e : answer_sets[a]) {
            first_seen.emplace(e, a);
        }
    }

    std::set<std::string> emitted;
    std::vector<double> kept_votes;
    for (const auto& answer : answer_sets) {
        for (const auto& e : answer) {
            if (emitted.count(e.span)) continue;
            const int votes = span_count.at(e.span);
            if (2 * votes <= annotated.n_samples) continue; // needs a strict majority
            // Stage 2: most frequent type for this span; ties go to the type
            // seen in the earliest answer, then the lexicographically first.
            std::string best_type;
            int best_votes = -1;
            std::size_t best_first = answer_sets.size();
            for (const auto& [pair, count] : pair_votes) {
                if (pair.span != e.span) continue;
                const std::size_t seen = first_seen.at(pair);
                if (count > best_votes ||
                    (count == best_votes &&
                     (seen < best_first || (seen == best_first && pair.etype < best_type)))) {
                    best_type = pair.etype;
                    best_votes = count;
                    best_first = seen;
                }
            }
            out.predictions.push_back(EntityPrediction{e.span, best_type, votes});
            kept_votes.push_back(votes);
            emitted.insert(e.span);
        }
    }

    if (kept_votes.empty()) {
        out.sample_score = empty_sample_score(out.n_samples, out.parse_failures, dropped);
    } else {
        double sum = 0.0;
        for (double v : kept_votes) sum += v;
        out.sample_score = sum / static_cast<double>(kept_votes.size());
    }
    // The prediction list changed shape; any previous SV scores no longer align.
    out.sv_scores.reset();
    return out;
}

std::vector<AnnotatedSample> two_stage_majority_vote(const std::vector<AnnotatedSample>& pool) {
    std::vector<AnnotatedSample> out;
    out.reserve(pool.size());
    for (const auto& s : pool) {
        out.push_back(two_stage_majority_vote(s));
    }
    return out;
}

AnnotatedSample oracle_select(const AnnotatedSample& annotated,
                              const std::vector<EntityRef>& gold) {
    std::vector<bool> keep(annotated.predictions.size());
    for (std::size_t i = 0; i < annotated.predictions.size(); ++i) {
        const auto& p = annotated.predictions[i];
        keep[i] = std::find(gold.begin(), gold.end(), EntityRef{p.span, p.etype}) != gold.end();
    }
    return keep_predictions(annotated, keep);
}

std::vector<AnnotatedSample> oracle_select(
    const std::vector<AnnotatedSample>& pool,
    const std::map<std::string, std::vector<EntityRef>>& gold_by_id) {
    std::vector<AnnotatedSample> out;
    out.reserve(pool.size());
    for (const auto& s : pool) {
        auto it = gold_by_id.find(s.sample.id);
        if (it == gold_by_id.end()) {
            throw DataError("oracle selection: no gold annotations for sample '" + s.sample.id +
                            "'");
        }
        out.push_back(oracle_select(s, it->second));
    }
    return out;
}

std::vector<AnnotatedSample> apply_selection(
    const std::vector<AnnotatedSample>& pool, const SelectionPolicy& policy,
    const std::map<std::string, std::vector<EntityRef>>* gold_by_id) {
    std::vector<AnnotatedSample> out;
    switch (policy.kind) {
        case SelectionKind::none:
            out = pool;
            break;
        case SelectionKind::entity_threshold:
            out = filter_entity_threshold(pool, policy.th_entity, policy.channel, policy.rescore);
            break;
        case SelectionKind::sample_threshold:
            out = filter_sample_threshold(pool, policy.th_sample, policy.channel);
            break;
        case SelectionKind::two_stage_majority:
            out = two_stage_majority_vote(pool);
            break;
        case SelectionKind::oracle:
            if (!gold_by_id) {
                throw DataError("oracle selection requires gold annotations");
            }
            out = oracle_select(pool, *gold_by_id);
            break;
    }
    if (policy.drop_empty) {
        out.erase(std::remove_if(out.begin(), out.end(),
                                 [](const AnnotatedSample& s) { return s.predictions.empty(); }),
                  out.end());
    }
    return out;
}

} // namespace selfner
