#include "oracles.hpp"

#include <algorithm>
#include <set>
#include <tuple>

#include "selfner/prompting.hpp"

namespace selfner::testing {

std::map<EntityRef, int> oracle_entity_votes(
    const std::vector<std::vector<EntityRef>>& answers) {
    // Collect every distinct pair first, then count memberships answer by
    // answer, treating each answer as a set.
    std::set<EntityRef> pairs;
    for (const auto& answer : answers) {
        pairs.insert(answer.begin(), answer.end());
    }
    std::map<EntityRef, int> votes;
    for (const auto& pair : pairs) {
        int n = 0;
        for (const auto& answer : answers) {
            if (std::find(answer.begin(), answer.end(), pair) != answer.end()) {
                ++n;
            }
        }
        votes[pair] = n;
    }
    return votes;
}

AnnotatedSample oracle_two_stage(const AnnotatedSample& annotated) {
    AnnotatedSample out;
    out.sample = annotated.sample;
    out.n_samples = annotated.n_samples;
    out.raw_answers = annotated.raw_answers;

    std::vector<std::vector<EntityRef>> sets;
    int dropped = 0;
    for (const auto& raw : annotated.raw_answers) {
        ParseResult r = parse_answer(raw);
        if (r.status == ParseStatus::failed) {
            ++out.parse_failures;
            sets.emplace_back();
        } else {
            dropped += r.dropped;
            sets.push_back(r.predictions);
        }
    }

    // Span tallies: answers containing the span under any type.
    std::map<std::string, int> span_count;
    for (const auto& answer : sets) {
        std::set<std::string> spans;
        for (const auto& e : answer) spans.insert(e.span);
        for (const auto& s : spans) ++span_count[s];
    }

    // Per-pair tallies and the earliest answer each pair shows up in.
    auto pair_votes = oracle_entity_votes(sets);
    std::map<EntityRef, std::size_t> pair_first;
    for (const auto& [pair, _] : pair_votes) {
        for (std::size_t a = 0; a < sets.size(); ++a) {
            if (std::find(sets[a].begin(), sets[a].end(), pair) != sets[a].end()) {
                pair_first[pair] = a;
                break;
            }
        }
    }

    // Spans in order of first appearance across answers.
    std::vector<std::string> span_order;
    for (const auto& answer : sets) {
        for (const auto& e : answer) {
            if (std::find(span_order.begin(), span_order.end(), e.span) == span_order.end()) {
                span_order.push_back(e.span);
            }
        }
    }

    double vote_sum = 0.0;
    for (const auto& span : span_order) {
        const int count = span_count.at(span);
        if (2 * count <= annotated.n_samples) continue;
        // Pick the winning type by exhaustive comparison of the rank tuple
        // (votes desc, first-seen asc, type asc).
        bool have = false;
        std::tuple<int, std::size_t, std::string> best;
        std::string best_type;
        for (const auto& [pair, votes] : pair_votes) {
            if (pair.span != span) continue;
            std::tuple<int, std::size_t, std::string> rank{-votes, pair_first.at(pair),
                                                           pair.etype};
            if (!have || rank < best) {
                have = true;
                best = rank;
                best_type = pair.etype;
            }
        }
        out.predictions.push_back(EntityPrediction{span, best_type, count});
        vote_sum += count;
    }

    if (out.predictions.empty()) {
        out.sample_score =
            (out.parse_failures == 0 && dropped == 0) ? static_cast<double>(out.n_samples) : 0.0;
    } else {
        out.sample_score = vote_sum / static_cast<double>(out.predictions.size());
    }
    return out;
}

OracleCounts oracle_micro_counts(const std::vector<LabeledSet>& predictions,
                                 const std::vector<LabeledSet>& golds) {
    OracleCounts out;
    for (const auto& p : predictions) {
        const LabeledSet* g = nullptr;
        for (const auto& cand : golds) {
            if (cand.id == p.id) g = &cand;
        }
        std::set<EntityRef> p_set(p.entities.begin(), p.entities.end());
        std::set<EntityRef> g_set;
        if (g) g_set.insert(g->entities.begin(), g->entities.end());
        for (const auto& e : p_set) {
            if (g_set.count(e)) {
                ++out.tp;
            } else {
                ++out.fp;
            }
        }
        for (const auto& e : g_set) {
            if (!p_set.count(e)) {
                ++out.fn;
            }
        }
    }
    return out;
}

std::vector<std::vector<EntityRef>> random_answer_sets(SplitMix64& rng) {
    static const std::vector<std::string> spans = {"alpha", "beta", "gamma", "delta"};
    static const std::vector<std::string> types = {"Person", "Location", "Organization"};
    std::vector<std::vector<EntityRef>> answers(1 + rng.bounded(5));
    for (auto& answer : answers) {
        auto m = rng.bounded(5); // 0..4 entities, duplicates allowed
        for (std::uint64_t i = 0; i < m; ++i) {
            answer.push_back(EntityRef{spans[rng.bounded(spans.size())],
                                       types[rng.bounded(types.size())]});
        }
    }
    return answers;
}

AnnotatedSample random_raw_case(SplitMix64& rng) {
    AnnotatedSample s;
    s.sample.id = "case-" + std::to_string(rng.next());
    s.sample.text = "text .";
    auto sets = random_answer_sets(rng);
    s.n_samples = static_cast<int>(sets.size());
    for (const auto& answer : sets) {
        const auto roll = rng.bounded(10);
        if (roll == 0) {
            s.raw_answers.push_back("nothing parseable here"); // parse failure
        } else if (roll == 1) {
            // Parseable but with one droppable non-map entry.
            std::string raw = serialize_predictions(answer);
            raw.insert(raw.size() - 1, answer.empty() ? std::string("42")
                                                      : std::string(", 42"));
            s.raw_answers.push_back(std::move(raw));
        } else {
            s.raw_answers.push_back(serialize_predictions(answer));
        }
    }
    return s;
}

} // namespace selfner::testing
