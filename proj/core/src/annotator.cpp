#include "selfner/annotator.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "selfner/errors.hpp"

namespace selfner {

using nlohmann::json;
using nlohmann::ordered_json;

std::map<EntityRef, int> entity_votes(const std::vector<std::vector<EntityRef>>& answers) {
    std::map<EntityRef, int> votes;
    for (const auto& answer : answers) {
        std::set<EntityRef> unique(answer.begin(), answer.end());
        for (const auto& e : unique) {
            ++votes[e];
        }
    }
    return votes;
}

double empty_sample_score(int n_samples, int parse_failures, int dropped_entries) {
    // All n answers cleanly empty = unanimous agreement the sentence has no
    // entities; emptiness caused by unusable answers carries no such signal.
    if (parse_failures == 0 && dropped_entries == 0) {
        return static_cast<double>(n_samples);
    }
    return 0.0;
}

AnnotatedSample annotate_sample(const AnnotateContext& ctx, const Sample& sample,
                                std::span<const Demo> demos, std::string* prompt_out) {
    const std::string prompt =
        demos.empty() ? build_zero_shot_prompt(ctx.tpl, ctx.labels, sample.text)
                      : build_icl_prompt(ctx.tpl, ctx.labels, demos, sample.text);
    if (prompt_out) {
        *prompt_out = prompt;
    }
    PromptRequest req{prompt, ctx.sc.temperature, ctx.model, ctx.max_answer_len};
    const auto completions = ctx.gateway.complete(req, ctx.sc.n_samples, ctx.run_seed);

    AnnotatedSample out;
    out.sample = sample;
    out.n_samples = ctx.sc.n_samples;
    std::vector<std::vector<EntityRef>> answer_sets;
    answer_sets.reserve(completions.size());
    int dropped = 0;
    for (const auto& c : completions) {
        out.raw_answers.push_back(c.text);
        ParseResult parsed = parse_answer(c.text);
        if (parsed.status == ParseStatus::failed) {
            ++out.parse_failures;
            answer_sets.emplace_back();
        } else {
            dropped += parsed.dropped;
            answer_sets.push_back(std::move(parsed.predictions));
        }
    }

    const auto votes = entity_votes(answer_sets);
    for (const auto& answer : answer_sets) {
        for (const auto& e : answer) {
            bool seen = std::any_of(out.predictions.begin(), out.predictions.end(),
                                    [&](const EntityPrediction& p) {
                                        return p.span == e.span && p.etype == e.etype;
                                    });
            if (!seen) {
                out.predictions.push_back(EntityPrediction{e.span, e.etype, votes.at(e)});
            }
        }
    }

    if (out.predictions.empty()) {
        out.sample_score = empty_sample_score(out.n_samples, out.parse_failures, dropped);
    } else {
        double sum = 0.0;
        for (const auto& p : out.predictions) sum += p.votes;
        out.sample_score = sum / static_cast<double>(out.predictions.size());
    }
    return out;
}

SvParseResult self_verify(const AnnotateContext& ctx, AnnotatedSample& annotated) {
    if (annotated.predictions.empty()) {
        return SvParseResult{};
    }
    std::vector<EntityRef> refs;
    refs.reserve(annotated.predictions.size());
    for (const auto& p : annotated.predictions) {
        refs.push_back(EntityRef{p.span, p.etype});
    }
    // The verification exchange replays the canonical annotation round: the
    // zero-shot prompt, the merged answer, then the scoring question.
    const std::string prior = build_zero_shot_prompt(ctx.tpl, ctx.labels, annotated.sample.text);
    PromptRequest req{build_sv_prompt(prior, serialize_predictions(refs)), 0.0, ctx.model,
                      ctx.max_answer_len};
    const auto completions = ctx.gateway.complete(req, 1, ctx.run_seed);
    SvParseResult res = parse_sv_answer(completions.front().text, refs);
    annotated.sv_scores = res.scores;
    return res;
}

double sv_sample_score(const AnnotatedSample& annotated) {
    if (annotated.predictions.empty()) {
        // No per-entity scores exist; the SC sample score already encodes the
        // empty-sample rule, so both channels agree on empty samples.
        return annotated.sample_score;
    }
    if (!annotated.sv_scores || annotated.sv_scores->size() != annotated.predictions.size()) {
        throw DataError("sample '" + annotated.sample.id +
                        "' has no self-verification scores; annotate with --sv first");
    }
    double sum = 0.0;
    for (int s : *annotated.sv_scores) sum += s;
    return sum / static_cast<double>(annotated.sv_scores->size());
}

void save_annotated(const std::filesystem::path& path,
                    const std::vector<AnnotatedSample>& samples, const nlohmann::json& meta) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write annotated file: " + path.string());
    }
    if (!meta.is_null()) {
        out << meta.dump() << '\n';
    }
    for (const auto& s : samples) {
        ordered_json j;
        j["id"] = s.sample.id;
        j["text"] = s.sample.text;
        if (s.sample.gold) {
            json gold = json::array();
            for (const auto& e : *s.sample.gold) {
                gold.push_back(json::array({e.span, e.etype}));
            }
            j["gold"] = std::move(gold);
        }
        json preds = json::array();
        for (const auto& p : s.predictions) {
            preds.push_back(json::array({p.span, p.etype, p.votes}));
        }
        j["predictions"] = std::move(preds);
        j["sample_score"] = s.sample_score;
        j["n_samples"] = s.n_samples;
        j["raw_answers"] = s.raw_answers;
        j["parse_failures"] = s.parse_failures;
        if (s.sv_scores) {
            j["sv_scores"] = *s.sv_scores;
        }
        out << j.dump() << '\n';
    }
}

AnnotatedFile load_annotated(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open annotated file: " + path.string());
    }
    AnnotatedFile out;
    std::string line;
    std::size_t line_no = 0;
    bool first_content_line = true;
    std::set<std::string> ids;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(path.string() + ": line " + std::to_string(line_no) +
                            " is not valid JSON: " + e.what());
        }
        if (first_content_line && j.is_object() && !j.contains("id")) {
            out.meta = std::move(j);
            first_content_line = false;
            continue;
        }
        first_content_line = false;
        try {
            AnnotatedSample s;
            s.sample.id = j.at("id").get<std::string>();
            s.sample.text = j.at("text").get<std::string>();
            if (j.contains("gold")) {
                std::vector<EntityRef> gold;
                for (const auto& e : j["gold"]) {
                    gold.push_back(EntityRef{e.at(0).get<std::string>(),
                                             e.at(1).get<std::string>()});
                }
                s.sample.gold = std::move(gold);
            }
            for (const auto& p : j.at("predictions")) {
                s.predictions.push_back(EntityPrediction{p.at(0).get<std::string>(),
                                                         p.at(1).get<std::string>(),
                                                         p.at(2).get<int>()});
            }
            s.sample_score = j.at("sample_score").get<double>();
            s.n_samples = j.at("n_samples").get<int>();
            s.raw_answers = j.at("raw_answers").get<std::vector<std::string>>();
            s.parse_failures = j.at("parse_failures").get<int>();
            if (j.contains("sv_scores")) {
                s.sv_scores = j["sv_scores"].get<std::vector<int>>();
            }
            if (!ids.insert(s.sample.id).second) {
                throw DataError(path.string() + ": duplicate sample id '" + s.sample.id + "'");
            }
            out.samples.push_back(std::move(s));
        } catch (const json::exception& e) {
            throw DataError(path.string() + ": line " + std::to_string(line_no) +
                            " is not a valid annotated sample: " + e.what());
        }
    }
    return out;
}

} // namespace selfner
