#include <algorithm>
#include <array>
#include <cstdio>

#include "selfner/errors.hpp"
#include "selfner/gateway.hpp"
#include "selfner/prompting.hpp"
#include "selfner/rng.hpp"

namespace selfner {

namespace {

// Fixed spurious-prediction vocabulary: capitalized phrases that read like
// plausible hallucinated entities but match no fixture gold span.
constexpr std::array<std::string_view, 32> kDistractors{
    "Reception Desk", "Morning Briefing", "Blue Corridor",  "Annual Review",
    "Quiet Garden",   "Long Meadow",      "Second Draft",   "Open Ledger",
    "Spare Key",      "Winter Stock",     "Copper Kettle",  "Paper Trail",
    "Night Shift",    "Early Edition",    "Back Office",    "Field Notes",
    "Round Table",    "Side Entrance",    "Upper Deck",     "Lost Property",
    "Main Archive",   "Short List",       "Outer Wall",     "Grand Total",
    "Final Notice",   "Loading Bay",      "Supply Closet",  "Corner Booth",
    "Service Lane",   "Quiet Hours",      "Spring Ledger",  "Broad Margin",
};

// The query is always the last "Text: " line of the prompt; demonstrations
// appear on earlier lines. Mid-line occurrences (inside a span, say) are not
// prompt blocks and are skipped.
std::string last_text_line(const std::string& prompt) {
    std::size_t search_from = std::string::npos;
    for (;;) {
        std::size_t pos = prompt.rfind("Text: ", search_from);
        if (pos == std::string::npos) return {};
        if (pos == 0 || prompt[pos - 1] == '\n') {
            std::size_t begin = pos + 6;
            std::size_t end = prompt.find('\n', begin);
            if (end == std::string::npos) end = prompt.size();
            return prompt.substr(begin, end - begin);
        }
        if (pos == 0) return {};
        search_from = pos - 1;
    }
}

} // namespace

std::span<const std::string_view> scripted_distractors() {
    return {kDistractors.data(), kDistractors.size()};
}

std::string scripted_answer(const Sample& sample, const LabelSet& labels,
                            const NoiseProfile& profile, int ordinal) {
    if (!sample.gold) {
        throw DataError("scripted backend requires gold annotations (sample '" + sample.id +
                        "' has none)");
    }
    SplitMix64 rng(stream_seed(profile.seed, sample.id, static_cast<std::uint64_t>(ordinal)));
    std::vector<EntityRef> out;
    for (const auto& g : *sample.gold) {
        if (rng.next_double() >= profile.p_hit) continue;
        std::string etype = g.etype;
        if (rng.next_double() < profile.p_confuse && labels.types.size() > 1) {
            // Uniform over the other types.
            std::vector<const std::string*> others;
            others.reserve(labels.types.size() - 1);
            for (const auto& t : labels.types) {
                if (t != g.etype) others.push_back(&t);
            }
            etype = *others[rng.bounded(others.size())];
        }
        out.push_back(EntityRef{g.span, etype});
    }
    if (rng.next_double() < profile.p_spurious) {
        auto pool = scripted_distractors();
        EntityRef extra{std::string(pool[rng.bounded(pool.size())]),
                        labels.types[rng.bounded(labels.types.size())]};
        if (std::find(out.begin(), out.end(), extra) == out.end()) {
            out.push_back(std::move(extra));
        }
    }
    return serialize_predictions(out);
}

ScriptedBackend::ScriptedBackend(std::vector<Sample> corpus, LabelSet labels,
                                 NoiseProfile profile)
    : labels_(std::move(labels)), profile_(profile) {
    profile_.validate();
    char buf[128];
    std::snprintf(buf, sizeof(buf), "scripted(h=%g,c=%g,s=%g,seed=%llu)", profile_.p_hit,
                  profile_.p_confuse, profile_.p_spurious,
                  static_cast<unsigned long long>(profile_.seed));
    id_ = buf;
    add_samples(corpus);
}

void ScriptedBackend::add_samples(const std::vector<Sample>& samples) {
    for (const auto& s : samples) {
        samples_.push_back(std::make_unique<Sample>(s));
        by_text_.emplace_back(s.text, samples_.back().get());
    }
    // First id wins for duplicate texts: stable keyed sort keeps the earliest
    // insertion in front, and find_by_text takes the first match.
    std::stable_sort(by_text_.begin(), by_text_.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
}

const Sample* ScriptedBackend::find_by_text(const std::string& text) const {
    auto it = std::lower_bound(by_text_.begin(), by_text_.end(), text,
                               [](const auto& e, const std::string& t) { return e.first < t; });
    if (it == by_text_.end() || it->first != text) return nullptr;
    return it->second;
}

std::string ScriptedBackend::complete_one(const PromptRequest& req, int ordinal,
                                          std::uint64_t run_seed) {
    (void)run_seed; // draws are keyed by the profile seed so reruns share answers
    const std::string text = last_text_line(req.prompt);
    const Sample* sample = find_by_text(text);
    if (!sample) {
        throw DataError("scripted backend has no sample with text \"" + text + "\"");
    }

    const std::string question = sv_question();
    if (req.prompt.size() > question.size() &&
        req.prompt.compare(req.prompt.size() - question.size(), question.size(), question) == 0) {
        // Self-verification exchange: score the answer embedded in the prompt
        // 5 for gold-matching predictions, 2 otherwise.
        std::string body = req.prompt.substr(0, req.prompt.size() - question.size());
        std::size_t apos = body.rfind("Answer: ");
        std::string answer = apos == std::string::npos ? std::string() : body.substr(apos + 8);
        ParseResult parsed = parse_answer(answer);
        if (parsed.predictions.empty()) {
            return "no entities";
        }
        if (!sample->gold) {
            throw DataError("scripted backend requires gold annotations (sample '" + sample->id +
                            "' has none)");
        }
        std::string out;
        for (const auto& p : parsed.predictions) {
            bool gold_match = std::find(sample->gold->begin(), sample->gold->end(), p) !=
                              sample->gold->end();
            if (!out.empty()) out += ", ";
            out += p.span + ": " + (gold_match ? "5" : "2");
        }
        return out;
    }

    return scripted_answer(*sample, labels_, profile_, ordinal);
}

} // namespace selfner
