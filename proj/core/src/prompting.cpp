#include "selfner/prompting.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "selfner/errors.hpp"

namespace selfner {

namespace {

constexpr std::string_view kLabelsSlot = "{labels}";
constexpr std::string_view kDemosSlot = "{demos}";
constexpr std::string_view kTextSlot = "{text}";

// The canonical instruction block. The final "Answer: " keeps its trailing
// space and has no trailing newline; the completion continues the line.
constexpr std::string_view kStandardScaffold =
    "Given entity label set: {labels}.\n"
    "Please recognize the named entities in the given text. "
    "Based on the given entity label set, provide answer in the following JSON format: "
    "[{'Entity Name': 'Entity Label'}]. "
    "If there is no entity in the text, return the following empty list: [].\n"
    "\n"
    "{demos}Text: {text}\n"
    "Answer: ";

void replace_all(std::string& s, std::string_view slot, std::string_view value) {
    std::size_t pos = 0;
    while ((pos = s.find(slot, pos)) != std::string::npos) {
        s.replace(pos, slot.size(), value);
        pos += value.size();
    }
}

std::string render(const PromptTemplate& tpl, const LabelSet& labels, std::span<const Demo> demos,
                   std::string_view query) {
    std::string demo_blocks;
    for (const auto& d : demos) {
        demo_blocks += "Text: ";
        demo_blocks += d.text;
        demo_blocks += "\nAnswer: ";
        demo_blocks += serialize_predictions(d.predictions);
        demo_blocks += "\n\n";
    }
    std::string out = tpl.scaffold;
    replace_all(out, kLabelsSlot, render_label_list(labels));
    if (out.find(kDemosSlot) != std::string::npos) {
        replace_all(out, kDemosSlot, demo_blocks);
    } else if (!demo_blocks.empty()) {
        // Override templates without a demos slot get the blocks directly
        // before the query block.
        std::size_t pos = out.rfind(std::string("Text: ") + std::string(kTextSlot));
        if (pos == std::string::npos) pos = out.rfind(kTextSlot);
        if (pos == std::string::npos) pos = out.size();
        out.insert(pos, demo_blocks);
    }
    replace_all(out, kTextSlot, query);
    return out;
}

bool is_all_space(std::string_view s) {
    return std::all_of(s.begin(), s.end(),
                       [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string_view trim_view(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

// A quote only starts a string at a token boundary: the start of the region
// or right after a structural character.  A quote glued to the end of a word
// is a stray (a dropped partner quote) and reads as a literal, which keeps
// unbalanced answers like {New York': 'Location'} tokenizable.
bool opens_quote(char prev_nonspace) {
    return prev_nonspace == 0 || prev_nonspace == '[' || prev_nonspace == '{' ||
           prev_nonspace == ',' || prev_nonspace == ':';
}

// Splits a map body or list body at top-level separators, respecting quotes
// and nesting, so spans containing commas or colons survive.
std::vector<std::string_view> split_top_level(std::string_view s, char sep, bool first_only) {
    std::vector<std::string_view> parts;
    char quote = 0;
    char prev = 0;
    int depth = 0;
    std::size_t begin = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        char c = s[i];
        if (quote) {
            if (c == '\\' && quote == '"') {
                ++i;
            } else if (c == quote) {
                quote = 0;
            }
        } else if ((c == '\'' || c == '"') && opens_quote(prev)) {
            quote = c;
        } else if (c == '{' || c == '[') {
            ++depth;
        } else if (c == '}' || c == ']') {
            --depth;
        } else if (c == sep && depth == 0 && !(first_only && !parts.empty())) {
            parts.push_back(s.substr(begin, i - begin));
            begin = i + 1;
        }
        if (!std::isspace(static_cast<unsigned char>(c))) prev = c;
    }
    parts.push_back(s.substr(begin));
    return parts;
}

// True when the token was a quoted string; `content` receives the unquoted,
// unescaped text either way (stray single quotes at the edges are shed, which
// absorbs answers that drop one quote of a pair).
bool unquote(std::string_view token, std::string& content) {
    std::string_view t = trim_view(token);
    bool quoted = false;
    if (t.size() >= 2 && (t.front() == '\'' || t.front() == '"') && t.back() == t.front()) {
        quoted = true;
        char q = t.front();
        t = t.substr(1, t.size() - 2);
        content.clear();
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (q == '"' && t[i] == '\\' && i + 1 < t.size()) {
                ++i;
            }
            content.push_back(t[i]);
        }
        return quoted;
    }
    while (!t.empty() && (t.front() == '\'' || t.front() == '"')) t.remove_prefix(1);
    while (!t.empty() && (t.back() == '\'' || t.back() == '"')) t.remove_suffix(1);
    content = std::string(trim_view(t));
    return false;
}

// Unquoted tokens that read as JSON scalars are not strings.
bool is_non_string_scalar(std::string_view token) {
    std::string_view t = trim_view(token);
    if (t.empty() || t == "true" || t == "false" || t == "null") return true;
    if (t.front() == '{' || t.front() == '[') return true;
    std::string buf(t);
    char* end = nullptr;
    std::strtod(buf.c_str(), &end);
    return end != nullptr && *end == '\0';
}

} // namespace

PromptTemplate PromptTemplate::standard() {
    return PromptTemplate{std::string(kStandardScaffold)};
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw UsageError("cannot open template file: " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    PromptTemplate tpl{buf.str()};
    if (tpl.scaffold.find(kLabelsSlot) == std::string::npos ||
        tpl.scaffold.find(kTextSlot) == std::string::npos) {
        throw UsageError("template file " + path.string() +
                         " must contain the {labels} and {text} slots");
    }
    return tpl;
}

std::string render_label_list(const LabelSet& labels) {
    std::string out = "[";
    for (std::size_t i = 0; i < labels.types.size(); ++i) {
        if (i) out += ", ";
        out += "'";
        out += labels.types[i];
        out += "'";
    }
    out += "]";
    return out;
}

std::string serialize_predictions(std::span<const EntityRef> predictions) {
    if (predictions.empty()) return "[]";
    auto quoted = [](const std::string& s) {
        // Single quotes are canonical; a span holding one falls back to
        // double quotes so the output stays parseable.
        if (s.find('\'') == std::string::npos) return "'" + s + "'";
        return "\"" + s + "\"";
    };
    std::string out = "[";
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (i) out += ", ";
        out += "{" + quoted(predictions[i].span) + ": " + quoted(predictions[i].etype) + "}";
    }
    out += "]";
    return out;
}

std::string build_zero_shot_prompt(const PromptTemplate& tpl, const LabelSet& labels,
                                   std::string_view text) {
    return render(tpl, labels, {}, text);
}

std::string build_icl_prompt(const PromptTemplate& tpl, const LabelSet& labels,
                             std::span<const Demo> demos, std::string_view query) {
    return render(tpl, labels, demos, query);
}

ParseResult parse_answer(std::string_view raw) {
    ParseResult res;
    std::size_t start = raw.find('[');
    if (start == std::string::npos) {
        return res; // failed: no bracketed region at all
    }
    // Find the matching close bracket, skipping quoted stretches.
    char quote = 0;
    char prev = 0;
    int depth = 0;
    std::size_t end = std::string::npos;
    for (std::size_t i = start; i < raw.size(); ++i) {
        char c = raw[i];
        if (quote) {
            if (c == '\\' && quote == '"') {
                ++i;
            } else if (c == quote) {
                quote = 0;
            }
        } else if ((c == '\'' || c == '"') && opens_quote(prev)) {
            quote = c;
        } else if (c == '[' || c == '{') {
            ++depth;
        } else if (c == ']' || c == '}') {
            if (--depth == 0 && c == ']') {
                end = i;
                break;
            }
        }
        if (!std::isspace(static_cast<unsigned char>(c))) prev = c;
    }
    if (end == std::string::npos) {
        return res; // failed: bracket never closes
    }

    bool clean_surroundings =
        is_all_space(raw.substr(0, start)) && is_all_space(raw.substr(end + 1));

    std::string_view body = raw.substr(start + 1, end - start - 1);
    if (!is_all_space(body)) {
        for (std::string_view item : split_top_level(body, ',', false)) {
            std::string_view t = trim_view(item);
            if (t.empty()) continue; // trailing comma
            if (t.front() != '{') {
                ++res.dropped; // bare word, number, nested list...
                continue;
            }
            std::size_t close = t.rfind('}');
            std::string_view map_body = t.substr(1, close == std::string::npos
                                                        ? std::string_view::npos
                                                        : close - 1);
            for (std::string_view pair : split_top_level(map_body, ',', false)) {
                if (trim_view(pair).empty()) continue;
                auto kv = split_top_level(pair, ':', true);
                if (kv.size() != 2) {
                    ++res.dropped; // no key/value separator
                    continue;
                }
                std::string key, value;
                bool key_quoted = unquote(kv[0], key);
                bool value_quoted = unquote(kv[1], value);
                if ((!value_quoted && is_non_string_scalar(kv[1])) ||
                    (!key_quoted && is_non_string_scalar(kv[0]))) {
                    ++res.dropped;
                    continue;
                }
                EntityRef e{normalize_span(key), normalize_span(value)};
                if (e.span.empty() || e.etype.empty()) {
                    ++res.dropped;
                    continue;
                }
                if (std::find(res.predictions.begin(), res.predictions.end(), e) ==
                    res.predictions.end()) {
                    res.predictions.push_back(std::move(e));
                }
            }
        }
    }
    res.status = (res.dropped == 0 && clean_surroundings) ? ParseStatus::ok
                                                          : ParseStatus::recovered;
    return res;
}

std::string sv_question() {
    return "How confident are you in providing the above answers? Please give each named "
           "entity in your answer a confidence score of 0-5.";
}

std::string build_sv_prompt(std::string_view prior_prompt, std::string_view prior_answer) {
    std::string out(prior_prompt);
    std::string_view answer = prior_answer;
    while (!answer.empty() && std::isspace(static_cast<unsigned char>(answer.back()))) {
        answer.remove_suffix(1);
    }
    out += answer;
    out += "\n";
    out += sv_question();
    return out;
}

SvParseResult parse_sv_answer(std::string_view raw, std::span<const EntityRef> predictions) {
    SvParseResult res;
    if (predictions.empty()) {
        return res;
    }
    std::string hay(raw);
    std::transform(hay.begin(), hay.end(), hay.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    std::vector<std::pair<std::size_t, std::size_t>> consumed;
    auto overlaps = [&](std::size_t pos, std::size_t len) {
        for (auto [b, e] : consumed) {
            if (pos < e && pos + len > b) return true;
        }
        return false;
    };

    bool any_clamped = false;
    for (const auto& p : predictions) {
        std::string needle = p.span;
        std::transform(needle.begin(), needle.end(), needle.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        int score = 0;
        SvFlag flag = SvFlag::unmatched;
        for (std::size_t pos = hay.find(needle); pos != std::string::npos;
             pos = hay.find(needle, pos + 1)) {
            if (overlaps(pos, needle.size())) continue;
            // Nearest integer after the span is its score.
            std::size_t i = pos + needle.size();
            while (i < hay.size() && !std::isdigit(static_cast<unsigned char>(hay[i])) &&
                   !(hay[i] == '-' && i + 1 < hay.size() &&
                     std::isdigit(static_cast<unsigned char>(hay[i + 1])))) {
                ++i;
            }
            if (i == hay.size()) break; // no integer follows any later occurrence either
            bool negative = hay[i] == '-';
            if (negative) ++i;
            long value = 0;
            std::size_t digits_end = i;
            while (digits_end < hay.size() &&
                   std::isdigit(static_cast<unsigned char>(hay[digits_end]))) {
                value = value * 10 + (hay[digits_end] - '0');
                ++digits_end;
            }
            if (negative) value = -value;
            if (value < 0 || value > 5) {
                score = static_cast<int>(std::clamp(value, 0l, 5l));
                flag = SvFlag::clamped;
                any_clamped = true;
            } else {
                score = static_cast<int>(value);
                flag = SvFlag::matched;
            }
            consumed.emplace_back(pos, digits_end);
            break;
        }
        res.scores.push_back(score);
        res.flags.push_back(flag);
    }
    bool all_matched = std::all_of(res.flags.begin(), res.flags.end(),
                                   [](SvFlag f) { return f == SvFlag::matched; });
    res.status = (all_matched && !any_clamped) ? ParseStatus::ok : ParseStatus::recovered;
    return res;
}

} // namespace selfner
