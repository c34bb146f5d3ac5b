#include "selfner/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "selfner/errors.hpp"
#include "selfner/rng.hpp"

namespace selfner {

using nlohmann::json;
using nlohmann::ordered_json;

bool LabelSet::contains(std::string_view type) const {
    return std::find(types.begin(), types.end(), type) != types.end();
}

void LabelSet::validate() const {
    if (types.empty()) {
        throw DataError("label set '" + name + "' has no types");
    }
    std::set<std::string> seen;
    for (const auto& t : types) {
        if (t.empty()) {
            throw DataError("label set '" + name + "' contains an empty type name");
        }
        if (!seen.insert(t).second) {
            throw DataError("label set '" + name + "' lists type '" + t + "' twice");
        }
    }
}

LabelSet LabelSet::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open label set file: " + path.string());
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("label set file " + path.string() + " is not valid JSON: " + e.what());
    }
    LabelSet out;
    if (!j.is_object() || !j.contains("types") || !j["types"].is_array()) {
        throw DataError("label set file " + path.string() +
                        " must be an object with a \"types\" array");
    }
    out.name = j.value("name", path.stem().string());
    for (const auto& t : j["types"]) {
        if (!t.is_string()) {
            throw DataError("label set file " + path.string() + " has a non-string type entry");
        }
        out.types.push_back(t.get<std::string>());
    }
    out.validate();
    return out;
}

std::string normalize_span(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    bool pending_space = false;
    for (char c : raw) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
        } else {
            if (pending_space) {
                out.push_back(' ');
                pending_space = false;
            }
            out.push_back(c);
        }
    }
    return out;
}

namespace {

// Gold entries may be ["span", "Type"] pairs or {"span":..., "type":...}
// objects; both normalize to the same EntityRef.
EntityRef parse_gold_entry(const json& entry, const std::string& id, std::size_t line_no) {
    std::string span, etype;
    if (entry.is_array() && entry.size() == 2 && entry[0].is_string() && entry[1].is_string()) {
        span = entry[0].get<std::string>();
        etype = entry[1].get<std::string>();
    } else if (entry.is_object() && entry.contains("span") && entry.contains("type") &&
               entry["span"].is_string() && entry["type"].is_string()) {
        span = entry["span"].get<std::string>();
        etype = entry["type"].get<std::string>();
    } else {
        throw DataError("line " + std::to_string(line_no) + " (sample '" + id +
                        "'): gold entries must be [span, type] string pairs");
    }
    return EntityRef{normalize_span(span), etype};
}

} // namespace

std::vector<Sample> load_dataset(const std::filesystem::path& path, const LabelSet& labels) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open dataset file: " + path.string());
    }
    std::vector<Sample> out;
    std::set<std::string> ids;
    std::string line;
    std::size_t line_no = 0;
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
        if (!j.is_object()) {
            throw DataError(path.string() + ": line " + std::to_string(line_no) +
                            " is not a JSON object");
        }
        Sample s;
        if (!j.contains("id") || !j["id"].is_string() || j["id"].get<std::string>().empty()) {
            throw DataError(path.string() + ": line " + std::to_string(line_no) +
                            " is missing a string \"id\"");
        }
        s.id = j["id"].get<std::string>();
        if (!j.contains("text") || !j["text"].is_string()) {
            throw DataError(path.string() + ": line " + std::to_string(line_no) + " (sample '" +
                            s.id + "') is missing a string \"text\"");
        }
        s.text = j["text"].get<std::string>();
        if (s.text.find('\n') != std::string::npos || s.text.find('\r') != std::string::npos) {
            // Prompts are line-oriented ("Text: <t>\nAnswer:"), so embedded
            // line breaks would corrupt every downstream exchange.
            throw DataError(path.string() + ": sample '" + s.id +
                            "' contains a line break in its text");
        }
        if (!ids.insert(s.id).second) {
            throw DataError(path.string() + ": duplicate sample id '" + s.id + "'");
        }
        if (j.contains("gold")) {
            if (!j["gold"].is_array()) {
                throw DataError(path.string() + ": sample '" + s.id +
                                "': \"gold\" must be an array");
            }
            std::vector<EntityRef> gold;
            for (const auto& entry : j["gold"]) {
                EntityRef e = parse_gold_entry(entry, s.id, line_no);
                if (e.span.empty()) {
                    throw DataError(path.string() + ": sample '" + s.id +
                                    "' has a gold entity with an empty span");
                }
                if (!labels.contains(e.etype)) {
                    throw DataError(path.string() + ": sample '" + s.id + "': unknown type '" +
                                    e.etype + "' (label set '" + labels.name + "')");
                }
                if (std::find(gold.begin(), gold.end(), e) == gold.end()) {
                    gold.push_back(std::move(e));
                }
            }
            s.gold = std::move(gold);
        }
        out.push_back(std::move(s));
    }
    return out;
}

void save_dataset(const std::filesystem::path& path, const std::vector<Sample>& samples) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write dataset file: " + path.string());
    }
    for (const auto& s : samples) {
        ordered_json j;
        j["id"] = s.id;
        j["text"] = s.text;
        if (s.gold) {
            json gold = json::array();
            for (const auto& e : *s.gold) {
                gold.push_back(json::array({e.span, e.etype}));
            }
            j["gold"] = std::move(gold);
        }
        out << j.dump() << '\n';
    }
}

std::vector<Sample> subsample(const std::vector<Sample>& samples, std::size_t n,
                              std::uint64_t seed) {
    if (n >= samples.size()) {
        return samples;
    }
    std::vector<std::size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), 0);
    SplitMix64 rng(stream_seed(seed, "subsample", samples.size()));
    // Partial Fisher-Yates: only the first n positions need settling.
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.bounded(idx.size() - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(n);
    std::sort(idx.begin(), idx.end()); // keep original relative order
    std::vector<Sample> out;
    out.reserve(n);
    for (std::size_t i : idx) {
        out.push_back(samples[i]);
    }
    return out;
}

} // namespace selfner
