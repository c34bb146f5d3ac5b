#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "selfner/errors.hpp"
#include "selfner/prompting.hpp"
#include "selfner/rng.hpp"

using namespace selfner;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

LabelSet ace_labels() {
    return LabelSet::load(fs::path(SELFNER_TEST_DATA_DIR) / "ace05_labels.json");
}

const char* kQuery =
    "right now we 're also waiting to hear from the president at the white house .";

} // namespace

TEST_CASE("zero-shot prompt matches the golden file byte for byte") {
    auto tpl = PromptTemplate::standard();
    auto built = build_zero_shot_prompt(tpl, ace_labels(), kQuery);
    auto golden = slurp(fs::path(SELFNER_TEST_GOLDEN_DIR) / "zero_shot_ace05.txt");
    CHECK(built == golden);
    // The completion continues the last line: trailing space, no newline.
    REQUIRE(built.size() >= 8);
    CHECK(built.substr(built.size() - 8) == "Answer: ");
}

TEST_CASE("ICL prompt matches the golden file byte for byte") {
    std::vector<Demo> demos = {
        {"right now we 're also waiting to hear from the president at the white house .",
         {{"white house", "Location"}, {"president", "Person"}}},
        {"At the Pentagon , Barbara Starr reports officials say today begins a new strategy "
         "in the skies over Baghdad .",
         {{"Barbara Starr", "Person"},
          {"Pentagon", "Facility"},
          {"officials", "Person"},
          {"skies", "Location"},
          {"Baghdad", "Geo-Political Entity"}}},
        {"John Irvine , ITV News , Baghdad .",
         {{"John Irvine", "Person"},
          {"ITV News", "Organization"},
          {"Baghdad", "Geo-Political Entity"}}},
    };
    auto built = build_icl_prompt(PromptTemplate::standard(), ace_labels(), demos, kQuery);
    auto golden = slurp(fs::path(SELFNER_TEST_GOLDEN_DIR) / "icl_ace05.txt");
    CHECK(built == golden);
}

TEST_CASE("ICL prompt with no demos degenerates to the zero-shot prompt") {
    auto tpl = PromptTemplate::standard();
    auto labels = ace_labels();
    CHECK(build_icl_prompt(tpl, labels, {}, kQuery) ==
          build_zero_shot_prompt(tpl, labels, kQuery));
}

TEST_CASE("label list rendering") {
    LabelSet labels{"x", {"Person", "Geo-Political Entity"}};
    CHECK(render_label_list(labels) == "['Person', 'Geo-Political Entity']");
    LabelSet one{"x", {"Person"}};
    CHECK(render_label_list(one) == "['Person']");
}

TEST_CASE("prediction serialization") {
    CHECK(serialize_predictions({}) == "[]");
    std::vector<EntityRef> preds = {{"white house", "Location"}, {"president", "Person"}};
    CHECK(serialize_predictions(preds) ==
          "[{'white house': 'Location'}, {'president': 'Person'}]");
    // Spans holding a single quote switch that entry to double quotes.
    std::vector<EntityRef> tricky = {{"it's", "Organization"}};
    CHECK(serialize_predictions(tricky) == "[{\"it's\": 'Organization'}]");
}

TEST_CASE("answer parsing: clean inputs") {
    SUBCASE("canonical list") {
        auto r = parse_answer("[{'white house': 'Location'}, {'president': 'Person'}]");
        CHECK(r.status == ParseStatus::ok);
        CHECK(r.dropped == 0);
        REQUIRE(r.predictions.size() == 2);
        CHECK(r.predictions[0] == EntityRef{"white house", "Location"});
        CHECK(r.predictions[1] == EntityRef{"president", "Person"});
    }
    SUBCASE("empty list") {
        auto r = parse_answer("[]");
        CHECK(r.status == ParseStatus::ok);
        CHECK(r.predictions.empty());
    }
    SUBCASE("surrounding whitespace is fine") {
        auto r = parse_answer("  [ { 'a' : 'Person' } ]\n");
        CHECK(r.status == ParseStatus::ok);
        REQUIRE(r.predictions.size() == 1);
        CHECK(r.predictions[0] == EntityRef{"a", "Person"});
    }
    SUBCASE("double-quoted JSON with escapes") {
        auto r = parse_answer(R"([{"New \"York\"": "Location"}])");
        CHECK(r.status == ParseStatus::ok);
        REQUIRE(r.predictions.size() == 1);
        CHECK(r.predictions[0].span == "New \"York\"");
    }
    SUBCASE("one map with several pairs") {
        auto r = parse_answer("[{'a': 'Person', 'b': 'Location'}]");
        CHECK(r.status == ParseStatus::ok);
        REQUIRE(r.predictions.size() == 2);
        CHECK(r.predictions[0] == EntityRef{"a", "Person"});
        CHECK(r.predictions[1] == EntityRef{"b", "Location"});
    }
    SUBCASE("trailing comma tolerated without penalty") {
        auto r = parse_answer("[{'a': 'Person'},]");
        CHECK(r.status == ParseStatus::ok);
        CHECK(r.predictions.size() == 1);
    }
    SUBCASE("duplicates collapse to the first occurrence") {
        auto r = parse_answer("[{'a': 'Person'}, {'b': 'Location'}, {'a': 'Person'}]");
        CHECK(r.status == ParseStatus::ok);
        REQUIRE(r.predictions.size() == 2);
        CHECK(r.predictions[0].span == "a");
        CHECK(r.predictions[1].span == "b");
    }
    SUBCASE("spans with commas and colons survive when quoted") {
        auto r = parse_answer("[{'Sam, the Elder: III': 'Person'}]");
        CHECK(r.status == ParseStatus::ok);
        REQUIRE(r.predictions.size() == 1);
        CHECK(r.predictions[0].span == "Sam, the Elder: III");
    }
    SUBCASE("internal whitespace is normalized") {
        auto r = parse_answer("[{'  New   York ': 'Location'}]");
        REQUIRE(r.predictions.size() == 1);
        CHECK(r.predictions[0].span == "New York");
    }
}

TEST_CASE("answer parsing: recovery") {
    SUBCASE("chatter around the list") {
        auto r = parse_answer("Sure! Here is the answer: [{'Paris': 'Location'}] Hope it helps.");
        CHECK(r.status == ParseStatus::recovered);
        REQUIRE(r.predictions.size() == 1);
        CHECK(r.predictions[0] == EntityRef{"Paris", "Location"});
    }
    SUBCASE("non-string values are dropped") {
        auto r = parse_answer("[{'a': 5}, {'b': 'Person'}]");
        CHECK(r.status == ParseStatus::recovered);
        CHECK(r.dropped == 1);
        REQUIRE(r.predictions.size() == 1);
        CHECK(r.predictions[0].span == "b");
    }
    SUBCASE("bare items are dropped") {
        auto r = parse_answer("[42, {'b': 'Person'}, true]");
        CHECK(r.status == ParseStatus::recovered);
        CHECK(r.dropped == 2);
        CHECK(r.predictions.size() == 1);
    }
    SUBCASE("nested arrays are dropped") {
        auto r = parse_answer("[['a', 'Person']]");
        CHECK(r.status == ParseStatus::recovered);
        CHECK(r.dropped == 1);
        CHECK(r.predictions.empty());
    }
    SUBCASE("a shed stray quote still yields the entity") {
        auto r = parse_answer("[{New York': 'Location'}]");
        REQUIRE(r.predictions.size() == 1);
        CHECK(r.predictions[0] == EntityRef{"New York", "Location"});
    }
    SUBCASE("empty spans are dropped") {
        auto r = parse_answer("[{'': 'Person'}]");
        CHECK(r.dropped == 1);
        CHECK(r.predictions.empty());
        CHECK(r.status == ParseStatus::recovered);
    }
    SUBCASE("pair without separator is dropped") {
        auto r = parse_answer("[{'loner'}]");
        CHECK(r.dropped == 1);
        CHECK(r.status == ParseStatus::recovered);
    }
}

TEST_CASE("answer parsing: failure") {
    for (const char* raw : {"I could not find any entities.", "", "broken [ never closes",
                            "[{'a': 'Person'"}) {
        CAPTURE(raw);
        auto r = parse_answer(raw);
        CHECK(r.status == ParseStatus::failed);
        CHECK(r.predictions.empty());
        CHECK(r.dropped == 0);
    }
}

TEST_CASE("serialize then parse round-trips") {
    std::vector<EntityRef> preds = {
        {"white house", "Location"},
        {"Geo Political Span", "Geo-Political Entity"},
        {"it's complicated", "Organization"},
    };
    auto r = parse_answer(serialize_predictions(preds));
    CHECK(r.status == ParseStatus::ok);
    REQUIRE(r.predictions.size() == preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        CHECK(r.predictions[i] == preds[i]);
    }
}

TEST_CASE("answer parser never throws and keeps its invariants under fuzz") {
    const std::string alphabet = "[]{}'\":,\\ abPerson01.truenullx\n\t-";
    SplitMix64 rng(20260819);
    for (int trial = 0; trial < 10000; ++trial) {
        std::string s;
        auto len = rng.bounded(64);
        for (std::uint64_t i = 0; i < len; ++i) {
            s.push_back(alphabet[static_cast<std::size_t>(rng.bounded(alphabet.size()))]);
        }
        ParseResult r;
        CHECK_NOTHROW(r = parse_answer(s));
        if (r.status == ParseStatus::failed) {
            CHECK(r.predictions.empty());
        }
        std::set<std::pair<std::string, std::string>> seen;
        for (const auto& p : r.predictions) {
            CHECK_FALSE(p.span.empty());
            CHECK_FALSE(p.etype.empty());
            CHECK(p.span == normalize_span(p.span));
            CHECK(seen.insert({p.span, p.etype}).second);
        }
    }
}

TEST_CASE("confidence question and follow-up prompt") {
    CHECK(sv_question() ==
          "How confident are you in providing the above answers? Please give each named "
          "entity in your answer a confidence score of 0-5.");
    auto p = build_sv_prompt("Text: t\nAnswer: ", "[{'a': 'Person'}]\n\n");
    CHECK(p == "Text: t\nAnswer: [{'a': 'Person'}]\n" + sv_question());
}

TEST_CASE("confidence score parsing") {
    std::vector<EntityRef> preds = {{"Paris", "Location"}, {"Bob", "Person"}};

    SUBCASE("plain scores") {
        auto r = parse_sv_answer("Paris: 5, Bob: 3", preds);
        CHECK(r.status == ParseStatus::ok);
        CHECK(r.scores == std::vector<int>{5, 3});
        CHECK(r.flags == std::vector<SvFlag>{SvFlag::matched, SvFlag::matched});
    }
    SUBCASE("case-insensitive match, prose around the scores") {
        auto r = parse_sv_answer("I'd rate paris a 4 and BOB gets a 2 overall.", preds);
        CHECK(r.status == ParseStatus::ok);
        CHECK(r.scores == std::vector<int>{4, 2});
    }
    SUBCASE("out-of-range values are clamped and flagged") {
        auto r = parse_sv_answer("Paris: 9, Bob: -2", preds);
        CHECK(r.status == ParseStatus::recovered);
        CHECK(r.scores == std::vector<int>{5, 0});
        CHECK(r.flags == std::vector<SvFlag>{SvFlag::clamped, SvFlag::clamped});
    }
    SUBCASE("missing entity scores zero") {
        auto r = parse_sv_answer("Paris: 5", preds);
        CHECK(r.status == ParseStatus::recovered);
        CHECK(r.scores == std::vector<int>{5, 0});
        CHECK(r.flags[1] == SvFlag::unmatched);
    }
    SUBCASE("nothing matches") {
        auto r = parse_sv_answer("no comment", preds);
        CHECK(r.status == ParseStatus::recovered);
        CHECK(r.scores == std::vector<int>{0, 0});
    }
    SUBCASE("repeated spans consume occurrences left to right") {
        std::vector<EntityRef> twice = {{"alpha", "Person"}, {"alpha", "Location"}};
        auto r = parse_sv_answer("alpha: 3, alpha: 1", twice);
        CHECK(r.status == ParseStatus::ok);
        CHECK(r.scores == std::vector<int>{3, 1});
    }
    SUBCASE("no predictions means nothing to score") {
        auto r = parse_sv_answer("whatever", {});
        CHECK(r.status == ParseStatus::ok);
        CHECK(r.scores.empty());
    }
}

TEST_CASE("template override files") {
    auto dir = fs::temp_directory_path() / "selfner-prompt-test";
    fs::create_directories(dir);

    SUBCASE("missing slots are rejected") {
        auto path = dir / "bad.txt";
        std::ofstream(path) << "no slots here";
        CHECK_THROWS_AS(PromptTemplate::load(path), UsageError);
    }
    SUBCASE("demos insert before the query block when no slot marks the spot") {
        auto path = dir / "minimal.txt";
        std::ofstream(path) << "{labels}\nText: {text}\nAnswer: ";
        auto tpl = PromptTemplate::load(path);
        LabelSet labels{"x", {"Person"}};
        std::vector<Demo> demos = {{"d", {{"x", "Person"}}}};
        CHECK(build_icl_prompt(tpl, labels, demos, "q") ==
              "['Person']\nText: d\nAnswer: [{'x': 'Person'}]\n\nText: q\nAnswer: ");
        // Zero-shot render leaves the scaffold untouched apart from the slots.
        CHECK(build_zero_shot_prompt(tpl, labels, "q") == "['Person']\nText: q\nAnswer: ");
    }
}
