#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "selfner/corpus.hpp"
#include "selfner/errors.hpp"

using namespace selfner;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    auto dir = fs::temp_directory_path() / "selfner-corpus-test";
    fs::create_directories(dir);
    return dir;
}

fs::path write_lines(const std::string& name, const std::string& content) {
    auto path = temp_dir() / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
    return path;
}

LabelSet toy_labels() {
    LabelSet labels;
    labels.name = "toy";
    labels.types = {"Person", "Location"};
    return labels;
}

} // namespace

TEST_CASE("normalize_span trims and collapses whitespace") {
    CHECK(normalize_span("  New   York ") == "New York");
    CHECK(normalize_span("a\tb\nc") == "a b c");
    CHECK(normalize_span("plain") == "plain");
    CHECK(normalize_span("   ") == "");
    // Idempotent on its own output.
    CHECK(normalize_span(normalize_span("  a   b ")) == normalize_span("  a   b "));
}

TEST_CASE("label set validation") {
    LabelSet ok = toy_labels();
    CHECK_NOTHROW(ok.validate());
    CHECK(ok.contains("Person"));
    CHECK_FALSE(ok.contains("Weapon"));

    LabelSet dup;
    dup.types = {"Person", "Person"};
    CHECK_THROWS_AS(dup.validate(), DataError);

    LabelSet empty;
    CHECK_THROWS_AS(empty.validate(), DataError);

    LabelSet blank;
    blank.types = {"Person", ""};
    CHECK_THROWS_AS(blank.validate(), DataError);
}

TEST_CASE("label set file name defaults to the file stem") {
    auto path = write_lines("stemmed.json", R"({"types": ["Person"]})");
    auto labels = LabelSet::load(path);
    CHECK(labels.name == "stemmed");
}

TEST_CASE("dataset round-trip preserves ids, texts and gold") {
    std::vector<Sample> samples = {
        {"a", "Alice met Bob .", std::vector<EntityRef>{{"Alice", "Person"}, {"Bob", "Person"}}},
        {"b", "Nothing here .", std::vector<EntityRef>{}},
        {"c", "No gold at all .", std::nullopt},
    };
    auto path = temp_dir() / "roundtrip.jsonl";
    save_dataset(path, samples);
    auto loaded = load_dataset(path, toy_labels());
    REQUIRE(loaded.size() == 3);
    CHECK(loaded[0].id == "a");
    CHECK(loaded[0].text == "Alice met Bob .");
    REQUIRE(loaded[0].gold.has_value());
    CHECK(loaded[0].gold->size() == 2);
    REQUIRE(loaded[1].gold.has_value());
    CHECK(loaded[1].gold->empty());
    CHECK_FALSE(loaded[2].gold.has_value());
}

TEST_CASE("dataset loader rejects duplicate ids") {
    auto path = write_lines("dup.jsonl",
                            "{\"id\": \"x\", \"text\": \"one .\"}\n"
                            "{\"id\": \"x\", \"text\": \"two .\"}\n");
    CHECK_THROWS_AS(load_dataset(path, toy_labels()), DataError);
}

TEST_CASE("dataset loader rejects texts with line breaks") {
    auto path = write_lines("newline.jsonl", R"({"id": "x", "text": "one\ntwo"})"
                                                 "\n");
    CHECK_THROWS_AS(load_dataset(path, toy_labels()), DataError);
}

TEST_CASE("dataset loader rejects unknown gold types") {
    auto path = write_lines(
        "badtype.jsonl", R"({"id": "x", "text": "a .", "gold": [["a", "Weapon"]]})"
                             "\n");
    CHECK_THROWS_AS(load_dataset(path, toy_labels()), DataError);
}

TEST_CASE("dataset loader accepts object-form gold and normalizes spans") {
    auto path = write_lines(
        "objform.jsonl",
        R"({"id": "x", "text": "a .", "gold": [{"span": "  New   York ", "type": "Location"}]})"
        "\n");
    auto loaded = load_dataset(path, toy_labels());
    REQUIRE(loaded.size() == 1);
    REQUIRE(loaded[0].gold.has_value());
    REQUIRE(loaded[0].gold->size() == 1);
    CHECK((*loaded[0].gold)[0].span == "New York");
}

TEST_CASE("dataset loader deduplicates gold pairs") {
    auto path = write_lines(
        "dupgold.jsonl",
        R"({"id": "x", "text": "a .", "gold": [["a", "Person"], ["a", "Person"], ["a", "Location"]]})"
        "\n");
    auto loaded = load_dataset(path, toy_labels());
    REQUIRE(loaded[0].gold.has_value());
    CHECK(loaded[0].gold->size() == 2);
}

TEST_CASE("subsample basics") {
    std::vector<Sample> samples;
    for (int i = 0; i < 50; ++i) {
        samples.push_back({"id" + std::to_string(i), "text " + std::to_string(i) + " .",
                           std::nullopt});
    }

    SUBCASE("n >= size copies everything") {
        CHECK(subsample(samples, 50, 1).size() == 50);
        CHECK(subsample(samples, 99, 1).size() == 50);
    }
    SUBCASE("returns exactly n, deterministic, order preserving") {
        auto a = subsample(samples, 20, 7);
        auto b = subsample(samples, 20, 7);
        REQUIRE(a.size() == 20);
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].id == b[i].id);
        }
        // Original relative order preserved: ids carry their index.
        int last = -1;
        for (const auto& s : a) {
            int idx = std::stoi(s.id.substr(2));
            CHECK(idx > last);
            last = idx;
        }
        // No duplicates.
        std::set<std::string> ids;
        for (const auto& s : a) ids.insert(s.id);
        CHECK(ids.size() == a.size());
    }
    SUBCASE("different seeds draw different subsets") {
        auto a = subsample(samples, 20, 1);
        auto b = subsample(samples, 20, 2);
        bool differs = false;
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i].id != b[i].id) differs = true;
        }
        CHECK(differs);
    }
}
