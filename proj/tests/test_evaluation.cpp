#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "selfner/errors.hpp"
#include "selfner/evaluation.hpp"
#include "selfner/rng.hpp"

using namespace selfner;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    auto dir = fs::temp_directory_path() / "selfner-evaluation-test";
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

} // namespace

TEST_CASE("precision, recall and f1 zero conventions") {
    CHECK(precision_of(0, 0) == 0.0);
    CHECK(recall_of(0, 0) == 0.0);
    CHECK(f1_of(0.0, 0.0) == 0.0);
    CHECK(precision_of(3, 1) == doctest::Approx(0.75));
    CHECK(recall_of(3, 3) == doctest::Approx(0.5));
    CHECK(f1_of(1.0, 0.5) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("micro f1 hand examples") {
    SUBCASE("perfect match scores 1") {
        std::vector<LabeledSet> gold = {{"s1", {{"a", "Person"}, {"b", "Location"}}},
                                        {"s2", {}}};
        auto r = micro_f1(gold, gold);
        CHECK(r.f1 == doctest::Approx(1.0));
        CHECK(r.tp == 2);
        CHECK(r.fp == 0);
        CHECK(r.fn == 0);
    }
    SUBCASE("half right scores 0.5") {
        std::vector<LabeledSet> pred = {{"s1", {{"a", "Person"}, {"c", "Person"}}}};
        std::vector<LabeledSet> gold = {{"s1", {{"a", "Person"}, {"b", "Person"}}}};
        auto r = micro_f1(pred, gold);
        CHECK(r.tp == 1);
        CHECK(r.fp == 1);
        CHECK(r.fn == 1);
        CHECK(r.precision == doctest::Approx(0.5));
        CHECK(r.recall == doctest::Approx(0.5));
        CHECK(r.f1 == doctest::Approx(0.5));
    }
    SUBCASE("no overlap scores 0") {
        std::vector<LabeledSet> pred = {{"s1", {{"x", "Person"}}}};
        std::vector<LabeledSet> gold = {{"s1", {{"y", "Person"}}}};
        auto r = micro_f1(pred, gold);
        CHECK(r.f1 == 0.0);
        CHECK(r.precision == 0.0);
        CHECK(r.recall == 0.0);
    }
    SUBCASE("span match with the wrong type is both a fp and a fn") {
        std::vector<LabeledSet> pred = {{"s1", {{"a", "Location"}}}};
        std::vector<LabeledSet> gold = {{"s1", {{"a", "Person"}}}};
        auto r = micro_f1(pred, gold);
        CHECK(r.tp == 0);
        CHECK(r.fp == 1);
        CHECK(r.fn == 1);
        // Counts are booked under the side's own type.
        CHECK(r.per_type.at("Location").fp == 1);
        CHECK(r.per_type.at("Location").fn == 0);
        CHECK(r.per_type.at("Person").fn == 1);
        CHECK(r.per_type.at("Person").fp == 0);
    }
    SUBCASE("duplicate entities collapse to set semantics") {
        std::vector<LabeledSet> pred = {{"s1", {{"a", "Person"}, {"a", "Person"}}}};
        std::vector<LabeledSet> gold = {{"s1", {{"a", "Person"}}}};
        auto r = micro_f1(pred, gold);
        CHECK(r.tp == 1);
        CHECK(r.fp == 0);
        CHECK(r.f1 == doctest::Approx(1.0));
    }
}

TEST_CASE("micro f1 id discipline") {
    std::vector<LabeledSet> pred = {{"s1", {}}, {"s1", {}}};
    std::vector<LabeledSet> gold = {{"s1", {}}};
    CHECK_THROWS_AS(micro_f1(pred, gold), DataError);
    CHECK_THROWS_AS(micro_f1(gold, pred), DataError);

    std::vector<LabeledSet> extra = {{"s1", {}}, {"s2", {}}};
    CHECK_THROWS_AS(micro_f1(extra, gold), DataError);
    CHECK_THROWS_AS(micro_f1(gold, extra), DataError);
    try {
        micro_f1(gold, extra);
        FAIL("expected a DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("s2") != std::string::npos);
    }
}

TEST_CASE("micro f1 matches the pedestrian count on random cases") {
    SplitMix64 rng(660);
    const std::vector<std::string> spans = {"a", "b", "c", "d", "e"};
    const std::vector<std::string> types = {"Person", "Location"};
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<LabeledSet> pred, gold;
        auto n = 1 + rng.bounded(6);
        for (std::uint64_t i = 0; i < n; ++i) {
            LabeledSet p{"s" + std::to_string(i), {}};
            LabeledSet g{"s" + std::to_string(i), {}};
            auto np = rng.bounded(4), ng = rng.bounded(4);
            for (std::uint64_t j = 0; j < np; ++j) {
                p.entities.push_back(EntityRef{spans[rng.bounded(spans.size())],
                                               types[rng.bounded(types.size())]});
            }
            for (std::uint64_t j = 0; j < ng; ++j) {
                g.entities.push_back(EntityRef{spans[rng.bounded(spans.size())],
                                               types[rng.bounded(types.size())]});
            }
            pred.push_back(std::move(p));
            gold.push_back(std::move(g));
        }
        auto got = micro_f1(pred, gold);
        auto want = testing::oracle_micro_counts(pred, gold);
        CHECK(got.tp == want.tp);
        CHECK(got.fp == want.fp);
        CHECK(got.fn == want.fn);
        CHECK(got.precision == doctest::Approx(precision_of(want.tp, want.fp)));
        CHECK(got.recall == doctest::Approx(recall_of(want.tp, want.fn)));
    }
}

TEST_CASE("multi-seed aggregation uses the population deviation") {
    ScoreReport a;
    a.precision = 0.6875;
    a.recall = 0.6875;
    a.f1 = 0.6875;
    ScoreReport b;
    b.precision = 0.6919;
    b.recall = 0.6919;
    b.f1 = 0.6919;
    auto agg = multi_seed_report({a, b});
    CHECK(agg.n_runs == 2);
    CHECK(agg.f1.mean == doctest::Approx(0.6897).epsilon(1e-9));
    CHECK(agg.f1.stddev == doctest::Approx(0.0022).epsilon(1e-9));
    CHECK(format_mean_std(agg.f1) == "68.97±0.22");

    auto single = multi_seed_report({a});
    CHECK(single.f1.stddev == 0.0);
    CHECK(format_mean_std(single.f1) == "68.75±0.00");

    CHECK_THROWS_AS(multi_seed_report({}), DataError);
}

TEST_CASE("percent formatting") {
    CHECK(format_percent(0.5) == "50.00");
    CHECK(format_percent(1.0) == "100.00");
    CHECK(format_percent(0.68969) == "68.97");
    CHECK(format_percent(0.0) == "0.00");
    CHECK(format_mean_std({1.0, 0.0}) == "100.00±0.00");
}

TEST_CASE("vote density splits true and false predictions") {
    std::vector<AnnotatedSample> pool(3);
    pool[0].sample = {"s1", "t1 .", std::nullopt};
    pool[0].predictions = {{"A", "Person", 5}, {"B", "Organization", 3}, {"C", "Person", 1}};
    pool[0].n_samples = 5;
    pool[1].sample = {"s2", "t2 .", std::nullopt};
    pool[1].predictions = {{"D", "Person", 4}};
    pool[1].n_samples = 5;
    pool[2].sample = {"s3", "t3 .", std::nullopt}; // no gold: skipped entirely
    pool[2].predictions = {{"Z", "Person", 2}};
    pool[2].n_samples = 5;

    std::map<std::string, std::vector<EntityRef>> gold{
        {"s1", {{"A", "Person"}, {"B", "Location"}}},
        {"s2", {{"D", "Person"}}},
    };

    auto report = sc_density(pool, gold, 5);
    REQUIRE(report.bins.size() == 5);
    CHECK(report.bins.front().lo == doctest::Approx(0.5));
    CHECK(report.bins.back().hi == doctest::Approx(5.5));

    // True: A (5 votes), D (4). False: B (wrong type, 3), C (1).
    CHECK(report.total_true == 2);
    CHECK(report.total_false == 2);
    CHECK(report.mean_true == doctest::Approx(4.5));
    CHECK(report.mean_false == doctest::Approx(2.0));
    CHECK(report.bins[4].count_true == 1);  // vote 5
    CHECK(report.bins[3].count_true == 1);  // vote 4
    CHECK(report.bins[2].count_false == 1); // vote 3
    CHECK(report.bins[0].count_false == 1); // vote 1
    CHECK(report.bins[1].count_true + report.bins[1].count_false == 0);

    // Each channel's histogram integrates to one.
    double mass_true = 0.0, mass_false = 0.0;
    for (const auto& b : report.bins) {
        mass_true += b.density_true * (b.hi - b.lo);
        mass_false += b.density_false * (b.hi - b.lo);
    }
    CHECK(mass_true == doctest::Approx(1.0));
    CHECK(mass_false == doctest::Approx(1.0));
}

TEST_CASE("vote density input validation") {
    std::vector<AnnotatedSample> pool(1);
    pool[0].sample = {"s1", "t .", std::nullopt};
    pool[0].n_samples = 5;
    std::map<std::string, std::vector<EntityRef>> gold{{"s1", {}}};

    CHECK_THROWS_AS(sc_density(pool, gold, 0), UsageError);
    CHECK_THROWS_AS(sc_density({}, gold, 5), DataError);
    std::map<std::string, std::vector<EntityRef>> empty_gold;
    CHECK_THROWS_AS(sc_density(pool, empty_gold, 5), DataError);
}

TEST_CASE("text tables align on display width, not byte count") {
    Table t;
    t.header = {"run", "f1"};
    t.rows = {{"base", "68.97±0.22"}, {"x", "1.00±0.00"}};
    CHECK(t.render_text() ==
          "run   f1\n"
          "----  ----------\n"
          "base  68.97±0.22\n"
          "x     1.00±0.00\n");
    CHECK(t.render_csv() ==
          "run,f1\n"
          "base,68.97±0.22\n"
          "x,1.00±0.00\n");
}

TEST_CASE("csv fields with separators are quoted and escaped") {
    Table t;
    t.header = {"name", "note"};
    t.rows = {{"a,b", "say \"hi\""}, {"plain", "fine"}};
    CHECK(t.render_csv() ==
          "name,note\n"
          "\"a,b\",\"say \"\"hi\"\"\"\n"
          "plain,fine\n");
}

TEST_CASE("comparison tables carry one row per run") {
    std::vector<ComparisonRow> rows = {
        {"baseline", {0.68, 0.01}, {0.70, 0.02}, {0.6897, 0.0022}, ""},
        {"broken", {}, {}, {}, "entity threshold must lie in [0, 5]"},
    };
    auto table = comparison_table(rows);
    CHECK(table.header ==
          std::vector<std::string>{"run", "precision", "recall", "f1", "note"});
    REQUIRE(table.rows.size() == 2);
    CHECK(table.rows[0][3] == "68.97±0.22");
    CHECK(table.rows[1][4] == "entity threshold must lie in [0, 5]");
}

TEST_CASE("prediction files round-trip with an optional header") {
    auto path = temp_dir() / "predictions.jsonl";
    std::vector<PredictionRecord> records = {
        {"s1", "first text .", {{"a", "Person"}, {"b", "Location"}}},
        {"s2", "second text .", {}},
    };
    save_predictions(path, records, nlohmann::json{{"stage", "infer"}, {"seed", 7}});
    auto loaded = load_predictions(path);
    CHECK(loaded.meta["seed"] == 7);
    REQUIRE(loaded.records.size() == 2);
    CHECK(loaded.records[0].id == "s1");
    CHECK(loaded.records[0].text == "first text .");
    REQUIRE(loaded.records[0].predictions.size() == 2);
    CHECK(loaded.records[0].predictions[1] == EntityRef{"b", "Location"});
    CHECK(loaded.records[1].predictions.empty());

    save_predictions(path, records, nlohmann::json());
    CHECK(load_predictions(path).meta.is_null());

    save_predictions(path, {records[0], records[0]}, nlohmann::json());
    CHECK_THROWS_AS(load_predictions(path), DataError);
}

TEST_CASE("report files") {
    std::vector<LabeledSet> pred = {{"s1", {{"a", "Person"}, {"c", "Person"}}}};
    std::vector<LabeledSet> gold = {{"s1", {{"a", "Person"}, {"b", "Person"}}}};
    auto report = micro_f1(pred, gold);

    auto json_path = temp_dir() / "report.json";
    save_report_json(json_path, report, nlohmann::json{{"stage", "report"}});
    auto text = slurp(json_path);
    auto parsed = nlohmann::json::parse(text);
    CHECK(parsed["meta"]["stage"] == "report");
    CHECK(parsed["f1"] == doctest::Approx(0.5));
    CHECK(parsed["tp"] == 1);
    CHECK(parsed["per_type"]["Person"]["fp"] == 1);
    CHECK(parsed["per_type"]["Person"]["f1"] == doctest::Approx(0.5));
    // Stable top-level ordering keeps reruns byte-comparable.
    CHECK(text.find("\"precision\"") < text.find("\"recall\""));
    CHECK(text.find("\"recall\"") < text.find("\"f1\""));
    CHECK(text.find("\"f1\"") < text.find("\"per_type\""));
    CHECK(text.back() == '\n');

    auto csv_path = temp_dir() / "report.csv";
    save_report_csv(csv_path, report);
    CHECK(slurp(csv_path) ==
          "type,tp,fp,fn,precision,recall,f1\n"
          "Person,1,1,1,0.5000,0.5000,0.5000\n"
          "ALL,1,1,1,0.5000,0.5000,0.5000\n");
}
