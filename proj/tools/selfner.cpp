#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "selfner/annotator.hpp"
#include "selfner/corpus.hpp"
#include "selfner/errors.hpp"
#include "selfner/evaluation.hpp"
#include "selfner/pipeline.hpp"

namespace fs = std::filesystem;
using namespace selfner;

namespace {

std::vector<double> parse_value_list(const std::string& raw) {
    std::vector<double> values;
    std::size_t start = 0;
    while (start <= raw.size()) {
        std::size_t comma = raw.find(',', start);
        std::string piece =
            comma == std::string::npos ? raw.substr(start) : raw.substr(start, comma - start);
        std::size_t b = piece.find_first_not_of(" \t");
        if (b != std::string::npos) {
            piece = piece.substr(b, piece.find_last_not_of(" \t") - b + 1);
            try {
                std::size_t pos = 0;
                values.push_back(std::stod(piece, &pos));
                if (pos != piece.size()) throw std::invalid_argument("trailing junk");
            } catch (const std::exception&) {
                throw UsageError("--values: '" + piece + "' is not a number");
            }
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (values.empty()) {
        throw UsageError("--values: expected a comma-separated list of numbers");
    }
    return values;
}

MeanStd mean_std_of(const nlohmann::json& j, const char* metric, const fs::path& path) {
    if (!j.contains(metric) || !j[metric].is_object() || !j[metric].contains("mean") ||
        !j[metric].contains("stddev")) {
        throw DataError(path.string() + " is not an aggregate report (missing " + metric + ")");
    }
    return MeanStd{j[metric]["mean"].get<double>(), j[metric]["stddev"].get<double>()};
}

void print_aggregate(const AggregateReport& agg) {
    std::cout << "precision  " << format_mean_std(agg.precision) << "\n"
              << "recall     " << format_mean_std(agg.recall) << "\n"
              << "f1         " << format_mean_std(agg.f1) << "\n";
}

int run_cli(int argc, char** argv) {
    RunConfig cfg;
    apply_env_defaults(cfg);

    // The config file is applied before CLI11 assigns anything, so explicit
    // flags always override file values, which override the environment.
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config" && i + 1 < argc) {
            apply_config_file(cfg, argv[i + 1]);
        } else if (a.rfind("--config=", 0) == 0) {
            apply_config_file(cfg, a.substr(9));
        }
    }

    CLI::App app{"Self-improving zero-shot named entity recognition: self-annotate an unlabeled "
                 "corpus with an LLM, keep the reliable annotations, and reuse them as "
                 "in-context demonstrations."};
    app.require_subcommand(1);

    std::string config_dummy;
    app.add_option("--config", config_dummy, "key=value config file (flags still win)");

    auto kv = [&](const char* flag, const char* key, const char* desc) {
        app.add_option_function<std::string>(
            flag, [&cfg, key = std::string(key)](const std::string& v) { apply_config_kv(cfg, key, v); },
            desc);
    };
    kv("--labels", "labels", "label set JSON file: {\"name\": ..., \"types\": [...]}");
    kv("--backend", "backend", "scripted | openai (default scripted)");
    kv("--endpoint", "endpoint", "chat-completions base URL, e.g. https://api.openai.com/v1");
    kv("--api-key", "api-key", "bearer token for the endpoint");
    kv("--model", "model", "chat model name (default gpt-3.5-turbo)");
    kv("--embed-model", "embed-model", "embeddings model name (default text-embedding-ada-002)");
    kv("--select", "select",
       "selection strategy: none | entity-threshold | sample-threshold | two-stage-majority | "
       "oracle");
    kv("--channel", "channel", "score channel for thresholds: sc | sv (default sc)");
    kv("--retrieval", "retrieval",
       "demo retrieval: random | nearest | diverse-random | diverse-sc-ranking | no-demos");
    kv("--embedder", "embedder", "local | remote (default local)");
    kv("--seeds", "seeds", "comma-separated run seeds (default 1,2)");
    kv("--out-dir", "out-dir", "output directory (default out)");
    kv("--cache-dir", "cache-dir", "response cache directory (default <out-dir>/cache)");
    kv("--template", "template", "prompt template override file");

    app.add_option("--p-hit", cfg.backend.noise.p_hit,
                   "scripted: probability a gold entity is answered");
    app.add_option("--p-confuse", cfg.backend.noise.p_confuse,
                   "scripted: probability an answered entity gets a wrong type");
    app.add_option("--p-spurious", cfg.backend.noise.p_spurious,
                   "scripted: probability an answer gains a made-up entity");
    app.add_option("--noise-seed", cfg.backend.noise.seed, "scripted: noise stream seed");
    app.add_option("--n-samples", cfg.sc.n_samples,
                   "answers sampled per sentence during annotation (default 5)");
    app.add_option("--temperature", cfg.sc.temperature, "sampling temperature (default 0.7)");
    app.add_option("--th-entity", cfg.selection.th_entity,
                   "entity-threshold: minimum votes to keep a prediction (default 4)");
    app.add_option("--th-sample", cfg.selection.th_sample,
                   "sample-threshold: minimum sample score to keep a sample (default 4)");
    app.add_flag("--drop-empty,!--no-drop-empty", cfg.selection.drop_empty,
                 "drop samples left without predictions after selection");
    app.add_flag("--rescore,!--no-rescore", cfg.selection.rescore,
                 "recompute sample scores from the kept predictions");
    app.add_option("--k", cfg.retrieval.k, "demonstrations per query; 0 disables demos (default 16)");
    app.add_option("--big-k", cfg.retrieval.big_k,
                   "nearest-neighbour shortlist size for the diverse strategies (default 50)");
    app.add_option("--retrieval-seed", cfg.retrieval.seed,
                   "draw seed for the random strategies (stages reseed it per run seed)");
    app.add_flag("--nearest-first,!--no-nearest-first", cfg.retrieval.nearest_first,
                 "place the most similar demonstration first instead of last");
    app.add_option("--test-subsample", cfg.test_subsample,
                   "test sentences per seed, 0 = all (default 300)");
    app.add_option("--unlabeled-subsample", cfg.unlabeled_subsample,
                   "unlabeled sentences to annotate, 0 = all (default 500)");
    app.add_option("--iterations", cfg.iterations, "self-improving iterations (default 1)");
    app.add_option("--parallelism", cfg.parallelism, "worker threads (default 4)");
    app.add_flag("--infer-sc,!--no-infer-sc", cfg.infer_sc,
                 "use sampling plus two-stage majority voting at test time");
    app.add_flag("--dump-prompts,!--no-dump-prompts", cfg.dump_prompts,
                 "write every emitted prompt next to the stage output");
    app.add_flag("--sv,!--no-sv", cfg.with_sv,
                 "ask the model to score its own annotations (adds sv_scores)");
    app.add_option("--max-answer-len", cfg.max_answer_len,
                   "completion token cap, 0 = none (default 512)");

    // ingest
    std::string ingest_in, ingest_as;
    auto* ingest = app.add_subcommand("ingest", "validate a dataset and write its canonical form");
    ingest->fallthrough();
    ingest->add_option("input", ingest_in, "JSON Lines dataset")->required();
    ingest->add_option("--as", ingest_as, "output name under --out-dir (default: input filename)");

    // annotate
    std::string annotate_in, annotate_as = "annotated.jsonl";
    std::string annotate_pool, annotate_index;
    auto* annotate = app.add_subcommand(
        "annotate", "self-annotate unlabeled sentences with self-consistency scores");
    annotate->fallthrough();
    annotate->add_option("unlabeled", annotate_in, "unlabeled JSON Lines dataset")->required();
    annotate->add_option("--pool", annotate_pool,
                         "selected pool for in-context demonstrations (iterative runs)");
    annotate->add_option("--pool-index", annotate_index, "embedding index of --pool");
    annotate->add_option("--as", annotate_as, "output name (default annotated.jsonl)");

    // select
    std::string select_in, select_as = "selected.jsonl", select_gold;
    auto* select = app.add_subcommand("select", "keep the reliable annotations");
    select->fallthrough();
    select->add_option("annotated", select_in, "annotated JSON Lines file")->required();
    select->add_option("--gold", select_gold, "gold dataset for oracle selection");
    select->add_option("--as", select_as, "output name (default selected.jsonl)");

    // index
    std::string index_in, index_as = "index.jsonl";
    auto* index = app.add_subcommand("index", "embed a pool for demonstration retrieval");
    index->fallthrough();
    index->add_option("pool", index_in, "annotated or selected JSON Lines file")->required();
    index->add_option("--as", index_as, "output name (default index.jsonl)");

    // infer
    std::string infer_test, infer_pool, infer_index, infer_prefix;
    auto* infer = app.add_subcommand(
        "infer", "predict entities for a test set, optionally with retrieved demonstrations");
    infer->fallthrough();
    infer->add_option("test", infer_test, "test JSON Lines dataset")->required();
    infer->add_option("--pool", infer_pool, "selected demonstration pool");
    infer->add_option("--pool-index", infer_index, "embedding index of --pool");
    infer->add_option("--prefix", infer_prefix, "output name prefix, e.g. ablation1/");

    // eval
    std::string eval_pred, eval_gold, eval_as = "report.json";
    auto* eval = app.add_subcommand("eval", "score a prediction file against gold annotations");
    eval->fallthrough();
    eval->add_option("predictions", eval_pred, "prediction JSON Lines file")->required();
    eval->add_option("gold", eval_gold, "gold JSON Lines dataset")->required();
    eval->add_option("--as", eval_as, "report name (default report.json)");

    // loop
    std::string loop_unlabeled, loop_test;
    auto* loop = app.add_subcommand(
        "loop", "run the full self-improving cycle: annotate, select, index, infer, evaluate");
    loop->fallthrough();
    loop->add_option("unlabeled", loop_unlabeled, "unlabeled JSON Lines dataset")->required();
    loop->add_option("test", loop_test, "fully annotated test JSON Lines dataset")->required();

    // sweep
    std::string sweep_axis, sweep_values, sweep_unlabeled, sweep_test;
    auto* sweep = app.add_subcommand("sweep", "rerun selection and inference over an axis");
    sweep->fallthrough();
    sweep->add_option("--axis", sweep_axis, "th-entity | th-sample | k | pool-size")->required();
    sweep->add_option("--values", sweep_values, "comma-separated axis values")->required();
    sweep->add_option("unlabeled", sweep_unlabeled, "unlabeled JSON Lines dataset")->required();
    sweep->add_option("test", sweep_test, "fully annotated test JSON Lines dataset")->required();

    // density
    std::string density_pool, density_gold, density_as = "density.json";
    int density_bins = 10;
    auto* density = app.add_subcommand(
        "density", "vote histograms of true versus false annotations in a pool");
    density->fallthrough();
    density->add_option("pool", density_pool, "annotated JSON Lines file")->required();
    density->add_option("--gold", density_gold, "gold dataset (default: gold embedded in the pool)");
    density->add_option("--bins", density_bins, "histogram bins (default 10)");
    density->add_option("--as", density_as, "output name (default density.json)");

    // report
    std::vector<std::string> report_files;
    std::string report_names, report_as;
    auto* report = app.add_subcommand("report", "tabulate aggregate reports side by side");
    report->fallthrough();
    report->add_option("reports", report_files, "aggregate report.json files")
        ->required()
        ->expected(-1);
    report->add_option("--names", report_names, "comma-separated row names (default: the paths)");
    report->add_option("--as", report_as, "also save the table under --out-dir as <name>.csv/.txt");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    if (*ingest) {
        if (cfg.labels_path.empty()) {
            throw UsageError("a label set file is required (--labels)");
        }
        LabelSet labels = LabelSet::load(cfg.labels_path);
        auto ds = load_dataset(resolve_input(cfg, ingest_in), labels);
        const std::string name = ingest_as.empty() ? fs::path(ingest_in).filename().string()
                                                   : ingest_as;
        const fs::path out = cfg.out_dir / name;
        save_dataset(out, ds);
        std::cout << "ingested " << ds.size() << " samples -> " << out.string() << "\n";
    } else if (*annotate) {
        std::optional<fs::path> pool, pool_index;
        if (!annotate_pool.empty()) pool = annotate_pool;
        if (!annotate_index.empty()) pool_index = annotate_index;
        auto outcome = run_annotate(cfg, annotate_in, annotate_as, pool, pool_index);
        std::cout << "annotated " << outcome.n_samples << " samples -> "
                  << outcome.annotated_path.string() << " (backend calls: "
                  << outcome.backend_calls << ")\n";
    } else if (*select) {
        std::optional<fs::path> gold;
        if (!select_gold.empty()) gold = select_gold;
        auto out = run_select(cfg, select_in, select_as, gold);
        const auto kept = load_annotated(out).samples.size();
        std::cout << "kept " << kept << " samples -> " << out.string() << "\n";
    } else if (*index) {
        auto out = run_index(cfg, index_in, index_as);
        std::cout << "indexed -> " << out.string() << "\n";
    } else if (*infer) {
        if (infer_pool.empty() != infer_index.empty()) {
            throw UsageError("--pool and --pool-index must be given together");
        }
        std::optional<fs::path> pool, pool_index;
        if (!infer_pool.empty()) {
            pool = infer_pool;
            pool_index = infer_index;
        }
        auto outcome = run_infer(cfg, pool, pool_index, infer_test, infer_prefix);
        for (const auto& p : outcome.prediction_files) {
            std::cout << "predictions -> " << p.string() << "\n";
        }
        if (outcome.aggregate) {
            print_aggregate(*outcome.aggregate);
            std::cout << "report -> " << outcome.aggregate_path->string() << "\n";
        }
    } else if (*eval) {
        auto outcome = run_eval(cfg, eval_pred, eval_gold, eval_as);
        std::cout << "precision  " << format_percent(outcome.report.precision) << "\n"
                  << "recall     " << format_percent(outcome.report.recall) << "\n"
                  << "f1         " << format_percent(outcome.report.f1) << "\n"
                  << "report -> " << outcome.report_json.string() << "\n";
    } else if (*loop) {
        auto outcome = run_loop(cfg, loop_unlabeled, loop_test);
        Table table;
        table.header = {"iteration", "pool", "precision", "recall", "f1"};
        for (const auto& it : outcome.iterations) {
            table.rows.push_back({std::to_string(it.iteration), std::to_string(it.pool_size),
                                  format_mean_std(it.report.precision),
                                  format_mean_std(it.report.recall),
                                  format_mean_std(it.report.f1)});
        }
        std::cout << table.render_text() << "summary -> " << outcome.summary_txt.string() << "\n";
    } else if (*sweep) {
        auto axis = parse_sweep_axis(sweep_axis);
        auto values = parse_value_list(sweep_values);
        auto outcome = run_sweep(cfg, axis, values, sweep_unlabeled, sweep_test);
        std::cout << outcome.table.render_text() << "table -> " << outcome.table_txt.string()
                  << "\n";
    } else if (*density) {
        auto outcome = run_density(cfg, density_pool, density_gold, density_bins, density_as);
        char buf[128];
        std::snprintf(buf, sizeof(buf),
                      "mean vote: %.3f over %ld true entities, %.3f over %ld false entities\n",
                      outcome.report.mean_true, outcome.report.total_true,
                      outcome.report.mean_false, outcome.report.total_false);
        std::cout << buf << "density -> " << outcome.json_path.string() << "\n";
    } else if (*report) {
        std::vector<std::string> names;
        if (!report_names.empty()) {
            std::size_t start = 0;
            while (start <= report_names.size()) {
                std::size_t comma = report_names.find(',', start);
                names.push_back(comma == std::string::npos
                                    ? report_names.substr(start)
                                    : report_names.substr(start, comma - start));
                if (comma == std::string::npos) break;
                start = comma + 1;
            }
            if (names.size() != report_files.size()) {
                throw UsageError("--names must list exactly one name per report file");
            }
        }
        std::vector<ComparisonRow> rows;
        for (std::size_t i = 0; i < report_files.size(); ++i) {
            const fs::path path = resolve_input(cfg, report_files[i]);
            std::ifstream in(path);
            if (!in) {
                throw DataError("cannot open report file: " + path.string());
            }
            nlohmann::json j;
            try {
                in >> j;
            } catch (const nlohmann::json::exception& e) {
                throw DataError(path.string() + " is not valid JSON: " + e.what());
            }
            ComparisonRow row;
            row.name = names.empty() ? report_files[i] : names[i];
            row.precision = mean_std_of(j, "precision", path);
            row.recall = mean_std_of(j, "recall", path);
            row.f1 = mean_std_of(j, "f1", path);
            rows.push_back(std::move(row));
        }
        Table table = comparison_table(rows);
        std::cout << table.render_text();
        if (!report_as.empty()) {
            fs::path csv = cfg.out_dir / (report_as + ".csv");
            fs::create_directories(csv.parent_path());
            std::ofstream csv_out(csv, std::ios::binary | std::ios::trunc);
            csv_out << table.render_csv();
            fs::path txt = cfg.out_dir / (report_as + ".txt");
            std::ofstream txt_out(txt, std::ios::binary | std::ios::trunc);
            txt_out << table.render_text();
            std::cout << "table -> " << txt.string() << "\n";
        }
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const BackendError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBackend;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
}
