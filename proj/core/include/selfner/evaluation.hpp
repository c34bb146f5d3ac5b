#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "selfner/corpus.hpp"

namespace selfner {

struct TypeCounts {
    long tp = 0;
    long fp = 0;
    long fn = 0;
};

struct ScoreReport {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    long tp = 0;
    long fp = 0;
    long fn = 0;
    std::map<std::string, TypeCounts> per_type;
};

double precision_of(long tp, long fp);
double recall_of(long tp, long fn);
double f1_of(double precision, double recall);

// One sample's entity set, keyed by sample id.
struct LabeledSet {
    std::string id;
    std::vector<EntityRef> entities;
};

// Exact-match span+type micro-F1 with set semantics per sample. Prediction
// and gold sets must cover the same ids; mismatches raise DataError listing
// the missing ids.
ScoreReport micro_f1(const std::vector<LabeledSet>& predictions,
                     const std::vector<LabeledSet>& golds);

// Prediction file row: {"id": ..., "text": ..., "predictions": [[span, type], ...]}.
struct PredictionRecord {
    std::string id;
    std::string text;
    std::vector<EntityRef> predictions;
};

struct PredictionFile {
    nlohmann::json meta; // null when the file had no header line
    std::vector<PredictionRecord> records;
};

void save_predictions(const std::filesystem::path& path,
                      const std::vector<PredictionRecord>& records, const nlohmann::json& meta);
PredictionFile load_predictions(const std::filesystem::path& path);

// Report files: a JSON object with overall and per-type metrics plus run
// metadata, and a CSV mirror of the per-type table.
void save_report_json(const std::filesystem::path& path, const ScoreReport& report,
                      const nlohmann::json& meta);
void save_report_csv(const std::filesystem::path& path, const ScoreReport& report);

struct MeanStd {
    double mean = 0.0;
    double stddev = 0.0; // population (N divisor)
};

struct AggregateReport {
    MeanStd precision;
    MeanStd recall;
    MeanStd f1;
    std::size_t n_runs = 0;
};

AggregateReport multi_seed_report(const std::vector<ScoreReport>& reports);

// "68.97±0.22": metric scaled to percent, two decimals.
std::string format_mean_std(const MeanStd& value);
std::string format_percent(double value);

// True-vs-false histogram of entity-level SC votes over [0.5, n + 0.5].
struct DensityBin {
    double lo = 0.0;
    double hi = 0.0;
    long count_true = 0;
    long count_false = 0;
    double density_true = 0.0;
    double density_false = 0.0;
};

struct DensityReport {
    std::vector<DensityBin> bins;
    long total_true = 0;
    long total_false = 0;
    double mean_true = 0.0;  // mean vote of true predictions
    double mean_false = 0.0; // mean vote of false predictions
};

DensityReport sc_density(const std::vector<AnnotatedSample>& pool,
                         const std::map<std::string, std::vector<EntityRef>>& gold_by_id,
                         int bins);

// Small deterministic table with aligned-text and CSV renderings.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::string render_text() const;
    std::string render_csv() const;
};

// Named runs, one row each, in input order.
struct ComparisonRow {
    std::string name;
    MeanStd precision;
    MeanStd recall;
    MeanStd f1;
    std::string note; // free-form, e.g. an error marker in sweep output
};

Table comparison_table(const std::vector<ComparisonRow>& rows);

} // namespace selfner
