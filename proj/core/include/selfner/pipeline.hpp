#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "selfner/annotator.hpp"
#include "selfner/corpus.hpp"
#include "selfner/embedding.hpp"
#include "selfner/evaluation.hpp"
#include "selfner/gateway.hpp"
#include "selfner/retrieval.hpp"
#include "selfner/selection.hpp"

namespace selfner {

enum class BackendKind { scripted, openai };

struct BackendSettings {
    BackendKind kind = BackendKind::scripted;
    std::string endpoint;    // SELFNER_ENDPOINT when empty
    std::string api_key;     // SELFNER_API_KEY when empty
    std::string model;       // SELFNER_MODEL, then gpt-3.5-turbo
    std::string embed_model; // SELFNER_EMBED_MODEL, then text-embedding-ada-002
    NoiseProfile noise;
};

struct RunConfig {
    std::filesystem::path labels_path;
    BackendSettings backend;
    SCConfig sc;
    SelectionPolicy selection;
    RetrievalPolicy retrieval;
    std::string embedder = "local"; // local | remote
    std::vector<std::uint64_t> seeds{1, 2};
    std::size_t test_subsample = 300;
    std::size_t unlabeled_subsample = 500;
    int iterations = 1;
    std::filesystem::path out_dir = "out";
    std::filesystem::path cache_dir; // defaults to <out>/cache
    int parallelism = 4;
    bool infer_sc = false;      // SC + two-stage voting at test time
    bool dump_prompts = false;  // write emitted prompts next to the output
    bool with_sv = false;       // attach self-verification scores when annotating
    std::optional<std::filesystem::path> template_path;
    int max_answer_len = 512;

    void validate() const;
    std::filesystem::path effective_cache_dir() const;
};

// Environment fallbacks for endpoint/key/model; explicit values win.
void apply_env_defaults(RunConfig& cfg);

// Flat key=value file mirroring the CLI flags; '#' starts a comment.
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);
// One key=value pair; throws UsageError for unknown keys or bad values.
void apply_config_kv(RunConfig& cfg, const std::string& key, const std::string& value);

// Everything resolved once per run: labels, template, cache, backend.
class PipelineContext {
public:
    PipelineContext(const RunConfig& cfg, const std::vector<Sample>& scripted_corpus);

    const RunConfig& cfg() const { return cfg_; }
    const LabelSet& labels() const { return labels_; }
    const PromptTemplate& tpl() const { return tpl_; }

    // Built on first use so offline stages never demand backend settings.
    Gateway& gateway();
    Embedder& embedder();

    // Digest over the semantic experiment config (paths and machine-local
    // settings excluded), embedded in every output file.
    const std::string& config_digest() const { return digest_; }
    nlohmann::json base_meta() const;

    // Output-relative path resolution.
    std::filesystem::path out_path(const std::filesystem::path& p) const;

private:
    RunConfig cfg_;
    LabelSet labels_;
    PromptTemplate tpl_;
    std::vector<Sample> scripted_corpus_;
    std::shared_ptr<Backend> backend_;
    std::unique_ptr<Gateway> gateway_;
    std::unique_ptr<ResponseCache> embed_cache_;
    std::unique_ptr<Embedder> embedder_;
    std::string digest_;
};

// Input paths resolve as given first, then relative to cfg.out_dir.
std::filesystem::path resolve_input(const RunConfig& cfg, const std::filesystem::path& p);

struct AnnotateOutcome {
    std::filesystem::path annotated_path;
    std::size_t n_samples = 0;
    std::size_t backend_calls = 0;
};

// Step 1 over a whole unlabeled file (subsampled per config); a prior pool
// switches annotation prompts to ICL with retrieved demonstrations.
AnnotateOutcome run_annotate(const RunConfig& cfg, const std::filesystem::path& unlabeled_path,
                             const std::string& out_name = "annotated.jsonl",
                             const std::optional<std::filesystem::path>& pool_path = std::nullopt,
                             const std::optional<std::filesystem::path>& index_path = std::nullopt);

// Step 2 as a file-to-file stage.
std::filesystem::path run_select(const RunConfig& cfg, const std::filesystem::path& annotated_path,
                                 const std::string& out_name = "selected.jsonl",
                                 const std::optional<std::filesystem::path>& gold_path = std::nullopt);

std::filesystem::path run_index(const RunConfig& cfg, const std::filesystem::path& pool_path,
                                const std::string& out_name = "index.jsonl");

struct InferOutcome {
    std::vector<std::filesystem::path> prediction_files; // one per seed
    std::vector<std::filesystem::path> report_files;     // per seed, when gold known
    std::optional<std::filesystem::path> aggregate_path;
    std::optional<AggregateReport> aggregate;
};

// Step 3 + evaluation per seed. Pool/index may be absent for no-demos runs.
InferOutcome run_infer(const RunConfig& cfg, const std::optional<std::filesystem::path>& pool_path,
                       const std::optional<std::filesystem::path>& index_path,
                       const std::filesystem::path& test_path,
                       const std::string& out_prefix = "");

struct EvalOutcome {
    ScoreReport report;
    std::filesystem::path report_json;
    std::filesystem::path report_csv;
};

EvalOutcome run_eval(const RunConfig& cfg, const std::filesystem::path& predictions_path,
                     const std::filesystem::path& gold_path,
                     const std::string& out_name = "report.json");

struct LoopIteration {
    int iteration = 0;
    std::size_t pool_size = 0; // selected pool size (0 for the baseline row)
    AggregateReport report;
};

struct LoopOutcome {
    std::vector<LoopIteration> iterations; // index 0 is the no-demos baseline
    std::filesystem::path summary_csv;
    std::filesystem::path summary_txt;
};

// Iterative self-improving: iteration 0 records the no-demos baseline;
// iteration t >= 1 annotates with the pool selected at t-1 (zero-shot at 1),
// selects, infers and evaluates under iter<t>/ subdirectories.
LoopOutcome run_loop(const RunConfig& cfg, const std::filesystem::path& unlabeled_path,
                     const std::filesystem::path& test_path);

enum class SweepAxis { th_entity, th_sample, k, pool_size };

SweepAxis parse_sweep_axis(const std::string& name);
std::string to_string(SweepAxis axis);

struct SweepOutcome {
    Table table;
    std::filesystem::path table_csv;
    std::filesystem::path table_txt;
};

// One select+infer+eval per axis value, annotation reused; per-value
// failures are recorded in the table and the sweep continues.
SweepOutcome run_sweep(const RunConfig& cfg, SweepAxis axis, const std::vector<double>& values,
                       const std::filesystem::path& unlabeled_path,
                       const std::filesystem::path& test_path);

struct DensityOutcome {
    DensityReport report;
    std::filesystem::path json_path;
    std::filesystem::path csv_path;
};

DensityOutcome run_density(const RunConfig& cfg, const std::filesystem::path& pool_path,
                           const std::filesystem::path& gold_path, int bins,
                           const std::string& out_name = "density.json");

} // namespace selfner
