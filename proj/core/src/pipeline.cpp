#include "selfner/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <thread>

#include "selfner/digest.hpp"
#include "selfner/errors.hpp"

namespace selfner {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

void RunConfig::validate() const {
    if (labels_path.empty()) {
        throw UsageError("a label set file is required (--labels)");
    }
    if (seeds.empty()) {
        throw UsageError("at least one run seed is required");
    }
    std::set<std::uint64_t> unique_seeds(seeds.begin(), seeds.end());
    if (unique_seeds.size() != seeds.size()) {
        throw UsageError("run seeds must be distinct");
    }
    if (iterations < 1) {
        throw UsageError("iterations must be >= 1");
    }
    if (parallelism < 1) {
        throw UsageError("parallelism must be >= 1");
    }
    if (sc.n_samples < 1) {
        throw UsageError("n-samples must be >= 1");
    }
    if (!(sc.temperature >= 0.0 && sc.temperature <= 2.0)) {
        throw UsageError("temperature must lie in [0, 2]");
    }
    if (max_answer_len < 0) {
        throw UsageError("max-answer-len must be >= 0 (0 removes the cap)");
    }
    if (embedder != "local" && embedder != "remote") {
        throw UsageError("embedder must be 'local' or 'remote'");
    }
    backend.noise.validate();
    selection.validate(sc.n_samples);
    retrieval.validate();
}

fs::path RunConfig::effective_cache_dir() const {
    return cache_dir.empty() ? out_dir / "cache" : cache_dir;
}

namespace {

void fill_from_env(std::string& field, const char* var) {
    if (!field.empty()) return;
    if (const char* v = std::getenv(var); v && *v) {
        field = v;
    }
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string snake(std::string s) {
    for (char& c : s) {
        if (c == '-') c = '_';
    }
    return s;
}

bool parse_bool(const std::string& key, const std::string& value) {
    const std::string v = snake(value);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw UsageError(key + ": expected a boolean, got '" + value + "'");
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing junk");
        return v;
    } catch (const std::exception&) {
        throw UsageError(key + ": expected a number, got '" + value + "'");
    }
}

long parse_long(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        long v = std::stol(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing junk");
        return v;
    } catch (const std::exception&) {
        throw UsageError(key + ": expected an integer, got '" + value + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        unsigned long long v = std::stoull(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing junk");
        return v;
    } catch (const std::exception&) {
        throw UsageError(key + ": expected a non-negative integer, got '" + value + "'");
    }
}

std::vector<std::uint64_t> parse_seed_list(const std::string& key, const std::string& value) {
    std::vector<std::uint64_t> seeds;
    std::size_t start = 0;
    while (start <= value.size()) {
        std::size_t comma = value.find(',', start);
        std::string piece = trim(comma == std::string::npos ? value.substr(start)
                                                            : value.substr(start, comma - start));
        if (!piece.empty()) {
            seeds.push_back(parse_u64(key, piece));
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (seeds.empty()) {
        throw UsageError(key + ": expected a comma-separated seed list, got '" + value + "'");
    }
    return seeds;
}

SelectionKind parse_selection_kind(const std::string& value) {
    const std::string v = snake(value);
    if (v == "none") return SelectionKind::none;
    if (v == "entity_threshold") return SelectionKind::entity_threshold;
    if (v == "sample_threshold") return SelectionKind::sample_threshold;
    if (v == "two_stage_majority" || v == "tsmv") return SelectionKind::two_stage_majority;
    if (v == "oracle") return SelectionKind::oracle;
    throw UsageError("unknown selection strategy '" + value +
                     "' (none, entity-threshold, sample-threshold, two-stage-majority, oracle)");
}

ScoreChannel parse_channel(const std::string& value) {
    if (value == "sc") return ScoreChannel::sc;
    if (value == "sv") return ScoreChannel::sv;
    throw UsageError("unknown score channel '" + value + "' (sc, sv)");
}

RetrievalKind parse_retrieval_kind(const std::string& value) {
    const std::string v = snake(value);
    if (v == "random") return RetrievalKind::random;
    if (v == "nearest") return RetrievalKind::nearest;
    if (v == "diverse_random") return RetrievalKind::diverse_random;
    if (v == "diverse_sc_ranking") return RetrievalKind::diverse_sc_ranking;
    if (v == "no_demos") return RetrievalKind::no_demos;
    throw UsageError("unknown retrieval strategy '" + value +
                     "' (random, nearest, diverse-random, diverse-sc-ranking, no-demos)");
}

BackendKind parse_backend_kind(const std::string& value) {
    if (value == "scripted") return BackendKind::scripted;
    if (value == "openai") return BackendKind::openai;
    throw UsageError("unknown backend '" + value + "' (scripted, openai)");
}

std::string backend_kind_name(BackendKind kind) {
    return kind == BackendKind::scripted ? "scripted" : "openai";
}

std::string utc_date() {
    std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[16];
    std::strftime(buf, sizeof(buf), "%Y-%m-%d", &tm);
    return buf;
}

void write_text_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write file: " + path.string());
    }
    out << content;
}

// Index-addressed parallel map: results land at their input position, so the
// output is identical whatever the thread count. Exceptions surface as the
// one thrown at the lowest index.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::mutex error_mutex;
    std::exception_ptr error;
    std::size_t error_index = 0;
    auto worker = [&] {
        for (;;) {
            if (stop.load(std::memory_order_relaxed)) return;
            std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error || i < error_index) {
                    error = std::current_exception();
                    error_index = i;
                }
                stop.store(true, std::memory_order_relaxed);
            }
        }
    };
    const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) {
        pool.emplace_back(worker);
    }
    for (auto& t : pool) t.join();
    if (error) {
        std::rethrow_exception(error);
    }
}

} // namespace

void apply_env_defaults(RunConfig& cfg) {
    fill_from_env(cfg.backend.endpoint, "SELFNER_ENDPOINT");
    fill_from_env(cfg.backend.api_key, "SELFNER_API_KEY");
    fill_from_env(cfg.backend.model, "SELFNER_MODEL");
    fill_from_env(cfg.backend.embed_model, "SELFNER_EMBED_MODEL");
}

void apply_config_kv(RunConfig& cfg, const std::string& raw_key, const std::string& value) {
    const std::string key = snake(trim(raw_key));
    if (key == "labels") {
        cfg.labels_path = value;
    } else if (key == "backend") {
        cfg.backend.kind = parse_backend_kind(value);
    } else if (key == "endpoint") {
        cfg.backend.endpoint = value;
    } else if (key == "api_key") {
        cfg.backend.api_key = value;
    } else if (key == "model") {
        cfg.backend.model = value;
    } else if (key == "embed_model") {
        cfg.backend.embed_model = value;
    } else if (key == "p_hit") {
        cfg.backend.noise.p_hit = parse_double(key, value);
    } else if (key == "p_confuse") {
        cfg.backend.noise.p_confuse = parse_double(key, value);
    } else if (key == "p_spurious") {
        cfg.backend.noise.p_spurious = parse_double(key, value);
    } else if (key == "noise_seed") {
        cfg.backend.noise.seed = parse_u64(key, value);
    } else if (key == "n_samples") {
        cfg.sc.n_samples = static_cast<int>(parse_long(key, value));
    } else if (key == "temperature") {
        cfg.sc.temperature = parse_double(key, value);
    } else if (key == "select") {
        cfg.selection.kind = parse_selection_kind(value);
    } else if (key == "th_entity") {
        cfg.selection.th_entity = parse_double(key, value);
    } else if (key == "th_sample") {
        cfg.selection.th_sample = parse_double(key, value);
    } else if (key == "channel") {
        cfg.selection.channel = parse_channel(value);
    } else if (key == "drop_empty") {
        cfg.selection.drop_empty = parse_bool(key, value);
    } else if (key == "rescore") {
        cfg.selection.rescore = parse_bool(key, value);
    } else if (key == "retrieval") {
        cfg.retrieval.kind = parse_retrieval_kind(value);
    } else if (key == "k") {
        cfg.retrieval.k = static_cast<int>(parse_long(key, value));
    } else if (key == "big_k") {
        cfg.retrieval.big_k = static_cast<int>(parse_long(key, value));
    } else if (key == "retrieval_seed") {
        cfg.retrieval.seed = parse_u64(key, value);
    } else if (key == "nearest_first") {
        cfg.retrieval.nearest_first = parse_bool(key, value);
    } else if (key == "embedder") {
        cfg.embedder = value;
    } else if (key == "seeds") {
        cfg.seeds = parse_seed_list(key, value);
    } else if (key == "test_subsample") {
        cfg.test_subsample = static_cast<std::size_t>(parse_u64(key, value));
    } else if (key == "unlabeled_subsample") {
        cfg.unlabeled_subsample = static_cast<std::size_t>(parse_u64(key, value));
    } else if (key == "iterations") {
        cfg.iterations = static_cast<int>(parse_long(key, value));
    } else if (key == "out_dir") {
        cfg.out_dir = value;
    } else if (key == "cache_dir") {
        cfg.cache_dir = value;
    } else if (key == "parallelism") {
        cfg.parallelism = static_cast<int>(parse_long(key, value));
    } else if (key == "infer_sc") {
        cfg.infer_sc = parse_bool(key, value);
    } else if (key == "dump_prompts") {
        cfg.dump_prompts = parse_bool(key, value);
    } else if (key == "sv") {
        cfg.with_sv = parse_bool(key, value);
    } else if (key == "template") {
        cfg.template_path = value;
    } else if (key == "max_answer_len") {
        cfg.max_answer_len = static_cast<int>(parse_long(key, value));
    } else {
        throw UsageError("unknown config key '" + raw_key + "'");
    }
}

void apply_config_file(RunConfig& cfg, const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw UsageError("cannot open config file: " + path.string());
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        std::size_t eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw UsageError(path.string() + ":" + std::to_string(line_no) +
                             ": expected key=value");
        }
        try {
            apply_config_kv(cfg, trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
        } catch (const UsageError& e) {
            throw UsageError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

namespace {

std::string semantic_digest(const RunConfig& cfg, const LabelSet& labels,
                            const PromptTemplate& tpl) {
    // Only what changes the experiment's results belongs here; paths,
    // parallelism and transport details deliberately do not.
    json j;
    j["labels"] = json{{"name", labels.name}, {"types", labels.types}};
    json backend;
    backend["kind"] = backend_kind_name(cfg.backend.kind);
    backend["model"] = cfg.backend.model;
    if (cfg.backend.kind == BackendKind::scripted) {
        backend["noise"] = json{{"p_hit", cfg.backend.noise.p_hit},
                                {"p_confuse", cfg.backend.noise.p_confuse},
                                {"p_spurious", cfg.backend.noise.p_spurious},
                                {"seed", cfg.backend.noise.seed}};
    }
    j["backend"] = std::move(backend);
    j["sc"] = json{{"n_samples", cfg.sc.n_samples}, {"temperature", cfg.sc.temperature}};
    j["selection"] = json{{"kind", to_string(cfg.selection.kind)},
                          {"th_entity", cfg.selection.th_entity},
                          {"th_sample", cfg.selection.th_sample},
                          {"channel", to_string(cfg.selection.channel)},
                          {"drop_empty", cfg.selection.drop_empty},
                          {"rescore", cfg.selection.rescore}};
    // Retrieval draw seeds derive from the run seeds at each stage, so the
    // policy's own seed field is not part of the experiment identity.
    j["retrieval"] = json{{"kind", to_string(cfg.retrieval.kind)},
                          {"k", cfg.retrieval.k},
                          {"big_k", cfg.retrieval.big_k},
                          {"nearest_first", cfg.retrieval.nearest_first}};
    j["embedder"] = cfg.embedder == "local" ? std::string(kLocalEmbedderId)
                                            : "remote:" + cfg.backend.embed_model;
    j["seeds"] = cfg.seeds;
    j["test_subsample"] = cfg.test_subsample;
    j["unlabeled_subsample"] = cfg.unlabeled_subsample;
    j["iterations"] = cfg.iterations;
    j["infer_sc"] = cfg.infer_sc;
    j["sv"] = cfg.with_sv;
    j["max_answer_len"] = cfg.max_answer_len;
    j["template"] = short_digest(tpl.scaffold);
    return short_digest(j.dump());
}

} // namespace

PipelineContext::PipelineContext(const RunConfig& cfg, const std::vector<Sample>& scripted_corpus)
    : cfg_(cfg), scripted_corpus_(scripted_corpus) {
    if (cfg_.backend.model.empty()) {
        cfg_.backend.model = "gpt-3.5-turbo";
    }
    if (cfg_.backend.embed_model.empty()) {
        cfg_.backend.embed_model = "text-embedding-ada-002";
    }
    cfg_.validate();
    labels_ = LabelSet::load(cfg_.labels_path);
    tpl_ = cfg_.template_path ? PromptTemplate::load(*cfg_.template_path)
                              : PromptTemplate::standard();
    digest_ = semantic_digest(cfg_, labels_, tpl_);
}

Gateway& PipelineContext::gateway() {
    if (!gateway_) {
        if (cfg_.backend.kind == BackendKind::scripted) {
            backend_ = std::make_shared<ScriptedBackend>(scripted_corpus_, labels_,
                                                         cfg_.backend.noise);
        } else {
            if (cfg_.backend.endpoint.empty()) {
                throw UsageError(
                    "the openai backend needs an endpoint (--endpoint or SELFNER_ENDPOINT)");
            }
            HttpBackendConfig hc;
            hc.endpoint = cfg_.backend.endpoint;
            hc.api_key = cfg_.backend.api_key;
            hc.model = cfg_.backend.model;
            backend_ = std::make_shared<HttpBackend>(hc);
        }
        gateway_ = std::make_unique<Gateway>(backend_,
                                             ResponseCache(cfg_.effective_cache_dir()));
    }
    return *gateway_;
}

Embedder& PipelineContext::embedder() {
    if (!embedder_) {
        if (cfg_.embedder == "local") {
            embedder_ = std::make_unique<LocalEmbedder>();
        } else {
            if (cfg_.backend.endpoint.empty()) {
                throw UsageError(
                    "the remote embedder needs an endpoint (--endpoint or SELFNER_ENDPOINT)");
            }
            HttpBackendConfig hc;
            hc.endpoint = cfg_.backend.endpoint;
            hc.api_key = cfg_.backend.api_key;
            hc.model = cfg_.backend.embed_model;
            embed_cache_ = std::make_unique<ResponseCache>(cfg_.effective_cache_dir());
            embedder_ = std::make_unique<RemoteEmbedder>(hc, cfg_.backend.embed_model,
                                                         embed_cache_.get());
        }
    }
    return *embedder_;
}

json PipelineContext::base_meta() const {
    json m;
    m["config"] = digest_;
    m["labels"] = labels_.name;
    m["backend"] = backend_kind_name(cfg_.backend.kind);
    m["model"] = cfg_.backend.kind == BackendKind::scripted ? "scripted" : cfg_.backend.model;
    if (cfg_.backend.kind == BackendKind::openai) {
        // Remote runs are dated for provenance; scripted output stays
        // byte-reproducible, so no clock values may reach it.
        m["date"] = utc_date();
    }
    return m;
}

fs::path PipelineContext::out_path(const fs::path& p) const {
    return p.is_absolute() ? p : cfg_.out_dir / p;
}

fs::path resolve_input(const RunConfig& cfg, const fs::path& p) {
    if (fs::exists(p)) return p;
    if (!p.is_absolute()) {
        fs::path alt = cfg.out_dir / p;
        if (fs::exists(alt)) return alt;
    }
    return p;
}

namespace {

fs::path prompts_path_for(const fs::path& output) {
    fs::path p = output;
    p.replace_extension(".prompts.txt");
    return p;
}

void dump_prompt_file(const fs::path& path, const std::vector<Sample>& samples,
                      const std::vector<std::string>& prompts) {
    std::string blob;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        blob += "=== " + samples[i].id + " ===\n";
        blob += prompts[i];
        blob += "\n\n";
    }
    write_text_file(path, blob);
}

void warn_pool_exhausted(std::size_t pool_size, int k) {
    std::cerr << "warning: demo pool holds only " << pool_size << " samples; requests for " << k
              << " demonstrations use the whole pool\n";
}

std::map<std::string, std::vector<EntityRef>> gold_map_of(const std::vector<Sample>& samples) {
    std::map<std::string, std::vector<EntityRef>> gold;
    for (const auto& s : samples) {
        if (s.gold) gold[s.id] = *s.gold;
    }
    return gold;
}

json retrieval_meta(const RetrievalPolicy& policy) {
    return json{{"kind", to_string(policy.kind)},
                {"k", policy.k},
                {"big_k", policy.big_k},
                {"nearest_first", policy.nearest_first}};
}

} // namespace

AnnotateOutcome run_annotate(const RunConfig& cfg, const fs::path& unlabeled_path,
                             const std::string& out_name,
                             const std::optional<fs::path>& pool_path,
                             const std::optional<fs::path>& index_path) {
    LabelSet labels = LabelSet::load(cfg.labels_path);
    auto unlabeled = load_dataset(resolve_input(cfg, unlabeled_path), labels);
    if (unlabeled.empty()) {
        throw DataError("unlabeled dataset is empty: " + unlabeled_path.string());
    }
    PipelineContext ctx(cfg, unlabeled);

    const std::size_t want = cfg.unlabeled_subsample == 0 ? unlabeled.size()
                                                          : cfg.unlabeled_subsample;
    auto chosen = subsample(unlabeled, want, cfg.seeds[0]);

    if (pool_path.has_value() != index_path.has_value()) {
        throw UsageError("a demo pool and its index must be given together");
    }
    std::optional<DemoPool> pool;
    if (pool_path) {
        pool = DemoPool::load(resolve_input(cfg, *pool_path), resolve_input(cfg, *index_path));
    }
    RetrievalPolicy rpolicy = cfg.retrieval;
    rpolicy.seed = cfg.seeds[0];
    const bool use_demos = pool && rpolicy.kind != RetrievalKind::no_demos && rpolicy.k > 0;

    std::vector<EmbeddingVector> queries;
    if (use_demos) {
        std::vector<std::string> texts;
        texts.reserve(chosen.size());
        for (const auto& s : chosen) texts.push_back(s.text);
        queries = ctx.embedder().embed_batch(texts);
    }

    ctx.gateway(); // constructed before the workers share it

    std::vector<AnnotatedSample> annotated(chosen.size());
    std::vector<std::string> prompts(cfg.dump_prompts ? chosen.size() : 0);
    std::atomic<bool> exhausted{false};
    parallel_for(chosen.size(), cfg.parallelism, [&](std::size_t i) {
        const Sample& s = chosen[i];
        std::vector<Demo> demos;
        if (use_demos) {
            bool ex = false;
            auto picks = retrieve(*pool, queries[i], s.id, rpolicy, &ex);
            if (ex) exhausted.store(true);
            demos = to_demos(*pool, picks);
        }
        AnnotateContext actx{ctx.gateway(), ctx.tpl(),           ctx.labels(), cfg.sc,
                             ctx.cfg().backend.model, cfg.max_answer_len, cfg.seeds[0]};
        AnnotatedSample a = annotate_sample(actx, s, demos,
                                            cfg.dump_prompts ? &prompts[i] : nullptr);
        if (cfg.with_sv) {
            self_verify(actx, a);
        }
        annotated[i] = std::move(a);
    });
    if (exhausted.load()) {
        warn_pool_exhausted(pool->size(), rpolicy.k);
    }

    json meta = ctx.base_meta();
    meta["stage"] = "annotate";
    meta["sc"] = json{{"n_samples", cfg.sc.n_samples}, {"temperature", cfg.sc.temperature}};
    meta["samples"] = annotated.size();
    meta["icl"] = use_demos;
    meta["sv"] = cfg.with_sv;
    if (use_demos) {
        meta["retrieval"] = retrieval_meta(cfg.retrieval);
        meta["pool_size"] = pool->size();
    }

    const fs::path out = ctx.out_path(out_name);
    save_annotated(out, annotated, meta);
    if (cfg.dump_prompts) {
        dump_prompt_file(prompts_path_for(out), chosen, prompts);
    }
    return AnnotateOutcome{out, annotated.size(), ctx.gateway().backend_calls()};
}

fs::path run_select(const RunConfig& cfg, const fs::path& annotated_path,
                    const std::string& out_name, const std::optional<fs::path>& gold_path) {
    PipelineContext ctx(cfg, {});
    AnnotatedFile file = load_annotated(resolve_input(cfg, annotated_path));
    if (file.samples.empty()) {
        throw DataError("annotated pool is empty: " + annotated_path.string());
    }

    std::map<std::string, std::vector<EntityRef>> gold_by_id;
    if (gold_path) {
        auto ds = load_dataset(resolve_input(cfg, *gold_path), ctx.labels());
        gold_by_id = gold_map_of(ds);
    } else {
        for (const auto& a : file.samples) {
            if (a.sample.gold) gold_by_id[a.sample.id] = *a.sample.gold;
        }
    }

    auto selected = apply_selection(file.samples, cfg.selection, &gold_by_id);

    json meta = ctx.base_meta();
    meta["stage"] = "select";
    meta["selection"] = json{{"kind", to_string(cfg.selection.kind)},
                             {"th_entity", cfg.selection.th_entity},
                             {"th_sample", cfg.selection.th_sample},
                             {"channel", to_string(cfg.selection.channel)},
                             {"drop_empty", cfg.selection.drop_empty},
                             {"rescore", cfg.selection.rescore}};
    meta["input_samples"] = file.samples.size();
    meta["kept_samples"] = selected.size();

    const fs::path out = ctx.out_path(out_name);
    save_annotated(out, selected, meta);
    return out;
}

fs::path run_index(const RunConfig& cfg, const fs::path& pool_path, const std::string& out_name) {
    PipelineContext ctx(cfg, {});
    AnnotatedFile file = load_annotated(resolve_input(cfg, pool_path));
    if (file.samples.empty()) {
        throw DataError("cannot index an empty pool: " + pool_path.string());
    }
    EmbeddingIndex index = build_index(file.samples, ctx.embedder());
    json meta = ctx.base_meta();
    meta["stage"] = "index";
    const fs::path out = ctx.out_path(out_name);
    index.save(out, meta);
    return out;
}

InferOutcome run_infer(const RunConfig& cfg, const std::optional<fs::path>& pool_path,
                       const std::optional<fs::path>& index_path, const fs::path& test_path,
                       const std::string& out_prefix) {
    LabelSet labels = LabelSet::load(cfg.labels_path);
    auto test = load_dataset(resolve_input(cfg, test_path), labels);
    if (test.empty()) {
        throw DataError("test dataset is empty: " + test_path.string());
    }
    PipelineContext ctx(cfg, test);

    if (pool_path.has_value() != index_path.has_value()) {
        throw UsageError("a demo pool and its index must be given together");
    }
    std::optional<DemoPool> pool;
    if (pool_path) {
        pool = DemoPool::load(resolve_input(cfg, *pool_path), resolve_input(cfg, *index_path));
    }

    ctx.gateway();

    InferOutcome outcome;
    std::vector<ScoreReport> reports;
    bool every_seed_scored = true;

    for (std::uint64_t seed : cfg.seeds) {
        const std::size_t want = cfg.test_subsample == 0 ? test.size() : cfg.test_subsample;
        auto sub = subsample(test, want, seed);

        RetrievalPolicy rpolicy = cfg.retrieval;
        rpolicy.seed = seed;
        const bool use_demos = pool && rpolicy.kind != RetrievalKind::no_demos && rpolicy.k > 0;

        std::vector<EmbeddingVector> queries;
        if (use_demos) {
            std::vector<std::string> texts;
            texts.reserve(sub.size());
            for (const auto& s : sub) texts.push_back(s.text);
            queries = ctx.embedder().embed_batch(texts);
        }

        const SCConfig infer_sc = cfg.infer_sc ? cfg.sc : SCConfig{1, 0.0};

        std::vector<PredictionRecord> records(sub.size());
        std::vector<std::string> prompts(cfg.dump_prompts ? sub.size() : 0);
        std::atomic<bool> exhausted{false};
        parallel_for(sub.size(), cfg.parallelism, [&](std::size_t i) {
            const Sample& s = sub[i];
            std::vector<Demo> demos;
            if (use_demos) {
                bool ex = false;
                auto picks = retrieve(*pool, queries[i], s.id, rpolicy, &ex);
                if (ex) exhausted.store(true);
                demos = to_demos(*pool, picks);
            }
            AnnotateContext actx{ctx.gateway(), ctx.tpl(),           ctx.labels(), infer_sc,
                                 ctx.cfg().backend.model, cfg.max_answer_len, seed};
            AnnotatedSample a = annotate_sample(actx, s, demos,
                                                cfg.dump_prompts ? &prompts[i] : nullptr);
            if (cfg.infer_sc) {
                a = two_stage_majority_vote(a);
            }
            PredictionRecord r;
            r.id = a.sample.id;
            r.text = a.sample.text;
            for (const auto& p : a.predictions) {
                r.predictions.push_back(EntityRef{p.span, p.etype});
            }
            records[i] = std::move(r);
        });
        if (exhausted.load()) {
            warn_pool_exhausted(pool->size(), rpolicy.k);
        }

        json meta = ctx.base_meta();
        meta["stage"] = "infer";
        meta["seed"] = seed;
        meta["samples"] = records.size();
        meta["infer_sc"] = cfg.infer_sc;
        if (pool) {
            meta["retrieval"] = retrieval_meta(cfg.retrieval);
            meta["pool_size"] = pool->size();
        }

        const std::string seed_tag = std::to_string(seed);
        const fs::path pred_path =
            ctx.out_path(out_prefix + "predictions-seed" + seed_tag + ".jsonl");
        save_predictions(pred_path, records, meta);
        if (cfg.dump_prompts) {
            dump_prompt_file(prompts_path_for(pred_path), sub, prompts);
        }
        outcome.prediction_files.push_back(pred_path);

        const bool all_gold = std::all_of(sub.begin(), sub.end(),
                                          [](const Sample& s) { return s.gold.has_value(); });
        if (!all_gold) {
            every_seed_scored = false;
            continue;
        }
        std::vector<LabeledSet> golds, predsets;
        golds.reserve(sub.size());
        predsets.reserve(records.size());
        for (const auto& s : sub) golds.push_back(LabeledSet{s.id, *s.gold});
        for (const auto& r : records) predsets.push_back(LabeledSet{r.id, r.predictions});
        ScoreReport report = micro_f1(predsets, golds);

        json rmeta = ctx.base_meta();
        rmeta["stage"] = "report";
        rmeta["seed"] = seed;
        rmeta["samples"] = sub.size();
        const fs::path report_json = ctx.out_path(out_prefix + "report-seed" + seed_tag + ".json");
        save_report_json(report_json, report, rmeta);
        fs::path report_csv = report_json;
        report_csv.replace_extension(".csv");
        save_report_csv(report_csv, report);
        outcome.report_files.push_back(report_json);
        reports.push_back(report);
    }

    if (every_seed_scored && !reports.empty()) {
        AggregateReport agg = multi_seed_report(reports);

        ordered_json j;
        json ameta = ctx.base_meta();
        ameta["stage"] = "aggregate";
        ameta["seeds"] = cfg.seeds;
        j["meta"] = ameta;
        j["n_runs"] = agg.n_runs;
        auto metric_json = [](const MeanStd& m) {
            ordered_json mj;
            mj["mean"] = m.mean;
            mj["stddev"] = m.stddev;
            mj["display"] = format_mean_std(m);
            return mj;
        };
        j["precision"] = metric_json(agg.precision);
        j["recall"] = metric_json(agg.recall);
        j["f1"] = metric_json(agg.f1);
        ordered_json per_seed = ordered_json::array();
        for (std::size_t i = 0; i < reports.size(); ++i) {
            ordered_json s;
            s["seed"] = cfg.seeds[i];
            s["precision"] = reports[i].precision;
            s["recall"] = reports[i].recall;
            s["f1"] = reports[i].f1;
            per_seed.push_back(std::move(s));
        }
        j["per_seed"] = std::move(per_seed);

        const fs::path agg_path = ctx.out_path(out_prefix + "report.json");
        write_text_file(agg_path, j.dump(2) + "\n");

        char line[160];
        std::string csv = "metric,mean,stddev,display\n";
        auto add_metric = [&](const char* name, const MeanStd& m) {
            std::snprintf(line, sizeof(line), "%s,%.6f,%.6f,%s\n", name, m.mean, m.stddev,
                          format_mean_std(m).c_str());
            csv += line;
        };
        add_metric("precision", agg.precision);
        add_metric("recall", agg.recall);
        add_metric("f1", agg.f1);
        fs::path agg_csv = agg_path;
        agg_csv.replace_extension(".csv");
        write_text_file(agg_csv, csv);

        outcome.aggregate_path = agg_path;
        outcome.aggregate = agg;
    }
    return outcome;
}

EvalOutcome run_eval(const RunConfig& cfg, const fs::path& predictions_path,
                     const fs::path& gold_path, const std::string& out_name) {
    PipelineContext ctx(cfg, {});
    PredictionFile preds = load_predictions(resolve_input(cfg, predictions_path));
    auto ds = load_dataset(resolve_input(cfg, gold_path), ctx.labels());

    if (preds.meta.is_object() && preds.meta.contains("labels")) {
        const std::string produced_with = preds.meta["labels"].get<std::string>();
        if (produced_with != ctx.labels().name) {
            throw DataError("label set mismatch: predictions were produced with '" +
                            produced_with + "' but evaluation uses '" + ctx.labels().name + "'");
        }
    }

    std::map<std::string, const Sample*> gold_samples;
    for (const auto& s : ds) gold_samples[s.id] = &s;

    std::vector<LabeledSet> golds, predsets;
    std::vector<std::string> unknown;
    for (const auto& r : preds.records) {
        auto it = gold_samples.find(r.id);
        if (it == gold_samples.end()) {
            unknown.push_back(r.id);
            continue;
        }
        if (!it->second->gold) {
            throw DataError("gold dataset sample '" + r.id + "' has no gold annotations");
        }
        golds.push_back(LabeledSet{r.id, *it->second->gold});
        predsets.push_back(LabeledSet{r.id, r.predictions});
    }
    if (!unknown.empty()) {
        std::string msg = "predictions cover ids absent from the gold dataset: ";
        for (std::size_t i = 0; i < unknown.size() && i < 8; ++i) {
            if (i) msg += ", ";
            msg += unknown[i];
        }
        if (unknown.size() > 8) msg += ", ... (" + std::to_string(unknown.size() - 8) + " more)";
        throw DataError(msg);
    }
    if (predsets.empty()) {
        throw DataError("no predictions to evaluate in " + predictions_path.string());
    }
    if (predsets.size() < ds.size()) {
        std::cerr << "warning: evaluating the " << predsets.size() << " covered of " << ds.size()
                  << " gold samples\n";
    }

    ScoreReport report = micro_f1(predsets, golds);

    json meta = ctx.base_meta();
    meta["stage"] = "eval";
    meta["samples"] = predsets.size();

    fs::path report_json = ctx.out_path(out_name);
    save_report_json(report_json, report, meta);
    fs::path report_csv = report_json;
    report_csv.replace_extension(".csv");
    save_report_csv(report_csv, report);
    return EvalOutcome{report, report_json, report_csv};
}

LoopOutcome run_loop(const RunConfig& cfg, const fs::path& unlabeled_path,
                     const fs::path& test_path) {
    {
        LabelSet labels = LabelSet::load(cfg.labels_path);
        auto test = load_dataset(resolve_input(cfg, test_path), labels);
        for (const auto& s : test) {
            if (!s.gold) {
                throw DataError("the loop needs a fully annotated test set; sample '" + s.id +
                                "' has no gold");
            }
        }
    }

    LoopOutcome out;

    auto baseline = run_infer(cfg, std::nullopt, std::nullopt, test_path, "iter0/");
    if (!baseline.aggregate) {
        throw DataError("baseline inference produced no aggregate report");
    }
    out.iterations.push_back(LoopIteration{0, 0, *baseline.aggregate});

    std::optional<fs::path> prev_pool, prev_index;
    std::exception_ptr failure;
    for (int t = 1; t <= cfg.iterations; ++t) {
        const std::string dir = "iter" + std::to_string(t) + "/";
        try {
            auto annotated = run_annotate(cfg, unlabeled_path, dir + "annotated.jsonl",
                                          prev_pool, prev_index);
            auto selected = run_select(cfg, annotated.annotated_path, dir + "selected.jsonl");
            auto index = run_index(cfg, selected, dir + "index.jsonl");
            auto inferred = run_infer(cfg, selected, index, test_path, dir);
            if (!inferred.aggregate) {
                throw DataError("iteration produced no aggregate report");
            }
            const std::size_t pool_n = load_annotated(selected).samples.size();
            out.iterations.push_back(LoopIteration{t, pool_n, *inferred.aggregate});
            prev_pool = selected;
            prev_index = index;
        } catch (const std::exception& e) {
            std::cerr << "error: iteration " << t << " failed: " << e.what() << "\n"
                      << "keeping the " << (t - 1)
                      << " completed improvement iteration(s) and their files\n";
            failure = std::current_exception();
            break;
        }
    }

    Table table;
    table.header = {"iteration", "pool", "precision", "recall", "f1"};
    for (const auto& it : out.iterations) {
        table.rows.push_back({std::to_string(it.iteration), std::to_string(it.pool_size),
                              format_mean_std(it.report.precision),
                              format_mean_std(it.report.recall), format_mean_std(it.report.f1)});
    }
    out.summary_csv = cfg.out_dir / "summary.csv";
    out.summary_txt = cfg.out_dir / "summary.txt";
    write_text_file(out.summary_csv, table.render_csv());
    write_text_file(out.summary_txt, table.render_text());

    if (failure) {
        std::rethrow_exception(failure);
    }
    return out;
}

SweepAxis parse_sweep_axis(const std::string& name) {
    const std::string n = snake(name);
    if (n == "th_entity") return SweepAxis::th_entity;
    if (n == "th_sample") return SweepAxis::th_sample;
    if (n == "k") return SweepAxis::k;
    if (n == "pool_size") return SweepAxis::pool_size;
    throw UsageError("unknown sweep axis '" + name + "' (th-entity, th-sample, k, pool-size)");
}

std::string to_string(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::th_entity: return "th_entity";
        case SweepAxis::th_sample: return "th_sample";
        case SweepAxis::k: return "k";
        case SweepAxis::pool_size: return "pool_size";
    }
    return "?";
}

namespace {

long checked_integer_value(SweepAxis axis, double v) {
    if (v < 0 || v != std::floor(v)) {
        throw UsageError(to_string(axis) + " sweep values must be non-negative integers");
    }
    return static_cast<long>(v);
}

} // namespace

SweepOutcome run_sweep(const RunConfig& cfg, SweepAxis axis, const std::vector<double>& values,
                       const fs::path& unlabeled_path, const fs::path& test_path) {
    if (values.empty()) {
        throw UsageError("sweep needs at least one value");
    }

    // All axes but pool_size reuse one annotation run; pool_size re-annotates
    // per value and the response cache keeps the overlap free.
    std::optional<fs::path> shared_annotated;
    if (axis != SweepAxis::pool_size) {
        shared_annotated =
            run_annotate(cfg, unlabeled_path, "sweep/annotated.jsonl").annotated_path;
    }

    std::vector<ComparisonRow> rows;
    for (double v : values) {
        char vbuf[32];
        std::snprintf(vbuf, sizeof(vbuf), "%g", v);
        ComparisonRow row;
        row.name = to_string(axis) + "=" + vbuf;
        const std::string dir = "sweep/" + row.name + "/";
        try {
            RunConfig c = cfg;
            switch (axis) {
                case SweepAxis::th_entity:
                    c.selection.kind = SelectionKind::entity_threshold;
                    c.selection.th_entity = v;
                    break;
                case SweepAxis::th_sample:
                    c.selection.kind = SelectionKind::sample_threshold;
                    c.selection.th_sample = v;
                    break;
                case SweepAxis::k:
                    c.retrieval.k = static_cast<int>(checked_integer_value(axis, v));
                    break;
                case SweepAxis::pool_size:
                    c.unlabeled_subsample =
                        static_cast<std::size_t>(checked_integer_value(axis, v));
                    break;
            }
            fs::path annotated =
                axis == SweepAxis::pool_size
                    ? run_annotate(c, unlabeled_path, dir + "annotated.jsonl").annotated_path
                    : *shared_annotated;
            auto selected = run_select(c, annotated, dir + "selected.jsonl");
            auto index = run_index(c, selected, dir + "index.jsonl");
            auto inferred = run_infer(c, selected, index, test_path, dir);
            if (!inferred.aggregate) {
                throw DataError("the test set lacks gold annotations; sweep cannot score runs");
            }
            row.precision = inferred.aggregate->precision;
            row.recall = inferred.aggregate->recall;
            row.f1 = inferred.aggregate->f1;
        } catch (const std::exception& e) {
            row.note = e.what();
        }
        rows.push_back(std::move(row));
    }

    SweepOutcome out;
    out.table = comparison_table(rows);
    out.table_csv = cfg.out_dir / "sweep" / "table.csv";
    out.table_txt = cfg.out_dir / "sweep" / "table.txt";
    write_text_file(out.table_csv, out.table.render_csv());
    write_text_file(out.table_txt, out.table.render_text());
    return out;
}

DensityOutcome run_density(const RunConfig& cfg, const fs::path& pool_path,
                           const fs::path& gold_path, int bins, const std::string& out_name) {
    PipelineContext ctx(cfg, {});
    AnnotatedFile file = load_annotated(resolve_input(cfg, pool_path));

    std::map<std::string, std::vector<EntityRef>> gold_by_id;
    if (!gold_path.empty()) {
        auto ds = load_dataset(resolve_input(cfg, gold_path), ctx.labels());
        gold_by_id = gold_map_of(ds);
    } else {
        for (const auto& a : file.samples) {
            if (a.sample.gold) gold_by_id[a.sample.id] = *a.sample.gold;
        }
    }

    DensityReport report = sc_density(file.samples, gold_by_id, bins);

    ordered_json j;
    json meta = ctx.base_meta();
    meta["stage"] = "density";
    j["meta"] = meta;
    j["bins"] = ordered_json::array();
    for (const auto& b : report.bins) {
        ordered_json bj;
        bj["lo"] = b.lo;
        bj["hi"] = b.hi;
        bj["count_true"] = b.count_true;
        bj["count_false"] = b.count_false;
        bj["density_true"] = b.density_true;
        bj["density_false"] = b.density_false;
        j["bins"].push_back(std::move(bj));
    }
    j["total_true"] = report.total_true;
    j["total_false"] = report.total_false;
    j["mean_true"] = report.mean_true;
    j["mean_false"] = report.mean_false;

    const fs::path json_path = ctx.out_path(out_name);
    write_text_file(json_path, j.dump(2) + "\n");

    std::string csv = "lo,hi,count_true,count_false,density_true,density_false\n";
    char line[160];
    for (const auto& b : report.bins) {
        std::snprintf(line, sizeof(line), "%.4f,%.4f,%ld,%ld,%.6f,%.6f\n", b.lo, b.hi,
                      b.count_true, b.count_false, b.density_true, b.density_false);
        csv += line;
    }
    fs::path csv_path = json_path;
    csv_path.replace_extension(".csv");
    write_text_file(csv_path, csv);

    return DensityOutcome{report, json_path, csv_path};
}

} // namespace selfner
