#include "selfner/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "selfner/errors.hpp"

namespace selfner {

using nlohmann::json;
using nlohmann::ordered_json;

double precision_of(long tp, long fp) {
    return tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
}

double recall_of(long tp, long fn) {
    return tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
}

double f1_of(double precision, double recall) {
    return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

namespace {

std::string join_ids(const std::vector<std::string>& ids, std::size_t cap = 8) {
    std::string out;
    for (std::size_t i = 0; i < ids.size() && i < cap; ++i) {
        if (i) out += ", ";
        out += ids[i];
    }
    if (ids.size() > cap) {
        out += ", ... (" + std::to_string(ids.size() - cap) + " more)";
    }
    return out;
}

std::map<std::string, std::set<EntityRef>> by_id(const std::vector<LabeledSet>& sets,
                                                 const char* what) {
    std::map<std::string, std::set<EntityRef>> out;
    for (const auto& s : sets) {
        if (!out.emplace(s.id, std::set<EntityRef>(s.entities.begin(), s.entities.end()))
                 .second) {
            throw DataError(std::string(what) + " repeats sample id '" + s.id + "'");
        }
    }
    return out;
}

} // namespace

ScoreReport micro_f1(const std::vector<LabeledSet>& predictions,
                     const std::vector<LabeledSet>& golds) {
    auto pred = by_id(predictions, "prediction set");
    auto gold = by_id(golds, "gold set");

    std::vector<std::string> missing_gold, missing_pred;
    for (const auto& [id, _] : pred) {
        if (!gold.count(id)) missing_gold.push_back(id);
    }
    for (const auto& [id, _] : gold) {
        if (!pred.count(id)) missing_pred.push_back(id);
    }
    if (!missing_gold.empty() || !missing_pred.empty()) {
        std::string msg = "prediction/gold id mismatch";
        if (!missing_gold.empty()) {
            msg += "; no gold for: " + join_ids(missing_gold);
        }
        if (!missing_pred.empty()) {
            msg += "; no predictions for: " + join_ids(missing_pred);
        }
        throw DataError(msg);
    }

    ScoreReport report;
    for (const auto& [id, p_set] : pred) {
        const auto& g_set = gold.at(id);
        for (const auto& e : p_set) {
            if (g_set.count(e)) {
                ++report.tp;
                ++report.per_type[e.etype].tp;
            } else {
                ++report.fp;
                ++report.per_type[e.etype].fp;
            }
        }
        for (const auto& e : g_set) {
            if (!p_set.count(e)) {
                ++report.fn;
                ++report.per_type[e.etype].fn;
            }
        }
    }
    report.precision = precision_of(report.tp, report.fp);
    report.recall = recall_of(report.tp, report.fn);
    report.f1 = f1_of(report.precision, report.recall);
    return report;
}

AggregateReport multi_seed_report(const std::vector<ScoreReport>& reports) {
    if (reports.empty()) {
        throw DataError("cannot aggregate zero run reports");
    }
    auto mean_std = [&](auto metric) {
        MeanStd out;
        for (const auto& r : reports) out.mean += metric(r);
        out.mean /= static_cast<double>(reports.size());
        double var = 0.0;
        for (const auto& r : reports) {
            const double d = metric(r) - out.mean;
            var += d * d;
        }
        // Population std (divide by n, not n-1): the spread of exactly these runs.
        out.stddev = std::sqrt(var / static_cast<double>(reports.size()));
        return out;
    };
    AggregateReport out;
    out.precision = mean_std([](const ScoreReport& r) { return r.precision; });
    out.recall = mean_std([](const ScoreReport& r) { return r.recall; });
    out.f1 = mean_std([](const ScoreReport& r) { return r.f1; });
    out.n_runs = reports.size();
    return out;
}

std::string format_percent(double value) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", value * 100.0);
    return buf;
}

std::string format_mean_std(const MeanStd& value) {
    return format_percent(value.mean) + "±" + format_percent(value.stddev);
}

DensityReport sc_density(const std::vector<AnnotatedSample>& pool,
                         const std::map<std::string, std::vector<EntityRef>>& gold_by_id,
                         int bins) {
    if (bins < 1) {
        throw UsageError("density needs at least one bin");
    }
    if (pool.empty()) {
        throw DataError("empty annotated pool");
    }
    int n = 1;
    for (const auto& s : pool) n = std::max(n, s.n_samples);
    const double lo = 0.5;
    const double hi = n + 0.5;
    const double width = (hi - lo) / bins;

    DensityReport report;
    report.bins.resize(static_cast<std::size_t>(bins));
    for (int b = 0; b < bins; ++b) {
        report.bins[b].lo = lo + b * width;
        report.bins[b].hi = lo + (b + 1) * width;
    }

    double sum_true = 0.0, sum_false = 0.0;
    bool any_gold = false;
    for (const auto& s : pool) {
        auto it = gold_by_id.find(s.sample.id);
        if (it == gold_by_id.end()) continue;
        any_gold = true;
        const auto& gold = it->second;
        for (const auto& p : s.predictions) {
            const bool is_true = std::find(gold.begin(), gold.end(),
                                           EntityRef{p.span, p.etype}) != gold.end();
            int b = static_cast<int>((p.votes - lo) / width);
            b = std::clamp(b, 0, bins - 1);
            if (is_true) {
                ++report.bins[b].count_true;
                ++report.total_true;
                sum_true += p.votes;
            } else {
                ++report.bins[b].count_false;
                ++report.total_false;
                sum_false += p.votes;
            }
        }
    }
    if (!any_gold) {
        throw DataError("no pool sample has gold annotations; density needs gold");
    }
    for (auto& b : report.bins) {
        if (report.total_true > 0) {
            b.density_true = b.count_true / (report.total_true * width);
        }
        if (report.total_false > 0) {
            b.density_false = b.count_false / (report.total_false * width);
        }
    }
    if (report.total_true > 0) report.mean_true = sum_true / report.total_true;
    if (report.total_false > 0) report.mean_false = sum_false / report.total_false;
    return report;
}

namespace {

std::size_t display_width(const std::string& s) {
    // Code-point count; close enough for the ASCII-plus-"±" cells we render.
    std::size_t n = 0;
    for (unsigned char c : s) {
        if ((c & 0xc0) != 0x80) ++n;
    }
    return n;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

} // namespace

std::string Table::render_text() const {
    std::vector<std::size_t> widths(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) {
        widths[c] = display_width(header[c]);
    }
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size() && c < widths.size(); ++c) {
            widths[c] = std::max(widths[c], display_width(row[c]));
        }
    }
    std::string out;
    auto emit_row = [&](const std::vector<std::string>& cells) {
        std::string line;
        for (std::size_t c = 0; c < widths.size(); ++c) {
            const std::string& cell = c < cells.size() ? cells[c] : std::string();
            line += cell;
            if (c + 1 < widths.size()) {
                line.append(widths[c] - display_width(cell) + 2, ' ');
            }
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out += line;
        out += '\n';
    };
    emit_row(header);
    std::vector<std::string> dashes;
    for (std::size_t w : widths) dashes.push_back(std::string(w, '-'));
    emit_row(dashes);
    for (const auto& row : rows) emit_row(row);
    return out;
}

std::string Table::render_csv() const {
    std::string out;
    auto emit_row = [&](const std::vector<std::string>& cells) {
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (c) out += ',';
            out += csv_field(cells[c]);
        }
        out += '\n';
    };
    emit_row(header);
    for (const auto& row : rows) emit_row(row);
    return out;
}

Table comparison_table(const std::vector<ComparisonRow>& rows) {
    Table t;
    t.header = {"run", "precision", "recall", "f1", "note"};
    for (const auto& r : rows) {
        t.rows.push_back({r.name, format_mean_std(r.precision), format_mean_std(r.recall),
                          format_mean_std(r.f1), r.note});
    }
    return t;
}

void save_predictions(const std::filesystem::path& path,
                      const std::vector<PredictionRecord>& records, const nlohmann::json& meta) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write predictions file: " + path.string());
    }
    if (!meta.is_null()) {
        out << meta.dump() << '\n';
    }
    for (const auto& r : records) {
        ordered_json j;
        j["id"] = r.id;
        j["text"] = r.text;
        json preds = json::array();
        for (const auto& e : r.predictions) {
            preds.push_back(json::array({e.span, e.etype}));
        }
        j["predictions"] = std::move(preds);
        out << j.dump() << '\n';
    }
}

PredictionFile load_predictions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open predictions file: " + path.string());
    }
    PredictionFile out;
    std::string line;
    std::size_t line_no = 0;
    bool first_content_line = true;
    std::set<std::string> ids;
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
        if (first_content_line && j.is_object() && !j.contains("id")) {
            out.meta = std::move(j);
            first_content_line = false;
            continue;
        }
        first_content_line = false;
        try {
            PredictionRecord r;
            r.id = j.at("id").get<std::string>();
            r.text = j.at("text").get<std::string>();
            for (const auto& e : j.at("predictions")) {
                r.predictions.push_back(
                    EntityRef{e.at(0).get<std::string>(), e.at(1).get<std::string>()});
            }
            if (!ids.insert(r.id).second) {
                throw DataError(path.string() + ": duplicate sample id '" + r.id + "'");
            }
            out.records.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw DataError(path.string() + ": line " + std::to_string(line_no) +
                            " is not a valid prediction record: " + e.what());
        }
    }
    return out;
}

namespace {

ordered_json type_counts_json(const TypeCounts& c) {
    const double p = precision_of(c.tp, c.fp);
    const double r = recall_of(c.tp, c.fn);
    ordered_json j;
    j["tp"] = c.tp;
    j["fp"] = c.fp;
    j["fn"] = c.fn;
    j["precision"] = p;
    j["recall"] = r;
    j["f1"] = f1_of(p, r);
    return j;
}

} // namespace

void save_report_json(const std::filesystem::path& path, const ScoreReport& report,
                      const nlohmann::json& meta) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write report file: " + path.string());
    }
    ordered_json j;
    if (!meta.is_null()) j["meta"] = meta;
    j["precision"] = report.precision;
    j["recall"] = report.recall;
    j["f1"] = report.f1;
    j["tp"] = report.tp;
    j["fp"] = report.fp;
    j["fn"] = report.fn;
    ordered_json per_type;
    for (const auto& [type, counts] : report.per_type) {
        per_type[type] = type_counts_json(counts);
    }
    j["per_type"] = std::move(per_type);
    out << j.dump(2) << '\n';
}

void save_report_csv(const std::filesystem::path& path, const ScoreReport& report) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write report file: " + path.string());
    }
    out << "type,tp,fp,fn,precision,recall,f1\n";
    char buf[128];
    auto emit = [&](const std::string& name, long tp, long fp, long fn) {
        const double p = precision_of(tp, fp);
        const double r = recall_of(tp, fn);
        std::snprintf(buf, sizeof(buf), "%s,%ld,%ld,%ld,%.4f,%.4f,%.4f\n",
                      csv_field(name).c_str(), tp, fp, fn, p, r, f1_of(p, r));
        out << buf;
    };
    for (const auto& [type, c] : report.per_type) {
        emit(type, c.tp, c.fp, c.fn);
    }
    emit("ALL", report.tp, report.fp, report.fn);
}

} // namespace selfner
