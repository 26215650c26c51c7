#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "geoaware/config.hpp"
#include "geoaware/deskworld/viewpoints.hpp"

namespace geoaware::bench {

inline constexpr int kReportSchemaVersion = 1;

struct TaskResult {
    int id = 0;
    std::size_t successes = 0;
    std::size_t rollouts = 0;

    double rate() const { return rollouts == 0 ? 0.0 : 100.0 * static_cast<double>(successes) / rollouts; }

    bool operator==(const TaskResult&) const = default;
};

struct EvalReport {
    std::string model;
    std::string category = "seen";
    std::vector<TaskResult> tasks;
    std::vector<std::uint64_t> seeds;
    double mean_episode_length = 0.0;

    std::size_t rollouts() const {
        std::size_t n = 0;
        for (const auto& t : tasks) {
            n += t.rollouts;
        }
        return n;
    }

    /// Mean of the per-task rates, in percent.
    double average_rate() const {
        if (tasks.empty()) {
            return 0.0;
        }
        double s = 0.0;
        for (const auto& t : tasks) {
            s += t.rate();
        }
        return s / static_cast<double>(tasks.size());
    }

    bool operator==(const EvalReport&) const = default;
};

struct ComparisonRow {
    std::string category;
    double geo_rate = 0.0;
    double pixel_rate = 0.0;

    /// geo / pixel; 1 when both are zero, infinite when only pixel is zero.
    double ratio() const {
        if (pixel_rate == 0.0) {
            return geo_rate == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
        }
        return geo_rate / pixel_rate;
    }
};

struct ComparisonReport {
    std::string geo_model;
    std::string pixel_model;
    std::vector<ComparisonRow> rows;
    std::vector<EvalReport> geo;
    std::vector<EvalReport> pixel;
};

struct AblationRow {
    std::string mode; // "all", "even4", "last4"
    bool is_default = false;
    EvalReport seen;
    EvalReport novel;
};

struct AblationReport {
    std::vector<AblationRow> rows;
};

inline std::string fmt1(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return buf;
}

// ---------------------------------------------------------------------------
// JSON

inline Json to_json(const EvalReport& r) {
    Json j;
    j["schema_version"] = kReportSchemaVersion;
    j["model"] = r.model;
    j["category"] = r.category;
    j["tasks"] = Json::array();
    for (const auto& t : r.tasks) {
        j["tasks"].push_back({{"id", t.id}, {"successes", t.successes}, {"rollouts", t.rollouts}, {"rate", t.rate()}});
    }
    j["average_rate"] = r.average_rate();
    j["seeds"] = r.seeds;
    j["mean_episode_length"] = r.mean_episode_length;
    return j;
}

inline Json to_json(const AblationReport& r) {
    Json j;
    j["schema_version"] = kReportSchemaVersion;
    j["kind"] = "ablation";
    j["rows"] = Json::array();
    for (const auto& row : r.rows) {
        j["rows"].push_back(
            {{"mode", row.mode}, {"default", row.is_default}, {"seen", to_json(row.seen)}, {"novel", to_json(row.novel)}});
    }
    return j;
}

inline Json to_json(const ComparisonReport& r) {
    Json j;
    j["schema_version"] = kReportSchemaVersion;
    j["kind"] = "comparison";
    j["geo_model"] = r.geo_model;
    j["pixel_model"] = r.pixel_model;
    j["rows"] = Json::array();
    for (const auto& row : r.rows) {
        const double ratio = row.ratio();
        j["rows"].push_back({{"category", row.category},
                             {"geo_rate", row.geo_rate},
                             {"pixel_rate", row.pixel_rate},
                             {"ratio", std::isfinite(ratio) ? Json(ratio) : Json(nullptr)}});
    }
    return j;
}

namespace report_detail {

inline void require(bool ok, const std::string& what) {
    if (!ok) {
        throw SchemaError("report: " + what);
    }
}

inline void require_version(const Json& j) {
    require(j.is_object() && j.contains("schema_version") && j.at("schema_version").is_number_integer(),
            "missing schema_version");
    const int v = j.at("schema_version").get<int>();
    require(v == kReportSchemaVersion, "unsupported schema_version " + std::to_string(v));
}

} // namespace report_detail

inline EvalReport eval_report_from_json(const Json& j) {
    using report_detail::require;
    report_detail::require_version(j);
    try {
        EvalReport r;
        r.model = j.at("model").get<std::string>();
        r.category = j.at("category").get<std::string>();
        for (const auto& t : j.at("tasks")) {
            TaskResult tr{t.at("id").get<int>(), t.at("successes").get<std::size_t>(),
                          t.at("rollouts").get<std::size_t>()};
            require(tr.successes <= tr.rollouts, "task successes exceed rollouts");
            r.tasks.push_back(tr);
        }
        r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        if (j.contains("mean_episode_length")) {
            r.mean_episode_length = j.at("mean_episode_length").get<double>();
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("report: ") + e.what());
    }
}

inline AblationReport ablation_report_from_json(const Json& j) {
    using report_detail::require;
    report_detail::require_version(j);
    try {
        require(j.value("kind", "") == "ablation", "not an ablation report");
        AblationReport r;
        for (const auto& row : j.at("rows")) {
            r.rows.push_back({row.at("mode").get<std::string>(), row.at("default").get<bool>(),
                              eval_report_from_json(row.at("seen")), eval_report_from_json(row.at("novel"))});
        }
        require(r.rows.size() == 3, "ablation report must have 3 rows");
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("report: ") + e.what());
    }
}

inline ComparisonReport comparison_report_from_json(const Json& j) {
    using report_detail::require;
    report_detail::require_version(j);
    try {
        require(j.value("kind", "") == "comparison", "not a comparison report");
        ComparisonReport r;
        r.geo_model = j.at("geo_model").get<std::string>();
        r.pixel_model = j.at("pixel_model").get<std::string>();
        for (const auto& row : j.at("rows")) {
            r.rows.push_back(
                {row.at("category").get<std::string>(), row.at("geo_rate").get<double>(), row.at("pixel_rate").get<double>()});
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("report: ") + e.what());
    }
}

inline Json parse_report_json(const std::string& text) {
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("report: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Markdown and CSV

namespace report_detail {

/// Pads every column to its widest cell.
inline std::string table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> w(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) {
        w[c] = header[c].size();
        for (const auto& r : rows) {
            w[c] = std::max(w[c], r[c].size());
        }
    }
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& cells) {
        os << "|";
        for (std::size_t c = 0; c < cells.size(); ++c) {
            os << " " << cells[c] << std::string(w[c] - cells[c].size(), ' ') << " |";
        }
        os << "\n";
    };
    line(header);
    os << "|";
    for (const auto width : w) {
        os << std::string(width + 2, '-') << "|";
    }
    os << "\n";
    for (const auto& r : rows) {
        line(r);
    }
    return os.str();
}

} // namespace report_detail

inline std::string to_markdown(const EvalReport& r) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& t : r.tasks) {
        rows.push_back({"Task " + std::to_string(t.id), std::to_string(t.successes) + "/" + std::to_string(t.rollouts),
                        fmt1(t.rate())});
    }
    rows.push_back({"Average", std::to_string(r.rollouts()) + " rollouts", fmt1(r.average_rate())});
    return "**" + r.model + "** (" + r.category + ")\n\n" +
           report_detail::table({"Task", "Successes", "Success (%)"}, rows);
}

inline std::string ablation_label(const AblationRow& row) {
    std::string label = row.mode;
    if (row.mode == "all") {
        label = "All";
    } else if (row.mode.rfind("even", 0) == 0) {
        label = "Evenly-Spaced";
    } else if (row.mode.rfind("last", 0) == 0) {
        label = "Last";
    }
    return row.is_default ? label + "(default)" : label;
}

inline std::string to_markdown(const AblationReport& r) {
    std::vector<std::vector<std::string>> rows;
    std::string novel = "Novel";
    for (const auto& row : r.rows) {
        rows.push_back({ablation_label(row), row.mode, fmt1(row.seen.average_rate()), fmt1(row.novel.average_rate())});
        novel = "Novel " + row.novel.category;
    }
    return report_detail::table({"Layer selection", "Mode", "Seen (%)", novel + " (%)"}, rows);
}

inline std::string to_markdown(const ComparisonReport& r) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& row : r.rows) {
        const double ratio = row.ratio();
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", ratio);
        rows.push_back({row.category, fmt1(row.geo_rate), fmt1(row.pixel_rate), std::isfinite(ratio) ? buf : "inf"});
    }
    return report_detail::table({"Category", r.geo_model + " (%)", r.pixel_model + " (%)", "Ratio"}, rows);
}

inline const char* kEvalCsvHeader = "model,category,task,successes,rollouts,rate";

inline std::string to_csv(const EvalReport& r) {
    std::ostringstream os;
    os << kEvalCsvHeader << "\n";
    for (const auto& t : r.tasks) {
        os << r.model << "," << r.category << "," << t.id << "," << t.successes << "," << t.rollouts << ","
           << fmt1(t.rate()) << "\n";
    }
    return os.str();
}

inline std::string to_csv(const AblationReport& r) {
    std::ostringstream os;
    os << "mode,default,seen_rate,novel_category,novel_rate\n";
    for (const auto& row : r.rows) {
        os << row.mode << "," << (row.is_default ? 1 : 0) << "," << fmt1(row.seen.average_rate()) << ","
           << row.novel.category << "," << fmt1(row.novel.average_rate()) << "\n";
    }
    return os.str();
}

inline std::string to_csv(const ComparisonReport& r) {
    std::ostringstream os;
    os << "category,geo_rate,pixel_rate,ratio\n";
    for (const auto& row : r.rows) {
        os << row.category << "," << fmt1(row.geo_rate) << "," << fmt1(row.pixel_rate) << "," << row.ratio() << "\n";
    }
    return os.str();
}

/// Reads back the per-task counts written by to_csv(EvalReport).
inline EvalReport eval_report_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kEvalCsvHeader) {
        throw SchemaError("csv: unexpected header");
    }
    EvalReport r;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) {
            cells.push_back(cell);
        }
        if (cells.size() != 6) {
            throw SchemaError("csv: expected 6 columns");
        }
        r.model = cells[0];
        r.category = cells[1];
        try {
            r.tasks.push_back({std::stoi(cells[2]), std::stoul(cells[3]), std::stoul(cells[4])});
        } catch (const std::exception&) {
            throw SchemaError("csv: malformed number in \"" + line + "\"");
        }
    }
    return r;
}

enum class ReportFormat { json, markdown, csv };

inline ReportFormat parse_report_format(const std::string& s) {
    if (s == "json") {
        return ReportFormat::json;
    }
    if (s == "md" || s == "markdown") {
        return ReportFormat::markdown;
    }
    if (s == "csv") {
        return ReportFormat::csv;
    }
    throw ConfigError("unknown report format: " + s);
}

template <typename R>
std::string render_report(const R& r, ReportFormat f) {
    switch (f) {
    case ReportFormat::json:
        return to_json(r).dump(2) + "\n";
    case ReportFormat::markdown:
        return to_markdown(r);
    case ReportFormat::csv:
        return to_csv(r);
    }
    return {};
}

/// Renders any report JSON (eval, ablation or comparison).
inline std::string render_report_json(const Json& j, ReportFormat f) {
    report_detail::require_version(j);
    const std::string kind = j.value("kind", "eval");
    if (kind == "ablation") {
        return render_report(ablation_report_from_json(j), f);
    }
    if (kind == "comparison") {
        return render_report(comparison_report_from_json(j), f);
    }
    if (kind == "eval") {
        return render_report(eval_report_from_json(j), f);
    }
    throw SchemaError("report: unknown kind " + kind);
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw InputError("cannot write " + path);
    }
    out << text;
    if (!out) {
        throw InputError("failed writing " + path);
    }
}

template <typename R>
void emit_report(const R& r, ReportFormat f, const std::string& path) {
    write_text(path, render_report(r, f));
}

} // namespace geoaware::bench
