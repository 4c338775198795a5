#pragma once

// Task scoring (exact match / token F1), relative gain against a baseline, ARG/RGSTD
// aggregation and the EvalReport file formats.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "primer/error.hpp"
#include "primer/tasks.hpp"

namespace primer {

inline std::vector<std::string> whitespace_tokens(const std::string& s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    for (std::string tok; is >> tok;) out.push_back(tok);
    return out;
}

/// Multiset token overlap F1. Two empty strings agree perfectly; one empty side scores 0.
inline double token_f1(const std::string& prediction, const std::string& reference) {
    const auto pred = whitespace_tokens(prediction);
    const auto ref = whitespace_tokens(reference);
    if (pred.empty() && ref.empty()) return 1.0;
    if (pred.empty() || ref.empty()) return 0.0;
    std::map<std::string, int> counts;
    for (const auto& t : ref) ++counts[t];
    std::size_t common = 0;
    for (const auto& t : pred) {
        if (auto it = counts.find(t); it != counts.end() && it->second > 0) {
            --it->second;
            ++common;
        }
    }
    if (common == 0) return 0.0;
    const double precision = static_cast<double>(common) / static_cast<double>(pred.size());
    const double recall = static_cast<double>(common) / static_cast<double>(ref.size());
    return 2.0 * precision * recall / (precision + recall);
}

/// Mean per-example score: exact match for classification, token F1 for generation.
inline double score_predictions(TaskType type, const std::vector<std::string>& predictions,
                                const std::vector<Example>& examples) {
    detail::require_input(!examples.empty(), "score_predictions: empty split");
    detail::require(predictions.size() == examples.size(), "score_predictions: prediction count mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        total += type == TaskType::Classification ? (predictions[i] == examples[i].output ? 1.0 : 0.0)
                                                  : token_f1(predictions[i], examples[i].output);
    }
    return total / static_cast<double>(examples.size());
}

/// (method - baseline) / baseline, or nullopt when the baseline is below epsilon.
inline std::optional<double> relative_gain(double method_score, double baseline_score, double epsilon) {
    detail::require(method_score >= 0.0 && baseline_score >= 0.0, "relative_gain: scores must be non-negative");
    if (baseline_score < epsilon) return std::nullopt;
    return (method_score - baseline_score) / baseline_score;
}

struct Aggregate {
    double arg = 0.0;
    double rgstd = 0.0;
};

/// Mean and population standard deviation of the included gains.
inline Aggregate aggregate(const std::vector<double>& gains) {
    detail::require_input(!gains.empty(), "aggregate: every task was excluded");
    const double n = static_cast<double>(gains.size());
    double mean = 0.0;
    for (double g : gains) mean += g;
    mean /= n;
    double var = 0.0;
    for (double g : gains) var += (g - mean) * (g - mean);
    return {mean, std::sqrt(var / n)};
}

struct TaskScore {
    std::string task;
    TaskType task_type = TaskType::Generation;
    double method_score = 0.0;
    double baseline_score = 0.0;
    std::optional<double> relative_gain;  // nullopt means excluded

    bool excluded() const { return !relative_gain.has_value(); }
};

struct EvalReport {
    std::string name;  // combination abbreviation or free-form label
    std::vector<TaskScore> per_task;
    double arg = 0.0;
    double rgstd = 0.0;
    std::vector<std::string> excluded;
};

struct ScorePair {
    std::string task;
    TaskType task_type = TaskType::Generation;
    double method_score = 0.0;
    double baseline_score = 0.0;
};

inline EvalReport make_report(std::string name, const std::vector<ScorePair>& scores, double epsilon) {
    EvalReport r;
    r.name = std::move(name);
    std::vector<double> gains;
    for (const auto& s : scores) {
        TaskScore ts{s.task, s.task_type, s.method_score, s.baseline_score,
                     relative_gain(s.method_score, s.baseline_score, epsilon)};
        if (ts.excluded()) {
            r.excluded.push_back(ts.task);
        } else {
            gains.push_back(*ts.relative_gain);
        }
        r.per_task.push_back(std::move(ts));
    }
    const auto agg = aggregate(gains);
    r.arg = agg.arg;
    r.rgstd = agg.rgstd;
    return r;
}

/// Decimal text with enough digits to read back the same double.
inline std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline void write_report_jsonl(const EvalReport& r, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    detail::require_input(static_cast<bool>(os), "cannot write " + path.string());
    for (const auto& t : r.per_task) {
        nlohmann::json j{{"record", "task"},
                         {"report", r.name},
                         {"task", t.task},
                         {"task_type", to_string(t.task_type)},
                         {"method_score", t.method_score},
                         {"baseline_score", t.baseline_score},
                         {"excluded", t.excluded()}};
        j["relative_gain"] = t.relative_gain ? nlohmann::json(*t.relative_gain) : nlohmann::json(nullptr);
        os << j.dump() << "\n";
    }
    os << nlohmann::json{{"record", "summary"}, {"report", r.name}, {"arg", r.arg}, {"rgstd", r.rgstd},
                         {"excluded", r.excluded}}
              .dump()
       << "\n";
}

inline EvalReport read_report_jsonl(const std::filesystem::path& path) {
    std::ifstream is(path);
    detail::require_input(static_cast<bool>(is), "missing report file " + path.string());
    EvalReport r;
    bool have_summary = false;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            r.name = j.at("report").get<std::string>();
            if (j.at("record") == "task") {
                TaskScore t;
                t.task = j.at("task").get<std::string>();
                t.task_type = task_type_from_string(j.at("task_type").get<std::string>());
                t.method_score = j.at("method_score").get<double>();
                t.baseline_score = j.at("baseline_score").get<double>();
                if (!j.at("relative_gain").is_null()) t.relative_gain = j.at("relative_gain").get<double>();
                r.per_task.push_back(std::move(t));
            } else {
                r.arg = j.at("arg").get<double>();
                r.rgstd = j.at("rgstd").get<double>();
                r.excluded = j.at("excluded").get<std::vector<std::string>>();
                have_summary = true;
            }
        } catch (const nlohmann::json::exception& e) {
            throw InputError(where + "malformed report record (" + e.what() + ")");
        }
    }
    detail::require_input(have_summary, path.string() + ": no summary record");
    return r;
}

inline void write_report_csv(const EvalReport& r, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    detail::require_input(static_cast<bool>(os), "cannot write " + path.string());
    os << "task,task_type,method_score,baseline_score,relative_gain,excluded\n";
    for (const auto& t : r.per_task) {
        os << t.task << ',' << to_string(t.task_type) << ',' << format_double(t.method_score) << ','
           << format_double(t.baseline_score) << ',' << (t.relative_gain ? format_double(*t.relative_gain) : "") << ','
           << (t.excluded() ? "true" : "false") << "\n";
    }
}

}  // namespace primer
