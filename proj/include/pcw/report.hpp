#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include <pcw/error.hpp>

namespace pcw {

enum class Method { Sequential, PCW, PE };

inline std::string method_name(Method m) {
    switch (m) {
        case Method::Sequential: return "seq";
        case Method::PCW: return "pcw";
        case Method::PE: return "pe";
    }
    fail("InvalidConfig", "unknown method enum value");
}

inline Method parse_method(const std::string& name) {
    if (name == "seq") return Method::Sequential;
    if (name == "pcw") return Method::PCW;
    if (name == "pe") return Method::PE;
    fail("InvalidConfig", "unknown method \"" + name + "\" (expected seq|pcw|pe)");
}

// ---------------------------------------------------------------------------
// Evaluation reports: one JSON document per run, stable field order, schema 1.
// ---------------------------------------------------------------------------

inline constexpr int kReportSchema = 1;

struct SeedResult {
    std::uint64_t seed = 0;
    double metric = 0.0; // accuracy or exact-match rate for this seed
    std::size_t evaluated = 0;
    std::size_t skipped = 0;
};

struct SampleRecord {
    std::uint64_t seed = 0;
    std::size_t id = 0; // index into the evaluated split
    std::string prediction;
    std::string gold;
    bool correct = false;
    bool skipped = false;
    std::string error_tag;   // machine tag (e.g. ContextOverflow) or annotation
    std::string trajectory;  // full decoded text; cot runs only
};

struct EvalReport {
    std::string task;    // "classification" | "cot"
    std::string dataset; // dataset name (file stem)
    std::string split;   // which split was evaluated
    std::string method;  // "seq" | "pcw" | "pe"
    std::string scoring; // "raw-logit" | "log-prob" | "" for cot
    std::size_t num_windows = 1;
    std::size_t shots = 0;
    std::size_t cap = 0;
    std::vector<SeedResult> per_seed;
    double mean = 0.0;
    double std_dev = 0.0; // population standard deviation over per_seed metrics
    std::vector<SampleRecord> per_sample; // present only when requested

    void aggregate() {
        double m = 0.0;
        for (const auto& s : per_seed) m += s.metric;
        mean = per_seed.empty() ? 0.0 : m / double(per_seed.size());
        double var = 0.0;
        for (const auto& s : per_seed) var += (s.metric - mean) * (s.metric - mean);
        std_dev = per_seed.empty() ? 0.0 : std::sqrt(var / double(per_seed.size()));
    }
};

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["schema"] = kReportSchema;
    j["task"] = r.task;
    j["dataset"] = r.dataset;
    j["split"] = r.split;
    j["method"] = r.method;
    if (!r.scoring.empty()) j["scoring"] = r.scoring;
    j["num_windows"] = r.num_windows;
    j["shots"] = r.shots;
    j["cap"] = r.cap;
    j["per_seed"] = nlohmann::ordered_json::array();
    for (const auto& s : r.per_seed) {
        nlohmann::ordered_json row;
        row["seed"] = s.seed;
        row["metric"] = s.metric;
        row["evaluated"] = s.evaluated;
        row["skipped"] = s.skipped;
        j["per_seed"].push_back(std::move(row));
    }
    j["mean"] = r.mean;
    j["std"] = r.std_dev;
    if (!r.per_sample.empty()) {
        j["per_sample"] = nlohmann::ordered_json::array();
        for (const auto& s : r.per_sample) {
            nlohmann::ordered_json row;
            row["seed"] = s.seed;
            row["id"] = s.id;
            row["prediction"] = s.prediction;
            row["gold"] = s.gold;
            row["correct"] = s.correct;
            row["skipped"] = s.skipped;
            row["error_tag"] = s.error_tag;
            if (r.task == "cot") row["trajectory"] = s.trajectory;
            j["per_sample"].push_back(std::move(row));
        }
    }
    return j;
}

inline std::string report_to_string(const EvalReport& r) {
    return report_to_json(r).dump(2) + "\n";
}

inline void write_report(const EvalReport& r, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("OutputNotWritable", "cannot open " + path + " for writing");
    const std::string text = report_to_string(r);
    out.write(text.data(), std::streamsize(text.size()));
    if (!out) fail("OutputNotWritable", "failed writing " + path);
}

} // namespace pcw
