#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include <pcw/error.hpp>
#include <pcw/harness.hpp>
#include <pcw/report.hpp>

namespace pcw {

inline constexpr const char* kBinaryVersion = "1.0.0";

// Everything a run needs, in string form: the config file and the command
// line both write into this struct (flags win because they are applied last).
struct RunConfig {
    std::string model_path; // empty: $PCWLAB_MODEL_DIR/model.pcwm
    std::string data_path;
    std::string out_path; // empty: no report file written
    std::string method = "seq";
    std::string scoring = "raw-logit";
    std::string strategy = "even";
    std::string split = "test";
    std::string engine = "model"; // cot only: model | gold-echo
    std::string seeds;            // comma list; empty: 0..num_seeds-1
    std::string pw_sweep;         // cot only: comma list of window counts
    std::size_t num_seeds = 10;
    std::size_t shots = 4;
    std::size_t num_windows = 1;
    std::size_t cap = 1000;
    std::size_t jobs = 1;
    std::size_t max_new = 96;
    bool keep_samples = false;
    bool pcw_single = false; // preset: one demonstration per window
};

// ---------------------------------------------------------------------------
// Parsing helpers
// ---------------------------------------------------------------------------

inline std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> out;
    std::string item;
    auto flush = [&] {
        if (item.empty()) fail("ParseError", "empty entry in list \"" + text + "\"");
        std::size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(item, &used);
        } catch (const std::exception&) {
            fail("ParseError", "\"" + item + "\" is not a number");
        }
        if (used != item.size()) fail("ParseError", "\"" + item + "\" is not a number");
        out.push_back(v);
        item.clear();
    };
    for (char c : text) {
        if (c == ',')
            flush();
        else if (c != ' ')
            item.push_back(c);
    }
    if (!item.empty() || out.empty()) flush();
    return out;
}

inline std::vector<std::size_t> parse_size_list(const std::string& text) {
    std::vector<std::size_t> out;
    for (std::uint64_t v : parse_seed_list(text)) out.push_back(std::size_t(v));
    return out;
}

inline ScoreKind parse_scoring(const std::string& name) {
    if (name == "raw-logit") return ScoreKind::RawLogit;
    if (name == "log-prob") return ScoreKind::LogProb;
    fail("InvalidConfig", "unknown scoring \"" + name + "\" (expected raw-logit|log-prob)");
}

inline PackStrategy parse_strategy(const std::string& name) {
    if (name == "even") return PackStrategy::Even;
    if (name == "maxfill") return PackStrategy::MaxFill;
    fail("InvalidConfig", "unknown strategy \"" + name + "\" (expected even|maxfill)");
}

inline EvalOptions to_eval_options(const RunConfig& run, bool cot) {
    EvalOptions opts;
    opts.method = parse_method(run.method);
    opts.num_windows = run.num_windows;
    opts.shots = run.shots;
    opts.seeds = run.seeds.empty() ? std::vector<std::uint64_t>{} : parse_seed_list(run.seeds);
    if (opts.seeds.empty())
        for (std::uint64_t s = 0; s < run.num_seeds; ++s) opts.seeds.push_back(s);
    opts.cap = run.cap;
    opts.scoring = parse_scoring(run.scoring);
    opts.strategy = parse_strategy(run.strategy);
    opts.split = run.split;
    opts.jobs = run.jobs == 0 ? 1 : run.jobs;
    opts.keep_samples = run.keep_samples;
    opts.max_new = run.max_new;
    if (cot) opts.prompt_template = PromptTemplate::cot();
    if (run.pcw_single) opts = pcw_single_preset(run.shots, opts);
    return opts;
}

// ---------------------------------------------------------------------------
// JSON config file: same keys as the long flags; unknown keys are rejected so
// typos cannot silently fall back to defaults.
// ---------------------------------------------------------------------------

inline void apply_json_config(RunConfig& run, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) fail("DatasetNotFound", "config file not found: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail("ParseError", "config file " + path + ": " + e.what());
    }
    if (!j.is_object()) fail("ParseError", "config file " + path + " must hold a JSON object");

    auto str = [&](const char* key, std::string& slot) {
        if (!j.contains(key)) return;
        if (!j[key].is_string()) fail("ParseError", std::string("config key \"") + key + "\" must be a string");
        slot = j[key].get<std::string>();
    };
    auto num = [&](const char* key, std::size_t& slot) {
        if (!j.contains(key)) return;
        if (!j[key].is_number_unsigned()) fail("ParseError", std::string("config key \"") + key + "\" must be a non-negative integer");
        slot = j[key].get<std::size_t>();
    };
    auto flag = [&](const char* key, bool& slot) {
        if (!j.contains(key)) return;
        if (!j[key].is_boolean()) fail("ParseError", std::string("config key \"") + key + "\" must be a boolean");
        slot = j[key].get<bool>();
    };

    static const char* known[] = {"model", "data", "out", "method", "scoring", "strategy",
                                  "split", "engine", "seeds", "pw-sweep", "num-seeds",
                                  "shots", "windows", "cap", "jobs", "max-new",
                                  "keep-samples", "pcw-single"};
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) fail("ParseError", "unknown config key \"" + key + "\"");
        (void)value;
    }

    str("model", run.model_path);
    str("data", run.data_path);
    str("out", run.out_path);
    str("method", run.method);
    str("scoring", run.scoring);
    str("strategy", run.strategy);
    str("split", run.split);
    str("engine", run.engine);
    str("seeds", run.seeds);
    str("pw-sweep", run.pw_sweep);
    num("num-seeds", run.num_seeds);
    num("shots", run.shots);
    num("windows", run.num_windows);
    num("cap", run.cap);
    num("jobs", run.jobs);
    num("max-new", run.max_new);
    flag("keep-samples", run.keep_samples);
    flag("pcw-single", run.pcw_single);
}

inline std::string resolve_model_path(const RunConfig& run) {
    if (!run.model_path.empty()) return run.model_path;
    if (const char* dir = std::getenv("PCWLAB_MODEL_DIR"); dir && *dir)
        return std::string(dir) + "/model.pcwm";
    fail("InvalidConfig", "no model path: pass --model or set PCWLAB_MODEL_DIR");
}

// ---------------------------------------------------------------------------
// Output formatting
// ---------------------------------------------------------------------------

inline std::string error_json(const Error& e) {
    // what() is "Kind: message"; keep only the human part after the prefix.
    std::string message = e.what();
    if (message.rfind(e.kind() + ": ", 0) == 0) message = message.substr(e.kind().size() + 2);
    nlohmann::ordered_json j;
    j["error"]["kind"] = e.kind();
    j["error"]["message"] = message;
    return j.dump() + "\n";
}

inline std::string summary_header() {
    return "method  windows  shots  mean      std       evaluated  skipped\n";
}

inline std::string summary_row(const EvalReport& r) {
    std::size_t evaluated = 0, skipped = 0;
    for (const auto& s : r.per_seed) {
        evaluated += s.evaluated;
        skipped += s.skipped;
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-6s  %-7zu  %-5zu  %.6f  %.6f  %-9zu  %zu\n",
                  r.method.c_str(), r.num_windows, r.shots, r.mean, r.std_dev, evaluated,
                  skipped);
    return buf;
}

// report_pw3.json style names for sweep outputs.
inline std::string sweep_out_path(const std::string& base, std::size_t windows) {
    const std::string tag = "_pw" + std::to_string(windows);
    const std::size_t dot = base.rfind('.');
    const std::size_t slash = base.rfind('/');
    if (dot == std::string::npos || (slash != std::string::npos && dot < slash))
        return base + tag;
    return base.substr(0, dot) + tag + base.substr(dot);
}

} // namespace pcw
