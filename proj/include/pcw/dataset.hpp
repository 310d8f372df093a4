#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include <pcw/error.hpp>
#include <pcw/layout.hpp>

namespace pcw {

// ---------------------------------------------------------------------------
// JSONL datasets. Canonical form: exactly the bytes serialize_* emits —
// compact JSON (nlohmann dump()), fixed key order, one record per line,
// train/demo rows before test rows, trailing newline. save(load(x)) == x for
// canonical files.
// ---------------------------------------------------------------------------

struct ClassificationSample {
    std::string text;
    std::string label;
};

struct ClassificationDataset {
    std::string name; // file stem
    std::vector<ClassificationSample> train;
    std::vector<ClassificationSample> test;
    std::vector<std::string> label_set; // order as declared in the header
};

struct CotTrajectory {
    std::string question;
    std::string thought;
    std::string answer;
};

struct CotTest {
    std::string question;
    std::string gold_answer;
};

struct CotDataset {
    std::string name;
    std::vector<CotTrajectory> demo_pool;
    std::vector<CotTest> test;
};

inline Demonstration to_demonstration(const ClassificationSample& s) {
    return {s.text, s.label};
}

// The trajectory's text form under PromptTemplate::cot(): the output carries
// the thought plus its own "Answer:" line.
inline Demonstration to_demonstration(const CotTrajectory& t) {
    return {t.question, t.thought + "\nAnswer: " + t.answer};
}

namespace detail {

inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("DatasetNotFound", "cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

inline nlohmann::ordered_json parse_line(const std::string& line, std::size_t line_no) {
    try {
        return nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        fail("ParseError", "line " + std::to_string(line_no) + ": " + e.what());
    }
}

inline std::string string_field(const nlohmann::ordered_json& j, const char* key,
                                std::size_t line_no) {
    if (!j.contains(key) || !j[key].is_string())
        fail("ParseError", "line " + std::to_string(line_no) + ": missing string field \"" +
                               key + "\"");
    return j[key].get<std::string>();
}

inline std::string file_stem(const std::string& path) {
    return std::filesystem::path(path).stem().string();
}

} // namespace detail

// ---------------------------------------------------------------------------
// Classification: {"kind":"labels","labels":[...]} header, then
// {"split":"train"|"test","text":...,"label":...} rows.
// ---------------------------------------------------------------------------

inline ClassificationDataset load_classification(const std::string& path) {
    const auto lines = detail::read_lines(path);
    ClassificationDataset ds;
    ds.name = detail::file_stem(path);

    bool have_header = false;
    std::set<std::string> known;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::size_t line_no = i + 1;
        if (lines[i].empty()) continue;
        const auto j = detail::parse_line(lines[i], line_no);

        if (!have_header) {
            if (detail::string_field(j, "kind", line_no) != "labels")
                fail("ParseError",
                     "line " + std::to_string(line_no) + ": first record must be the labels header");
            if (!j.contains("labels") || !j["labels"].is_array() || j["labels"].empty())
                fail("ParseError", "line " + std::to_string(line_no) +
                                       ": header needs a non-empty \"labels\" array");
            for (const auto& l : j["labels"]) {
                if (!l.is_string() || l.get<std::string>().empty())
                    fail("ParseError", "line " + std::to_string(line_no) +
                                           ": labels must be non-empty strings");
                const std::string label = l.get<std::string>();
                if (!known.insert(label).second)
                    fail("ParseError", "line " + std::to_string(line_no) +
                                           ": duplicate label \"" + label + "\"");
                ds.label_set.push_back(label);
            }
            have_header = true;
            continue;
        }

        ClassificationSample sample;
        const std::string split = detail::string_field(j, "split", line_no);
        sample.text = detail::string_field(j, "text", line_no);
        sample.label = detail::string_field(j, "label", line_no);
        if (!known.count(sample.label))
            fail("UnknownLabel", "line " + std::to_string(line_no) + ": label \"" +
                                     sample.label + "\" not declared in the header");
        if (split == "train")
            ds.train.push_back(std::move(sample));
        else if (split == "test")
            ds.test.push_back(std::move(sample));
        else
            fail("ParseError", "line " + std::to_string(line_no) + ": unknown split \"" +
                                   split + "\"");
    }
    if (!have_header) fail("ParseError", "line 1: dataset file has no labels header");
    return ds;
}

inline std::string serialize_classification(const ClassificationDataset& ds) {
    std::string out;
    nlohmann::ordered_json header;
    header["kind"] = "labels";
    header["labels"] = ds.label_set;
    out += header.dump();
    out += '\n';
    auto row = [&](const char* split, const ClassificationSample& s) {
        nlohmann::ordered_json j;
        j["split"] = split;
        j["text"] = s.text;
        j["label"] = s.label;
        out += j.dump();
        out += '\n';
    };
    for (const auto& s : ds.train) row("train", s);
    for (const auto& s : ds.test) row("test", s);
    return out;
}

// ---------------------------------------------------------------------------
// CoT: {"split":"demo","question":...,"thought":...,"answer":...} and
// {"split":"test","question":...,"answer":...} rows, no header.
// ---------------------------------------------------------------------------

inline CotDataset load_cot(const std::string& path) {
    const auto lines = detail::read_lines(path);
    CotDataset ds;
    ds.name = detail::file_stem(path);

    bool saw_row = false;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::size_t line_no = i + 1;
        if (lines[i].empty()) continue;
        const auto j = detail::parse_line(lines[i], line_no);
        saw_row = true;

        const std::string split = detail::string_field(j, "split", line_no);
        if (split == "demo") {
            CotTrajectory t;
            t.question = detail::string_field(j, "question", line_no);
            t.thought = detail::string_field(j, "thought", line_no);
            t.answer = detail::string_field(j, "answer", line_no);
            ds.demo_pool.push_back(std::move(t));
        } else if (split == "test") {
            CotTest t;
            t.question = detail::string_field(j, "question", line_no);
            t.gold_answer = detail::string_field(j, "answer", line_no);
            ds.test.push_back(std::move(t));
        } else {
            fail("ParseError", "line " + std::to_string(line_no) + ": unknown split \"" +
                                   split + "\"");
        }
    }
    if (!saw_row) fail("ParseError", "line 1: cot dataset file is empty");
    return ds;
}

inline std::string serialize_cot(const CotDataset& ds) {
    std::string out;
    for (const auto& t : ds.demo_pool) {
        nlohmann::ordered_json j;
        j["split"] = "demo";
        j["question"] = t.question;
        j["thought"] = t.thought;
        j["answer"] = t.answer;
        out += j.dump();
        out += '\n';
    }
    for (const auto& t : ds.test) {
        nlohmann::ordered_json j;
        j["split"] = "test";
        j["question"] = t.question;
        j["answer"] = t.gold_answer;
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline void save_text(const std::string& text, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("OutputNotWritable", "cannot open " + path + " for writing");
    out.write(text.data(), std::streamsize(text.size()));
    if (!out) fail("OutputNotWritable", "failed writing " + path);
}

inline void save_classification(const ClassificationDataset& ds, const std::string& path) {
    save_text(serialize_classification(ds), path);
}

inline void save_cot(const CotDataset& ds, const std::string& path) {
    save_text(serialize_cot(ds), path);
}

} // namespace pcw
