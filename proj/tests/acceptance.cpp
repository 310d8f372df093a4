// Acceptance harness: nine end-to-end checks covering window isolation,
// sequential collapse, mask brute force, cache equivalence, rotary shift
// invariance, ensemble averaging, protocol shape, the exact-match normalizer,
// and report determinism. Prints one line per criterion and exits nonzero if
// any of them fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include <json.hpp>

#include <pcw/ensemble.hpp>
#include <pcw/harness.hpp>
#include <pcw/oracle.hpp>

using namespace pcw;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code = -1;
    std::string out;
};

CliResult run_cli(const std::string& args) {
    const std::string cmd = std::string(PCWLAB_BIN) + " " + args + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return {};
    CliResult r;
    char buf[4096];
    while (std::size_t n = fread(buf, 1, sizeof buf, pipe)) r.out.append(buf, n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string work_dir() {
    const fs::path dir = fs::temp_directory_path() / "pcw_acceptance";
    fs::create_directories(dir);
    return dir.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) return "<unreadable:" + path + ">";
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

ModelConfig token_config(std::size_t max_position) {
    ModelConfig c;
    c.vocab_size = 96; // token-level checks draw ids below this directly
    c.d_model = 16;
    c.n_heads = 2;
    c.n_layers = 2;
    c.d_ff = 32;
    c.max_position = max_position;
    c.init_seed = 3;
    return c;
}

ModelConfig text_config(std::size_t max_position) {
    ModelConfig c = token_config(max_position);
    c.vocab_size = 260; // full byte range plus the specials
    return c;
}

TokenSeq random_tokens(Rng& rng, std::size_t n, std::size_t vocab) {
    TokenSeq out(n);
    for (auto& t : out) t = Token(rng.below(vocab));
    return out;
}

bool rows_equal(const float* a, const float* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (a[i] != b[i]) return false;
    return true;
}

// --- criterion 1 -----------------------------------------------------------
// >=100 random prompts (<=4 windows, lengths <=32): window KV caches from the
// parallel pass match standalone runs bit for bit, and editing window j never
// moves window i's cached activations. Must finish inside a minute.
bool criterion1(std::string& note) {
    const auto t0 = std::chrono::steady_clock::now();
    const Model model = build_model(token_config(192));
    Rng rng(11);
    const std::size_t prompts = 100;

    for (std::size_t p = 0; p < prompts; ++p) {
        const std::size_t phi = 1 + rng.below(4);
        std::vector<TokenSeq> windows;
        std::vector<std::size_t> starts;
        std::size_t offset = 0;
        for (std::size_t w = 0; w < phi; ++w) {
            const std::size_t len = 1 + rng.below(32);
            starts.push_back(offset);
            offset += len;
            windows.push_back(random_tokens(rng, len, model.config.vocab_size));
        }
        const TokenSeq test = random_tokens(rng, 1 + rng.below(8), model.config.vocab_size);
        const InferContext ctx = pcw_infer(model, windows, test);

        // Standalone runs, compared into the merged cache slot ranges.
        std::vector<KVCache> alone(phi);
        for (std::size_t w = 0; w < phi; ++w) {
            forward(model, windows[w], build_sequential_layout(windows[w].size()), alone[w]);
            for (std::size_t layer = 0; layer < model.config.n_layers; ++layer) {
                const auto& merged = ctx.cache.layers[layer];
                const auto& solo = alone[w].layers[layer];
                for (std::size_t i = 0; i < windows[w].size(); ++i) {
                    if (!rows_equal(merged.k.row(starts[w] + i), solo.k.row(i), merged.k.cols) ||
                        !rows_equal(merged.v.row(starts[w] + i), solo.v.row(i), merged.v.cols)) {
                        note = "prompt " + std::to_string(p) + " window " + std::to_string(w) +
                               " cache differs from its standalone run";
                        return false;
                    }
                }
            }
            for (std::size_t i = 0; i < windows[w].size(); ++i) {
                if (ctx.cache.slot_positions[starts[w] + i] != int(i) ||
                    ctx.cache.slot_window[starts[w] + i] != int(w)) {
                    note = "prompt " + std::to_string(p) + " window " + std::to_string(w) +
                           " slot metadata is wrong";
                    return false;
                }
            }
        }

        // Perturb one window; the others' cached activations must not move.
        if (phi >= 2) {
            const std::size_t j = rng.below(phi);
            std::vector<TokenSeq> perturbed = windows;
            const std::size_t at = rng.below(perturbed[j].size());
            perturbed[j][at] =
                Token((perturbed[j][at] + 1 + rng.below(model.config.vocab_size - 1)) %
                      model.config.vocab_size);
            const InferContext ctx2 = pcw_infer(model, perturbed, test);
            for (std::size_t w = 0; w < phi; ++w) {
                if (w == j) continue;
                for (std::size_t layer = 0; layer < model.config.n_layers; ++layer) {
                    const auto& a = ctx.cache.layers[layer];
                    const auto& b = ctx2.cache.layers[layer];
                    for (std::size_t i = 0; i < windows[w].size(); ++i) {
                        if (!rows_equal(a.k.row(starts[w] + i), b.k.row(starts[w] + i), a.k.cols) ||
                            !rows_equal(a.v.row(starts[w] + i), b.v.row(starts[w] + i), a.v.cols)) {
                            note = "prompt " + std::to_string(p) + ": editing window " +
                                   std::to_string(j) + " changed window " + std::to_string(w);
                            return false;
                        }
                    }
                }
            }
        }
    }

    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    note = std::to_string(prompts) + " prompts, bit-identical caches, " + std::to_string(ms) +
           " ms";
    return ms < 60000;
}

// --- criterion 2 -----------------------------------------------------------
// phi=1 collapse: PCW logits match sequential within 1e-6 on 50 prompts, and
// the sequential/PCW/PE predictions coincide.
bool criterion2(std::string& note) {
    const Model model = build_model(text_config(256));
    Rng rng(23);
    double max_dev = 0.0;
    const std::vector<std::string> labels = {"alpha", "beta", "gamma"};

    for (std::size_t p = 0; p < 50; ++p) {
        // Logit-level comparison on random token prompts.
        const TokenSeq window = random_tokens(rng, 2 + rng.below(24), model.config.vocab_size);
        const TokenSeq test = random_tokens(rng, 1 + rng.below(8), model.config.vocab_size);
        TokenSeq flat = window;
        flat.insert(flat.end(), test.begin(), test.end());
        const InferContext a = pcw_infer(model, {window}, test);
        const InferContext b = sequential_infer(model, flat);
        for (std::size_t i = 0; i < a.last_logits.size(); ++i)
            max_dev = std::max(max_dev,
                               std::abs(double(a.last_logits[i]) - double(b.last_logits[i])));

        // Prediction-level comparison on a text prompt.
        PromptSpec spec;
        spec.label_set = labels;
        spec.test_input = "item " + std::to_string(p);
        const std::size_t shots = 2 + rng.below(3);
        for (std::size_t d = 0; d < shots; ++d)
            spec.demonstrations.push_back(
                {"case " + std::to_string(rng.below(1000)), labels[rng.below(labels.size())]});
        const MethodComparison cmp = compare_methods(model, spec, 1);
        if (!cmp.all_agree()) {
            note = "prompt " + std::to_string(p) + ": methods disagree at phi=1";
            return false;
        }
    }
    note = "50 prompts, max logit deviation " + std::to_string(max_dev);
    return max_dev <= 1e-6;
}

// --- criterion 3 -----------------------------------------------------------
bool criterion3(std::string& note) {
    const OracleResult r = check_mask_brute_force({});
    note = std::to_string(r.cases) + " layouts, " +
           std::to_string(std::size_t(r.max_deviation)) + " mismatches";
    return r.passed;
}

// --- criterion 4 -----------------------------------------------------------
// Cached two-phase forward vs monolithic, for 20 prompts at EVERY split point.
bool criterion4(std::string& note) {
    const Model model = build_model(token_config(64));
    Rng rng(31);
    double max_dev = 0.0;

    for (std::size_t p = 0; p < 20; ++p) {
        const std::size_t n = 4 + rng.below(13);
        const TokenSeq tokens = random_tokens(rng, n, model.config.vocab_size);
        const WindowLayout layout = build_sequential_layout(n);
        const Matrix mono = forward(model, tokens, layout);

        for (std::size_t split = 1; split < n; ++split) {
            KVCache cache;
            forward(model, std::span<const Token>(tokens).subspan(0, split), layout, cache);
            const Matrix cont =
                forward(model, std::span<const Token>(tokens).subspan(split), layout, cache);
            for (std::size_t r = 0; r < cont.rows; ++r)
                for (std::size_t c = 0; c < cont.cols; ++c)
                    max_dev = std::max(max_dev, std::abs(double(cont.at(r, c)) -
                                                         double(mono.at(split + r, c))));
        }
    }
    note = "20 prompts x all split points, max deviation " + std::to_string(max_dev);
    return max_dev <= 1e-5;
}

// --- criterion 5 -----------------------------------------------------------
bool criterion5(std::string& note) {
    const OracleResult r = check_rope_shift({});
    note = std::to_string(r.cases) + " triples, max deviation " +
           std::to_string(r.max_deviation) + ", absolute scheme contrast verified";
    if (!r.passed) note = r.detail;
    return r.passed;
}

// --- criterion 6 -----------------------------------------------------------
bool criterion6(std::string& note) {
    const OracleResult r = check_pe_averaging({});
    note = std::to_string(r.cases) +
           " cases incl. permutation and add-constant invariance, max deviation " +
           std::to_string(r.max_deviation);
    if (!r.passed) note = r.detail;
    return r.passed;
}

// --- criterion 7 -----------------------------------------------------------
// Protocol shape through the CLI: a 10-seed cap-1000 classification report
// whose aggregates recompute from per_seed within 1e-9, and a #PW in {1,2,3}
// chain-of-thought sweep at fixed shots.
bool criterion7(std::string& note) {
    const std::string dir = work_dir();
    const std::string model_file = dir + "/model.pcwm";
    const std::string classify_data = std::string(PCW_DATA_DIR) + "/pattern_classify.jsonl";
    const std::string cot_data = std::string(PCW_DATA_DIR) + "/two_hop_lookup.jsonl";

    CliResult r = run_cli("make-model --out " + model_file +
                          " --d-model 16 --heads 2 --layers 2 --d-ff 32 --max-pos 512 --seed 5");
    if (r.code != 0) {
        note = "make-model failed";
        return false;
    }

    const std::string shape_report = dir + "/shape.json";
    r = run_cli("run-classify --model " + model_file + " --data " + classify_data +
                " --method pcw --windows 2 --shots 4 --num-seeds 10 --cap 1000 --jobs 4" +
                " --out " + shape_report);
    if (r.code != 0) {
        note = "run-classify failed: " + r.out;
        return false;
    }
    const json report = json::parse(slurp(shape_report), nullptr, false);
    if (report.is_discarded() || report.at("per_seed").size() != 10 ||
        report.at("cap") != 1000) {
        note = "classification report malformed";
        return false;
    }
    double mean = 0.0;
    for (const auto& s : report.at("per_seed")) mean += s.at("metric").get<double>();
    mean /= double(report.at("per_seed").size());
    double var = 0.0;
    for (const auto& s : report.at("per_seed")) {
        const double d = s.at("metric").get<double>() - mean;
        var += d * d;
    }
    const double std_dev = std::sqrt(var / double(report.at("per_seed").size()));
    const double mean_err = std::abs(mean - report.at("mean").get<double>());
    const double std_err = std::abs(std_dev - report.at("std").get<double>());
    if (mean_err > 1e-9 || std_err > 1e-9) {
        note = "aggregates do not recompute: dmean=" + std::to_string(mean_err) +
               " dstd=" + std::to_string(std_err);
        return false;
    }

    const std::string sweep_report = dir + "/table3.json";
    r = run_cli("run-cot --model " + model_file + " --data " + cot_data +
                " --shots 3 --seeds 0,1 --cap 3 --max-new 8 --pw-sweep 1,2,3 --out " +
                sweep_report);
    if (r.code != 0) {
        note = "run-cot sweep failed: " + r.out;
        return false;
    }
    for (std::size_t w : {1, 2, 3}) {
        const std::string path = dir + "/table3_pw" + std::to_string(w) + ".json";
        const json sweep = json::parse(slurp(path), nullptr, false);
        if (sweep.is_discarded() || sweep.at("num_windows") != w ||
            sweep.at("method") != "pcw" || sweep.at("task") != "cot" ||
            sweep.at("shots") != 3) {
            note = "sweep report for " + std::to_string(w) + " windows is malformed";
            return false;
        }
    }
    std::size_t rows = 0;
    for (char ch : r.out)
        if (ch == '\n') ++rows;
    if (rows != 4) { // header plus one line per #PW
        note = "sweep table has " + std::to_string(rows) + " lines, expected 4";
        return false;
    }
    note = "10-seed report recomputes (dmean<=1e-9); #PW {1,2,3} sweep emitted";
    return true;
}

// --- criterion 8 -----------------------------------------------------------
bool criterion8(std::string& note) {
    const struct {
        const char* prediction;
        const char* gold;
        bool match;
    } table[] = {
        {"richard nixon", "Richard Nixon", true},
        {"Richard  Nixon.", "Richard Nixon", true},
        {"Nixon", "Richard Nixon", false},
        {"Saimaa Gesture", "The Saimaa Gesture", true},
        {"the  saimaa   gesture", "The Saimaa Gesture", true},
        {"THE SAIMAA GESTURE", "The Saimaa Gesture", true},
        {"1800 to 7000 ft", "1,800 to 7,000 ft", true},
        {"1,800 to 7,000 ft.", "1,800 to 7,000 ft", true},
        {"1800 to 7000 feet", "1,800 to 7,000 ft", false},
        {"walk in park", "A Walk in the Park", true},
        {"apple", "an apple", true},
        {"apples", "apple", false},
        {"NewYork City", "New-York City", true},
        {"dont", "don't", true},
        {"the", "", true},
        {"answer ", "Answer", true},
        {"7.0", "7", false},
        {"U.S.", "US", true},
        {" norway\t", "Norway", true},
        {"the ater", "Theater", false},
    };
    std::size_t checked = 0, wrong = 0;
    for (const auto& row : table) {
        ++checked;
        if (exact_match(row.prediction, row.gold) != row.match) ++wrong;
    }
    note = std::to_string(checked) + " cases, " + std::to_string(wrong) + " wrong";
    return checked == 20 && wrong == 0;
}

// --- criterion 9 -----------------------------------------------------------
// Byte-identical reports across reruns and --jobs values, for both tasks.
bool criterion9(std::string& note) {
    const std::string dir = work_dir();
    const std::string model_file = dir + "/model.pcwm";
    if (!fs::exists(model_file)) {
        const CliResult r = run_cli(
            "make-model --out " + model_file +
            " --d-model 16 --heads 2 --layers 2 --d-ff 32 --max-pos 512 --seed 5");
        if (r.code != 0) {
            note = "make-model failed";
            return false;
        }
    }
    const std::string classify_data = std::string(PCW_DATA_DIR) + "/pattern_classify.jsonl";
    const std::string cot_data = std::string(PCW_DATA_DIR) + "/two_hop_lookup.jsonl";

    const std::string base = "run-classify --model " + model_file + " --data " +
                             classify_data +
                             " --method pe --windows 2 --shots 4 --seeds 0,1,2,3 --cap 16"
                             " --keep-samples --out ";
    const std::string j1 = dir + "/det_j1.json";
    const std::string j7 = dir + "/det_j7.json";
    const std::string j1b = dir + "/det_j1b.json";
    if (run_cli(base + j1 + " --jobs 1").code != 0 ||
        run_cli(base + j7 + " --jobs 7").code != 0 ||
        run_cli(base + j1b + " --jobs 1").code != 0) {
        note = "classification runs failed";
        return false;
    }
    if (slurp(j1) != slurp(j7) || slurp(j1) != slurp(j1b)) {
        note = "classification reports differ across jobs or reruns";
        return false;
    }

    const std::string cot_base = "run-cot --engine gold-echo --data " + cot_data +
                                 " --shots 3 --seeds 0,1 --keep-samples --out ";
    const std::string g1 = dir + "/det_g1.json";
    const std::string g2 = dir + "/det_g2.json";
    if (run_cli(cot_base + g1 + " --jobs 1").code != 0 ||
        run_cli(cot_base + g2 + " --jobs 3").code != 0) {
        note = "cot runs failed";
        return false;
    }
    if (slurp(g1) != slurp(g2)) {
        note = "cot reports differ across jobs";
        return false;
    }
    note = "classification jobs {1,7} + rerun and cot jobs {1,3} all byte-identical";
    return true;
}

} // namespace

int main() {
    struct Criterion {
        const char* name;
        bool (*fn)(std::string&);
    };
    const Criterion criteria[] = {
        {"window isolation", criterion1},   {"phi=1 collapse", criterion2},
        {"mask brute force", criterion3},   {"cache equivalence", criterion4},
        {"rope shift invariance", criterion5}, {"pe averaging oracle", criterion6},
        {"protocol shape", criterion7},     {"exact-match normalizer", criterion8},
        {"report determinism", criterion9},
    };

    int failures = 0;
    int index = 0;
    for (const auto& c : criteria) {
        ++index;
        std::string note;
        bool ok = false;
        try {
            ok = c.fn(note);
        } catch (const std::exception& e) {
            note = e.what();
        }
        std::printf("[%s] criterion %d: %s — %s\n", ok ? "PASS" : "FAIL", index, c.name,
                    note.c_str());
        if (!ok) ++failures;
    }
    if (failures) {
        std::printf("%d of 9 criteria failed\n", failures);
        return 1;
    }
    std::printf("all 9 criteria passed\n");
    return 0;
}
