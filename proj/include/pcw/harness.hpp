#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <map>
#include <mutex>
#include <numeric>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <pcw/dataset.hpp>
#include <pcw/ensemble.hpp>
#include <pcw/error.hpp>
#include <pcw/inference.hpp>
#include <pcw/model.hpp>
#include <pcw/report.hpp>

namespace pcw {

// ---------------------------------------------------------------------------
// Seeded demonstration sampling (uniform, without replacement)
// ---------------------------------------------------------------------------

inline std::vector<std::size_t> sample_indices(std::size_t pool, std::size_t n,
                                               std::uint64_t seed) {
    if (n > pool)
        fail("NotEnoughTrain", "asked for " + std::to_string(n) + " demonstrations from " +
                                   std::to_string(pool));
    std::vector<std::size_t> idx(pool);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) // partial Fisher-Yates; order = draw order
        std::swap(idx[i], idx[i + rng.below(pool - i)]);
    idx.resize(n);
    return idx;
}

inline std::vector<Demonstration> sample_demonstrations(const ClassificationDataset& ds,
                                                        std::size_t n, std::uint64_t seed) {
    std::vector<Demonstration> demos;
    for (std::size_t i : sample_indices(ds.train.size(), n, seed))
        demos.push_back(to_demonstration(ds.train[i]));
    return demos;
}

inline std::vector<Demonstration> sample_demonstrations(const CotDataset& ds, std::size_t n,
                                                        std::uint64_t seed) {
    std::vector<Demonstration> demos;
    for (std::size_t i : sample_indices(ds.demo_pool.size(), n, seed))
        demos.push_back(to_demonstration(ds.demo_pool[i]));
    return demos;
}

// ---------------------------------------------------------------------------
// Exact match: lowercase -> strip punctuation -> collapse whitespace -> drop
// the articles a/an/the. ASCII-only on purpose; the rule is pinned in README.
// ---------------------------------------------------------------------------

namespace detail {

inline bool ascii_punct(unsigned char c) {
    return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) ||
           (c >= 123 && c <= 126);
}
inline bool ascii_space(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}
inline char ascii_lower(unsigned char c) {
    return (c >= 'A' && c <= 'Z') ? char(c + 32) : char(c);
}

} // namespace detail

inline std::string normalize_answer(std::string_view text) {
    std::string cleaned;
    cleaned.reserve(text.size());
    for (unsigned char c : text)
        if (!detail::ascii_punct(c)) cleaned.push_back(detail::ascii_lower(c));

    std::string out;
    std::string word;
    auto flush = [&] {
        if (word.empty()) return;
        if (word != "a" && word != "an" && word != "the") {
            if (!out.empty()) out.push_back(' ');
            out += word;
        }
        word.clear();
    };
    for (unsigned char c : cleaned) {
        if (detail::ascii_space(c))
            flush();
        else
            word.push_back(char(c));
    }
    flush();
    return out;
}

inline bool exact_match(std::string_view prediction, std::string_view gold) {
    return normalize_answer(prediction) == normalize_answer(gold);
}

// First "Answer:" in the generated text, up to the end of its line, trimmed.
inline std::string extract_answer(std::string_view text,
                                  std::string_view marker = "Answer:") {
    const std::size_t at = text.find(marker);
    if (at == std::string_view::npos) return "";
    std::string_view rest = text.substr(at + marker.size());
    const std::size_t nl = rest.find('\n');
    if (nl != std::string_view::npos) rest = rest.substr(0, nl);
    while (!rest.empty() && (rest.front() == ' ' || rest.front() == '\t' || rest.front() == '\r'))
        rest.remove_prefix(1);
    while (!rest.empty() && (rest.back() == ' ' || rest.back() == '\t' || rest.back() == '\r'))
        rest.remove_suffix(1);
    return std::string(rest);
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct EvalOptions {
    Method method = Method::Sequential;
    std::size_t num_windows = 1;
    std::size_t shots = 4;
    std::vector<std::uint64_t> seeds = {0};
    std::size_t cap = 1000; // cot callers usually lower this to 500
    ScoreKind scoring = ScoreKind::RawLogit;
    PackStrategy strategy = PackStrategy::Even;
    std::string split = "test"; // classification may evaluate "train" instead
    std::size_t jobs = 1;       // seed-level parallelism; never changes results
    bool keep_samples = false;  // retain per-sample records in the report
    PromptTemplate prompt_template;
    StopRule stop;           // cot decode stop rule
    std::size_t max_new = 96; // cot decode budget

    std::string scoring_name() const {
        return scoring == ScoreKind::RawLogit ? "raw-logit" : "log-prob";
    }
};

// One demonstration per window: the finest-grained PCW layout.
inline EvalOptions pcw_single_preset(std::size_t shots, EvalOptions base = {}) {
    if (shots == 0) fail("InvalidConfig", "pcw single needs at least one shot");
    base.method = Method::PCW;
    base.shots = shots;
    base.num_windows = shots;
    return base;
}

// ---------------------------------------------------------------------------
// Engines. evaluate_* is templated over an engine so oracles and stubs can
// stand in for the real model:
//   - copyable (each seed task works on its own copy)
//   - void set_demonstrations(const std::vector<Demonstration>&)
//   - classification: std::size_t classify(const std::string& input) const
//   - cot: DecodeResult generate(const std::string& question) const
// ---------------------------------------------------------------------------

class ModelEngine {
public:
    ModelEngine(const Model& model, const EvalOptions& opts,
                std::vector<std::string> labels = {})
        : model_(&model), opts_(opts), labels_(std::move(labels)) {}

    void set_demonstrations(const std::vector<Demonstration>& demos) {
        prefix_ = {};
        bank_ = {};
        window_prefixes_.clear();
        switch (opts_.method) {
            case Method::Sequential:
                prefix_ = precompute_prefix(
                    *model_, render_window_tokens(opts_.prompt_template, demos));
                break;
            case Method::PCW:
                bank_ = precompute_windows(*model_, window_token_groups(demos));
                break;
            case Method::PE:
                for (const auto& tokens : window_token_groups(demos))
                    window_prefixes_.push_back(precompute_prefix(*model_, tokens));
                break;
        }
    }

    std::size_t classify(const std::string& input) const {
        if (labels_.empty()) fail("EmptyLabel", "classification engine has no label set");
        const TokenSeq test = render_test_tokens(opts_.prompt_template, input);
        if (opts_.method == Method::PE) {
            EnsembleInput ens;
            for (const auto& prefix : window_prefixes_)
                ens.windows.push_back(score_labels(
                    *model_, sequential_continue(*model_, prefix, test), labels_,
                    opts_.scoring));
            return pe_predict(ens).best_index;
        }
        const InferContext ctx = opts_.method == Method::PCW
                                     ? pcw_continue(*model_, bank_, test)
                                     : sequential_continue(*model_, prefix_, test);
        return score_labels(*model_, ctx, labels_, opts_.scoring).best();
    }

    DecodeResult generate(const std::string& question) const {
        if (opts_.method == Method::PE)
            fail("InvalidConfig", "pe scores labels and has no free-form generation path");
        const TokenSeq test = render_test_tokens(opts_.prompt_template, question);
        InferContext ctx = opts_.method == Method::PCW
                               ? pcw_continue(*model_, bank_, test)
                               : sequential_continue(*model_, prefix_, test);
        return greedy_decode(*model_, std::move(ctx), opts_.stop, opts_.max_new);
    }

private:
    std::vector<TokenSeq> window_token_groups(const std::vector<Demonstration>& demos) const {
        PackOptions pack;
        pack.strategy = opts_.strategy;
        if (pack.strategy == PackStrategy::MaxFill) {
            // Windows get half the position budget; the rest stays free for
            // the test segment, which continues after the longest window.
            pack.token_budget = std::max<std::size_t>(1, model_->config.max_position / 2);
            pack.demo_costs.reserve(demos.size());
            for (const auto& d : demos)
                pack.demo_costs.push_back(
                    render_window_tokens(opts_.prompt_template, {&d, 1}).size());
        }
        const auto groups = segment_demonstrations(demos, opts_.num_windows, pack);
        std::vector<TokenSeq> windows;
        windows.reserve(groups.size());
        for (const auto& g : groups)
            windows.push_back(render_window_tokens(opts_.prompt_template, g));
        return windows;
    }

    const Model* model_;
    EvalOptions opts_;
    std::vector<std::string> labels_;
    PrefixState prefix_;                      // Sequential
    WindowBank bank_;                         // PCW
    std::vector<PrefixState> window_prefixes_; // PE
};

// Plumbing self-test stub: answers every known question with its gold label,
// so a correct pipeline must score EM = 1.0.
class GoldEchoEngine {
public:
    explicit GoldEchoEngine(const CotDataset& ds) {
        for (const auto& t : ds.test) gold_[t.question] = t.gold_answer;
    }
    void set_demonstrations(const std::vector<Demonstration>&) {}
    DecodeResult generate(const std::string& question) const {
        const auto it = gold_.find(question);
        DecodeResult r;
        r.text = "echoing the stored label.\nAnswer: " +
                 (it == gold_.end() ? std::string("unknown") : it->second) + "\n";
        r.tokens = tokenizer::tokenize(r.text);
        return r;
    }

private:
    std::map<std::string, std::string> gold_;
};

// ---------------------------------------------------------------------------
// Seed-parallel runner: work-stealing over seed indices, results written to
// per-seed slots, so reports never depend on the jobs setting.
// ---------------------------------------------------------------------------

namespace detail {

template <class Fn>
void run_seeds(std::size_t count, std::size_t jobs, Fn&& fn) {
    if (count == 0) return;
    jobs = std::max<std::size_t>(1, std::min(jobs, count));
    if (jobs == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                fn(i);
            } catch (...) {
                const std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

inline bool is_sample_skip(const Error& e) {
    return e.kind() == "ContextOverflow" || e.kind() == "PositionOverflow";
}

} // namespace detail

// ---------------------------------------------------------------------------
// Evaluation drivers
// ---------------------------------------------------------------------------

// Accuracy over min(cap, |split|) samples, one engine copy per seed. Samples
// whose context does not fit are skipped and counted, never truncated.
template <class Engine>
EvalReport evaluate_classification(const Engine& engine, const ClassificationDataset& ds,
                                   const EvalOptions& opts) {
    if (opts.seeds.empty()) fail("InvalidConfig", "need at least one seed");
    if (opts.split != "test" && opts.split != "train")
        fail("InvalidConfig", "split must be test or train, got \"" + opts.split + "\"");
    const auto& samples = opts.split == "test" ? ds.test : ds.train;
    const std::size_t n_eval = std::min(opts.cap, samples.size());

    EvalReport report;
    report.task = "classification";
    report.dataset = ds.name;
    report.split = opts.split;
    report.method = method_name(opts.method);
    report.scoring = opts.scoring_name();
    report.num_windows = opts.num_windows;
    report.shots = opts.shots;
    report.cap = opts.cap;
    report.per_seed.resize(opts.seeds.size());
    std::vector<std::vector<SampleRecord>> by_seed(opts.seeds.size());

    detail::run_seeds(opts.seeds.size(), opts.jobs, [&](std::size_t si) {
        Engine local = engine;
        local.set_demonstrations(sample_demonstrations(ds, opts.shots, opts.seeds[si]));
        SeedResult seed_result;
        seed_result.seed = opts.seeds[si];
        std::size_t correct = 0;
        for (std::size_t i = 0; i < n_eval; ++i) {
            SampleRecord rec;
            rec.seed = opts.seeds[si];
            rec.id = i;
            rec.gold = samples[i].label;
            try {
                rec.prediction = ds.label_set.at(local.classify(samples[i].text));
                rec.correct = rec.prediction == samples[i].label;
                ++seed_result.evaluated;
                correct += rec.correct ? 1 : 0;
            } catch (const Error& e) {
                if (!detail::is_sample_skip(e)) throw;
                rec.skipped = true;
                rec.error_tag = e.kind();
                ++seed_result.skipped;
            }
            if (opts.keep_samples) by_seed[si].push_back(std::move(rec));
        }
        seed_result.metric = seed_result.evaluated
                                 ? double(correct) / double(seed_result.evaluated)
                                 : 0.0;
        report.per_seed[si] = seed_result;
    });

    for (auto& recs : by_seed)
        report.per_sample.insert(report.per_sample.end(), recs.begin(), recs.end());
    report.aggregate();
    return report;
}

// Exact match over greedy-decoded answers; per-sample records keep the full
// trajectory so failures can be inspected and annotated.
template <class Engine>
EvalReport evaluate_cot(const Engine& engine, const CotDataset& ds, const EvalOptions& opts) {
    if (opts.seeds.empty()) fail("InvalidConfig", "need at least one seed");
    if (opts.method == Method::PE)
        fail("InvalidConfig", "pe scores labels and has no free-form generation path");
    if (opts.split != "test")
        fail("InvalidConfig", "cot datasets only carry a test split");
    const std::size_t n_eval = std::min(opts.cap, ds.test.size());

    EvalReport report;
    report.task = "cot";
    report.dataset = ds.name;
    report.split = "test";
    report.method = method_name(opts.method);
    report.num_windows = opts.num_windows;
    report.shots = opts.shots;
    report.cap = opts.cap;
    report.per_seed.resize(opts.seeds.size());
    std::vector<std::vector<SampleRecord>> by_seed(opts.seeds.size());

    detail::run_seeds(opts.seeds.size(), opts.jobs, [&](std::size_t si) {
        Engine local = engine;
        local.set_demonstrations(sample_demonstrations(ds, opts.shots, opts.seeds[si]));
        SeedResult seed_result;
        seed_result.seed = opts.seeds[si];
        std::size_t hits = 0;
        for (std::size_t i = 0; i < n_eval; ++i) {
            SampleRecord rec;
            rec.seed = opts.seeds[si];
            rec.id = i;
            rec.gold = ds.test[i].gold_answer;
            try {
                const DecodeResult decoded = local.generate(ds.test[i].question);
                rec.trajectory = decoded.text;
                rec.prediction = extract_answer(decoded.text);
                rec.correct = exact_match(rec.prediction, rec.gold);
                if (decoded.truncated) rec.error_tag = "truncated";
                ++seed_result.evaluated;
                hits += rec.correct ? 1 : 0;
            } catch (const Error& e) {
                if (!detail::is_sample_skip(e)) throw;
                rec.skipped = true;
                rec.error_tag = e.kind();
                ++seed_result.skipped;
            }
            if (opts.keep_samples) by_seed[si].push_back(std::move(rec));
        }
        seed_result.metric =
            seed_result.evaluated ? double(hits) / double(seed_result.evaluated) : 0.0;
        report.per_seed[si] = seed_result;
    });

    for (auto& recs : by_seed)
        report.per_sample.insert(report.per_sample.end(), recs.begin(), recs.end());
    report.aggregate();
    return report;
}

} // namespace pcw
