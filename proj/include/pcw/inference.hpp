#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <pcw/error.hpp>
#include <pcw/layout.hpp>
#include <pcw/model.hpp>
#include <pcw/tokenizer.hpp>

namespace pcw {

// ---------------------------------------------------------------------------
// Prompt rendering
// ---------------------------------------------------------------------------

struct PromptTemplate {
    std::string input_prefix = "input: ";
    std::string output_prefix = "output: ";
    std::string separator = "\n";

    // "input: <x>\noutput: <y>\n" under the defaults
    std::string demonstration(const Demonstration& d) const {
        if (d.output_text.empty())
            fail("EmptyInput", "demonstration output must be non-empty");
        return input_prefix + d.input_text + separator + output_prefix + d.output_text +
               separator;
    }

    // "input: <x>\noutput: " — the model continues right after the prefix
    std::string test_prompt(const std::string& test_input) const {
        return input_prefix + test_input + separator + output_prefix;
    }

    static PromptTemplate classification() { return {}; }

    // Question/Thought/Answer framing; the demonstration's output_text holds
    // the full trajectory after "Thought: " (including its "Answer: ..." line).
    static PromptTemplate cot() { return {"Question: ", "Thought: ", "\n"}; }
};

struct PromptSpec {
    std::vector<Demonstration> demonstrations;
    std::string test_input;
    std::vector<std::string> label_set; // empty means "no label set"
    PromptTemplate prompt_template;

    void validate() const {
        std::set<std::string> seen;
        for (const auto& l : label_set)
            if (!seen.insert(l).second)
                fail("InvalidConfig", "label set contains duplicate \"" + l + "\"");
    }
};

inline TokenSeq render_window_tokens(const PromptTemplate& tmpl,
                                     std::span<const Demonstration> demos) {
    std::string text;
    for (const auto& d : demos) text += tmpl.demonstration(d);
    return tokenizer::tokenize(text);
}

inline TokenSeq render_test_tokens(const PromptTemplate& tmpl, const std::string& test_input) {
    return tokenizer::tokenize(tmpl.test_prompt(test_input));
}

// ---------------------------------------------------------------------------
// Inference paths
// ---------------------------------------------------------------------------

// A finished inference pass: cache and layout cover every processed slot, and
// last_logits is the next-token distribution after the final one. Label
// scoring and decoding continue from here.
struct InferContext {
    KVCache cache;
    WindowLayout layout;
    LogitRow last_logits;
};

inline InferContext sequential_infer(const Model& model, const TokenSeq& tokens) {
    if (tokens.empty()) fail("EmptyInput", "cannot infer over an empty token sequence");
    if (tokens.size() > model.config.max_position)
        fail("ContextOverflow", "prompt is " + std::to_string(tokens.size()) +
                                    " tokens but max_position is " +
                                    std::to_string(model.config.max_position));
    InferContext ctx;
    ctx.layout = build_sequential_layout(tokens.size());
    ctx.last_logits = last_row(forward(model, tokens, ctx.layout, ctx.cache));
    return ctx;
}

inline InferContext sequential_infer(const Model& model, const PromptSpec& prompt) {
    prompt.validate();
    TokenSeq tokens = render_window_tokens(prompt.prompt_template, prompt.demonstrations);
    const TokenSeq test = render_test_tokens(prompt.prompt_template, prompt.test_input);
    tokens.insert(tokens.end(), test.begin(), test.end());
    return sequential_infer(model, tokens);
}

// Precomputed sequential prefix (the shared demonstration text of a seed).
// Continuations copy the cache, so one prefix serves many test inputs.
struct PrefixState {
    KVCache cache;
    WindowLayout layout;
    std::size_t length = 0;
};

inline PrefixState precompute_prefix(const Model& model, const TokenSeq& tokens) {
    PrefixState prefix;
    prefix.length = tokens.size();
    if (tokens.empty()) return prefix; // zero-shot: nothing to cache
    if (tokens.size() > model.config.max_position)
        fail("ContextOverflow", "prefix is " + std::to_string(tokens.size()) +
                                    " tokens but max_position is " +
                                    std::to_string(model.config.max_position));
    prefix.layout = build_sequential_layout(tokens.size());
    forward(model, tokens, prefix.layout, prefix.cache);
    return prefix;
}

inline InferContext sequential_continue(const Model& model, const PrefixState& prefix,
                                        const TokenSeq& test_tokens) {
    if (prefix.length == 0) return sequential_infer(model, test_tokens);
    if (test_tokens.empty()) fail("EmptyInput", "cannot continue with no test tokens");
    if (prefix.length + test_tokens.size() > model.config.max_position)
        fail("ContextOverflow", "prompt is " +
                                    std::to_string(prefix.length + test_tokens.size()) +
                                    " tokens but max_position is " +
                                    std::to_string(model.config.max_position));
    InferContext ctx;
    ctx.cache = prefix.cache;
    ctx.layout = prefix.layout.extended(test_tokens.size());
    ctx.last_logits = last_row(forward(model, test_tokens, ctx.layout, ctx.cache));
    return ctx;
}

// Standalone per-window caches (positions restarting at 0, slots relabeled to
// their window ids). Like PrefixState, a bank is computed once per seed and
// shared by every test input.
struct WindowBank {
    std::vector<KVCache> caches;
    std::vector<std::size_t> lengths;
};

inline WindowBank precompute_windows(const Model& model,
                                     const std::vector<TokenSeq>& windows) {
    if (windows.empty()) fail("EmptyWindow", "parallel inference needs at least one window");
    WindowBank bank;
    for (std::size_t w = 0; w < windows.size(); ++w) {
        if (windows[w].empty()) fail("EmptyWindow", "window " + std::to_string(w) + " is empty");
        if (windows[w].size() > model.config.max_position)
            fail("ContextOverflow", "window of " + std::to_string(windows[w].size()) +
                                        " tokens exceeds max_position " +
                                        std::to_string(model.config.max_position));
        KVCache cache;
        forward(model, windows[w], build_sequential_layout(windows[w].size()), cache);
        cache.set_window(int(w));
        bank.caches.push_back(std::move(cache));
        bank.lengths.push_back(windows[w].size());
    }
    return bank;
}

inline InferContext pcw_continue(const Model& model, const WindowBank& bank,
                                 const TokenSeq& test_tokens) {
    InferContext ctx;
    ctx.layout = build_parallel_layout(bank.lengths, test_tokens.size());
    if (std::size_t(ctx.layout.p_max + 1) + test_tokens.size() > model.config.max_position)
        fail("ContextOverflow",
             "test segment would reach position " +
                 std::to_string(std::size_t(ctx.layout.p_max) + test_tokens.size()) +
                 " but max_position is " + std::to_string(model.config.max_position));
    for (const auto& cache : bank.caches) ctx.cache.append(cache);
    ctx.last_logits = last_row(forward(model, test_tokens, ctx.layout, ctx.cache));
    return ctx;
}

// Runs every window standalone (positions restarting at 0), concatenates the
// caches, then lets the test tokens attend to all of them. The combined pass
// is equivalent to one monolithic forward under build_parallel_layout; the
// per-window caches are bit-identical to standalone runs, which is what makes
// the precompute-and-reuse trick sound.
inline InferContext pcw_infer(const Model& model, const std::vector<TokenSeq>& windows,
                              const TokenSeq& test_tokens) {
    return pcw_continue(model, precompute_windows(model, windows), test_tokens);
}

inline InferContext pcw_infer(const Model& model, const PromptSpec& prompt,
                              std::size_t num_windows,
                              PackStrategy strategy = PackStrategy::Even) {
    prompt.validate();
    PackOptions pack;
    pack.strategy = strategy;
    if (strategy == PackStrategy::MaxFill) {
        // Same split as the evaluation harness: half the position budget for
        // windows, the rest for the test segment.
        pack.token_budget = std::max<std::size_t>(1, model.config.max_position / 2);
        pack.demo_costs.reserve(prompt.demonstrations.size());
        for (const auto& d : prompt.demonstrations)
            pack.demo_costs.push_back(
                render_window_tokens(prompt.prompt_template, {&d, 1}).size());
    }
    const auto groups = segment_demonstrations(prompt.demonstrations, num_windows, pack);
    std::vector<TokenSeq> windows;
    windows.reserve(groups.size());
    for (const auto& group : groups)
        windows.push_back(render_window_tokens(prompt.prompt_template, group));
    return pcw_infer(model, windows, render_test_tokens(prompt.prompt_template,
                                                        prompt.test_input));
}

// ---------------------------------------------------------------------------
// Label scoring
// ---------------------------------------------------------------------------

// RawLogit averages the label tokens' raw logits; LogProb normalizes each row
// first, which is insensitive to per-context logit offsets. RawLogit is the
// default reading; the evaluation harness can run either.
enum class ScoreKind { RawLogit, LogProb };

struct LabelScores {
    std::vector<std::string> labels;
    std::vector<float> scores;                    // per-label mean over its tokens
    std::vector<std::vector<float>> token_values; // the per-token values behind each mean

    // argmax with ties broken toward the lowest index
    std::size_t best() const {
        if (scores.empty()) fail("EmptyLabel", "no label scores to pick from");
        std::size_t best_i = 0;
        for (std::size_t i = 1; i < scores.size(); ++i)
            if (scores[i] > scores[best_i]) best_i = i;
        return best_i;
    }
    const std::string& best_label() const { return labels[best()]; }
};

inline double logsumexp(std::span<const float> row) {
    double mx = -std::numeric_limits<double>::infinity();
    for (float v : row) mx = std::max(mx, double(v));
    double acc = 0.0;
    for (float v : row) acc += std::exp(double(v) - mx);
    return mx + std::log(acc);
}

// Teacher-forces each label's tokens after the context. The first token is
// scored from ctx.last_logits; later tokens extend a copy of the cache.
inline LabelScores score_labels(const Model& model, const InferContext& ctx,
                                const std::vector<std::string>& labels,
                                ScoreKind kind = ScoreKind::RawLogit) {
    if (labels.empty()) fail("EmptyLabel", "label set is empty");
    {
        std::set<std::string> seen;
        for (const auto& l : labels)
            if (!seen.insert(l).second)
                fail("InvalidConfig", "label set contains duplicate \"" + l + "\"");
    }

    auto value_of = [&](const LogitRow& row, Token t) {
        if (t < 0 || std::size_t(t) >= row.size())
            fail("TokenOutOfRange", "label token " + std::to_string(t) +
                                        " outside vocab of " + std::to_string(row.size()));
        if (kind == ScoreKind::RawLogit) return double(row[std::size_t(t)]);
        return double(row[std::size_t(t)]) - logsumexp(row);
    };

    LabelScores out;
    out.labels = labels;
    for (const auto& label : labels) {
        const TokenSeq toks = tokenizer::tokenize(label);
        if (toks.empty()) fail("EmptyLabel", "label \"" + label + "\" tokenizes to nothing");

        std::vector<float> values;
        values.push_back(float(value_of(ctx.last_logits, toks[0])));
        if (toks.size() > 1) {
            KVCache cache = ctx.cache; // per-label scratch copy
            const WindowLayout ext = ctx.layout.extended(toks.size() - 1);
            const Matrix rows =
                forward(model, std::span(toks).first(toks.size() - 1), ext, cache);
            for (std::size_t r = 0; r < rows.rows; ++r)
                values.push_back(float(value_of(
                    LogitRow(rows.row(r), rows.row(r) + rows.cols), toks[r + 1])));
        }
        double mean = 0.0;
        for (float v : values) mean += v;
        out.scores.push_back(float(mean / double(values.size())));
        out.token_values.push_back(std::move(values));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Greedy decoding
// ---------------------------------------------------------------------------

// Generation stops at the first `terminator` that appears after `marker`
// (an empty marker matches immediately).
struct StopRule {
    std::string marker = "Answer:";
    std::string terminator = "\n";

    bool fires(std::string_view text) const {
        std::size_t from = 0;
        if (!marker.empty()) {
            const std::size_t at = text.find(marker);
            if (at == std::string_view::npos) return false;
            from = at + marker.size();
        }
        return text.find(terminator, from) != std::string_view::npos;
    }
};

struct DecodeResult {
    std::string text; // detokenized generated text, ending at the terminator
    TokenSeq tokens;
    bool truncated = false; // max_new or the position budget ran out first
};

// Temperature-0 decoding: repeatedly append the argmax token (ties to the
// lowest id). Running out of budget is signaled via `truncated`, not thrown.
inline DecodeResult greedy_decode(const Model& model, InferContext ctx, const StopRule& stop,
                                  std::size_t max_new) {
    if (max_new == 0) fail("InvalidConfig", "greedy_decode needs max_new >= 1");
    DecodeResult out;
    for (std::size_t step = 0; step < max_new; ++step) {
        std::size_t best = 0;
        for (std::size_t t = 1; t < ctx.last_logits.size(); ++t)
            if (ctx.last_logits[t] > ctx.last_logits[best]) best = t;

        const int next_pos = ctx.layout.position_ids.back() + 1;
        if (std::size_t(next_pos) >= model.config.max_position) break;

        const Token tok = Token(best);
        ctx.layout = ctx.layout.extended(1);
        ctx.last_logits = last_row(forward(model, std::span(&tok, 1), ctx.layout, ctx.cache));
        out.tokens.push_back(tok);
        out.text = tokenizer::detokenize(out.tokens);
        if (stop.fires(out.text)) return out;
    }
    out.truncated = true;
    return out;
}

} // namespace pcw
