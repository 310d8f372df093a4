#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <pcw/error.hpp>
#include <pcw/inference.hpp>
#include <pcw/layout.hpp>
#include <pcw/model.hpp>

namespace pcw {

// ---------------------------------------------------------------------------
// Parallel Ensemble: run each window as an independent sequential prompt
// (window demos + test input), then combine the per-window label scores.
// ---------------------------------------------------------------------------

struct EnsembleInput {
    std::vector<LabelScores> windows; // identical label set and order everywhere
};

struct PePrediction {
    LabelScores combined;
    std::size_t best_index = 0;
    std::string label;
};

// Combined score per label = weighted sum of the window scores; the default
// (empty `weights`) is the uniform mean. Explicit weights must sum to 1.
inline PePrediction pe_predict(const EnsembleInput& input,
                               std::span<const double> weights = {}) {
    const std::size_t phi = input.windows.size();
    if (phi == 0) fail("EmptyEnsemble", "pe_predict needs at least one window");
    const LabelScores& first = input.windows.front();
    if (first.labels.empty()) fail("EmptyLabel", "ensemble windows carry no labels");
    for (const auto& w : input.windows)
        if (w.labels != first.labels)
            fail("LabelSetMismatch",
                 "ensemble windows disagree on the label set or its order");

    std::vector<double> wv(weights.begin(), weights.end());
    if (wv.empty()) wv.assign(phi, 1.0 / double(phi));
    if (wv.size() != phi)
        fail("InvalidConfig", "got " + std::to_string(wv.size()) + " weights for " +
                                  std::to_string(phi) + " windows");
    double sum = 0.0;
    for (double w : wv) sum += w;
    if (std::abs(sum - 1.0) > 1e-6)
        fail("InvalidConfig", "window weights must sum to 1, got " + std::to_string(sum));

    PePrediction out;
    out.combined.labels = first.labels;
    for (std::size_t j = 0; j < first.labels.size(); ++j) {
        double acc = 0.0;
        for (std::size_t w = 0; w < phi; ++w) acc += wv[w] * double(input.windows[w].scores[j]);
        out.combined.scores.push_back(float(acc));

        std::vector<float> tokens(first.token_values[j].size(), 0.0f);
        for (std::size_t w = 0; w < phi; ++w) {
            const auto& tv = input.windows[w].token_values[j];
            if (tv.size() != tokens.size())
                fail("LabelSetMismatch", "ensemble windows disagree on label tokenization");
            for (std::size_t t = 0; t < tokens.size(); ++t)
                tokens[t] += float(wv[w] * double(tv[t]));
        }
        out.combined.token_values.push_back(std::move(tokens));
    }
    out.best_index = out.combined.best();
    out.label = out.combined.labels[out.best_index];
    return out;
}

// ---------------------------------------------------------------------------
// Side-by-side comparison of the three methods on one prompt
// ---------------------------------------------------------------------------

struct MethodResult {
    LabelScores scores;
    std::size_t best_index = 0;
    std::string label;
};

struct MethodComparison {
    std::vector<std::string> labels;
    MethodResult sequential;
    MethodResult pcw;
    MethodResult pe;

    bool all_agree() const {
        return sequential.best_index == pcw.best_index && pcw.best_index == pe.best_index;
    }
};

// Runs sequential, PCW, and PE over the *same* contiguous segmentation of the
// demonstrations, so the three columns are directly comparable.
inline MethodComparison compare_methods(const Model& model, const PromptSpec& prompt,
                                        std::size_t num_windows,
                                        ScoreKind kind = ScoreKind::RawLogit,
                                        PackStrategy strategy = PackStrategy::Even) {
    prompt.validate();
    if (prompt.label_set.empty())
        fail("EmptyLabel", "compare_methods needs a label set to score");

    PackOptions pack;
    pack.strategy = strategy;
    const auto groups = segment_demonstrations(prompt.demonstrations, num_windows, pack);
    std::vector<TokenSeq> windows;
    for (const auto& group : groups)
        windows.push_back(render_window_tokens(prompt.prompt_template, group));
    const TokenSeq test = render_test_tokens(prompt.prompt_template, prompt.test_input);

    auto finish = [&](const InferContext& ctx) {
        MethodResult r;
        r.scores = score_labels(model, ctx, prompt.label_set, kind);
        r.best_index = r.scores.best();
        r.label = r.scores.labels[r.best_index];
        return r;
    };

    MethodComparison cmp;
    cmp.labels = prompt.label_set;

    {
        TokenSeq flat;
        for (const auto& w : windows) flat.insert(flat.end(), w.begin(), w.end());
        flat.insert(flat.end(), test.begin(), test.end());
        cmp.sequential = finish(sequential_infer(model, flat));
    }
    cmp.pcw = finish(pcw_infer(model, windows, test));
    {
        EnsembleInput ens;
        for (const auto& w : windows) {
            TokenSeq one = w;
            one.insert(one.end(), test.begin(), test.end());
            ens.windows.push_back(
                score_labels(model, sequential_infer(model, one), prompt.label_set, kind));
        }
        const PePrediction pe = pe_predict(ens);
        cmp.pe.scores = pe.combined;
        cmp.pe.best_index = pe.best_index;
        cmp.pe.label = pe.label;
    }
    return cmp;
}

} // namespace pcw
