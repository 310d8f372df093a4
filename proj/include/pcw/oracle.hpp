#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <pcw/ensemble.hpp>
#include <pcw/error.hpp>
#include <pcw/inference.hpp>
#include <pcw/layout.hpp>
#include <pcw/model.hpp>
#include <pcw/numkit.hpp>

namespace pcw {

// ---------------------------------------------------------------------------
// Self-checks that re-derive the library's core guarantees from first
// principles on randomized inputs. Each check reports its worst observed
// deviation so a pass is quantified, not just asserted. The fault-injection
// hook deliberately corrupts the visibility rule so callers can confirm the
// checks have teeth.
// ---------------------------------------------------------------------------

struct OracleResult {
    std::string name;
    bool passed = false;
    double max_deviation = 0.0;
    double tolerance = 0.0;
    std::size_t cases = 0;
    std::string detail; // filled in on failure
};

struct OracleOptions {
    std::uint64_t seed = 2024;
    std::size_t isolation_prompts = 100;
    std::size_t collapse_prompts = 50;
    std::size_t cache_prompts = 20;
    std::size_t rope_trials = 100;
    std::size_t pe_cases = 50;
    bool inject_fault = false; // corrupt the first window-isolation prompt
};

namespace detail {

inline ModelConfig oracle_config(PosScheme scheme = PosScheme::Rotary) {
    ModelConfig cfg;
    cfg.vocab_size = 96;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_layers = 2;
    cfg.d_ff = 32;
    cfg.max_position = 96;
    cfg.pos_scheme = scheme;
    cfg.init_seed = 77;
    return cfg;
}

inline TokenSeq random_tokens(Rng& rng, std::size_t n, std::size_t vocab) {
    TokenSeq out(n);
    for (auto& t : out) t = Token(rng.below(vocab));
    return out;
}

inline double row_deviation(const float* a, const float* b, std::size_t n) {
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        worst = std::max(worst, std::abs(double(a[i]) - double(b[i])));
    return worst;
}

} // namespace detail

// Windows in a parallel layout must produce exactly the activations they
// would produce alone: compare every window's logit rows from one monolithic
// parallel pass against a standalone run of just that window.
inline OracleResult check_window_isolation(const OracleOptions& options) {
    OracleResult r;
    r.name = "window-isolation";
    r.tolerance = 0.0;
    r.cases = options.isolation_prompts;

    const Model model = build_model(detail::oracle_config());
    Rng rng(options.seed);

    for (std::size_t p = 0; p < options.isolation_prompts; ++p) {
        const std::size_t phi = options.inject_fault && p == 0 ? 2 : 1 + rng.below(4);
        std::vector<std::size_t> lens;
        std::vector<TokenSeq> windows;
        TokenSeq all;
        for (std::size_t w = 0; w < phi; ++w) {
            lens.push_back(1 + rng.below(6));
            windows.push_back(
                detail::random_tokens(rng, lens.back(), model.config.vocab_size));
            all.insert(all.end(), windows.back().begin(), windows.back().end());
        }
        const TokenSeq test =
            detail::random_tokens(rng, 1 + rng.below(6), model.config.vocab_size);
        all.insert(all.end(), test.begin(), test.end());

        WindowLayout layout = build_parallel_layout(lens, test.size());
        if (options.inject_fault && p == 0) {
            // Merge the first slot of window 1 into window 0: a visibility
            // bug this check must catch.
            layout.slot_window[lens[0]] = 0;
        }

        const Matrix mono = forward(model, all, layout);
        std::size_t start = 0;
        for (std::size_t w = 0; w < phi; ++w) {
            const Matrix alone =
                forward(model, windows[w], build_sequential_layout(lens[w]));
            for (std::size_t i = 0; i < lens[w]; ++i) {
                const double dev = detail::row_deviation(mono.row(start + i),
                                                         alone.row(i), mono.cols);
                if (dev > r.max_deviation) {
                    r.max_deviation = dev;
                    r.detail = "prompt " + std::to_string(p) + " window " +
                               std::to_string(w) + " row " + std::to_string(i) +
                               " deviates by " + std::to_string(dev);
                }
            }
            start += lens[w];
        }
    }
    r.passed = r.max_deviation <= r.tolerance;
    if (r.passed) r.detail.clear();
    return r;
}

// A single window plus test input must be indistinguishable from ordinary
// sequential inference over the concatenated prompt.
inline OracleResult check_sequential_collapse(const OracleOptions& options) {
    OracleResult r;
    r.name = "sequential-collapse";
    r.tolerance = 1e-6;
    r.cases = options.collapse_prompts;

    const Model model = build_model(detail::oracle_config());
    Rng rng(options.seed + 1);

    for (std::size_t p = 0; p < options.collapse_prompts; ++p) {
        const TokenSeq window =
            detail::random_tokens(rng, 2 + rng.below(20), model.config.vocab_size);
        const TokenSeq test =
            detail::random_tokens(rng, 1 + rng.below(8), model.config.vocab_size);
        TokenSeq flat = window;
        flat.insert(flat.end(), test.begin(), test.end());

        const InferContext pcw = pcw_infer(model, {window}, test);
        const InferContext seq = sequential_infer(model, flat);
        const double dev = detail::row_deviation(pcw.last_logits.data(),
                                                 seq.last_logits.data(),
                                                 pcw.last_logits.size());
        if (dev > r.max_deviation) {
            r.max_deviation = dev;
            r.detail = "prompt " + std::to_string(p) + " deviates by " + std::to_string(dev);
        }
    }
    r.passed = r.max_deviation <= r.tolerance;
    if (r.passed) r.detail.clear();
    return r;
}

// Enumerate every layout with up to 4 windows of length 1..6 and test length
// 1..6, and compare the visibility matrix and position ids against a direct
// restatement of the rule in terms of segment spans.
inline OracleResult check_mask_brute_force(const OracleOptions&) {
    OracleResult r;
    r.name = "mask-brute-force";
    r.tolerance = 0.0;

    std::size_t mismatches = 0;
    auto audit = [&](const WindowLayout& layout, const std::vector<std::size_t>& lens,
                     std::size_t test_len) {
        ++r.cases;
        // Segment id per slot, rebuilt from the length list alone.
        std::vector<int> seg;
        std::vector<int> pos;
        std::size_t longest = 0;
        for (std::size_t w = 0; w < lens.size(); ++w) {
            longest = std::max(longest, lens[w]);
            for (std::size_t i = 0; i < lens[w]; ++i) {
                seg.push_back(int(w));
                pos.push_back(int(i));
            }
        }
        for (std::size_t i = 0; i < test_len; ++i) {
            seg.push_back(-1);
            pos.push_back(int(longest + i));
        }

        const std::size_t total = seg.size();
        if (layout.total_len != total) ++mismatches;
        for (std::size_t q = 0; q < total; ++q) {
            if (layout.position_ids[q] != pos[q]) ++mismatches;
            for (std::size_t k = 0; k < total; ++k) {
                const bool expect = k <= q && (seg[k] == seg[q] || seg[q] == -1);
                if (visibility(layout, q, k) != expect) ++mismatches;
            }
        }
    };

    std::vector<std::size_t> lens;
    auto recurse = [&](auto&& self, std::size_t depth) -> void {
        if (!lens.empty())
            for (std::size_t t = 1; t <= 6; ++t)
                audit(build_parallel_layout(lens, t), lens, t);
        if (depth == 4) return;
        for (std::size_t l = 1; l <= 6; ++l) {
            lens.push_back(l);
            self(self, depth + 1);
            lens.pop_back();
        }
    };
    recurse(recurse, 0);

    r.max_deviation = double(mismatches);
    r.passed = mismatches == 0;
    if (!r.passed) r.detail = std::to_string(mismatches) + " cells disagree with the rule";
    return r;
}

// Splitting a prompt at an arbitrary point and continuing from the cache must
// match the monolithic pass. Alternates sequential and parallel layouts.
inline OracleResult check_cache_equivalence(const OracleOptions& options) {
    OracleResult r;
    r.name = "cache-equivalence";
    r.tolerance = 1e-5;
    r.cases = options.cache_prompts;

    const Model model = build_model(detail::oracle_config());
    Rng rng(options.seed + 2);

    for (std::size_t p = 0; p < options.cache_prompts; ++p) {
        double dev = 0.0;
        if (p % 2 == 0) {
            const std::size_t n = 4 + rng.below(20);
            const TokenSeq tokens = detail::random_tokens(rng, n, model.config.vocab_size);
            const std::size_t split = 1 + rng.below(n - 1);
            const WindowLayout layout = build_sequential_layout(n);

            KVCache cache;
            forward(model, std::span<const Token>(tokens).subspan(0, split), layout, cache);
            const Matrix cont = forward(
                model, std::span<const Token>(tokens).subspan(split), layout, cache);
            const Matrix mono = forward(model, tokens, layout);
            dev = detail::row_deviation(cont.row(cont.rows - 1), mono.row(mono.rows - 1),
                                        mono.cols);
        } else {
            const std::size_t phi = 1 + rng.below(3);
            std::vector<TokenSeq> windows;
            TokenSeq all;
            std::vector<std::size_t> lens;
            for (std::size_t w = 0; w < phi; ++w) {
                lens.push_back(1 + rng.below(6));
                windows.push_back(
                    detail::random_tokens(rng, lens.back(), model.config.vocab_size));
                all.insert(all.end(), windows.back().begin(), windows.back().end());
            }
            const TokenSeq test =
                detail::random_tokens(rng, 1 + rng.below(6), model.config.vocab_size);
            all.insert(all.end(), test.begin(), test.end());

            const InferContext cached = pcw_infer(model, windows, test);
            const Matrix mono =
                forward(model, all, build_parallel_layout(lens, test.size()));
            dev = detail::row_deviation(cached.last_logits.data(),
                                        mono.row(mono.rows - 1), mono.cols);
        }
        if (dev > r.max_deviation) {
            r.max_deviation = dev;
            r.detail = "prompt " + std::to_string(p) + " deviates by " + std::to_string(dev);
        }
    }
    r.passed = r.max_deviation <= r.tolerance;
    if (r.passed) r.detail.clear();
    return r;
}

// Rotary embeddings must make attention scores depend only on relative
// offsets; the absolute scheme must not. Checks the dot-product identity on
// random vectors and then contrasts the two schemes at the logit level.
inline OracleResult check_rope_shift(const OracleOptions& options) {
    OracleResult r;
    r.name = "rope-shift";
    r.tolerance = 1e-5;
    r.cases = options.rope_trials;

    Rng rng(options.seed + 3);
    for (std::size_t t = 0; t < options.rope_trials; ++t) {
        const std::size_t dim = 2 * (1 + rng.below(8));
        std::vector<float> q(dim), k(dim);
        for (auto& v : q) v = float(rng.gaussian());
        for (auto& v : k) v = float(rng.gaussian());
        const int p1 = int(rng.below(100));
        const int p2 = int(rng.below(100));
        const int delta = 1 + int(rng.below(50));

        auto dot_at = [&](int pq, int pk) {
            const auto rq = rope_rotate(q, pq);
            const auto rk = rope_rotate(k, pk);
            double d = 0.0;
            for (std::size_t i = 0; i < dim; ++i) d += double(rq[i]) * double(rk[i]);
            return d;
        };
        const double dev = std::abs(dot_at(p1, p2) - dot_at(p1 + delta, p2 + delta));
        if (dev > r.max_deviation) {
            r.max_deviation = dev;
            r.detail = "trial " + std::to_string(t) + " deviates by " + std::to_string(dev);
        }
    }

    // Model-level contrast: shifting every position by a constant moves
    // absolute-embedding logits but not rotary ones.
    auto shifted_dev = [&](PosScheme scheme) {
        const Model model = build_model(detail::oracle_config(scheme));
        Rng prng(options.seed + 4);
        const TokenSeq tokens = detail::random_tokens(prng, 12, model.config.vocab_size);
        const WindowLayout base = build_sequential_layout(tokens.size());
        WindowLayout shifted = base;
        for (auto& p : shifted.position_ids) p += 7;
        const Matrix a = forward(model, tokens, base);
        const Matrix b = forward(model, tokens, shifted);
        return detail::row_deviation(a.row(a.rows - 1), b.row(b.rows - 1), a.cols);
    };
    const double rotary_dev = shifted_dev(PosScheme::Rotary);
    const double absolute_dev = shifted_dev(PosScheme::Absolute);
    r.max_deviation = std::max(r.max_deviation, rotary_dev);
    r.passed = r.max_deviation <= r.tolerance && absolute_dev > 1e-3;
    if (r.max_deviation > r.tolerance)
        r.detail = "rotary logits moved by " + std::to_string(rotary_dev) + " under shift";
    else if (absolute_dev <= 1e-3)
        r.detail = "absolute logits moved only " + std::to_string(absolute_dev) +
                   " under shift; expected a visible change";
    else
        r.detail.clear();
    return r;
}

// The ensemble combiner must agree with a plain re-computation of weighted
// averages and survive window permutations.
inline OracleResult check_pe_averaging(const OracleOptions& options) {
    OracleResult r;
    r.name = "pe-averaging";
    r.tolerance = 1e-6;
    r.cases = options.pe_cases;

    Rng rng(options.seed + 5);
    for (std::size_t t = 0; t < options.pe_cases; ++t) {
        const std::size_t phi = 1 + rng.below(6);
        const std::size_t n_labels = 2 + rng.below(4);
        std::vector<std::string> labels;
        for (std::size_t l = 0; l < n_labels; ++l) labels.push_back("label" + std::to_string(l));

        // Every window scores the same label strings, so the per-label token
        // counts must agree across windows.
        std::vector<std::size_t> token_counts;
        for (std::size_t l = 0; l < n_labels; ++l) token_counts.push_back(1 + rng.below(3));

        EnsembleInput input;
        for (std::size_t w = 0; w < phi; ++w) {
            LabelScores s;
            s.labels = labels;
            for (std::size_t l = 0; l < n_labels; ++l) {
                std::vector<float> tv(token_counts[l]);
                for (auto& v : tv) v = float(rng.gaussian());
                double mean = 0.0;
                for (float v : tv) mean += v;
                s.token_values.push_back(tv);
                s.scores.push_back(float(mean / double(tv.size())));
            }
            input.windows.push_back(std::move(s));
        }

        const PePrediction got = pe_predict(input);

        // Plain averaging, no shared code with the implementation.
        std::vector<double> expect(n_labels, 0.0);
        for (const auto& w : input.windows)
            for (std::size_t l = 0; l < n_labels; ++l) expect[l] += double(w.scores[l]);
        for (auto& v : expect) v /= double(phi);
        std::size_t best = 0;
        for (std::size_t l = 1; l < n_labels; ++l)
            if (expect[l] > expect[best]) best = l;

        double dev = 0.0;
        for (std::size_t l = 0; l < n_labels; ++l)
            dev = std::max(dev, std::abs(double(got.combined.scores[l]) - expect[l]));
        if (got.best_index != best) dev = std::max(dev, 1.0);

        // Reversing the windows must not change the combined scores.
        EnsembleInput reversed;
        reversed.windows.assign(input.windows.rbegin(), input.windows.rend());
        const PePrediction rev = pe_predict(reversed);
        for (std::size_t l = 0; l < n_labels; ++l)
            dev = std::max(dev, std::abs(double(got.combined.scores[l]) -
                                         double(rev.combined.scores[l])));
        if (rev.best_index != got.best_index) dev = std::max(dev, 1.0);

        // Adding one constant to every score must not move the argmax.
        EnsembleInput lifted = input;
        for (auto& w : lifted.windows) {
            for (auto& s : w.scores) s += 3.25f;
            for (auto& tv : w.token_values)
                for (auto& v : tv) v += 3.25f;
        }
        if (pe_predict(lifted).best_index != got.best_index) dev = std::max(dev, 1.0);

        if (dev > r.max_deviation) {
            r.max_deviation = dev;
            r.detail = "case " + std::to_string(t) + " deviates by " + std::to_string(dev);
        }
    }
    r.passed = r.max_deviation <= r.tolerance;
    if (r.passed) r.detail.clear();
    return r;
}

inline std::vector<OracleResult> run_all_oracles(const OracleOptions& options = {}) {
    return {
        check_window_isolation(options),  check_sequential_collapse(options),
        check_mask_brute_force(options),  check_cache_equivalence(options),
        check_rope_shift(options),        check_pe_averaging(options),
    };
}

} // namespace pcw
