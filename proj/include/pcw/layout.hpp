#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <pcw/error.hpp>

namespace pcw {

// One in-context demonstration: {input: x, output: y}.
struct Demonstration {
    std::string input_text;
    std::string output_text;
};

// Slot range belonging to one attention segment. window_id is 0-based for
// demonstration windows; the final segment (the test input and everything
// generated after it) carries kTestSegment.
inline constexpr int kTestSegment = -1;

struct Segment {
    int window_id = kTestSegment;
    std::size_t start = 0;
    std::size_t length = 0;
};

// WindowLayout carries everything the model needs beyond the tokens
// themselves: per-slot position IDs and the attention-visibility rule.
//
// Slot order is [window 0 | window 1 | ... | window phi-1 | test]. Windows
// restart positions at 0; test positions start at p_max + 1 where p_max is
// the largest position used inside any window. A sequential layout is the
// degenerate case with zero windows: one test segment, positions 0..len-1.
//
// Visibility: key k is visible to query q iff k <= q and either both slots
// share a segment or q lies in the test segment. Windows are therefore
// causally self-contained and mutually blocked, while the test segment
// attends causally to everything.
struct WindowLayout {
    std::vector<Segment> segments;    // windows in order, then the test segment
    std::vector<int> position_ids;    // per slot
    std::vector<int> slot_window;     // per slot, kTestSegment for test slots
    std::size_t num_windows = 0;
    int p_max = -1;                   // -1 when there are no windows
    std::size_t total_len = 0;

    bool is_sequential() const { return num_windows == 0; }

    bool allowed(std::size_t q, std::size_t k) const {
        if (q >= total_len || k >= total_len)
            fail("SlotOutOfRange", "visibility query (" + std::to_string(q) + ", " +
                                       std::to_string(k) + ") outside layout of length " +
                                       std::to_string(total_len));
        if (k > q) return false;
        return slot_window[k] == slot_window[q] || slot_window[q] == kTestSegment;
    }

    // Grow the final (test) segment by `extra` slots; positions continue the
    // tail count. Used when teacher-forcing label tokens or decoding.
    WindowLayout extended(std::size_t extra) const {
        WindowLayout out = *this;
        int next = out.position_ids.empty() ? 0 : out.position_ids.back() + 1;
        for (std::size_t i = 0; i < extra; ++i) {
            out.position_ids.push_back(next++);
            out.slot_window.push_back(kTestSegment);
        }
        out.segments.back().length += extra;
        out.total_len += extra;
        return out;
    }
};

inline WindowLayout build_sequential_layout(std::size_t total_len) {
    if (total_len == 0) fail("EmptyInput", "sequential layout needs at least one slot");
    WindowLayout layout;
    layout.total_len = total_len;
    layout.num_windows = 0;
    layout.p_max = -1;
    layout.segments.push_back({kTestSegment, 0, total_len});
    layout.position_ids.resize(total_len);
    layout.slot_window.assign(total_len, kTestSegment);
    for (std::size_t i = 0; i < total_len; ++i) layout.position_ids[i] = int(i);
    return layout;
}

inline WindowLayout build_parallel_layout(std::span<const std::size_t> window_lengths,
                                          std::size_t test_len) {
    if (window_lengths.empty()) fail("EmptyWindow", "parallel layout needs at least one window");
    if (test_len == 0) fail("EmptyTest", "parallel layout needs a non-empty test segment");

    WindowLayout layout;
    layout.num_windows = window_lengths.size();
    std::size_t longest = 0;
    for (std::size_t len : window_lengths) {
        if (len == 0) fail("EmptyWindow", "window length must be >= 1");
        longest = std::max(longest, len);
    }
    layout.p_max = int(longest) - 1;

    std::size_t slot = 0;
    for (std::size_t w = 0; w < window_lengths.size(); ++w) {
        layout.segments.push_back({int(w), slot, window_lengths[w]});
        for (std::size_t p = 0; p < window_lengths[w]; ++p) {
            layout.position_ids.push_back(int(p));
            layout.slot_window.push_back(int(w));
            ++slot;
        }
    }
    layout.segments.push_back({kTestSegment, slot, test_len});
    for (std::size_t t = 0; t < test_len; ++t) {
        layout.position_ids.push_back(layout.p_max + 1 + int(t));
        layout.slot_window.push_back(kTestSegment);
        ++slot;
    }
    layout.total_len = slot;
    return layout;
}

inline WindowLayout build_parallel_layout(std::initializer_list<std::size_t> window_lengths,
                                          std::size_t test_len) {
    return build_parallel_layout(std::span<const std::size_t>(window_lengths.begin(),
                                                              window_lengths.size()),
                                 test_len);
}

inline bool visibility(const WindowLayout& layout, std::size_t q, std::size_t k) {
    return layout.allowed(q, k);
}

// ---------------------------------------------------------------------------
// Demonstration packing
// ---------------------------------------------------------------------------
enum class PackStrategy { Even, MaxFill };

struct PackOptions {
    PackStrategy strategy = PackStrategy::Even;
    // MaxFill only: per-demo token cost and per-window budget. Windows are
    // filled greedily left to right; num_windows caps the window count and
    // the last window absorbs any overflow.
    std::vector<std::size_t> demo_costs;
    std::size_t token_budget = 0;
};

inline std::vector<std::vector<Demonstration>>
segment_demonstrations(std::span<const Demonstration> demos, std::size_t num_windows,
                       const PackOptions& options = {}) {
    if (num_windows == 0) fail("EmptyWindow", "cannot segment into zero windows");
    if (num_windows > demos.size())
        fail("TooManyWindows", std::to_string(num_windows) + " windows for " +
                                   std::to_string(demos.size()) + " demonstrations");

    std::vector<std::vector<Demonstration>> windows;
    if (options.strategy == PackStrategy::Even) {
        const std::size_t base = demos.size() / num_windows;
        const std::size_t rem = demos.size() % num_windows;
        std::size_t next = 0;
        for (std::size_t w = 0; w < num_windows; ++w) {
            const std::size_t take = base + (w < rem ? 1 : 0); // remainder to earliest windows
            windows.emplace_back(demos.begin() + next, demos.begin() + next + take);
            next += take;
        }
        return windows;
    }

    if (options.demo_costs.size() != demos.size())
        fail("DimensionMismatch", "MaxFill needs one token cost per demonstration");
    if (options.token_budget == 0) fail("DimensionMismatch", "MaxFill needs a token budget");
    windows.emplace_back();
    std::size_t used = 0;
    for (std::size_t i = 0; i < demos.size(); ++i) {
        const std::size_t cost = options.demo_costs[i];
        const bool over = used + cost > options.token_budget && !windows.back().empty();
        if (over && windows.size() < num_windows) {
            windows.emplace_back();
            used = 0;
        }
        windows.back().push_back(demos[i]);
        used += cost;
    }
    return windows;
}

inline std::vector<std::vector<Demonstration>>
segment_demonstrations(const std::vector<Demonstration>& demos, std::size_t num_windows,
                       const PackOptions& options = {}) {
    return segment_demonstrations(std::span<const Demonstration>(demos), num_windows, options);
}

} // namespace pcw
