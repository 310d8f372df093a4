#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include <pcw/error.hpp>

namespace pcw {

// ---------------------------------------------------------------------------
// Matrix: dense row-major float32, the only tensor type in the library.
// ---------------------------------------------------------------------------
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data; // rows * cols, row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}
    Matrix(std::size_t r, std::size_t c, std::vector<float> d)
        : rows(r), cols(c), data(std::move(d)) {
        if (data.size() != rows * cols)
            fail("DimensionMismatch", "matrix buffer size does not match rows*cols");
    }

    float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    float* row(std::size_t r) { return data.data() + r * cols; }
    const float* row(std::size_t r) const { return data.data() + r * cols; }

    std::span<float> row_span(std::size_t r) { return {row(r), cols}; }
    std::span<const float> row_span(std::size_t r) const { return {row(r), cols}; }

    void append_rows(const Matrix& other) {
        if (rows == 0 && cols == 0) cols = other.cols;
        if (other.cols != cols)
            fail("DimensionMismatch", "append_rows: column count differs");
        data.insert(data.end(), other.data.begin(), other.data.end());
        rows += other.rows;
    }

    bool operator==(const Matrix& other) const = default;
};

inline bool all_finite(std::span<const float> v) {
    for (float x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline bool all_finite(const Matrix& m) { return all_finite(std::span<const float>(m.data)); }

// ---------------------------------------------------------------------------
// Seeded deterministic RNG.
//
// splitmix64 expands the seed into the state of a xoshiro256** generator
// (Blackman & Vigna). Both are fixed, documented algorithms with exact
// integer semantics, so the draw stream is identical on every platform.
// The algorithm is pinned: changing it is a breaking change.
// ---------------------------------------------------------------------------
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& s : state_) {
            // splitmix64 step
            x += 0x9e3779b97f4a7c15ULL;
            std::uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            s = z ^ (z >> 31);
        }
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform double in [0, 1), 53 mantissa bits.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). Mask-and-reject keeps it unbiased without
    // relying on 128-bit arithmetic.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) fail("DimensionMismatch", "Rng::below(0)");
        std::uint64_t mask = n - 1;
        mask |= mask >> 1;
        mask |= mask >> 2;
        mask |= mask >> 4;
        mask |= mask >> 8;
        mask |= mask >> 16;
        mask |= mask >> 32;
        for (;;) {
            std::uint64_t r = next_u64() & mask;
            if (r < n) return r;
        }
    }

    // Standard normal via Box-Muller; one spare value is cached.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform(); // log(0) guard
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4] = {};
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        fail("DimensionMismatch", "matmul: " + std::to_string(a.rows) + "x" +
                                      std::to_string(a.cols) + " * " + std::to_string(b.rows) +
                                      "x" + std::to_string(b.cols));
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const float* arow = a.row(i);
        float* orow = out.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const float aik = arow[k];
            if (aik == 0.0f) continue; // exact-zero rows/entries contribute nothing
            const float* brow = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

inline Matrix transpose(const Matrix& a) {
    Matrix out(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

// Row-wise softmax restricted to the entries the predicate admits.
// Disallowed entries never enter the max or the normalization sum, so they
// come out as exact 0.0f rather than a tiny exponential.
template <class Visible>
Matrix masked_softmax(const Matrix& scores, Visible&& allowed) {
    Matrix out(scores.rows, scores.cols);
    for (std::size_t q = 0; q < scores.rows; ++q) {
        float max_score = 0.0f;
        bool any = false;
        for (std::size_t k = 0; k < scores.cols; ++k) {
            if (!allowed(q, k)) continue;
            const float s = scores.at(q, k);
            if (!any || s > max_score) max_score = s;
            any = true;
        }
        if (!any)
            fail("AllMasked", "query row " + std::to_string(q) + " has no visible key");
        float denom = 0.0f;
        for (std::size_t k = 0; k < scores.cols; ++k) {
            if (!allowed(q, k)) continue;
            const float e = std::exp(scores.at(q, k) - max_score);
            out.at(q, k) = e;
            denom += e;
        }
        const float inv = 1.0f / denom;
        for (std::size_t k = 0; k < scores.cols; ++k)
            if (allowed(q, k)) out.at(q, k) *= inv;
    }
    return out;
}

inline std::vector<float> rmsnorm(std::span<const float> x, std::span<const float> gain,
                                  float eps) {
    if (x.size() != gain.size())
        fail("DimensionMismatch", "rmsnorm: value/gain length mismatch");
    if (!(eps >= 0.0f)) fail("DimensionMismatch", "rmsnorm: eps must be >= 0");
    float ms = 0.0f;
    for (float v : x) ms += v * v;
    ms /= float(x.size());
    const float inv = 1.0f / std::sqrt(ms + eps);
    std::vector<float> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * gain[i];
    return out;
}

} // namespace pcw
