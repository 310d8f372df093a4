#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <pcw/error.hpp>
#include <pcw/layout.hpp>
#include <pcw/numkit.hpp>
#include <pcw/tokenizer.hpp>

namespace pcw {

enum class PosScheme : std::uint32_t { Absolute = 0, Rotary = 1 };

inline constexpr float kNormEps = 1e-5f;
inline constexpr float kInitStd = 0.02f;
inline constexpr double kRopeBase = 10000.0;

struct ModelConfig {
    std::size_t vocab_size = 260;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t n_layers = 2;
    std::size_t d_ff = 256;
    std::size_t max_position = 512;
    PosScheme pos_scheme = PosScheme::Rotary;
    std::uint64_t init_seed = 0;

    std::size_t head_dim() const { return d_model / n_heads; }

    void validate() const {
        if (vocab_size < 2) fail("InvalidConfig", "vocab_size must be >= 2");
        if (n_heads == 0 || d_model == 0 || n_layers == 0 || d_ff == 0)
            fail("InvalidConfig", "all dimensions must be positive");
        if (d_model % n_heads != 0)
            fail("InvalidConfig", "d_model (" + std::to_string(d_model) +
                                      ") not divisible by n_heads (" + std::to_string(n_heads) +
                                      ")");
        if (pos_scheme == PosScheme::Rotary && head_dim() % 2 != 0)
            fail("InvalidConfig", "rotary scheme needs an even head dimension");
        if (max_position == 0) fail("InvalidConfig", "max_position must be >= 1");
    }
};

struct LayerWeights {
    std::vector<float> attn_norm; // d_model gains
    Matrix wq, wk, wv, wo;        // d_model x d_model, applied as x * W
    std::vector<float> ffn_norm;  // d_model gains
    Matrix w1;                    // d_model x d_ff
    Matrix w2;                    // d_ff x d_model
};

// Decoder-only transformer: embedding -> n_layers x [rmsnorm, multi-head
// attention, rmsnorm, GeLU feed-forward] -> final rmsnorm -> tied unembedding.
// Immutable after build_model; positions and visibility come exclusively from
// the WindowLayout handed to forward().
struct Model {
    ModelConfig config;
    Matrix embedding; // vocab x d_model, also the (tied) unembedding
    Matrix pos_table; // max_position x d_model; empty under the rotary scheme
    std::vector<LayerWeights> layers;
    std::vector<float> final_norm;

    std::size_t parameter_count() const {
        std::size_t n = embedding.data.size() + pos_table.data.size() + final_norm.size();
        for (const auto& l : layers)
            n += l.attn_norm.size() + l.wq.data.size() + l.wk.data.size() + l.wv.data.size() +
                 l.wo.data.size() + l.ffn_norm.size() + l.w1.data.size() + l.w2.data.size();
        return n;
    }
};

namespace detail {

inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng, float std_dev) {
    Matrix m(rows, cols);
    for (float& v : m.data) v = float(rng.gaussian()) * std_dev;
    return m;
}

} // namespace detail

// Parameters are drawn from Rng(init_seed) in a fixed order (the same order
// they are serialized in), Gaussian with std 0.02; norm gains start at 1.
inline Model build_model(const ModelConfig& config) {
    config.validate();
    Model model;
    model.config = config;
    Rng rng(config.init_seed);
    model.embedding = detail::gaussian_matrix(config.vocab_size, config.d_model, rng, kInitStd);
    if (config.pos_scheme == PosScheme::Absolute)
        model.pos_table =
            detail::gaussian_matrix(config.max_position, config.d_model, rng, kInitStd);
    model.layers.resize(config.n_layers);
    for (auto& layer : model.layers) {
        layer.attn_norm.assign(config.d_model, 1.0f);
        layer.wq = detail::gaussian_matrix(config.d_model, config.d_model, rng, kInitStd);
        layer.wk = detail::gaussian_matrix(config.d_model, config.d_model, rng, kInitStd);
        layer.wv = detail::gaussian_matrix(config.d_model, config.d_model, rng, kInitStd);
        layer.wo = detail::gaussian_matrix(config.d_model, config.d_model, rng, kInitStd);
        layer.ffn_norm.assign(config.d_model, 1.0f);
        layer.w1 = detail::gaussian_matrix(config.d_model, config.d_ff, rng, kInitStd);
        layer.w2 = detail::gaussian_matrix(config.d_ff, config.d_model, rng, kInitStd);
    }
    model.final_norm.assign(config.d_model, 1.0f);
    return model;
}

// ---------------------------------------------------------------------------
// Rotary embedding
// ---------------------------------------------------------------------------

// Rotates adjacent pairs (2i, 2i+1) by angle position / base^(2i/len).
// The frequency schedule is derived from the input length, which inside the
// model is the per-head dimension.
inline std::vector<float> rope_rotate(std::span<const float> values, int position) {
    if (values.size() % 2 != 0)
        fail("OddDimension", "rotary rotation needs an even-length vector, got " +
                                 std::to_string(values.size()));
    std::vector<float> out(values.size());
    const std::size_t half = values.size() / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::pow(kRopeBase, -2.0 * double(i) / double(values.size()));
        const double angle = double(position) * freq;
        const float c = float(std::cos(angle));
        const float s = float(std::sin(angle));
        const float a = values[2 * i];
        const float b = values[2 * i + 1];
        out[2 * i] = a * c - b * s;
        out[2 * i + 1] = a * s + b * c;
    }
    return out;
}

// ---------------------------------------------------------------------------
// KV cache
// ---------------------------------------------------------------------------

// Per-layer keys/values for every processed slot. Keys are stored after the
// rotary rotation, so cached windows can be concatenated and reused verbatim.
struct KVCache {
    struct LayerKV {
        Matrix k; // slots x d_model
        Matrix v; // slots x d_model
    };
    std::vector<LayerKV> layers;
    std::vector<int> slot_positions;
    std::vector<int> slot_window;

    std::size_t slot_count() const { return slot_positions.size(); }

    // Relabels every cached slot's window id; pcw_infer uses this after
    // running a window standalone (where its local layout had no window ids).
    void set_window(int window_id) {
        for (int& w : slot_window) w = window_id;
    }

    void append(const KVCache& other) {
        if (layers.empty()) layers.resize(other.layers.size());
        if (layers.size() != other.layers.size())
            fail("LayoutMismatch", "cannot concatenate caches with different layer counts");
        for (std::size_t l = 0; l < layers.size(); ++l) {
            layers[l].k.append_rows(other.layers[l].k);
            layers[l].v.append_rows(other.layers[l].v);
        }
        slot_positions.insert(slot_positions.end(), other.slot_positions.begin(),
                              other.slot_positions.end());
        slot_window.insert(slot_window.end(), other.slot_window.begin(),
                           other.slot_window.end());
    }
};

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

using LogitRow = std::vector<float>;

struct ForwardOptions {
    // Observer receives the dense post-softmax weight row of every query at
    // every (layer, head); disallowed keys hold exact zeros.
    std::function<void(std::size_t layer, std::size_t head, std::size_t query_slot,
                       std::span<const float> weights)>
        attention_observer;
};

namespace detail {

inline float gelu(float x) {
    return 0.5f * x * (1.0f + std::erf(x * 0.70710678118654752440f));
}

inline void validate_forward_inputs(const Model& model, std::span<const Token> tokens,
                                    const WindowLayout& layout, const KVCache& cache) {
    const auto& cfg = model.config;
    if (cache.slot_count() + tokens.size() > layout.total_len)
        fail("LayoutMismatch", "cache slots (" + std::to_string(cache.slot_count()) +
                                   ") + tokens (" + std::to_string(tokens.size()) +
                                   ") exceed the layout length (" +
                                   std::to_string(layout.total_len) + ")");
    if (!cache.layers.empty() && cache.layers.size() != cfg.n_layers)
        fail("LayoutMismatch", "cache layer count differs from model");
    for (std::size_t s = 0; s < layout.total_len; ++s)
        if (layout.position_ids[s] < 0 || std::size_t(layout.position_ids[s]) >= cfg.max_position)
            fail("PositionOverflow", "slot " + std::to_string(s) + " has position " +
                                         std::to_string(layout.position_ids[s]) +
                                         " but max_position is " +
                                         std::to_string(cfg.max_position));
    for (std::size_t i = 0; i < cache.slot_count(); ++i)
        if (cache.slot_positions[i] != layout.position_ids[i] ||
            cache.slot_window[i] != layout.slot_window[i])
            fail("LayoutMismatch", "cached slot " + std::to_string(i) +
                                       " disagrees with the layout's position or window");
    for (Token t : tokens)
        if (t < 0 || std::size_t(t) >= cfg.vocab_size)
            fail("TokenOutOfRange", "token id " + std::to_string(t) + " outside vocab of " +
                                        std::to_string(cfg.vocab_size));
}

} // namespace detail

// Runs the model over `tokens`, which occupy layout slots
// [cache.slot_count(), cache.slot_count() + tokens.size()). The cache gains
// one slot per token; logits come back one row per token.
inline Matrix forward(const Model& model, std::span<const Token> tokens,
                      const WindowLayout& layout, KVCache& cache,
                      const ForwardOptions& options = {}) {
    const auto& cfg = model.config;
    detail::validate_forward_inputs(model, tokens, layout, cache);
    if (cache.layers.empty()) cache.layers.resize(cfg.n_layers);

    const std::size_t base = cache.slot_count();
    const std::size_t n = tokens.size();
    const std::size_t total = base + n;
    const std::size_t dh = cfg.head_dim();

    if (n == 0) return Matrix(0, cfg.vocab_size);

    // Visibility bitmap for the new query rows, shared across layers/heads.
    std::vector<char> visible(n * total);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < total; ++k)
            visible[i * total + k] = layout.allowed(base + i, k) ? 1 : 0;
    auto vis = [&](std::size_t q, std::size_t k) { return visible[q * total + k] != 0; };

    // Token embeddings, plus the learned position row under the absolute scheme.
    Matrix x(n, cfg.d_model);
    for (std::size_t i = 0; i < n; ++i) {
        const float* emb = model.embedding.row(std::size_t(tokens[i]));
        float* out = x.row(i);
        for (std::size_t j = 0; j < cfg.d_model; ++j) out[j] = emb[j];
        if (cfg.pos_scheme == PosScheme::Absolute) {
            const float* pos = model.pos_table.row(std::size_t(layout.position_ids[base + i]));
            for (std::size_t j = 0; j < cfg.d_model; ++j) out[j] += pos[j];
        }
    }

    const float scale = 1.0f / std::sqrt(float(dh));

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const LayerWeights& w = model.layers[l];

        Matrix xn(n, cfg.d_model);
        for (std::size_t i = 0; i < n; ++i) {
            auto normed = rmsnorm(x.row_span(i), w.attn_norm, kNormEps);
            std::copy(normed.begin(), normed.end(), xn.row(i));
        }

        Matrix q = matmul(xn, w.wq);
        Matrix k = matmul(xn, w.wk);
        Matrix v = matmul(xn, w.wv);

        if (cfg.pos_scheme == PosScheme::Rotary) {
            for (std::size_t i = 0; i < n; ++i) {
                const int pos = layout.position_ids[base + i];
                for (std::size_t h = 0; h < cfg.n_heads; ++h) {
                    auto qh = rope_rotate({q.row(i) + h * dh, dh}, pos);
                    std::copy(qh.begin(), qh.end(), q.row(i) + h * dh);
                    auto kh = rope_rotate({k.row(i) + h * dh, dh}, pos);
                    std::copy(kh.begin(), kh.end(), k.row(i) + h * dh);
                }
            }
        }

        cache.layers[l].k.append_rows(k);
        cache.layers[l].v.append_rows(v);
        const Matrix& k_all = cache.layers[l].k;
        const Matrix& v_all = cache.layers[l].v;

        Matrix attn(n, cfg.d_model);
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            Matrix qh(n, dh);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < dh; ++j) qh.at(i, j) = q.at(i, h * dh + j) * scale;
            Matrix kh_t(dh, total);
            for (std::size_t s = 0; s < total; ++s)
                for (std::size_t j = 0; j < dh; ++j) kh_t.at(j, s) = k_all.at(s, h * dh + j);

            Matrix scores = matmul(qh, kh_t);
            Matrix weights = masked_softmax(scores, vis);
            if (options.attention_observer)
                for (std::size_t i = 0; i < n; ++i)
                    options.attention_observer(l, h, base + i, weights.row_span(i));

            Matrix vh(total, dh);
            for (std::size_t s = 0; s < total; ++s)
                for (std::size_t j = 0; j < dh; ++j) vh.at(s, j) = v_all.at(s, h * dh + j);
            Matrix oh = matmul(weights, vh);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < dh; ++j) attn.at(i, h * dh + j) = oh.at(i, j);
        }

        Matrix proj = matmul(attn, w.wo);
        for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += proj.data[i];

        Matrix xn2(n, cfg.d_model);
        for (std::size_t i = 0; i < n; ++i) {
            auto normed = rmsnorm(x.row_span(i), w.ffn_norm, kNormEps);
            std::copy(normed.begin(), normed.end(), xn2.row(i));
        }
        Matrix hidden = matmul(xn2, w.w1);
        for (float& hv : hidden.data) hv = detail::gelu(hv);
        Matrix ffn = matmul(hidden, w.w2);
        for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += ffn.data[i];
    }

    Matrix xf(n, cfg.d_model);
    for (std::size_t i = 0; i < n; ++i) {
        auto normed = rmsnorm(x.row_span(i), model.final_norm, kNormEps);
        std::copy(normed.begin(), normed.end(), xf.row(i));
    }
    Matrix logits = matmul(xf, transpose(model.embedding));

    for (std::size_t i = 0; i < n; ++i) {
        cache.slot_positions.push_back(layout.position_ids[base + i]);
        cache.slot_window.push_back(layout.slot_window[base + i]);
    }
    return logits;
}

// Monolithic convenience: fresh cache, tokens cover the whole layout.
inline Matrix forward(const Model& model, std::span<const Token> tokens,
                      const WindowLayout& layout, const ForwardOptions& options = {}) {
    KVCache cache;
    return forward(model, tokens, layout, cache, options);
}

inline LogitRow last_row(const Matrix& logits) {
    if (logits.rows == 0) fail("LayoutMismatch", "no logit rows to take the last of");
    return LogitRow(logits.row(logits.rows - 1), logits.row(logits.rows - 1) + logits.cols);
}

// ---------------------------------------------------------------------------
// Flat binary serialization: "PCWM", u32 version, config header, then float32
// tensors little-endian in build order (embedding, [pos_table], per layer:
// attn_norm, wq, wk, wv, wo, ffn_norm, w1, w2, then final_norm).
// ---------------------------------------------------------------------------
namespace detail {

inline constexpr char kModelMagic[4] = {'P', 'C', 'W', 'M'};
inline constexpr std::uint32_t kModelVersion = 1;

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

struct ByteReader {
    std::span<const unsigned char> bytes;
    std::size_t offset = 0;

    void need(std::size_t n) const {
        if (offset + n > bytes.size()) fail("ModelFileCorrupt", "model file truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[offset + i]) << (8 * i);
        offset += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes[offset + i]) << (8 * i);
        offset += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
};

inline void put_tensor(std::string& out, std::span<const float> values) {
    for (float v : values) put_f32(out, v);
}

inline void read_tensor(ByteReader& r, std::span<float> values) {
    for (float& v : values) v = r.f32();
}

} // namespace detail

inline std::string serialize_model(const Model& model) {
    std::string out;
    out.append(detail::kModelMagic, 4);
    detail::put_u32(out, detail::kModelVersion);
    const auto& c = model.config;
    detail::put_u32(out, std::uint32_t(c.vocab_size));
    detail::put_u32(out, std::uint32_t(c.d_model));
    detail::put_u32(out, std::uint32_t(c.n_heads));
    detail::put_u32(out, std::uint32_t(c.n_layers));
    detail::put_u32(out, std::uint32_t(c.d_ff));
    detail::put_u32(out, std::uint32_t(c.max_position));
    detail::put_u32(out, std::uint32_t(c.pos_scheme));
    detail::put_u64(out, c.init_seed);
    detail::put_tensor(out, model.embedding.data);
    if (c.pos_scheme == PosScheme::Absolute) detail::put_tensor(out, model.pos_table.data);
    for (const auto& l : model.layers) {
        detail::put_tensor(out, l.attn_norm);
        detail::put_tensor(out, l.wq.data);
        detail::put_tensor(out, l.wk.data);
        detail::put_tensor(out, l.wv.data);
        detail::put_tensor(out, l.wo.data);
        detail::put_tensor(out, l.ffn_norm);
        detail::put_tensor(out, l.w1.data);
        detail::put_tensor(out, l.w2.data);
    }
    detail::put_tensor(out, model.final_norm);
    return out;
}

inline Model deserialize_model(std::span<const unsigned char> bytes) {
    detail::ByteReader r{bytes};
    r.need(4);
    for (int i = 0; i < 4; ++i)
        if (char(bytes[std::size_t(i)]) != detail::kModelMagic[i])
            fail("ModelFileCorrupt", "bad magic; not a model file");
    r.offset = 4;
    const std::uint32_t version = r.u32();
    if (version != detail::kModelVersion)
        fail("ModelFileCorrupt", "unsupported model file version " + std::to_string(version));

    ModelConfig c;
    c.vocab_size = r.u32();
    c.d_model = r.u32();
    c.n_heads = r.u32();
    c.n_layers = r.u32();
    c.d_ff = r.u32();
    c.max_position = r.u32();
    const std::uint32_t scheme = r.u32();
    if (scheme > 1) fail("ModelFileCorrupt", "unknown positional scheme tag");
    c.pos_scheme = PosScheme(scheme);
    c.init_seed = r.u64();
    c.validate();

    Model model;
    model.config = c;
    model.embedding = Matrix(c.vocab_size, c.d_model);
    detail::read_tensor(r, model.embedding.data);
    if (c.pos_scheme == PosScheme::Absolute) {
        model.pos_table = Matrix(c.max_position, c.d_model);
        detail::read_tensor(r, model.pos_table.data);
    }
    model.layers.resize(c.n_layers);
    for (auto& l : model.layers) {
        l.attn_norm.resize(c.d_model);
        detail::read_tensor(r, l.attn_norm);
        l.wq = Matrix(c.d_model, c.d_model);
        detail::read_tensor(r, l.wq.data);
        l.wk = Matrix(c.d_model, c.d_model);
        detail::read_tensor(r, l.wk.data);
        l.wv = Matrix(c.d_model, c.d_model);
        detail::read_tensor(r, l.wv.data);
        l.wo = Matrix(c.d_model, c.d_model);
        detail::read_tensor(r, l.wo.data);
        l.ffn_norm.resize(c.d_model);
        detail::read_tensor(r, l.ffn_norm);
        l.w1 = Matrix(c.d_model, c.d_ff);
        detail::read_tensor(r, l.w1.data);
        l.w2 = Matrix(c.d_ff, c.d_model);
        detail::read_tensor(r, l.w2.data);
    }
    model.final_norm.resize(c.d_model);
    detail::read_tensor(r, model.final_norm);
    if (r.offset != bytes.size())
        fail("ModelFileCorrupt", "trailing bytes after the last tensor");
    if (!all_finite(model.embedding)) fail("ModelFileCorrupt", "non-finite parameters");
    return model;
}

inline void save_model(const Model& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("ModelFileNotFound", "cannot open " + path + " for writing");
    const std::string bytes = serialize_model(model);
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) fail("ModelFileCorrupt", "failed writing " + path);
}

inline Model load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("ModelFileNotFound", "cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_model(
        {reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()});
}

} // namespace pcw
