#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "sat/memory.hpp"
#include "sat/optim.hpp"
#include "sat/rng.hpp"
#include "sat/tensor.hpp"

namespace sat {

enum class ReadMode { Flat, TimeHier, PlaceHier };

inline const char* read_mode_name(ReadMode m) {
    switch (m) {
        case ReadMode::Flat: return "flat";
        case ReadMode::TimeHier: return "time-hier";
        case ReadMode::PlaceHier: return "place-hier";
    }
    return "?";
}

struct SATConfig {
    int num_layers = 4;
    int dim = 128;
    int heads = 2;
    int head_dim = 64;
    int mlp_hidden = 128;
    int chunk_size = 32;
    int top_k = 4;
    ReadMode read_mode = ReadMode::Flat;
    int num_classes = 8;

    int inner_dim() const { return heads * head_dim; }
    void validate() const {
        if (num_layers <= 0 || dim <= 0 || heads <= 0 || head_dim <= 0 || mlp_hidden <= 0)
            throw std::invalid_argument("model: sizes must be positive");
        if (top_k < 1) throw std::invalid_argument("model: top_k must be >= 1");
        if (chunk_size < 1) throw std::invalid_argument("model: chunk_size must be >= 1");
        if (num_classes < 2) throw std::invalid_argument("model: num_classes must be >= 2");
    }
};

template <typename S>
struct LayerNormWeights {
    TensorT<S> gain, bias;
};

// The key projection has no bias for the same softmax-shift-invariance
// reason as the relevance keys.
template <typename S>
struct MhaWeights {
    TensorT<S> wq, bq, wk, wv, bv, wo, bo;
};

// Note: the key projection carries no bias. A key-side bias shifts every
// chunk's logit by the same amount, and softmax is shift-invariant, so the
// parameter would be exactly inert.
template <typename S>
struct RelevanceWeights {
    TensorT<S> wq, bq, wk;
};

/// Within-chunk attention rows recorded for one hierarchical read.
struct ChunkAttention {
    std::size_t chunk_index = 0;
    std::vector<double> weights; // per head x key, flattened
};

struct LayerTrace {
    std::vector<double> relevance;        // one row per chunk (single query token)
    std::vector<int> chunk_places;        // aligned with relevance
    std::vector<std::size_t> selected;    // top-k chunk indices
    std::vector<ChunkAttention> within;
};

struct AttentionTrace {
    std::vector<LayerTrace> layers;
    std::size_t attended_keys = 0; // per query token, summed over one layer's read
};

// ---------------------------------------------------------------------------
// multi-head attention

/// Standard multi-head attention with output projection; scaling 1/sqrt(head_dim).
template <typename S>
TensorT<S> mha(const TensorT<S>& q, const TensorT<S>& k, const TensorT<S>& v,
               const MhaWeights<S>& w, int heads, int head_dim,
               std::vector<double>* attn_out = nullptr) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.extent(1) != k.extent(1) ||
        k.extent(0) != v.extent(0))
        throw std::invalid_argument("mha: incompatible shapes q=" + shape_str(q.shape()) +
                                    " k=" + shape_str(k.shape()) + " v=" + shape_str(v.shape()));
    auto qp = linear(q, w.wq, w.bq);
    auto kp = matmul(k, w.wk);
    auto vp = linear(v, w.wv, w.bv);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
    std::vector<TensorT<S>> ctx;
    ctx.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        const std::size_t c0 = static_cast<std::size_t>(h * head_dim);
        const std::size_t c1 = c0 + static_cast<std::size_t>(head_dim);
        auto qh = slice_cols(qp, c0, c1);
        auto kh = slice_cols(kp, c0, c1);
        auto vh = slice_cols(vp, c0, c1);
        auto logits = scale(matmul(qh, transpose(kh)), inv_sqrt);
        auto attn = softmax(logits, 1);
        if (attn_out) attn_out->insert(attn_out->end(), attn.data().begin(), attn.data().end());
        ctx.push_back(matmul(attn, vh));
    }
    auto merged = heads == 1 ? ctx[0] : concat(ctx, 1);
    return linear(merged, w.wo, w.bo);
}

// ---------------------------------------------------------------------------
// prepared memory views

/// Episode memory materialized for the attention stack. Built once per
/// episode; the same view feeds every layer.
template <typename S>
struct PreparedMemory {
    ReadMode mode = ReadMode::Flat;
    std::size_t total_frames = 0;
    TensorT<S> frames_matrix;           // flat mode: [n x dim]
    std::vector<TensorT<S>> chunk_mats; // hier modes: per chunk [size x dim]
    TensorT<S> relevance_keys;          // [num_chunks x dim] (flat: frames_matrix)
    std::vector<int> chunk_places;
    std::vector<std::size_t> chunk_sizes;
    std::vector<std::size_t> chunk_creation;

    std::size_t num_chunks() const { return chunk_sizes.size(); }
};

template <typename S>
PreparedMemory<S> prepare_flat(const std::vector<ExperienceFrame<S>>& frames) {
    if (frames.empty()) throw std::runtime_error("read: memory is empty, nothing to attend");
    PreparedMemory<S> p;
    p.mode = ReadMode::Flat;
    p.total_frames = frames.size();
    std::vector<TensorT<S>> rows;
    rows.reserve(frames.size());
    for (const auto& f : frames) rows.push_back(f.embedding);
    p.frames_matrix = stack_rows(rows);
    p.relevance_keys = p.frames_matrix;
    return p;
}

template <typename S>
using PlaceEmbedFn = std::function<TensorT<S>(int)>;

/// place_embed: chunk-level key term of the relevance computation; pass
/// nullptr for time-centric views (mixed chunks carry no single place).
template <typename S>
PreparedMemory<S> prepare_hier(const std::vector<Chunk<S>>& chunks, ReadMode mode,
                               const std::type_identity_t<PlaceEmbedFn<S>>& place_embed = nullptr) {
    if (chunks.empty()) throw std::runtime_error("read: memory is empty, nothing to attend");
    PreparedMemory<S> p;
    p.mode = mode;
    std::vector<TensorT<S>> keys;
    keys.reserve(chunks.size());
    for (const auto& c : chunks) {
        std::vector<TensorT<S>> rows;
        rows.reserve(c.frames.size());
        for (const auto& f : c.frames) rows.push_back(f.embedding);
        auto mat = stack_rows(rows);
        auto rep = mean(mat, 0);
        auto key = (place_embed && c.place_id >= 0) ? add(rep, place_embed(c.place_id)) : rep;
        p.chunk_mats.push_back(std::move(mat));
        keys.push_back(std::move(key));
        p.chunk_places.push_back(c.place_id);
        p.chunk_sizes.push_back(c.frames.size());
        p.chunk_creation.push_back(c.creation_index);
        p.total_frames += c.frames.size();
    }
    p.relevance_keys = stack_rows(keys);
    return p;
}

// ---------------------------------------------------------------------------
// reads

/// Relevance scores over chunks: R = softmax(Linear(q) . Linear(K)^T), with
/// K the chunk representative plus its place embedding. Softmax spans all
/// chunks of all places.
template <typename S>
TensorT<S> chunk_relevance(const TensorT<S>& q_norm, const TensorT<S>& keys,
                           const RelevanceWeights<S>& w) {
    if (keys.rank() != 2 || keys.extent(0) == 0)
        throw std::runtime_error("chunk_relevance: no chunks to score");
    auto lq = linear(q_norm, w.wq, w.bq);
    auto lk = matmul(keys, w.wk);
    return softmax(matmul(lq, transpose(lk)), 1);
}

/// Hierarchical read: per query token, select the top-k chunks by R and
/// combine within-chunk attention results, weighted by R. The top-k gate is
/// hard; gradients flow only through the selected chunks' values (all chunks
/// still receive relevance gradient through the softmax). Traces record the
/// first query token's read.
template <typename S>
TensorT<S> hcam_read(const TensorT<S>& q_norm, const PreparedMemory<S>& mem,
                     const RelevanceWeights<S>& rel, const MhaWeights<S>& w, int heads,
                     int head_dim, int top_k, LayerTrace* trace = nullptr,
                     std::size_t* attended_keys = nullptr) {
    if (q_norm.rank() != 2 || q_norm.extent(0) == 0)
        throw std::invalid_argument("hcam_read: expected [nq x dim] query, got " +
                                    shape_str(q_norm.shape()));
    const std::size_t nq = q_norm.extent(0);
    auto R = chunk_relevance(q_norm, mem.relevance_keys, rel);
    const std::size_t nc = mem.num_chunks();
    const std::size_t k = std::min(static_cast<std::size_t>(top_k), nc);
    auto rd = R.data();

    std::vector<TensorT<S>> out_rows;
    std::size_t keys_touched = 0;
    for (std::size_t row = 0; row < nq; ++row) {
        std::vector<std::size_t> order(nc);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (rd[row * nc + a] != rd[row * nc + b]) return rd[row * nc + a] > rd[row * nc + b];
            return mem.chunk_creation[a] < mem.chunk_creation[b]; // ties: earlier chunk
        });
        order.resize(k);
        std::sort(order.begin(), order.end()); // deterministic accumulation order

        auto q_row = nq == 1 ? q_norm : slice_rows(q_norm, row, row + 1);
        std::size_t row_keys = nc;
        TensorT<S> out;
        for (std::size_t idx : order) {
            std::vector<double>* attn_sink = nullptr;
            ChunkAttention ca;
            if (trace && row == 0) {
                ca.chunk_index = idx;
                attn_sink = &ca.weights;
            }
            auto read = mha(q_row, mem.chunk_mats[idx], mem.chunk_mats[idx], w, heads, head_dim,
                            attn_sink);
            auto weighted = scale_by(read, pick(R, row * nc + idx));
            out = out.defined() ? add(out, weighted) : weighted;
            row_keys += mem.chunk_sizes[idx];
            if (trace && row == 0) trace->within.push_back(std::move(ca));
        }
        if (trace && row == 0) {
            trace->relevance.assign(rd.begin(), rd.begin() + static_cast<std::ptrdiff_t>(nc));
            trace->chunk_places = mem.chunk_places;
            trace->selected = order;
        }
        keys_touched = row_keys; // identical across rows
        out_rows.push_back(std::move(out));
    }
    if (attended_keys) *attended_keys = keys_touched;
    if (out_rows.size() == 1) return out_rows[0];
    std::vector<TensorT<S>> flat;
    for (auto& r : out_rows)
        flat.push_back(reshape(r, {r.size()}));
    return stack_rows(flat);
}

/// Flat read over every stored frame: the degenerate hierarchical read where
/// each frame forms its own chunk and all chunks are selected. Since the sum
/// of R is 1, the per-frame attention collapses to
///   q* = ((R . X) Wv + bv) Wo + bo
/// which this path computes in fused form.
template <typename S>
TensorT<S> flat_read(const TensorT<S>& q_norm, const PreparedMemory<S>& mem,
                     const RelevanceWeights<S>& rel, const MhaWeights<S>& w,
                     LayerTrace* trace = nullptr, std::size_t* attended_keys = nullptr) {
    if (mem.mode != ReadMode::Flat)
        throw std::logic_error("flat_read: prepared memory is not a flat view");
    auto R = chunk_relevance(q_norm, mem.frames_matrix, rel);
    auto blended = matmul(R, mem.frames_matrix);
    auto out = linear(linear(blended, w.wv, w.bv), w.wo, w.bo);
    if (trace) {
        trace->relevance.assign(R.data().begin(), R.data().end());
        trace->selected.resize(mem.total_frames);
        std::iota(trace->selected.begin(), trace->selected.end(), 0);
    }
    if (attended_keys) *attended_keys = mem.total_frames;
    return out;
}

// ---------------------------------------------------------------------------
// the stacked model

template <typename S>
struct MemoryLayer {
    LayerNormWeights<S> ln_la, ln_hcam, ln_mlp;
    MhaWeights<S> la;
    RelevanceWeights<S> rel;
    MhaWeights<S> hcam;
    TensorT<S> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

/// Stacked memory layers (local attention, hierarchical memory read, MLP),
/// each pre-normalized with a residual connection, plus a linear classifier
/// head on the first query token. The same memory view feeds every layer.
template <typename S>
class SATModel {
public:
    SATModel() = default;
    SATModel(Rng& rng, SATConfig cfg) : cfg_(cfg) {
        cfg.validate();
        const auto dim = static_cast<std::size_t>(cfg.dim);
        const auto inner = static_cast<std::size_t>(cfg.inner_dim());
        const auto hidden = static_cast<std::size_t>(cfg.mlp_hidden);
        auto w_init = [&](std::size_t rows, std::size_t cols) {
            return TensorT<S>::randn(rng, {rows, cols}, 0.02).set_requires_grad();
        };
        auto b_init = [&](std::size_t n) { return TensorT<S>::zeros({n}).set_requires_grad(); };
        auto ln_init = [&]() {
            return LayerNormWeights<S>{TensorT<S>::ones({dim}).set_requires_grad(),
                                       TensorT<S>::zeros({dim}).set_requires_grad()};
        };
        auto mha_init = [&]() {
            return MhaWeights<S>{w_init(dim, inner),  b_init(inner), w_init(dim, inner),
                                 w_init(dim, inner),  b_init(inner), w_init(inner, dim),
                                 b_init(dim)};
        };
        layers_.resize(static_cast<std::size_t>(cfg.num_layers));
        for (auto& l : layers_) {
            l.ln_la = ln_init();
            l.ln_hcam = ln_init();
            l.ln_mlp = ln_init();
            l.la = mha_init();
            l.rel = RelevanceWeights<S>{w_init(dim, dim), b_init(dim), w_init(dim, dim)};
            l.hcam = mha_init();
            l.mlp_w1 = w_init(dim, hidden);
            l.mlp_b1 = b_init(hidden);
            l.mlp_w2 = w_init(hidden, dim);
            l.mlp_b2 = b_init(dim);
        }
        head_w_ = w_init(dim, static_cast<std::size_t>(cfg.num_classes));
        head_b_ = b_init(static_cast<std::size_t>(cfg.num_classes));
    }

    const SATConfig& config() const { return cfg_; }
    std::vector<MemoryLayer<S>>& layers() { return layers_; }
    TensorT<S>& head_w() { return head_w_; }
    TensorT<S>& head_b() { return head_b_; }

    /// query: [nq x dim]; returns logits [1 x num_classes] for the first token.
    TensorT<S> forward(const TensorT<S>& query, const PreparedMemory<S>& mem,
                       AttentionTrace* trace = nullptr) const {
        if (query.rank() != 2 || query.extent(1) != static_cast<std::size_t>(cfg_.dim))
            throw std::invalid_argument("forward: query must be [nq x " + std::to_string(cfg_.dim) +
                                        "], got " + shape_str(query.shape()));
        TensorT<S> x = query;
        if (trace) trace->layers.clear();
        for (const auto& l : layers_) {
            auto xn = layer_norm(x, l.ln_la.gain, l.ln_la.bias);
            x = add(x, mha(xn, xn, xn, l.la, cfg_.heads, cfg_.head_dim));

            auto qn = layer_norm(x, l.ln_hcam.gain, l.ln_hcam.bias);
            LayerTrace lt;
            LayerTrace* ltp = trace ? &lt : nullptr;
            std::size_t keys = 0;
            TensorT<S> read;
            if (mem.mode == ReadMode::Flat) {
                read = flat_read(qn, mem, l.rel, l.hcam, ltp, &keys);
            } else {
                read = hcam_read(qn, mem, l.rel, l.hcam, cfg_.heads, cfg_.head_dim, cfg_.top_k, ltp,
                                 &keys);
            }
            x = add(x, read);
            if (trace) {
                trace->layers.push_back(std::move(lt));
                trace->attended_keys = keys;
            }

            auto mn = layer_norm(x, l.ln_mlp.gain, l.ln_mlp.bias);
            auto hidden = relu(linear(mn, l.mlp_w1, l.mlp_b1));
            x = add(x, linear(hidden, l.mlp_w2, l.mlp_b2));
        }
        auto first = x.extent(0) == 1 ? x : slice_rows(x, 0, 1);
        return linear(first, head_w_, head_b_);
    }

    ParamList<S> parameters() {
        ParamList<S> out;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            auto& l = layers_[i];
            const std::string p = "layer" + std::to_string(i) + ".";
            auto add_ln = [&](const std::string& n, LayerNormWeights<S>& ln) {
                out.push_back({p + n + ".gain", ln.gain});
                out.push_back({p + n + ".bias", ln.bias});
            };
            auto add_mha = [&](const std::string& n, MhaWeights<S>& m) {
                out.push_back({p + n + ".wq", m.wq});
                out.push_back({p + n + ".bq", m.bq});
                out.push_back({p + n + ".wk", m.wk});
                out.push_back({p + n + ".wv", m.wv});
                out.push_back({p + n + ".bv", m.bv});
                out.push_back({p + n + ".wo", m.wo});
                out.push_back({p + n + ".bo", m.bo});
            };
            add_ln("ln_la", l.ln_la);
            add_mha("la", l.la);
            add_ln("ln_hcam", l.ln_hcam);
            out.push_back({p + "rel.wq", l.rel.wq});
            out.push_back({p + "rel.bq", l.rel.bq});
            out.push_back({p + "rel.wk", l.rel.wk});
            if (cfg_.read_mode == ReadMode::Flat) {
                // the fused flat read touches only the value/output projections
                out.push_back({p + "hcam.wv", l.hcam.wv});
                out.push_back({p + "hcam.bv", l.hcam.bv});
                out.push_back({p + "hcam.wo", l.hcam.wo});
                out.push_back({p + "hcam.bo", l.hcam.bo});
            } else {
                add_mha("hcam", l.hcam);
            }
            add_ln("ln_mlp", l.ln_mlp);
            out.push_back({p + "mlp.w1", l.mlp_w1});
            out.push_back({p + "mlp.b1", l.mlp_b1});
            out.push_back({p + "mlp.w2", l.mlp_w2});
            out.push_back({p + "mlp.b2", l.mlp_b2});
        }
        out.push_back({"head.w", head_w_});
        out.push_back({"head.b", head_b_});
        return out;
    }

private:
    SATConfig cfg_;
    std::vector<MemoryLayer<S>> layers_;
    TensorT<S> head_w_, head_b_;
};

} // namespace sat
