#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sat/optim.hpp"
#include "sat/rng.hpp"
#include "sat/tensor.hpp"

namespace sat {

enum class SpatialMode { None, Room1D, Sinusoidal2D, Learnable2D };

struct EmbeddingConfig {
    int dim = 128;
    SpatialMode spatial = SpatialMode::Room1D;
    int x_range = 0; // 2-D modes
    int y_range = 0;
    double base = 10000.0;

    void validate() const {
        if (dim <= 0 || dim % 2 != 0)
            throw std::invalid_argument("embedding dim must be positive and even, got " +
                                        std::to_string(dim));
        if ((spatial == SpatialMode::Sinusoidal2D || spatial == SpatialMode::Learnable2D) &&
            (x_range <= 0 || y_range <= 0))
            throw std::invalid_argument("2-D spatial modes require positive x_range/y_range");
    }
};

/// v[2i] = sin(index / base^(2i/dim)), v[2i+1] = cos(index / base^(2i/dim))
inline std::vector<double> sinusoidal_embed_values(std::size_t index, int dim,
                                                   double base = 10000.0) {
    if (dim <= 0 || dim % 2 != 0)
        throw std::invalid_argument("sinusoidal_embed: dim must be positive and even, got " +
                                    std::to_string(dim));
    std::vector<double> v(static_cast<std::size_t>(dim));
    for (int i = 0; 2 * i < dim; ++i) {
        const double freq = std::pow(base, -2.0 * i / dim);
        const double angle = static_cast<double>(index) * freq;
        v[static_cast<std::size_t>(2 * i)] = std::sin(angle);
        v[static_cast<std::size_t>(2 * i + 1)] = std::cos(angle);
    }
    return v;
}

template <typename S>
TensorT<S> sinusoidal_embed(std::size_t index, int dim, double base = 10000.0) {
    auto v = sinusoidal_embed_values(index, dim, base);
    std::vector<S> out(v.begin(), v.end());
    return TensorT<S>::from_vector({static_cast<std::size_t>(dim)}, std::move(out));
}

/// Disjoint 2-D sinusoidal embedding: the y indices are offset by x_range so
/// the two index sets never overlap.
template <typename S>
TensorT<S> spatial_embed_2d(int x, int y, const EmbeddingConfig& cfg) {
    if (x < 0 || x >= cfg.x_range || y < 0 || y >= cfg.y_range)
        throw std::invalid_argument("spatial_embed_2d: (" + std::to_string(x) + "," +
                                    std::to_string(y) + ") outside " + std::to_string(cfg.x_range) +
                                    "x" + std::to_string(cfg.y_range));
    auto ex = sinusoidal_embed_values(static_cast<std::size_t>(x), cfg.dim, cfg.base);
    auto ey = sinusoidal_embed_values(static_cast<std::size_t>(cfg.x_range + y), cfg.dim, cfg.base);
    std::vector<S> out(ex.size());
    for (std::size_t i = 0; i < ex.size(); ++i) out[i] = static_cast<S>(ex[i] + ey[i]);
    return TensorT<S>::from_vector({static_cast<std::size_t>(cfg.dim)}, std::move(out));
}

/// Separate learnable tables for the x and y axes; rows receive gradients.
template <typename S>
class LearnableEmbed2D {
public:
    LearnableEmbed2D() = default;
    LearnableEmbed2D(Rng& rng, const EmbeddingConfig& cfg)
        : x_range_(cfg.x_range), y_range_(cfg.y_range) {
        cfg.validate();
        table_x_ = TensorT<S>::randn(rng, {static_cast<std::size_t>(cfg.x_range),
                                           static_cast<std::size_t>(cfg.dim)},
                                     0.02)
                       .set_requires_grad();
        table_y_ = TensorT<S>::randn(rng, {static_cast<std::size_t>(cfg.y_range),
                                           static_cast<std::size_t>(cfg.dim)},
                                     0.02)
                       .set_requires_grad();
    }

    TensorT<S> embed(int x, int y) const {
        if (x < 0 || x >= x_range_ || y < 0 || y >= y_range_)
            throw std::out_of_range("learnable_embed_2d: (" + std::to_string(x) + "," +
                                    std::to_string(y) + ") out of range");
        return add(embedding_row(table_x_, static_cast<std::size_t>(x)),
                   embedding_row(table_y_, static_cast<std::size_t>(y)));
    }

    TensorT<S>& table_x() { return table_x_; }
    TensorT<S>& table_y() { return table_y_; }

    ParamList<S> parameters(const std::string& prefix = "place") {
        return {{prefix + ".table_x", table_x_}, {prefix + ".table_y", table_y_}};
    }

private:
    int x_range_ = 0;
    int y_range_ = 0;
    TensorT<S> table_x_;
    TensorT<S> table_y_;
};

/// Elementwise sum of the location, time, and observation embeddings.
template <typename S>
TensorT<S> sum_embed(const TensorT<S>& e_loc, const TensorT<S>& e_time, const TensorT<S>& e_obs) {
    if (e_loc.shape() != e_time.shape() || e_time.shape() != e_obs.shape())
        throw std::invalid_argument("sum_embed: dim mismatch " + shape_str(e_loc.shape()) + " / " +
                                    shape_str(e_time.shape()) + " / " + shape_str(e_obs.shape()));
    return add(add(e_loc, e_time), e_obs);
}

// ---------------------------------------------------------------------------
// symbolic observation encoder

/// One observation: a dancer performing one phase of a dance. Query symbols
/// carry the dancer id only.
struct ObservationSymbol {
    int dancer = -1;
    int dance = -1;
    int phase = -1;
    bool is_query() const { return dance < 0; }

    static ObservationSymbol query(int dancer) { return {dancer, -1, -1}; }
};

struct ObservationVocab {
    int dancers = 16;
    int dances = 8;
    int phases = 8;
    int onehot_dim() const { return dancers + dances + phases; }
};

/// One-hot concatenation of (dancer, dance, phase) projected by a learnable
/// linear layer; query symbols zero out the non-dancer fields.
template <typename S>
class ObservationEncoder {
public:
    ObservationEncoder() = default;
    ObservationEncoder(Rng& rng, const ObservationVocab& vocab, int dim) : vocab_(vocab) {
        w_ = TensorT<S>::randn(rng, {static_cast<std::size_t>(vocab.onehot_dim()),
                                     static_cast<std::size_t>(dim)},
                               0.02)
                 .set_requires_grad();
        b_ = TensorT<S>::zeros({static_cast<std::size_t>(dim)}).set_requires_grad();
    }

    TensorT<S> encode(const ObservationSymbol& sym) const {
        if (sym.dancer < 0 || sym.dancer >= vocab_.dancers)
            throw std::out_of_range("encode_observation: dancer " + std::to_string(sym.dancer) +
                                    " outside vocabulary " + std::to_string(vocab_.dancers));
        auto out = add(embedding_row(w_, static_cast<std::size_t>(sym.dancer)), b_);
        if (sym.is_query()) return out;
        if (sym.dance < 0 || sym.dance >= vocab_.dances)
            throw std::out_of_range("encode_observation: dance " + std::to_string(sym.dance) +
                                    " outside vocabulary " + std::to_string(vocab_.dances));
        if (sym.phase < 0 || sym.phase >= vocab_.phases)
            throw std::out_of_range("encode_observation: phase " + std::to_string(sym.phase) +
                                    " outside vocabulary " + std::to_string(vocab_.phases));
        out = add(out, embedding_row(w_, static_cast<std::size_t>(vocab_.dancers + sym.dance)));
        out = add(out,
                  embedding_row(w_, static_cast<std::size_t>(vocab_.dancers + vocab_.dances + sym.phase)));
        return out;
    }

    const ObservationVocab& vocab() const { return vocab_; }
    TensorT<S>& weight() { return w_; }
    TensorT<S>& bias() { return b_; }

    ParamList<S> parameters(const std::string& prefix = "encoder") {
        return {{prefix + ".w", w_}, {prefix + ".b", b_}};
    }

private:
    ObservationVocab vocab_;
    TensorT<S> w_;
    TensorT<S> b_;
};

} // namespace sat
