#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sat/attention.hpp"
#include "sat/embeddings.hpp"
#include "sat/gradcheck.hpp"
#include "sat/memory.hpp"
#include "sat/rng.hpp"
#include "sat/tensor.hpp"

namespace sat {

namespace detail {

/// Tiny model + memory used for the whole-stack gradient check. The memory
/// view is rebuilt on every loss evaluation so finite-difference
/// perturbations of the frame embeddings propagate into the read path.
struct TinyStack {
    SATModel<double> model;
    std::vector<TensorT<double>> frame_embeddings;
    TensorT<double> query;
    ReadMode mode = ReadMode::Flat;
    std::vector<ExperienceFrame<double>> frames;

    static TinyStack make(Rng& rng, ReadMode mode) {
        SATConfig cfg;
        cfg.num_layers = 2;
        cfg.dim = 8;
        cfg.heads = 1;
        cfg.head_dim = 8;
        cfg.mlp_hidden = 8;
        cfg.chunk_size = 2;
        // top_k covers all three chunks: the hard top-k gate is locally
        // constant only away from relevance ties, so the whole-stack check
        // runs in the ungated configuration; the gated read is checked at a
        // separated point in the attention tests.
        cfg.top_k = 3;
        cfg.read_mode = mode;
        cfg.num_classes = 3;
        TinyStack ts;
        ts.model = SATModel<double>(rng, cfg);
        ts.mode = mode;
        // re-draw all weights at a generic O(0.3) point: at the tiny training
        // init the relevance-path gradients sit below the finite-difference
        // noise floor, which says nothing about backward correctness
        for (auto& p : ts.model.parameters()) {
            const bool is_gain = p.name.find(".gain") != std::string::npos;
            for (auto& v : p.tensor.data()) v = (is_gain ? 1.0 : 0.0) + 0.3 * rng.normal();
        }
        for (std::size_t t = 0; t < 6; ++t) {
            ExperienceFrame<double> f;
            f.time_index = t;
            f.place_id = static_cast<int>(t / 2);
            f.embedding = TensorT<double>::randn(rng, {8}, 0.5).set_requires_grad();
            ts.frame_embeddings.push_back(f.embedding);
            ts.frames.push_back(f);
        }
        // two query tokens so local self-attention is non-degenerate
        ts.query = TensorT<double>::randn(rng, {2, 8}, 0.5).set_requires_grad();
        return ts;
    }

    TensorT<double> loss() const {
        PreparedMemory<double> mem;
        if (mode == ReadMode::Flat) {
            mem = prepare_flat(frames);
        } else {
            MemoryConfig mc;
            mc.layout = MemoryLayout::Place;
            mc.chunk_size = 2;
            EpisodicMemory<double> store(mc);
            for (const auto& f : frames) store.write(f, EvictionStrategy::FIFO);
            auto place_embed = [](int pid) {
                return sinusoidal_embed<double>(static_cast<std::size_t>(pid), 8);
            };
            mem = prepare_hier(store.chunk_view(), mode, place_embed);
        }
        auto logits = model.forward(query, mem);
        return cross_entropy(logits, {1});
    }
};

} // namespace detail

/// Finite-difference verification of every differentiable op plus the full
/// tiny 2-layer stack, across `seeds` random draws each. 64-bit throughout.
inline std::vector<GradCheckReport> run_gradcheck_suite(unsigned seeds = 20, double tol = 1e-4) {
    std::vector<GradCheckReport> reports;
    auto run = [&](const std::string& name,
                   const std::function<double(std::uint64_t)>& one_seed) {
        GradCheckReport r;
        r.name = name;
        for (std::uint64_t s = 0; s < seeds; ++s)
            r.max_rel_err = std::max(r.max_rel_err, one_seed(s));
        r.pass = r.max_rel_err < tol;
        reports.push_back(r);
    };

    run("matmul", [](std::uint64_t seed) {
        Rng rng(derive_seed(seed, 1));
        auto a = TensorT<double>::randn(rng, {3, 4});
        auto b = TensorT<double>::randn(rng, {4, 2});
        auto f = [&]() { return sum(mul(matmul(a, b), matmul(a, b))); };
        return std::max(finite_diff_check(f, a), finite_diff_check(f, b));
    });
    run("softmax", [](std::uint64_t seed) {
        Rng rng(derive_seed(seed, 2));
        auto x = TensorT<double>::randn(rng, {2, 5});
        auto w = TensorT<double>::randn(rng, {2, 5});
        auto f = [&]() { return sum(mul(softmax(x, 1), w)); };
        return finite_diff_check(f, x);
    });
    run("layer_norm", [](std::uint64_t seed) {
        Rng rng(derive_seed(seed, 3));
        auto x = TensorT<double>::randn(rng, {2, 8});
        auto g = TensorT<double>::randn(rng, {8}, 0.5);
        auto b = TensorT<double>::randn(rng, {8}, 0.5);
        auto w = TensorT<double>::randn(rng, {2, 8});
        auto f = [&]() { return sum(mul(layer_norm(x, g, b), w)); };
        return std::max({finite_diff_check(f, x), finite_diff_check(f, g), finite_diff_check(f, b)});
    });
    run("relu", [](std::uint64_t seed) {
        Rng rng(derive_seed(seed, 4));
        auto x = TensorT<double>::randn(rng, {3, 3});
        for (auto& v : x.data()) v += (v >= 0 ? 0.2 : -0.2); // keep clear of the kink
        auto f = [&]() { return sum(mul(relu(x), relu(x))); };
        return finite_diff_check(f, x);
    });
    run("add_mul_sub", [](std::uint64_t seed) {
        Rng rng(derive_seed(seed, 5));
        auto a = TensorT<double>::randn(rng, {2, 4});
        auto b = TensorT<double>::randn(rng, {4});
        auto f = [&]() { return sum(mul(sub(add(a, b), mul(a, b)), a)); };
        return std::max(finite_diff_check(f, a), finite_diff_check(f, b));
    });
    run("concat", [](std::uint64_t seed) {
        Rng rng(derive_seed(seed, 6));
        auto a = TensorT<double>::randn(rng, {2, 3});
        auto b = TensorT<double>::randn(rng, {2, 2});
        auto w = TensorT<double>::randn(rng, {2, 5});
        auto f = [&]() { return sum(mul(concat(std::vector<TensorT<double>>{a, b}, 1), w)); };
        return std::max(finite_diff_check(f, a), finite_diff_check(f, b));
    });
    run("mean", [](std::uint64_t seed) {
        Rng rng(derive_seed(seed, 7));
        auto a = TensorT<double>::randn(rng, {3, 4});
        auto f = [&]() { return sum(mul(mean(a, 1), mean(a, 1))); };
        return finite_diff_check(f, a);
    });
    run("embedding_lookup", [](std::uint64_t seed) {
        Rng rng(derive_seed(seed, 8));
        auto t = TensorT<double>::randn(rng, {5, 4});
        auto f = [&]() {
            auto r = embedding_lookup(t, {0, 2, 2, 4});
            return sum(mul(r, r));
        };
        return finite_diff_check(f, t);
    });
    run("cross_entropy", [](std::uint64_t seed) {
        Rng rng(derive_seed(seed, 9));
        auto logits = TensorT<double>::randn(rng, {3, 4});
        auto f = [&]() { return cross_entropy(logits, {0, 3, 1}); };
        return finite_diff_check(f, logits);
    });
    run("sum_embed_encoder", [](std::uint64_t seed) {
        Rng rng(derive_seed(seed, 10));
        ObservationVocab vocab{4, 3, 3};
        ObservationEncoder<double> enc(rng, vocab, 8);
        auto e_time = sinusoidal_embed<double>(3, 8);
        auto e_place = sinusoidal_embed<double>(1, 8);
        auto f = [&]() {
            auto x = sum_embed(e_place, e_time, enc.encode({1, 2, 0}));
            return sum(mul(x, x));
        };
        return std::max(finite_diff_check(f, enc.weight()), finite_diff_check(f, enc.bias()));
    });
    run("learnable_embed_2d", [](std::uint64_t seed) {
        Rng rng(derive_seed(seed, 11));
        EmbeddingConfig cfg;
        cfg.dim = 8;
        cfg.spatial = SpatialMode::Learnable2D;
        cfg.x_range = 3;
        cfg.y_range = 3;
        LearnableEmbed2D<double> emb(rng, cfg);
        auto f = [&]() {
            auto e = emb.embed(1, 2);
            return sum(mul(e, e));
        };
        return std::max(finite_diff_check(f, emb.table_x()), finite_diff_check(f, emb.table_y()));
    });
    run("mha", [](std::uint64_t seed) {
        Rng rng(derive_seed(seed, 12));
        MhaWeights<double> w{
            TensorT<double>::randn(rng, {6, 6}, 0.3), TensorT<double>::randn(rng, {6}, 0.1),
            TensorT<double>::randn(rng, {6, 6}, 0.3), TensorT<double>::randn(rng, {6, 6}, 0.3),
            TensorT<double>::randn(rng, {6}, 0.1),    TensorT<double>::randn(rng, {6, 6}, 0.3),
            TensorT<double>::randn(rng, {6}, 0.1)};
        auto q = TensorT<double>::randn(rng, {2, 6});
        auto k = TensorT<double>::randn(rng, {4, 6});
        auto v = TensorT<double>::randn(rng, {4, 6});
        auto f = [&]() {
            auto y = mha(q, k, v, w, 2, 3);
            return sum(mul(y, y));
        };
        return std::max({finite_diff_check(f, q), finite_diff_check(f, k), finite_diff_check(f, v),
                         finite_diff_check(f, w.wq), finite_diff_check(f, w.wo),
                         finite_diff_check(f, w.bv)});
    });
    run("chunk_relevance", [](std::uint64_t seed) {
        Rng rng(derive_seed(seed, 13));
        RelevanceWeights<double> w{TensorT<double>::randn(rng, {6, 6}, 0.3),
                                   TensorT<double>::randn(rng, {6}, 0.1),
                                   TensorT<double>::randn(rng, {6, 6}, 0.3)};
        auto q = TensorT<double>::randn(rng, {1, 6});
        auto keys = TensorT<double>::randn(rng, {5, 6});
        auto probe = TensorT<double>::randn(rng, {1, 5});
        auto f = [&]() { return sum(mul(chunk_relevance(q, keys, w), probe)); };
        return std::max({finite_diff_check(f, q), finite_diff_check(f, keys),
                         finite_diff_check(f, w.wq), finite_diff_check(f, w.wk)});
    });
    run("full_model_flat", [](std::uint64_t seed) {
        Rng rng(derive_seed(seed, 14));
        auto ts = detail::TinyStack::make(rng, ReadMode::Flat);
        auto f = [&]() { return ts.loss(); };
        double worst = finite_diff_check(f, ts.query);
        auto params = ts.model.parameters();
        for (auto& p : params) worst = std::max(worst, finite_diff_check(f, p.tensor));
        for (auto& e : ts.frame_embeddings) worst = std::max(worst, finite_diff_check(f, e));
        return worst;
    });
    run("full_model_place_hier", [](std::uint64_t seed) {
        Rng rng(derive_seed(seed, 15));
        auto ts = detail::TinyStack::make(rng, ReadMode::PlaceHier);
        auto f = [&]() { return ts.loss(); };
        double worst = finite_diff_check(f, ts.query);
        auto params = ts.model.parameters();
        for (auto& p : params) worst = std::max(worst, finite_diff_check(f, p.tensor));
        for (auto& e : ts.frame_embeddings) worst = std::max(worst, finite_diff_check(f, e));
        return worst;
    });
    return reports;
}

} // namespace sat
