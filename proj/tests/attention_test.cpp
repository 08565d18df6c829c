#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "sat/attention.hpp"
#include "sat/gradcheck.hpp"
#include "sat/gradcheck_suite.hpp"
#include "sat/memory.hpp"

using namespace sat;

namespace {

template <typename S>
MhaWeights<S> random_mha(Rng& rng, int dim, int inner) {
    auto d = static_cast<std::size_t>(dim);
    auto i = static_cast<std::size_t>(inner);
    return MhaWeights<S>{TensorT<S>::randn(rng, {d, i}, 0.3), TensorT<S>::randn(rng, {i}, 0.1),
                         TensorT<S>::randn(rng, {d, i}, 0.3), TensorT<S>::randn(rng, {d, i}, 0.3),
                         TensorT<S>::randn(rng, {i}, 0.1),    TensorT<S>::randn(rng, {i, d}, 0.3),
                         TensorT<S>::randn(rng, {d}, 0.1)};
}

template <typename S>
RelevanceWeights<S> random_rel(Rng& rng, int dim) {
    auto d = static_cast<std::size_t>(dim);
    return RelevanceWeights<S>{TensorT<S>::randn(rng, {d, d}, 0.3), TensorT<S>::randn(rng, {d}, 0.1),
                               TensorT<S>::randn(rng, {d, d}, 0.3)};
}

template <typename S>
std::vector<ExperienceFrame<S>> random_frames(Rng& rng, std::size_t n, int dim,
                                              int places = 3) {
    std::vector<ExperienceFrame<S>> out;
    for (std::size_t t = 0; t < n; ++t) {
        ExperienceFrame<S> f;
        f.time_index = t;
        f.place_id = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(places)));
        f.embedding = TensorT<S>::randn(rng, {static_cast<std::size_t>(dim)}, 0.5);
        out.push_back(f);
    }
    return out;
}

template <typename S>
PreparedMemory<S> hier_view_of(const std::vector<ExperienceFrame<S>>& frames,
                               std::size_t chunk_size, bool place_pure) {
    MemoryConfig mc;
    mc.layout = place_pure ? MemoryLayout::Place : MemoryLayout::Flat;
    mc.chunk_size = chunk_size;
    EpisodicMemory<S> store(mc);
    for (const auto& f : frames) store.write(f, EvictionStrategy::FIFO);
    if (place_pure) {
        auto place_embed = [dim = static_cast<int>(frames[0].embedding.size())](int pid) {
            return sinusoidal_embed<S>(static_cast<std::size_t>(pid), dim);
        };
        return prepare_hier(store.chunk_view(), ReadMode::PlaceHier, place_embed);
    }
    return prepare_hier(store.flat_chunk_view(chunk_size), ReadMode::TimeHier, nullptr);
}

} // namespace

TEST(Mha, SingleKeyIgnoresQuery) {
    Rng rng(1);
    auto w = random_mha<double>(rng, 6, 6);
    auto k = TensorT<double>::randn(rng, {1, 6});
    auto q1 = TensorT<double>::randn(rng, {1, 6});
    auto q2 = TensorT<double>::randn(rng, {1, 6});
    auto y1 = mha(q1, k, k, w, 2, 3);
    auto y2 = mha(q2, k, k, w, 2, 3);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(y1.data()[i], y2.data()[i], 1e-12);
}

TEST(Mha, IdenticalKeysUniformWeights) {
    Rng rng(2);
    auto w = random_mha<double>(rng, 4, 4);
    auto row = TensorT<double>::randn(rng, {4});
    auto keys = stack_rows(std::vector<TensorT<double>>{row, row, row, row});
    auto q = TensorT<double>::randn(rng, {1, 4});
    std::vector<double> attn;
    mha(q, keys, keys, w, 2, 2, &attn);
    ASSERT_EQ(attn.size(), 8u); // 2 heads x 4 keys
    for (double a : attn) EXPECT_NEAR(a, 0.25, 1e-12);
}

TEST(Mha, ShapeMismatchRejected) {
    Rng rng(3);
    auto w = random_mha<double>(rng, 4, 4);
    auto q = TensorT<double>::zeros({1, 4});
    auto k = TensorT<double>::zeros({2, 4});
    auto v = TensorT<double>::zeros({3, 4});
    EXPECT_THROW(mha(q, k, v, w, 2, 2), std::invalid_argument);
}

TEST(Mha, GradientMatchesFiniteDifferences) {
    Rng rng(4);
    auto w = random_mha<double>(rng, 6, 6);
    auto q = TensorT<double>::randn(rng, {2, 6});
    auto k = TensorT<double>::randn(rng, {4, 6});
    auto v = TensorT<double>::randn(rng, {4, 6});
    auto f = [&]() {
        auto y = mha(q, k, v, w, 2, 3);
        return sum(mul(y, y));
    };
    EXPECT_LT(finite_diff_check(f, q), 1e-4);
    EXPECT_LT(finite_diff_check(f, k), 1e-4);
    EXPECT_LT(finite_diff_check(f, v), 1e-4);
    EXPECT_LT(finite_diff_check(f, w.wk), 1e-4);
}

TEST(ChunkRelevance, SingleChunkScoresOne) {
    Rng rng(5);
    auto w = random_rel<double>(rng, 6);
    auto q = TensorT<double>::randn(rng, {1, 6});
    auto keys = TensorT<double>::randn(rng, {1, 6});
    auto r = chunk_relevance(q, keys, w);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_DOUBLE_EQ(r.data()[0], 1.0);
}

TEST(ChunkRelevance, IdenticalKeysSplitEvenly) {
    Rng rng(6);
    auto w = random_rel<double>(rng, 6);
    auto q = TensorT<double>::randn(rng, {1, 6});
    auto row = TensorT<double>::randn(rng, {6});
    auto keys = stack_rows(std::vector<TensorT<double>>{row, row});
    auto r = chunk_relevance(q, keys, w);
    EXPECT_NEAR(r.data()[0], 0.5, 1e-12);
    EXPECT_NEAR(r.data()[1], 0.5, 1e-12);
}

TEST(ChunkRelevance, MatchesDirectEvaluation) {
    Rng rng(7);
    const int dim = 8;
    auto w = random_rel<double>(rng, dim);
    auto q = TensorT<double>::randn(rng, {1, dim});
    auto keys = TensorT<double>::randn(rng, {8, dim});
    auto r = chunk_relevance(q, keys, w);
    // direct high-precision evaluation
    std::vector<double> lq(dim, 0.0);
    for (int j = 0; j < dim; ++j) {
        for (int i = 0; i < dim; ++i) lq[j] += q.data()[i] * w.wq.at(i, j);
        lq[j] += w.bq.data()[j];
    }
    std::vector<double> logits(8, 0.0);
    for (int c = 0; c < 8; ++c) {
        std::vector<double> lk(dim, 0.0);
        for (int j = 0; j < dim; ++j)
            for (int i = 0; i < dim; ++i) lk[j] += keys.at(c, i) * w.wk.at(i, j);
        for (int j = 0; j < dim; ++j) logits[c] += lq[j] * lk[j];
    }
    double mx = *std::max_element(logits.begin(), logits.end());
    double denom = 0;
    for (double l : logits) denom += std::exp(l - mx);
    for (int c = 0; c < 8; ++c) EXPECT_NEAR(r.data()[c], std::exp(logits[c] - mx) / denom, 1e-6);
}

TEST(ChunkRelevance, RowsSumToOne) {
    Rng rng(8);
    auto w = random_rel<double>(rng, 6);
    auto q = TensorT<double>::randn(rng, {1, 6});
    auto keys = TensorT<double>::randn(rng, {5, 6});
    auto r = chunk_relevance(q, keys, w);
    double s = 0;
    for (double v : r.data()) {
        EXPECT_GE(v, 0.0);
        s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
}

TEST(HcamRead, SingleChunkEqualsPlainMha) {
    Rng rng(9);
    const int dim = 6;
    auto rel = random_rel<double>(rng, dim);
    auto w = random_mha<double>(rng, dim, dim);
    auto frames = random_frames<double>(rng, 3, dim, 1);
    auto view = hier_view_of(frames, 4, true);
    auto q = TensorT<double>::randn(rng, {1, dim});
    auto got = hcam_read(q, view, rel, w, 2, 3, 1);
    auto expect = mha(q, view.chunk_mats[0], view.chunk_mats[0], w, 2, 3);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got.data()[i], expect.data()[i], 1e-12);
}

TEST(HcamRead, FewerChunksThanTopKUsesAll) {
    Rng rng(10);
    const int dim = 6;
    auto rel = random_rel<double>(rng, dim);
    auto w = random_mha<double>(rng, dim, dim);
    auto frames = random_frames<double>(rng, 6, dim, 2);
    auto view = hier_view_of(frames, 2, true);
    LayerTrace lt;
    hcam_read(TensorT<double>::randn(rng, {1, dim}), view, rel, w, 2, 3, 100, &lt);
    EXPECT_EQ(lt.selected.size(), view.num_chunks());
}

TEST(HcamRead, AttendedKeyCountBounded) {
    Rng rng(11);
    const int dim = 6;
    auto rel = random_rel<double>(rng, dim);
    auto w = random_mha<double>(rng, dim, dim);
    auto frames = random_frames<double>(rng, 40, dim, 4);
    auto view = hier_view_of(frames, 4, true);
    std::size_t keys = 0;
    const int top_k = 3;
    hcam_read(TensorT<double>::randn(rng, {1, dim}), view, rel, w, 2, 3, top_k, nullptr, &keys);
    EXPECT_LE(keys, view.num_chunks() + static_cast<std::size_t>(top_k) * 4);
}

TEST(HcamRead, GatedReadGradientAtSeparatedPoint) {
    // scan seeds for a point whose top-k relevance gap is wide, so the hard
    // top-k set is stable under the finite-difference perturbations
    const int dim = 6;
    bool found = false;
    for (std::uint64_t seed = 12; seed < 64 && !found; ++seed) {
        Rng rng(seed);
        auto rel = random_rel<double>(rng, dim);
        auto w = random_mha<double>(rng, dim, dim);
        std::vector<ExperienceFrame<double>> frames;
        for (std::size_t t = 0; t < 8; ++t) {
            ExperienceFrame<double> f;
            f.time_index = t;
            f.place_id = static_cast<int>(t / 2);
            f.embedding = TensorT<double>::randn(rng, {dim}, 1.5).set_requires_grad();
            frames.push_back(f);
        }
        auto view = hier_view_of(frames, 2, true);
        auto q = TensorT<double>::randn(rng, {1, dim});
        auto r = chunk_relevance(q, view.relevance_keys, rel);
        std::vector<double> vals(r.data().begin(), r.data().end());
        std::sort(vals.rbegin(), vals.rend());
        if (vals[1] - vals[2] < 5e-2) continue;
        found = true;
        auto f = [&]() {
            auto view2 = hier_view_of(frames, 2, true); // rebuilt so perturbations propagate
            auto y = hcam_read(q, view2, rel, w, 2, 3, 2);
            return sum(mul(y, y));
        };
        EXPECT_LT(finite_diff_check(f, q), 1e-4);
        EXPECT_LT(finite_diff_check(f, rel.wk), 1e-4);
        EXPECT_LT(finite_diff_check(f, w.wv), 1e-4);
        EXPECT_LT(finite_diff_check(f, frames[0].embedding), 1e-4);
    }
    ASSERT_TRUE(found) << "no separated point in seed range";
}

TEST(HcamRead, PermutingChunksLeavesOutputUnchanged) {
    Rng rng(13);
    const int dim = 6;
    auto rel = random_rel<double>(rng, dim);
    auto w = random_mha<double>(rng, dim, dim);
    auto frames = random_frames<double>(rng, 12, dim, 4);
    auto view = hier_view_of(frames, 3, true);
    auto q = TensorT<double>::randn(rng, {1, dim});
    auto base_r = chunk_relevance(q, view.relevance_keys, rel);
    auto base = hcam_read(q, view, rel, w, 2, 3, 2);

    // permute the prepared chunks
    PreparedMemory<double> perm = view;
    std::vector<std::size_t> p(view.num_chunks());
    std::iota(p.begin(), p.end(), 0);
    Rng prng(99);
    prng.shuffle(p);
    std::vector<TensorT<double>> keys;
    for (std::size_t i = 0; i < p.size(); ++i) {
        perm.chunk_mats[i] = view.chunk_mats[p[i]];
        perm.chunk_places[i] = view.chunk_places[p[i]];
        perm.chunk_sizes[i] = view.chunk_sizes[p[i]];
        perm.chunk_creation[i] = view.chunk_creation[p[i]];
        keys.push_back(reshape(slice_rows(view.relevance_keys, p[i], p[i] + 1),
                               {static_cast<std::size_t>(dim)}));
    }
    perm.relevance_keys = stack_rows(keys);
    auto perm_r = chunk_relevance(q, perm.relevance_keys, rel);
    for (std::size_t i = 0; i < p.size(); ++i)
        EXPECT_NEAR(perm_r.data()[i], base_r.data()[p[i]], 1e-9);
    auto permuted = hcam_read(q, perm, rel, w, 2, 3, 2);
    for (std::size_t i = 0; i < base.size(); ++i)
        EXPECT_NEAR(base.data()[i], permuted.data()[i], 1e-9);
}

TEST(FlatRead, OneFrameOutputIndependentOfQuery) {
    Rng rng(14);
    const int dim = 6;
    auto rel = random_rel<double>(rng, dim);
    auto w = random_mha<double>(rng, dim, dim);
    auto frames = random_frames<double>(rng, 1, dim, 1);
    auto view = prepare_flat(frames);
    auto y1 = flat_read(TensorT<double>::randn(rng, {1, dim}), view, rel, w);
    auto y2 = flat_read(TensorT<double>::randn(rng, {1, dim}), view, rel, w);
    for (std::size_t i = 0; i < y1.size(); ++i) EXPECT_NEAR(y1.data()[i], y2.data()[i], 1e-12);
}

TEST(FlatRead, AttendsToExactlyAllFrames) {
    Rng rng(15);
    const int dim = 6;
    auto rel = random_rel<double>(rng, dim);
    auto w = random_mha<double>(rng, dim, dim);
    auto frames = random_frames<double>(rng, 17, dim, 3);
    auto view = prepare_flat(frames);
    std::size_t keys = 0;
    flat_read(TensorT<double>::randn(rng, {1, dim}), view, rel, w, nullptr, &keys);
    EXPECT_EQ(keys, 17u);
}

TEST(FlatRead, EmptyMemorySignalsNoRead) {
    std::vector<ExperienceFrame<double>> none;
    EXPECT_THROW(prepare_flat(none), std::runtime_error);
}

TEST(DegenerateEquivalence, SingletonChunksMatchFlatPath) {
    // chunk_size=1 and top_k=all: the hierarchical path must match the fused
    // flat path to high precision (float32 run, 1e-5 bound)
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        Rng rng(derive_seed(seed, 77));
        const int dim = 8;
        auto rel = random_rel<float>(rng, dim);
        auto w = random_mha<float>(rng, dim, dim);
        const std::size_t n = 3 + rng.uniform_int(24);
        auto frames = random_frames<float>(rng, n, dim, 3);
        auto q = Tensor::randn(rng, {1, dim});

        auto flat_view = prepare_flat(frames);
        auto fused = flat_read(q, flat_view, rel, w);

        MemoryConfig mc;
        mc.layout = MemoryLayout::Flat;
        mc.chunk_size = 1;
        EpisodicMemory<float> store(mc);
        for (const auto& f : frames) store.write(f, EvictionStrategy::FIFO);
        auto hier_view = prepare_hier(store.flat_chunk_view(1), ReadMode::TimeHier, nullptr);
        auto looped = hcam_read(q, hier_view, rel, w, 2, 4, static_cast<int>(n));

        for (std::size_t i = 0; i < fused.size(); ++i)
            EXPECT_NEAR(fused.data()[i], looped.data()[i], 1e-5) << "seed " << seed;
    }
}

TEST(Model, ZeroOutputProjectionsGiveHeadBias) {
    Rng rng(16);
    SATConfig cfg;
    cfg.num_layers = 3;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.head_dim = 4;
    cfg.mlp_hidden = 8;
    cfg.chunk_size = 2;
    cfg.top_k = 2;
    cfg.read_mode = ReadMode::PlaceHier;
    cfg.num_classes = 5;
    SATModel<double> model(rng, cfg);
    for (auto& l : model.layers()) {
        for (auto* t : {&l.la.wo, &l.la.bo, &l.hcam.wo, &l.hcam.bo, &l.mlp_w2, &l.mlp_b2})
            for (auto& v : t->data()) v = 0;
    }
    for (auto& v : model.head_w().data()) v = 0;
    model.head_b() = TensorT<double>::from_vector({5}, {1, 2, 3, 4, 5}).set_requires_grad();

    auto frames = random_frames<double>(rng, 6, 8, 3);
    auto view = hier_view_of(frames, 2, true);
    auto q = TensorT<double>::randn(rng, {1, 8});
    auto logits = model.forward(q, view);
    for (std::size_t i = 0; i < 5; ++i)
        EXPECT_NEAR(logits.data()[i], static_cast<double>(i + 1), 1e-12);
}

TEST(Model, DeterministicForward) {
    auto build_and_run = [](std::uint64_t seed) {
        Rng rng(seed);
        SATConfig cfg;
        cfg.num_layers = 2;
        cfg.dim = 8;
        cfg.heads = 2;
        cfg.head_dim = 4;
        cfg.mlp_hidden = 8;
        cfg.read_mode = ReadMode::Flat;
        cfg.num_classes = 4;
        SATModel<float> model(rng, cfg);
        auto frames = random_frames<float>(rng, 10, 8, 2);
        auto view = prepare_flat(frames);
        auto q = Tensor::randn(rng, {1, 8});
        auto logits = model.forward(q, view);
        return std::vector<float>(logits.data().begin(), logits.data().end());
    };
    EXPECT_EQ(build_and_run(7), build_and_run(7));
}

TEST(Model, TraceRowsSumToOne) {
    Rng rng(18);
    SATConfig cfg;
    cfg.num_layers = 2;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.head_dim = 4;
    cfg.mlp_hidden = 8;
    cfg.chunk_size = 2;
    cfg.top_k = 2;
    cfg.read_mode = ReadMode::PlaceHier;
    cfg.num_classes = 4;
    SATModel<double> model(rng, cfg);
    auto frames = random_frames<double>(rng, 12, 8, 3);
    auto view = hier_view_of(frames, 2, true);
    AttentionTrace trace;
    model.forward(TensorT<double>::randn(rng, {1, 8}), view, &trace);
    ASSERT_EQ(trace.layers.size(), 2u);
    for (const auto& lt : trace.layers) {
        double s = 0;
        for (double v : lt.relevance) s += v;
        EXPECT_NEAR(s, 1.0, 1e-6);
        for (const auto& ca : lt.within) {
            // each head's row over that chunk's keys sums to 1
            const std::size_t keys = ca.weights.size() / 2;
            for (int h = 0; h < 2; ++h) {
                double hs = 0;
                for (std::size_t i = 0; i < keys; ++i) hs += ca.weights[h * keys + i];
                EXPECT_NEAR(hs, 1.0, 1e-6);
            }
        }
    }
}

TEST(Model, CostCountsHierBelowFlatForLargeMemories) {
    Rng rng(19);
    const int dim = 8;
    auto rel = random_rel<float>(rng, dim);
    auto w = random_mha<float>(rng, dim, dim);
    for (std::size_t n : {512u, 1024u, 2048u}) {
        auto frames = random_frames<float>(rng, n, dim, 8);
        auto flat_view = prepare_flat(frames);
        std::size_t flat_keys = 0;
        flat_read(Tensor::randn(rng, {1, dim}), flat_view, rel, w, nullptr, &flat_keys);

        auto hier_view = hier_view_of(frames, 32, true);
        std::size_t hier_keys = 0;
        hcam_read(Tensor::randn(rng, {1, dim}), hier_view, rel, w, 2, 4, 4, nullptr, &hier_keys);
        EXPECT_EQ(flat_keys, n);
        EXPECT_LE(hier_keys, hier_view.num_chunks() + 4 * 32);
        EXPECT_LT(hier_keys, flat_keys);
    }
}

TEST(GradSuite, AllOpsPassAtReducedSeedCount) {
    // full 20-seed sweep runs in the acceptance suite
    auto reports = run_gradcheck_suite(3);
    for (const auto& r : reports) EXPECT_TRUE(r.pass) << r.name << " err " << r.max_rel_err;
}
