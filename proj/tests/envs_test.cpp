#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

#include "sat/envs.hpp"

using namespace sat;

TEST(Geometry, GoldenPerimeterRing) {
    // hand-enumerated clockwise ring on the 3x3 row-major grid
    const std::vector<std::pair<int, int>> golden{{0, 1}, {1, 2}, {2, 5}, {5, 8},
                                                  {8, 7}, {7, 6}, {6, 3}, {3, 0}};
    for (auto [from, to] : golden) EXPECT_EQ(ring_next_3x3(from), to);
    EXPECT_THROW(ring_next_3x3(4), std::invalid_argument);
}

TEST(Geometry, OppositeRooms) {
    EXPECT_EQ(opposite_room_3x3(0), 8);
    EXPECT_EQ(opposite_room_3x3(1), 7);
    EXPECT_EQ(opposite_room_3x3(2), 6);
    EXPECT_EQ(opposite_room_3x3(3), 5);
    EXPECT_THROW(opposite_room_3x3(4), std::invalid_argument);
}

TEST(NextBallet, QueryLabelFollowsRing) {
    auto cfg = default_ballet_config(TaskKind::NextBallet);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        auto ep = gen_next_ballet(seed, cfg);
        // label must equal the dance of the ring-next room of the query room
        int qroom = -1;
        std::map<int, int> dance_of;
        for (const auto& s : ep.steps) {
            dance_of[s.place] = s.dance;
            if (s.dancer == ep.query_dancer) qroom = s.place;
        }
        ASSERT_NE(qroom, -1);
        EXPECT_NE(qroom, 4); // center excluded
        ASSERT_TRUE(dance_of.count(ring_next_3x3(qroom)));
        EXPECT_EQ(ep.label_dance, dance_of[ring_next_3x3(qroom)]);
    }
}

TEST(NextBallet, DeterministicPerSeed) {
    auto cfg = default_ballet_config(TaskKind::NextBallet);
    auto a = gen_next_ballet(7, cfg);
    auto b = gen_next_ballet(7, cfg);
    ASSERT_EQ(a.steps.size(), b.steps.size());
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
        EXPECT_EQ(a.steps[i].place, b.steps[i].place);
        EXPECT_EQ(a.steps[i].dancer, b.steps[i].dancer);
        EXPECT_EQ(a.steps[i].dance, b.steps[i].dance);
    }
    EXPECT_EQ(a.query_dancer, b.query_dancer);
    EXPECT_EQ(a.label_dance, b.label_dance);
}

TEST(ShortStay, StationaryAgentStaysInOneRoom) {
    // a 1x1 grid forces every move to be wall-blocked
    auto cfg = default_ballet_config(TaskKind::ShortStay);
    cfg.grid_w = 1;
    cfg.grid_h = 1;
    cfg.steps = 32;
    auto ep = gen_short_stay(3, cfg);
    for (const auto& s : ep.steps) EXPECT_EQ(s.place, ep.steps[0].place);
}

TEST(ShortStay, WallBlockedMovesStayPut) {
    auto cfg = default_ballet_config(TaskKind::ShortStay);
    cfg.steps = 400;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        auto ep = gen_short_stay(seed, cfg);
        for (std::size_t i = 1; i < ep.steps.size(); ++i) {
            const int a = ep.steps[i - 1].place, b = ep.steps[i].place;
            if (a == b) continue;
            const int ar = a / cfg.grid_w, ac = a % cfg.grid_w;
            const int br = b / cfg.grid_w, bc = b % cfg.grid_w;
            EXPECT_EQ(std::abs(ar - br) + std::abs(ac - bc), 1)
                << "non-adjacent transition " << a << "->" << b;
        }
    }
}

TEST(ShortStay, PhaseRunsModuloDanceLength) {
    auto cfg = default_ballet_config(TaskKind::ShortStay);
    cfg.steps = 64;
    auto ep = gen_short_stay(11, cfg);
    for (const auto& s : ep.steps) EXPECT_EQ(s.phase, static_cast<int>(s.t) % cfg.dance_len);
}

TEST(StrategyTasks, LifoQueriesComeFromOldestHalf) {
    auto cfg = default_ballet_config(TaskKind::BalletLIFO);
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        auto ep = gen_strategy_task(TaskKind::BalletLIFO, seed, cfg);
        std::size_t first_t = ep.steps.size();
        for (const auto& s : ep.steps)
            if (s.dancer == ep.query_dancer) first_t = std::min(first_t, s.t);
        EXPECT_LT(first_t, ep.steps.size() / 2) << "seed " << seed;
    }
}

TEST(StrategyTasks, FifoQueriesComeFromNewestHalf) {
    auto cfg = default_ballet_config(TaskKind::BalletFIFO);
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        auto ep = gen_strategy_task(TaskKind::BalletFIFO, seed, cfg);
        std::size_t first_t = ep.steps.size();
        for (const auto& s : ep.steps)
            if (s.dancer == ep.query_dancer) first_t = std::min(first_t, s.t);
        EXPECT_GE(first_t, ep.steps.size() / 2) << "seed " << seed;
    }
}

TEST(StrategyTasks, MvfoQueriesAreRoomsMostRecentDancer) {
    auto cfg = default_ballet_config(TaskKind::BalletMVFO);
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        auto ep = gen_strategy_task(TaskKind::BalletMVFO, seed, cfg);
        int qroom = -1;
        for (const auto& s : ep.steps)
            if (s.dancer == ep.query_dancer) qroom = s.place;
        // the query dancer is the last dancer observed in its room
        int last_dancer = -1;
        for (const auto& s : ep.steps)
            if (s.place == qroom) last_dancer = s.dancer;
        EXPECT_EQ(last_dancer, ep.query_dancer) << "seed " << seed;
    }
}

TEST(StrategyTasks, LvfoQueriesComeFromMostVisitedRoom) {
    auto cfg = default_ballet_config(TaskKind::BalletLVFO);
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        auto ep = gen_strategy_task(TaskKind::BalletLVFO, seed, cfg);
        int qroom = -1;
        std::map<int, int> entries;
        int prev = -1;
        for (const auto& s : ep.steps) {
            if (s.place != prev) entries[s.place]++;
            prev = s.place;
            if (s.dancer == ep.query_dancer) qroom = s.place;
        }
        int best = 0;
        for (const auto& [r, n] : entries) best = std::max(best, n);
        EXPECT_EQ(entries[qroom], best) << "seed " << seed;
    }
}

TEST(StrategyTasks, MatchedStrategyRetainsQueryFrames) {
    // replay oracle over 1,000 seeds per task
    for (TaskKind kind : {TaskKind::BalletFIFO, TaskKind::BalletLIFO, TaskKind::BalletMVFO,
                          TaskKind::BalletLVFO}) {
        auto cfg = default_ballet_config(kind);
        for (std::uint64_t seed = 0; seed < 1000; ++seed) {
            auto ep = gen_strategy_task(kind, seed, cfg);
            auto retained = replay_retained(ep.steps, matched_strategy(kind), ep.capacity_hint);
            ASSERT_TRUE(query_answerable(ep, retained))
                << task_name(kind) << " seed " << seed;
        }
    }
}

TEST(StrategyTasks, MismatchedFifoLifoPairDropsQueryFrames) {
    // the opposing strategy loses the query for >= 95% of seeds
    int fifo_dropped = 0, lifo_dropped = 0;
    const int n = 1000;
    {
        auto cfg = default_ballet_config(TaskKind::BalletFIFO);
        for (std::uint64_t seed = 0; seed < n; ++seed) {
            auto ep = gen_strategy_task(TaskKind::BalletFIFO, seed, cfg);
            auto retained = replay_retained(ep.steps, EvictionStrategy::LIFO, ep.capacity_hint);
            if (!query_answerable(ep, retained)) ++fifo_dropped;
        }
    }
    {
        auto cfg = default_ballet_config(TaskKind::BalletLIFO);
        for (std::uint64_t seed = 0; seed < n; ++seed) {
            auto ep = gen_strategy_task(TaskKind::BalletLIFO, seed, cfg);
            auto retained = replay_retained(ep.steps, EvictionStrategy::FIFO, ep.capacity_hint);
            if (!query_answerable(ep, retained)) ++lifo_dropped;
        }
    }
    EXPECT_GE(fifo_dropped, static_cast<int>(0.95 * n));
    EXPECT_GE(lifo_dropped, static_cast<int>(0.95 * n));
}

TEST(BalletAba, ExactlyEightDistinctRooms) {
    auto cfg = default_ballet_config(TaskKind::BalletABA);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        auto ep = gen_ballet_aba(seed, cfg);
        std::set<int> rooms;
        for (const auto& s : ep.steps) rooms.insert(s.place);
        EXPECT_EQ(rooms.size(), 8u);
        EXPECT_EQ(ep.steps.size(), static_cast<std::size_t>(cfg.visits * cfg.dance_len));
    }
}

TEST(BalletAba, FlatFifoDropsQueryPlaceLayoutKeepsIt) {
    auto cfg = default_ballet_config(TaskKind::BalletABA);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        auto ep = gen_ballet_aba(seed, cfg);
        auto fifo = replay_retained(ep.steps, EvictionStrategy::FIFO, ep.capacity_hint);
        EXPECT_FALSE(query_answerable(ep, fifo)) << "seed " << seed;
        auto place = replay_retained(ep.steps, EvictionStrategy::FIFO, ep.capacity_hint,
                                     ep.capacity_hint / 8, MemoryLayout::Place,
                                     static_cast<std::size_t>(cfg.dance_len));
        EXPECT_TRUE(query_answerable(ep, place)) << "seed " << seed;
    }
}

TEST(OppositeBallet, CenterNeverObserved) {
    auto cfg = default_ballet_config(TaskKind::OppositeBallet);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        auto ep = gen_opposite_ballet(seed, cfg);
        for (const auto& s : ep.steps) EXPECT_NE(s.place, 4);
    }
}

TEST(OppositeBallet, DeterministicAndLabelled) {
    auto cfg = default_ballet_config(TaskKind::OppositeBallet);
    auto a = gen_opposite_ballet(5, cfg);
    auto b = gen_opposite_ballet(5, cfg);
    EXPECT_EQ(a.query_dancer, b.query_dancer);
    EXPECT_EQ(a.label_dance, b.label_dance);
    EXPECT_EQ(recompute_label(a), a.label_dance);
}

TEST(LabelOracle, RecomputationMatchesGeneratorAcrossSeeds) {
    // independent raw-stream scan over >= 1,000 seeds per task
    for (TaskKind kind : {TaskKind::NextBallet, TaskKind::ShortStay, TaskKind::BalletFIFO,
                          TaskKind::BalletLIFO, TaskKind::BalletMVFO, TaskKind::BalletLVFO,
                          TaskKind::BalletABA, TaskKind::OppositeBallet}) {
        auto cfg = default_ballet_config(kind);
        for (std::uint64_t seed = 0; seed < 1000; ++seed) {
            auto ep = gen_episode(kind, seed, cfg);
            ASSERT_EQ(recompute_label(ep), ep.label_dance)
                << task_name(kind) << " seed " << seed;
        }
    }
}

TEST(ChanceAccuracy, MatchesClassCount) {
    auto cfg = default_ballet_config(TaskKind::NextBallet);
    auto ep = gen_next_ballet(0, cfg);
    EXPECT_DOUBLE_EQ(ep.chance_accuracy(), 1.0 / 8.0);
}

TEST(EpisodeIo, DumpLoadRoundTrip) {
    auto cfg = default_ballet_config(TaskKind::BalletMVFO);
    auto ep = gen_strategy_task(TaskKind::BalletMVFO, 13, cfg);
    std::ostringstream os;
    dump_episode(os, ep);
    std::istringstream is(os.str());
    auto back = load_episode(is);
    EXPECT_EQ(back.kind, ep.kind);
    EXPECT_EQ(back.seed, ep.seed);
    EXPECT_EQ(back.query_dancer, ep.query_dancer);
    EXPECT_EQ(back.label_dance, ep.label_dance);
    EXPECT_EQ(back.capacity_hint, ep.capacity_hint);
    ASSERT_EQ(back.steps.size(), ep.steps.size());
    for (std::size_t i = 0; i < ep.steps.size(); ++i) {
        EXPECT_EQ(back.steps[i].t, ep.steps[i].t);
        EXPECT_EQ(back.steps[i].place, ep.steps[i].place);
        EXPECT_EQ(back.steps[i].dancer, ep.steps[i].dancer);
        EXPECT_EQ(back.steps[i].dance, ep.steps[i].dance);
        EXPECT_EQ(back.steps[i].phase, ep.steps[i].phase);
    }
    // byte-identical re-dump
    std::ostringstream os2;
    dump_episode(os2, back);
    EXPECT_EQ(os.str(), os2.str());
}

TEST(Walks, UniformWalkChangesRoomEveryVisit) {
    auto cfg = default_ballet_config(TaskKind::NextBallet);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto ep = gen_next_ballet(seed, cfg);
        for (std::size_t i = cfg.dance_len; i < ep.steps.size(); i += cfg.dance_len)
            EXPECT_NE(ep.steps[i].place, ep.steps[i - 1].place);
    }
}

TEST(Walks, AdjacentWalkMovesToGridNeighbors) {
    auto cfg = default_ballet_config(TaskKind::BalletFIFO);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto ep = gen_strategy_task(TaskKind::BalletFIFO, seed, cfg);
        for (std::size_t i = cfg.dance_len; i < ep.steps.size(); i += cfg.dance_len) {
            const int a = ep.steps[i - 1].place, b = ep.steps[i].place;
            const int ar = a / 3, ac = a % 3, br = b / 3, bc = b % 3;
            EXPECT_EQ(std::abs(ar - br) + std::abs(ac - bc), 1);
        }
    }
}
