#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "sat/ama.hpp"

using namespace sat;

namespace {

/// Force exact Q outputs by zeroing the hidden path and writing the values
/// into the output bias.
template <typename S>
void pin_q_outputs(StrategySelector<S>& sel, const std::vector<S>& values) {
    auto params = sel.parameters();
    for (auto& p : params)
        if (p.name != "qnet.b2")
            for (auto& v : p.tensor.data()) v = 0;
    auto b2 = params.back(); // qnet.b2
    ASSERT_EQ(b2.name, "qnet.b2");
    ASSERT_EQ(b2.tensor.size(), values.size());
    for (std::size_t i = 0; i < values.size(); ++i) b2.tensor.data()[i] = values[i];
}

} // namespace

TEST(Select, GreedyPicksArgmax) {
    Rng rng(1);
    StrategySelector<double> sel(rng, 4, 4);
    pin_q_outputs(sel, {0.1, 0.9, 0.2, 0.3});
    auto tau = TaskDescriptor::one_hot(0, 4);
    EXPECT_EQ(sel.greedy(tau), 1);
}

TEST(Select, TiesResolveToLowestIndex) {
    Rng rng(2);
    StrategySelector<double> sel(rng, 4, 4);
    pin_q_outputs(sel, {0.5, 0.7, 0.7, 0.1});
    EXPECT_EQ(sel.greedy(TaskDescriptor::one_hot(2, 4)), 1);
}

TEST(Select, FullExplorationIsUniform) {
    Rng rng(3);
    EpsilonSchedule eps{1.0, 1.0, 1};
    StrategySelector<double> sel(rng, 4, 4, eps);
    auto tau = TaskDescriptor::one_hot(0, 4);
    const int n = 10000;
    std::vector<int> counts(4, 0);
    for (int i = 0; i < n; ++i) counts[static_cast<std::size_t>(sel.select(tau, 0, rng))]++;
    // within 3 sigma of n/4
    const double mean = n / 4.0;
    const double sigma = std::sqrt(n * 0.25 * 0.75);
    for (int c : counts) EXPECT_NEAR(c, mean, 3 * sigma);
}

TEST(Epsilon, LinearAnnealMatchesSchedule) {
    EpsilonSchedule eps{1.0, 0.2, 200000};
    EXPECT_DOUBLE_EQ(eps.at(0), 1.0);
    EXPECT_DOUBLE_EQ(eps.at(100000), 0.6);
    EXPECT_DOUBLE_EQ(eps.at(200000), 0.2);
    EXPECT_DOUBLE_EQ(eps.at(500000), 0.2);
}

TEST(Epsilon, MonotoneNonincreasingAndClamped) {
    EpsilonSchedule eps{1.0, 0.2, 1000};
    double prev = 2.0;
    for (long s = 0; s <= 3000; s += 10) {
        double e = eps.at(s);
        EXPECT_LE(e, prev);
        EXPECT_GE(e, 0.2);
        EXPECT_LE(e, 1.0);
        prev = e;
    }
}

TEST(QUpdate, ConvergesToNegatedLoss) {
    Rng rng(4);
    StrategySelector<double> sel(rng, 4, 4);
    auto params = sel.parameters();
    AdamState<double> opt;
    opt.lr = 2e-3; // desk-scale convergence within the stated update budget
    auto tau = TaskDescriptor::one_hot(2, 4);
    for (int step = 0; step < 2000; ++step) {
        zero_gradients(params);
        auto loss = sel.q_loss(tau, 1, 0.5);
        loss.backward();
        adam_step(params, opt);
    }
    NoGradGuard eval;
    auto q = sel.q_values(tau);
    EXPECT_NEAR(q.data()[1], -0.5, 0.01);
}

TEST(QUpdate, ZeroLossFixedPoint) {
    Rng rng(5);
    StrategySelector<double> sel(rng, 2, 2);
    pin_q_outputs(sel, {0.0, 0.0});
    auto params = sel.parameters();
    zero_gradients(params);
    auto loss = sel.q_loss(TaskDescriptor::one_hot(0, 2), 0, 0.0);
    EXPECT_NEAR(loss.item(), 0.0, 1e-12);
    loss.backward();
    for (auto& p : params)
        for (double g : p.tensor.grad()) EXPECT_NEAR(g, 0.0, 1e-12);
}

TEST(QUpdate, OnlyChosenOutputReceivesGradient) {
    Rng rng(6);
    StrategySelector<double> sel(rng, 3, 4);
    auto params = sel.parameters();
    zero_gradients(params);
    auto loss = sel.q_loss(TaskDescriptor::one_hot(1, 3), 2, 1.0);
    loss.backward();
    for (auto& p : params) {
        if (p.name != "qnet.b2") continue;
        auto g = p.tensor.grad();
        for (std::size_t i = 0; i < 4; ++i) {
            if (i == 2)
                EXPECT_NE(g[i], 0.0);
            else
                EXPECT_EQ(g[i], 0.0);
        }
    }
}

TEST(QUpdate, NonFiniteLossRejected) {
    Rng rng(7);
    StrategySelector<double> sel(rng, 2, 2);
    EXPECT_THROW(sel.q_loss(TaskDescriptor::one_hot(0, 2), 0,
                            std::numeric_limits<double>::infinity()),
                 std::runtime_error);
}

TEST(QUpdate, SyntheticBanditRecoversArgmin) {
    // 4 tasks x 4 strategies, unique minima off the diagonal pattern
    const std::vector<std::vector<double>> loss_table{
        {0.1, 1.2, 0.9, 1.5}, {1.3, 1.1, 0.2, 0.8}, {0.7, 0.05, 1.9, 1.1}, {1.4, 0.9, 1.2, 0.3}};
    Rng rng(8);
    StrategySelector<double> sel(rng, 4, 4, EpsilonSchedule{1.0, 0.2, 2000});
    auto params = sel.parameters();
    AdamState<double> opt;
    opt.lr = 2e-3;
    for (int step = 0; step < 5000; ++step) {
        const int task = static_cast<int>(rng.uniform_int(4));
        auto tau = TaskDescriptor::one_hot(task, 4);
        const int sigma = sel.select(tau, step, rng);
        const double l = loss_table[static_cast<std::size_t>(task)][static_cast<std::size_t>(sigma)];
        zero_gradients(params);
        auto loss = sel.q_loss(tau, sigma, l);
        loss.backward();
        adam_step(params, opt);
    }
    for (int task = 0; task < 4; ++task) {
        const auto& row = loss_table[static_cast<std::size_t>(task)];
        const int want = static_cast<int>(std::min_element(row.begin(), row.end()) - row.begin());
        EXPECT_EQ(sel.greedy(TaskDescriptor::one_hot(task, 4)), want) << "task " << task;
    }
}

TEST(Invariants, GreedyInvariantToPositiveAffineTransform) {
    Rng rng(9);
    StrategySelector<double> sel(rng, 4, 4);
    pin_q_outputs(sel, {0.2, -0.4, 0.9, 0.1});
    const int base = sel.greedy(TaskDescriptor::one_hot(0, 4));
    StrategySelector<double> scaled(rng, 4, 4);
    pin_q_outputs(scaled, {0.2 * 3 + 5, -0.4 * 3 + 5, 0.9 * 3 + 5, 0.1 * 3 + 5});
    EXPECT_EQ(scaled.greedy(TaskDescriptor::one_hot(0, 4)), base);
}

TEST(Embeddings, EmptyFileGivesEmptyMap) {
    std::istringstream is("");
    auto m = parse_task_embeddings(is);
    EXPECT_TRUE(m.empty());
    EXPECT_THROW(m.at("anything"), std::out_of_range);
}

TEST(Embeddings, SyntheticGeneratorShapeAndDeterminism) {
    auto a = synth_task_embeddings({"fifo", "lifo", "mvfo", "lvfo"}, 20, 32, 0.05, 1);
    EXPECT_EQ(a.size(), 80u);
    for (const auto& [id, e] : a) EXPECT_EQ(e.vec.size(), 32u);
    auto b = synth_task_embeddings({"fifo", "lifo", "mvfo", "lvfo"}, 20, 32, 0.05, 1);
    ASSERT_EQ(a.size(), b.size());
    for (const auto& [id, e] : a) {
        ASSERT_TRUE(b.count(id));
        EXPECT_EQ(b[id].vec, e.vec);
    }
}

TEST(Embeddings, RoundTripThroughText) {
    auto a = synth_task_embeddings({"fifo", "lifo"}, 3, 8, 0.05, 2);
    std::ostringstream os;
    write_task_embeddings(os, a);
    std::istringstream is(os.str());
    auto back = parse_task_embeddings(is);
    ASSERT_EQ(back.size(), a.size());
    for (const auto& [id, e] : a) {
        ASSERT_TRUE(back.count(id));
        EXPECT_EQ(back[id].label, e.label);
        ASSERT_EQ(back[id].vec.size(), e.vec.size());
        for (std::size_t i = 0; i < e.vec.size(); ++i)
            EXPECT_DOUBLE_EQ(back[id].vec[i], e.vec[i]);
    }
}

TEST(Embeddings, DuplicateIdRejected) {
    std::istringstream is("a,fifo,1.0,2.0\na,lifo,3.0,4.0\n");
    EXPECT_THROW(parse_task_embeddings(is), std::runtime_error);
}

TEST(Embeddings, DimMismatchRejected) {
    std::istringstream is("a,fifo,1.0,2.0\nb,lifo,3.0\n");
    EXPECT_THROW(parse_task_embeddings(is), std::runtime_error);
}

TEST(Embeddings, ParseFailureRejected) {
    std::istringstream is("a,fifo,1.0,zzz\n");
    EXPECT_THROW(parse_task_embeddings(is), std::runtime_error);
}
