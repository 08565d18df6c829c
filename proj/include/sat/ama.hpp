#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sat/optim.hpp"
#include "sat/rng.hpp"
#include "sat/tensor.hpp"

namespace sat {

/// Task identity handed to the strategy selector: either a one-hot id or an
/// externally supplied embedding vector.
struct TaskDescriptor {
    std::string label;
    std::vector<double> vec;
    int id = -1;

    static TaskDescriptor one_hot(int id, int num_tasks, std::string label = {}) {
        TaskDescriptor d;
        d.id = id;
        d.label = std::move(label);
        d.vec.assign(static_cast<std::size_t>(num_tasks), 0.0);
        d.vec.at(static_cast<std::size_t>(id)) = 1.0;
        return d;
    }

    static TaskDescriptor embedding(std::vector<double> v, std::string label = {}) {
        TaskDescriptor d;
        d.label = std::move(label);
        d.vec = std::move(v);
        return d;
    }
};

/// Linear anneal from start to end over `horizon` steps, clamped after.
struct EpsilonSchedule {
    double start = 1.0;
    double end = 0.2;
    long horizon = 200000;

    double at(long step) const {
        if (step <= 0) return start;
        if (step >= horizon) return end;
        const double f = static_cast<double>(step) / static_cast<double>(horizon);
        return start + (end - start) * f;
    }
};

/// One-step Q selector over eviction strategies: a 1-hidden-layer MLP
/// (width 64, ReLU) from the task descriptor to one Q value per strategy,
/// trained to minimize (Q(tau, sigma) + downstream_loss)^2 so that
/// Q -> -E[loss | tau, sigma] and argmax Q picks the loss-minimizing strategy.
template <typename S>
class StrategySelector {
public:
    StrategySelector() = default;
    StrategySelector(Rng& rng, int input_dim, int num_strategies, EpsilonSchedule eps = {},
                     int hidden = 64)
        : eps_(eps), num_strategies_(num_strategies) {
        w1_ = TensorT<S>::randn(rng, {static_cast<std::size_t>(input_dim),
                                      static_cast<std::size_t>(hidden)},
                                0.1)
                  .set_requires_grad();
        b1_ = TensorT<S>::zeros({static_cast<std::size_t>(hidden)}).set_requires_grad();
        w2_ = TensorT<S>::randn(rng, {static_cast<std::size_t>(hidden),
                                      static_cast<std::size_t>(num_strategies)},
                                0.1)
                  .set_requires_grad();
        b2_ = TensorT<S>::zeros({static_cast<std::size_t>(num_strategies)}).set_requires_grad();
    }

    int num_strategies() const { return num_strategies_; }
    const EpsilonSchedule& schedule() const { return eps_; }

    TensorT<S> q_values(const TaskDescriptor& tau) const {
        std::vector<S> in(tau.vec.begin(), tau.vec.end());
        const std::size_t n = in.size();
        auto x = TensorT<S>::from_vector({1, n}, std::move(in));
        if (x.extent(1) != w1_.extent(0))
            throw std::invalid_argument("selector: descriptor dim " + std::to_string(x.extent(1)) +
                                        " != " + std::to_string(w1_.extent(0)));
        auto h = relu(linear(x, w1_, b1_));
        return linear(h, w2_, b2_);
    }

    /// Greedy strategy index; ties resolve to the lowest index.
    int greedy(const TaskDescriptor& tau) const {
        NoGradGuard eval;
        auto q = q_values(tau);
        int best = 0;
        for (int i = 1; i < num_strategies_; ++i)
            if (q.data()[static_cast<std::size_t>(i)] > q.data()[static_cast<std::size_t>(best)])
                best = i;
        return best;
    }

    /// Epsilon-greedy selection at `step` of the anneal schedule.
    int select(const TaskDescriptor& tau, long step, Rng& rng) const {
        if (rng.uniform() < eps_.at(step))
            return static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(num_strategies_)));
        return greedy(tau);
    }

    /// Squared one-step objective for one episode; only the chosen strategy's
    /// output receives gradient. downstream_loss is a constant here.
    TensorT<S> q_loss(const TaskDescriptor& tau, int sigma, double downstream_loss) const {
        if (!std::isfinite(downstream_loss))
            throw std::runtime_error("q_update: non-finite downstream loss");
        auto q = pick(q_values(tau), static_cast<std::size_t>(sigma));
        auto shifted = add(q, TensorT<S>::scalar(static_cast<S>(downstream_loss)));
        return mul(shifted, shifted);
    }

    ParamList<S> parameters(const std::string& prefix = "qnet") {
        return {{prefix + ".w1", w1_},
                {prefix + ".b1", b1_},
                {prefix + ".w2", w2_},
                {prefix + ".b2", b2_}};
    }

private:
    EpsilonSchedule eps_;
    int num_strategies_ = 0;
    TensorT<S> w1_, b1_, w2_, b2_;
};

// ---------------------------------------------------------------------------
// task-embedding file: one record per line, "id,label,v0,v1,..."

struct TaskEmbedding {
    std::string label;
    std::vector<double> vec;
};

inline std::map<std::string, TaskEmbedding> parse_task_embeddings(std::istream& is) {
    std::map<std::string, TaskEmbedding> out;
    std::string line;
    std::size_t dim = 0;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string id, label, field;
        if (!std::getline(ls, id, ',') || !std::getline(ls, label, ','))
            throw std::runtime_error("task embeddings: malformed line " + std::to_string(line_no));
        TaskEmbedding e;
        e.label = label;
        while (std::getline(ls, field, ',')) {
            try {
                e.vec.push_back(std::stod(field));
            } catch (const std::exception&) {
                throw std::runtime_error("task embeddings: bad float '" + field + "' on line " +
                                         std::to_string(line_no));
            }
        }
        if (e.vec.empty())
            throw std::runtime_error("task embeddings: no vector on line " + std::to_string(line_no));
        if (dim == 0) dim = e.vec.size();
        if (e.vec.size() != dim)
            throw std::runtime_error("task embeddings: dim " + std::to_string(e.vec.size()) +
                                     " on line " + std::to_string(line_no) + " != " +
                                     std::to_string(dim));
        if (!out.emplace(id, std::move(e)).second)
            throw std::runtime_error("task embeddings: duplicate id '" + id + "'");
    }
    return out;
}

inline std::map<std::string, TaskEmbedding> load_task_embeddings(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("task embeddings: cannot open '" + path + "'");
    return parse_task_embeddings(is);
}

/// Deterministic synthetic descriptors standing in for an external text
/// embedding service: one unit-norm center per task plus Gaussian noise.
inline std::map<std::string, TaskEmbedding> synth_task_embeddings(
    const std::vector<std::string>& task_labels, int per_task, int dim, double noise,
    std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0xE4B));
    std::map<std::string, TaskEmbedding> out;
    for (std::size_t task = 0; task < task_labels.size(); ++task) {
        std::vector<double> center(static_cast<std::size_t>(dim));
        double norm = 0;
        for (auto& v : center) {
            v = rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (auto& v : center) v /= norm;
        for (int i = 0; i < per_task; ++i) {
            TaskEmbedding e;
            e.label = task_labels[task];
            e.vec.resize(static_cast<std::size_t>(dim));
            for (std::size_t d = 0; d < e.vec.size(); ++d)
                e.vec[d] = center[d] + noise * rng.normal();
            out.emplace(task_labels[task] + "-" + std::to_string(i), std::move(e));
        }
    }
    return out;
}

inline void write_task_embeddings(std::ostream& os,
                                  const std::map<std::string, TaskEmbedding>& embeds) {
    os << "# id,label,v0,v1,...\n";
    for (const auto& [id, e] : embeds) {
        os << id << ',' << e.label;
        for (double v : e.vec) {
            std::ostringstream num;
            num.precision(17);
            num << v;
            os << ',' << num.str();
        }
        os << '\n';
    }
}

} // namespace sat
