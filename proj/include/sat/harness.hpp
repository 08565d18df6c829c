#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sat/ama.hpp"
#include "sat/attention.hpp"
#include "sat/checkpoint.hpp"
#include "sat/config.hpp"
#include "sat/embeddings.hpp"
#include "sat/envs.hpp"
#include "sat/memory.hpp"
#include "sat/optim.hpp"
#include "sat/rng.hpp"

namespace sat {

// ---------------------------------------------------------------------------
// run configuration

/// Exp-3 convention: the time-ordered strategies read time-centric chunks,
/// the place-based strategies read place-centric chunks.
inline std::pair<MemoryLayout, ReadMode> layout_for_strategy(EvictionStrategy sigma) {
    switch (sigma) {
        case EvictionStrategy::FIFO:
        case EvictionStrategy::LIFO: return {MemoryLayout::Flat, ReadMode::TimeHier};
        case EvictionStrategy::MVFO:
        case EvictionStrategy::LVFO: return {MemoryLayout::Place, ReadMode::PlaceHier};
    }
    throw std::logic_error("bad strategy");
}

struct RunConfig {
    TaskKind task = TaskKind::NextBallet;
    std::vector<TaskKind> ama_tasks; // multi-task AMA runs
    std::uint64_t seed = 0;
    std::string out_dir;
    std::string precision = "f32";

    SATConfig model;
    SpatialMode spatial = SpatialMode::Room1D;
    bool query_time_place = false;

    MemoryLayout layout = MemoryLayout::Flat;
    std::size_t capacity = 0;
    std::size_t place_cap = 0;
    VisitCountMode visit_mode = VisitCountMode::Entries;
    EvictionStrategy strategy = EvictionStrategy::FIFO;

    BalletConfig ballet;

    bool ama = false;
    EpsilonSchedule epsilon{1.0, 0.2, 4000};
    std::string embeddings_file; // AMA descriptor vectors (one-hot ids if empty)

    long max_steps = 2000;
    long min_steps = 0;
    int batch = 32;
    double lr = 2e-4;
    double clip = 5.0;
    long eval_interval = 200;
    int eval_episodes = 512;
    double target_accuracy = 0.0; // early stop when reached (0 = off)
    int plateau_patience = 0;     // evals without train-loss improvement (0 = off)

    static RunConfig from(const KVConfig& kv) {
        RunConfig r;
        r.task = task_from_name(kv.get_str("task", "next-ballet"));
        r.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
        r.out_dir = kv.get_str("out", "");
        r.precision = kv.get_str("precision", "f32");
        if (r.precision != "f32" && r.precision != "f64")
            throw std::runtime_error("config: precision must be f32 or f64");

        r.ballet = default_ballet_config(r.task);
        r.ballet.grid_w = static_cast<int>(kv.get_int("ballet.grid_w", r.ballet.grid_w));
        r.ballet.grid_h = static_cast<int>(kv.get_int("ballet.grid_h", r.ballet.grid_h));
        r.ballet.dance_len = static_cast<int>(kv.get_int("ballet.dance_len", r.ballet.dance_len));
        r.ballet.num_dancers = static_cast<int>(kv.get_int("ballet.dancers", r.ballet.num_dancers));
        r.ballet.num_dances = static_cast<int>(kv.get_int("ballet.dances", r.ballet.num_dances));
        r.ballet.visits = static_cast<int>(kv.get_int("ballet.visits", r.ballet.visits));
        r.ballet.steps = static_cast<int>(kv.get_int("ballet.steps", r.ballet.steps));
        r.ballet.capacity_ratio = kv.get_float("ballet.capacity_ratio", r.ballet.capacity_ratio);
        if (kv.has("ballet.walk")) {
            auto w = kv.get_str("ballet.walk");
            if (w == "adjacent")
                r.ballet.walk = WalkMode::Adjacent;
            else if (w == "uniform")
                r.ballet.walk = WalkMode::UniformRoom;
            else
                throw std::runtime_error("config: ballet.walk must be adjacent or uniform");
        }

        r.model.num_layers = static_cast<int>(kv.get_int("model.layers", 4));
        r.model.dim = static_cast<int>(kv.get_int("model.dim", 128));
        r.model.heads = static_cast<int>(kv.get_int("model.heads", 2));
        r.model.head_dim = static_cast<int>(kv.get_int("model.head_dim", 64));
        r.model.mlp_hidden = static_cast<int>(kv.get_int("model.mlp_hidden", 128));
        r.model.chunk_size = static_cast<int>(kv.get_int("model.chunk_size", r.ballet.dance_len));
        r.model.top_k = static_cast<int>(kv.get_int("model.top_k", 4));
        r.model.num_classes = r.ballet.num_dances;

        auto spatial = kv.get_str("model.spatial", "room-1d");
        if (spatial == "none")
            r.spatial = SpatialMode::None;
        else if (spatial == "room-1d")
            r.spatial = SpatialMode::Room1D;
        else if (spatial == "sin-2d")
            r.spatial = SpatialMode::Sinusoidal2D;
        else if (spatial == "learn-2d")
            r.spatial = SpatialMode::Learnable2D;
        else
            throw std::runtime_error("config: unknown model.spatial '" + spatial + "'");
        r.query_time_place = kv.get_bool("model.query_time_place", false);

        r.ama = kv.get_bool("ama.enabled", false);
        if (r.ama) {
            std::string tasks = kv.get_str(
                "ama.tasks", "ballet-fifo,ballet-lifo,ballet-mvfo,ballet-lvfo");
            std::istringstream ts(tasks);
            std::string t;
            while (std::getline(ts, t, ',')) r.ama_tasks.push_back(task_from_name(t));
            if (r.ama_tasks.size() < 1) throw std::runtime_error("config: ama.tasks empty");
            r.epsilon.start = kv.get_float("ama.epsilon_start", 1.0);
            r.epsilon.end = kv.get_float("ama.epsilon_end", 0.2);
            r.epsilon.horizon = kv.get_int("ama.epsilon_horizon", 4000);
            r.embeddings_file = kv.get_str("ama.embeddings_file", "");
        }

        // strategy first: layout and read mode default to its convention
        if (kv.has("memory.strategy")) r.strategy = strategy_from_name(kv.get_str("memory.strategy"));
        auto conv = layout_for_strategy(r.strategy);
        if (is_strategy_task(r.task) || r.ama) {
            r.layout = conv.first;
            r.model.read_mode = conv.second;
        }
        if (kv.has("memory.layout")) {
            auto l = kv.get_str("memory.layout");
            if (l == "flat")
                r.layout = MemoryLayout::Flat;
            else if (l == "place")
                r.layout = MemoryLayout::Place;
            else
                throw std::runtime_error("config: memory.layout must be flat or place");
        }
        if (kv.has("model.read")) {
            auto m = kv.get_str("model.read");
            if (m == "flat")
                r.model.read_mode = ReadMode::Flat;
            else if (m == "time-hier")
                r.model.read_mode = ReadMode::TimeHier;
            else if (m == "place-hier")
                r.model.read_mode = ReadMode::PlaceHier;
            else
                throw std::runtime_error("config: unknown model.read '" + m + "'");
        }
        if (r.model.read_mode == ReadMode::PlaceHier && r.layout != MemoryLayout::Place &&
            !r.ama)
            r.layout = MemoryLayout::Place;

        // capacity: explicit, else the task's convention (strategy tasks and
        // ABA bound memory; the others run unlimited)
        r.capacity = static_cast<std::size_t>(kv.get_int("memory.capacity", -1) < 0
                                                  ? default_capacity(r)
                                                  : kv.get_int("memory.capacity", 0));
        r.place_cap = static_cast<std::size_t>(kv.get_int("memory.place_cap", 0));
        if (kv.get_str("memory.visit_mode", "entries") == "occupancy")
            r.visit_mode = VisitCountMode::Occupancy;

        r.max_steps = kv.get_int("train.steps", 2000);
        r.min_steps = kv.get_int("train.min_steps", 0);
        r.batch = static_cast<int>(kv.get_int("train.batch", 32));
        r.lr = kv.get_float("train.lr", 2e-4);
        r.clip = kv.get_float("train.clip", 5.0);
        r.eval_interval = kv.get_int("train.eval_interval", 200);
        r.eval_episodes = static_cast<int>(kv.get_int("train.eval_episodes", 512));
        r.target_accuracy = kv.get_float("train.target_accuracy", 0.0);
        r.plateau_patience = static_cast<int>(kv.get_int("train.plateau_patience", 0));
        r.model.validate();
        return r;
    }

    static std::size_t default_capacity(const RunConfig& r) {
        if (is_strategy_task(r.task) || r.ama) {
            const auto frames = static_cast<double>(r.ballet.visits * r.ballet.dance_len);
            return static_cast<std::size_t>(frames * r.ballet.capacity_ratio + 0.5);
        }
        if (r.task == TaskKind::BalletABA) return static_cast<std::size_t>(8 * r.ballet.dance_len);
        return 0; // unlimited
    }

    KVConfig to_kv() const {
        KVConfig kv;
        kv.set("task", task_name(task));
        kv.set("seed", std::to_string(seed));
        kv.set("precision", precision);
        kv.set("model.layers", std::to_string(model.num_layers));
        kv.set("model.dim", std::to_string(model.dim));
        kv.set("model.heads", std::to_string(model.heads));
        kv.set("model.head_dim", std::to_string(model.head_dim));
        kv.set("model.mlp_hidden", std::to_string(model.mlp_hidden));
        kv.set("model.chunk_size", std::to_string(model.chunk_size));
        kv.set("model.top_k", std::to_string(model.top_k));
        kv.set("model.read", read_mode_name(model.read_mode));
        kv.set("model.spatial", spatial == SpatialMode::None         ? "none"
                                : spatial == SpatialMode::Room1D     ? "room-1d"
                                : spatial == SpatialMode::Sinusoidal2D ? "sin-2d"
                                                                       : "learn-2d");
        kv.set("model.query_time_place", query_time_place ? "true" : "false");
        kv.set("memory.layout", layout == MemoryLayout::Flat ? "flat" : "place");
        kv.set("memory.capacity", std::to_string(capacity));
        kv.set("memory.place_cap", std::to_string(place_cap));
        kv.set("memory.strategy", strategy_name(strategy));
        kv.set("memory.visit_mode", visit_mode == VisitCountMode::Entries ? "entries" : "occupancy");
        kv.set("ballet.grid_w", std::to_string(ballet.grid_w));
        kv.set("ballet.grid_h", std::to_string(ballet.grid_h));
        kv.set("ballet.dance_len", std::to_string(ballet.dance_len));
        kv.set("ballet.dancers", std::to_string(ballet.num_dancers));
        kv.set("ballet.dances", std::to_string(ballet.num_dances));
        kv.set("ballet.visits", std::to_string(ballet.visits));
        kv.set("ballet.steps", std::to_string(ballet.steps));
        kv.set("ballet.walk", ballet.walk == WalkMode::Adjacent ? "adjacent" : "uniform");
        kv.set("ballet.capacity_ratio", std::to_string(ballet.capacity_ratio));
        kv.set("ama.enabled", ama ? "true" : "false");
        kv.set("train.steps", std::to_string(max_steps));
        kv.set("train.batch", std::to_string(batch));
        kv.set("train.eval_interval", std::to_string(eval_interval));
        kv.set("train.eval_episodes", std::to_string(eval_episodes));
        return kv;
    }
};

// ---------------------------------------------------------------------------
// model bundle: encoder + spatial tables + transformer

template <typename S>
struct SATBundle {
    RunConfig run;
    ObservationVocab vocab;
    EmbeddingConfig ecfg;
    SATModel<S> model;
    ObservationEncoder<S> encoder;
    std::optional<LearnableEmbed2D<S>> place_tables;

    static SATBundle make(const RunConfig& run) {
        SATBundle b;
        b.run = run;
        b.vocab = ObservationVocab{run.ballet.num_dancers, run.ballet.num_dances,
                                   run.ballet.dance_len};
        b.ecfg.dim = run.model.dim;
        b.ecfg.spatial = run.spatial;
        b.ecfg.x_range = run.ballet.grid_w;
        b.ecfg.y_range = run.ballet.grid_h;
        b.ecfg.validate();
        Rng rng(derive_seed(run.seed, 0x1A17));
        b.model = SATModel<S>(rng, run.model);
        b.encoder = ObservationEncoder<S>(rng, b.vocab, run.model.dim);
        if (run.spatial == SpatialMode::Learnable2D) b.place_tables.emplace(rng, b.ecfg);
        return b;
    }

    TensorT<S> place_embedding(int place) const {
        switch (run.spatial) {
            case SpatialMode::None:
                return TensorT<S>::zeros({static_cast<std::size_t>(run.model.dim)});
            case SpatialMode::Room1D:
                return sinusoidal_embed<S>(static_cast<std::size_t>(place), run.model.dim);
            case SpatialMode::Sinusoidal2D:
                return spatial_embed_2d<S>(place % run.ballet.grid_w, place / run.ballet.grid_w,
                                           ecfg);
            case SpatialMode::Learnable2D:
                return place_tables->embed(place % run.ballet.grid_w, place / run.ballet.grid_w);
        }
        throw std::logic_error("bad spatial mode");
    }

    TensorT<S> frame_embedding(const EpisodeStep& s) const {
        auto e_obs = encoder.encode({s.dancer, s.dance, s.phase});
        auto e_time = sinusoidal_embed<S>(s.t, run.model.dim);
        return sum_embed(place_embedding(s.place), e_time, e_obs);
    }

    TensorT<S> query_embedding(const Episode& ep) const {
        auto e = encoder.encode(ObservationSymbol::query(ep.query_dancer));
        if (run.query_time_place) {
            auto e_time = sinusoidal_embed<S>(ep.steps.size(), run.model.dim);
            e = sum_embed(TensorT<S>::zeros({static_cast<std::size_t>(run.model.dim)}), e_time, e);
        }
        return reshape(e, {1, static_cast<std::size_t>(run.model.dim)});
    }

    ParamList<S> parameters() {
        auto out = model.parameters();
        for (auto& p : encoder.parameters()) out.push_back(p);
        if (place_tables)
            for (auto& p : place_tables->parameters()) out.push_back(p);
        return out;
    }
};

/// Streams an episode through a fresh store under `sigma` and materializes
/// the read view for the configured read mode.
template <typename S>
PreparedMemory<S> build_episode_memory(const SATBundle<S>& b, const Episode& ep,
                                       EvictionStrategy sigma, MemoryLayout layout,
                                       ReadMode read) {
    MemoryConfig mc;
    mc.layout = layout;
    mc.capacity = b.run.capacity;
    mc.per_place_cap = b.run.place_cap;
    mc.chunk_size = static_cast<std::size_t>(b.run.model.chunk_size);
    mc.visit_mode = b.run.visit_mode;
    if (read == ReadMode::PlaceHier && layout != MemoryLayout::Place)
        throw std::logic_error("place-hier read requires place layout");
    EpisodicMemory<S> mem(mc);
    for (const auto& s : ep.steps) {
        ExperienceFrame<S> f;
        f.embedding = b.frame_embedding(s);
        f.time_index = s.t;
        f.place_id = s.place;
        f.meta = {s.dancer, s.dance, s.phase};
        mem.write(f, sigma);
    }
    switch (read) {
        case ReadMode::Flat: return prepare_flat(mem.frames());
        case ReadMode::TimeHier:
            if (layout == MemoryLayout::Flat)
                return prepare_hier(mem.flat_chunk_view(mc.chunk_size), ReadMode::TimeHier, nullptr);
            return prepare_hier(mem.chunk_view(), ReadMode::TimeHier, nullptr);
        case ReadMode::PlaceHier:
            return prepare_hier(mem.chunk_view(), ReadMode::PlaceHier,
                                [&b](int place) { return b.place_embedding(place); });
    }
    throw std::logic_error("bad read mode");
}

// ---------------------------------------------------------------------------
// metrics

struct MetricsRow {
    long step = 0;
    std::string task;
    std::string sigma;
    double train_loss = 0.0;
    std::optional<double> eval_acc;
    double epsilon = 0.0;
    double wall_ms = 0.0; // written to timings.csv, not metrics.csv
};

/// metrics.csv carries only run-deterministic columns; wall-clock timings go
/// to a separate file so same-seed runs stay byte-identical.
class MetricsWriter {
public:
    MetricsWriter() = default;
    MetricsWriter(const std::string& dir)
        : metrics_(dir + "/metrics.csv"), timings_(dir + "/timings.csv") {
        metrics_ << "step,task,sigma,train_loss,eval_acc,epsilon\n";
        timings_ << "step,wall_ms\n";
    }

    void append(const MetricsRow& row) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6f", row.train_loss);
        metrics_ << row.step << ',' << row.task << ',' << row.sigma << ',' << buf << ',';
        if (row.eval_acc) {
            std::snprintf(buf, sizeof(buf), "%.6f", *row.eval_acc);
            metrics_ << buf;
        }
        std::snprintf(buf, sizeof(buf), "%.6f", row.epsilon);
        metrics_ << ',' << buf << '\n';
        timings_ << row.step << ',' << static_cast<long>(row.wall_ms * 1000) / 1000.0 << '\n';
    }

    void flush() {
        metrics_.flush();
        timings_.flush();
    }

private:
    std::ofstream metrics_;
    std::ofstream timings_;
};

// ---------------------------------------------------------------------------
// evaluation

inline constexpr std::uint64_t kTrainTag = 0x7124;
inline constexpr std::uint64_t kEvalTag = 0xE7A1;

template <typename S>
struct EvalOptions {
    std::optional<EvictionStrategy> sigma_override;
    const StrategySelector<S>* selector = nullptr;   // AMA greedy selection
    const TaskDescriptor* descriptor = nullptr;      // required with selector
};

/// Exact-match accuracy over `n` held-out seeds. The seed stream is fixed by
/// (run seed, task), so every evaluation of one task scores the same episodes.
template <typename S>
double evaluate(const SATBundle<S>& b, TaskKind task, int n, const EvalOptions<S>& opt = {}) {
    NoGradGuard eval;
    int correct = 0;
    for (int i = 0; i < n; ++i) {
        const std::uint64_t es = derive_seed(b.run.seed, kEvalTag + static_cast<std::uint64_t>(task),
                                             static_cast<std::uint64_t>(i));
        auto ep = gen_episode(task, es, b.run.ballet);
        EvictionStrategy sigma = b.run.strategy;
        MemoryLayout layout = b.run.layout;
        ReadMode read = b.run.model.read_mode;
        if (opt.selector) {
            sigma = static_cast<EvictionStrategy>(opt.selector->greedy(*opt.descriptor));
            auto conv = layout_for_strategy(sigma);
            layout = conv.first;
            read = conv.second;
        } else if (opt.sigma_override) {
            sigma = *opt.sigma_override;
        }
        auto mem = build_episode_memory(b, ep, sigma, layout, read);
        auto logits = b.model.forward(b.query_embedding(ep), mem);
        int best = 0;
        for (int c = 1; c < b.run.model.num_classes; ++c)
            if (logits.data()[static_cast<std::size_t>(c)] > logits.data()[static_cast<std::size_t>(best)]) best = c;
        if (best == ep.label_dance) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// fixed-strategy training (no AMA)

struct TrainResult {
    long steps_run = 0;
    double final_accuracy = 0.0;
    std::vector<double> per_task_accuracy; // AMA runs
    std::vector<int> greedy_strategy;      // AMA runs, per task
    std::string checkpoint_path;
};

template <typename S>
TrainResult train_fixed(SATBundle<S>& b, MetricsWriter* metrics = nullptr) {
    const RunConfig& run = b.run;
    auto params = b.parameters();
    AdamState<S> opt;
    opt.lr = run.lr;

    double best_loss = std::numeric_limits<double>::max();
    int stale_evals = 0;
    TrainResult res;
    double last_eval = 0.0;
    for (long step = 0; step < run.max_steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<TensorT<S>> logit_rows;
        std::vector<std::size_t> labels;
        for (int i = 0; i < run.batch; ++i) {
            const auto es = derive_seed(run.seed, kTrainTag,
                                        static_cast<std::uint64_t>(step) * 1000003ULL +
                                            static_cast<std::uint64_t>(i));
            auto ep = gen_episode(run.task, es, run.ballet);
            auto mem = build_episode_memory(b, ep, run.strategy, run.layout, run.model.read_mode);
            logit_rows.push_back(b.model.forward(b.query_embedding(ep), mem));
            labels.push_back(static_cast<std::size_t>(ep.label_dance));
        }
        auto logits = concat(logit_rows, 0);
        auto loss = cross_entropy(logits, labels);
        zero_gradients(params);
        loss.backward();
        clip_gradients(params, -run.clip, run.clip);
        adam_step(params, opt);

        MetricsRow row;
        row.step = step;
        row.task = task_name(run.task);
        row.sigma = strategy_name(run.strategy);
        row.train_loss = loss.item();
        row.epsilon = 0.0;
        res.steps_run = step + 1;

        const bool eval_now = run.eval_interval > 0 && ((step + 1) % run.eval_interval == 0 ||
                                                        step + 1 == run.max_steps);
        if (eval_now) {
            last_eval = evaluate(b, run.task, run.eval_episodes);
            row.eval_acc = last_eval;
        }
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                          .count();
        if (metrics) metrics->append(row);

        if (eval_now && step + 1 >= run.min_steps) {
            if (run.target_accuracy > 0 && last_eval >= run.target_accuracy) break;
            if (run.plateau_patience > 0) {
                if (row.train_loss < best_loss - 1e-3) {
                    best_loss = row.train_loss;
                    stale_evals = 0;
                } else if (++stale_evals >= run.plateau_patience) {
                    break;
                }
            }
        } else if (run.plateau_patience > 0 && row.train_loss < best_loss - 1e-3) {
            best_loss = row.train_loss;
        }
    }
    res.final_accuracy = last_eval;
    if (!run.out_dir.empty()) {
        std::filesystem::create_directories(run.out_dir);
        res.checkpoint_path = run.out_dir + "/checkpoint.satm";
        save_checkpoint(res.checkpoint_path, params);
    }
    if (metrics) metrics->flush();
    return res;
}

// ---------------------------------------------------------------------------
// joint SAT + AMA training

template <typename S>
struct AmaSetup {
    std::vector<TaskDescriptor> descriptors; // one per task (one-hot mode)
    StrategySelector<S> selector;
};

template <typename S>
AmaSetup<S> make_ama_setup(const RunConfig& run) {
    AmaSetup<S> s;
    Rng rng(derive_seed(run.seed, 0xA3A));
    const int n = static_cast<int>(run.ama_tasks.size());
    for (int i = 0; i < n; ++i)
        s.descriptors.push_back(TaskDescriptor::one_hot(i, n, task_name(run.ama_tasks[static_cast<std::size_t>(i)])));
    s.selector = StrategySelector<S>(rng, n, static_cast<int>(kNumStrategies), run.epsilon);
    return s;
}

template <typename S>
TrainResult train_ama(SATBundle<S>& b, AmaSetup<S>& ama, MetricsWriter* metrics = nullptr) {
    const RunConfig& run = b.run;
    if (run.ama_tasks.empty()) throw std::runtime_error("train_ama: no tasks configured");
    auto params = b.parameters();
    auto qparams = ama.selector.parameters();
    AdamState<S> opt;
    opt.lr = run.lr;
    AdamState<S> qopt;
    qopt.lr = run.lr;
    Rng explore(derive_seed(run.seed, 0xE0E0));

    TrainResult res;
    for (long step = 0; step < run.max_steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<TensorT<S>> logit_rows;
        std::vector<std::size_t> labels;
        std::vector<int> chosen_sigma;
        std::vector<int> chosen_task;
        for (int i = 0; i < run.batch; ++i) {
            const int ti = static_cast<int>(explore.uniform_int(run.ama_tasks.size()));
            const TaskKind task = run.ama_tasks[static_cast<std::size_t>(ti)];
            const int sig = ama.selector.select(ama.descriptors[static_cast<std::size_t>(ti)], step, explore);
            auto conv = layout_for_strategy(static_cast<EvictionStrategy>(sig));
            const auto es = derive_seed(run.seed, kTrainTag + 7 * static_cast<std::uint64_t>(ti),
                                        static_cast<std::uint64_t>(step) * 1000003ULL +
                                            static_cast<std::uint64_t>(i));
            auto ep = gen_episode(task, es, run.ballet);
            auto mem = build_episode_memory(b, ep, static_cast<EvictionStrategy>(sig), conv.first,
                                            conv.second);
            logit_rows.push_back(b.model.forward(b.query_embedding(ep), mem));
            labels.push_back(static_cast<std::size_t>(ep.label_dance));
            chosen_sigma.push_back(sig);
            chosen_task.push_back(ti);
        }
        auto per_example = cross_entropy_each(concat(logit_rows, 0), labels);
        auto loss = mean(per_example, 0);
        zero_gradients(params);
        loss.backward();
        clip_gradients(params, -run.clip, run.clip);
        adam_step(params, opt);

        // one-step Q objective on the same batch; downstream losses constant
        TensorT<S> qtotal;
        for (int i = 0; i < run.batch; ++i) {
            auto ql = ama.selector.q_loss(
                ama.descriptors[static_cast<std::size_t>(chosen_task[static_cast<std::size_t>(i)])],
                chosen_sigma[static_cast<std::size_t>(i)],
                static_cast<double>(per_example.data()[static_cast<std::size_t>(i)]));
            qtotal = qtotal.defined() ? add(qtotal, ql) : ql;
        }
        qtotal = scale(qtotal, 1.0 / run.batch);
        zero_gradients(qparams);
        qtotal.backward();
        clip_gradients(qparams, -run.clip, run.clip);
        adam_step(qparams, qopt);

        MetricsRow row;
        row.step = step;
        row.task = task_name(run.ama_tasks[static_cast<std::size_t>(chosen_task[0])]);
        row.sigma = strategy_name(static_cast<EvictionStrategy>(chosen_sigma[0]));
        row.train_loss = loss.item();
        row.epsilon = ama.selector.schedule().at(step);
        res.steps_run = step + 1;
        const bool eval_now = run.eval_interval > 0 && ((step + 1) % run.eval_interval == 0 ||
                                                        step + 1 == run.max_steps);
        if (eval_now) {
            double acc = 0;
            for (std::size_t ti = 0; ti < run.ama_tasks.size(); ++ti) {
                EvalOptions<S> opt2;
                opt2.selector = &ama.selector;
                opt2.descriptor = &ama.descriptors[ti];
                acc += evaluate(b, run.ama_tasks[ti], run.eval_episodes, opt2);
            }
            row.eval_acc = acc / static_cast<double>(run.ama_tasks.size());
        }
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                          .count();
        if (metrics) metrics->append(row);
        if (eval_now && run.target_accuracy > 0 && step + 1 >= run.min_steps &&
            *row.eval_acc >= run.target_accuracy)
            break;
    }

    double acc = 0;
    for (std::size_t ti = 0; ti < run.ama_tasks.size(); ++ti) {
        EvalOptions<S> opt3;
        opt3.selector = &ama.selector;
        opt3.descriptor = &ama.descriptors[ti];
        res.per_task_accuracy.push_back(
            evaluate(b, run.ama_tasks[ti], run.eval_episodes, opt3));
        res.greedy_strategy.push_back(ama.selector.greedy(ama.descriptors[ti]));
        acc += res.per_task_accuracy.back();
    }
    res.final_accuracy = acc / static_cast<double>(run.ama_tasks.size());
    if (!run.out_dir.empty()) {
        std::filesystem::create_directories(run.out_dir);
        auto params_all = b.parameters();
        for (auto& p : ama.selector.parameters()) params_all.push_back(p);
        res.checkpoint_path = run.out_dir + "/checkpoint.satm";
        save_checkpoint(res.checkpoint_path, params_all);
        std::ofstream table(run.out_dir + "/strategy_table.csv");
        table << "task,greedy_sigma,accuracy\n";
        for (std::size_t ti = 0; ti < run.ama_tasks.size(); ++ti) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.6f", res.per_task_accuracy[ti]);
            table << task_name(run.ama_tasks[ti]) << ','
                  << strategy_name(static_cast<EvictionStrategy>(res.greedy_strategy[ti])) << ','
                  << buf << '\n';
        }
    }
    if (metrics) metrics->flush();
    return res;
}

// ---------------------------------------------------------------------------
// selector-only training against the episode-replay loss oracle

struct SelectorReplayConfig {
    std::vector<TaskKind> tasks{TaskKind::BalletFIFO, TaskKind::BalletLIFO, TaskKind::BalletMVFO,
                                TaskKind::BalletLVFO};
    BalletConfig ballet = default_ballet_config(TaskKind::BalletFIFO);
    long updates = 5000;
    double lr = 2e-3;
    EpsilonSchedule epsilon{1.0, 0.2, 2000};
    std::uint64_t seed = 0;
    double answerable_loss = 0.05; // stand-in for a trained model's loss
};

/// Downstream loss oracle: replay the episode through the store under sigma;
/// answerable queries cost answerable_loss, dropped ones cost chance-level
/// cross-entropy ln(num_dances).
inline double replay_loss_oracle(const Episode& ep, EvictionStrategy sigma, double answerable_loss) {
    auto retained = replay_retained(ep.steps, sigma, ep.capacity_hint);
    return query_answerable(ep, retained) ? answerable_loss
                                          : std::log(static_cast<double>(ep.num_dances));
}

struct SelectorResult {
    double heldout_selection_accuracy = 0.0;
    std::vector<int> greedy_per_task;
};

/// Trains a Q selector from descriptor vectors using the replay-loss oracle;
/// measures greedy selection accuracy on held-out descriptors.
template <typename S>
SelectorResult train_selector_replay(const SelectorReplayConfig& cfg,
                                     const std::vector<std::vector<TaskDescriptor>>& train_desc,
                                     const std::vector<std::vector<TaskDescriptor>>& heldout_desc) {
    if (train_desc.size() != cfg.tasks.size())
        throw std::invalid_argument("selector training: descriptor sets != tasks");
    Rng rng(derive_seed(cfg.seed, 0x5E1));
    const std::size_t in_dim = train_desc[0][0].vec.size();
    StrategySelector<S> sel(rng, static_cast<int>(in_dim), static_cast<int>(kNumStrategies),
                            cfg.epsilon);
    auto qparams = sel.parameters();
    AdamState<S> opt;
    opt.lr = cfg.lr;
    for (long step = 0; step < cfg.updates; ++step) {
        const auto ti = rng.uniform_int(cfg.tasks.size());
        const auto& descs = train_desc[ti];
        const auto& tau = descs[rng.uniform_int(descs.size())];
        const int sig = sel.select(tau, step, rng);
        auto cfg_task = cfg.ballet;
        auto ep = gen_episode(cfg.tasks[ti], derive_seed(cfg.seed, 0xE9, static_cast<std::uint64_t>(step)),
                              cfg_task);
        const double l = replay_loss_oracle(ep, static_cast<EvictionStrategy>(sig),
                                            cfg.answerable_loss);
        zero_gradients(qparams);
        auto ql = sel.q_loss(tau, sig, l);
        ql.backward();
        adam_step(qparams, opt);
    }
    SelectorResult res;
    int total = 0, correct = 0;
    for (std::size_t ti = 0; ti < cfg.tasks.size(); ++ti) {
        const int want = static_cast<int>(matched_strategy(cfg.tasks[ti]));
        res.greedy_per_task.push_back(sel.greedy(train_desc[ti][0]));
        for (const auto& tau : heldout_desc[ti]) {
            ++total;
            if (sel.greedy(tau) == want) ++correct;
        }
    }
    res.heldout_selection_accuracy = total ? static_cast<double>(correct) / total : 0.0;
    return res;
}

// ---------------------------------------------------------------------------
// Exp-3 matrix

struct MatrixResult {
    std::vector<TaskKind> tasks;
    std::vector<std::vector<double>> fixed_cells; // [task][sigma]
    std::vector<double> ama_cells;                // [task]
    std::vector<int> ama_greedy;                  // [task]
};

inline void write_matrix_csv(std::ostream& os, const MatrixResult& m) {
    os << "task";
    for (auto sigma : kAllStrategies) os << ',' << strategy_name(sigma);
    if (!m.ama_cells.empty()) os << ",ama";
    os << '\n';
    for (std::size_t ti = 0; ti < m.tasks.size(); ++ti) {
        os << task_name(m.tasks[ti]);
        char buf[32];
        for (std::size_t si = 0; si < kNumStrategies; ++si) {
            std::snprintf(buf, sizeof(buf), "%.6f", m.fixed_cells[ti][si]);
            os << ',' << buf;
        }
        if (!m.ama_cells.empty()) {
            std::snprintf(buf, sizeof(buf), "%.6f", m.ama_cells[ti]);
            os << ',' << buf;
        }
        os << '\n';
    }
}

// ---------------------------------------------------------------------------
// read benchmarks (attended keys + latency)

struct BenchResult {
    std::size_t mem_size = 0;
    std::size_t flat_keys = 0;
    std::size_t hier_keys = 0;
    double flat_ms_median = 0.0;
    double hier_ms_median = 0.0;
};

inline BenchResult bench_reads(std::size_t mem_size, int chunk_size, int top_k, int trials,
                               std::uint64_t seed = 1, int dim = 128) {
    Rng rng(seed);
    const int places = 8;
    std::vector<ExperienceFrame<float>> frames;
    for (std::size_t t = 0; t < mem_size; ++t) {
        ExperienceFrame<float> f;
        f.time_index = t;
        f.place_id = static_cast<int>(t / ((mem_size + places - 1) / places));
        f.embedding = Tensor::randn(rng, {static_cast<std::size_t>(dim)});
        frames.push_back(f);
    }
    MemoryConfig mc;
    mc.layout = MemoryLayout::Place;
    mc.chunk_size = static_cast<std::size_t>(chunk_size);
    EpisodicMemory<float> store(mc);
    for (const auto& f : frames) store.write(f, EvictionStrategy::FIFO);

    RelevanceWeights<float> rel{Tensor::randn(rng, {static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)}, 0.05),
                                Tensor::randn(rng, {static_cast<std::size_t>(dim)}, 0.05),
                                Tensor::randn(rng, {static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)}, 0.05)};
    MhaWeights<float> w{Tensor::randn(rng, {static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)}, 0.05),
                        Tensor::randn(rng, {static_cast<std::size_t>(dim)}, 0.05),
                        Tensor::randn(rng, {static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)}, 0.05),
                        Tensor::randn(rng, {static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)}, 0.05),
                        Tensor::randn(rng, {static_cast<std::size_t>(dim)}, 0.05),
                        Tensor::randn(rng, {static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)}, 0.05),
                        Tensor::randn(rng, {static_cast<std::size_t>(dim)}, 0.05)};

    NoGradGuard eval;
    auto flat_view = prepare_flat(frames);
    auto place_embed = [dim](int pid) { return sinusoidal_embed<float>(static_cast<std::size_t>(pid), dim); };
    auto hier_view = prepare_hier(store.chunk_view(), ReadMode::PlaceHier, place_embed);

    BenchResult res;
    res.mem_size = mem_size;
    auto q = Tensor::randn(rng, {1, static_cast<std::size_t>(dim)});
    flat_read(q, flat_view, rel, w, nullptr, &res.flat_keys);
    hcam_read(q, hier_view, rel, w, 2, dim / 2, top_k, nullptr, &res.hier_keys);

    auto time_median = [&](auto&& fn) {
        std::vector<double> ms;
        for (int i = 0; i < trials; ++i) {
            auto t0 = std::chrono::steady_clock::now();
            fn();
            ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
        }
        std::sort(ms.begin(), ms.end());
        return ms[ms.size() / 2];
    };
    res.flat_ms_median = time_median([&] { flat_read(q, flat_view, rel, w); });
    res.hier_ms_median =
        time_median([&] { hcam_read(q, hier_view, rel, w, 2, dim / 2, top_k); });
    return res;
}

// ---------------------------------------------------------------------------
// top-level run drivers

/// Trains per the run config, writing config.txt, metrics.csv, timings.csv,
/// and checkpoint.satm into the out directory (when set).
template <typename S>
TrainResult run_train(const RunConfig& run) {
    std::optional<MetricsWriter> metrics;
    if (!run.out_dir.empty()) {
        std::filesystem::create_directories(run.out_dir);
        std::ofstream cfg(run.out_dir + "/config.txt");
        cfg << run.to_kv().canonical();
        metrics.emplace(run.out_dir);
    }
    auto bundle = SATBundle<S>::make(run);
    if (run.ama) {
        auto ama = make_ama_setup<S>(run);
        return train_ama(bundle, ama, metrics ? &*metrics : nullptr);
    }
    return train_fixed(bundle, metrics ? &*metrics : nullptr);
}

/// Exp-3 grid: one fixed-sigma run per (task, strategy) cell plus one joint
/// AMA run; cells are final eval accuracies.
template <typename S>
MatrixResult run_matrix(const RunConfig& base, bool include_ama = true,
                        std::ostream* progress = nullptr) {
    MatrixResult m;
    m.tasks = {TaskKind::BalletFIFO, TaskKind::BalletLIFO, TaskKind::BalletMVFO,
               TaskKind::BalletLVFO};
    for (TaskKind task : m.tasks) {
        std::vector<double> row;
        for (auto sigma : kAllStrategies) {
            RunConfig cell = base;
            cell.task = task;
            cell.ama = false;
            cell.ama_tasks.clear();
            cell.strategy = sigma;
            auto conv = layout_for_strategy(sigma);
            cell.layout = conv.first;
            cell.model.read_mode = conv.second;
            if (!base.out_dir.empty())
                cell.out_dir = base.out_dir + "/cell_" + task_name(task) + "_" + strategy_name(sigma);
            auto res = run_train<S>(cell);
            row.push_back(res.final_accuracy);
            if (progress)
                (*progress) << "cell " << task_name(task) << " x " << strategy_name(sigma) << ": "
                            << res.final_accuracy << " (" << res.steps_run << " steps)\n";
        }
        m.fixed_cells.push_back(row);
    }
    if (include_ama) {
        RunConfig ama_run = base;
        ama_run.ama = true;
        ama_run.ama_tasks = m.tasks;
        if (!base.out_dir.empty()) ama_run.out_dir = base.out_dir + "/ama";
        auto res = run_train<S>(ama_run);
        m.ama_cells = res.per_task_accuracy;
        m.ama_greedy = res.greedy_strategy;
        if (progress) {
            (*progress) << "ama per-task:";
            for (double a : m.ama_cells) (*progress) << ' ' << a;
            (*progress) << "\n";
        }
    }
    if (!base.out_dir.empty()) {
        std::ofstream os(base.out_dir + "/matrix.csv");
        write_matrix_csv(os, m);
    }
    return m;
}

// ---------------------------------------------------------------------------
// attention trace CSV (layer, query, chunk place_id, relevance)

template <typename S>
void dump_attention_csv(std::ostream& os, const SATBundle<S>& b, TaskKind task, int episodes) {
    NoGradGuard eval;
    os << "episode,layer,chunk,place,relevance,selected\n";
    for (int e = 0; e < episodes; ++e) {
        auto ep = gen_episode(task, derive_seed(b.run.seed, kEvalTag, static_cast<std::uint64_t>(e)),
                              b.run.ballet);
        auto mem = build_episode_memory(b, ep, b.run.strategy, b.run.layout, b.run.model.read_mode);
        AttentionTrace trace;
        b.model.forward(b.query_embedding(ep), mem, &trace);
        for (std::size_t li = 0; li < trace.layers.size(); ++li) {
            const auto& lt = trace.layers[li];
            for (std::size_t c = 0; c < lt.relevance.size(); ++c) {
                const bool sel =
                    std::find(lt.selected.begin(), lt.selected.end(), c) != lt.selected.end();
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.6f", lt.relevance[c]);
                os << e << ',' << li << ',' << c << ','
                   << (c < lt.chunk_places.size() ? lt.chunk_places[c] : -1) << ',' << buf << ','
                   << (sel ? 1 : 0) << '\n';
            }
        }
    }
}

} // namespace sat
