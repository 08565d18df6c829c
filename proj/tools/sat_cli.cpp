// Command-line front end: episode generation, training, evaluation, the
// task x strategy accuracy matrix, gradient checks, and read benchmarks.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "sat/gradcheck_suite.hpp"
#include "sat/harness.hpp"

using namespace sat;

namespace {

RunConfig load_run(const std::string& config_path, long seed_override, const std::string& out_override,
                   const std::string& precision_override) {
    KVConfig kv = config_path.empty() ? KVConfig{} : KVConfig::parse_file(config_path);
    if (seed_override >= 0) kv.set("seed", std::to_string(seed_override));
    if (!out_override.empty()) kv.set("out", out_override);
    if (!precision_override.empty()) kv.set("precision", precision_override);
    return RunConfig::from(kv);
}

int cmd_gen(const std::string& task, std::uint64_t seed, int count, const std::string& out_dir,
            const std::string& config_path) {
    BalletConfig cfg;
    if (!config_path.empty()) {
        auto run = RunConfig::from(KVConfig::parse_file(config_path));
        cfg = run.ballet;
        if (task.empty()) {
            for (int i = 0; i < count; ++i) {
                auto ep = gen_episode(run.task, seed + static_cast<std::uint64_t>(i), cfg);
                dump_episode(std::cout, ep);
            }
            return 0;
        }
    }
    const TaskKind kind = task_from_name(task);
    if (config_path.empty()) cfg = default_ballet_config(kind);
    for (int i = 0; i < count; ++i) {
        auto ep = gen_episode(kind, seed + static_cast<std::uint64_t>(i), cfg);
        if (out_dir.empty()) {
            dump_episode(std::cout, ep);
        } else {
            std::filesystem::create_directories(out_dir);
            std::ofstream os(out_dir + "/episode_" + task + "_" +
                             std::to_string(seed + static_cast<std::uint64_t>(i)) + ".txt");
            dump_episode(os, ep);
        }
    }
    return 0;
}

int cmd_gen_embeddings(const std::string& out_file, int per_task, int dim, double noise,
                       std::uint64_t seed) {
    auto embeds = synth_task_embeddings({"ballet-fifo", "ballet-lifo", "ballet-mvfo", "ballet-lvfo"},
                                        per_task, dim, noise, seed);
    if (out_file.empty()) {
        write_task_embeddings(std::cout, embeds);
    } else {
        std::ofstream os(out_file);
        write_task_embeddings(os, embeds);
    }
    return 0;
}

template <typename S>
int train_with(const RunConfig& run) {
    auto res = run_train<S>(run);
    std::cout << "steps " << res.steps_run << "\n";
    if (!run.ama) {
        std::cout << "eval_accuracy " << res.final_accuracy << "\n";
    } else {
        for (std::size_t i = 0; i < run.ama_tasks.size(); ++i)
            std::cout << task_name(run.ama_tasks[i]) << " accuracy " << res.per_task_accuracy[i]
                      << " greedy "
                      << strategy_name(static_cast<EvictionStrategy>(res.greedy_strategy[i]))
                      << "\n";
    }
    if (!res.checkpoint_path.empty()) std::cout << "checkpoint " << res.checkpoint_path << "\n";
    return 0;
}

template <typename S>
int eval_with(const RunConfig& run, const std::string& checkpoint, int episodes,
              const std::string& attention_csv) {
    auto bundle = SATBundle<S>::make(run);
    if (!checkpoint.empty()) {
        auto params = bundle.parameters();
        load_checkpoint(checkpoint, params);
    }
    const int n = episodes > 0 ? episodes : run.eval_episodes;
    double acc = evaluate(bundle, run.task, n);
    std::cout << "task " << task_name(run.task) << " accuracy " << acc << " over " << n
              << " episodes\n";
    if (!attention_csv.empty()) {
        std::ofstream os(attention_csv);
        dump_attention_csv(os, bundle, run.task, std::min(n, 16));
        std::cout << "attention trace -> " << attention_csv << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"spatially-aware transformer episodic memory toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir, precision, task, checkpoint, attention_csv, embed_out;
    long seed = -1;
    int count = 1, episodes = 0, seeds = 20, per_task = 20, dim = 32, trials = 100;
    int mem_size = 1024, chunk = 32, top_k = 4;
    double noise = 0.05;
    bool embeddings_mode = false, no_ama = false;

    auto* gen = app.add_subcommand("gen", "emit episode dumps or synthetic task embeddings");
    gen->add_option("--task", task, "task name (e.g. next-ballet)");
    gen->add_option("--seed", seed, "base seed");
    gen->add_option("--count", count, "episodes to emit");
    gen->add_option("--out", out_dir, "output directory (stdout if omitted)");
    gen->add_option("--config", config_path, "run config supplying environment parameters");
    gen->add_flag("--task-embeddings", embeddings_mode, "emit a synthetic task-embedding file");
    gen->add_option("--per-task", per_task, "embeddings per task");
    gen->add_option("--dim", dim, "embedding dimension");
    gen->add_option("--noise", noise, "cluster noise");

    auto* train = app.add_subcommand("train", "train a model per config (fixed strategy or AMA)");
    train->add_option("--config", config_path, "run config file")->required();
    train->add_option("--seed", seed, "seed override");
    train->add_option("--out", out_dir, "output directory override");
    train->add_option("--precision", precision, "f32 or f64");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--config", config_path, "run config file")->required();
    eval->add_option("--checkpoint", checkpoint, "checkpoint path");
    eval->add_option("--seed", seed, "seed override");
    eval->add_option("--episodes", episodes, "evaluation episodes");
    eval->add_option("--precision", precision, "f32 or f64");
    eval->add_option("--dump-attention", attention_csv, "write attention-trace CSV");

    auto* matrix = app.add_subcommand("matrix", "train and evaluate the task x strategy grid");
    matrix->add_option("--config", config_path, "base run config")->required();
    matrix->add_option("--seed", seed, "seed override");
    matrix->add_option("--out", out_dir, "output directory override");
    matrix->add_flag("--no-ama", no_ama, "skip the AMA column");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference verification suite");
    gradcheck->add_option("--seeds", seeds, "random draws per op");

    auto* bench = app.add_subcommand("bench", "flat vs hierarchical read cost");
    bench->add_option("--mem", mem_size, "memory size in frames");
    bench->add_option("--chunk", chunk, "chunk size");
    bench->add_option("--top-k", top_k, "chunks read in detail");
    bench->add_option("--trials", trials, "timing repetitions");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            if (embeddings_mode)
                return cmd_gen_embeddings(out_dir, per_task, dim, noise,
                                          seed < 0 ? 0 : static_cast<std::uint64_t>(seed));
            if (task.empty() && config_path.empty()) {
                std::cerr << "gen: --task or --config required\n";
                return 2;
            }
            return cmd_gen(task, seed < 0 ? 0 : static_cast<std::uint64_t>(seed), count, out_dir,
                           config_path);
        }
        if (train->parsed()) {
            auto run = load_run(config_path, seed, out_dir, precision);
            return run.precision == "f64" ? train_with<double>(run) : train_with<float>(run);
        }
        if (eval->parsed()) {
            auto run = load_run(config_path, seed, out_dir, precision);
            return run.precision == "f64" ? eval_with<double>(run, checkpoint, episodes, attention_csv)
                                          : eval_with<float>(run, checkpoint, episodes, attention_csv);
        }
        if (matrix->parsed()) {
            auto run = load_run(config_path, seed, out_dir, precision);
            auto m = run_matrix<float>(run, !no_ama, &std::cout);
            write_matrix_csv(std::cout, m);
            return 0;
        }
        if (gradcheck->parsed()) {
            auto reports = run_gradcheck_suite(static_cast<unsigned>(seeds));
            bool all = true;
            for (const auto& r : reports) {
                std::printf("%-24s max_rel_err %.3e  %s\n", r.name.c_str(), r.max_rel_err,
                            r.pass ? "pass" : "FAIL");
                all = all && r.pass;
            }
            return all ? 0 : 1;
        }
        if (bench->parsed()) {
            for (std::size_t n : {static_cast<std::size_t>(mem_size) / 2,
                                  static_cast<std::size_t>(mem_size),
                                  static_cast<std::size_t>(mem_size) * 2}) {
                auto r = bench_reads(n, chunk, top_k, trials);
                std::printf("mem %5zu: flat keys %5zu, %8.3f ms | place-hier keys %4zu, %8.3f ms\n",
                            r.mem_size, r.flat_keys, r.flat_ms_median, r.hier_keys,
                            r.hier_ms_median);
            }
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
