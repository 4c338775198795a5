// Command-line driver: task suite generation, the upstream and downstream stages run one at a
// time or end to end, and the matrix report.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "primer/primer.hpp"

namespace fs = std::filesystem;
using namespace primer;

namespace {

struct GlobalOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string tasks_dir = "tasks";
    std::string out;
    std::optional<std::size_t> prompt_len;
};

void log_line(std::string_view msg) {
    using clock = std::chrono::steady_clock;
    static const auto start = clock::now();
    const double secs = std::chrono::duration<double>(clock::now() - start).count();
    std::fprintf(stderr, "[%8.1fs] %.*s\n", secs, static_cast<int>(msg.size()), msg.data());
}

RunConfig resolve_config(const GlobalOptions& g) {
    RunConfig cfg = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
    if (g.seed) cfg.seeds = {*g.seed};
    if (!g.out.empty()) cfg.output_dir = g.out;
    if (g.prompt_len) {
        cfg.elements.prompt_length = *g.prompt_len;
        // Prompt and meta-prompt plus the longest task input must fit the position table.
        const std::size_t needed =
            kMaxGeneratedInput + 1 + cfg.elements.prompt_length + cfg.elements.effective_meta_prompt_length();
        if (cfg.model.max_seq_len < needed) cfg.model.max_seq_len = 224;
    }
    cfg.validate();
    return cfg;
}

TaskSuite resolve_suite(const GlobalOptions& g, const RunConfig& cfg) {
    if (fs::exists(fs::path(g.tasks_dir) / "split.json")) return load_suite(g.tasks_dir);
    log_line("no suite at " + g.tasks_dir + "; generating it in memory from suite.* settings");
    return generate_suite(cfg.suite);
}

Experiment make_experiment(const GlobalOptions& g) {
    RunConfig cfg = resolve_config(g);
    Experiment exp(cfg, resolve_suite(g, cfg));
    exp.set_progress(log_line);
    for (std::uint64_t seed : exp.config().seeds) {
        const fs::path dir = exp.config().output_dir / "backbones";
        if (load_or_build_backbone(exp, seed, dir)) log_line("reusing pretrained backbone for seed " + std::to_string(seed));
    }
    return exp;
}

const TaskDataset& find_task(const TaskSuite& suite, const std::string& name) {
    const auto it = suite.tasks.find(name);
    detail::require_input(it != suite.tasks.end(), "task '" + name + "' is not in the suite");
    return it->second;
}

fs::path primed_path(const RunConfig& cfg, const Combination& c, std::uint64_t seed) {
    return cfg.output_dir / c.abbreviation() / ("primed_seed" + std::to_string(seed) + ".ckpt");
}

fs::path tuned_path(const RunConfig& cfg, const Combination& c, const std::string& task, std::uint64_t seed) {
    return cfg.output_dir / c.abbreviation() / ("tuned_" + task + "_seed" + std::to_string(seed) + ".ckpt");
}

void cmd_gen_tasks(const GlobalOptions& g) {
    const RunConfig cfg = resolve_config(g);
    const TaskSuite suite = generate_suite(cfg.suite);
    save_suite(suite, g.tasks_dir);
    std::cout << "wrote " << suite.tasks.size() << " tasks to " << g.tasks_dir << " (train "
              << suite.split.train_tasks.size() << ", dev " << suite.split.dev_tasks.size() << ", test "
              << suite.split.test_tasks.size() << ")\n";
}

void cmd_train_upstream(const GlobalOptions& g, const std::string& abbr) {
    const Combination combo = parse_combination(abbr);
    Experiment exp = make_experiment(g);
    for (std::uint64_t seed : exp.config().seeds) {
        Seq2SeqModel model = exp.prepare_model(combo, seed);
        const auto log = exp.run_upstream(model, combo, seed);
        const fs::path path = primed_path(exp.config(), combo, seed);
        fs::create_directories(path.parent_path());
        save_model(path.string(), model);
        if (!log.empty()) {
            write_training_log(log, path.parent_path() / ("upstream_log_seed" + std::to_string(seed) + ".jsonl"));
        }
        std::cout << combo.abbreviation() << " seed " << seed << ": " << log.size() << " upstream steps, model "
                  << path.string() << "\n";
    }
}

void cmd_finetune(const GlobalOptions& g, const std::string& abbr, const std::string& task_name) {
    const Combination combo = parse_combination(abbr);
    Experiment exp = make_experiment(g);
    const TaskDataset& task = find_task(exp.suite(), task_name);
    for (std::uint64_t seed : exp.config().seeds) {
        const fs::path primed = primed_path(exp.config(), combo, seed);
        Seq2SeqModel model = [&] {
            if (combo.method == Method::FT) return exp.prepare_model(combo, seed);
            detail::require_input(fs::exists(primed),
                                  "no primed model at " + primed.string() + "; run train-upstream first");
            Seq2SeqModel m = load_model(primed.string());
            m.elements().prompt_order = exp.config().elements.prompt_order;
            return m;
        }();
        std::mt19937_64 rng(derive_seed(seed, "downstream", task.name));
        const auto ft = finetune_downstream(model, task, combo.downstream, exp.config().downstream, rng);
        const fs::path out = tuned_path(exp.config(), combo, task.name, seed);
        fs::create_directories(out.parent_path());
        save_model(out.string(), ft.model);
        for (const auto& p : ft.dev_history) {
            std::cout << nlohmann::json{{"seed", seed}, {"step", p.step}, {"dev_score", p.score}, {"dev_loss", p.loss}}
                             .dump()
                      << "\n";
        }
        std::cout << "selected step " << ft.best.step << ", model " << out.string() << "\n";
    }
}

void cmd_evaluate(const GlobalOptions& g, const std::string& checkpoint, const std::string& task_name) {
    const RunConfig cfg = resolve_config(g);
    const TaskSuite suite = resolve_suite(g, cfg);
    const TaskDataset& task = find_task(suite, task_name);
    Seq2SeqModel model = load_model(checkpoint);
    model.elements().prompt_order = cfg.elements.prompt_order;
    std::cout << nlohmann::json{{"task", task.name},
                                {"task_type", to_string(task.task_type)},
                                {"score", score_task(model, task, cfg.downstream.max_decode_len)},
                                {"test_loss", mean_loss(model, task.test)}}
                     .dump()
              << "\n";
}

void print_summary(const CombinationResult& r) {
    std::cout << r.report.name << ": ARG " << format_double(r.report.arg) << ", RGSTD "
              << format_double(r.report.rgstd) << ", excluded " << r.report.excluded.size() << ", mean test loss "
              << format_double(r.mean_test_loss()) << "\n";
}

void cmd_run_combination(const GlobalOptions& g, const std::string& abbr) {
    const Combination combo = parse_combination(abbr);
    Experiment exp = make_experiment(g);
    const auto result = exp.run_combination(combo);
    write_combination_outputs(result, exp.config().output_dir);
    print_summary(result);
}

void cmd_run_matrix(const GlobalOptions& g, const std::vector<std::string>& abbrs) {
    std::vector<Combination> combos;
    if (abbrs.empty()) {
        combos = enumerate_combinations();
    } else {
        for (const auto& a : abbrs) combos.push_back(parse_combination(a));
    }
    Experiment exp = make_experiment(g);
    std::vector<EvalReport> reports;
    for (const auto& combo : combos) {
        const auto result = exp.run_combination(combo);
        write_combination_outputs(result, exp.config().output_dir);
        print_summary(result);
        reports.push_back(result.report);
    }
    emit_matrix_report(reports, exp.config().output_dir / "scatter.csv", exp.config().output_dir / "per_task.csv");
}

void cmd_report(const GlobalOptions& g) {
    const RunConfig cfg = resolve_config(g);
    detail::require_input(fs::is_directory(cfg.output_dir), "output directory " + cfg.output_dir.string() + " not found");
    std::vector<EvalReport> reports;
    // Reports are collected in table order; other directories under the output root are skipped.
    for (const auto& combo : enumerate_combinations()) {
        const fs::path p = cfg.output_dir / combo.abbreviation() / "report.jsonl";
        if (fs::exists(p)) reports.push_back(read_report_jsonl(p));
    }
    detail::require_input(!reports.empty(), "no report.jsonl files under " + cfg.output_dir.string());
    emit_matrix_report(reports, cfg.output_dir / "scatter.csv", cfg.output_dir / "per_task.csv");
    std::cout << "wrote " << (cfg.output_dir / "scatter.csv").string() << " and "
              << (cfg.output_dir / "per_task.csv").string() << " from " << reports.size() << " reports\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tunable-element priming experiments on a small encoder-decoder"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand name
    GlobalOptions g;
    app.add_option("--config", g.config_path, "key = value configuration file")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "run a single seed instead of run.seeds");
    app.add_option("--tasks-dir", g.tasks_dir, "task suite directory")->capture_default_str();
    app.add_option("--out", g.out, "output directory (overrides run.output_dir)");
    app.add_option("--prompt-len", g.prompt_len, "prompt length")->check(CLI::IsMember({16, 20, 100}));

    auto* gen = app.add_subcommand("gen-tasks", "materialize the task suite under --tasks-dir");
    std::string abbr;
    std::string task;
    std::string checkpoint;
    std::vector<std::string> abbrs;
    auto* up = app.add_subcommand("train-upstream", "run the upstream stage and save the primed model");
    up->add_option("--abbr", abbr, "combination abbreviation, e.g. Meta_M_P")->required();
    auto* ft = app.add_subcommand("finetune", "tune the downstream element of a primed model on one task");
    ft->add_option("--abbr", abbr, "combination abbreviation")->required();
    ft->add_option("--task", task, "task name")->required();
    auto* ev = app.add_subcommand("evaluate", "score a saved model on a task's test split");
    ev->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
    ev->add_option("--task", task, "task name")->required();
    auto* rc = app.add_subcommand("run-combination", "upstream, downstream and scoring for one combination");
    rc->add_option("--abbr", abbr, "combination abbreviation")->required();
    auto* rm = app.add_subcommand("run-matrix", "run every combination (or the listed ones) and emit the matrix CSVs");
    rm->add_option("--abbr", abbrs, "restrict to these combinations");
    auto* rep = app.add_subcommand("report", "rebuild scatter.csv and per_task.csv from saved reports");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*gen) cmd_gen_tasks(g);
        if (*up) cmd_train_upstream(g, abbr);
        if (*ft) cmd_finetune(g, abbr, task);
        if (*ev) cmd_evaluate(g, checkpoint, task);
        if (*rc) cmd_run_combination(g, abbr);
        if (*rm) cmd_run_matrix(g, abbrs);
        if (*rep) cmd_report(g);
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ContractViolation& e) {
        std::cerr << "contract violation: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
