#pragma once

// Orchestration: pretrained base model per seed, element attachment per combination,
// upstream priming, downstream tuning and scoring on the test tasks, seed-averaged reports
// and the matrix CSVs (ARG/RGSTD scatter and per-task gains).

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "primer/checkpoint.hpp"
#include "primer/combination.hpp"
#include "primer/config.hpp"
#include "primer/downstream.hpp"
#include "primer/metrics.hpp"
#include "primer/model.hpp"
#include "primer/pretrain.hpp"
#include "primer/tasks.hpp"
#include "primer/upstream.hpp"

namespace primer {

/// Independent 64-bit stream seed for (run seed, purpose, item).
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose, std::string_view item = {}) {
    auto fnv = [](std::string_view s) {
        std::uint64_t h = 1469598103934665603ull;
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
        return h;
    };
    const std::uint64_t p = fnv(purpose);
    const std::uint64_t i = fnv(item);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(p),    static_cast<std::uint32_t>(p >> 32),
                      static_cast<std::uint32_t>(i),    static_cast<std::uint32_t>(i >> 32)};
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

/// FNV-1a over parameter names and the raw bytes of their values.
inline std::uint64_t parameter_checksum(const std::vector<Parameter>& params) {
    std::uint64_t h = 1469598103934665603ull;
    auto feed = [&](const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& p : params) {
        feed(p.name.data(), p.name.size());
        const auto d = p.value.data();
        feed(d.data(), d.size() * sizeof(double));
    }
    return h;
}

struct TaskOutcome {
    std::string task;
    TaskType task_type = TaskType::Generation;
    double score = 0.0;      // test metric of the dev-selected checkpoint
    double test_loss = 0.0;  // mean test loss of the same checkpoint
    std::size_t best_step = 0;
};

struct SeedOutcome {
    std::uint64_t seed = 0;
    std::vector<TrainingLogRecord> upstream_log;  // empty for FT baselines
    std::vector<TaskOutcome> tasks;
};

struct CombinationResult {
    Combination combination;
    std::vector<SeedOutcome> seeds;
    std::vector<TaskOutcome> baseline;  // full fine-tuning, seed-averaged scores and losses
    EvalReport report;

    /// Mean over seeds and test tasks of the test loss after downstream tuning.
    double mean_test_loss() const {
        double total = 0.0;
        std::size_t n = 0;
        for (const auto& s : seeds) {
            for (const auto& t : s.tasks) {
                total += t.test_loss;
                ++n;
            }
        }
        return n == 0 ? 0.0 : total / static_cast<double>(n);
    }
};

struct MatrixResult {
    std::vector<CombinationResult> results;
    /// Checksum of the pretrained base model taken right before each combination started.
    std::vector<std::pair<std::string, std::uint64_t>> base_checksums;
};

class Experiment {
public:
    using Progress = std::function<void(std::string_view)>;

    Experiment(RunConfig cfg, TaskSuite suite) : cfg_(std::move(cfg)), suite_(std::move(suite)) {
        cfg_.validate();
        detail::require_input(!suite_.split.train_tasks.empty(), "experiment: the suite has no training tasks");
        detail::require_input(!suite_.split.test_tasks.empty(), "experiment: the suite has no test tasks");
    }

    const RunConfig& config() const { return cfg_; }
    const TaskSuite& suite() const { return suite_; }
    void set_progress(Progress p) { progress_ = std::move(p); }

    /// The pretrained backbone for `seed`, built once and then served from cache.
    const Seq2SeqModel& base_model(std::uint64_t seed) {
        auto it = bases_.find(seed);
        if (it == bases_.end()) {
            note("pretraining backbone for seed " + std::to_string(seed));
            Seq2SeqModel model(cfg_.model, derive_seed(seed, "backbone"));
            std::mt19937_64 rng(derive_seed(seed, "pretrain"));
            pretrain_backbone(model, cfg_.pretrain, rng);
            it = bases_.emplace(seed, std::move(model)).first;
        }
        return it->second;
    }

    /// Replaces the cached base model for `seed`, e.g. with one loaded from a checkpoint.
    void set_base_model(std::uint64_t seed, Seq2SeqModel model) { bases_.insert_or_assign(seed, std::move(model)); }

    /// Fresh clone of the base model carrying every element the combination needs.
    Seq2SeqModel prepare_model(const Combination& combo, std::uint64_t seed) {
        combo.validate();
        Seq2SeqModel model = base_model(seed).clone();
        const ElementSet kinds = combo.attached();
        const auto& el = cfg_.elements;
        if (kinds.contains(ElementKind::Adapter)) model.attach_adapters(el.init_std);
        if (kinds.contains(ElementKind::MetaAdapter)) model.insert_meta_adapters(el.meta_adapter_width);
        if (kinds.contains(ElementKind::Prompt)) model.attach_prompt(el.prompt_length, el.init_std);
        if (kinds.contains(ElementKind::MetaPrompt)) {
            model.attach_meta_prompt(el.effective_meta_prompt_length(), el.init_std);
        }
        model.elements().prompt_order = el.prompt_order;
        return model;
    }

    /// Runs the combination's upstream method in place; FT baselines return an empty log.
    std::vector<TrainingLogRecord> run_upstream(Seq2SeqModel& model, const Combination& combo, std::uint64_t seed) {
        std::mt19937_64 rng(derive_seed(seed, "upstream"));
        switch (combo.method) {
            case Method::MAML:
                note(combo.abbreviation() + ": MAML over " + std::to_string(suite_.split.train_tasks.size()) + " tasks");
                return run_maml(model, suite_.train(), combo.upstream, combo.downstream, cfg_.maml, rng);
            case Method::Multitask:
                note(combo.abbreviation() + ": multi-task training");
                return multitask_train(model, suite_.train(), combo.upstream, cfg_.multitask, rng);
            case Method::FT:
                return {};
        }
        return {};
    }

    /// Tunes the combination's downstream element on `task` and scores the test split.
    TaskOutcome finetune_and_score(const Seq2SeqModel& primed, const TaskDataset& task, const Combination& combo,
                                   std::uint64_t seed) const {
        std::mt19937_64 rng(derive_seed(seed, "downstream", task.name));
        const auto ft = finetune_downstream(primed, task, combo.downstream, cfg_.downstream, rng);
        return {task.name, task.task_type, score_task(ft.model, task, cfg_.downstream.max_decode_len),
                mean_loss(ft.model, task.test), ft.best.step};
    }

    /// Full fine-tuning of the base model on `task`: the reference for every relative gain.
    const TaskOutcome& baseline(std::uint64_t seed, const TaskDataset& task) {
        const auto key = std::make_pair(seed, task.name);
        auto it = baselines_.find(key);
        if (it == baselines_.end()) {
            const Seq2SeqModel& base = base_model(seed);
            note("full fine-tuning baseline on " + task.name + " (seed " + std::to_string(seed) + ")");
            std::mt19937_64 rng(derive_seed(seed, "downstream", task.name));
            const auto r = run_ft_baseline(base, task, BaselineElement::FullModel, cfg_.elements.prompt_length,
                                           cfg_.elements.init_std, cfg_.downstream, rng);
            it = baselines_.emplace(key, TaskOutcome{task.name, task.task_type, r.test_score, r.test_loss, r.best.step})
                     .first;
        }
        return it->second;
    }

    CombinationResult run_combination(const Combination& combo) {
        combo.validate();
        CombinationResult result;
        result.combination = combo;
        const auto tests = suite_.test();
        std::map<std::string, std::pair<double, double>> method_sum;  // task -> (score, loss)
        std::map<std::string, std::pair<double, double>> base_sum;
        for (std::uint64_t seed : cfg_.seeds) {
            SeedOutcome so;
            so.seed = seed;
            Seq2SeqModel model = prepare_model(combo, seed);
            so.upstream_log = run_upstream(model, combo, seed);
            for (const auto& task : tests) {
                note(combo.abbreviation() + ": downstream on " + task.name + " (seed " + std::to_string(seed) + ")");
                so.tasks.push_back(finetune_and_score(model, task, combo, seed));
                method_sum[task.name].first += so.tasks.back().score;
                method_sum[task.name].second += so.tasks.back().test_loss;
                const auto& b = baseline(seed, task);
                base_sum[task.name].first += b.score;
                base_sum[task.name].second += b.test_loss;
            }
            result.seeds.push_back(std::move(so));
        }
        const double n = static_cast<double>(cfg_.seeds.size());
        std::vector<ScorePair> pairs;
        for (const auto& task : tests) {
            pairs.push_back({task.name, task.task_type, method_sum[task.name].first / n, base_sum[task.name].first / n});
            result.baseline.push_back(
                {task.name, task.task_type, base_sum[task.name].first / n, base_sum[task.name].second / n, 0});
        }
        result.report = make_report(combo.abbreviation(), pairs, cfg_.epsilon);
        return result;
    }

    MatrixResult run_matrix(const std::vector<Combination>& combos) {
        MatrixResult out;
        for (const auto& combo : combos) {
            out.base_checksums.emplace_back(combo.abbreviation(), parameter_checksum(base_model(cfg_.seeds.front()).parameters()));
            out.results.push_back(run_combination(combo));
        }
        return out;
    }

private:
    void note(const std::string& msg) const {
        if (progress_) progress_(msg);
    }

    RunConfig cfg_;
    TaskSuite suite_;
    Progress progress_;
    std::map<std::uint64_t, Seq2SeqModel> bases_;
    std::map<std::pair<std::uint64_t, std::string>, TaskOutcome> baselines_;
};

/// The model.* and pretrain.* lines of the config: everything a pretrained backbone depends on
/// besides its seed.
inline std::string backbone_signature(const RunConfig& cfg) {
    std::istringstream all(format_config(cfg));
    std::string line;
    std::string out;
    while (std::getline(all, line)) {
        if (line.starts_with("model.") || line.starts_with("pretrain.")) out += line + "\n";
    }
    return out;
}

/// Pretraining is the slowest shared step, so each seed's backbone is kept in `dir` and reused
/// while its signature is unchanged. Returns true when a cached backbone was loaded.
inline bool load_or_build_backbone(Experiment& exp, std::uint64_t seed, const std::filesystem::path& dir) {
    const std::string stem = "seed" + std::to_string(seed);
    const auto ckpt = dir / (stem + ".ckpt");
    const auto sig_path = dir / (stem + ".cfg");
    const std::string sig = backbone_signature(exp.config());
    if (std::filesystem::exists(ckpt) && std::filesystem::exists(sig_path)) {
        std::ifstream is(sig_path);
        std::stringstream ss;
        ss << is.rdbuf();
        if (ss.str() == sig) {
            exp.set_base_model(seed, load_model(ckpt.string()));
            return true;
        }
    }
    const Seq2SeqModel& base = exp.base_model(seed);
    std::filesystem::create_directories(dir);
    save_model(ckpt.string(), base);
    std::ofstream(sig_path, std::ios::trunc) << sig;
    return false;
}

/// Writes the report (JSONL and CSV) and one upstream log per seed under dir/<abbreviation>/.
inline void write_combination_outputs(const CombinationResult& r, const std::filesystem::path& dir) {
    const auto sub = dir / r.report.name;
    std::filesystem::create_directories(sub);
    write_report_jsonl(r.report, sub / "report.jsonl");
    write_report_csv(r.report, sub / "report.csv");
    for (const auto& s : r.seeds) {
        if (!s.upstream_log.empty()) {
            write_training_log(s.upstream_log, sub / ("upstream_log_seed" + std::to_string(s.seed) + ".jsonl"));
        }
    }
}

/// Scatter CSV (one row per report) and per-task CSV (one row per report, one column per task).
inline void emit_matrix_report(const std::vector<EvalReport>& reports, const std::filesystem::path& scatter_csv,
                               const std::filesystem::path& per_task_csv) {
    detail::require_input(!reports.empty(), "emit_matrix_report: no reports");
    std::ofstream scatter(scatter_csv, std::ios::trunc);
    detail::require_input(static_cast<bool>(scatter), "cannot write " + scatter_csv.string());
    scatter << "abbreviation,method,upstream,downstream,arg,rgstd,n_excluded\n";
    std::vector<std::string> tasks;
    std::set<std::string> seen;
    for (const auto& r : reports) {
        const Combination c = parse_combination(r.name);
        scatter << r.name << ',' << to_string(c.method) << ',' << detail::element_letters(c.upstream) << ','
                << detail::element_letters(c.downstream) << ',' << format_double(r.arg) << ','
                << format_double(r.rgstd) << ',' << r.excluded.size() << "\n";
        for (const auto& t : r.per_task) {
            if (seen.insert(t.task).second) tasks.push_back(t.task);
        }
    }
    std::ofstream per_task(per_task_csv, std::ios::trunc);
    detail::require_input(static_cast<bool>(per_task), "cannot write " + per_task_csv.string());
    per_task << "abbreviation";
    for (const auto& t : tasks) per_task << ',' << t;
    per_task << "\n";
    for (const auto& r : reports) {
        std::map<std::string, std::optional<double>> gains;
        for (const auto& t : r.per_task) gains[t.task] = t.relative_gain;
        per_task << r.name;
        for (const auto& t : tasks) {
            per_task << ',';
            const auto it = gains.find(t);
            if (it != gains.end() && it->second) per_task << format_double(*it->second);
        }
        per_task << "\n";
    }
}

}  // namespace primer
