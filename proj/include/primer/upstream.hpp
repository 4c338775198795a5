#pragma once

// Upstream priming: first-order parameter-efficient MAML and pooled multi-task training.
//
// MAML adapts a clone's downstream elements (psi_d) with a few SGD steps on a task's
// support set, takes the query-set gradient at the adapted point, and applies it to the
// base model's upstream elements (psi_u) with AdamW. The base psi_d is never written
// unless it is also part of psi_u.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "primer/error.hpp"
#include "primer/model.hpp"
#include "primer/optim.hpp"
#include "primer/parameter.hpp"
#include "primer/tasks.hpp"

namespace primer {

/// Anything MAML can adapt: a deep-cloneable set of tagged parameters with a scalar loss.
template <class M>
concept Learner = requires(const M& m, const typename M::Batch& batch) {
    { m.clone() } -> std::same_as<M>;
    { m.parameters() } -> std::same_as<std::vector<Parameter>>;
    { m.loss(batch) } -> std::same_as<Tensor>;
};

struct MamlConfig {
    std::map<ElementKind, double> outer_lr_by_kind;
    std::map<ElementKind, double> inner_lr_by_kind;
    std::size_t inner_steps = 4;
    std::size_t support_size = 8;
    std::size_t query_size = 8;
    std::size_t epochs = 80;
    std::size_t task_batch = 1;
    bool first_order = true;
    double weight_decay = 0.01;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;

    void validate(const ElementSet& upstream, const ElementSet& downstream) const {
        detail::require(first_order, "MamlConfig: only first-order MAML is implemented");
        detail::require(inner_steps >= 1 && support_size >= 1 && query_size >= 1 && task_batch >= 1,
                        "MamlConfig: inner_steps, support_size, query_size and task_batch must be positive");
        detail::require(!upstream.empty(), "MAML: upstream element set is empty");
        detail::require(!downstream.empty() && downstream.valid_downstream(),
                        "MAML: downstream set must be a non-empty subset of {adapter, prompt}, got " +
                            to_string(downstream));
        for (auto k : upstream.kinds()) {
            detail::require(outer_lr_by_kind.count(k) == 1,
                            "MamlConfig: no outer learning rate for " + std::string(to_string(k)));
        }
        for (auto k : downstream.kinds()) {
            detail::require(inner_lr_by_kind.count(k) == 1,
                            "MamlConfig: no inner learning rate for " + std::string(to_string(k)));
        }
    }

    OptimizerConfig outer_optimizer() const {
        OptimizerConfig oc;
        oc.kind = OptimizerKind::AdamW;
        oc.weight_decay = weight_decay;
        oc.adam_beta1 = adam_beta1;
        oc.adam_beta2 = adam_beta2;
        oc.adam_epsilon = adam_epsilon;
        oc.lr_by_kind = outer_lr_by_kind;
        return oc;
    }
};

template <class Batch>
struct Episode {
    std::string task;
    Batch support;
    Batch query;
};

struct TaskStepDiagnostics {
    std::string task;
    double inner_loss = 0.0;  // mean support loss over the inner steps
    double outer_loss = 0.0;  // query loss at the adapted parameters
};

struct OuterStepDiagnostics {
    std::vector<TaskStepDiagnostics> tasks;
    /// Summed first-order outer gradient per upstream parameter name.
    std::map<std::string, std::vector<double>> outer_gradients;
};

/// One outer iteration over `episodes`, updating the upstream elements of `model` in place.
template <Learner M>
OuterStepDiagnostics maml_outer_step(M& model, const std::vector<Episode<typename M::Batch>>& episodes,
                                     const ElementSet& upstream, const ElementSet& downstream, const MamlConfig& cfg,
                                     AdamWState& outer_state) {
    cfg.validate(upstream, downstream);
    detail::require_input(!episodes.empty(), "maml_outer_step: no tasks in batch");
    OuterStepDiagnostics diag;

    for (const auto& ep : episodes) {
        M learner = model.clone();
        const auto params = learner.parameters();
        auto inner = set_trainable(params, downstream);
        detail::require(!inner.tunable.empty(), "maml_outer_step: model has no " + to_string(downstream) + " parameters");

        TaskStepDiagnostics td{ep.task, 0.0, 0.0};
        for (std::size_t s = 0; s < cfg.inner_steps; ++s) {
            zero_grads(inner.tunable);
            const Tensor l = learner.loss(ep.support);
            td.inner_loss += l.item() / static_cast<double>(cfg.inner_steps);
            backward(l);
            sgd_step(inner.tunable, cfg.inner_lr_by_kind);
        }

        auto outer = set_trainable(params, upstream);
        detail::require(!outer.tunable.empty(), "maml_outer_step: model has no " + to_string(upstream) + " parameters");
        zero_grads(outer.tunable);
        const Tensor q = learner.loss(ep.query);
        td.outer_loss = q.item();
        backward(q);
        for (const auto& p : outer.tunable) {
            auto& acc = diag.outer_gradients[p.name];
            const auto g = p.value.grad();
            if (acc.empty()) acc.assign(g.size(), 0.0);
            for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
        }
        diag.tasks.push_back(std::move(td));
    }

    auto base = set_trainable(model.parameters(), upstream);
    for (auto& p : base.tunable) {
        p.value.zero_grad();
        const auto& g = diag.outer_gradients.at(p.name);
        std::copy(g.begin(), g.end(), p.value.grad_mut().begin());
    }
    adamw_step(base.tunable, outer_state, cfg.outer_optimizer());
    for (auto& p : base.tunable) p.value.clear_grad();
    return diag;
}

/// One record of the upstream training log.
struct TrainingLogRecord {
    std::size_t step = 0;
    std::string task;
    double inner_loss = std::numeric_limits<double>::quiet_NaN();  // NaN for multi-task training
    double outer_loss = 0.0;
};

inline void write_training_log(const std::vector<TrainingLogRecord>& log, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    detail::require_input(static_cast<bool>(os), "cannot write " + path.string());
    for (const auto& r : log) {
        nlohmann::json j{{"step", r.step}, {"task", r.task}, {"outer_loss", r.outer_loss}};
        j["inner_loss"] = std::isnan(r.inner_loss) ? nlohmann::json(nullptr) : nlohmann::json(r.inner_loss);
        os << j.dump() << "\n";
    }
}

namespace detail {

inline std::vector<Example> sample_without_replacement(const std::vector<Example>& pool, std::size_t n,
                                                       std::mt19937_64& rng, const std::string& what) {
    require_input(pool.size() >= n, what + ": needs " + std::to_string(n) + " examples but only " +
                                        std::to_string(pool.size()) + " are available");
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<Example> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(pool[idx[i]]);
    return out;
}

}  // namespace detail

/// Support from the task's train split, query from its dev split.
inline Episode<std::vector<Example>> make_episode(const TaskDataset& task, const MamlConfig& cfg,
                                                  std::mt19937_64& rng) {
    return {task.name, detail::sample_without_replacement(task.train, cfg.support_size, rng, task.name + " support"),
            detail::sample_without_replacement(task.dev, cfg.query_size, rng, task.name + " query")};
}

/// MAML over `tasks` for cfg.epochs epochs; each epoch visits every task once in a fresh random order.
inline std::vector<TrainingLogRecord> run_maml(Seq2SeqModel& model, const std::vector<TaskDataset>& tasks,
                                               const ElementSet& upstream, const ElementSet& downstream,
                                               const MamlConfig& cfg, std::mt19937_64& rng) {
    detail::require_input(!tasks.empty(), "run_maml: no training tasks");
    cfg.validate(upstream, downstream);
    AdamWState state;
    std::vector<TrainingLogRecord> log;
    std::size_t step = 0;
    std::vector<std::size_t> order(tasks.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.task_batch) {
            std::vector<Episode<std::vector<Example>>> episodes;
            for (std::size_t j = start; j < std::min(order.size(), start + cfg.task_batch); ++j) {
                episodes.push_back(make_episode(tasks[order[j]], cfg, rng));
            }
            const auto diag = maml_outer_step(model, episodes, upstream, downstream, cfg, state);
            for (const auto& t : diag.tasks) log.push_back({step, t.task, t.inner_loss, t.outer_loss});
            ++step;
        }
    }
    return log;
}

struct MultitaskConfig {
    double lr = 3e-5;
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    double weight_decay = 0.01;
    /// Optional per-kind overrides of lr.
    std::map<ElementKind, double> lr_by_kind;
};

/// Pools every training example, shuffles each epoch, and trains only `upstream` with AdamW.
/// Elements outside `upstream` stay attached and frozen.
inline std::vector<TrainingLogRecord> multitask_train(Seq2SeqModel& model, const std::vector<TaskDataset>& tasks,
                                                      const ElementSet& upstream, const MultitaskConfig& cfg,
                                                      std::mt19937_64& rng) {
    detail::require_input(!tasks.empty(), "multitask_train: no training tasks");
    detail::require(cfg.batch_size >= 1, "MultitaskConfig: batch_size must be positive");
    detail::require(!upstream.empty(), "multitask_train: upstream element set is empty");
    std::vector<Example> pool;
    for (const auto& t : tasks) pool.insert(pool.end(), t.train.begin(), t.train.end());
    detail::require_input(!pool.empty(), "multitask_train: tasks have no training examples");

    OptimizerConfig oc;
    oc.learning_rate = cfg.lr;
    oc.weight_decay = cfg.weight_decay;
    oc.lr_by_kind = cfg.lr_by_kind;
    auto part = set_trainable(model.parameters(), upstream);
    detail::require(!part.tunable.empty(), "multitask_train: model has no " + to_string(upstream) + " parameters");
    AdamWState state;
    std::vector<TrainingLogRecord> log;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(pool.begin(), pool.end(), rng);
        for (std::size_t start = 0; start < pool.size(); start += cfg.batch_size) {
            const std::vector<Example> batch(pool.begin() + static_cast<long>(start),
                                             pool.begin() + static_cast<long>(std::min(pool.size(), start + cfg.batch_size)));
            zero_grads(part.tunable);
            const Tensor l = model.loss(batch);
            backward(l);
            adamw_step(part.tunable, state, oc);
            log.push_back({step++, "pooled", std::numeric_limits<double>::quiet_NaN(), l.item()});
        }
    }
    for (auto& p : part.tunable) p.value.clear_grad();
    return log;
}

}  // namespace primer
