#pragma once

// Downstream fine-tuning of prompt/adapter elements on one few-shot task, task scoring,
// and the directly fine-tuned baselines every combination is compared against.

#include <algorithm>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "primer/error.hpp"
#include "primer/metrics.hpp"
#include "primer/model.hpp"
#include "primer/optim.hpp"
#include "primer/parameter.hpp"
#include "primer/tasks.hpp"

namespace primer {

struct DownstreamConfig {
    std::size_t steps = 300;
    std::size_t batch_size = 8;
    std::size_t eval_every = 50;
    std::size_t max_decode_len = 16;
    double weight_decay = 0.01;
    /// When false the model after the last step is returned instead of the best dev checkpoint.
    bool keep_best_on_dev = true;
    std::map<ElementKind, double> lr_by_kind{
        {ElementKind::PLM, 1e-3}, {ElementKind::Adapter, 1e-3}, {ElementKind::Prompt, 3e-2}};

    void validate() const {
        detail::require(batch_size >= 1, "DownstreamConfig: batch_size must be positive");
        detail::require(eval_every >= 1, "DownstreamConfig: eval_every must be positive");
        detail::require(max_decode_len >= 1, "DownstreamConfig: max_decode_len must be positive");
    }
};

/// Dev-set quality used for checkpoint selection: higher score wins, lower loss breaks ties.
struct DevPoint {
    std::size_t step = 0;
    double score = 0.0;
    double loss = 0.0;

    bool better_than(const DevPoint& o) const { return score > o.score || (score == o.score && loss < o.loss); }
};

struct FinetuneResult {
    Seq2SeqModel model;  // the dev-selected checkpoint
    DevPoint best;
    std::vector<DevPoint> dev_history;
    std::vector<double> train_losses;  // one per optimizer step
};

/// Mean per-example loss, evaluated in chunks so long splits stay cheap.
inline double mean_loss(const Seq2SeqModel& model, const std::vector<Example>& examples, std::size_t chunk = 32) {
    detail::require_input(!examples.empty(), "mean_loss: empty split");
    double total = 0.0;
    for (std::size_t start = 0; start < examples.size(); start += chunk) {
        const std::size_t end = std::min(examples.size(), start + chunk);
        const std::vector<Example> batch(examples.begin() + static_cast<long>(start),
                                         examples.begin() + static_cast<long>(end));
        total += model.loss(batch).item() * static_cast<double>(end - start);
    }
    return total / static_cast<double>(examples.size());
}

/// Greedy-decodes `examples` and scores them with the task type's metric.
inline double score_examples(const Seq2SeqModel& model, TaskType type, const std::vector<Example>& examples,
                             std::size_t max_decode_len) {
    detail::require_input(!examples.empty(), "score: empty split");
    std::vector<std::string> inputs;
    inputs.reserve(examples.size());
    for (const auto& e : examples) inputs.push_back(e.input);
    return score_predictions(type, model.generate(inputs, max_decode_len), examples);
}

inline double score_task(const Seq2SeqModel& model, const TaskDataset& task, std::size_t max_decode_len = 16) {
    detail::require_input(!task.test.empty(), "score_task: " + task.name + " has an empty test split");
    return score_examples(model, task.task_type, task.test, max_decode_len);
}

namespace detail {

/// Fine-tunes any element set. Public entry points restrict which sets are allowed.
inline FinetuneResult finetune_elements(const Seq2SeqModel& primed, const TaskDataset& task, const ElementSet& tunable,
                                        const DownstreamConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    require_input(!task.train.empty() && !task.dev.empty(), "finetune: " + task.name + " needs train and dev examples");
    Seq2SeqModel model = primed.clone();
    auto part = set_trainable(model.parameters(), tunable);
    require(!part.tunable.empty(), "finetune: model has no " + to_string(tunable) + " parameters to tune");

    OptimizerConfig oc;
    oc.weight_decay = cfg.weight_decay;
    for (auto k : tunable.kinds()) {
        const auto it = cfg.lr_by_kind.find(k);
        require(it != cfg.lr_by_kind.end(), "DownstreamConfig: no learning rate for " + std::string(to_string(k)));
        oc.lr_by_kind[k] = it->second;
    }

    auto evaluate = [&](std::size_t step) {
        return DevPoint{step, score_examples(model, task.task_type, task.dev, cfg.max_decode_len),
                        mean_loss(model, task.dev)};
    };

    FinetuneResult result{model.clone(), evaluate(0), {}, {}};
    result.dev_history.push_back(result.best);

    AdamWState state;
    std::vector<Example> pool = task.train;
    std::size_t cursor = pool.size();
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        std::vector<Example> batch;
        while (batch.size() < std::min(cfg.batch_size, pool.size())) {
            if (cursor == pool.size()) {
                std::shuffle(pool.begin(), pool.end(), rng);
                cursor = 0;
            }
            batch.push_back(pool[cursor++]);
        }
        zero_grads(part.tunable);
        const Tensor l = model.loss(batch);
        backward(l);
        adamw_step(part.tunable, state, oc);
        result.train_losses.push_back(l.item());

        if (step % cfg.eval_every == 0 || step == cfg.steps) {
            for (auto& p : part.tunable) p.value.clear_grad();
            const DevPoint point = evaluate(step);
            result.dev_history.push_back(point);
            const bool last = step == cfg.steps;
            if (cfg.keep_best_on_dev ? point.better_than(result.best) : last) {
                result.best = point;
                result.model = model.clone();
            }
        }
    }
    for (auto& p : result.model.parameters()) p.value.clear_grad();
    return result;
}

}  // namespace detail

/// Tunes only `downstream` (a subset of {adapter, prompt}) on the task's train split and
/// keeps the checkpoint with the best dev score, including the untuned starting point.
inline FinetuneResult finetune_downstream(const Seq2SeqModel& primed, const TaskDataset& task,
                                          const ElementSet& downstream, const DownstreamConfig& cfg,
                                          std::mt19937_64& rng) {
    detail::require(!downstream.empty() && downstream.valid_downstream(),
                    "finetune_downstream: only adapter and prompt may be tuned downstream, got " + to_string(downstream));
    return detail::finetune_elements(primed, task, downstream, cfg, rng);
}

/// Which elements a directly fine-tuned baseline trains.
enum class BaselineElement { Adapter, Prompt, FullModel };

struct BaselineResult {
    double test_score = 0.0;
    double test_loss = 0.0;
    DevPoint best;
};

/// Direct fine-tuning of a never-primed model: attach a fresh element and tune it, or tune
/// the whole backbone (the reference every relative gain is measured against).
inline BaselineResult run_ft_baseline(const Seq2SeqModel& base, const TaskDataset& task, BaselineElement element,
                                      std::size_t prompt_length, double init_std, const DownstreamConfig& cfg,
                                      std::mt19937_64& rng) {
    Seq2SeqModel model = base.clone();
    ElementSet tunable;
    switch (element) {
        case BaselineElement::Adapter:
            if (model.elements().adapters.empty()) model.attach_adapters(init_std);
            tunable = ElementSet{ElementKind::Adapter};
            break;
        case BaselineElement::Prompt:
            if (!model.elements().prompt) model.attach_prompt(prompt_length, init_std);
            tunable = ElementSet{ElementKind::Prompt};
            break;
        case BaselineElement::FullModel:
            tunable = ElementSet{ElementKind::PLM};
            break;
    }
    const auto ft = element == BaselineElement::FullModel ? detail::finetune_elements(model, task, tunable, cfg, rng)
                                                          : finetune_downstream(model, task, tunable, cfg, rng);
    return {score_task(ft.model, task, cfg.max_decode_len), mean_loss(ft.model, task.test), ft.best};
}

}  // namespace primer
