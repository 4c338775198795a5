#include <gtest/gtest.h>

#include <map>

#include "primer/downstream.hpp"

using namespace primer;

namespace {

std::map<std::string, std::vector<double>> snapshot(const Seq2SeqModel& m) {
    std::map<std::string, std::vector<double>> out;
    for (const auto& p : m.parameters()) out[p.name].assign(p.value.data().begin(), p.value.data().end());
    return out;
}

Seq2SeqModel with_elements(std::uint64_t seed) {
    Seq2SeqModel m(ModelConfig{}, seed);
    m.attach_adapters(0.02);
    m.attach_prompt(4, 0.02);
    return m;
}

DownstreamConfig quick(std::size_t steps) {
    DownstreamConfig c;
    c.steps = steps;
    c.eval_every = 10;
    return c;
}

}  // namespace

TEST(Finetune, ZeroStepsReturnsIdenticalModel) {
    const auto model = with_elements(1);
    std::mt19937_64 rng(1);
    const auto r = finetune_downstream(model, generate_task(TaskFamily::Copy, 1), {ElementKind::Prompt}, quick(0), rng);
    EXPECT_EQ(snapshot(r.model), snapshot(model));
    EXPECT_EQ(r.best.step, 0u);
    EXPECT_TRUE(r.train_losses.empty());
}

TEST(Finetune, AdapterRunLeavesPromptAndBackboneUntouched) {
    const auto model = with_elements(2);
    const auto before = snapshot(model);
    std::mt19937_64 rng(1);
    auto cfg = quick(20);
    cfg.keep_best_on_dev = false;
    const auto r = finetune_downstream(model, generate_task(TaskFamily::KeywordSentiment, 4), {ElementKind::Adapter},
                                       cfg, rng);
    EXPECT_EQ(r.best.step, 20u);
    const auto after = snapshot(r.model);
    bool adapter_changed = false;
    for (const auto& p : r.model.parameters()) {
        if (*p.kind == ElementKind::Adapter) {
            adapter_changed = adapter_changed || after.at(p.name) != before.at(p.name);
        } else {
            EXPECT_EQ(after.at(p.name), before.at(p.name)) << p.name;
        }
    }
    EXPECT_TRUE(adapter_changed);
    EXPECT_EQ(snapshot(model), before);
}

TEST(Finetune, NonDownstreamElementsAreContractViolations) {
    auto model = with_elements(3);
    model.insert_meta_adapters(8);
    const auto task = generate_task(TaskFamily::Copy, 1);
    std::mt19937_64 rng(1);
    for (const ElementSet& bad : {ElementSet{ElementKind::PLM}, ElementSet{ElementKind::MetaAdapter},
                                  ElementSet{ElementKind::Prompt, ElementKind::MetaPrompt}, ElementSet{}}) {
        EXPECT_THROW(finetune_downstream(model, task, bad, quick(1), rng), ContractViolation) << to_string(bad);
    }
}

TEST(Finetune, MissingLearningRateIsContractViolation) {
    auto cfg = quick(1);
    cfg.lr_by_kind.erase(ElementKind::Prompt);
    std::mt19937_64 rng(1);
    EXPECT_THROW(finetune_downstream(with_elements(1), generate_task(TaskFamily::Copy, 1), {ElementKind::Prompt}, cfg,
                                     rng),
                 ContractViolation);
}

// The selected checkpoint is never worse on dev than the untuned starting point.
TEST(Finetune, SelectedDevScoreAtLeastUntuned) {
    Seq2SeqModel model(ModelConfig{}, 5);
    model.attach_adapters(0.02);
    const auto task = generate_task(TaskFamily::KeywordSentiment, 6);
    const double untuned = score_examples(model, task.task_type, task.dev, 16);
    std::mt19937_64 rng(2);
    auto cfg = quick(40);
    cfg.lr_by_kind[ElementKind::Adapter] = 1e-2;
    const auto r = finetune_downstream(model, task, {ElementKind::Adapter}, cfg, rng);
    EXPECT_EQ(r.dev_history.front().score, untuned);
    EXPECT_GE(r.best.score, untuned);
    EXPECT_EQ(score_examples(r.model, task.task_type, task.dev, 16), r.best.score);
    for (const auto& p : r.dev_history) EXPECT_FALSE(p.better_than(r.best));
}

TEST(Finetune, DevHistoryFollowsEvalSchedule) {
    std::mt19937_64 rng(1);
    auto cfg = quick(25);
    const auto r = finetune_downstream(with_elements(1), generate_task(TaskFamily::Reverse, 2), {ElementKind::Prompt}, cfg,
                                       rng);
    std::vector<std::size_t> steps;
    for (const auto& p : r.dev_history) steps.push_back(p.step);
    EXPECT_EQ(steps, (std::vector<std::size_t>{0, 10, 20, 25}));
    EXPECT_EQ(r.train_losses.size(), 25u);
}

TEST(ScoreTask, PerfectAndEmptyPredictions) {
    const std::vector<Example> ex{{"a", "x y"}, {"b", "z"}};
    EXPECT_EQ(score_predictions(TaskType::Generation, {"x y", "z"}, ex), 1.0);
    EXPECT_EQ(score_predictions(TaskType::Generation, {"", ""}, ex), 0.0);
    EXPECT_NEAR(token_f1("a b c", "a b d"), 2.0 / 3.0, 1e-15);
}

TEST(ScoreTask, EmptyTestSplitIsInputError) {
    auto task = generate_task(TaskFamily::Copy, 1);
    task.test.clear();
    EXPECT_THROW(score_task(Seq2SeqModel(ModelConfig{}, 1), task), InputError);
}

TEST(MeanLoss, MatchesSingleBatchLossForEqualChunks) {
    const Seq2SeqModel model(ModelConfig{}, 4);
    const auto task = generate_task(TaskFamily::Copy, 3);
    const std::vector<Example> ex(task.test.begin(), task.test.begin() + 8);
    // Per-chunk losses are token means, so compare against the example-weighted chunk average.
    const double whole = mean_loss(model, ex, 8);
    EXPECT_NEAR(whole, model.loss(ex).item(), 1e-12);
    const double halves = mean_loss(model, ex, 4);
    const std::vector<Example> a(ex.begin(), ex.begin() + 4);
    const std::vector<Example> b(ex.begin() + 4, ex.end());
    EXPECT_NEAR(halves, 0.5 * (model.loss(a).item() + model.loss(b).item()), 1e-12);
}

TEST(FtBaseline, DeterministicUnderFixedSeed) {
    const Seq2SeqModel base(ModelConfig{}, 8);
    const auto task = generate_task(TaskFamily::VowelBucket, 9);
    auto run = [&](BaselineElement e) {
        std::mt19937_64 rng(3);
        return run_ft_baseline(base, task, e, 4, 0.02, quick(15), rng);
    };
    for (auto e : {BaselineElement::Adapter, BaselineElement::Prompt, BaselineElement::FullModel}) {
        const auto a = run(e);
        const auto b = run(e);
        EXPECT_EQ(a.test_score, b.test_score);
        EXPECT_EQ(a.test_loss, b.test_loss);
        EXPECT_EQ(a.best.step, b.best.step);
    }
}

TEST(FtBaseline, BaseModelIsNotModified) {
    const Seq2SeqModel base(ModelConfig{}, 8);
    const auto before = snapshot(base);
    std::mt19937_64 rng(3);
    run_ft_baseline(base, generate_task(TaskFamily::Copy, 2), BaselineElement::FullModel, 4, 0.02, quick(5), rng);
    EXPECT_EQ(snapshot(base), before);
    EXPECT_TRUE(base.elements().empty());
}

// A tuned prompt must lower the test loss of the frozen backbone it is attached to.
TEST(FtBaseline, PromptTuningLowersTestLoss) {
    const Seq2SeqModel base(ModelConfig{}, 11);
    const auto task = generate_task(TaskFamily::Copy, 13);
    Seq2SeqModel untuned = base.clone();
    untuned.attach_prompt(16, 0.02);
    const double before = mean_loss(untuned, task.test);
    DownstreamConfig cfg = quick(100);
    cfg.lr_by_kind[ElementKind::Prompt] = 0.1;
    std::mt19937_64 rng(14);
    const auto r = run_ft_baseline(base, task, BaselineElement::Prompt, 16, 0.02, cfg, rng);
    EXPECT_LT(r.test_loss, before - 0.1);
}
