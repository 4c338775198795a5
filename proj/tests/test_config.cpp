#include <gtest/gtest.h>

#include "primer/config.hpp"

using namespace primer;

TEST(Config, ParsesDottedKeysOverDefaults) {
    const auto cfg = parse_config(R"(
# desk run
model.d_model = 48
maml.outer_lr.plm = 8e-5     # paper value, verbatim
maml.inner_lr.prompt = 0.025
multitask.epochs = 3
multitask.lr.prompt = 0.03
downstream.lr.adapter = 0.004
run.seeds = 1, 2,3
elements.prompt_order = prompt_first
maml.first_order = true
)");
    EXPECT_EQ(cfg.model.d_model, 48u);
    EXPECT_EQ(cfg.model.n_heads, ModelConfig{}.n_heads);
    EXPECT_EQ(cfg.maml.outer_lr_by_kind.at(ElementKind::PLM), 8e-5);
    EXPECT_EQ(cfg.maml.inner_lr_by_kind.at(ElementKind::Prompt), 0.025);
    EXPECT_EQ(cfg.multitask.epochs, 3u);
    EXPECT_EQ(cfg.multitask.lr_by_kind, (std::map<ElementKind, double>{{ElementKind::Prompt, 0.03}}));
    EXPECT_EQ(cfg.downstream.lr_by_kind.at(ElementKind::Adapter), 0.004);
    EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
    EXPECT_EQ(cfg.elements.prompt_order, PromptOrder::PromptFirst);
}

TEST(Config, DefaultsCarryPublishedHyperparameters) {
    const RunConfig cfg;
    EXPECT_EQ(cfg.maml.outer_lr_by_kind.at(ElementKind::PLM), 8e-5);
    EXPECT_EQ(cfg.maml.outer_lr_by_kind.at(ElementKind::Prompt), 8e-3);
    EXPECT_EQ(cfg.maml.outer_lr_by_kind.at(ElementKind::Adapter), 1e-5);
    EXPECT_EQ(cfg.maml.inner_lr_by_kind.at(ElementKind::Prompt), 0.025);
    EXPECT_EQ(cfg.maml.inner_lr_by_kind.at(ElementKind::Adapter), 0.001);
    EXPECT_EQ(cfg.maml.epochs, 80u);
    EXPECT_EQ(cfg.maml.task_batch, 1u);
    EXPECT_EQ(cfg.maml.weight_decay, 0.01);
    EXPECT_EQ(cfg.multitask.lr, 3e-5);
    EXPECT_EQ(cfg.multitask.epochs, 10u);
    EXPECT_EQ(cfg.multitask.batch_size, 32u);
    EXPECT_EQ(cfg.downstream.steps, 300u);
    EXPECT_EQ(cfg.downstream.eval_every, 50u);
    EXPECT_EQ(cfg.epsilon, 0.01);
    EXPECT_NO_THROW(cfg.validate());
}

TEST(Config, FormatThenParseIsIdentity) {
    auto cfg = parse_config("model.d_ff = 96\nrun.seeds = 4,5\npretrain.lr = 0.1\nsuite.seed = 7\nmultitask.lr.plm = 3e-4\n");
    const auto back = parse_config(format_config(cfg));
    EXPECT_EQ(format_config(back), format_config(cfg));
    EXPECT_EQ(back.model, cfg.model);
    EXPECT_EQ(back.seeds, cfg.seeds);
    EXPECT_EQ(back.pretrain.lr, 0.1);
    EXPECT_EQ(back.suite.seed, 7u);
    EXPECT_EQ(back.multitask.lr_by_kind.at(ElementKind::PLM), 3e-4);
}

TEST(Config, ErrorsNameTheLine) {
    auto message = [](const std::string& text) {
        try {
            parse_config(text, {}, "x.cfg");
        } catch (const InputError& e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    EXPECT_NE(message("\nmodel.nope = 1").find("x.cfg:2: unknown key 'model.nope'"), std::string::npos);
    EXPECT_NE(message("model.d_model").find("x.cfg:1: expected"), std::string::npos);
    EXPECT_NE(message("model.d_model = 3x").find("not a valid number"), std::string::npos);
    EXPECT_NE(message("model.d_model = 3\nmodel.d_model = 4").find("set twice"), std::string::npos);
    EXPECT_NE(message("maml.first_order = maybe").find("not a boolean"), std::string::npos);
    EXPECT_NE(message("run.seeds = 1,,2").find("run.seeds"), std::string::npos);
    EXPECT_NE(message("model.d_model =").find("has no value"), std::string::npos);
}

TEST(Config, ValidationRejectsOversizedPrompts) {
    auto cfg = parse_config("elements.prompt_length = 100");
    EXPECT_THROW(cfg.validate(), InputError);
    cfg.model.max_seq_len = 224;
    EXPECT_NO_THROW(cfg.validate());
    cfg.seeds.clear();
    EXPECT_THROW(cfg.validate(), InputError);
}

TEST(Config, MissingFileIsInputError) {
    EXPECT_THROW(load_config("/nonexistent/desk.cfg"), InputError);
}
