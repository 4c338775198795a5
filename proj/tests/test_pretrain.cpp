#include <gtest/gtest.h>

#include <numeric>

#include "primer/pretrain.hpp"

using namespace primer;

TEST(Pretrain, ExamplesUseOnlyCorpusCharacters) {
    PretrainConfig cfg;
    std::mt19937_64 rng(5);
    for (int i = 0; i < 500; ++i) {
        const auto ex = sample_denoising_example(cfg, rng);
        EXPECT_GE(ex.output.size(), cfg.min_len);
        EXPECT_LE(ex.output.size(), cfg.max_len);
        EXPECT_LE(ex.input.size(), ex.output.size());
        EXPECT_EQ(ex.output.find(':'), std::string::npos);
        EXPECT_TRUE(CharTokenizer::representable(ex.input));
        EXPECT_TRUE(CharTokenizer::representable(ex.output));
    }
}

TEST(Pretrain, LossDecreases) {
    Seq2SeqModel model(ModelConfig{}, 2);
    PretrainConfig cfg;
    cfg.steps = 300;
    std::mt19937_64 rng(3);
    const auto losses = pretrain_backbone(model, cfg, rng);
    ASSERT_EQ(losses.size(), 300u);
    const double first = std::accumulate(losses.begin(), losses.begin() + 10, 0.0) / 10;
    const double last = std::accumulate(losses.end() - 10, losses.end(), 0.0) / 10;
    EXPECT_LT(last, 0.6 * first);
}

TEST(Pretrain, DeterministicAndTouchesOnlyBackbone) {
    auto run = [] {
        Seq2SeqModel m(ModelConfig{}, 4);
        m.attach_prompt(3, 0.02);
        PretrainConfig cfg;
        cfg.steps = 5;
        std::mt19937_64 rng(9);
        pretrain_backbone(m, cfg, rng);
        return m;
    };
    const auto a = run();
    const auto b = run();
    Seq2SeqModel fresh(ModelConfig{}, 4);
    fresh.attach_prompt(3, 0.02);
    const auto pa = a.parameters();
    const auto pb = b.parameters();
    const auto pf = fresh.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        EXPECT_TRUE(std::equal(pa[i].value.data().begin(), pa[i].value.data().end(), pb[i].value.data().begin()));
        if (*pa[i].kind == ElementKind::Prompt) {
            EXPECT_TRUE(std::equal(pa[i].value.data().begin(), pa[i].value.data().end(), pf[i].value.data().begin()));
        }
    }
}

TEST(Pretrain, OverlongStringsAreInputError) {
    ModelConfig mc;
    mc.max_seq_len = 16;
    Seq2SeqModel m(mc, 1);
    std::mt19937_64 rng(1);
    EXPECT_THROW(pretrain_backbone(m, PretrainConfig{}, rng), InputError);
}
