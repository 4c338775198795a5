#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "primer/model.hpp"
#include "primer/optim.hpp"

using namespace primer;

namespace {

TokenBatch random_batch(std::size_t B, std::size_t T, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> tok(4, CharTokenizer::kVocabSize - 1);
    std::vector<std::vector<int>> seqs(B, std::vector<int>(T));
    for (auto& s : seqs) {
        for (auto& id : s) id = tok(rng);
    }
    return TokenBatch::from_sequences(seqs);
}

}  // namespace

TEST(Model, LogitShape) {
    Seq2SeqModel m(ModelConfig{}, 1);
    std::mt19937_64 rng(2);
    const auto src = random_batch(2, 5, rng);
    const auto tgt = random_batch(2, 3, rng);
    const Tensor logits = forward(m.backbone(), src, tgt, m.elements());
    EXPECT_EQ(logits.shape(), (Shape{2, 3, 64}));
}

TEST(Model, PromptExtendsEncoderSequence) {
    Seq2SeqModel m(ModelConfig{}, 1);
    m.attach_prompt(7, 0.02);
    std::mt19937_64 rng(2);
    const auto src = random_batch(2, 5, rng);
    const auto enc = m.backbone().encode(src, m.elements());
    EXPECT_EQ(enc.hidden.shape()[1], 7u + 5u);
}

TEST(Model, SequenceOverflowIsInputError) {
    ModelConfig cfg;
    cfg.max_seq_len = 12;
    Seq2SeqModel m(cfg, 1);
    m.attach_prompt(8, 0.02);
    std::mt19937_64 rng(2);
    EXPECT_THROW(forward(m.backbone(), random_batch(1, 5, rng), random_batch(1, 3, rng), m.elements()), InputError);
}

TEST(Model, ZeroAdapterBiasMatchesNoAdapter) {
    Seq2SeqModel plain(ModelConfig{}, 3);
    Seq2SeqModel adapted = plain.clone();
    adapted.attach_adapters(0.02);
    std::mt19937_64 rng(4);
    const auto src = random_batch(3, 6, rng);
    const auto tgt = random_batch(3, 4, rng);
    const Tensor a = forward(plain.backbone(), src, tgt, plain.elements());
    const Tensor b = forward(adapted.backbone(), src, tgt, adapted.elements());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
}

TEST(Loss, UniformLogitsGiveLogV) {
    const std::size_t V = 64;
    Tensor logits = Tensor::full({2, 3, V}, 0.37);
    const auto tgt = TokenBatch::from_sequences({{5, 6, 7}, {8, 9}});
    EXPECT_NEAR(loss(logits, tgt).item(), std::log(static_cast<double>(V)), 1e-12);
}

TEST(Loss, LargeMarginApproachesZero) {
    const std::size_t V = 10;
    const auto tgt = TokenBatch::from_sequences({{1, 2}, {3, 4}});
    std::vector<double> d(2 * 2 * V, 0.0);
    for (std::size_t i = 0; i < 4; ++i) d[i * V + static_cast<std::size_t>(tgt.ids[i])] = 60.0;
    EXPECT_LT(loss(Tensor({2, 2, V}, d), tgt).item(), 1e-20);
}

TEST(Loss, MatchesHandComputedNll) {
    // Two rows over a three-word vocabulary; the second position of the second row is padding.
    const std::vector<double> d{0.3, -1.2, 2.0, 1.1, 0.4, -0.7, -0.5, 0.9, 0.0, 9.0, 9.0, 9.0};
    const auto tgt = TokenBatch::from_sequences({{2, 0}, {1}});
    const double row0 = -(2.0 - std::log(std::exp(0.3) + std::exp(-1.2) + std::exp(2.0)));
    const double row1 = -(1.1 - std::log(std::exp(1.1) + std::exp(0.4) + std::exp(-0.7)));
    const double row2 = -(0.9 - std::log(std::exp(-0.5) + std::exp(0.9) + std::exp(0.0)));
    EXPECT_NEAR(loss(Tensor({2, 2, 3}, d), tgt).item(), (row0 + row1 + row2) / 3.0, 1e-10);
}

TEST(Loss, AllPaddingIsInputError) {
    TokenBatch tgt;
    tgt.batch = 1;
    tgt.seq = 2;
    tgt.ids = {0, 0};
    tgt.mask = {0, 0};
    EXPECT_THROW(loss(Tensor::zeros({1, 2, 4}), tgt), InputError);
}

TEST(Model, PaddingInvariance) {
    Seq2SeqModel m(ModelConfig{}, 5);
    m.attach_prompt(4, 0.02);
    m.attach_adapters(0.02);
    auto enc = encode_examples(std::vector<Example>{{"kw: good day", "pos"}, {"ab", "abcdef"}});
    const double before = loss(m.logits(enc), enc.target).item();
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<int> tok(0, 63);
    for (auto* tb : {&enc.source, &enc.decoder_input, &enc.target}) {
        for (std::size_t i = 0; i < tb->ids.size(); ++i) {
            if (!tb->mask[i]) tb->ids[i] = tok(rng);
        }
    }
    EXPECT_EQ(loss(m.logits(enc), enc.target).item(), before);
}

TEST(Model, ParameterCensusMatchesClosedForm) {
    for (std::size_t layers : {1u, 2u, 3u}) {
        ModelConfig cfg;
        cfg.n_encoder_layers = layers;
        cfg.n_decoder_layers = 4 - layers;
        cfg.d_model = 16 * layers;
        cfg.d_ff = 24;
        Seq2SeqModel m(cfg, 1);
        EXPECT_EQ(count_elements(m.parameters()), backbone_parameter_count(cfg));
    }
    // Hand count for the default configuration.
    EXPECT_EQ(backbone_parameter_count(ModelConfig{}), 49024u);
}

TEST(Model, ParameterNamesAreUniqueAndStable) {
    Seq2SeqModel m(ModelConfig{}, 1);
    m.attach_adapters(0.02);
    m.insert_meta_adapters(8);
    m.attach_prompt(4, 0.02);
    m.attach_meta_prompt(4, 0.02);
    std::set<std::string> names;
    for (const auto& p : m.parameters()) EXPECT_TRUE(names.insert(p.name).second) << p.name;
    EXPECT_TRUE(names.count("encoder.layer0.attn.q.weight"));
    EXPECT_TRUE(names.count("prompt.embed"));
    EXPECT_TRUE(names.count("adapter.layer0.v"));
    EXPECT_TRUE(names.count("meta_adapter.layer0.pre.down.weight"));
}

TEST(Model, CloneIsDeep) {
    Seq2SeqModel m(ModelConfig{}, 1);
    Seq2SeqModel c = m.clone();
    c.parameters()[0].value.data_mut()[0] += 1.0;
    EXPECT_NE(m.parameters()[0].value.data()[0], c.parameters()[0].value.data()[0]);
}

TEST(GreedyDecode, ZeroMaxLenIsEmpty) {
    Seq2SeqModel m(ModelConfig{}, 1);
    const auto out = m.generate({"abc", "de"}, 0);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_TRUE(out[0].empty());
    EXPECT_TRUE(out[1].empty());
}

TEST(GreedyDecode, Deterministic) {
    Seq2SeqModel m(ModelConfig{}, 9);
    EXPECT_EQ(m.generate({"hello world"}, 10), m.generate({"hello world"}, 10));
}

TEST(GreedyDecode, BatchedMatchesSingle) {
    Seq2SeqModel m(ModelConfig{}, 9);
    const auto both = m.generate({"hello world", "ab"}, 8);
    EXPECT_EQ(both[0], m.generate({"hello world"}, 8)[0]);
    EXPECT_EQ(both[1], m.generate({"ab"}, 8)[0]);
}

TEST(GreedyDecode, OverfitCopyModelCopies) {
    Seq2SeqModel m(ModelConfig{}, 7);
    const std::vector<Example> data{{"abc", "abc"}, {"hello", "hello"}, {"xyz", "xyz"}, {"mop", "mop"},
                                    {"cab", "cab"}, {"tree", "tree"},   {"q", "q"},     {"bead", "bead"}};
    auto part = set_trainable(m.parameters(), {ElementKind::PLM});
    OptimizerConfig oc;
    oc.learning_rate = 3e-3;
    AdamWState st;
    for (int step = 0; step < 300; ++step) {
        zero_grads(part.tunable);
        backward(m.loss(data));
        adamw_step(part.tunable, st, oc);
    }
    EXPECT_EQ(m.generate({"abc"}, 10)[0], "abc");
}
