#include <gtest/gtest.h>

#include <map>
#include <random>
#include <set>

#include "gradcheck.hpp"
#include "primer/model.hpp"
#include "primer/optim.hpp"

using namespace primer;

namespace {

const std::vector<Example> kBatch{{"kw: nice sunny day", "pos"}, {"cp: abc de", "abc de"}, {"rev: x y", "y x"}};

std::map<std::string, std::vector<double>> snapshot(const Seq2SeqModel& m) {
    std::map<std::string, std::vector<double>> out;
    for (const auto& p : m.parameters()) out[p.name].assign(p.value.data().begin(), p.value.data().end());
    return out;
}

Seq2SeqModel fully_equipped(std::uint64_t seed) {
    Seq2SeqModel m(ModelConfig{}, seed);
    m.attach_adapters(0.02);
    m.insert_meta_adapters(8);
    m.attach_prompt(4, 0.02);
    m.attach_meta_prompt(4, 0.02);
    return m;
}

std::vector<ElementSet> all_element_sets() {
    std::vector<ElementSet> out;
    for (unsigned mask = 0; mask < 32; ++mask) {
        ElementSet s;
        for (unsigned k = 0; k < 5; ++k) {
            if (mask & (1u << k)) s.insert(kAllElementKinds[k]);
        }
        out.push_back(s);
    }
    return out;
}

}  // namespace

TEST(AdapterBias, HandArithmetic) {
    AdapterBiasElement e{Tensor({2}, {0.5, -0.5}), Tensor({2}, {1.0, 0.0})};
    const Tensor out = adapter_bias_apply(Tensor({1, 1, 2}, {1.0, 2.0}), e);
    EXPECT_EQ(out.data()[0], 1.5);
    EXPECT_EQ(out.data()[1], 1.5);
}

TEST(AdapterBias, ZeroVectorOrZeroWeightsIsIdentity) {
    std::mt19937_64 rng(1);
    const Tensor h = Tensor::randn({2, 3, 4}, 1.0, rng);
    AdapterBiasElement zero_v{Tensor::zeros({4}), Tensor::randn({4}, 1.0, rng)};
    AdapterBiasElement zero_w{Tensor::randn({4}, 1.0, rng), Tensor::zeros({4})};
    for (const auto* e : {&zero_v, &zero_w}) {
        const Tensor out = adapter_bias_apply(h, *e);
        for (std::size_t i = 0; i < h.size(); ++i) EXPECT_EQ(out.data()[i], h.data()[i]);
    }
}

TEST(AdapterBias, DimensionMismatchIsInputError) {
    std::mt19937_64 rng(1);
    auto e = make_adapter_bias(4, 0.02, rng);
    EXPECT_THROW(adapter_bias_apply(Tensor::zeros({2, 3}), e), InputError);
}

TEST(MetaAdapters, TwoPerInsertionPoint) {
    Seq2SeqModel m(ModelConfig{}, 1);
    m.attach_adapters(0.02);
    m.insert_meta_adapters(8);
    EXPECT_EQ(m.config().insertion_points(), 4u);
    EXPECT_EQ(m.elements().meta_adapters.size() * 2, 8u);
    std::size_t meta_params = 0;
    for (const auto& p : m.parameters()) meta_params += p.kind == ElementKind::MetaAdapter ? 1 : 0;
    EXPECT_EQ(meta_params, 8u * 4u);
}

TEST(MetaAdapters, RequireRegularAdapters) {
    Seq2SeqModel m(ModelConfig{}, 1);
    EXPECT_THROW(m.insert_meta_adapters(8), ContractViolation);
}

TEST(MetaAdapters, FrozenUnderAdapterDownstreamSet) {
    auto m = fully_equipped(1);
    const auto part = partition_parameters(m.parameters(), {ElementKind::Adapter});
    for (const auto& p : part.frozen) EXPECT_NE(p.kind, ElementKind::Adapter);
    for (const auto& p : part.tunable) EXPECT_EQ(p.kind, ElementKind::Adapter) << p.name;
    std::size_t frozen_meta = 0;
    for (const auto& p : part.frozen) frozen_meta += p.kind == ElementKind::MetaAdapter ? 1 : 0;
    EXPECT_EQ(frozen_meta, 32u);
}

TEST(IdentityAtInit, BothAdapterKindsLeaveOutputsUnchanged) {
    Seq2SeqModel plain(ModelConfig{}, 3);
    Seq2SeqModel equipped = plain.clone();
    equipped.attach_adapters(0.02);
    equipped.insert_meta_adapters(8);
    const auto enc = encode_examples(kBatch);
    const Tensor a = plain.logits(enc);
    const Tensor b = equipped.logits(enc);
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a.data()[i], b.data()[i], 1e-12);
}

TEST(Prompts, LengthsAndOrder) {
    std::mt19937_64 rng(2);
    const Tensor input = Tensor::randn({1, 10, 3}, 1.0, rng);
    const std::vector<unsigned char> mask(10, 1);
    auto prompt = make_soft_prompt(4, 3, 0.02, rng);
    auto meta = make_meta_prompt(4, 3, 0.02, rng);

    EXPECT_EQ(build_prompt_input(input, mask, &prompt, nullptr, 64).embeds.shape()[1], 14u);

    const auto both = build_prompt_input(input, mask, &prompt, &meta, 64);
    ASSERT_EQ(both.embeds.shape(), (Shape{1, 18, 3}));
    EXPECT_EQ(both.prefix_len, 8u);
    const auto d = both.embeds.data();
    for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(d[i], meta.embeddings.data()[i]);
    for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(d[12 + i], prompt.embeddings.data()[i]);
    for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(d[24 + i], input.data()[i]);
}

TEST(Prompts, PromptFirstOrderSwapsBlocks) {
    std::mt19937_64 rng(2);
    const Tensor input = Tensor::randn({1, 2, 3}, 1.0, rng);
    auto prompt = make_soft_prompt(2, 3, 0.02, rng);
    auto meta = make_meta_prompt(1, 3, 0.02, rng);
    const auto out = build_prompt_input(input, {1, 1}, &prompt, &meta, 64, PromptOrder::PromptFirst);
    ASSERT_EQ(out.embeds.shape(), (Shape{1, 5, 3}));
    const auto d = out.embeds.data();
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(d[i], prompt.embeddings.data()[i]);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(d[6 + i], meta.embeddings.data()[i]);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(d[9 + i], input.data()[i]);
}

TEST(Prompts, MaskExtendedWithTrue) {
    std::mt19937_64 rng(2);
    const Tensor input = Tensor::zeros({2, 3, 2});
    const std::vector<unsigned char> mask{1, 1, 0, 1, 0, 0};
    auto prompt = make_soft_prompt(2, 2, 0.02, rng);
    const auto out = build_prompt_input(input, mask, &prompt, nullptr, 64);
    EXPECT_EQ(out.mask, (std::vector<unsigned char>{1, 1, 1, 1, 0, 1, 1, 1, 0, 0}));
}

TEST(Prompts, NoPromptPassesThrough) {
    std::mt19937_64 rng(2);
    const Tensor input = Tensor::randn({1, 5, 3}, 1.0, rng);
    const auto out = build_prompt_input(input, std::vector<unsigned char>(5, 1), nullptr, nullptr, 64);
    EXPECT_TRUE(out.embeds.same_node(input));
    EXPECT_EQ(out.prefix_len, 0u);
}

TEST(Prompts, OverflowIsInputError) {
    std::mt19937_64 rng(2);
    auto prompt = make_soft_prompt(8, 3, 0.02, rng);
    EXPECT_THROW(build_prompt_input(Tensor::zeros({1, 10, 3}), std::vector<unsigned char>(10, 1), &prompt, nullptr, 17),
                 InputError);
}

TEST(Prompts, ZeroLengthRejected) {
    std::mt19937_64 rng(2);
    EXPECT_THROW(make_soft_prompt(0, 3, 0.02, rng), ContractViolation);
}

TEST(Partition, PromptSetIsExactlyPromptEmbeddings) {
    auto m = fully_equipped(1);
    const auto part = partition_parameters(m.parameters(), {ElementKind::Prompt});
    EXPECT_EQ(count_elements(part.tunable), 4u * m.config().d_model);
}

TEST(Partition, PlmSetIsBackbone) {
    auto m = fully_equipped(1);
    const auto part = partition_parameters(m.parameters(), {ElementKind::PLM});
    EXPECT_EQ(count_elements(part.tunable), backbone_parameter_count(m.config()));
    for (const auto& p : part.frozen) EXPECT_NE(p.kind, ElementKind::PLM);
}

TEST(Partition, EmptySetFreezesEverything) {
    auto m = fully_equipped(1);
    const auto part = partition_parameters(m.parameters(), {});
    EXPECT_TRUE(part.tunable.empty());
    EXPECT_EQ(part.frozen.size(), m.parameters().size());
}

TEST(Partition, UntaggedParameterIsContractViolation) {
    std::vector<Parameter> ps{{"loose", std::nullopt, Tensor::zeros({1})}};
    EXPECT_THROW(partition_parameters(ps, {ElementKind::PLM}), ContractViolation);
}

// Property: every one of the 32 element sets splits the census exactly.
TEST(Partition, Totality) {
    auto m = fully_equipped(1);
    const auto all = m.parameters();
    for (const auto& set : all_element_sets()) {
        const auto part = partition_parameters(all, set);
        std::set<std::string> seen;
        for (const auto& p : part.tunable) {
            EXPECT_TRUE(set.contains(*p.kind));
            EXPECT_TRUE(seen.insert(p.name).second);
        }
        for (const auto& p : part.frozen) {
            EXPECT_FALSE(set.contains(*p.kind));
            EXPECT_TRUE(seen.insert(p.name).second);
        }
        EXPECT_EQ(seen.size(), all.size()) << to_string(set);
    }
}

// Property: an optimizer step after partitioning touches only the tunable set.
TEST(Partition, GradientConfinement) {
    for (const auto& set : all_element_sets()) {
        if (set.empty()) continue;
        auto m = fully_equipped(5);
        const auto before = snapshot(m);
        auto part = set_trainable(m.parameters(), set);
        backward(m.loss(kBatch));
        OptimizerConfig oc;
        oc.learning_rate = 1e-2;
        AdamWState st;
        adamw_step(part.tunable, st, oc);
        const auto after = snapshot(m);
        for (const auto& p : m.parameters()) {
            const bool changed = before.at(p.name) != after.at(p.name);
            if (!set.contains(*p.kind)) {
                EXPECT_FALSE(changed) << p.name << " under " << to_string(set);
            }
        }
        for (const auto& p : part.frozen) EXPECT_FALSE(p.value.has_grad()) << p.name;
    }
}

TEST(Prompts, GradientFlowsToPromptEmbeddings) {
    auto m = fully_equipped(11);
    auto part = set_trainable(m.parameters(), {ElementKind::Prompt});
    ASSERT_EQ(part.tunable.size(), 1u);
    Tensor prompt = part.tunable[0].value;
    backward(m.loss(kBatch));
    const double analytic = prompt.grad()[5];
    EXPECT_NE(analytic, 0.0);

    const double h = 1e-5;
    const double x0 = prompt.data()[5];
    double plus = 0.0;
    double minus = 0.0;
    {
        NoGradGuard guard;
        prompt.data_mut()[5] = x0 + h;
        plus = m.loss(kBatch).item();
        prompt.data_mut()[5] = x0 - h;
        minus = m.loss(kBatch).item();
        prompt.data_mut()[5] = x0;
    }
    const double numeric = (plus - minus) / (2 * h);
    EXPECT_LT(primer::testing::relative_error(analytic, numeric), 1e-4);
}

TEST(Attachments, CloneIsIndependent) {
    auto m = fully_equipped(1);
    Attachments copy = m.elements().clone();
    copy.prompt->embeddings.data_mut()[0] += 1.0;
    EXPECT_NE(copy.prompt->embeddings.data()[0], m.elements().prompt->embeddings.data()[0]);
}
