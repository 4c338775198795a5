#include <gtest/gtest.h>

#include <cmath>

#include "primer/optim.hpp"

using namespace primer;

namespace {

Parameter scalar_param(const std::string& name, double value, double grad) {
    Tensor t({1}, {value}, true);
    t.zero_grad();
    t.grad_mut()[0] = grad;
    return {name, ElementKind::PLM, t};
}

}  // namespace

TEST(Sgd, ZeroLearningRateLeavesParameters) {
    std::vector<Parameter> ps{scalar_param("w", 1.25, 3.0)};
    sgd_step(ps, 0.0);
    EXPECT_EQ(ps[0].value.item(), 1.25);
}

TEST(Sgd, OneStepArithmetic) {
    std::vector<Parameter> ps{scalar_param("w", 1.0, 0.5)};
    sgd_step(ps, 0.025);
    EXPECT_DOUBLE_EQ(ps[0].value.item(), 0.9875);
    EXPECT_EQ(ps[0].value.grad()[0], 0.5) << "gradients persist until cleared";
}

TEST(Sgd, ZeroGradientLeavesParameters) {
    std::vector<Parameter> ps{scalar_param("w", -4.0, 0.0)};
    sgd_step(ps, 0.3);
    EXPECT_EQ(ps[0].value.item(), -4.0);
}

TEST(Sgd, MissingGradientIsContractViolation) {
    std::vector<Parameter> ps{{"w", ElementKind::PLM, Tensor({2}, {1.0, 2.0}, true)}};
    EXPECT_THROW(sgd_step(ps, 0.1), ContractViolation);
}

TEST(Sgd, PerKindRatesSkipUnlistedKinds) {
    auto a = scalar_param("a", 1.0, 1.0);
    auto b = scalar_param("b", 1.0, 1.0);
    b.kind = ElementKind::Prompt;
    std::vector<Parameter> ps{a, b};
    sgd_step(ps, std::map<ElementKind, double>{{ElementKind::Prompt, 0.5}});
    EXPECT_EQ(ps[0].value.item(), 1.0);
    EXPECT_EQ(ps[1].value.item(), 0.5);
}

TEST(AdamW, BiasReceivesNoDecay) {
    OptimizerConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.weight_decay = 0.5;
    std::vector<Parameter> ps{scalar_param("encoder.layer0.ffn.fc1.bias", 2.0, 0.0),
                              scalar_param("encoder.layer0.ln_attn.weight", 2.0, 0.0)};
    AdamWState state;
    adamw_step(ps, state, cfg);
    EXPECT_EQ(ps[0].value.item(), 2.0);
    EXPECT_EQ(ps[1].value.item(), 2.0);
}

TEST(AdamW, ZeroGradientShrinksByDecayFactor) {
    OptimizerConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.weight_decay = 0.01;
    std::vector<Parameter> ps{scalar_param("encoder.layer0.ffn.fc1.weight", -3.0, 0.0)};
    AdamWState state;
    adamw_step(ps, state, cfg);
    EXPECT_DOUBLE_EQ(ps[0].value.item(), -3.0 * (1.0 - 0.05 * 0.01));
    EXPECT_LT(std::abs(ps[0].value.item()), 3.0);
}

// Scalar reference implementation written independently of the library.
TEST(AdamW, FirstStepsMatchScalarOracle) {
    OptimizerConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.weight_decay = 0.01;
    const double grads[] = {0.7, -0.2, 1.5};
    double w = 0.4;
    double m = 0.0;
    double v = 0.0;
    std::vector<Parameter> ps{scalar_param("w", 0.4, 0.0)};
    AdamWState state;
    for (int t = 1; t <= 3; ++t) {
        const double g = grads[t - 1];
        ps[0].value.grad_mut()[0] = g;
        adamw_step(ps, state, cfg);

        w -= 0.01 * 0.01 * w;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1.0 - std::pow(0.9, t));
        const double vh = v / (1.0 - std::pow(0.999, t));
        w -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
        EXPECT_NEAR(ps[0].value.item(), w, 1e-15) << "step " << t;
    }
    EXPECT_EQ(state.moments.at("w").step, 3);
}

TEST(AdamW, StateShapeMismatchIsContractViolation) {
    OptimizerConfig cfg;
    std::vector<Parameter> ps{scalar_param("w", 1.0, 1.0)};
    AdamWState state;
    state.moments["w"] = AdamMoments{{0.0, 0.0}, {0.0, 0.0}, 1};
    EXPECT_THROW(adamw_step(ps, state, cfg), ContractViolation);
}

TEST(AdamW, ConfigValidation) {
    OptimizerConfig cfg;
    cfg.learning_rate = 0.0;
    EXPECT_THROW(cfg.validate(), ContractViolation);
    cfg.learning_rate = 1e-3;
    cfg.weight_decay = 1.0;
    EXPECT_THROW(cfg.validate(), ContractViolation);
    cfg.weight_decay = 0.01;
    cfg.adam_beta2 = 1.0;
    EXPECT_THROW(cfg.validate(), ContractViolation);
}

TEST(AdamW, PerKindLearningRate) {
    OptimizerConfig cfg;
    cfg.learning_rate = 1.0;
    cfg.weight_decay = 0.0;
    cfg.lr_by_kind[ElementKind::Prompt] = 0.001;
    auto p = scalar_param("prompt.embed", 0.0, 1.0);
    p.kind = ElementKind::Prompt;
    std::vector<Parameter> ps{p};
    AdamWState state;
    adamw_step(ps, state, cfg);
    // First Adam step moves by lr * g/|g| (up to epsilon).
    EXPECT_NEAR(ps[0].value.item(), -0.001, 1e-10);
}
