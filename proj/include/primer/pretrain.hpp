#pragma once

// Generic denoising pretraining of the backbone on random character strings.
//
// The framework assumes a pretrained language model underneath every combination. A tiny
// randomly initialized backbone has near-zero output embeddings, which leaves prompts and
// adapters almost no room to move the output distribution, so every run starts from a
// backbone that has first learned to reconstruct corrupted text. The corpus never uses task
// prefixes or task rules; it only teaches the model to read and write characters.

#include <algorithm>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "primer/error.hpp"
#include "primer/model.hpp"
#include "primer/optim.hpp"

namespace primer {

struct PretrainConfig {
    std::size_t steps = 1500;
    std::size_t batch_size = 16;
    double lr = 3e-3;
    double weight_decay = 0.01;
    std::size_t min_len = 3;
    std::size_t max_len = 18;

    void validate() const {
        detail::require(batch_size >= 1, "PretrainConfig: batch_size must be positive");
        detail::require(lr > 0.0, "PretrainConfig: lr must be positive");
        detail::require(min_len >= 1 && min_len <= max_len, "PretrainConfig: need 1 <= min_len <= max_len");
    }
};

/// One denoising pair: the target is a random string, the input is that string left intact,
/// with a short span replaced by ':', or with one character substituted (one third each).
inline Example sample_denoising_example(const PretrainConfig& cfg, std::mt19937_64& rng) {
    static constexpr std::string_view kChars = " abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ012345";
    std::uniform_int_distribution<std::size_t> len_dist(cfg.min_len, cfg.max_len);
    std::uniform_int_distribution<std::size_t> char_dist(0, kChars.size() - 1);
    const std::size_t n = len_dist(rng);
    std::string target;
    for (std::size_t i = 0; i < n; ++i) target.push_back(kChars[char_dist(rng)]);

    std::string input = target;
    std::uniform_int_distribution<std::size_t> pos_dist(0, n - 1);
    switch (std::uniform_int_distribution<int>(0, 2)(rng)) {
        case 1: {
            const std::size_t p = pos_dist(rng);
            const std::size_t span = std::min(n - p, std::uniform_int_distribution<std::size_t>(1, 3)(rng));
            input.replace(p, span, ":");
            break;
        }
        case 2:
            input[pos_dist(rng)] = kChars[char_dist(rng)];
            break;
        default:
            break;
    }
    return {input, target};
}

/// Trains every backbone parameter on the denoising corpus. Returns the per-step losses.
inline std::vector<double> pretrain_backbone(Seq2SeqModel& model, const PretrainConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    detail::require_input(cfg.max_len + 1 < model.config().max_seq_len,
                          "pretrain: max_len " + std::to_string(cfg.max_len) + " does not fit max_seq_len");
    auto part = set_trainable(model.parameters(), ElementSet{ElementKind::PLM});
    OptimizerConfig oc;
    oc.learning_rate = cfg.lr;
    oc.weight_decay = cfg.weight_decay;
    AdamWState state;
    std::vector<double> losses;
    losses.reserve(cfg.steps);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        std::vector<Example> batch;
        for (std::size_t i = 0; i < cfg.batch_size; ++i) batch.push_back(sample_denoising_example(cfg, rng));
        zero_grads(part.tunable);
        const Tensor l = model.loss(batch);
        backward(l);
        adamw_step(part.tunable, state, oc);
        losses.push_back(l.item());
    }
    for (auto& p : part.tunable) p.value.clear_grad();
    return losses;
}

}  // namespace primer
