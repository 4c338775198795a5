#pragma once

// Tunable elements that attach to the backbone: AdapterBias adapters (one per
// transformer layer, after the feed-forward sublayer), bottleneck meta-adapters
// wrapped around each regular adapter, and encoder-side soft prompts.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "primer/error.hpp"
#include "primer/parameter.hpp"
#include "primer/tensor.hpp"

namespace primer {

struct ElementConfig {
    std::size_t prompt_len = 16;
    /// 0 means "same as prompt_len".
    std::size_t meta_prompt_len = 0;
    std::size_t bottleneck_width = 8;
    double init_std = 0.02;

    std::size_t effective_meta_prompt_len() const { return meta_prompt_len == 0 ? prompt_len : meta_prompt_len; }
};

/// Token-dependent shift h + (w . h) v.
struct AdapterBiasElement {
    Tensor v;              // [D]
    Tensor alpha_weights;  // [D]
};

/// h + up(gelu(down(h))).
struct BottleneckAdapterElement {
    Tensor down_weight;  // [D, r]
    Tensor down_bias;    // [r]
    Tensor up_weight;    // [r, D]
    Tensor up_bias;      // [D]
};

struct MetaAdapterPair {
    BottleneckAdapterElement pre;
    BottleneckAdapterElement post;
};

struct SoftPromptElement {
    Tensor embeddings;  // [L, D]
    std::size_t length() const { return embeddings.shape()[0]; }
};

struct MetaPromptElement {
    Tensor embeddings;  // [L_meta, D]
    std::size_t length() const { return embeddings.shape()[0]; }
};

inline AdapterBiasElement make_adapter_bias(std::size_t d_model, double init_std, std::mt19937_64& rng) {
    return {Tensor::zeros({d_model}, true), Tensor::randn({d_model}, init_std, rng, true)};
}

inline BottleneckAdapterElement make_bottleneck_adapter(std::size_t d_model, std::size_t width, std::mt19937_64& rng) {
    detail::require(width > 0, "bottleneck adapter width must be positive");
    return {Tensor::randn({d_model, width}, 1.0 / std::sqrt(static_cast<double>(d_model)), rng, true),
            Tensor::zeros({width}, true), Tensor::zeros({width, d_model}, true), Tensor::zeros({d_model}, true)};
}

inline SoftPromptElement make_soft_prompt(std::size_t length, std::size_t d_model, double init_std,
                                          std::mt19937_64& rng) {
    detail::require(length >= 1, "soft prompt length must be at least 1");
    return {Tensor::randn({length, d_model}, init_std, rng, true)};
}

inline MetaPromptElement make_meta_prompt(std::size_t length, std::size_t d_model, double init_std,
                                          std::mt19937_64& rng) {
    detail::require(length >= 1, "meta prompt length must be at least 1");
    return {Tensor::randn({length, d_model}, init_std, rng, true)};
}

/// output[b,t,:] = hidden[b,t,:] + (alpha_weights . hidden[b,t,:]) * v
inline Tensor adapter_bias_apply(const Tensor& hidden, const AdapterBiasElement& element) {
    const std::size_t D = element.v.size();
    detail::require_input(hidden.rank() >= 1 && hidden.shape().back() == D && element.alpha_weights.size() == D,
                          "adapter_bias_apply: hidden " + shape_str(hidden.shape()) + " incompatible with d=" +
                              std::to_string(D));
    const Tensor alpha = matmul(hidden, reshape(element.alpha_weights, {D, 1}));
    return add(hidden, matmul(alpha, reshape(element.v, {1, D})));
}

inline Tensor bottleneck_apply(const Tensor& hidden, const BottleneckAdapterElement& element) {
    detail::require_input(hidden.rank() >= 1 && hidden.shape().back() == element.down_weight.shape()[0],
                          "bottleneck_apply: hidden " + shape_str(hidden.shape()) + " incompatible with adapter");
    const Tensor inner = gelu(linear(hidden, element.down_weight, element.down_bias));
    return add(hidden, linear(inner, element.up_weight, element.up_bias));
}

/// Left-to-right placement of the two prompt kinds ahead of the input.
enum class PromptOrder { MetaFirst, PromptFirst };

/// Encoder input with prompts prepended, [meta | prompt | input] by default, mask all-true over prompt slots.
struct PromptedInput {
    Tensor embeds;                     // [B, S, D]
    std::vector<unsigned char> mask;   // [B*S]
    std::size_t prefix_len = 0;
};

inline PromptedInput build_prompt_input(const Tensor& input_embeds, const std::vector<unsigned char>& input_mask,
                                        const SoftPromptElement* prompt, const MetaPromptElement* meta,
                                        std::size_t max_seq_len, PromptOrder order = PromptOrder::MetaFirst) {
    detail::require(input_embeds.rank() == 3, "build_prompt_input: embeddings must be [B,T,D]");
    const std::size_t B = input_embeds.shape()[0];
    const std::size_t T = input_embeds.shape()[1];
    const std::size_t D = input_embeds.shape()[2];
    detail::require(input_mask.size() == B * T, "build_prompt_input: mask size mismatch");
    const std::size_t L = prompt ? prompt->length() : 0;
    const std::size_t Lm = meta ? meta->length() : 0;
    detail::require_input(Lm + L + T <= max_seq_len,
                          "build_prompt_input: sequence of " + std::to_string(Lm + L + T) +
                              " positions exceeds max_seq_len " + std::to_string(max_seq_len));
    if (L + Lm == 0) {
        return {input_embeds, input_mask, 0};
    }
    std::vector<Tensor> parts;
    auto push_meta = [&] {
        if (!meta) return;
        detail::require_input(meta->embeddings.shape()[1] == D, "build_prompt_input: meta prompt width mismatch");
        parts.push_back(broadcast_to(meta->embeddings, {B, Lm, D}));
    };
    auto push_prompt = [&] {
        if (!prompt) return;
        detail::require_input(prompt->embeddings.shape()[1] == D, "build_prompt_input: prompt width mismatch");
        parts.push_back(broadcast_to(prompt->embeddings, {B, L, D}));
    };
    if (order == PromptOrder::MetaFirst) {
        push_meta();
        push_prompt();
    } else {
        push_prompt();
        push_meta();
    }
    parts.push_back(input_embeds);
    const std::size_t S = Lm + L + T;
    std::vector<unsigned char> mask(B * S, 1);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t t = 0; t < T; ++t) mask[b * S + Lm + L + t] = input_mask[b * T + t];
    }
    return {concat(parts, 1), std::move(mask), Lm + L};
}

/// Everything attached to the backbone. Empty vectors/optionals mean "not attached".
struct Attachments {
    std::vector<AdapterBiasElement> adapters;       // one per insertion point
    std::vector<MetaAdapterPair> meta_adapters;     // empty or one per insertion point
    std::optional<SoftPromptElement> prompt;
    std::optional<MetaPromptElement> meta_prompt;
    PromptOrder prompt_order = PromptOrder::MetaFirst;

    bool empty() const { return adapters.empty() && meta_adapters.empty() && !prompt && !meta_prompt; }

    /// Applies meta-adapter -> adapter -> meta-adapter at insertion point `point`.
    Tensor apply_adapters(const Tensor& hidden, std::size_t point) const {
        Tensor h = hidden;
        if (!meta_adapters.empty()) h = bottleneck_apply(h, meta_adapters.at(point).pre);
        if (!adapters.empty()) h = adapter_bias_apply(h, adapters.at(point));
        if (!meta_adapters.empty()) h = bottleneck_apply(h, meta_adapters.at(point).post);
        return h;
    }

    template <class F>
    void for_each_tensor(F&& fn) {
        auto bottleneck = [&](const std::string& prefix, BottleneckAdapterElement& e) {
            fn(prefix + ".down.weight", ElementKind::MetaAdapter, e.down_weight);
            fn(prefix + ".down.bias", ElementKind::MetaAdapter, e.down_bias);
            fn(prefix + ".up.weight", ElementKind::MetaAdapter, e.up_weight);
            fn(prefix + ".up.bias", ElementKind::MetaAdapter, e.up_bias);
        };
        if (meta_prompt) fn("meta_prompt.embed", ElementKind::MetaPrompt, meta_prompt->embeddings);
        if (prompt) fn("prompt.embed", ElementKind::Prompt, prompt->embeddings);
        for (std::size_t i = 0; i < adapters.size(); ++i) {
            const std::string prefix = "adapter.layer" + std::to_string(i);
            fn(prefix + ".v", ElementKind::Adapter, adapters[i].v);
            fn(prefix + ".alpha.weight", ElementKind::Adapter, adapters[i].alpha_weights);
        }
        for (std::size_t i = 0; i < meta_adapters.size(); ++i) {
            const std::string prefix = "meta_adapter.layer" + std::to_string(i);
            bottleneck(prefix + ".pre", meta_adapters[i].pre);
            bottleneck(prefix + ".post", meta_adapters[i].post);
        }
    }

    std::vector<Parameter> parameters() const {
        std::vector<Parameter> out;
        const_cast<Attachments*>(this)->for_each_tensor(
            [&](const std::string& name, ElementKind kind, Tensor& t) { out.push_back({name, kind, t}); });
        return out;
    }

    Attachments clone() const {
        Attachments out = *this;
        out.for_each_tensor([](const std::string&, ElementKind, Tensor& t) { t = t.clone(); });
        return out;
    }
};

inline void attach_adapters(Attachments& att, std::size_t points, std::size_t d_model, double init_std,
                            std::mt19937_64& rng) {
    att.adapters.clear();
    for (std::size_t i = 0; i < points; ++i) att.adapters.push_back(make_adapter_bias(d_model, init_std, rng));
}

/// Places a bottleneck meta-adapter before and after every regular adapter.
inline void insert_meta_adapters(Attachments& att, std::size_t d_model, std::size_t width, std::mt19937_64& rng) {
    detail::require(!att.adapters.empty(), "insert_meta_adapters: no regular adapters attached");
    att.meta_adapters.clear();
    for (std::size_t i = 0; i < att.adapters.size(); ++i) {
        MetaAdapterPair pair;
        pair.pre = make_bottleneck_adapter(d_model, width, rng);
        pair.post = make_bottleneck_adapter(d_model, width, rng);
        att.meta_adapters.push_back(std::move(pair));
    }
}

inline void attach_prompt(Attachments& att, std::size_t length, std::size_t d_model, double init_std,
                          std::mt19937_64& rng) {
    att.prompt = make_soft_prompt(length, d_model, init_std, rng);
}

inline void attach_meta_prompt(Attachments& att, std::size_t length, std::size_t d_model, double init_std,
                               std::mt19937_64& rng) {
    att.meta_prompt = make_meta_prompt(length, d_model, init_std, rng);
}

}  // namespace primer
