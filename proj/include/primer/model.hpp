#pragma once

// Tiny pre-LN encoder-decoder transformer with learned absolute positions and
// tied input/output embeddings, plus the hooks tunable elements attach to.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "primer/elements.hpp"
#include "primer/error.hpp"
#include "primer/parameter.hpp"
#include "primer/tensor.hpp"
#include "primer/tokenizer.hpp"

namespace primer {

struct ModelConfig {
    std::size_t vocab_size = CharTokenizer::kVocabSize;
    std::size_t d_model = 32;
    std::size_t n_heads = 2;
    std::size_t n_encoder_layers = 2;
    std::size_t n_decoder_layers = 2;
    std::size_t d_ff = 64;
    std::size_t max_seq_len = 64;

    void validate() const {
        detail::require(vocab_size >= static_cast<std::size_t>(CharTokenizer::kVocabSize),
                        "ModelConfig: vocab_size must cover the character vocabulary (64)");
        detail::require(d_model > 0 && n_heads > 0 && d_ff > 0 && max_seq_len > 1, "ModelConfig: sizes must be positive");
        detail::require(n_encoder_layers > 0 && n_decoder_layers > 0, "ModelConfig: layer counts must be positive");
        detail::require(d_model % n_heads == 0, "ModelConfig: d_model must be divisible by n_heads");
    }

    std::size_t insertion_points() const { return n_encoder_layers + n_decoder_layers; }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Closed-form backbone parameter count.
inline std::size_t backbone_parameter_count(const ModelConfig& c) {
    const std::size_t D = c.d_model;
    const std::size_t F = c.d_ff;
    const std::size_t ln = 2 * D;
    const std::size_t attn = 4 * (D * D + D);
    const std::size_t ffn = D * F + F + F * D + D;
    return c.vocab_size * D + 2 * c.max_seq_len * D + c.n_encoder_layers * (2 * ln + attn + ffn) + ln +
           c.n_decoder_layers * (3 * ln + 2 * attn + ffn) + ln;
}

/// Right-padded token ids with a validity mask, both [batch, seq] row-major.
struct TokenBatch {
    std::size_t batch = 0;
    std::size_t seq = 0;
    std::vector<int> ids;
    std::vector<unsigned char> mask;

    static TokenBatch from_sequences(const std::vector<std::vector<int>>& seqs) {
        TokenBatch tb;
        tb.batch = seqs.size();
        for (const auto& s : seqs) tb.seq = std::max(tb.seq, s.size());
        tb.ids.assign(tb.batch * tb.seq, CharTokenizer::kPad);
        tb.mask.assign(tb.batch * tb.seq, 0);
        for (std::size_t b = 0; b < seqs.size(); ++b) {
            for (std::size_t t = 0; t < seqs[b].size(); ++t) {
                tb.ids[b * tb.seq + t] = seqs[b][t];
                tb.mask[b * tb.seq + t] = 1;
            }
        }
        return tb;
    }

    void validate(std::size_t vocab_size) const {
        detail::require(ids.size() == batch * seq && mask.size() == ids.size(), "TokenBatch: shape mismatch");
        for (int id : ids) {
            detail::require(id >= 0 && static_cast<std::size_t>(id) < vocab_size,
                            "TokenBatch: token id " + std::to_string(id) + " outside vocabulary");
        }
    }
};

struct Example {
    std::string input;
    std::string output;
    friend bool operator==(const Example&, const Example&) = default;
};

/// Encoder source (text + eos), teacher-forced decoder input (bos + text) and target (text + eos).
struct EncodedBatch {
    TokenBatch source;
    TokenBatch decoder_input;
    TokenBatch target;
};

inline EncodedBatch encode_examples(std::span<const Example> examples) {
    std::vector<std::vector<int>> src;
    std::vector<std::vector<int>> din;
    std::vector<std::vector<int>> tgt;
    for (const auto& ex : examples) {
        auto s = CharTokenizer::encode(ex.input);
        s.push_back(CharTokenizer::kEos);
        src.push_back(std::move(s));
        auto o = CharTokenizer::encode(ex.output);
        std::vector<int> d{CharTokenizer::kBos};
        d.insert(d.end(), o.begin(), o.end());
        o.push_back(CharTokenizer::kEos);
        din.push_back(std::move(d));
        tgt.push_back(std::move(o));
    }
    return {TokenBatch::from_sequences(src), TokenBatch::from_sequences(din), TokenBatch::from_sequences(tgt)};
}

struct LinearParams {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]
};

struct LayerNormParams {
    Tensor weight;
    Tensor bias;
};

struct AttentionParams {
    LinearParams q, k, v, o;
};

struct EncoderLayerParams {
    LayerNormParams ln_attn;
    AttentionParams attn;
    LayerNormParams ln_ffn;
    LinearParams fc1, fc2;
};

struct DecoderLayerParams {
    LayerNormParams ln_self;
    AttentionParams self_attn;
    LayerNormParams ln_cross;
    AttentionParams cross_attn;
    LayerNormParams ln_ffn;
    LinearParams fc1, fc2;
};

/// The backbone ("PLM") parameters.
class Transformer {
public:
    Transformer() = default;

    Transformer(const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
        cfg.validate();
        const std::size_t D = cfg.d_model;
        const std::size_t F = cfg.d_ff;
        constexpr double embed_std = 0.02;
        auto lin = [&](std::size_t in, std::size_t out) {
            return LinearParams{Tensor::randn({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng, true),
                                Tensor::zeros({out}, true)};
        };
        auto ln = [&] { return LayerNormParams{Tensor::full({D}, 1.0, true), Tensor::zeros({D}, true)}; };
        auto attn = [&] { return AttentionParams{lin(D, D), lin(D, D), lin(D, D), lin(D, D)}; };
        token_embed_ = Tensor::randn({cfg.vocab_size, D}, embed_std, rng, true);
        encoder_pos_ = Tensor::randn({cfg.max_seq_len, D}, embed_std, rng, true);
        decoder_pos_ = Tensor::randn({cfg.max_seq_len, D}, embed_std, rng, true);
        for (std::size_t i = 0; i < cfg.n_encoder_layers; ++i) {
            encoder_.push_back({ln(), attn(), ln(), lin(D, F), lin(F, D)});
        }
        encoder_final_ = ln();
        for (std::size_t i = 0; i < cfg.n_decoder_layers; ++i) {
            decoder_.push_back({ln(), attn(), ln(), attn(), ln(), lin(D, F), lin(F, D)});
        }
        decoder_final_ = ln();
    }

    const ModelConfig& config() const { return cfg_; }

    template <class F>
    void for_each_tensor(F&& fn) {
        auto linear = [&](const std::string& p, LinearParams& l) {
            fn(p + ".weight", l.weight);
            fn(p + ".bias", l.bias);
        };
        auto norm = [&](const std::string& p, LayerNormParams& l) {
            fn(p + ".weight", l.weight);
            fn(p + ".bias", l.bias);
        };
        auto attention = [&](const std::string& p, AttentionParams& a) {
            linear(p + ".q", a.q);
            linear(p + ".k", a.k);
            linear(p + ".v", a.v);
            linear(p + ".o", a.o);
        };
        fn("embed.tokens.weight", token_embed_);
        fn("encoder.pos.weight", encoder_pos_);
        fn("decoder.pos.weight", decoder_pos_);
        for (std::size_t i = 0; i < encoder_.size(); ++i) {
            const std::string p = "encoder.layer" + std::to_string(i);
            norm(p + ".ln_attn", encoder_[i].ln_attn);
            attention(p + ".attn", encoder_[i].attn);
            norm(p + ".ln_ffn", encoder_[i].ln_ffn);
            linear(p + ".ffn.fc1", encoder_[i].fc1);
            linear(p + ".ffn.fc2", encoder_[i].fc2);
        }
        norm("encoder.ln_final", encoder_final_);
        for (std::size_t i = 0; i < decoder_.size(); ++i) {
            const std::string p = "decoder.layer" + std::to_string(i);
            norm(p + ".ln_self", decoder_[i].ln_self);
            attention(p + ".self_attn", decoder_[i].self_attn);
            norm(p + ".ln_cross", decoder_[i].ln_cross);
            attention(p + ".cross_attn", decoder_[i].cross_attn);
            norm(p + ".ln_ffn", decoder_[i].ln_ffn);
            linear(p + ".ffn.fc1", decoder_[i].fc1);
            linear(p + ".ffn.fc2", decoder_[i].fc2);
        }
        norm("decoder.ln_final", decoder_final_);
    }

    std::vector<Parameter> parameters() const {
        std::vector<Parameter> out;
        const_cast<Transformer*>(this)->for_each_tensor(
            [&](const std::string& name, Tensor& t) { out.push_back({name, ElementKind::PLM, t}); });
        return out;
    }

    Transformer clone() const {
        Transformer out = *this;
        out.for_each_tensor([](const std::string&, Tensor& t) { t = t.clone(); });
        return out;
    }

    struct Encoded {
        Tensor hidden;                    // [B, S, D]
        std::vector<unsigned char> mask;  // [B*S]
    };

    Encoded encode(const TokenBatch& src, const Attachments& att) const {
        src.validate(cfg_.vocab_size);
        const std::size_t B = src.batch;
        Tensor x = embedding(token_embed_, src.ids, {B, src.seq});
        auto prompted = build_prompt_input(x, src.mask, att.prompt ? &*att.prompt : nullptr,
                                           att.meta_prompt ? &*att.meta_prompt : nullptr, cfg_.max_seq_len,
                                           att.prompt_order);
        const std::size_t S = prompted.embeds.shape()[1];
        x = add(prompted.embeds, positions(encoder_pos_, S));
        const Tensor mask = attention_mask(prompted.mask, B, S, S, false);
        for (std::size_t i = 0; i < encoder_.size(); ++i) {
            const auto& layer = encoder_[i];
            Tensor h = layer_norm(x, layer.ln_attn.weight, layer.ln_attn.bias);
            x = add(x, attention(layer.attn, h, h, mask));
            h = layer_norm(x, layer.ln_ffn.weight, layer.ln_ffn.bias);
            Tensor f = linear(gelu(linear(h, layer.fc1.weight, layer.fc1.bias)), layer.fc2.weight, layer.fc2.bias);
            x = add(x, att.apply_adapters(f, i));
        }
        return {layer_norm(x, encoder_final_.weight, encoder_final_.bias), std::move(prompted.mask)};
    }

    /// Decoder logits [B, T, vocab] for teacher-forced decoder input.
    Tensor decode(const TokenBatch& dec_in, const Encoded& enc, const Attachments& att) const {
        dec_in.validate(cfg_.vocab_size);
        const std::size_t B = dec_in.batch;
        const std::size_t T = dec_in.seq;
        detail::require_input(T <= cfg_.max_seq_len, "decode: target length " + std::to_string(T) +
                                                          " exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
        detail::require(enc.hidden.shape()[0] == B, "decode: batch size differs from encoder batch");
        const std::size_t S = enc.hidden.shape()[1];
        Tensor y = add(embedding(token_embed_, dec_in.ids, {B, T}), positions(decoder_pos_, T));
        const Tensor self_mask = attention_mask(dec_in.mask, B, T, T, true);
        const Tensor cross_mask = attention_mask(enc.mask, B, T, S, false);
        for (std::size_t i = 0; i < decoder_.size(); ++i) {
            const auto& layer = decoder_[i];
            Tensor h = layer_norm(y, layer.ln_self.weight, layer.ln_self.bias);
            y = add(y, attention(layer.self_attn, h, h, self_mask));
            h = layer_norm(y, layer.ln_cross.weight, layer.ln_cross.bias);
            y = add(y, attention(layer.cross_attn, h, enc.hidden, cross_mask));
            h = layer_norm(y, layer.ln_ffn.weight, layer.ln_ffn.bias);
            Tensor f = linear(gelu(linear(h, layer.fc1.weight, layer.fc1.bias)), layer.fc2.weight, layer.fc2.bias);
            y = add(y, att.apply_adapters(f, encoder_.size() + i));
        }
        y = layer_norm(y, decoder_final_.weight, decoder_final_.bias);
        return matmul(y, transpose(token_embed_));
    }

private:
    Tensor positions(const Tensor& table, std::size_t len) const {
        detail::require_input(len <= cfg_.max_seq_len, "sequence of " + std::to_string(len) +
                                                           " positions exceeds max_seq_len " +
                                                           std::to_string(cfg_.max_seq_len));
        std::vector<int> idx(len);
        for (std::size_t i = 0; i < len; ++i) idx[i] = static_cast<int>(i);
        return embedding(table, idx, {len});
    }

    /// Additive mask [B*H, Tq, Tk]: 0 where query may attend, -1e9 elsewhere.
    Tensor attention_mask(const std::vector<unsigned char>& key_mask, std::size_t B, std::size_t Tq, std::size_t Tk,
                          bool causal) const {
        const std::size_t H = cfg_.n_heads;
        std::vector<double> m(B * H * Tq * Tk, 0.0);
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t h = 0; h < H; ++h) {
                double* base = m.data() + ((b * H + h) * Tq) * Tk;
                for (std::size_t q = 0; q < Tq; ++q) {
                    for (std::size_t k = 0; k < Tk; ++k) {
                        if (!key_mask[b * Tk + k] || (causal && k > q)) base[q * Tk + k] = -1e9;
                    }
                }
            }
        }
        return Tensor({B * H, Tq, Tk}, std::move(m));
    }

    Tensor split_heads(const Tensor& x) const {
        const std::size_t B = x.shape()[0];
        const std::size_t T = x.shape()[1];
        const std::size_t H = cfg_.n_heads;
        const std::size_t dh = cfg_.d_model / H;
        return reshape(permute(reshape(x, {B, T, H, dh}), {0, 2, 1, 3}), {B * H, T, dh});
    }

    Tensor attention(const AttentionParams& p, const Tensor& query_in, const Tensor& kv_in, const Tensor& mask) const {
        const std::size_t B = query_in.shape()[0];
        const std::size_t T = query_in.shape()[1];
        const std::size_t H = cfg_.n_heads;
        const std::size_t dh = cfg_.d_model / H;
        const Tensor q = split_heads(linear(query_in, p.q.weight, p.q.bias));
        const Tensor k = split_heads(linear(kv_in, p.k.weight, p.k.bias));
        const Tensor v = split_heads(linear(kv_in, p.v.weight, p.v.bias));
        Tensor scores = add(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dh))), mask);
        Tensor ctx = matmul(softmax(scores), v);  // [B*H, T, dh]
        ctx = reshape(permute(reshape(ctx, {B, H, T, dh}), {0, 2, 1, 3}), {B, T, cfg_.d_model});
        return linear(ctx, p.o.weight, p.o.bias);
    }

    ModelConfig cfg_;
    Tensor token_embed_;
    Tensor encoder_pos_;
    Tensor decoder_pos_;
    std::vector<EncoderLayerParams> encoder_;
    LayerNormParams encoder_final_;
    std::vector<DecoderLayerParams> decoder_;
    LayerNormParams decoder_final_;
};

/// Logits [batch, target_seq, vocab].
inline Tensor forward(const Transformer& model, const TokenBatch& source, const TokenBatch& decoder_input,
                      const Attachments& attachments) {
    return model.decode(decoder_input, model.encode(source, attachments), attachments);
}

/// Mean token NLL over the non-padding target positions.
inline Tensor loss(const Tensor& logits, const TokenBatch& target) {
    detail::require(logits.rank() == 3 && logits.shape()[0] == target.batch && logits.shape()[1] == target.seq,
                    "loss: logits " + shape_str(logits.shape()) + " do not match target batch");
    return cross_entropy(logits, target.ids, target.mask);
}

/// Argmax decoding from bos until eos or max_len tokens. Returned sequences exclude bos/eos.
inline std::vector<std::vector<int>> greedy_decode(const Transformer& model, const TokenBatch& input,
                                                   const Attachments& attachments, std::size_t max_len) {
    NoGradGuard no_grad;
    std::vector<std::vector<int>> out(input.batch);
    if (max_len == 0 || input.batch == 0) return out;
    max_len = std::min(max_len, model.config().max_seq_len - 1);
    const auto enc = model.encode(input, attachments);
    const std::size_t B = input.batch;
    const std::size_t V = model.config().vocab_size;
    std::vector<std::vector<int>> seqs(B, std::vector<int>{CharTokenizer::kBos});
    std::vector<bool> done(B, false);
    for (std::size_t step = 0; step < max_len; ++step) {
        const auto dec_in = TokenBatch::from_sequences(seqs);
        const Tensor logits = model.decode(dec_in, enc, attachments);
        const auto d = logits.data();
        const std::size_t T = dec_in.seq;
        bool all_done = true;
        for (std::size_t b = 0; b < B; ++b) {
            int next = CharTokenizer::kEos;
            if (!done[b]) {
                const double* row = d.data() + (b * T + (T - 1)) * V;
                next = static_cast<int>(std::max_element(row, row + V) - row);
                if (next == CharTokenizer::kEos) {
                    done[b] = true;
                } else {
                    out[b].push_back(next);
                }
            }
            seqs[b].push_back(next);
            all_done = all_done && done[b];
        }
        if (all_done) break;
    }
    return out;
}

/// Backbone plus attachments: the unit that training stages clone, partition and update.
class Seq2SeqModel {
public:
    using Batch = std::vector<Example>;

    Seq2SeqModel() = default;
    Seq2SeqModel(const ModelConfig& cfg, std::uint64_t seed) : rng_(seed) { backbone_ = Transformer(cfg, rng_); }
    Seq2SeqModel(Transformer backbone, Attachments elements)
        : backbone_(std::move(backbone)), elements_(std::move(elements)) {}

    const ModelConfig& config() const { return backbone_.config(); }
    const Transformer& backbone() const { return backbone_; }
    const Attachments& elements() const { return elements_; }
    Attachments& elements() { return elements_; }
    std::mt19937_64& rng() { return rng_; }

    std::vector<Parameter> parameters() const {
        auto out = backbone_.parameters();
        auto el = elements_.parameters();
        out.insert(out.end(), el.begin(), el.end());
        return out;
    }

    Seq2SeqModel clone() const {
        Seq2SeqModel out(backbone_.clone(), elements_.clone());
        out.rng_ = rng_;
        return out;
    }

    Tensor logits(const EncodedBatch& batch) const {
        return forward(backbone_, batch.source, batch.decoder_input, elements_);
    }

    Tensor loss(const Batch& examples) const {
        const auto enc = encode_examples(examples);
        return primer::loss(logits(enc), enc.target);
    }

    std::vector<std::string> generate(const std::vector<std::string>& inputs, std::size_t max_len) const {
        std::vector<std::vector<int>> src;
        for (const auto& s : inputs) {
            auto ids = CharTokenizer::encode(s);
            ids.push_back(CharTokenizer::kEos);
            src.push_back(std::move(ids));
        }
        const auto decoded = greedy_decode(backbone_, TokenBatch::from_sequences(src), elements_, max_len);
        std::vector<std::string> out;
        out.reserve(decoded.size());
        for (const auto& d : decoded) out.push_back(CharTokenizer::decode(d));
        return out;
    }

    // Element attachment uses the model's own RNG stream so construction order is reproducible.
    void attach_adapters(double init_std) {
        primer::attach_adapters(elements_, config().insertion_points(), config().d_model, init_std, rng_);
    }
    void insert_meta_adapters(std::size_t width) {
        primer::insert_meta_adapters(elements_, config().d_model, width, rng_);
    }
    void attach_prompt(std::size_t length, double init_std) {
        primer::attach_prompt(elements_, length, config().d_model, init_std, rng_);
    }
    void attach_meta_prompt(std::size_t length, double init_std) {
        primer::attach_meta_prompt(elements_, length, config().d_model, init_std, rng_);
    }

private:
    std::mt19937_64 rng_{0};
    Transformer backbone_;
    Attachments elements_;
};

/// Marks parameters in `tunable` as requiring grad and everything else as frozen.
inline Partition set_trainable(const std::vector<Parameter>& params, const ElementSet& tunable) {
    auto part = partition_parameters(params, tunable);
    for (auto& p : part.tunable) p.value.set_requires_grad(true);
    for (auto& p : part.frozen) {
        p.value.set_requires_grad(false);
        p.value.clear_grad();
    }
    return part;
}

}  // namespace primer
