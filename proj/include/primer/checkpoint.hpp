#pragma once

// Binary checkpoint archive. Layout (all integers and floats little-endian):
//   magic "PRIMERCK", u32 version
//   ModelConfig: 7 x u64 (vocab, d_model, heads, enc layers, dec layers, d_ff, max_seq_len)
//   u64 entry count, then per entry:
//     u32 name length, name bytes, u8 element kind, u32 rank, rank x u64 dims, numel x f64

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "primer/error.hpp"
#include "primer/model.hpp"

namespace primer {

struct CheckpointEntry {
    ElementKind kind = ElementKind::PLM;
    Shape shape;
    std::vector<double> data;
};

struct Checkpoint {
    ModelConfig config;
    std::map<std::string, CheckpointEntry> entries;
};

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'P', 'R', 'I', 'M', 'E', 'R', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class U>
void write_le(std::ostream& os, U value) {
    unsigned char bytes[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
    os.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <class U>
U read_le(std::istream& is, const std::string& path) {
    unsigned char bytes[sizeof(U)];
    is.read(reinterpret_cast<char*>(bytes), sizeof(U));
    require_input(static_cast<bool>(is), "checkpoint " + path + ": truncated file");
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
    return value;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ModelConfig& cfg, const std::vector<Parameter>& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    detail::require_input(static_cast<bool>(os), "cannot open checkpoint for writing: " + path);
    os.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
    detail::write_le<std::uint32_t>(os, detail::kCheckpointVersion);
    for (std::size_t v : {cfg.vocab_size, cfg.d_model, cfg.n_heads, cfg.n_encoder_layers, cfg.n_decoder_layers,
                          cfg.d_ff, cfg.max_seq_len}) {
        detail::write_le<std::uint64_t>(os, v);
    }
    detail::write_le<std::uint64_t>(os, params.size());
    for (const auto& p : params) {
        detail::require(p.kind.has_value(), "save_checkpoint: parameter '" + p.name + "' has no element kind");
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(*p.kind));
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.rank()));
        for (std::size_t d : p.value.shape()) detail::write_le<std::uint64_t>(os, d);
        for (double x : p.value.data()) detail::write_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(x));
    }
    detail::require_input(static_cast<bool>(os), "failed writing checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    detail::require_input(static_cast<bool>(is), "cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    detail::require_input(is && std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) == 0,
                          "checkpoint " + path + ": bad magic");
    const auto version = detail::read_le<std::uint32_t>(is, path);
    detail::require_input(version == detail::kCheckpointVersion,
                          "checkpoint " + path + ": unsupported version " + std::to_string(version));
    Checkpoint ck;
    for (std::size_t* field : {&ck.config.vocab_size, &ck.config.d_model, &ck.config.n_heads,
                               &ck.config.n_encoder_layers, &ck.config.n_decoder_layers, &ck.config.d_ff,
                               &ck.config.max_seq_len}) {
        *field = static_cast<std::size_t>(detail::read_le<std::uint64_t>(is, path));
    }
    const auto count = detail::read_le<std::uint64_t>(is, path);
    for (std::uint64_t e = 0; e < count; ++e) {
        const auto len = detail::read_le<std::uint32_t>(is, path);
        detail::require_input(len > 0 && len < 4096, "checkpoint " + path + ": implausible name length");
        std::string name(len, '\0');
        is.read(name.data(), len);
        CheckpointEntry entry;
        const auto kind = detail::read_le<std::uint8_t>(is, path);
        detail::require_input(kind < kAllElementKinds.size(), "checkpoint " + path + ": bad element kind for " + name);
        entry.kind = static_cast<ElementKind>(kind);
        const auto rank = detail::read_le<std::uint32_t>(is, path);
        detail::require_input(rank <= 8, "checkpoint " + path + ": implausible rank for " + name);
        for (std::uint32_t r = 0; r < rank; ++r) entry.shape.push_back(detail::read_le<std::uint64_t>(is, path));
        const std::size_t n = numel(entry.shape);
        detail::require_input(n < (std::size_t{1} << 32), "checkpoint " + path + ": implausible size for " + name);
        entry.data.resize(n);
        for (auto& x : entry.data) x = std::bit_cast<double>(detail::read_le<std::uint64_t>(is, path));
        detail::require_input(ck.entries.emplace(name, std::move(entry)).second,
                              "checkpoint " + path + ": duplicate entry " + name);
    }
    return ck;
}

/// Copies checkpoint values into matching parameters. Every parameter must be present with the same shape.
inline void restore_parameters(const std::vector<Parameter>& params, const Checkpoint& ck) {
    for (const auto& p : params) {
        auto it = ck.entries.find(p.name);
        detail::require_input(it != ck.entries.end(), "checkpoint has no entry for parameter " + p.name);
        detail::require_input(it->second.shape == p.value.shape(),
                              "checkpoint shape " + shape_str(it->second.shape) + " for " + p.name +
                                  " does not match " + shape_str(p.value.shape()));
        detail::require_input(p.kind == it->second.kind, "checkpoint element kind differs for " + p.name);
        Tensor t = p.value;
        std::copy(it->second.data.begin(), it->second.data.end(), t.data_mut().begin());
    }
}

inline void save_model(const std::string& path, const Seq2SeqModel& model) {
    save_checkpoint(path, model.config(), model.parameters());
}

/// Rebuilds a model with whatever elements the checkpoint holds, then restores every value.
inline Seq2SeqModel load_model(const std::string& path) {
    const Checkpoint ck = load_checkpoint(path);
    Seq2SeqModel model(ck.config, 0);
    const auto has = [&](const std::string& name) { return ck.entries.count(name) > 0; };
    if (has("adapter.layer0.v")) model.attach_adapters(0.02);
    if (has("meta_adapter.layer0.pre.down.weight")) {
        detail::require_input(has("adapter.layer0.v"), "checkpoint " + path + ": meta-adapters without adapters");
        model.insert_meta_adapters(ck.entries.at("meta_adapter.layer0.pre.down.weight").shape.at(1));
    }
    if (has("prompt.embed")) model.attach_prompt(ck.entries.at("prompt.embed").shape.at(0), 0.02);
    if (has("meta_prompt.embed")) model.attach_meta_prompt(ck.entries.at("meta_prompt.embed").shape.at(0), 0.02);
    const auto params = model.parameters();
    detail::require_input(params.size() == ck.entries.size(),
                          "checkpoint " + path + ": " + std::to_string(ck.entries.size()) +
                              " entries do not describe a model with " + std::to_string(params.size()) + " parameters");
    restore_parameters(params, ck);
    return model;
}

}  // namespace primer
