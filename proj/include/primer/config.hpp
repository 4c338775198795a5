#pragma once

// RunConfig and its flat text format: one "dotted.key = value" per line, '#' starts a comment.
// Every hyperparameter of every stage has a key, so a file can pin a whole experiment.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "primer/downstream.hpp"
#include "primer/error.hpp"
#include "primer/metrics.hpp"
#include "primer/model.hpp"
#include "primer/pretrain.hpp"
#include "primer/tasks.hpp"
#include "primer/upstream.hpp"

namespace primer {

struct ElementsConfig {
    std::size_t prompt_length = 16;
    std::size_t meta_prompt_length = 0;  // 0 means "same as prompt_length"
    double init_std = 0.02;
    std::size_t meta_adapter_width = 8;
    PromptOrder prompt_order = PromptOrder::MetaFirst;

    std::size_t effective_meta_prompt_length() const {
        return meta_prompt_length == 0 ? prompt_length : meta_prompt_length;
    }
};

struct RunConfig {
    ModelConfig model;
    PretrainConfig pretrain;
    ElementsConfig elements;
    MamlConfig maml = default_maml();
    MultitaskConfig multitask;
    DownstreamConfig downstream;
    SuiteConfig suite;
    double epsilon = 0.01;
    std::vector<std::uint64_t> seeds{1};
    std::filesystem::path output_dir = "runs";

    static MamlConfig default_maml() {
        MamlConfig m;
        m.outer_lr_by_kind = {{ElementKind::PLM, 8e-5},
                              {ElementKind::Prompt, 8e-3},
                              {ElementKind::Adapter, 1e-5},
                              {ElementKind::MetaPrompt, 8e-3},
                              {ElementKind::MetaAdapter, 1e-5}};
        m.inner_lr_by_kind = {{ElementKind::Prompt, 0.025}, {ElementKind::Adapter, 0.001}};
        return m;
    }

    void validate() const {
        model.validate();
        pretrain.validate();
        downstream.validate();
        detail::require_input(!seeds.empty(), "config: run.seeds must list at least one seed");
        detail::require_input(elements.prompt_length >= 1, "config: elements.prompt_length must be positive");
        detail::require_input(epsilon >= 0.0, "config: eval.epsilon must be non-negative");
        const std::size_t source = kMaxGeneratedInput + 1 + elements.prompt_length + elements.effective_meta_prompt_length();
        detail::require_input(source <= model.max_seq_len,
                              "config: prompts of length " + std::to_string(elements.prompt_length) + " + " +
                                  std::to_string(elements.effective_meta_prompt_length()) +
                                  " plus the longest task input need max_seq_len >= " + std::to_string(source) +
                                  ", got " + std::to_string(model.max_seq_len));
        const auto& f = suite.fractions;
        detail::require_input(std::abs(f.train + f.dev + f.test - 1.0) < 1e-9, "config: suite fractions must sum to 1");
    }
};

namespace detail {

template <class T>
T parse_number(std::string_view key, std::string_view text) {
    T value{};
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    require_input(ec == std::errc() && ptr == end,
                  "config: value '" + std::string(text) + "' for " + std::string(key) + " is not a valid number");
    return value;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw InputError("config: value '" + std::string(text) + "' for " + std::string(key) + " is not a boolean");
}

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::string_view kind_key(ElementKind k) {
    switch (k) {
        case ElementKind::PLM: return "plm";
        case ElementKind::Adapter: return "adapter";
        case ElementKind::Prompt: return "prompt";
        case ElementKind::MetaAdapter: return "meta_adapter";
        case ElementKind::MetaPrompt: return "meta_prompt";
    }
    return "?";
}

struct ConfigField {
    std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <class T, class Member>
ConfigField numeric_field(Member member) {
    return {[member](RunConfig& c, std::string_view k, std::string_view v) { member(c) = parse_number<T>(k, v); },
            [member](const RunConfig& c) {
                if constexpr (std::is_floating_point_v<T>) {
                    return format_double(member(const_cast<RunConfig&>(c)));
                } else {
                    return std::to_string(member(const_cast<RunConfig&>(c)));
                }
            }};
}

inline ConfigField lr_field(std::map<ElementKind, double>& (*map)(RunConfig&), ElementKind kind) {
    return {[map, kind](RunConfig& c, std::string_view k, std::string_view v) { map(c)[kind] = parse_number<double>(k, v); },
            [map, kind](const RunConfig& c) {
                auto& m = map(const_cast<RunConfig&>(c));
                const auto it = m.find(kind);
                return it == m.end() ? std::string() : format_double(it->second);
            }};
}

inline const std::map<std::string, ConfigField>& config_fields() {
    static const std::map<std::string, ConfigField> fields = [] {
        std::map<std::string, ConfigField> f;
        using Sz = std::size_t;
        // Model
        f["model.vocab_size"] = numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.model.vocab_size; });
        f["model.d_model"] = numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.model.d_model; });
        f["model.n_heads"] = numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.model.n_heads; });
        f["model.n_encoder_layers"] = numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.model.n_encoder_layers; });
        f["model.n_decoder_layers"] = numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.model.n_decoder_layers; });
        f["model.d_ff"] = numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.model.d_ff; });
        f["model.max_seq_len"] = numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.model.max_seq_len; });
        // Backbone pretraining
        f["pretrain.steps"] = numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.pretrain.steps; });
        f["pretrain.batch_size"] = numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.pretrain.batch_size; });
        f["pretrain.lr"] = numeric_field<double>([](RunConfig& c) -> double& { return c.pretrain.lr; });
        f["pretrain.weight_decay"] = numeric_field<double>([](RunConfig& c) -> double& { return c.pretrain.weight_decay; });
        f["pretrain.min_len"] = numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.pretrain.min_len; });
        f["pretrain.max_len"] = numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.pretrain.max_len; });
        // Elements
        f["elements.prompt_length"] = numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.elements.prompt_length; });
        f["elements.meta_prompt_length"] =
            numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.elements.meta_prompt_length; });
        f["elements.init_std"] = numeric_field<double>([](RunConfig& c) -> double& { return c.elements.init_std; });
        f["elements.meta_adapter_width"] =
            numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.elements.meta_adapter_width; });
        f["elements.prompt_order"] = {
            [](RunConfig& c, std::string_view k, std::string_view v) {
                if (v == "meta_first") {
                    c.elements.prompt_order = PromptOrder::MetaFirst;
                } else if (v == "prompt_first") {
                    c.elements.prompt_order = PromptOrder::PromptFirst;
                } else {
                    throw InputError("config: " + std::string(k) + " must be meta_first or prompt_first");
                }
            },
            [](const RunConfig& c) {
                return std::string(c.elements.prompt_order == PromptOrder::MetaFirst ? "meta_first" : "prompt_first");
            }};
        // MAML
        for (auto k : kAllElementKinds) {
            f["maml.outer_lr." + std::string(kind_key(k))] =
                lr_field([](RunConfig& c) -> std::map<ElementKind, double>& { return c.maml.outer_lr_by_kind; }, k);
        }
        for (auto k : {ElementKind::Adapter, ElementKind::Prompt}) {
            f["maml.inner_lr." + std::string(kind_key(k))] =
                lr_field([](RunConfig& c) -> std::map<ElementKind, double>& { return c.maml.inner_lr_by_kind; }, k);
        }
        f["maml.inner_steps"] = numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.maml.inner_steps; });
        f["maml.support_size"] = numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.maml.support_size; });
        f["maml.query_size"] = numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.maml.query_size; });
        f["maml.epochs"] = numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.maml.epochs; });
        f["maml.task_batch"] = numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.maml.task_batch; });
        f["maml.weight_decay"] = numeric_field<double>([](RunConfig& c) -> double& { return c.maml.weight_decay; });
        f["maml.adam_beta1"] = numeric_field<double>([](RunConfig& c) -> double& { return c.maml.adam_beta1; });
        f["maml.adam_beta2"] = numeric_field<double>([](RunConfig& c) -> double& { return c.maml.adam_beta2; });
        f["maml.adam_epsilon"] = numeric_field<double>([](RunConfig& c) -> double& { return c.maml.adam_epsilon; });
        f["maml.first_order"] = {
            [](RunConfig& c, std::string_view k, std::string_view v) { c.maml.first_order = parse_bool(k, v); },
            [](const RunConfig& c) { return std::string(c.maml.first_order ? "true" : "false"); }};
        // Multi-task
        f["multitask.lr"] = numeric_field<double>([](RunConfig& c) -> double& { return c.multitask.lr; });
        f["multitask.epochs"] = numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.multitask.epochs; });
        f["multitask.batch_size"] = numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.multitask.batch_size; });
        f["multitask.weight_decay"] =
            numeric_field<double>([](RunConfig& c) -> double& { return c.multitask.weight_decay; });
        // Optional per-element overrides of multitask.lr
        for (auto k : kAllElementKinds) {
            f["multitask.lr." + std::string(kind_key(k))] =
                lr_field([](RunConfig& c) -> std::map<ElementKind, double>& { return c.multitask.lr_by_kind; }, k);
        }
        // Downstream
        f["downstream.steps"] = numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.downstream.steps; });
        f["downstream.batch_size"] = numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.downstream.batch_size; });
        f["downstream.eval_every"] = numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.downstream.eval_every; });
        f["downstream.max_decode_len"] =
            numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.downstream.max_decode_len; });
        f["downstream.weight_decay"] =
            numeric_field<double>([](RunConfig& c) -> double& { return c.downstream.weight_decay; });
        for (auto k : {ElementKind::PLM, ElementKind::Adapter, ElementKind::Prompt}) {
            f["downstream.lr." + std::string(kind_key(k))] =
                lr_field([](RunConfig& c) -> std::map<ElementKind, double>& { return c.downstream.lr_by_kind; }, k);
        }
        // Task suite
        f["suite.n_tasks"] = numeric_field<Sz>([](RunConfig& c) -> Sz& { return c.suite.n_tasks; });
        f["suite.seed"] = numeric_field<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.suite.seed; });
        f["suite.train_fraction"] =
            numeric_field<double>([](RunConfig& c) -> double& { return c.suite.fractions.train; });
        f["suite.dev_fraction"] = numeric_field<double>([](RunConfig& c) -> double& { return c.suite.fractions.dev; });
        f["suite.test_fraction"] = numeric_field<double>([](RunConfig& c) -> double& { return c.suite.fractions.test; });
        // Evaluation and run plumbing
        f["eval.epsilon"] = numeric_field<double>([](RunConfig& c) -> double& { return c.epsilon; });
        f["run.seeds"] = {[](RunConfig& c, std::string_view k, std::string_view v) {
                              c.seeds.clear();
                              std::size_t start = 0;
                              while (start <= v.size()) {
                                  const auto comma = v.find(',', start);
                                  const std::string tok =
                                      trim(v.substr(start, comma == std::string_view::npos ? v.npos : comma - start));
                                  c.seeds.push_back(parse_number<std::uint64_t>(k, tok));
                                  if (comma == std::string_view::npos) break;
                                  start = comma + 1;
                              }
                          },
                          [](const RunConfig& c) {
                              std::string out;
                              for (std::size_t i = 0; i < c.seeds.size(); ++i) {
                                  out += (i ? "," : "") + std::to_string(c.seeds[i]);
                              }
                              return out;
                          }};
        f["run.output_dir"] = {
            [](RunConfig& c, std::string_view, std::string_view v) { c.output_dir = std::string(v); },
            [](const RunConfig& c) { return c.output_dir.string(); }};
        return f;
    }();
    return fields;
}

}  // namespace detail

/// Applies `key = value` lines on top of `base`. Unknown or repeated keys are input errors.
inline RunConfig parse_config(std::string_view text, RunConfig base = {}, const std::string& source = "config") {
    const auto& fields = detail::config_fields();
    std::set<std::string> seen;
    std::istringstream is{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        const std::string body = detail::trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (body.empty()) continue;
        const std::string where = source + ":" + std::to_string(lineno) + ": ";
        const auto eq = body.find('=');
        detail::require_input(eq != std::string::npos, where + "expected 'key = value'");
        const std::string key = detail::trim(std::string_view(body).substr(0, eq));
        const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
        const auto it = fields.find(key);
        detail::require_input(it != fields.end(), where + "unknown key '" + key + "'");
        detail::require_input(seen.insert(key).second, where + "key '" + key + "' set twice");
        detail::require_input(!value.empty(), where + "key '" + key + "' has no value");
        try {
            it->second.set(base, key, value);
        } catch (const InputError& e) {
            throw InputError(where + e.what());
        }
    }
    return base;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    detail::require_input(static_cast<bool>(is), "cannot read config file " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str(), RunConfig{}, path.string());
}

/// Every key with its current value, sorted by key. Parsing the output reproduces `cfg`.
inline std::string format_config(const RunConfig& cfg) {
    std::string out;
    for (const auto& [key, field] : detail::config_fields()) {
        const std::string value = field.get(cfg);
        if (!value.empty()) out += key + " = " + value + "\n";
    }
    return out;
}

}  // namespace primer
