#pragma once

#include <algorithm>
#include <array>
#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "primer/error.hpp"
#include "primer/tensor.hpp"

namespace primer {

/// Which tunable element a parameter belongs to. PLM is the transformer backbone.
enum class ElementKind { PLM, Adapter, Prompt, MetaAdapter, MetaPrompt };

inline constexpr std::array<ElementKind, 5> kAllElementKinds = {
    ElementKind::PLM, ElementKind::Adapter, ElementKind::Prompt, ElementKind::MetaAdapter, ElementKind::MetaPrompt};

inline std::string_view to_string(ElementKind kind) {
    switch (kind) {
        case ElementKind::PLM: return "plm";
        case ElementKind::Adapter: return "adapter";
        case ElementKind::Prompt: return "prompt";
        case ElementKind::MetaAdapter: return "meta_adapter";
        case ElementKind::MetaPrompt: return "meta_prompt";
    }
    return "?";
}

inline std::optional<ElementKind> element_kind_from_string(std::string_view s) {
    for (auto k : kAllElementKinds) {
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

/// A set of element kinds; designates which parameters a stage may train.
class ElementSet {
public:
    constexpr ElementSet() = default;
    ElementSet(std::initializer_list<ElementKind> kinds) {
        for (auto k : kinds) insert(k);
    }

    void insert(ElementKind k) { bits_ |= bit(k); }
    bool contains(ElementKind k) const { return (bits_ & bit(k)) != 0; }
    bool empty() const { return bits_ == 0; }
    std::size_t size() const {
        std::size_t n = 0;
        for (auto k : kAllElementKinds) n += contains(k) ? 1 : 0;
        return n;
    }
    bool subset_of(const ElementSet& other) const { return (bits_ & ~other.bits_) == 0; }
    ElementSet united(const ElementSet& other) const {
        ElementSet out;
        out.bits_ = bits_ | other.bits_;
        return out;
    }
    std::vector<ElementKind> kinds() const {
        std::vector<ElementKind> out;
        for (auto k : kAllElementKinds) {
            if (contains(k)) out.push_back(k);
        }
        return out;
    }

    /// Downstream sets may only contain regular adapters and prompts.
    bool valid_downstream() const { return subset_of(ElementSet{ElementKind::Adapter, ElementKind::Prompt}); }

    friend bool operator==(const ElementSet&, const ElementSet&) = default;

private:
    static constexpr unsigned bit(ElementKind k) { return 1u << static_cast<unsigned>(k); }
    unsigned bits_ = 0;
};

inline std::string to_string(const ElementSet& set) {
    std::string out = "{";
    bool first = true;
    for (auto k : set.kinds()) {
        out += first ? "" : ",";
        out += to_string(k);
        first = false;
    }
    return out + "}";
}

/// A named tensor tagged with its element kind. Copies share the underlying tensor.
struct Parameter {
    std::string name;
    std::optional<ElementKind> kind;
    Tensor value;
};

struct Partition {
    std::vector<Parameter> tunable;
    std::vector<Parameter> frozen;
};

/// Splits parameters into those whose kind is in `tunable` and the rest.
inline Partition partition_parameters(const std::vector<Parameter>& params, const ElementSet& tunable) {
    Partition out;
    for (const auto& p : params) {
        detail::require(p.kind.has_value(), "partition_parameters: parameter '" + p.name + "' has no element kind");
        (tunable.contains(*p.kind) ? out.tunable : out.frozen).push_back(p);
    }
    return out;
}

/// Parameters excluded from weight decay: biases and layer-norm affine terms.
inline bool default_decay_exclusion(std::string_view name) {
    const auto ends_with = [&](std::string_view suffix) {
        return name.size() >= suffix.size() && name.substr(name.size() - suffix.size()) == suffix;
    };
    return ends_with(".bias") || name == "bias" || name.find("ln_") != std::string_view::npos ||
           name.find("layernorm") != std::string_view::npos || name.find("layer_norm") != std::string_view::npos;
}

inline std::size_t count_elements(const std::vector<Parameter>& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
}

}  // namespace primer
