#pragma once

// The experiment combinations: a learning method, the elements tuned upstream, the element
// tuned downstream, and the abbreviation naming them (e.g. Meta_MA+A_A).

#include <array>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "primer/error.hpp"
#include "primer/parameter.hpp"

namespace primer {

enum class Method { MAML, Multitask, FT };

inline std::string_view to_string(Method m) {
    switch (m) {
        case Method::MAML: return "MAML";
        case Method::Multitask: return "Multitask";
        case Method::FT: return "FT";
    }
    return "?";
}

inline std::string_view method_prefix(Method m) {
    switch (m) {
        case Method::MAML: return "Meta";
        case Method::Multitask: return "Multi";
        case Method::FT: return "FT";
    }
    return "?";
}

namespace detail {

// Letter order used when an upstream set names several elements.
inline constexpr std::array<std::pair<ElementKind, std::string_view>, 5> kElementLetters{{
    {ElementKind::PLM, "M"},
    {ElementKind::MetaAdapter, "MA"},
    {ElementKind::MetaPrompt, "MP"},
    {ElementKind::Adapter, "A"},
    {ElementKind::Prompt, "P"},
}};

inline std::string element_letters(const ElementSet& set) {
    std::string out;
    for (const auto& [kind, letters] : kElementLetters) {
        if (!set.contains(kind)) continue;
        if (!out.empty()) out += '+';
        out += letters;
    }
    return out;
}

inline ElementSet parse_element_letters(std::string_view text, std::string_view whole) {
    require_input(!text.empty(), "combination '" + std::string(whole) + "': empty element list");
    ElementSet out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t plus = text.find('+', start);
        const std::string_view tok = text.substr(start, plus == std::string_view::npos ? text.npos : plus - start);
        bool found = false;
        for (const auto& [kind, letters] : kElementLetters) {
            if (tok == letters) {
                require_input(!out.contains(kind),
                              "combination '" + std::string(whole) + "': element " + std::string(tok) + " repeated");
                out.insert(kind);
                found = true;
            }
        }
        require_input(found, "combination '" + std::string(whole) + "': unknown element '" + std::string(tok) + "'");
        if (plus == std::string_view::npos) break;
        start = plus + 1;
    }
    return out;
}

}  // namespace detail

struct Combination {
    Method method = Method::FT;
    ElementSet upstream;    // empty for FT
    ElementSet downstream;  // exactly {Prompt} or {Adapter}

    /// Throws ContractViolation when the elements cannot be realised together.
    void validate() const {
        detail::require(downstream == ElementSet{ElementKind::Prompt} || downstream == ElementSet{ElementKind::Adapter},
                        "combination: downstream must be exactly prompt or adapter, got " + to_string(downstream));
        if (method == Method::FT) {
            detail::require(upstream.empty(), "combination: FT baselines have no upstream elements");
        } else {
            detail::require(!upstream.empty(), "combination: upstream element set is empty");
        }
        // Meta elements only ever sit next to their regular counterpart, which is the one tuned downstream.
        detail::require(!upstream.contains(ElementKind::MetaAdapter) || downstream.contains(ElementKind::Adapter),
                        "combination: meta-adapters require adapter downstream");
        detail::require(!upstream.contains(ElementKind::MetaPrompt) || downstream.contains(ElementKind::Prompt),
                        "combination: meta-prompts require prompt downstream");
    }

    /// Every element kind that must be attached to the model for this combination.
    ElementSet attached() const {
        ElementSet out = upstream.united(downstream);
        if (out.contains(ElementKind::MetaAdapter)) out.insert(ElementKind::Adapter);
        if (out.contains(ElementKind::MetaPrompt)) out.insert(ElementKind::Prompt);
        return out;
    }

    std::string abbreviation() const {
        std::string out(method_prefix(method));
        if (method != Method::FT) out += "_" + detail::element_letters(upstream);
        return out + "_" + detail::element_letters(downstream);
    }

    friend bool operator==(const Combination&, const Combination&) = default;
};

inline std::string format_combination(const Combination& c) { return c.abbreviation(); }

/// Parses an abbreviation. "Multi_A+P+P" is accepted as the published spelling of Multi_A+P_P.
inline Combination parse_combination(std::string_view abbr) {
    if (abbr == "Multi_A+P+P") abbr = "Multi_A+P_P";
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    for (std::size_t us = abbr.find('_'); us != std::string_view::npos; us = abbr.find('_', start)) {
        parts.push_back(abbr.substr(start, us - start));
        start = us + 1;
    }
    parts.push_back(abbr.substr(start));

    Combination c;
    const std::string whole(abbr);
    if (parts.size() == 2 && parts[0] == "FT") {
        c.method = Method::FT;
        c.downstream = detail::parse_element_letters(parts[1], abbr);
    } else {
        detail::require_input(parts.size() == 3, "combination '" + whole + "': expected <Meta|Multi>_<up>_<down>");
        if (parts[0] == "Meta") {
            c.method = Method::MAML;
        } else if (parts[0] == "Multi") {
            c.method = Method::Multitask;
        } else {
            throw InputError("combination '" + whole + "': unknown method prefix '" + std::string(parts[0]) + "'");
        }
        c.upstream = detail::parse_element_letters(parts[1], abbr);
        c.downstream = detail::parse_element_letters(parts[2], abbr);
    }
    try {
        c.validate();
    } catch (const ContractViolation& e) {
        throw InputError(whole + ": " + e.what());
    }
    return c;
}

/// The 28 upstream-trained rows (14 MAML, then 14 multi-task, in table order) followed by FT_P and FT_A.
inline std::vector<Combination> enumerate_combinations() {
    using K = ElementKind;
    const ElementSet P{K::Prompt};
    const ElementSet A{K::Adapter};
    const std::vector<std::pair<ElementSet, ElementSet>> rows{
        {P, P},
        {A, A},
        {{K::PLM}, P},
        {{K::PLM}, A},
        {{K::PLM, K::Prompt}, P},
        {{K::PLM, K::Adapter}, A},
        {{K::MetaPrompt}, P},
        {{K::MetaAdapter}, A},
        {{K::MetaPrompt, K::Prompt}, P},
        {{K::MetaAdapter, K::Adapter}, A},
        {{K::PLM, K::Adapter, K::Prompt}, P},
        {{K::PLM, K::Adapter, K::Prompt}, A},
        {{K::Adapter, K::Prompt}, P},
        {{K::Adapter, K::Prompt}, A},
    };
    std::vector<Combination> out;
    for (Method m : {Method::MAML, Method::Multitask}) {
        for (const auto& [up, down] : rows) out.push_back({m, up, down});
    }
    out.push_back({Method::FT, {}, P});
    out.push_back({Method::FT, {}, A});
    return out;
}

}  // namespace primer
